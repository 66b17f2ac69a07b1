"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``ACCEPTANCE_LINES`` and echoed in the pytest
terminal summary (see ``conftest.py``). Criterion 7 trains five full-size
models on one CPU and takes roughly 18 minutes.
"""

import math
import time

import numpy as np
import pytest
import torch
from scipy import stats

from llost.config import TrainConfig
from llost.coupling import ConditionalPrior, MMDConfig, SharedMap, kl_to_flow_prior, mmd_squared
from llost.dataset import from_samples
from llost.flows import FlowStack, perturb_
from llost.ingest import MaskVolume, ingest_mask, interpolate_z
from llost.latent import GaussianPosterior
from llost.lesion_vae import PointEncoder, chamfer
from llost.metrics import occurrence_metrics, rmse
from llost.mutation_vae import NBParams, likelihood_logprob, nb_logpmf, sample_counts
from llost.synthdata import SynthConfig, gen_dataset, gene_names, split_dataset
from llost.trainer import build_model, fit, predict_split

ACCEPTANCE_LINES: list[str] = []


def verdict(n, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def fd_logabsdet(fn, z, eps=1e-6):
    d = z.numel()
    jac = torch.zeros(d, d, dtype=torch.float64)
    for i in range(d):
        e = torch.zeros(d, dtype=torch.float64)
        e[i] = eps
        jac[:, i] = (fn(z + e) - fn(z - e)) / (2 * eps)
    return torch.linalg.slogdet(jac)[1].item()


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


# 1 ---------------------------------------------------------------------------

def test_criterion_1_flow_correctness():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    shared = perturb_(SharedMap(200, 4, seed=0), 0.02, torch.Generator().manual_seed(1))
    z, labels = torch.randn(1000, 200), torch.randint(0, 4, (1000,))
    with torch.no_grad():
        y = shared(z, labels, "M->I")
        round_trip = (shared(y, labels, "I->M") - z).abs().max().item()
        moved = (y - z).abs().mean().item()

    worst_ld = 0.0
    for d in (1, 2, 3, 6):
        stack = perturb_(FlowStack(d, 2, 4, 2, hidden=32, seed=d).double(), 0.2,
                         torch.Generator().manual_seed(d))
        for k in range(3):
            g = torch.Generator().manual_seed(10 * d + k)
            zz = torch.randn(d, generator=g, dtype=torch.float64)
            c = torch.randn(1, 2, generator=g, dtype=torch.float64)
            _, ld = stack(zz[None], c)
            fd = fd_logabsdet(lambda v: stack(v[None], c)[0][0], zz)
            worst_ld = max(worst_ld, abs(ld.item() - fd))

    stack1 = perturb_(FlowStack(1, 2, 6, 2, hidden=32, seed=7).double(), 0.15,
                      torch.Generator().manual_seed(7))
    c = torch.randn(1, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(8))
    grid = torch.linspace(-25, 25, 50001, dtype=torch.float64)
    with torch.no_grad():
        dens = torch.exp(stack1.log_prob(grid[:, None], c.expand(len(grid), -1))).numpy()
    mass = np.trapezoid(dens, grid.numpy())
    elapsed = time.perf_counter() - t0

    ok = round_trip < 1e-5 and moved > 0.1 and worst_ld < 1e-4 and abs(mass - 1) < 1e-3 and elapsed < 60
    verdict(1, ok, f"round-trip {round_trip:.2e} (<1e-5, mean shift {moved:.2f}), "
                   f"logdet-FD {worst_ld:.2e} (<1e-4), 1-D mass {mass:.6f} (1±1e-3), {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------

def test_criterion_2_likelihood_identities():
    t0 = time.perf_counter()
    m = torch.arange(0, 30001, dtype=torch.float64)
    worst_sum = 0.0
    for r in (0.1, 0.5, 1.0, 3.0, 10.0, 40.0):
        for p in (0.01, 0.2, 0.5, 0.8, 0.95):
            total = torch.exp(nb_logpmf(m, r, p)).sum().item()
            worst_sum = max(worst_sum, abs(total - 1.0))

    rs = torch.tensor([0.05, 0.3, 1.0, 4.0, 25.0], dtype=torch.float64)
    ps = torch.tensor([1e-4, 0.1, 0.5, 0.9, 0.999], dtype=torch.float64)
    rr, pp = torch.meshgrid(rs, ps, indexing="ij")
    params = NBParams(torch.log(rr), torch.log(pp) - torch.log1p(-pp))
    occ = params.occurrence_prob()
    ref = 1.0 - torch.exp(nb_logpmf(torch.zeros_like(rr), rr, pp))
    worst_occ = (occ - ref).abs().max().item()

    r, p, k = 2.0, 0.4, 12
    draws = sample_counts(NBParams(torch.full((100_000,), math.log(r)),
                                   torch.full((100_000,), math.log(p / (1 - p)))),
                          np.random.default_rng(4))
    observed = np.bincount(np.minimum(draws, k), minlength=k + 1)
    probs = torch.exp(nb_logpmf(torch.arange(k), r, p)).numpy()
    probs = np.append(probs, 1 - probs.sum())
    chi2 = ((observed - 1e5 * probs) ** 2 / (1e5 * probs)).sum()
    p_value = stats.chi2.sf(chi2, k)
    elapsed = time.perf_counter() - t0

    ok = worst_sum < 1e-8 and worst_occ < 1e-12 and p_value > 0.01 and elapsed < 60
    verdict(2, ok, f"pmf sum err {worst_sum:.1e} (<1e-8), occurrence err {worst_occ:.1e} (<1e-12), "
                   f"GOF p={p_value:.3f} (>0.01), {elapsed:.1f}s")


# 3 ---------------------------------------------------------------------------

def test_criterion_3_kl_anchor():
    t0 = time.perf_counter()
    prior = ConditionalPrior(8, 4, n_steps=4).double()
    g = torch.Generator().manual_seed(0)
    worst_anchor = 0.0
    for _ in range(5):
        mu = 1.5 * torch.randn(1, 8, generator=g, dtype=torch.float64)
        post = GaussianPosterior(mu, torch.zeros_like(mu))
        cond = torch.randn(1, 4, generator=g, dtype=torch.float64)
        with torch.no_grad():
            kl = kl_to_flow_prior(post, cond, prior, 1000, g).item()
        worst_anchor = max(worst_anchor, abs(kl - 0.5 * mu.pow(2).sum().item()))

    trained_like = perturb_(ConditionalPrior(4, 3, n_steps=3, hidden=32).double(), 0.1, g)
    mean = torch.randn(200, 4, generator=g, dtype=torch.float64)
    log_var = 1.5 * torch.randn(200, 4, generator=g, dtype=torch.float64)
    cond = torch.randn(200, 3, generator=g, dtype=torch.float64)
    with torch.no_grad():
        kls = kl_to_flow_prior(GaussianPosterior(mean, log_var), cond, trained_like, 1000, g)
    min_kl = kls.min().item()
    elapsed = time.perf_counter() - t0

    ok = worst_anchor < 0.05 and min_kl >= -0.05 and elapsed < 60
    verdict(3, ok, f"|KL - |mu|^2/2| max {worst_anchor:.4f} (<0.05), "
                   f"min KL over random posteriors {min_kl:.4f} (>=-0.05), {elapsed:.1f}s")


# 4 ---------------------------------------------------------------------------

def test_criterion_4_mmd():
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(0)
    a = torch.randn(256, 8, generator=g)
    same = mmd_squared(a, a).item()
    baseline = mmd_squared(a, torch.randn(256, 8, generator=g)).item()
    shifted = mmd_squared(a, torch.randn(256, 8, generator=g) + 3.0).item()
    fixed = mmd_squared(a, a, MMDConfig(1.0)).item()
    elapsed = time.perf_counter() - t0
    ok = same == 0.0 and fixed == 0.0 and shifted > 10 * baseline and elapsed < 60
    verdict(4, ok, f"mmd(A,A)={same} exactly, shifted {shifted:.4f} vs 10x baseline "
                   f"{10 * baseline:.4f}, {elapsed:.1f}s")


# 5 ---------------------------------------------------------------------------

def test_criterion_5_encoder_invariance():
    torch.manual_seed(0)
    enc = PointEncoder()
    g = torch.Generator().manual_seed(1)
    cloud = torch.randn(256, 3, generator=g)
    base = enc(cloud)
    perm = enc(cloud[torch.randperm(256, generator=g)])
    dup = enc(torch.cat([cloud, cloud[torch.randint(0, 256, (100,), generator=g)]]))
    ok = torch.equal(base, perm) and torch.equal(base, dup)
    verdict(5, ok, f"permutation identical={torch.equal(base, perm)}, "
                   f"duplication identical={torch.equal(base, dup)}")


# 6 ---------------------------------------------------------------------------

def _fd_check(fn, tensor, indices, analytic, eps=1e-6):
    worst = 0.0
    for idx in indices:
        with torch.no_grad():
            tensor[idx] += eps
            up = fn().item()
            tensor[idx] -= 2 * eps
            down = fn().item()
            tensor[idx] += eps
        worst = max(worst, rel_err((up - down) / (2 * eps), analytic[idx].item()))
    return worst


def test_criterion_6_gradient_suite():
    g = torch.Generator().manual_seed(0)
    a = torch.randn(40, 3, generator=g, dtype=torch.float64, requires_grad=True)
    b = torch.randn(50, 3, generator=g, dtype=torch.float64)
    chamfer(a, b).backward()
    err_chamfer = _fd_check(lambda: chamfer(a, b), a.data, [(0, 0), (5, 1), (17, 2), (39, 0)], a.grad)

    log_r = torch.randn(4, 30, generator=g, dtype=torch.float64, requires_grad=True)
    logit_p = torch.randn(4, 30, generator=g, dtype=torch.float64, requires_grad=True)
    counts = torch.from_numpy(np.random.default_rng(0).poisson(0.7, (4, 30))).double()

    def bern():
        return likelihood_logprob(NBParams(log_r, logit_p), counts, "bernoulli").sum()

    bern().backward()
    err_bern = max(_fd_check(bern, log_r.data, [(0, 0), (1, 7), (3, 29)], log_r.grad),
                   _fd_check(bern, logit_p.data, [(0, 3), (2, 11), (3, 0)], logit_p.grad))

    sc = SynthConfig(vocab_size=200, points_per_cloud=256, samples_per_type=2, seed=1)
    data = from_samples(gen_dataset(sc), gene_names(200), [f"T{k}" for k in range(4)])
    errs = {}
    for likelihood in ("bernoulli", "nb"):
        cfg = TrainConfig(likelihood=likelihood, mmd_bandwidth=1.0)
        model = build_model(cfg, 200, 4, 256).double()
        gen = torch.Generator().manual_seed(5)
        for flow in (model.shared, model.prior_I, model.prior_M):
            perturb_(flow, 0.02, gen)
        clouds, cnt, labels = data.clouds.double(), data.counts.double(), data.labels

        def total():
            return model.compute_elbo(clouds, cnt, labels, torch.Generator().manual_seed(11)).total

        model.zero_grad()
        total().backward()
        probes = [
            (model.lesion.encoder.point_mlp[0].weight, (3, 1)),
            (model.lesion.shared_head.weight, (2, 5)),
            (model.lesion.decoder[2].weight, (7, 9)),
            (model.mutation.encoder[0].weight, (1, 0)),
            (model.mutation.decoder[0].weight, (4, 2)),
            (model.mutation.nb_head.bias, (3,)),
            (model.shared.flow.blocks[5].s_net[0].weight, (2, 2)),
            (model.shared.flow.blocks[40].t_net[2].weight, (1, 1)),
            (model.prior_M.flow.blocks[3].t_net[0].weight, (0, 4)),
            (model.prior_I.flow.blocks[1].s_net[4].bias, (2,)),
        ]
        errs[likelihood] = max(_fd_check(total, p.data, [idx], p.grad) for p, idx in probes)

    ok = max(err_chamfer, err_bern, *errs.values()) < 1e-3
    verdict(6, ok, f"relative FD error: chamfer {err_chamfer:.1e}, bernoulli {err_bern:.1e}, "
                   f"ELBO_B {errs['bernoulli']:.1e}, ELBO_NB {errs['nb']:.1e} (all <1e-3)")


# 7 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def synthetic_runs():
    t0 = time.perf_counter()
    sc = SynthConfig(n_types=4, samples_per_type=125, vocab_size=200, points_per_cloud=256, seed=0)
    parts = split_dataset(gen_dataset(sc), seed=0)
    names = gene_names(200), [f"T{k}" for k in range(4)]
    train, val, test = (from_samples(p, *names) for p in parts)
    base = TrainConfig(epochs=35, seed=0)
    configs = {
        "LLOST_B": base.replace(model="llost", likelihood="bernoulli"),
        "LLOST_B_nolabel": base.replace(model="llost", likelihood="bernoulli", use_label=False),
        "LLOST_NB": base.replace(model="llost", likelihood="nb"),
        "CVAE_pb": base.replace(model="cvae", likelihood="bernoulli"),
        "CVAE_p": base.replace(model="cvae", likelihood="nb"),
    }
    runs = {}
    for name, cfg in configs.items():
        res = fit(train, val, cfg)
        pred = predict_split(res.model, test, seed=0, n_draws=cfg.eval_draws)
        runs[name] = (res, pred)
    return train, val, test, runs, time.perf_counter() - t0


def test_criterion_7_synthetic_end_to_end(synthetic_runs):
    _, _, test, runs, elapsed = synthetic_runs
    truth = test.counts.numpy()
    f1 = {k: occurrence_metrics(p.binary, truth > 0).f1 for k, (_, p) in runs.items()}
    err = {k: rmse(p.mean_counts, truth) for k, (_, p) in runs.items()}

    def val_curve(res):
        return [r["perplexity"] for r in res.curves if r["split"] == "val"]

    trend = {k: res.best_val < val_curve(res)[0] for k, (res, _) in runs.items()}
    a = all(trend.values())
    b = f1["LLOST_B"] > 0.70
    c = f1["LLOST_B"] >= f1["CVAE_pb"] and err["LLOST_NB"] <= err["CVAE_p"]
    d = f1["LLOST_B_nolabel"] < f1["LLOST_B"]
    labels = test.labels.numpy()
    pred_tml = runs["LLOST_NB"][1].mean_counts.sum(1)
    per_type_pred = [pred_tml[labels == k].mean() for k in range(test.n_types)]
    per_type_true = [truth[labels == k].sum(1).mean() for k in range(test.n_types)]
    rho = stats.spearmanr(per_type_pred, per_type_true).statistic
    e = rho > 0.8
    res_b = runs["LLOST_B"][0]
    detail = (
        f"(a) best val ppl < epoch-1 for all runs: {a} "
        f"[LLOST_B {res_b.best_val:.4f} < {val_curve(res_b)[0]:.4f}]; "
        f"(b) LLOST_B F1 {f1['LLOST_B']:.3f} > 0.70: {b}; "
        f"(c) F1 LLOST_B {f1['LLOST_B']:.3f} >= CVAE_pb {f1['CVAE_pb']:.3f}, "
        f"RMSE LLOST_NB {err['LLOST_NB']:.3f} <= CVAE_p {err['CVAE_p']:.3f}: {c}; "
        f"(d) no-label F1 {f1['LLOST_B_nolabel']:.3f} < {f1['LLOST_B']:.3f}: {d}; "
        f"(e) per-type TML Spearman {rho:.2f} > 0.8: {e} "
        f"[pred {[round(float(x), 1) for x in per_type_pred]} "
        f"true {[round(float(x), 1) for x in per_type_true]}]; "
        f"{elapsed / 60:.1f} min"
    )
    verdict(7, a and b and c and d and e, detail)


# 8 ---------------------------------------------------------------------------

def test_criterion_8_ingest_geometry():
    radius = 30
    g = np.arange(-radius - 3, radius + 4)
    zz, yy, xx = np.meshgrid(g, g, g, indexing="ij")
    ball = (xx**2 + yy**2 + zz**2) <= radius**2
    pts, _ = ingest_mask(MaskVolume(ball, (1, 1, 1)), 4096, seed=0)
    r = np.linalg.norm(pts - (radius + 3), axis=1) / radius
    frac = float(np.mean(np.abs(r - 1) <= 0.02))

    cone = np.zeros((11, 41, 41), bool)
    yy, xx = np.mgrid[:41, :41]
    cone[0] = (yy - 20) ** 2 + (xx - 20) ** 2 <= 100
    cone[10, 20, 20] = True
    surf = interpolate_z(MaskVolume(cone, (1, 1, 1)), 1.0)
    mid = surf.sdf[1 + 5]  # one cap slice precedes the body
    mid_radius = float(np.sqrt((mid < 0).sum() / np.pi))
    ok = frac >= 0.99 and abs(mid_radius - 5.0) <= 1.0
    verdict(8, ok, f"sphere points within 2%: {100 * frac:.2f}% (>=99%), "
                   f"cone mid-slice radius {mid_radius:.2f} (5 ± 1 voxel)")


# 9 ---------------------------------------------------------------------------

def test_criterion_9_reproducibility(tmp_path):
    sc = SynthConfig(n_types=2, samples_per_type=20, vocab_size=50, points_per_cloud=64, seed=2)
    parts = split_dataset(gen_dataset(sc), seed=2)
    train, val, _ = (from_samples(p, gene_names(50), ["A", "B"]) for p in parts)
    cfg = TrainConfig(epochs=3, batch_size=8, patience=None, seed=4)
    r1 = fit(train, val, cfg, tmp_path / "a")
    r2 = fit(train, val, cfg, tmp_path / "b")
    identical = r1.curves == r2.curves
    fit(train, val, cfg.replace(epochs=2), tmp_path / "c")
    resumed = fit(train, val, cfg, tmp_path / "c", resume=True)
    curve_gap = max(abs(x[k] - y[k]) for x, y in zip(r1.curves, resumed.curves)
                    for k in x if k not in ("epoch", "split"))
    sa, sb = r1.model.state_dict(), resumed.model.state_dict()
    param_gap = max((sa[k].double() - sb[k].double()).abs().max().item() for k in sa)
    ok = identical and len(resumed.curves) == len(r1.curves) and curve_gap < 1e-5 and param_gap < 1e-5
    verdict(9, ok, f"identical curves {identical}; resume gap curves {curve_gap:.1e}, "
                   f"parameters {param_gap:.1e} (<1e-5)")
