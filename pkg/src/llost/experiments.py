"""Per-type hold-out evaluation, shared-size / label ablations, latent projections."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .dataset import SplitData
from .metrics import MetricReport, bootstrap_rows, build_report, occurrence_metrics
from .synthdata import split_sizes
from .trainer import Prediction, fit, predict_split

log = logging.getLogger(__name__)

MIN_TYPE_SAMPLES = 7
VARIANTS = {
    "s50": dict(shared_dim=50, use_label=True),
    "s200": dict(shared_dim=200, use_label=True),
    "no-label": dict(shared_dim=200, use_label=False),
}


def report_for(pred: Prediction, data: SplitData, n_boot: int = 1000, seed: int = 0) -> MetricReport:
    return build_report(data.counts.numpy(), pred.mean_counts, pred.binary, pred.logprob, n_boot, seed)


def _stratified_holdout(labels: np.ndarray, rng: np.random.Generator, frac: float = 0.15):
    """Indices split ``(rest, held)`` with ``frac`` of every type held out."""
    rest, held = [], []
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        n_held = split_sizes(len(idx), (1 - 2 * frac, frac, frac))[2]
        held += idx[:n_held].tolist()
        rest += idx[n_held:].tolist()
    return np.array(sorted(rest)), np.array(sorted(held))


def per_type_eval(data: SplitData, type_index: int, cfg: TrainConfig, n_boot: int = 1000,
                  out_dir: str | Path | None = None) -> MetricReport:
    """Hold out 15% of one type, train on everything else, report on the held-out part."""
    labels = data.labels.numpy()
    if not 0 <= type_index < data.n_types:
        raise ValueError(f"type index {type_index} outside [0, {data.n_types})")
    members = np.flatnonzero(labels == type_index)
    if len(members) < MIN_TYPE_SAMPLES:
        raise ValueError(f"type {type_index} has {len(members)} samples; need >= {MIN_TYPE_SAMPLES}")
    rng = np.random.default_rng([cfg.seed, type_index])
    order = rng.permutation(members)
    n_test = split_sizes(len(members))[2]
    test_idx = np.sort(order[:n_test])
    rest = np.setdiff1d(np.arange(len(data)), test_idx)
    tr_local, val_local = _stratified_holdout(labels[rest], rng)
    train, val, test = data.subset(rest[tr_local]), data.subset(rest[val_local]), data.subset(test_idx)
    res = fit(train, val, cfg, out_dir)
    pred = predict_split(res.model, test, seed=cfg.seed, n_draws=cfg.eval_draws)
    return report_for(pred, test, n_boot, cfg.seed)


def per_sample_f1(pred_binary: np.ndarray, true_binary: np.ndarray) -> np.ndarray:
    tp = (pred_binary & true_binary).sum(1)
    den = pred_binary.sum(1) + true_binary.sum(1)
    return np.where(den > 0, 2 * tp / np.maximum(den, 1), 1.0)


@dataclass
class AblationResult:
    rows: list[dict]
    box: dict[str, np.ndarray]  # variant -> per-sample F1 on the test split
    diff_ci: dict = field(default_factory=dict)  # bootstrap of F1(s50) - F1(s200)
    predictions: dict[str, Prediction] = field(default_factory=dict, repr=False)
    models: dict = field(default_factory=dict, repr=False)


def paired_f1_diff(pa: np.ndarray, pb: np.ndarray, truth: np.ndarray, n_boot: int, seed: int) -> dict:
    """Row-bootstrap mean, std and 95% interval of ``F1(a) - F1(b)`` (micro)."""
    idx = bootstrap_rows(len(truth), n_boot, seed)
    diffs = np.array([
        occurrence_metrics(pa[i], truth[i]).f1 - occurrence_metrics(pb[i], truth[i]).f1 for i in idx
    ])
    point = occurrence_metrics(pa, truth).f1 - occurrence_metrics(pb, truth).f1
    lo, hi = np.quantile(diffs, [0.025, 0.975])
    return {"diff": float(point), "boot_mean": float(diffs.mean()), "boot_std": float(diffs.std()),
            "ci_low": float(lo), "ci_high": float(hi)}


def ablation_run(train: SplitData, val: SplitData, test: SplitData, cfg: TrainConfig,
                 variants=tuple(VARIANTS), n_boot: int = 1000,
                 out_dir: str | Path | None = None) -> AblationResult:
    """Train each variant with identical seeds and compare on the test split."""
    truth = (test.counts.numpy() > 0).astype(np.int64)
    rows, box, preds, models = [], {}, {}, {}
    for name in variants:
        if name not in VARIANTS:
            raise ValueError(f"unknown ablation variant {name!r}")
        vcfg = cfg.replace(model="llost", **VARIANTS[name])
        sub = Path(out_dir) / name if out_dir is not None else None
        res = fit(train, val, vcfg, sub)
        pred = predict_split(res.model, test, seed=cfg.seed, n_draws=cfg.eval_draws)
        rep = report_for(pred, test, n_boot, cfg.seed)
        rows.append({"variant": name, "shared_dim": vcfg.shared_dim, "use_label": vcfg.use_label,
                     "f1": rep.f1, "ppv": rep.ppv, "ppv_text": rep.ppv_text,
                     "log_perplexity": rep.log_perplexity, "best_epoch": res.best_epoch})
        box[name] = per_sample_f1(pred.binary, truth)
        preds[name], models[name] = pred, res.model
        log.info("ablation %s f1 %.4f", name, rep.f1)
    diff = {}
    if "s50" in preds and "s200" in preds:
        diff = paired_f1_diff(preds["s50"].binary, preds["s200"].binary, truth, n_boot, cfg.seed)
    result = AblationResult(rows, box, diff, preds, models)
    if out_dir is not None:
        write_ablation(result, Path(out_dir))
    return result


def write_ablation(result: AblationResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(result.rows[0]))
        w.writeheader()
        w.writerows(result.rows)
    with open(out / "ablation_box.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "sample", "f1"])
        for name, vals in result.box.items():
            for i, v in enumerate(vals):
                w.writerow([name, i, repr(float(v))])


# projection -------------------------------------------------------------------

MIN_PROJECT = 10


def project_2d(latents, labels=None, seed: int = 0, perplexity: float = 30.0) -> np.ndarray:
    """Neighbour-preserving 2-D embedding (t-SNE) of ``(n, d)`` latents."""
    from sklearn.manifold import TSNE

    x = np.asarray(latents, dtype=float)
    if x.ndim != 2 or len(x) < MIN_PROJECT:
        raise ValueError(f"projection needs at least {MIN_PROJECT} latent vectors")
    if np.ptp(x, axis=0).max() == 0:
        # no spread to preserve: every point maps to the origin
        return np.zeros((len(x), 2))
    perp = min(perplexity, (len(x) - 1) / 3)
    tsne = TSNE(n_components=2, perplexity=perp, init="pca", random_state=seed)
    return tsne.fit_transform(x)


def shared_latents(model, data: SplitData) -> np.ndarray:
    """Mapped mutation-side shared latents of every sample (prediction steps 1-2)."""
    model.eval()
    with torch.no_grad():
        return model.shared_from_lesion(data.clouds, data.labels).double().numpy()
