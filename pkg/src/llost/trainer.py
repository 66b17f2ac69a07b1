"""Training loop, checkpoints and the prediction pipeline."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .baselines import CVAE
from .config import TrainConfig, from_dict
from .dataset import SplitData
from .metrics import log_perplexity
from .model import LLOST, TERM_NAMES, ELBOTerms, predictive_logprob
from .mutation_vae import NBParams, sample_counts

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "split", "perplexity", *TERM_NAMES, "total")
EVAL_SEED_OFFSET = 7919
EVAL_CHUNK = 128


def build_model(cfg: TrainConfig, vocab_size: int, n_types: int, n_points: int):
    torch.manual_seed(cfg.seed)
    cls = LLOST if cfg.model == "llost" else CVAE
    return cls(cfg, vocab_size, n_types, n_points)


def make_optimizer(model, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, fused=True)


def compute_elbo(model, clouds, counts, labels, generator=None) -> ELBOTerms:
    """ELBO terms for one batch; raises naming any non-finite term."""
    return model.compute_elbo(clouds, counts, labels, generator)


def bidirectional_step(model, optimizer, clouds, counts, labels, generator=None) -> ELBOTerms:
    """Both map directions contribute to one summed loss and a single update."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    terms = compute_elbo(model, clouds, counts, labels, generator)
    loss = -terms.total
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite total loss")
    loss.backward()
    clip = getattr(getattr(model, "cfg", None), "grad_clip", None)
    if clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
    optimizer.step()
    return terms


def batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled, near-equal batches; every batch has at least two samples."""
    if n < 2:
        raise ValueError("training needs at least two samples")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    n_batches = max(1, min(math.ceil(n / batch_size), n // 2))
    return np.array_split(order, n_batches)


# prediction -----------------------------------------------------------------

@dataclass
class Prediction:
    ids: list[str]
    occurrence: np.ndarray  # (N, V) mean occurrence probability over draws
    mean_counts: np.ndarray  # (N, V) mean NB mean over draws
    counts: np.ndarray  # (N, V) counts sampled from the first draw
    logprob: np.ndarray | None = None  # (N,) log predictive of the true profile
    params: list[NBParams] = field(default_factory=list, repr=False)

    @property
    def binary(self) -> np.ndarray:
        return (self.occurrence > 0.5).astype(np.int64)


def predict_profile(model, clouds: torch.Tensor, labels: torch.Tensor, seed: int = 0,
                    n_draws: int = 10, counts_true: torch.Tensor | None = None,
                    ids: list[str] | None = None) -> Prediction:
    """Lesion -> shared latent -> mapped latent -> prior draw -> NB parameters.

    ``occurrence`` thresholded at 0.5 gives the binary profile; ``counts`` are
    gamma-Poisson draws. Identical seeds give identical outputs.
    """
    if not bool(model.trained):
        raise RuntimeError("model has not been trained")
    if clouds.dim() == 2:
        clouds, labels = clouds[None], torch.as_tensor(labels).reshape(1)
    labels = torch.as_tensor(labels, dtype=torch.int64)
    g = torch.Generator().manual_seed(seed)
    occ, mean, lp, first = [], [], [], []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(clouds), EVAL_CHUNK):
            sl = slice(start, start + EVAL_CHUNK)
            draws = model.predict_params(clouds[sl], labels[sl], g, n_draws)
            occ.append(torch.stack([d.occurrence_prob() for d in draws]).mean(0))
            mean.append(torch.stack([d.mean() for d in draws]).mean(0))
            first.append(draws[0])
            if counts_true is not None:
                lp.append(predictive_logprob(draws, counts_true[sl], model.cfg.likelihood))
    params = NBParams(torch.cat([p.log_r for p in first]), torch.cat([p.logit_p for p in first]))
    sampled = sample_counts(params, np.random.default_rng(seed))
    return Prediction(
        ids=list(ids) if ids is not None else [str(i) for i in range(len(clouds))],
        occurrence=torch.cat(occ).double().numpy(),
        mean_counts=torch.cat(mean).double().numpy(),
        counts=sampled,
        logprob=torch.cat(lp).double().numpy() if lp else None,
        params=[params],
    )


def predict_split(model, data: SplitData, seed: int = 0, n_draws: int = 10) -> Prediction:
    return predict_profile(model, data.clouds, data.labels, seed, n_draws, data.counts, data.ids)


def split_perplexity(model, data: SplitData, seed: int, n_draws: int) -> float:
    pred = predict_split(model, data, seed, n_draws)
    return log_perplexity(data.counts.sum(1).numpy(), pred.logprob)[0]


def mean_terms(model, data: SplitData, cfg: TrainConfig, seed: int) -> dict[str, float]:
    g = torch.Generator().manual_seed(seed)
    model.eval()
    rows, sizes = [], []
    with torch.no_grad():
        for idx in batches(len(data), cfg.batch_size, seed, 0):
            idx = torch.from_numpy(idx)
            t = compute_elbo(model, data.clouds[idx], data.counts[idx], data.labels[idx], g)
            rows.append(t.as_floats())
            sizes.append(len(idx))
    w = np.array(sizes, float) / sum(sizes)
    return {k: float(sum(wi * r[k] for wi, r in zip(w, rows))) for k in rows[0]}


# checkpoints ----------------------------------------------------------------

def param_manifest(model) -> dict[str, list[int]]:
    return {k: list(v.shape) for k, v in model.state_dict().items()}


def save_checkpoint(path: str | os.PathLike, model, optimizer=None, generator=None, state=None,
                    meta: dict | None = None) -> None:
    """Atomic write of parameters plus a JSON manifest of names and shapes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "model": model.state_dict(),
        "cfg": model.cfg.to_dict(),
        "dims": [model.vocab_size, model.n_types, model.n_points],
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "generator": generator.get_state() if generator is not None else None,
        "state": state or {},
        "meta": meta or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(blob, tmp)
    os.replace(tmp, path)
    manifest = {"parameters": param_manifest(model), "cfg": model.cfg.to_dict(),
                "dims": blob["dims"], "meta": blob["meta"]}
    mpath = path.with_suffix(".json")
    mtmp = mpath.with_name(mpath.name + ".tmp")
    mtmp.write_text(json.dumps(manifest, indent=1))
    os.replace(mtmp, mpath)


def load_checkpoint(path: str | os.PathLike):
    """Rebuild the model from a checkpoint; returns ``(model, blob)``."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = from_dict(TrainConfig, blob["cfg"], str(path))
    model = build_model(cfg, *blob["dims"])
    expected = param_manifest(model)
    got = {k: list(v.shape) for k, v in blob["model"].items()}
    if expected != got:
        raise ValueError(f"{path}: parameter manifest does not match the model")
    model.load_state_dict(blob["model"])
    return model, blob


# fit -------------------------------------------------------------------------

@dataclass
class FitResult:
    model: object
    curves: list[dict]
    best_epoch: int
    best_val: float
    stopped_early: bool
    out_dir: Path | None


def write_curves(path: Path, rows: list[dict]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    os.replace(tmp, path)


def fit(train: SplitData, val: SplitData, cfg: TrainConfig, out_dir: str | os.PathLike | None = None,
        resume: bool = False, meta: dict | None = None) -> FitResult:
    """Train with per-epoch train/val perplexity; keep the best-validation weights.

    With ``out_dir`` set, writes ``curves.csv``, ``best.pt`` and ``last.pt``
    (each with a JSON manifest); ``resume=True`` continues from ``last.pt``.
    """
    out = Path(out_dir) if out_dir is not None else None
    model = build_model(cfg, train.vocab_size, train.n_types, train.n_points)
    opt = make_optimizer(model, cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    curves: list[dict] = []
    start, best_val, best_epoch, bad = 1, math.inf, 0, 0
    best_state = None
    meta = dict(meta or {}, gene_names=train.gene_names, type_names=train.type_names)

    if resume:
        if out is None or not (out / "last.pt").exists():
            raise FileNotFoundError("resume requested but no last.pt checkpoint found")
        model, blob = load_checkpoint(out / "last.pt")
        model.cfg = cfg
        opt = make_optimizer(model, cfg)
        opt.load_state_dict(blob["optimizer"])
        gen.set_state(blob["generator"])
        st = blob["state"]
        start, best_val, best_epoch, bad = st["epoch"] + 1, st["best_val"], st["best_epoch"], st["bad"]
        curves = st["curves"]
        if (out / "best.pt").exists():
            best_state = load_checkpoint(out / "best.pt")[0].state_dict()

    eval_seed = cfg.seed + EVAL_SEED_OFFSET
    stopped = False
    for epoch in range(start, cfg.epochs + 1):
        rows, sizes = [], []
        for idx in batches(len(train), cfg.batch_size, cfg.seed, epoch):
            idx = torch.from_numpy(idx)
            t = bidirectional_step(model, opt, train.clouds[idx], train.counts[idx],
                                   train.labels[idx], gen)
            rows.append(t.as_floats())
            sizes.append(len(idx))
        w = np.array(sizes, float) / sum(sizes)
        train_terms = {k: float(sum(wi * r[k] for wi, r in zip(w, rows))) for k in rows[0]}

        model.trained.fill_(True)
        train_ppl = split_perplexity(model, train, eval_seed, cfg.eval_draws)
        val_ppl = split_perplexity(model, val, eval_seed, cfg.eval_draws)
        val_terms = mean_terms(model, val, cfg, eval_seed)
        curves.append({"epoch": epoch, "split": "train", "perplexity": train_ppl, **train_terms})
        curves.append({"epoch": epoch, "split": "val", "perplexity": val_ppl, **val_terms})
        log.info("epoch %d train ppl %.4f val ppl %.4f loss %.3f", epoch, train_ppl, val_ppl,
                 -train_terms["total"])

        if val_ppl < best_val:
            best_val, best_epoch, bad = val_ppl, epoch, 0
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            if out is not None:
                save_checkpoint(out / "best.pt", model, meta=dict(meta, epoch=epoch, val_perplexity=val_ppl))
        else:
            bad += 1
        if out is not None:
            state = {"epoch": epoch, "best_val": best_val, "best_epoch": best_epoch, "bad": bad,
                     "curves": curves}
            save_checkpoint(out / "last.pt", model, opt, gen, state, dict(meta, epoch=epoch))
            write_curves(out / "curves.csv", curves)
        if cfg.patience is not None and bad >= cfg.patience:
            stopped = True
            log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.trained.fill_(True)
    return FitResult(model, curves, best_epoch, best_val, stopped, out)
