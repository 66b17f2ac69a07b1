"""Evaluation metrics for predicted mutation profiles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

TML_STRATUM = 400


def log_perplexity(tml, logprobs) -> tuple[float, int]:
    """``-(1/N) sum_n logp_n / L_n`` over samples with ``L_n > 0``.

    Returns the value and the number of zero-load samples that were excluded.
    """
    tml = np.asarray(tml, dtype=float)
    logprobs = np.asarray(logprobs, dtype=float)
    if tml.shape != logprobs.shape:
        raise ValueError("tml and logprobs must have the same shape")
    keep = tml > 0
    if not keep.any():
        raise ValueError("all profiles have zero mutational load")
    return float(-np.mean(logprobs[keep] / tml[keep])), int((~keep).sum())


def rmse(pred, true) -> float:
    pred, true = np.asarray(pred, dtype=float), np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    return float(np.sqrt(np.mean((pred - true) ** 2)))


def tml_error(pred, true) -> np.ndarray:
    """Signed per-sample load error ``sum(pred) - sum(true)``."""
    pred, true = np.atleast_2d(pred), np.atleast_2d(true)
    if pred.shape[-1] != true.shape[-1]:
        raise ValueError("profiles must share the gene vocabulary")
    return pred.sum(-1).astype(float) - true.sum(-1).astype(float)


def tml_summary(pred, true, stratum: float = TML_STRATUM) -> dict:
    err = tml_error(pred, true)
    low = np.atleast_2d(true).sum(-1) < stratum
    return {
        "mean_error": float(err.mean()),
        "mean_abs_error": float(np.abs(err).mean()),
        "n_below_stratum": int(low.sum()),
        "mean_abs_error_below_stratum": float(np.abs(err[low]).mean()) if low.any() else float("nan"),
    }


@dataclass
class Occurrence:
    f1: float
    ppv: float
    recall: float
    tp: int
    fp: int
    fn: int
    ppv_undefined: bool


def _confusion(pred, true):
    pred, true = np.asarray(pred).astype(bool), np.asarray(true).astype(bool)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    return int((pred & true).sum()), int((pred & ~true).sum()), int((~pred & true).sum())


def _scores(tp, fp, fn):
    ppv = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0
    return f1, ppv, rec


def occurrence_metrics(pred, true) -> Occurrence:
    """Micro-averaged F1 / PPV over all (sample, gene) pairs.

    With no predicted positives PPV is undefined; it is reported as 0 and
    flagged.
    """
    tp, fp, fn = _confusion(pred, true)
    f1, ppv, rec = _scores(tp, fp, fn)
    return Occurrence(f1, ppv, rec, tp, fp, fn, tp + fp == 0)


def per_gene_f1(pred, true) -> np.ndarray:
    pred, true = np.asarray(pred).astype(bool), np.asarray(true).astype(bool)
    tp = (pred & true).sum(0)
    den = 2 * tp + (pred & ~true).sum(0) + (~pred & true).sum(0)
    return np.where(den > 0, 2 * tp / np.maximum(den, 1), np.nan)


def bootstrap_rows(n: int, n_boot: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, n, size=(n_boot, n))


def ppv_bootstrap(pred, true, n: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Mean and std of PPV over ``n`` row resamples with replacement."""
    pred, true = np.asarray(pred).astype(bool), np.asarray(true).astype(bool)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    if len(pred) < 2:
        raise ValueError("bootstrap needs at least two samples")
    tp_row = (pred & true).sum(1)
    pos_row = pred.sum(1)
    idx = bootstrap_rows(len(pred), n, seed)
    tp, pos = tp_row[idx].sum(1), pos_row[idx].sum(1)
    vals = np.where(pos > 0, tp / np.maximum(pos, 1), 0.0)
    return float(vals.mean()), float(vals.std())


def format_pm(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


@dataclass
class MetricReport:
    log_perplexity: float
    rmse: float
    f1: float
    ppv: float
    ppv_mean: float
    ppv_std: float
    n_bootstrap: int
    ppv_undefined: bool = False
    n_zero_tml: int = 0
    tml: dict = field(default_factory=dict)
    tml_errors: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("f1", "ppv", "ppv_mean"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.rmse < 0:
            raise ValueError("rmse must be nonnegative")

    @property
    def ppv_text(self) -> str:
        return format_pm(self.ppv_mean, self.ppv_std)

    def to_json(self) -> str:
        d = asdict(self)
        d["ppv_text"] = self.ppv_text
        return json.dumps(d, indent=1, default=float)


def build_report(true_counts, pred_mean, pred_binary, logprobs, n_boot: int = 1000,
                 seed: int = 0) -> MetricReport:
    true_counts = np.asarray(true_counts)
    tml = true_counts.sum(1)
    ppl, n_zero = log_perplexity(tml, logprobs)
    occ = occurrence_metrics(pred_binary, true_counts > 0)
    pm, ps = ppv_bootstrap(pred_binary, true_counts > 0, n_boot, seed)
    return MetricReport(
        log_perplexity=ppl,
        rmse=rmse(pred_mean, true_counts),
        f1=occ.f1,
        ppv=occ.ppv,
        ppv_mean=pm,
        ppv_std=ps,
        n_bootstrap=n_boot,
        ppv_undefined=occ.ppv_undefined,
        n_zero_tml=n_zero,
        tml=tml_summary(pred_mean, true_counts),
        tml_errors=tml_error(pred_mean, true_counts).tolist(),
    )
