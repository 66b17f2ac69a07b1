"""On-disk dataset layout and in-memory tensors for training.

One directory per split::

    <split>/clouds/<sample_id>.ply    lesion surface points
    <split>/profiles.csv              sample_id, label, one column per gene
    <split>/header.json               V, K, gene_names, type_names
    <split>/manifest.json             ordered sample ids
    <split>/latent_truth.csv          generator factors (oracle tests only)

``load_split`` never opens ``latent_truth.csv``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .ingest import normalize_cloud, read_cloud, write_cloud
from .synthdata import PairedSample

SPLITS = ("train", "val", "test")


@dataclass
class SplitData:
    """Model-facing view of a split: clouds, counts and labels only."""

    ids: list[str]
    clouds: torch.Tensor  # (N, P, 3) float32, centred, unit max radius
    counts: torch.Tensor  # (N, V) float32
    labels: torch.Tensor  # (N,) int64
    gene_names: list[str]
    type_names: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def vocab_size(self) -> int:
        return self.counts.shape[1]

    @property
    def n_types(self) -> int:
        return len(self.type_names)

    @property
    def n_points(self) -> int:
        return self.clouds.shape[1]

    def subset(self, idx) -> "SplitData":
        idx = torch.as_tensor(np.asarray(idx, dtype=np.int64))
        return SplitData([self.ids[i] for i in idx.tolist()], self.clouds[idx], self.counts[idx],
                         self.labels[idx], self.gene_names, self.type_names)

    @classmethod
    def concat(cls, parts: list["SplitData"]) -> "SplitData":
        return cls(
            [i for p in parts for i in p.ids],
            torch.cat([p.clouds for p in parts]),
            torch.cat([p.counts for p in parts]),
            torch.cat([p.labels for p in parts]),
            parts[0].gene_names, parts[0].type_names,
        )


def _model_cloud(points: np.ndarray) -> np.ndarray:
    return normalize_cloud(points)[0].astype(np.float32)


def from_samples(samples: list[PairedSample], gene_names: list[str],
                 type_names: list[str]) -> SplitData:
    if not samples:
        raise ValueError("empty split")
    return SplitData(
        [s.sample_id for s in samples],
        torch.from_numpy(np.stack([_model_cloud(s.cloud) for s in samples])),
        torch.from_numpy(np.stack([s.profile.counts for s in samples]).astype(np.float32)),
        torch.tensor([s.label.index for s in samples], dtype=torch.int64),
        list(gene_names), list(type_names),
    )


def write_split(samples: list[PairedSample], directory: str | os.PathLike,
                gene_names: list[str], type_names: list[str]) -> None:
    d = Path(directory)
    (d / "clouds").mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_cloud(s.cloud, d / "clouds" / f"{s.sample_id}.ply")
    with open(d / "profiles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", *gene_names])
        for s in samples:
            w.writerow([s.sample_id, s.label.index, *s.profile.counts.tolist()])
    with open(d / "latent_truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        n_f = len(samples[0].latent_truth) if samples else 0
        w.writerow(["sample_id", *[f"f{i}" for i in range(n_f)]])
        for s in samples:
            w.writerow([s.sample_id, *map(repr, np.asarray(s.latent_truth, float).tolist())])
    header = {"V": len(gene_names), "K": len(type_names),
              "gene_names": list(gene_names), "type_names": list(type_names)}
    (d / "header.json").write_text(json.dumps(header, indent=1))
    (d / "manifest.json").write_text(json.dumps({"sample_ids": [s.sample_id for s in samples]}, indent=1))


def load_split(directory: str | os.PathLike) -> SplitData:
    d = Path(directory)
    for name in ("header.json", "manifest.json", "profiles.csv"):
        if not (d / name).exists():
            raise FileNotFoundError(f"{d}: missing {name}")
    header = json.loads((d / "header.json").read_text())
    ids = json.loads((d / "manifest.json").read_text())["sample_ids"]
    rows = {}
    with open(d / "profiles.csv", newline="") as fh:
        r = csv.reader(fh)
        cols = next(r)
        if cols[2:] != header["gene_names"]:
            raise ValueError(f"{d}: profiles.csv gene columns do not match header")
        for row in r:
            rows[row[0]] = (int(row[1]), np.array(row[2:], dtype=np.int64))
    missing = [i for i in ids if i not in rows]
    if missing:
        raise ValueError(f"{d}: manifest ids without profiles: {missing[:5]}")
    labels = np.array([rows[i][0] for i in ids])
    if labels.min() < 0 or labels.max() >= header["K"]:
        raise ValueError(f"{d}: label outside [0, {header['K']})")
    counts = np.stack([rows[i][1] for i in ids])
    if (counts < 0).any():
        raise ValueError(f"{d}: negative counts")
    clouds = np.stack([_model_cloud(read_cloud(d / "clouds" / f"{i}.ply")) for i in ids])
    return SplitData(ids, torch.from_numpy(clouds), torch.from_numpy(counts.astype(np.float32)),
                     torch.from_numpy(labels.astype(np.int64)),
                     header["gene_names"], header["type_names"])


def load_latent_truth(directory: str | os.PathLike) -> dict[str, np.ndarray]:
    """Generator factors by sample id; for oracle checks, never for training."""
    out = {}
    with open(Path(directory) / "latent_truth.csv", newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            out[row[0]] = np.array(row[1:], dtype=float)
    return out
