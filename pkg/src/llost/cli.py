"""Command-line entry point: ``llost <subcommand> [options]``.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 for runtime
failures. Every subcommand writes ``run_manifest.json`` under ``--out-dir``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, TrainConfig, from_dict, load_json
from .synthdata import SynthConfig

log = logging.getLogger("llost")

CONFIG_SECTIONS = ("synth", "train", "eval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_config(path: str | None) -> dict:
    """Parse the run config: optional ``synth``, ``train`` and ``eval`` sections."""
    data = load_json(path) if path else {}
    unknown = sorted(set(data) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {', '.join(unknown)}; "
                          f"expected {', '.join(CONFIG_SECTIONS)}")
    for key in CONFIG_SECTIONS:
        if not isinstance(data.get(key, {}), dict):
            raise ConfigError(f"{path}: section {key!r} must be an object")
    ev = data.get("eval", {})
    bad = sorted(set(ev) - {"n_boot", "draws"})
    if bad:
        raise ConfigError(f"{path}: eval: unknown field(s) {', '.join(bad)}")
    return data


def synth_config(cfg: dict, seed: int | None, path) -> SynthConfig:
    d = dict(cfg.get("synth", {}))
    if seed is not None:
        d["seed"] = seed
    return from_dict(SynthConfig, d, f"{path}: synth")


def train_config(cfg: dict, seed: int | None, path) -> TrainConfig:
    d = dict(cfg.get("train", {}))
    if seed is not None:
        d["seed"] = seed
    return from_dict(TrainConfig, d, f"{path}: train")


def write_manifest(out: Path, command: str, argv: list[str], config: dict, seed) -> None:
    import hashlib

    import torch

    out.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seed": seed,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "versions": {"llost": __version__, "python": platform.python_version(),
                     "torch": torch.__version__, "numpy": np.__version__},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=1))


# subcommands ------------------------------------------------------------------

def cmd_synth(args, cfg):
    from .dataset import write_split
    from .synthdata import expected_tml, gen_dataset, gene_names, make_type_params, split_dataset

    sc = synth_config(cfg, args.seed, args.config)
    samples = gen_dataset(sc)
    splits = split_dataset(samples, seed=sc.seed)
    genes = gene_names(sc.vocab_size)
    types = [f"T{k}" for k in range(sc.n_types)]
    out = Path(args.out_dir)
    for name, part in zip(("train", "val", "test"), splits):
        write_split(part, out / name, genes, types)
    info = {
        "synth": sc.__dict__,
        "type_names": types,
        # generator truth for evaluation only
        "expected_tml": [expected_tml(tp) for tp in make_type_params(sc)],
        "sizes": {n: len(p) for n, p in zip(("train", "val", "test"), splits)},
    }
    (out / "dataset.json").write_text(json.dumps(info, indent=1))
    write_manifest(out, "synth", args.argv, {"synth": sc.__dict__}, sc.seed)
    print(f"wrote {len(samples)} samples to {out}")


def cmd_ingest(args, cfg):
    from .ingest import ingest_mask, load_mask, write_cloud

    mask = load_mask(args.mask, args.meta)
    pts, meta = ingest_mask(mask, args.points, args.target_dz, seed=args.seed or 0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cloud(pts, out)
    if args.out_dir:
        write_manifest(Path(args.out_dir), "ingest", args.argv,
                       {"points": args.points, "target_dz": args.target_dz, "surface": meta},
                       args.seed or 0)
    if meta.get("extruded"):
        log.warning("single-slice lesion: extruded by one slice thickness")
    print(f"wrote {len(pts)} points to {out}")


def _load_splits(data_dir):
    from .dataset import load_split

    d = Path(data_dir)
    return [load_split(d / s) for s in ("train", "val", "test")]


def cmd_train(args, cfg):
    from .trainer import fit

    tc = train_config(cfg, args.seed, args.config)
    train, val, _ = _load_splits(args.data)
    out = Path(args.out_dir)
    write_manifest(out, "train", args.argv, {"train": tc.to_dict()}, tc.seed)
    res = fit(train, val, tc, out, resume=args.resume, meta={"config_hash": tc.digest()})
    print(f"best epoch {res.best_epoch}, validation log-perplexity {res.best_val:.4f}")


def write_predictions(pred, data, out: Path) -> None:
    """Per-sample and per-(sample, gene) CSVs; metrics are recomputable from these."""
    out.mkdir(parents=True, exist_ok=True)
    true = data.counts.numpy().astype(np.int64)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "tml_true", "tml_pred", "logprob"])
        for i, sid in enumerate(pred.ids):
            lp = repr(float(pred.logprob[i])) if pred.logprob is not None else ""
            w.writerow([sid, int(data.labels[i]), int(true[i].sum()),
                        repr(float(pred.mean_counts[i].sum())), lp])
    with open(out / "profile_predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "gene", "true_count", "pred_mean", "pred_prob", "pred_binary",
                    "pred_count"])
        for i, sid in enumerate(pred.ids):
            for j, g in enumerate(data.gene_names):
                w.writerow([sid, g, true[i, j], repr(float(pred.mean_counts[i, j])),
                            repr(float(pred.occurrence[i, j])), int(pred.binary[i, j]),
                            int(pred.counts[i, j])])


def read_predictions(directory: Path):
    """Inverse of :func:`write_predictions` as numpy arrays."""
    per = list(csv.DictReader(open(directory / "predictions.csv", newline="")))
    ids = [r["sample_id"] for r in per]
    pos = {s: i for i, s in enumerate(ids)}
    rows = list(csv.DictReader(open(directory / "profile_predictions.csv", newline="")))
    genes = list(dict.fromkeys(r["gene"] for r in rows))
    gpos = {g: j for j, g in enumerate(genes)}
    shape = (len(ids), len(genes))
    true, mean, binary = np.zeros(shape, np.int64), np.zeros(shape), np.zeros(shape, np.int64)
    for r in rows:
        i, j = pos[r["sample_id"]], gpos[r["gene"]]
        true[i, j], mean[i, j], binary[i, j] = int(r["true_count"]), float(r["pred_mean"]), int(r["pred_binary"])
    logprob = np.array([float(r["logprob"]) for r in per])
    labels = np.array([int(r["label"]) for r in per])
    return {"ids": ids, "labels": labels, "true": true, "mean": mean, "binary": binary,
            "logprob": logprob}


def cmd_predict(args, cfg):
    from .dataset import load_split
    from .trainer import load_checkpoint, predict_split

    model, _ = load_checkpoint(args.checkpoint)
    data = load_split(args.data)
    ev = cfg.get("eval", {})
    draws = args.draws or ev.get("draws", model.cfg.eval_draws)
    pred = predict_split(model, data, seed=args.seed or 0, n_draws=draws)
    out = Path(args.out_dir)
    write_predictions(pred, data, out)
    write_manifest(out, "predict", args.argv, {"checkpoint": str(args.checkpoint), "draws": draws},
                   args.seed or 0)
    print(f"wrote predictions for {len(pred.ids)} samples to {out}")


def cmd_eval(args, cfg):
    from .metrics import build_report

    p = read_predictions(Path(args.predictions))
    n_boot = args.n_boot or cfg.get("eval", {}).get("n_boot", 1000)
    rep = build_report(p["true"], p["mean"], p["binary"], p["logprob"], n_boot, args.seed or 0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json())
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k in ("log_perplexity", "rmse", "f1", "ppv", "ppv_mean", "ppv_std"):
            w.writerow([k, repr(float(getattr(rep, k)))])
        w.writerow(["ppv_text", rep.ppv_text])
    from .plots import tml_scatter

    tml_scatter(p["true"].sum(1), rep.tml_errors, out / "tml_error")
    write_manifest(out, "eval", args.argv, {"n_boot": n_boot}, args.seed or 0)
    print(f"F1 {rep.f1:.3f}  PPV {rep.ppv_text}  RMSE {rep.rmse:.3f}  log-perplexity {rep.log_perplexity:.4f}")


def cmd_per_type(args, cfg):
    from .dataset import SplitData
    from .experiments import per_type_eval

    tc = train_config(cfg, args.seed, args.config)
    data = SplitData.concat(_load_splits(args.data))
    types = args.types if args.types is not None else list(range(data.n_types))
    n_boot = cfg.get("eval", {}).get("n_boot", 1000)
    out = Path(args.out_dir)
    write_manifest(out, "per-type", args.argv, {"train": tc.to_dict(), "types": types}, tc.seed)
    rows = []
    for k in types:
        rep = per_type_eval(data, k, tc, n_boot, out / f"type_{k}")
        n_k = int((data.labels == k).sum())
        rows.append({"type": data.type_names[k], "samples": n_k, "f1": rep.f1, "ppv": rep.ppv_text})
        print(f"{data.type_names[k]}\t{n_k}\tPPV {rep.ppv_text}\tF1 {rep.f1:.3f}")
    with open(out / "per_type.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_ablate(args, cfg):
    from .experiments import ablation_run
    from .plots import ablation_box

    tc = train_config(cfg, args.seed, args.config)
    train, val, test = _load_splits(args.data)
    out = Path(args.out_dir)
    write_manifest(out, "ablate", args.argv, {"train": tc.to_dict()}, tc.seed)
    n_boot = cfg.get("eval", {}).get("n_boot", 1000)
    res = ablation_run(train, val, test, tc, n_boot=n_boot, out_dir=out)
    ablation_box(res.box, out / "ablation_box")
    (out / "ablation_diff.json").write_text(json.dumps(res.diff_ci, indent=1))
    for r in res.rows:
        print(f"{r['variant']}\tF1 {r['f1']:.3f}\tPPV {r['ppv_text']}")


def cmd_plot(args, cfg):
    from .dataset import load_split
    from .experiments import project_2d, shared_latents
    from .plots import curves_plot, scatter_2d
    from .trainer import load_checkpoint

    out = Path(args.out_dir)
    made = []
    if args.checkpoint and args.data:
        model, _ = load_checkpoint(args.checkpoint)
        data = load_split(args.data)
        coords = project_2d(shared_latents(model, data), data.labels.numpy(), seed=args.seed or 0)
        scatter_2d(coords, data.labels.numpy(), data.ids, out / "shared_tsne", data.type_names)
        made.append("shared_tsne")
    if args.curves:
        curves_plot(Path(args.curves), out / "curves")
        made.append("curves")
    if not made:
        raise UsageError("plot needs --checkpoint with --data, or --curves")
    write_manifest(out, "plot", args.argv, {"made": made}, args.seed or 0)
    print(f"wrote {', '.join(made)} to {out}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config with synth/train/eval sections")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", help="directory for all artifacts")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="llost", description="Lesion point cloud to mutation profile models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic paired dataset")
    s.set_defaults(fn=cmd_synth, need_out=True)

    s = sub.add_parser("ingest", parents=[common], help="mask volume to PLY point cloud")
    s.add_argument("--mask", required=True, help=".npy binary volume (slice, row, col)")
    s.add_argument("--meta", required=True, help="JSON sidecar with spacing and origin")
    s.add_argument("--points", type=int, default=2048)
    s.add_argument("--target-dz", type=float, default=None)
    s.add_argument("--out", required=True, help="output .ply path")
    s.set_defaults(fn=cmd_ingest, need_out=False)

    s = sub.add_parser("train", parents=[common], help="fit a model on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(fn=cmd_train, need_out=True)

    s = sub.add_parser("predict", parents=[common], help="predict profiles for a split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="split directory")
    s.add_argument("--draws", type=int)
    s.set_defaults(fn=cmd_predict, need_out=True)

    s = sub.add_parser("eval", parents=[common], help="metrics from a predictions directory")
    s.add_argument("--predictions", required=True)
    s.add_argument("--n-boot", type=int)
    s.set_defaults(fn=cmd_eval, need_out=True)

    s = sub.add_parser("per-type", parents=[common], help="per-type hold-out evaluation")
    s.add_argument("--data", required=True)
    s.add_argument("--types", type=int, nargs="+")
    s.set_defaults(fn=cmd_per_type, need_out=True)

    s = sub.add_parser("ablate", parents=[common], help="shared-size and label ablations")
    s.add_argument("--data", required=True)
    s.set_defaults(fn=cmd_ablate, need_out=True)

    s = sub.add_parser("plot", parents=[common], help="latent projection and curve plots")
    s.add_argument("--checkpoint")
    s.add_argument("--data", help="split directory")
    s.add_argument("--curves", help="curves.csv from train")
    s.set_defaults(fn=cmd_plot, need_out=True)
    return p


def cli_main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.need_out and not args.out_dir:
            raise UsageError(f"llost {args.command}: --out-dir is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.fn(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface any runtime failure as exit 1
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
