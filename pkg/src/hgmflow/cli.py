"""Command-line surface: synthesize data, train, evaluate, compare variants.

Every command works file-in/file-out under a single output directory and
drops a ``manifest.json`` describing the run: config hash, seed, command
line, artifact list, and (outside deterministic mode) wall-clock stamps.

Exit codes are a stable contract: 0 success, 1 numerical failure during
training or scoring, 2 input/output or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .autodiff import NumericsError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, VARIANTS, apply_variant, config_hash
from .data import HGF1Error, SynthSpec, generate_synthetic, read_features, write_features
from .evaluation import (
    auroc,
    histogram_intersection,
    histogram_pair,
    pixel_auroc,
    write_histogram_csv,
)
from .experiments import (
    DEFAULT_VARIANT_ORDER,
    assemble_report,
    benchmark_config,
    compare_variants,
    write_compare_csv,
    write_report_text,
)
from .scoring import export_score_maps, score_dataset
from .trainer import TrainAbort, collapse_labels, train, write_metrics_csv

__all__ = ["main", "RunManifest", "EXIT_OK", "EXIT_NUMERICAL", "EXIT_USAGE"]

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


class CliError(Exception):
    """Input, output, or configuration problem; maps to exit code 2."""


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config_hash: str | None = None
    seed: int | None = None
    deterministic: bool = False
    engine_version: str = __version__
    started: str | None = None
    finished: str | None = None
    artifacts: list[str] = field(default_factory=list)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        payload = {
            "command": self.command,
            "argv": self.argv,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "deterministic": self.deterministic,
            "engine_version": self.engine_version,
            "started": self.started,
            "finished": self.finished,
            "artifacts": sorted(self.artifacts),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def _stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def _out_dir(raw) -> Path:
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _must_exist(raw, kind: str) -> Path:
    path = Path(raw)
    if not path.exists():
        raise CliError(f"{kind} not found: {path}")
    return path


def _data_file(raw, preferred: str) -> Path:
    """Accept a feature file directly, or a directory from `synth`."""
    path = _must_exist(raw, "data path")
    if path.is_dir():
        candidate = path / preferred
        if not candidate.exists():
            raise CliError(f"data directory {path} has no {preferred}")
        return candidate
    return path


def _load_config(raw, args) -> RunConfig:
    """Load a run config from JSON; the name `benchmark` is the frozen preset."""
    if raw == "benchmark":
        cfg = benchmark_config()
    else:
        path = _must_exist(raw, "config file")
        try:
            cfg = RunConfig.from_json_file(path)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CliError(f"bad config file {path}: {exc}") from exc
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.precision is not None:
        cfg.train.precision = args.precision
    return cfg


def _manifest_for(args, command: str) -> RunManifest:
    return RunManifest(
        command=command,
        argv=list(sys.argv[1:]) if args.argv is None else args.argv,
        deterministic=args.deterministic,
        started=None if args.deterministic else _stamp(),
    )


def _finish(manifest: RunManifest, out: Path, args) -> None:
    if not args.deterministic:
        manifest.finished = _stamp()
    manifest.artifacts = [str(Path(p).relative_to(out)) for p in manifest.artifacts]
    manifest.write(out)


def cmd_synth(args) -> int:
    out = _out_dir(args.out_dir)
    manifest = _manifest_for(args, "synth")
    if args.spec_file == "default":
        spec = SynthSpec()
    else:
        path = _must_exist(args.spec_file, "spec file")
        try:
            spec = SynthSpec.from_json_file(path)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CliError(f"bad spec file {path}: {exc}") from exc
    if args.seed is not None:
        spec.seed = args.seed
    manifest.seed = spec.seed
    train_ds, test_ds = generate_synthetic(spec)
    write_features(out / "train.hgf1", train_ds)
    write_features(out / "test.hgf1", test_ds)
    (out / "spec.json").write_text(spec.to_json() + "\n")
    manifest.artifacts += [str(out / n) for n in ("train.hgf1", "test.hgf1", "spec.json")]
    _finish(manifest, out, args)
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out_dir(args.out_dir)
    manifest = _manifest_for(args, "train")
    cfg = _load_config(args.config_file, args)
    if args.variant is not None:
        if args.variant not in VARIANTS:
            raise CliError(
                f"unknown variant {args.variant!r}; choose from {sorted(VARIANTS)}"
            )
        cfg = apply_variant(cfg, args.variant)
    manifest.config_hash = config_hash(cfg)
    manifest.seed = cfg.train.seed
    data = read_features(_data_file(args.data, "train.hgf1"))
    result = train(data, cfg)
    ckpt_path = save_checkpoint(out / "model.ckpt", result.models, result.priors, cfg)
    write_metrics_csv(out / "metrics.csv", result.metrics)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    manifest.artifacts += [str(ckpt_path), str(out / "metrics.csv"), str(out / "config.json")]
    _finish(manifest, out, args)
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args.out_dir)
    manifest = _manifest_for(args, "eval")
    ckpt = load_checkpoint(_must_exist(args.checkpoint, "checkpoint"))
    cfg = ckpt.config
    if args.precision is not None:
        cfg.train.precision = args.precision
    manifest.config_hash = ckpt.config_hash
    manifest.seed = ckpt.seed
    data = read_features(_data_file(args.data, "test.hgf1"))
    labels = collapse_labels(data.labels, cfg.variant.y_effective)
    target_hw = None
    if data.pixel_masks is not None:
        target_hw = tuple(data.pixel_masks.shape[1:])
    result = score_dataset(
        ckpt.models, ckpt.priors, data,
        score_cfg=cfg.score, labels=labels, pos_mode=cfg.model.pos_mode,
        target_hw=target_hw,
    )
    manifest.artifacts += export_score_maps(out, result, anomaly_flags=data.anomaly_flags)

    report = {"n_images": data.n, "config_hash": ckpt.config_hash}
    if data.anomaly_flags is not None:
        flags = data.anomaly_flags
        report["image_auroc"] = auroc(result.image_scores, flags)
        logp = result.image_logp
        pair = histogram_pair(logp[~flags], logp[flags])
        report["logp_overlap"] = histogram_intersection(pair)
        write_histogram_csv(out / "logp_hist.csv", pair)
        manifest.artifacts.append(str(out / "logp_hist.csv"))
        if data.pixel_masks is not None:
            report["pixel_auroc"] = pixel_auroc(result.s, data.pixel_masks)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.artifacts.append(str(out / "report.json"))
    _finish(manifest, out, args)
    return EXIT_OK


def cmd_compare(args) -> int:
    out = _out_dir(args.out_dir)
    manifest = _manifest_for(args, "compare")
    cfg = _load_config(args.config_file, args)
    manifest.config_hash = config_hash(cfg)
    manifest.seed = cfg.train.seed
    train_ds = read_features(_data_file(args.data, "train.hgf1"))
    test_ds = read_features(_data_file(args.data, "test.hgf1"))
    if test_ds.anomaly_flags is None:
        raise CliError("compare needs test data with anomaly flags")
    variants = tuple(args.variants.split(","))
    for name in variants:
        if name not in VARIANTS:
            raise CliError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    seeds = tuple(int(s) for s in args.seeds.split(","))

    runs = compare_variants(train_ds, test_ds, cfg, variants=variants, seeds=seeds)
    write_compare_csv(out / "compare.csv", runs)
    report = assemble_report(cfg, variants, seeds, runs)
    write_report_text(out / "report.txt", report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.artifacts += [str(out / "compare.csv"), str(out / "report.txt"), str(out / "report.json")]
    _finish(manifest, out, args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgmflow",
        description="Flow-based anomaly detection with a hierarchical mixture prior.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--precision", choices=("f32", "f64"), default=None)
    common.add_argument(
        "--deterministic", action="store_true",
        help="suppress wall-clock stamps so reruns are byte-identical",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic feature files")
    p.add_argument("spec_file", help="synthetic spec JSON, or `default`")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train on a feature file")
    p.add_argument("config_file", help="run config JSON, or `benchmark` for the frozen preset")
    p.add_argument("data", help="HGF1 file or a directory holding train.hgf1")
    p.add_argument("out_dir")
    p.add_argument("--variant", default=None, help="apply a named prior-structure variant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a dataset with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("data", help="HGF1 file or a directory holding test.hgf1")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "compare", parents=[common],
        help="train prior-structure variants on identical data and contrast them",
    )
    p.add_argument("config_file", help="run config JSON, or `benchmark` for the frozen preset")
    p.add_argument("data", help="directory holding train.hgf1 and test.hgf1 (or one file used for both)")
    p.add_argument("out_dir")
    p.add_argument("--variants", default=",".join(DEFAULT_VARIANT_ORDER))
    p.add_argument("--seeds", default="0")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else None
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HGF1Error, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainAbort, NumericsError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
