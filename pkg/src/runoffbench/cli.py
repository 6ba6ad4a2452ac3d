"""Command-line entry point: ``runoffbench {generate-synthetic,train,evaluate,gradcheck}``.

Runs are configured by one YAML file whose sections mirror the library
types; command-line flags override file values.  See README.md for the
full grammar.  Exit codes: 0 ok, 2 config/usage, 3 I/O, 4 training
divergence, 5 verification failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from . import data as D
from . import metrics as ME
from . import models as M
from . import training as TR
from .errors import CheckpointError, RunoffBenchError, TrainingError
from .tensor import RngStream

logger = logging.getLogger("runoffbench")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_VERIFY = 5

DATA_ROOT_ENV = "RUNOFFBENCH_DATA_ROOT"
MANIFEST_NAME = "run_manifest.json"

SYNTHETIC_DEFAULTS = dict(n_basins=4, n_days=4000, k=[0.08, 0.12, 0.16, 0.2], et_rate=[0.02, 0.03, 0.04, 0.05],
                          start_date="2000-01-01", wet_prob=D.SYNTH_WET_PROB, wet_mean=D.SYNTH_WET_MEAN_MM,
                          area_km2=D.SYNTH_AREA_KM2, noise_rel_sigma=0.0)
SECTIONS = ("data", "model", "train", "split", "seeds", "out", "synthetic", "evaluate", "workers")


class ConfigError(RunoffBenchError, ValueError):
    """The run configuration is missing, malformed or inconsistent."""


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# configuration


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        cfg = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}; expected {list(SECTIONS)}")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return sec


def _checked_keys(sec: dict, allowed: Sequence[str], name: str) -> dict:
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"section {name!r}: unknown key(s) {sorted(unknown)}; expected {sorted(allowed)}")
    return dict(sec)


def _resolve_path(value, root: Path | None) -> Path:
    p = Path(value)
    return p if p.is_absolute() or root is None else root / p


def data_paths(cfg: dict) -> tuple[D.DataPaths, list[str]]:
    sec = _checked_keys(_section(cfg, "data"),
                        ("root", "forcing_dirs", "streamflow_dir", "attributes_file", "manifest", "products"), "data")
    root = sec.get("root") or os.environ.get(DATA_ROOT_ENV)
    root = Path(root) if root else None
    if root is not None and "forcing_dirs" not in sec and (root / "forcing").is_dir():
        sec["forcing_dirs"] = {p.name: f"forcing/{p.name}" for p in sorted((root / "forcing").iterdir()) if p.is_dir()}
    if not sec.get("forcing_dirs"):
        raise ConfigError("data.forcing_dirs is required (or data.root pointing at a generated dataset)")
    forcing = {str(k): _resolve_path(v, root) for k, v in sec["forcing_dirs"].items()}
    paths = D.DataPaths(forcing, _resolve_path(sec.get("streamflow_dir", "streamflow"), root),
                        _resolve_path(sec.get("attributes_file", "attributes.csv"), root),
                        _resolve_path(sec.get("manifest", "manifest.txt"), root))
    for p in [*forcing.values(), paths.streamflow_dir]:
        if not p.is_dir():
            raise ConfigError(f"data directory does not exist: {p}")
    for p in (paths.attributes_file, paths.manifest):
        if not p.is_file():
            raise ConfigError(f"data file does not exist: {p}")
    products = sec.get("products") or sorted(forcing)[:1]
    products = [str(p) for p in ([products] if isinstance(products, str) else products)]
    missing = [p for p in products if p not in forcing]
    if missing:
        raise ConfigError(f"data.products {missing} have no entry in data.forcing_dirs")
    return paths, products


def load_records(cfg: dict) -> list[D.BasinRecord]:
    paths, products = data_paths(cfg)
    records = D.load_dataset(paths)
    return D.fuse_forcings(records, products)


def split_spec(cfg: dict) -> D.SplitSpec:
    sec = _checked_keys(_section(cfg, "split"), ("train_start", "train_end", "test_start", "test_end"), "split")
    return D.SplitSpec(**{k: str(v) for k, v in sec.items()})


def model_fields(cfg: dict) -> dict:
    allowed = [f.name for f in fields(M.ModelSpec) if f.name != "input_dim"]
    sec = _checked_keys(_section(cfg, "model"), allowed, "model")
    if "variant" not in sec:
        raise ConfigError("model.variant is required")
    return sec


def train_config(cfg: dict, seed: int) -> TR.TrainConfig:
    allowed = [f.name for f in fields(TR.TrainConfig) if f.name not in ("seed", "seq_len")]
    sec = _checked_keys(_section(cfg, "train"), allowed, "train")
    seq_len = model_fields(cfg).get("seq_len", M.ModelSpec.__dataclass_fields__["seq_len"].default)
    return TR.TrainConfig(**sec, seq_len=int(seq_len), seed=seed)


def seeds_of(cfg: dict, override: int | None) -> list[int]:
    if override is not None:
        return [override]
    seeds = cfg.get("seeds", [0])
    seeds = [seeds] if isinstance(seeds, int) else list(seeds)
    if not seeds or any(not isinstance(s, int) or s < 0 for s in seeds):
        raise ConfigError(f"seeds must be a non-empty list of non-negative integers, got {seeds}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"seeds must be distinct, got {seeds}")
    return seeds


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form, ignoring where outputs go."""
    canonical = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(canonical, sort_keys=True, default=str).encode()).hexdigest()


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# run directories


def prepare_out(cfg: dict, out_flag: str | None, force: bool, this_hash: str | None = None) -> Path:
    out = out_flag or cfg.get("out")
    if not out:
        raise ConfigError("an output directory is required (--out or 'out:' in the config)")
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise CliExit(EXIT_IO, f"output path {out} exists and is not a directory")
    if (out / MANIFEST_NAME).exists() and not force:
        previous = json.loads((out / MANIFEST_NAME).read_text()).get("config_hash", "?")
        current = f", this config hash {this_hash}" if this_hash else ""
        raise ConfigError(f"{out} already holds a run (config hash {previous}{current}); "
                          "pass --force to overwrite")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliExit(EXIT_IO, f"output directory {out} is not writable: {exc}") from None
    return out


def write_manifest(out: Path, command: str, cfg: dict, seeds: Sequence[int], artifacts: Sequence[Path],
                   extra: dict | None = None) -> dict:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seeds": list(seeds),
        "artifacts": {str(p.relative_to(out)): sha256_file(p) for p in artifacts},
    }
    manifest.update(extra or {})
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# commands


def cmd_generate_synthetic(args, cfg: dict) -> int:
    sec = _checked_keys(_section(cfg, "synthetic"), SYNTHETIC_DEFAULTS, "synthetic")
    params = {**SYNTHETIC_DEFAULTS, **sec}
    for key in ("n_basins", "n_days"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    seed = args.seed if args.seed is not None else seeds_of(cfg, None)[0]
    n = int(params["n_basins"])
    # per-basin lists shorter than n_basins are cycled
    k, et = ([v[i % len(v)] for i in range(n)] if isinstance(v, list) else v
             for v in (params["k"], params["et_rate"]))
    rng_data, rng_noise = RngStream(seed).split(2)
    records = D.synth_linear_reservoir(n, int(params["n_days"]), k, et, rng_data,
                                       start_date=str(params["start_date"]), wet_prob=float(params["wet_prob"]),
                                       wet_mean=float(params["wet_mean"]), area_km2=float(params["area_km2"]))
    if float(params["noise_rel_sigma"]) > 0:
        records = D.add_forcing_noise(records, "synthetic", "synthetic_noisy", float(params["noise_rel_sigma"]),
                                      rng_noise)
    out = prepare_out(cfg, args.out, args.force)
    try:
        paths = D.write_dataset(records, out)
    except OSError as exc:
        raise CliExit(EXIT_IO, f"cannot write dataset under {out}: {exc}") from None
    artifacts = sorted(p for p in out.rglob("*.csv")) + [paths.manifest]
    write_manifest(out, "generate-synthetic", {**cfg, "synthetic": params}, [seed], artifacts)
    print(f"wrote {n} synthetic basins x {params['n_days']} days to {out}")
    return EXIT_OK


def cmd_train(args, cfg: dict) -> int:
    seeds = seeds_of(cfg, args.seed)
    records = load_records(cfg)
    split = split_spec(cfg)
    stats = D.compute_norm_stats(records, split)
    spec = M.ModelSpec(**model_fields(cfg), input_dim=stats.input_dim)
    base = train_config(cfg, seeds[0])
    base.resolved_head(spec)
    resolved = {**cfg, "seeds": seeds, "train": base.to_dict(), "model": spec.to_dict(), "split": split.to_dict()}
    out = prepare_out(cfg, args.out, args.force, config_hash(resolved))
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)
    workers = int(args.workers or cfg.get("workers", 1))
    members = TR.train_ensemble(spec, records, split, base, seeds, workers=workers)

    artifacts, failed = [], []
    for m in members:
        label = f"{spec.variant}-seed{m.seed}"
        if not m.ok:
            failed.append(f"seed {m.seed}: {m.error}")
            continue
        ckpt_path = out / "checkpoints" / f"{label}.rbw"
        trace_path = out / "traces" / f"{label}.csv"
        TR.save_checkpoint(m.checkpoint, ckpt_path)
        trace_path.write_text(m.result.trace_csv())
        artifacts += [ckpt_path, trace_path]
        print(f"{label}: final loss {m.result.trace[-1][1]:.5f}" if m.result.trace else f"{label}: 0 iterations")
    manifest = write_manifest(out, "train", resolved, seeds, artifacts, {"failed_members": failed})
    print(f"config hash {manifest['config_hash']}")
    if failed:
        raise CliExit(EXIT_DIVERGED, "training diverged for " + "; ".join(failed))
    return EXIT_OK


@dataclass
class _Member:
    label: str
    variant: str
    model: Any


def _collect_checkpoints(args, cfg: dict) -> list[Path]:
    sec = _checked_keys(_section(cfg, "evaluate"), ("checkpoints", "oracle", "h_frac", "l_frac", "floor"), "evaluate")
    paths = [Path(p) for p in (args.checkpoints or sec.get("checkpoints") or [])]
    expanded = []
    for p in paths:
        if p.is_dir():
            found = sorted(p.glob("*.rbw")) or sorted((p / "checkpoints").glob("*.rbw"))
            if not found:
                raise CliExit(EXIT_IO, f"no checkpoints found under {p}")
            expanded += found
        else:
            expanded.append(p)
    return expanded


def cmd_evaluate(args, cfg: dict) -> int:
    sec = _section(cfg, "evaluate")
    metric_kw = {k: float(sec[k]) for k in ("h_frac", "l_frac", "floor") if k in sec}
    records = load_records(cfg)
    use_oracle = args.oracle or bool(sec.get("oracle", False))
    ckpt_paths = _collect_checkpoints(args, cfg)
    if not ckpt_paths and not use_oracle:
        raise ConfigError("no checkpoints given (--checkpoints, evaluate.checkpoints) and --oracle not set")

    members: list[_Member] = []
    split = split_spec(cfg) if _section(cfg, "split") else None
    for path in ckpt_paths:
        try:
            ckpt = TR.load_checkpoint(path)
        except CheckpointError as exc:
            raise CliExit(EXIT_IO, str(exc)) from None
        (block,) = records[0].forcings.values()
        data_dim = len(block.variables) + records[0].attributes.size
        if ckpt.spec.input_dim != data_dim or ckpt.stats.input_dim != data_dim:
            raise ConfigError(f"dimension mismatch: checkpoint {path.name} has input_dim={ckpt.spec.input_dim} "
                              f"but the configured data provide input_dim={data_dim}")
        members.append(_Member(ckpt.label, ckpt.spec.variant, ckpt))
        if split is None:
            split = ckpt.split
    if use_oracle:
        for i in range(int(args.oracle_members or 1)):
            members.append(_Member(f"replay-oracle-{i}", "replay-oracle", ME.ReplayOracle()))
    if split is None:
        raise ConfigError("no split: set the 'split' section or evaluate checkpoints that record one")

    out = prepare_out(cfg, args.out, args.force)
    for sub in ("reports", "cdf", "summary"):
        (out / sub).mkdir(exist_ok=True)
    artifacts, reports_by_variant = [], {}
    for m in members:
        report = ME.evaluate_model(m.model, records, split, **metric_kw)
        report.label = m.label
        path = out / "reports" / f"{m.label}.csv"
        report.write(path)
        artifacts.append(path)
        for metric in ME.SUMMARY_METRICS:
            values = report.values(metric)
            if not (values == values).any():
                logger.warning("%s: every basin's %s is undefined; no CDF written", m.label, metric)
                continue
            cdf_path = out / "cdf" / f"{m.label}_{metric}.csv"
            ME.cdf_series(values, metric).write(cdf_path)
            artifacts.append(cdf_path)
        reports_by_variant.setdefault(m.variant, []).append(report)

    for variant, reports in reports_by_variant.items():
        summary = ME.summarize_ensemble(reports)
        csv_path = out / "summary" / f"{variant}.csv"
        txt_path = out / "summary" / f"{variant}.txt"
        csv_path.write_text(summary.to_csv())
        txt_path.write_text(summary.table_row())
        artifacts += [csv_path, txt_path]
        print(f"[{variant}, {len(reports)} member(s)]")
        print(summary.table_row(), end="")
    write_manifest(out, "evaluate", {**cfg, "split": split.to_dict()}, [], artifacts,
                   {"checkpoints": {str(p): sha256_file(p) for p in ckpt_paths}})
    return EXIT_OK


def cmd_gradcheck(args, cfg: dict) -> int:
    from . import gradcheck

    result = gradcheck.run_suite(fault=args.inject_fault)
    for line in result.lines():
        print(line)
    print(f"{len(result.reports)} functions checked in {result.seconds:.1f}s")
    if not result.passed:
        worst = result.worst
        raise CliExit(EXIT_VERIFY, f"gradient check failed; worst: {worst.name} input {worst.worst_input} "
                                   f"element {worst.worst_index} rel. error {worst.max_rel_error:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="runoffbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="seed override (a single seed for train)")
        if out:
            p.add_argument("--out", help="output directory (overrides 'out:' in the config)")
            p.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    g = sub.add_parser("generate-synthetic", help="write a synthetic linear-reservoir dataset")
    common(g)
    g.add_argument("--n-basins", dest="n_basins", type=int)
    g.add_argument("--n-days", dest="n_days", type=int)

    t = sub.add_parser("train", help="train one checkpoint per seed")
    common(t)
    t.add_argument("--workers", type=int, help="ensemble members trained concurrently")

    e = sub.add_parser("evaluate", help="score checkpoints and write reports, CDFs and summaries")
    common(e)
    e.add_argument("--checkpoints", nargs="+", help="checkpoint files or run directories")
    e.add_argument("--oracle", action="store_true", help="also score the observed-discharge replay stub")
    e.add_argument("--oracle-members", type=int, default=1, help=argparse.SUPPRESS)

    c = sub.add_parser("gradcheck", help="central-difference check of every op and architecture")
    c.add_argument("--config", help=argparse.SUPPRESS)
    c.add_argument("--inject-fault", metavar="OP", help=argparse.SUPPRESS)
    return parser


COMMANDS = {
    "generate-synthetic": cmd_generate_synthetic,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, cfg)
    except CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RunoffBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
