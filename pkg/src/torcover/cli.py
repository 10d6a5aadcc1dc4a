"""Command-line front end: ``torcover run <experiment> [flags]``.

Configuration is layered: built-in defaults, then the experiment's own
defaults, then an optional flat INI file (``--config``), then flags.  Sweep
parameters accept comma-separated lists.  Every run writes
``replicas.jsonl``, ``summary.json``, ``summary.csv`` and finally an
atomically replaced ``manifest.json`` with SHA-256 digests of the other
files.  A failed run leaves a ``FAILED`` marker instead.

Exit codes: 0 success, 1 invariant (or, with ``--strict``, acceptance band)
failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import os
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .experiments import REGISTRY, ConfigError, ExperimentConfig, get, run_experiment

THREADS_ENV = "TORCOVER_THREADS"
TUPLE_FIELDS = {"n": int, "gamma": float, "delta": float, "v": float, "beta": float}
SCALAR_FIELDS = {
    "alpha": float,
    "eta": float,
    "b": float,
    "replicas": int,
    "seed": int,
    "cap": int,
    "m0": int,
    "law_replicas": int,
    "window_replicas": int,
    "start": str,
    "radius": float,
    "distance": int,
    "c_boxes": float,
}
OUTPUT_FILES = ("replicas.jsonl", "summary.json", "summary.csv")


def _parse_value(key: str, text: str):
    text = text.strip()
    try:
        if key in TUPLE_FIELDS:
            return tuple(TUPLE_FIELDS[key](t) for t in text.split(",") if t.strip())
        if key == "cap" and text.lower() in ("", "none"):
            return None
        return SCALAR_FIELDS[key](text)
    except ValueError:
        raise ConfigError(f"cannot parse {key}={text!r}") from None


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` file; an optional single section header is ignored."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config file {path} does not parse: {e}") from None
    out = {}
    for section in parser.sections():
        for key, value in parser[section].items():
            key = key.replace("-", "_")
            if key not in TUPLE_FIELDS and key not in SCALAR_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _parse_value(key, value)
    return out


def build_config(name: str, file_values: dict, flag_values: dict) -> ExperimentConfig:
    values = dict(get(name).default_overrides)
    values.update(file_values)
    values.update(flag_values)
    return ExperimentConfig(**values)


def resolve_parallelism(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    return os.cpu_count() or 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torcover", description="Random walk cover-time laboratory on Z^2_n.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("experiment", choices=sorted(REGISTRY))
    run.add_argument("--config", help="flat key = value file")
    for key in list(TUPLE_FIELDS) + list(SCALAR_FIELDS):
        run.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="VALUE")
    run.add_argument("--parallelism", type=int, default=None)
    run.add_argument("--out", default="torcover-out", help="output directory")
    run.add_argument("--strict", action="store_true", help="acceptance-band failures also exit 1")
    sub.add_parser("list", help="list experiments")
    return p


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _csv_bytes(rows: list[dict]) -> bytes:
    head = ["parameter", "estimate", "ci_low", "ci_high"]
    extra = sorted({k for r in rows for k in r} - set(head))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=head + extra, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue().encode()


def render_outputs(name: str, cfg: ExperimentConfig, records: list[dict], result) -> dict[str, bytes]:
    replicas = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records).encode()
    checks = {k: {"passed": c.passed, "kind": c.kind, "detail": c.detail} for k, c in result.checks.items()}
    summary = {"experiment": name, "config": cfg.as_dict(), "summary": result.summary, "checks": checks}
    return {
        "replicas.jsonl": replicas,
        "summary.json": (json.dumps(summary, sort_keys=True, indent=1) + "\n").encode(),
        "summary.csv": _csv_bytes(result.rows),
    }


def execute(name: str, cfg: ExperimentConfig, out: Path, parallelism: int, strict: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    manifest_path = out / "manifest.json"
    for stale in (marker, manifest_path):
        if stale.exists():
            stale.unlink()
    started = datetime.now(timezone.utc).isoformat()
    try:
        records, result = run_experiment(name, cfg, parallelism)
        files = render_outputs(name, cfg, records, result)
        for fname, data in files.items():
            _write_atomic(out / fname, data)
    except ConfigError:
        raise
    except Exception:
        marker.write_text(traceback.format_exc())
        raise
    failed = [k for k, c in result.checks.items() if not c.passed and (strict or c.kind == "invariant")]
    manifest = {
        "experiment": name,
        "code_version": __version__,
        "config": cfg.as_dict(),
        "seed_spec": {
            "master_seed": cfg.seed,
            "experiment_ids": sorted({r["experiment_id"] for r in records}),
            "replica_indices": "0..replicas-1 per experiment id",
        },
        "parallelism": parallelism,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "digests": {f: _digest(d) for f, d in files.items()},
        "failed_checks": failed,
    }
    _write_atomic(manifest_path, (json.dumps(manifest, sort_keys=True, indent=1) + "\n").encode())
    for k, c in result.checks.items():
        print(f"{'PASS' if c.passed else 'FAIL'} [{c.kind}] {k}: {c.detail}")
    if failed:
        marker.write_text("failed checks: " + ", ".join(failed) + "\n")
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for name, exp in sorted(REGISTRY.items()):
            print(f"{name}: {(exp.__doc__ or '').strip().splitlines()[0]}")
        return 0
    try:
        file_values = read_config_file(args.config) if args.config else {}
        flags = {k: _parse_value(k, getattr(args, k)) for k in list(TUPLE_FIELDS) + list(SCALAR_FIELDS)
                 if getattr(args, k) is not None}
        cfg = build_config(args.experiment, file_values, flags)
        get(args.experiment).validate(cfg)
        parallelism = resolve_parallelism(args.parallelism)
        return execute(args.experiment, cfg, Path(args.out), parallelism, args.strict)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
