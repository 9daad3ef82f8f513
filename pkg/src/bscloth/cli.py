"""``bscloth`` command line: simulate, benchmark, check, export."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .io import MetricsWriter, load_snapshot, save_snapshot, world_obj_parts, write_obj
from .runtime import StepFailure, World, step
from .scene import BUILTIN, ConfigError, SceneConfig, builtin_scene

log = logging.getLogger("bscloth")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def load_scene(spec: str, overrides: list[str] | None = None) -> SceneConfig:
    """``builtin:NAME`` or a path to a JSON scene file."""
    if spec.startswith("builtin:"):
        cfg = builtin_scene(spec.split(":", 1)[1])
    else:
        cfg = SceneConfig.load(spec)
    return cfg.with_overrides(overrides) if overrides else cfg


def _versions() -> dict:
    from .kernels import BACKEND
    from .solver import _cholmod

    return {"bscloth": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "kernels": BACKEND,
            "direct_solver": "cholmod" if _cholmod is not None else "splu"}


def simulate(scene: str, out: str | None = None, frames: int | None = None, workers: int = 1,
             deterministic: bool = False, overrides: list[str] | None = None) -> int:
    try:
        cfg = load_scene(scene, overrides)
        world = World(cfg, workers=workers, deterministic=deterministic)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    out_dir = Path(out or cfg.output.dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        log.error("cannot create output directory %s: %s", out_dir, e)
        return EXIT_CONFIG
    n_frames = cfg.frames if frames is None else frames
    cadence = max(1, cfg.output.cadence)
    totals = {"iterations": 0, "pf_triggers": 0, "pf_accepted": 0}
    t0 = time.perf_counter()
    write_obj(out_dir / "frame_00000.obj", world_obj_parts(world))
    status, error = "ok", None
    with MetricsWriter(out_dir / "metrics.csv", deterministic) as mw:
        for _ in range(n_frames):
            try:
                rep = step(world)
            except StepFailure as e:
                log.error("%s", e)
                status, error = "failed", str(e)
                break
            mw.write(world.frame, rep)
            totals["iterations"] += rep.iterations
            totals["pf_triggers"] += rep.pf_triggers
            totals["pf_accepted"] += rep.pf_accepted
            if world.frame % cadence == 0:
                write_obj(out_dir / f"frame_{world.frame:05d}.obj", world_obj_parts(world))
    save_snapshot(out_dir / "state.bscs", world)
    report = {
        "status": status,
        "error": error,
        "config": cfg.to_dict(),
        "versions": _versions(),
        "frames": world.frame,
        "time": world.time,
        "totals": {**totals, "wall_s": 0.0 if deterministic else time.perf_counter() - t0},
        "workers": workers,
        "deterministic": deterministic,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if status == "ok" else EXIT_SOLVER


def benchmark(name: str, resolutions: list[int] | None = None, workers: int = 1,
              deterministic: bool = False, stream=None) -> int:
    from .benchmarks import run_benchmark, to_csv

    try:
        rows = run_benchmark(name, resolutions, workers=workers, deterministic=deterministic)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except StepFailure as e:
        log.error("%s", e)
        return EXIT_SOLVER
    if deterministic:
        for r in rows:
            r["wall_s"] = 0.0
    (stream or sys.stdout).write(to_csv(rows))
    return EXIT_OK


def check(suite: str, stream=None) -> int:
    from .checks import run_suite

    stream = stream or sys.stdout
    results = run_suite(suite)
    for r in results:
        stream.write(r.to_json() + "\n")
    return EXIT_OK if all(r.passed for r in results) else 1


def export(snapshot: str, out: str) -> int:
    from .io import SnapshotError

    try:
        world = load_snapshot(snapshot)
    except (SnapshotError, ConfigError, OSError) as e:
        log.error("%s", e)
        return EXIT_CONFIG
    write_obj(out, world_obj_parts(world))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .benchmarks import DEFAULT_RESOLUTIONS
    from .checks import SUITES

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=1, help="assembly worker threads")
    common.add_argument("--deterministic", action="store_true",
                        help="fixed reduction order and zeroed timings for byte-identical outputs")

    p = argparse.ArgumentParser(prog="bscloth", description=__doc__)
    p.add_argument("--version", action="version", version=f"bscloth {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a scene and write OBJ frames and metrics")
    s.add_argument("scene", help=f"scene JSON path or builtin:NAME ({', '.join(sorted(BUILTIN))})")
    s.add_argument("--out", help="output directory (default: scene output.dir)")
    s.add_argument("--frames", type=int, help="override the scene frame count")
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dot-path override, value parsed as JSON (repeatable)")

    b = sub.add_parser("benchmark", parents=[common], help="convergence table as CSV")
    b.add_argument("name", choices=sorted(DEFAULT_RESOLUTIONS))
    b.add_argument("--resolutions", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated control-point resolutions")

    c = sub.add_parser("check", parents=[common], help="verification suite, one JSON line per property")
    c.add_argument("suite", choices=sorted(SUITES))

    e = sub.add_parser("export", parents=[common], help="snapshot to OBJ")
    e.add_argument("snapshot")
    e.add_argument("--out", required=True, help="OBJ path")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("BSCLOTH_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return simulate(args.scene, args.out, args.frames, args.workers, args.deterministic, args.override)
    if args.command == "benchmark":
        return benchmark(args.name, args.resolutions, args.workers, args.deterministic)
    if args.command == "check":
        return check(args.suite)
    return export(args.snapshot, args.out)


if __name__ == "__main__":
    sys.exit(main())
