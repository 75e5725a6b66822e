"""Command-line entry point.

Subcommands:

* ``forward``: run the synthetic forward pipeline, write artifacts.
* ``verify``: run every verification suite, write a JSON report and the
  overlap-identity sweep CSV; nonzero exit on any failure.
* ``bench``: time the voxel-pooling implementations, write a CSV; output
  equality is asserted before any timing.
* ``gen-scene``: write the scene JSON document for (config, seed).

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O error. ``FRUSTUMOCC_THREADS`` is the fallback for ``--threads``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, load_config
from .lifting import BEVGridSpec, voxel_pool
from .pipeline import write_forward_artifacts
from .propagation import overlap_sweep
from .scenes import generate_scene, scene_to_json
from .verification import _random_pool_case, run_all

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frustumocc",
        description="Frustum instance-occupancy geometry engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("forward", "run the forward pipeline on a synthetic scene"),
        ("verify", "run all verification suites"),
        ("bench", "benchmark voxel pooling implementations"),
        ("gen-scene", "generate and write a scene document"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker thread count")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override, repeatable",
        )
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = str(args.out)
    threads = args.threads
    if threads is None:
        env = os.environ.get("FRUSTUMOCC_THREADS")
        if env is not None:
            try:
                threads = int(env)
            except ValueError as exc:
                raise ConfigError(f"FRUSTUMOCC_THREADS is not an integer: {env!r}") from exc
    if threads is not None:
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        updates["threads"] = threads
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def cmd_forward(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    result = write_forward_artifacts(cfg, out, threads=cfg.threads)
    losses = result["losses"]
    print(f"forward: wrote artifacts to {out}")
    print(
        "losses: depth={depth:.6g} occupancy={occupancy:.6g} "
        "detection_proxy={detection_proxy:.6g} total={total:.6g}".format(**losses)
    )
    return EXIT_OK


def _write_overlap_csv(path: Path, spacing_factor: float) -> None:
    rows = ["w,theta,D,bin_spacing,empirical,analytic,abs_error"]
    for s in overlap_sweep(spacing_factor=spacing_factor):
        cols = (s.width, s.theta_deg, s.lateral, s.spacing, s.empirical, s.analytic, s.abs_error)
        rows.append(",".join(repr(float(v)) for v in cols))
    path.write_text("\n".join(rows) + "\n")


def _jsonify(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def cmd_verify(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_all(cfg.verify, run_config=cfg)
    for res in results:
        print(res.summary())
    _write_overlap_csv(out / "overlap_sweep.csv", cfg.verify.overlap_spacing_factor)
    report = {
        "all_passed": all(bool(r.passed) for r in results),
        "results": [dataclasses.asdict(r) for r in results],
    }
    (out / "verify_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, default=_jsonify)
    )
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} suites passed; report in {out / 'verify_report.json'}")
    return EXIT_OK if report["all_passed"] else EXIT_VERIFY_FAILED


def _bench_once(volumes, spec: BEVGridSpec, method: str, repeats: int):
    best = np.inf
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = voxel_pool(volumes, spec, method=method)
        best = min(best, time.perf_counter() - t0)
    return result, best


def cmd_bench(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    b = cfg.bench
    spec = BEVGridSpec(-40.0, 40.0, -40.0, 40.0, 80.0 / b.cells, -1.0, 4.0)
    rng = np.random.Generator(np.random.Philox(key=np.array([cfg.seed, 77], dtype=np.uint64)))
    rows = ["impl,points,cells,ns_per_point,checksum"]
    speed: dict[tuple[str, int], float] = {}
    for n_points in b.sizes:
        volumes = [_random_pool_case(rng, n_points, b.channels)]
        n_actual = volumes[0][1].n_points
        # equality gate before any timing
        accums = {
            method: voxel_pool(volumes, spec, method=method).accum
            for method in ("loop", "scatter", "sorted")
        }
        for method in ("scatter", "sorted"):
            if not np.array_equal(accums["loop"], accums[method]):
                print(f"bench aborted: {method} output differs from loop at {n_actual} points")
                return EXIT_VERIFY_FAILED
        for method in ("loop", "scatter", "sorted"):
            repeats = 1 if method == "loop" else b.repeats
            result, seconds = _bench_once(volumes, spec, method, repeats)
            checksum = hashlib.sha256(result.accum.tobytes()).hexdigest()[:12]
            ns = seconds / n_actual * 1e9
            speed[(method, n_points)] = ns
            rows.append(f"{method},{n_actual},{b.cells * b.cells},{ns:.1f},{checksum}")
    (out / "bench.csv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))

    largest = max(b.sizes)
    speedup = speed[("loop", largest)] / speed[("sorted", largest)]
    print(f"sorted vs loop speedup at {largest} points: {speedup:.2f}x (gate {b.min_speedup}x)")
    if speedup < b.min_speedup:
        print("bench gate failed: optimized path slower than the reference")
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_gen_scene(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(cfg.scene, cfg.seed)
    path = out / "scene.json"
    path.write_text(scene_to_json(scene))
    print(f"wrote {path} ({len(scene.boxes)} boxes, {len(scene.cameras)} cameras)")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "forward":
            return cmd_forward(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        return cmd_gen_scene(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
