"""Command line interface.

Commands: ``construct``, ``verify``, ``orbit``, ``solve-transitivity`` and
``report``. Exit codes: 0 pass, 1 check failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .manifest import ManifestError, dump_json, load_run, write_run

__all__ = ["main", "parse_point", "orbit_header"]

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
POINT_TOL = 1e-8


class UsageError(ValueError):
    pass


def parse_point(text: str) -> np.ndarray:
    """Parse ``"re:im,re:im,..."`` into a unit vector in ``C^d``.

    The norm must be 1 within ``1e-8``; the point is then renormalized.
    """
    try:
        coords = []
        for item in text.split(","):
            re, im = item.split(":") if ":" in item else (item, "0")
            coords.append(complex(float(re), float(im)))
    except ValueError as exc:
        raise UsageError(f"bad point spec {text!r}: expected re:im pairs") from exc
    z = np.array(coords)
    if len(z) < 2:
        raise UsageError("a point needs at least two complex coordinates")
    norm = float(np.linalg.norm(z))
    if not abs(norm - 1) <= POINT_TOL:
        raise UsageError(f"point {text!r} is not on the unit sphere (norm {norm:.12g})")
    return z / norm


def orbit_header(d: int) -> list:
    return ["step"] + [f"x_{k}" for k in range(1, 2 * d + 1)] + ["nearest_reference_distance"]


# ---------------------------------------------------------------- commands

def _manifest_file(arg: str) -> Path:
    path = Path(arg)
    return path / "manifest.json" if path.is_dir() else path


def _config(args) -> RunConfig:
    if args.config is None:
        cfg = RunConfig()
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_updates(seed=args.seed)
    return cfg


def cmd_construct(args) -> int:
    from .engine import StageFailure, run_outer_loop

    cfg = _config(args)
    out = Path(args.out or f"akc-run-{cfg.digest()[:12]}")
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    marks = []

    def progress(message: str) -> None:
        marks.append(time.perf_counter())
        print(message, file=sys.stderr)

    try:
        states = run_outer_loop(cfg, progress=progress)
    except StageFailure as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        print(dump_json(exc.diagnostic), file=sys.stderr)
        return EXIT_FAIL
    t1 = time.perf_counter()
    # one progress message opens each outer stage
    bounds = marks + [t1]
    timing = {"started": started, "finished": datetime.now(timezone.utc).isoformat(),
              "seconds": t1 - t0,
              "stage_seconds": [b - a for a, b in zip(bounds, bounds[1:])]}
    path = write_run(out, cfg, states, timing)
    print(path)
    failures = [f for st in states for f in st.failures]
    for f in failures:
        print(f"FAIL {f['where']}: {f['message']}", file=sys.stderr)
    return EXIT_PASS if not failures else EXIT_FAIL


def cmd_verify(args) -> int:
    from .verification import BATTERIES, run_battery

    if args.battery not in BATTERIES:
        raise UsageError(f"unknown battery {args.battery!r}; choose from {', '.join(BATTERIES)}")
    manifest = _manifest_file(args.manifest)
    run = load_run(manifest)
    report = run_battery(args.battery, run, seed=args.seed or 0)
    out = Path(args.out) if args.out else manifest.parent / f"verify_{args.battery}.json"
    if out.is_dir():
        out = out / f"verify_{args.battery}.json"
    out.write_text(report.to_json() + "\n")
    print(out)
    print(f"{args.battery}: {'PASS' if report.passed else 'FAIL'}", file=sys.stderr)
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_orbit(args) -> int:
    from .engine import orbit_points
    from .equidistribution import lebesgue_reference, to_real_coords

    if args.length < 1:
        raise UsageError("--length must be >= 1")
    manifest = _manifest_file(args.manifest)
    run = load_run(manifest)
    x = parse_point(args.point)
    d = run.config.d
    if len(x) != d:
        raise UsageError(f"point has {len(x)} coordinates, run has d={d}")
    orbit = orbit_points(run.chain, x, args.length, run.config.precision_bits)
    real = to_real_coords(orbit)
    dist, _ = lebesgue_reference(d).query(real)
    out = Path(args.out) if args.out else manifest.parent / "orbit.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(orbit_header(d))
        for i, (row, r) in enumerate(zip(real, dist), 1):
            w.writerow([i] + [format(v, ".17g") for v in row] + [format(r, ".17g")])
    print(out)
    return EXIT_PASS


def cmd_solve(args) -> int:
    from .transitivity import apply_moves, realize_point

    z = parse_point(args.point)
    target = parse_point(args.target)
    if len(z) != len(target):
        raise UsageError("point and target have different dimensions")
    moves = realize_point(z, target)
    end = apply_moves(moves, z)
    defect = float(np.max(np.abs(end - target)))
    doc = {"schema_version": 1, "d": len(z),
           "moves": [{"axis": str(a), "s": format(float(s), ".17g")} for a, s in moves],
           "endpoint": [[c.real, c.imag] for c in end], "defect": defect,
           "pass": defect <= 1e-6}
    text = dump_json(doc)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_PASS if defect <= 1e-6 else EXIT_FAIL


def cmd_report(args) -> int:
    manifest = _manifest_file(args.manifest)
    run = load_run(manifest)
    base = manifest.parent
    out = Path(args.out) if args.out else base / "report"
    out.mkdir(parents=True, exist_ok=True)
    m = run.manifest
    with open(out / "slots.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "l", "slot", "A", "degree", "alpha", "alpha_next", "eps",
                    "closeness", "closeness_budget", "closeness_overflow", "status"])
        for st in m["stages"]:
            names = [f for f in st["files"] if "/slot_" in f]
            for name in sorted(names, key=lambda f: int(f.rsplit("_", 1)[1].split(".")[0])):
                rec = json.loads((base / name).read_text())
                c = rec["closeness"]
                w.writerow([st["n"], rec["l"], rec["slot"], rec["A"], rec["degree"], rec["alpha"],
                            rec["alpha_next"], rec["eps"], c["value"], c["budget"],
                            c["overflow"], rec["status"]])
    with open(out / "points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "point", "case", "j", "orbit_length", "ud_pass", "ud_excess",
                    "cud_pass", "cud_ratio"])
        for st in m["stages"]:
            cert = json.loads((base / f"stage_{st['n']}/certification.json").read_text())
            for p in cert["points"]:
                w.writerow([st["n"], p["point"], p["dichotomy"].get("case"),
                            p["dichotomy"].get("j"), p["orbit_length"], p["ud_report"]["pass"],
                            p["ud_report"]["excess"], p["cud"]["pass"], p["cud"]["ratio"]])
    summary = {
        "schema_version": 1,
        "config_hash": m["config_hash"],
        "passed": m["passed"],
        "eps0": m["eps0"],
        "eps0_policy": m["eps0_policy"],
        "C0": m["C0"],
        "stages": [{"n": st["n"], "t_next": st["t_next"], "passed": st["passed"],
                    "failures": [f["where"] + ": " + f["message"] for f in st["failures"]]}
                   for st in m["stages"]],
    }
    (out / "summary.json").write_text(dump_json(summary))
    print(out)
    return EXIT_PASS if m["passed"] else EXIT_FAIL


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="akc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("construct", help="run the construction and write a manifest")
    c.add_argument("--config", help="key = value config file")
    c.add_argument("--seed", type=int, help="override the master seed")
    c.add_argument("--out", help="output directory")
    c.set_defaults(func=cmd_construct)

    v = sub.add_parser("verify", help="rerun a verification battery on a stored run")
    v.add_argument("manifest")
    v.add_argument("--battery", required=True)
    v.add_argument("--seed", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    o = sub.add_parser("orbit", help="dump an orbit of the final map as CSV")
    o.add_argument("manifest")
    o.add_argument("--point", required=True, help='"re:im,re:im,..."')
    o.add_argument("--length", type=int, required=True)
    o.add_argument("--out")
    o.set_defaults(func=cmd_orbit)

    s = sub.add_parser("solve-transitivity", help="move sequence from --point to --target")
    s.add_argument("--point", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("report", help="summary JSON and CSV tables of a stored run")
    r.add_argument("manifest")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # any other failure is a failed check, never a new exit code
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
