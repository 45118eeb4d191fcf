"""Run persistence: manifest, stage records and the serialized map chain.

Layout of an output directory::

    manifest.json                 config, hashes, per-stage summaries, pass/fail
    chain.json                    F_N = H_N phi^{t_{N+1}} H_N^{-1} and per-stage ladders
    stage_<n>/slot_<l>.json       StageRecord of slot l in outer stage n
    stage_<n>/certification.json  final orbit battery of the inner induction
    stage_<n>/outer_checks.json   closeness and distribution checks of (H_n)
    run_log.json                  wall-clock timestamps and durations

Everything except ``run_log.json`` is a deterministic function of the
configuration, so reruns with the same seed give byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .chain import ConjugatedChain, MapChain
from .config import SCHEMA_VERSION, RunConfig, parse_config
from .engine import TwistLadder
from .sphere import format_rational, parse_rational

__all__ = ["RunData", "write_run", "load_run", "clean_json", "dump_json", "ManifestError",
           "module_versions"]


class ManifestError(RuntimeError):
    """Missing or inconsistent run files."""


def clean_json(obj):
    """Convert numpy scalars, tuples and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Fraction):
        return format_rational(obj)
    return obj


def dump_json(obj) -> str:
    return json.dumps(clean_json(obj), indent=2, sort_keys=True) + "\n"


def _write(path: Path, obj) -> str:
    text = dump_json(obj)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def module_versions() -> dict:
    import gmpy2
    import scipy

    return {"akc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "gmpy2": gmpy2.version(), "python": platform.python_version()}


@dataclass
class RunData:
    """A reloaded run: enough to rebuild and re-verify the final map."""

    config: RunConfig
    manifest: dict
    ladders: list
    alphas: list
    chain: ConjugatedChain
    C0: float

    @property
    def twists(self) -> list:
        return [ladder.chain().factors for ladder in self.ladders]


def write_run(out: Path, cfg: RunConfig, states: list, timing: Optional[dict] = None) -> Path:
    """Write all run files below ``out`` and return the manifest path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stages = []
    for st in states:
        inner = st.inner
        sdir = f"stage_{st.n}"
        files = {}
        for rec in inner.records:
            name = f"{sdir}/slot_{rec.l}.json"
            files[name] = _write(out / name, {"schema_version": SCHEMA_VERSION, "stage": st.n,
                                              **rec.to_dict()})
        name = f"{sdir}/certification.json"
        files[name] = _write(out / name, {"schema_version": SCHEMA_VERSION, "stage": st.n,
                                          **inner.final})
        name = f"{sdir}/outer_checks.json"
        files[name] = _write(out / name, {"schema_version": SCHEMA_VERSION, "stage": st.n,
                                          "closeness": st.closeness, "cud": st.cud_checks})
        stages.append({
            "n": st.n,
            "t_next": format_rational(st.t_next),
            "alphas": [format_rational(a) for a in inner.alphas],
            "eps": inner.eps,
            "amplitudes": [rec.to_dict()["A"] for rec in inner.records],
            "C0": inner.final["C0"],
            "closeness": st.closeness,
            "cud_pass": all(c["pass"] for c in st.cud_checks),
            "failures": st.failures,
            "passed": st.passed,
            "files": files,
        })
    final = states[-1]
    chain_doc = {
        "schema_version": SCHEMA_VERSION,
        "d": cfg.d,
        "F": final.F.to_dict(),
        "ladders": [st.inner.ladder.to_list() for st in states],
        "alphas": [[format_rational(a) for a in st.inner.alphas] for st in states],
    }
    chain_hash = _write(out / "chain.json", chain_doc)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "eps0": cfg.eps0,
        "eps0_policy": cfg.eps0_policy,
        "versions": module_versions(),
        "chain_file": "chain.json",
        "chain_sha256": chain_hash,
        "C0": states[0].C0,
        "stages": stages,
        "run_log": "run_log.json",
        "passed": all(st.passed for st in states),
        "failure_count": sum(len(st.failures) for st in states),
    }
    path = out / "manifest.json"
    _write(path, manifest)
    if timing is not None:
        _write(out / "run_log.json", {"schema_version": SCHEMA_VERSION, **timing})
    return path


def load_run(path) -> RunData:
    """Reload a run from its manifest (or the directory holding it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError("unsupported manifest schema version")
    cfg_text = "".join(f"{k} = {v}\n" for k, v in manifest["config"].items())
    cfg = parse_config(cfg_text)
    if cfg.digest() != manifest["config_hash"]:
        raise ManifestError("config hash mismatch")
    chain_path = path.parent / manifest["chain_file"]
    try:
        text = chain_path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read chain file: {exc}") from exc
    if hashlib.sha256(text.encode()).hexdigest() != manifest["chain_sha256"]:
        raise ManifestError("chain file hash mismatch")
    doc = json.loads(text)
    ladders = [TwistLadder.from_list(doc["d"], items) for items in doc["ladders"]]
    alphas = [[parse_rational(a) for a in al] for al in doc["alphas"]]
    chain = ConjugatedChain.from_dict(doc["F"])
    # the stored chain must be the composition of the stored ladders
    rebuilt = MapChain()
    for ladder in ladders:
        rebuilt = rebuilt.compose(ladder.chain())
    if rebuilt.to_list() != chain.conj.to_list():
        raise ManifestError("chain does not match the stored ladders")
    return RunData(cfg, manifest, ladders, alphas, chain, float(manifest["C0"]))
