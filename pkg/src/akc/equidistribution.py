"""Statistical batteries for distribution properties of finite point sets.

Three tests are provided:

* :func:`test_CUD` compares orbit fractions in random chordal balls of
  radius ``eps`` with the ball's volume, which is estimated from a large
  cached Lebesgue reference cloud (factor ``C`` either way).
* :func:`test_UD_along` compares an orbit with the image of a parameter
  torus ``{phi^t k_0^{t_0} ... k_L^{t_L} y}`` through matched ball counts in
  the sphere (relative tolerance ``eps`` plus a Monte Carlo allowance).
* :func:`test_transversal` estimates the measure of the parameter set on
  which a coordinate nearly vanishes or nearly collides with another.

All reports are deterministic given the seeds.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import betainc
from scipy.stats import norm as normal

from .precision import to_complex
from .sphere import circle_action, lebesgue_sample
from .translations import Axis, axis_apply

__all__ = [
    "OrbitSample",
    "DistributionReport",
    "test_CUD",
    "test_UD_along",
    "test_transversal",
    "compare_clouds",
    "torus_cloud",
    "cap_measure",
    "lebesgue_reference",
    "cache_dir",
    "to_real_coords",
]

REFERENCE_SEED = 20240601


def to_real_coords(z: np.ndarray) -> np.ndarray:
    """Sphere points in C^d as rows of R^{2d} (x_1, x_2, ..., x_{2d})."""
    z = to_complex(z)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


@dataclass
class OrbitSample:
    """Finite point set with a free-form description of how it was produced."""

    points: np.ndarray
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = to_complex(np.atleast_2d(self.points))
        if len(self.points) == 0:
            raise ValueError("orbit sample is empty")
        err = np.abs(np.sum(np.abs(self.points) ** 2, axis=1) - 1)
        if np.max(err) > 1e-8:
            raise ValueError(f"orbit points off the sphere (defect {np.max(err):.3g})")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class DistributionReport:
    """Outcome of one battery.

    ``table`` holds one row per ball (or per condition for transversality);
    ``worst`` summarizes the row furthest from its defining inequality.
    """

    test: str
    params: dict
    passed: bool
    inconclusive: bool
    worst: dict
    counts: dict
    seeds: dict
    table: list = field(default_factory=list, repr=False)

    def to_dict(self, with_table: bool = False) -> dict:
        out = {
            "test": self.test,
            "params": self.params,
            "pass": bool(self.passed),
            "inconclusive": bool(self.inconclusive),
            "worst_ball": self.worst,
            "counts": self.counts,
            "seeds": self.seeds,
        }
        if with_table:
            out["table"] = self.table
        return out

    def to_json(self, with_table: bool = False) -> str:
        return json.dumps(self.to_dict(with_table), indent=2, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.table:
            return ""
        writer = csv.DictWriter(buf, fieldnames=list(self.table[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in self.table:
            writer.writerow(row)
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ---------------------------------------------------------------- references

def cache_dir() -> Path:
    root = os.environ.get("AKC_CACHE_DIR")
    path = Path(root) if root else Path.home() / ".cache" / "akc"
    path.mkdir(parents=True, exist_ok=True)
    return path


def default_reference_size(d: int) -> int:
    return max(100_000, 1_000_000 // 2 ** (d - 2))


@functools.lru_cache(maxsize=4)
def lebesgue_reference(d: int, size: Optional[int] = None) -> cKDTree:
    """KD-tree over a cached uniform cloud on S^{2d-1} (real coordinates)."""
    size = size or default_reference_size(d)
    path = cache_dir() / f"lebesgue_d{d}_n{size}_s{REFERENCE_SEED}.npy"
    if path.exists():
        pts = np.load(path)
    else:
        pts = to_real_coords(lebesgue_sample(size, REFERENCE_SEED, d))
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npy")
        np.save(tmp, pts)
        os.replace(tmp, path)
    return cKDTree(pts)


def cap_measure(d: int, radius) -> np.ndarray:
    """Normalized volume of a chordal ball of ``radius`` on S^{2d-1}.

    Uses the regularized incomplete beta function for spherical caps; this
    is the exact value that the reference cloud estimates.
    """
    n = 2 * d
    r = np.clip(np.asarray(radius, dtype=float), 0.0, 2.0)
    theta = 2 * np.arcsin(r / 2)
    half = 0.5 * betainc((n - 1) / 2, 0.5, np.sin(theta) ** 2)
    return np.where(theta <= np.pi / 2, half, 1 - half)


def torus_cloud(y: np.ndarray, dirs: Sequence[Axis], count: int, seed: int) -> np.ndarray:
    """Uniform sample of ``{phi^t k_0^{t_0} ... k_L^{t_L} y}`` over the parameter torus."""
    y = to_complex(np.asarray(y)).reshape(-1)
    rng = np.random.default_rng(seed)
    params = rng.random((count, len(dirs) + 1))
    cur = np.broadcast_to(y, (count, y.shape[0])).copy()
    for col in range(len(dirs) - 1, -1, -1):
        cur = axis_apply(dirs[col], params[:, col + 1], cur)
    return circle_action(params[:, 0], cur)


# ---------------------------------------------------------------- CUD

def test_CUD(o: OrbitSample, C: float, eps: float, nballs: int = 200, seed: int = 0,
             reference_size: Optional[int] = None) -> DistributionReport:
    """(C, eps)-uniform distribution: every ball fraction within a factor C of its volume.

    Balls have uniformly drawn centers and chordal radius ``eps``. Volumes
    come from the cached reference cloud; the report is inconclusive when
    the cloud's standard error exceeds ``(C - 1) lambda(B) / 10`` for some
    ball.
    """
    if C <= 1 or eps <= 0:
        raise ValueError("need C > 1 and eps > 0")
    d = o.dim
    ref = lebesgue_reference(d, reference_size)
    centers = to_real_coords(lebesgue_sample(nballs, seed, d))
    pts = to_real_coords(o.points)
    n_o = len(pts)
    n_r = ref.n
    frac = cKDTree(pts).query_ball_point(centers, eps, return_length=True) / n_o
    lam = ref.query_ball_point(centers, eps, return_length=True) / n_r
    se = np.sqrt(lam * (1 - lam) / n_r)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lam > 0, frac / lam, np.inf)
        spread = np.maximum(ratio, np.where(frac > 0, 1 / ratio, np.inf))
    ok = (frac > lam / C) & (frac < C * lam)
    k = int(np.argmax(spread))
    table = [
        {"ball": b, "radius": eps, "orbit_fraction": float(frac[b]),
         "expected_measure": float(lam[b]), "reference_se": float(se[b])}
        for b in range(nballs)
    ]
    return DistributionReport(
        test="CUD",
        params={"C": C, "eps": eps, "nballs": nballs},
        passed=bool(np.all(ok)),
        inconclusive=bool(np.any(se > (C - 1) * lam / 10)),
        worst={"center": centers[k].tolist(), "radius": eps,
               "orbit_fraction": float(frac[k]), "expected_measure": float(lam[k]),
               "ratio": float(spread[k])},
        counts={"orbit": n_o, "reference": n_r, "balls": nballs,
                "failed_balls": int(np.sum(~ok))},
        seeds={"centers": seed, "reference": REFERENCE_SEED},
        table=table,
    )


# ---------------------------------------------------------------- UD along

def compare_clouds(orbit: np.ndarray, reference: np.ndarray, eps: float, radius: float,
                   nballs: int, seed: int, alpha: float = 1e-3,
                   reference_tree: Optional[cKDTree] = None) -> dict:
    """Matched ball counts between two point sets on the sphere.

    Half of the ball centers are drawn from each set. A ball passes when the
    orbit fraction lies within ``(1 +- eps)`` times the reference fraction
    widened by ``delta = z sqrt(p (1 - p) (1/N_o + 1/N_r))``, where ``p`` is
    the pooled fraction and ``z`` the two-sided normal quantile at level
    ``alpha`` with a Bonferroni correction over balls.
    """
    a = to_real_coords(orbit)
    b = to_real_coords(reference)
    n_o, n_r = len(a), len(b)
    rng = np.random.default_rng(seed)
    half = nballs // 2
    centers = np.vstack([b[rng.integers(0, n_r, nballs - half)], a[rng.integers(0, n_o, half)]])
    tree_r = reference_tree if reference_tree is not None else cKDTree(b)
    f_o = cKDTree(a).query_ball_point(centers, radius, return_length=True) / n_o
    f_r = tree_r.query_ball_point(centers, radius, return_length=True) / n_r
    pooled = (f_o * n_o + f_r * n_r) / (n_o + n_r)
    zq = normal.ppf(1 - alpha / (2 * nballs))
    delta = zq * np.sqrt(pooled * (1 - pooled) * (1 / n_o + 1 / n_r))
    lo = (1 - eps) * f_r - delta
    hi = (1 + eps) * f_r + delta
    ok = (f_o > lo) & (f_o < hi)
    excess = np.maximum(f_o - hi, lo - f_o)
    k = int(np.argmax(excess))
    se_r = np.sqrt(f_r * (1 - f_r) / n_r)
    inconclusive = bool(np.median(se_r - eps * f_r / 4) > 0)
    return {
        "passed": bool(np.all(ok)),
        "inconclusive": inconclusive,
        "centers": centers,
        "f_o": f_o,
        "f_r": f_r,
        "delta": delta,
        "ok": ok,
        "worst": k,
        "excess": excess,
        "z": float(zq),
    }


def test_UD_along(o: OrbitSample, y: np.ndarray, dirs: Sequence[Axis], eps: float,
                  nballs: int = 200, seed: int = 0, radius: Optional[float] = None,
                  reference_size: int = 100_000, alpha: float = 1e-3,
                  reference: Optional[np.ndarray] = None,
                  reference_tree: Optional[cKDTree] = None) -> DistributionReport:
    """Proxy test of eps-uniform distribution along ``phi, k_0, ..., k_L`` at ``y``.

    The circle action always leads the direction list; ``dirs`` holds
    ``k_0 ... k_L``. A reference cloud of the parameter torus image is drawn
    (or passed in through ``reference``) and compared with the orbit by
    :func:`compare_clouds`. The default ball radius is ``2 pi eps`` (capped
    at 1): a parameter box of side ``eps`` moves a unit coordinate by about
    that much. ``reference_tree`` may carry a prebuilt KD-tree of the
    reference cloud in real coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    radius = float(min(2 * np.pi * eps, 1.0)) if radius is None else float(radius)
    ref_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])
    ball_seed = int(np.random.SeedSequence([seed, 2]).generate_state(1)[0])
    if reference is None:
        reference = torus_cloud(y, dirs, reference_size, ref_seed)
    res = compare_clouds(o.points, reference, eps, radius, nballs, ball_seed, alpha,
                         reference_tree=reference_tree)
    k = res["worst"]
    table = [
        {"ball": b, "radius": radius, "orbit_fraction": float(res["f_o"][b]),
         "reference_fraction": float(res["f_r"][b]), "allowance": float(res["delta"][b]),
         "ok": bool(res["ok"][b])}
        for b in range(nballs)
    ]
    return DistributionReport(
        test="UD_along",
        params={"eps": eps, "radius": radius, "dirs": ["phi"] + [str(a) for a in dirs],
                "base": to_complex(np.asarray(y)).reshape(-1).tolist(), "nballs": nballs,
                "alpha": alpha, "z": res["z"]},
        passed=res["passed"],
        inconclusive=res["inconclusive"],
        worst={"center": res["centers"][k].tolist(), "radius": radius,
               "orbit_fraction": float(res["f_o"][k]),
               "reference_fraction": float(res["f_r"][k]),
               "allowance": float(res["delta"][k]), "excess": float(res["excess"][k])},
        counts={"orbit": len(o), "reference": len(reference), "balls": nballs,
                "failed_balls": int(np.sum(~res["ok"]))},
        seeds={"seed": seed, "reference": ref_seed, "balls": ball_seed},
        table=table,
    )


# ---------------------------------------------------------------- transversality

def test_transversal(z: np.ndarray, m, dirs: Sequence[Axis], nu: float, C: float = 10.0,
                     nsamples: int = 20_000, seed: int = 0) -> DistributionReport:
    """Monte Carlo check of ``(m; a_1, ..., a_s; nu)``-transversality.

    For a single index ``m`` the bad sets are
    ``{t : |lam y_i - y_m| < nu}`` for every ``i != m`` and ``lam`` in
    ``{0, 1}``, where ``y = a_1^{t_1} ... a_s^{t_s} z``. For a pair
    ``m = (1, j)`` the single bad set is ``{t : |y_j - y_1| < nu}``. The test
    passes when every estimated measure is below ``C nu`` plus three
    binomial standard errors.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    z = to_complex(np.asarray(z)).reshape(-1)
    d = z.shape[0]
    rng = np.random.default_rng(seed)
    params = rng.random((nsamples, len(dirs)))
    y = np.broadcast_to(z, (nsamples, d)).copy()
    for col in range(len(dirs) - 1, -1, -1):
        y = axis_apply(dirs[col], params[:, col], y)

    rows = []
    if isinstance(m, (tuple, list)):
        a, b = m
        est = float(np.mean(np.abs(y[:, b - 1] - y[:, a - 1]) < nu))
        rows.append({"i": b, "m": a, "lam": 1, "measure": est})
        label = [int(a), int(b)]
    else:
        for i in range(1, d + 1):
            if i == m:
                continue
            for lam in (0, 1):
                est = float(np.mean(np.abs(lam * y[:, i - 1] - y[:, m - 1]) < nu))
                rows.append({"i": i, "m": m, "lam": lam, "measure": est})
        label = int(m)
    bound = C * nu
    allowance = 3 * np.sqrt(min(bound, 1.0) * max(1 - bound, 0.0) / nsamples)
    for row in rows:
        row["ok"] = row["measure"] < bound + allowance
        row["ratio"] = row["measure"] / nu
    worst = max(rows, key=lambda r: r["measure"])
    return DistributionReport(
        test="transversal",
        params={"m": label, "dirs": [str(a) for a in dirs], "nu": nu, "C": C},
        passed=all(r["ok"] for r in rows),
        inconclusive=bool(bound + allowance >= 1.0),
        worst=dict(worst),
        counts={"samples": nsamples, "conditions": len(rows)},
        seeds={"seed": seed},
        table=rows,
    )


# keep pytest from collecting the public batteries as test functions
test_CUD.__test__ = False
test_UD_along.__test__ = False
test_transversal.__test__ = False
