"""Finite inner induction and the outer approximation-by-conjugation loop.

Inner induction
    The ladder ``g_0 ... g_M`` (``M = 6d - 4``) is filled slot by slot,
    ``l = 0 ... M``. Slot ``l`` carries a twist of degree ``q_l`` (the
    denominator of ``alpha_l``), so ``g_l`` commutes with
    ``phi^{alpha_l}``. For each slot the amplitude ``A_l`` is the smallest
    power of two for which the circles through the test bases, pushed
    forward by ``G_l = g_0 ... g_l``, are distributed like the parameter
    torus ``phi, k_0, ..., k_l`` at their base. Then ``alpha_{l+1}`` is
    chosen so that ``f_l = G_l phi^{alpha_{l+1}} G_l^{-1}`` stays within the
    closeness budget of ``f_{l-1}``; for the last slot its denominator is
    also the orbit length and must pass the final distribution test.

Outer loop
    Stage ``n`` runs an inner induction starting from ``t_n`` and composes
    ``H_n = H_{n-1} h_n``, ``F_n = H_n phi^{t_{n+1}} H_n^{-1}``, then checks
    closeness to ``F_{n-1}`` and (C_0, 1/(j+1))-uniform distribution of
    orbit segments for every ``j <= n``.

Orbits through long twist chains are computed on the multiple-precision
path (``precision_bits``); a subset is recomputed at twice the precision as
a fidelity check.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .chain import ConjugatedChain, MapChain, format_real
from .config import RunConfig
from .equidistribution import (OrbitSample, test_CUD, test_transversal,
                               test_UD_along, to_real_coords, torus_cloud)
from .precision import cis, exact_turns, to_complex, to_mp, working_precision
from .sphere import format_rational, lebesgue_sample, sup_distance
from .translations import Axis, Invariant, TwistMap, check_commutation
from .transitivity import IntegrityError, dichotomy_eta, start_dichotomy

__all__ = [
    "Slot",
    "TwistLadder",
    "StageRecord",
    "StageFailure",
    "InnerResult",
    "ConstructionState",
    "build_ladder",
    "test_ensemble",
    "outer_ensemble",
    "rational_candidates",
    "closeness_powers",
    "choose_amplitude",
    "choose_next_rational",
    "run_inner_induction",
    "run_outer_loop",
    "approximate_start",
    "orbit_points",
]

log = logging.getLogger(__name__)

# bits kept in reserve when bounding the size of twist phases
GUARD_BITS = 96


class StageFailure(RuntimeError):
    """A search or check failed and the run was configured to abort."""

    def __init__(self, message: str, diagnostic: Optional[dict] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


def _seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------------------------------------- ladder

@dataclass
class Slot:
    """One rung ``g_l = k_l^{A_l * fn}`` of the ladder."""

    l: int
    axis: Axis
    fn_kind: str
    fn_j: int
    amplitude: Optional[float] = None
    degree: Optional[int] = None

    def twist(self) -> TwistMap:
        if self.amplitude is None or self.degree is None:
            raise ValueError(f"slot {self.l} is not set")
        return TwistMap(self.axis, self.amplitude, Invariant(self.fn_kind, self.fn_j, self.degree))

    def with_params(self, amplitude: float, degree: int) -> TwistMap:
        return TwistMap(self.axis, amplitude, Invariant(self.fn_kind, self.fn_j, degree))

    def label(self) -> str:
        return f"g{self.l}={self.axis}*{self.fn_kind}{self.fn_j}"


@dataclass
class TwistLadder:
    d: int
    slots: list

    @property
    def M(self) -> int:
        return len(self.slots) - 1

    def axes(self) -> list:
        return [s.axis for s in self.slots]

    def twists(self) -> list:
        """Twists ``g_0 ... g_M``; unset slots are None."""
        return [s.twist() if s.amplitude is not None and s.degree is not None else None
                for s in self.slots]

    def chain(self, upto: Optional[int] = None) -> MapChain:
        upto = self.M if upto is None else upto
        return MapChain(tuple(self.slots[l].twist() for l in range(upto + 1)))

    def to_list(self) -> list:
        return [{"l": s.l, "axis": str(s.axis), "fn": s.fn_kind, "j": s.fn_j,
                 "amplitude": None if s.amplitude is None else format_real(s.amplitude),
                 "degree": s.degree} for s in self.slots]

    @classmethod
    def from_list(cls, d: int, items: Sequence[dict]) -> "TwistLadder":
        slots = [Slot(int(x["l"]), Axis.parse(x["axis"]), x["fn"], int(x["j"]),
                      None if x["amplitude"] is None else float(x["amplitude"]),
                      None if x["degree"] is None else int(x["degree"])) for x in items]
        return cls(d, slots)


def build_ladder(d: int) -> TwistLadder:
    """Ladder of ``6d - 3`` slots with amplitudes and degrees unset.

    ``g_0 = xi_1 psi_2``, ``g_1 = tau_2 chi_2``, ``g_2 ... g_d = xi_j psi_1``,
    then two passes of ``tau_j chi_j, xi_j psi_1`` for ``j = 2 ... d`` (up to
    slot ``5d - 4``), the tail ``tau_d ... tau_2`` with ``chi_j`` and finally
    ``g_{6d-4} = xi_2 psi_1``.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    pattern = [(Axis("xi", 1), "psi", 2), (Axis("tau", 2), "chi", 2)]
    pattern += [(Axis("xi", j), "psi", 1) for j in range(2, d + 1)]
    block = []
    for j in range(2, d + 1):
        block += [(Axis("tau", j), "chi", j), (Axis("xi", j), "psi", 1)]
    pattern += block + block
    pattern += [(Axis("tau", j), "chi", j) for j in range(d, 1, -1)]
    pattern += [(Axis("xi", 2), "psi", 1)]
    assert len(pattern) == 6 * d - 3
    return TwistLadder(d, [Slot(l, a, k, j) for l, (a, k, j) in enumerate(pattern)])


# ---------------------------------------------------------------- ensembles

def test_ensemble(d: int, n_lebesgue: int, seed: int) -> tuple[np.ndarray, list]:
    """Base points: Lebesgue samples plus adversarial points.

    The adversarial points cover ``z_1 = 0``, ``z_1 = z_j``, ``z_j = 0`` and
    the boundary ``|z_1| = eta`` of the starting dichotomy (with points just
    inside and outside).
    """
    eta = dichotomy_eta(d)
    pts = [p for p in lebesgue_sample(n_lebesgue, seed, d)]
    labels = [f"lebesgue-{k}" for k in range(n_lebesgue)]

    def unit(v):
        v = np.asarray(v, dtype=complex)
        return v / np.linalg.norm(v)

    e = np.eye(d, dtype=complex)
    extra = [
        ("z1=0", e[1]),
        ("z1=0-phase", unit(np.r_[0, np.exp(0.7j), np.full(d - 2, 0.3)])),
        ("z2=0", e[0]),
    ]
    for j in range(2, d + 1):
        extra.append((f"z1=z{j}", unit(e[0] + e[j - 1])))
        extra.append((f"z1=-z{j}", unit(e[0] - e[j - 1])))
    for tag, r in (("eta", eta), ("eta-", eta * (1 - 1e-6)), ("eta+", eta * (1 + 1e-6))):
        v = np.zeros(d, dtype=complex)
        v[0] = r
        v[1] = np.sqrt(1 - r * r) * np.exp(0.3j)
        extra.append((tag, v))
    for tag, v in extra:
        pts.append(v)
        labels.append(tag)
    return np.array(pts), labels


def outer_ensemble(d: int, n_lebesgue: int, seed: int) -> tuple[np.ndarray, list]:
    """Points of X used for orbit checks in outer coordinates."""
    pts = [p for p in lebesgue_sample(n_lebesgue, seed, d)]
    labels = [f"x-lebesgue-{k}" for k in range(n_lebesgue)]
    e = np.eye(d, dtype=complex)
    for tag, v in (("x1=0", e[1]), ("x1=x2", (e[0] + e[1]) / np.sqrt(2)), ("x2=0", e[0])):
        pts.append(v)
        labels.append(tag)
    return np.array(pts), labels


def approximate_start(t0, tol: float) -> Fraction:
    """Smallest-denominator rational within ``tol`` of ``t0`` (in [0, 1))."""
    target = Fraction(t0)
    q = 1
    while True:
        p = round(target * q)
        cand = Fraction(p, q)
        if abs(cand - target) < tol:
            return cand % 1
        q += 1
        if q > 10 ** 7:
            return target.limit_denominator(10 ** 7) % 1


# ---------------------------------------------------------------- records

@dataclass
class StageRecord:
    """Parameters and verification outcomes of ladder slot ``l``."""

    l: int
    slot: str
    amplitude: float
    degree: int
    alpha: Fraction
    alpha_next: Fraction
    eps: float
    closeness: dict
    distribution: list
    transversality: list
    search: list
    commutation_defect: float
    status: str = "ok"
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "slot": self.slot,
            "A": format_real(self.amplitude),
            "degree": self.degree,
            "alpha": format_rational(self.alpha),
            "alpha_next": format_rational(self.alpha_next),
            "eps": format_real(self.eps),
            "closeness": self.closeness,
            "distribution": self.distribution,
            "transversality": self.transversality,
            "search": self.search,
            "commutation_defect": format_real(self.commutation_defect),
            "status": self.status,
            "failures": self.failures,
        }


@dataclass
class InnerResult:
    """Outcome of one inner induction."""

    ladder: TwistLadder
    alphas: list
    eps: list
    records: list
    chain: ConjugatedChain
    bases: np.ndarray
    labels: list
    final: dict
    failures: list

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def alpha_final(self) -> Fraction:
        return self.alphas[-1]


@dataclass
class ConstructionState:
    """Outer stage ``n``: ``F_n = H_n phi^{t_{n+1}} H_n^{-1}`` plus its (H_n) checks."""

    n: int
    H: MapChain
    t_next: Fraction
    inner: InnerResult
    closeness: dict
    cud_checks: list
    C0: float
    failures: list

    @property
    def F(self) -> ConjugatedChain:
        return ConjugatedChain(self.H, self.t_next)

    @property
    def passed(self) -> bool:
        return not self.failures


# ---------------------------------------------------------------- context

class InnerContext:
    """Mutable state of one inner induction (ladder, bases, caches)."""

    def __init__(self, cfg: RunConfig, alpha0: Fraction, stage: int = 0):
        self.cfg = cfg
        self.stage = stage
        self.d = cfg.d
        self.ladder = build_ladder(cfg.d)
        self.alphas = [Fraction(alpha0) % 1]
        self.eps0 = cfg.eps0
        self.eps = []
        self.bases, self.labels = test_ensemble(cfg.d, cfg.n_lebesgue, _seed(cfg.seed, stage, 1))
        with working_precision(cfg.precision_bits):
            self.bases_mp = to_mp(self.bases)
        self._cis_cache: dict = {}
        self._ref_cache: dict = {}
        self.priority = list(range(len(self.bases)))
        # (numerator step, length) of the certified final orbits; p = 1 means k/q order
        self.final_sampling = (1, None)
        self.records: list = []
        self.failures: list = []

    # -- helpers
    def fail(self, where: str, message: str, diagnostic: Optional[dict] = None) -> None:
        entry = {"where": where, "message": message}
        if diagnostic:
            entry["diagnostic"] = diagnostic
        self.failures.append(entry)
        log.warning("%s: %s", where, message)
        if self.cfg.on_failure == "abort":
            raise StageFailure(f"{where}: {message}", diagnostic)

    def _cis(self, n: int, p: int, length: int):
        key = (n, p, length)
        if key not in self._cis_cache:
            k = (np.arange(length, dtype=object) * p) % n
            self._cis_cache = {key: cis(exact_turns(k, n, np.empty(0, dtype=object)))}
        return self._cis_cache[key]

    def circle_points(self, idx: Sequence[int], n: int, p: int = 1,
                      length: Optional[int] = None):
        """mp array ``(len(idx) * length, d)`` of ``phi^{i p/n} zbar``, ``i < length``.

        With the defaults this is the full circle sample ``phi^{k/n} zbar``.
        """
        c = self._cis(n, p, n if length is None else length)
        blocks = [c[:, None] * self.bases_mp[i][None, :] for i in idx]
        return np.concatenate(blocks, axis=0)

    def reference(self, idx: int, l: int):
        key = (idx, l)
        if key not in self._ref_cache:
            if len(self._ref_cache) > 4 * len(self.bases):
                self._ref_cache.clear()
            cloud = torus_cloud(self.bases[idx], self.ladder.axes()[: l + 1], self.cfg.ref_size,
                                _seed(self.cfg.seed, self.stage, 2, l, idx))
            self._ref_cache[key] = (cloud, cKDTree(to_real_coords(cloud)))
        return self._ref_cache[key]

    def push(self, twists: Sequence[TwistMap], idx: Sequence[int], n: int, p: int = 1,
             length: Optional[int] = None) -> np.ndarray:
        """``g_0 ... g_l`` applied to the circle samples; complex (len(idx), length, d)."""
        chain = MapChain(tuple(twists))
        length = n if length is None else length
        with working_precision(self.cfg.precision_bits):
            pts = chain.apply(self.circle_points(idx, n, p, length))
            out = to_complex(pts)
        return out.reshape(len(idx), length, self.d)

    def ud_check(self, twists: Sequence[TwistMap], l: int, n: int, eps: float,
                 order: Sequence[int], early_exit: bool, keep: bool = False, p: int = 1,
                 length: Optional[int] = None):
        """UD-along test of the pushed circles for the bases in ``order``.

        Returns ``(passed, failed_indices, reports, orbits)``; with
        ``early_exit`` the scan stops at the first failing chunk.
        """
        dirs = self.ladder.axes()[: l + 1]
        failed, reports, orbits = [], {}, {}
        chunk = self.cfg.search_chunk
        for start in range(0, len(order), chunk):
            idx = list(order[start:start + chunk])
            pushed = self.push(twists, idx, n, p, length)
            for k, i in enumerate(idx):
                cloud, tree = self.reference(i, l)
                rep = test_UD_along(OrbitSample(pushed[k]), self.bases[i], dirs, eps,
                                    nballs=self.cfg.nballs,
                                    seed=_seed(self.cfg.seed, self.stage, 3, l, i),
                                    alpha=self.cfg.alpha_test, reference=cloud,
                                    reference_tree=tree)
                reports[i] = rep
                if keep:
                    orbits[i] = pushed[k]
                if not rep.passed:
                    failed.append(i)
            if failed and early_exit:
                return False, failed, reports, orbits
        return not failed, failed, reports, orbits


# ---------------------------------------------------------------- amplitude

def _phase_bits(slot: Slot, amplitude: float, degree: int) -> float:
    """log2 of the largest twist phase on the real sphere."""
    # sup |psi| = 1 and sup |chi| = 2^{q/2} on the real sphere
    sup_bits = 0.0 if slot.fn_kind == "psi" else degree / 2
    return math.log2(max(amplitude, 1e-300)) + sup_bits


def choose_amplitude(ctx: InnerContext, l: int, eps_l: float) -> tuple[float, dict]:
    """Doubling search ``A = 1, 2, 4, ...`` (capped) for slot ``l``.

    A candidate is accepted when, for every test base, the circle pushed by
    ``G_l`` passes :func:`test_UD_along` along ``phi, k_0 ... k_l`` at
    tolerance ``eps_l``. Candidates whose phase would exceed the working
    precision, or degrees above the cap, are refused. Slot-local
    transversality (whether the twist is triggered at all) is recorded for
    every base; it does not depend on ``A``.

    Returns the amplitude and a record with the search log and reports.
    """
    cfg = ctx.cfg
    slot = ctx.ladder.slots[l]
    q = ctx.alphas[l].denominator
    prefix = [ctx.ladder.slots[k].twist() for k in range(l)]
    info = {"search": [], "distribution": [], "transversality": [], "status": "ok"}

    m = slot.fn_j if slot.fn_kind == "psi" else (1, slot.fn_j)
    for i, z in enumerate(ctx.bases):
        rep = test_transversal(z, m, [slot.axis], nu=eps_l, C=cfg.transversal_C,
                               nsamples=4000, seed=_seed(cfg.seed, ctx.stage, 4, l, i))
        info["transversality"].append({"point": ctx.labels[i], "m": rep.params["m"],
                                       "dirs": rep.params["dirs"], "pass": rep.passed,
                                       "measure": rep.worst["measure"]})

    if q > cfg.degree_cap:
        ctx.fail(f"stage {ctx.stage} slot {l}", f"degree {q} exceeds degree cap {cfg.degree_cap}")
        info["status"] = "degree cap"
        return 0.0, info

    amplitude = 1.0
    accepted = None
    last_ok_guard = None
    best = None
    while amplitude <= cfg.amp_cap:
        if _phase_bits(slot, amplitude, q) > cfg.precision_bits - GUARD_BITS:
            info["search"].append({"A": format_real(amplitude), "pass": False,
                                   "reason": "phase exceeds working precision"})
            break
        last_ok_guard = amplitude
        twist = slot.with_params(amplitude, q)
        ok, failed, reports, _ = ctx.ud_check(prefix + [twist], l, cfg.search_samples, eps_l,
                                              ctx.priority, early_exit=True)
        info["search"].append({"A": format_real(amplitude), "pass": ok,
                               "failed": [ctx.labels[i] for i in failed]})
        if ok:
            accepted = amplitude
            best = reports
            break
        # hardest points first on the next candidate
        ctx.priority = failed + [i for i in ctx.priority if i not in failed]
        amplitude *= 2

    if accepted is None:
        fallback = last_ok_guard if last_ok_guard is not None else 0.0
        ctx.fail(f"stage {ctx.stage} slot {l}",
                 "amplitude search exhausted without passing the distribution test",
                 {"last": info["search"][-1] if info["search"] else None})
        info["status"] = "search exhausted"
        info["distribution"] = []
        return fallback, info

    for i in sorted(best):
        rep = best[i]
        info["distribution"].append({"point": ctx.labels[i], "pass": rep.passed,
                                     "excess": rep.worst["excess"],
                                     "failed_balls": rep.counts["failed_balls"]})
    return accepted, info


# ---------------------------------------------------------------- rationals

def rational_candidates(alpha: Fraction, policy: str = "multiple",
                        min_denominator: int = 1, cap: int = 10 ** 7):
    """Yield rationals ``p/q != alpha`` in [0, 1) with growing denominators.

    With ``policy = "multiple"`` the denominators are ``2 q_l, 4 q_l, 8 q_l, ...``
    (the ratio to ``q_l`` doubles); with ``"increment"`` they are
    ``q_l + 1, q_l + 2, q_l + 4, ...``. Denominators below ``min_denominator``
    are skipped. For each denominator the numerator closest to ``alpha q``
    that is coprime to ``q`` and does not reproduce ``alpha`` is used (ties
    go to the smaller numerator).
    """
    if policy not in ("multiple", "increment"):
        raise ValueError(f"unknown denominator policy {policy!r}")
    q0 = Fraction(alpha).denominator
    step = 1
    while True:
        q = q0 * 2 * step if policy == "multiple" else q0 + step
        step *= 2
        if q > cap:
            return
        if q < min_denominator:
            continue
        best = _nearest_numerator(alpha, q)
        if best is not None:
            yield best


def _nearest_numerator(alpha: Fraction, q: int) -> Optional[Fraction]:
    centre = alpha * q
    lo, hi = math.floor(centre), math.ceil(centre)
    for offset in range(q + 1):
        # candidates at this distance band, smaller numerator first on ties
        cands = sorted({lo - offset, hi + offset},
                       key=lambda p: (abs(p - centre), p))
        for p in cands:
            if 0 <= p < q and math.gcd(p, q) == 1 and Fraction(p, q) != alpha:
                return Fraction(p, q)
    return None


def closeness_powers(q: int, power_cap: int, n_random: int, seed: int) -> list:
    """Powers tested for closeness: ``1 ... min(q, cap)``, random ones up to ``q``, and ``q``."""
    powers = list(range(1, min(q, power_cap) + 1))
    if q > power_cap and n_random > 0:
        rng = np.random.default_rng(seed)
        powers += sorted(set(int(x) for x in rng.integers(power_cap + 1, q + 1, n_random)))
    if q not in powers:
        powers.append(q)
    return powers


def choose_next_rational(alpha: Fraction, conj: MapChain, previous: ConjugatedChain,
                         delta: float, budget: float, *, d: int = 2, power_cap: int = 10_000,
                         random_powers: int = 100, count: int = 64, seed: int = 0,
                         norm: str = "euclidean", denom_cap: int = 10 ** 7,
                         policy: str = "multiple",
                         min_denominator: Optional[int] = None,
                         orbit_check: Optional[Callable[[Fraction], bool]] = None,
                         max_denominator: Optional[int] = None) -> tuple[Fraction, dict]:
    """Pick ``alpha_{l+1}`` near ``alpha`` keeping ``f_l`` close to ``previous``.

    ``f_l = conj phi^{alpha'} conj^{-1}`` is compared with ``previous`` by
    sampled complex sup distance over the power set of
    :func:`closeness_powers`; a candidate passes when twice the estimate is
    below ``budget``. Candidates come from :func:`rational_candidates`; an
    optional ``orbit_check`` must also accept the candidate (used for the
    last slot, whose denominator is the certified orbit length).
    If the estimate overflows the closeness condition cannot be measured on
    this chain; the search then continues on the orbit check alone and the
    record says so.

    Returns the chosen rational and a record.
    """
    if not budget > 0:
        raise ValueError("closeness budget must be positive")
    cands = rational_candidates(alpha, policy, min_denominator or 1,
                                min(denom_cap, max_denominator or denom_cap))
    info = {"budget": budget, "tried": [], "overflow": False}
    first = None
    closeness_measurable = True
    for cand in cands:
        first = first or cand
        entry = {"alpha": format_rational(cand)}
        close_ok = None
        if closeness_measurable:
            powers = closeness_powers(cand.denominator, power_cap, random_powers,
                                      _seed(seed, cand.denominator))
            est = sup_distance(ConjugatedChain(conj, cand), previous, delta, count, seed, d=d,
                               powers=powers, norm=norm)
            entry.update(value=est.value, overflow=est.overflow, powers=len(powers))
            if est.overflow:
                closeness_measurable = False
                info["overflow"] = True
            close_ok = (not est.overflow) and 2 * est.value < budget
            entry["close"] = close_ok
        orbit_ok = True
        if orbit_check is not None:
            orbit_ok = orbit_check(cand)
            entry["orbit"] = orbit_ok
        info["tried"].append(entry)
        if orbit_ok and (close_ok or not closeness_measurable):
            info["chosen"] = format_rational(cand)
            info["closeness_met"] = bool(close_ok)
            info["exhausted"] = False
            return cand, info
    info["exhausted"] = True
    info["closeness_met"] = False
    if first is None and max_denominator is not None:
        # nothing fits below the orbit length cap: fall back to the smallest candidate
        first = next(rational_candidates(alpha, policy, min_denominator or 1, denom_cap), None)
    if first is None:
        raise StageFailure("no admissible rational below the denominator cap")
    info["chosen"] = format_rational(first)
    return first, info


# ---------------------------------------------------------------- inner induction

def _closeness_record(info: dict, budget: float) -> dict:
    chosen = next((t for t in info["tried"] if t["alpha"] == info["chosen"]), {})
    value = chosen.get("value", float("inf"))
    return {
        "value": None if value is None or not math.isfinite(value) else value,
        "budget": budget,
        "overflow": bool(chosen.get("overflow", info["overflow"])),
        "passed": bool(info["closeness_met"]),
        "powers": chosen.get("powers"),
        "candidates_tried": len(info["tried"]),
    }


def run_inner_induction(alpha0, cfg: RunConfig, stage: int = 0) -> InnerResult:
    """Fill the ladder for one outer stage, starting from ``alpha0``.

    Every check that fails is recorded in ``InnerResult.failures``; with
    ``on_failure = abort`` the first one raises :class:`StageFailure`.
    """
    ctx = InnerContext(cfg, Fraction(alpha0), stage)
    M = ctx.ladder.M
    previous = ConjugatedChain(MapChain(), ctx.alphas[0])
    final_orbits: dict = {}
    final_reports: dict = {}

    for l in range(M + 1):
        eps_l = ctx.eps0
        ctx.eps.append(eps_l)
        slot = ctx.ladder.slots[l]
        q_l = ctx.alphas[l].denominator
        A, ainfo = choose_amplitude(ctx, l, eps_l)
        slot.amplitude, slot.degree = float(A), q_l
        conj = ctx.ladder.chain(l)
        budget = ctx.eps0 / 2 ** (l + 2)
        seed_l = _seed(cfg.seed, stage, 5, l)

        orbit_check = None
        if l == M:
            twists = list(conj.factors)

            def orbit_check(cand: Fraction) -> bool:
                ok, failed, reports, orbits = ctx.ud_check(
                    twists, M, cand.denominator, eps_l, ctx.priority, early_exit=True, keep=True)
                if ok:
                    final_orbits.clear()
                    final_orbits.update(orbits)
                    final_reports.clear()
                    final_reports.update(reports)
                else:
                    ctx.priority = failed + [i for i in ctx.priority if i not in failed]
                return ok

        try:
            nxt, rinfo = choose_next_rational(
                ctx.alphas[l], conj, previous, cfg.delta, budget, d=cfg.d,
                power_cap=cfg.power_cap, random_powers=cfg.closeness_random_powers,
                count=cfg.closeness_samples, seed=seed_l, norm=cfg.ball_norm,
                denom_cap=cfg.denom_cap, policy=cfg.denominator_policy, min_denominator=cfg.orbit_min if l == M else None,
                orbit_check=orbit_check, max_denominator=cfg.orbit_max if l == M else None)
        except StageFailure as exc:
            ctx.fail(f"stage {stage} slot {l}", str(exc))
            raise StageFailure(str(exc), {"failures": ctx.failures}) from exc
        if rinfo["exhausted"]:
            what = "orbit length" if l == M else "closeness"
            ctx.fail(f"stage {stage} slot {l}", f"rational search exhausted ({what})")
        elif not rinfo["closeness_met"]:
            ctx.fail(f"stage {stage} slot {l}",
                     "closeness budget not met (sampled sup distance overflowed on B_delta)"
                     if rinfo["overflow"] else "closeness budget not met")
        ctx.alphas.append(nxt)
        with working_precision(cfg.precision_bits):
            comm = check_commutation(slot.twist(), ctx.alphas[l],
                                     lebesgue_sample(256, _seed(cfg.seed, stage, 15, l), cfg.d),
                                     precision_bits=cfg.precision_bits) if A > 0 else 0.0
        rec = StageRecord(
            l=l, slot=slot.label(), amplitude=float(A), degree=q_l, alpha=ctx.alphas[l],
            alpha_next=nxt, eps=eps_l, closeness=_closeness_record(rinfo, budget),
            distribution=ainfo["distribution"], transversality=ainfo["transversality"],
            search=ainfo["search"], commutation_defect=float(comm), status=ainfo["status"],
            failures=[f for f in ctx.failures if f["where"] == f"stage {stage} slot {l}"])
        ctx.records.append(rec)
        previous = ConjugatedChain(conj, nxt)
        log.info("stage %d slot %d: A=%s q=%d alpha_next=%s", stage, l, A, q_l, nxt)

    chain = ConjugatedChain(ctx.ladder.chain(), ctx.alphas[-1])
    if not final_orbits:
        # the orbit search never passed: certify an orbit prefix of the fallback rational
        a = ctx.alphas[-1]
        ctx.final_sampling = (a.numerator, min(a.denominator, cfg.orbit_min))
        ok, failed, reports, orbits = ctx.ud_check(list(chain.conj.factors), M, a.denominator,
                                                   ctx.eps[-1], list(range(len(ctx.bases))),
                                                   early_exit=False, keep=True,
                                                   p=ctx.final_sampling[0],
                                                   length=ctx.final_sampling[1])
        final_orbits.update(orbits)
        final_reports.update(reports)
    final = _certify(ctx, chain, final_orbits, final_reports)
    return InnerResult(ladder=ctx.ladder, alphas=list(ctx.alphas), eps=list(ctx.eps),
                       records=ctx.records, chain=chain, bases=ctx.bases, labels=ctx.labels,
                       final=final, failures=list(ctx.failures))


def _transversality_report(ctx: InnerContext, z: np.ndarray, i: int) -> list:
    """Propagated transversality clauses for one base (diagnostic only)."""
    cfg = ctx.cfg
    axes = ctx.ladder.axes()
    M = ctx.ladder.M
    out = []
    for l in range(1, M + 1):
        if l == M:
            m, dirs = (1, 2), [axes[M]]
        elif l == 1:
            m, dirs = 2, axes[1:]
        else:
            m, dirs = 1, axes[l:]
        rep = test_transversal(z, m, dirs, nu=ctx.eps[l], C=cfg.transversal_C, nsamples=4000,
                               seed=_seed(cfg.seed, ctx.stage, 6, l, i))
        out.append({"l": l, "m": rep.params["m"], "pass": rep.passed,
                    "measure": rep.worst["measure"]})
    return out


def _certify(ctx: InnerContext, chain: ConjugatedChain, orbits: dict, reports: dict) -> dict:
    """Final battery on the orbits of ``f_M`` through every test base."""
    cfg = ctx.cfg
    twists = ctx.ladder.twists()
    dirs = ctx.ladder.axes()
    q = chain.alpha.denominator
    generic = [i for i, s in enumerate(ctx.labels) if s.startswith("lebesgue")]

    # measured C_0: worst CUD ratio over generic orbits (separate ball seed)
    ratios = {}
    for i in generic:
        rep = test_CUD(OrbitSample(orbits[i]), 1e12, cfg.cud_eps, cfg.nballs,
                       seed=_seed(cfg.seed, ctx.stage, 7, i))
        ratios[i] = rep.worst["ratio"]
    worst = max(ratios.values()) if ratios else float("inf")
    C0 = 2 * worst

    points = []
    for i, z in enumerate(ctx.bases):
        try:
            case = start_dichotomy(z, twists)
            case_info = {"case": case.case, "j": case.j, "margin": case.margin}
        except IntegrityError as exc:
            case_info = {"case": None, "error": str(exc)}
            ctx.fail(f"stage {ctx.stage} dichotomy", f"{ctx.labels[i]}: {exc}")
        o = OrbitSample(orbits[i])
        ud = test_UD_along(o, z, dirs, cfg.eps_report, nballs=cfg.nballs,
                           seed=_seed(cfg.seed, ctx.stage, 8, i), alpha=cfg.alpha_test,
                           reference=ctx.reference(i, ctx.ladder.M)[0],
                           reference_tree=ctx.reference(i, ctx.ladder.M)[1])
        cud = test_CUD(o, C0, cfg.cud_eps, cfg.nballs, seed=_seed(cfg.seed, ctx.stage, 9, i))
        points.append({
            "point": ctx.labels[i],
            "base": [format_real(c) for x in z for c in (x.real, x.imag)],
            "dichotomy": case_info,
            "orbit_length": len(orbits[i]),
            "ud_engine": {"eps": ctx.eps[-1], "pass": reports[i].passed},
            "ud_report": {"eps": cfg.eps_report, "pass": ud.passed,
                          "excess": ud.worst["excess"], "failed_balls": ud.counts["failed_balls"]},
            "cud": {"C": C0, "eps": cfg.cud_eps, "pass": cud.passed, "ratio": cud.worst["ratio"]},
            "transversality": _transversality_report(ctx, z, i),
        })

    # fiber-orbit negative control: the unconjugated rotation orbit
    i0 = generic[0] if generic else 0
    n_fiber = len(orbits[i0])
    fiber = OrbitSample(np.asarray(ctx.bases[i0])[None, :] *
                        np.exp(2j * np.pi * np.arange(n_fiber) / q)[:, None])
    fiber_ud = test_UD_along(fiber, ctx.bases[i0], dirs, cfg.eps_report, nballs=cfg.nballs,
                             seed=_seed(cfg.seed, ctx.stage, 10), alpha=cfg.alpha_test,
                             reference=ctx.reference(i0, ctx.ladder.M)[0],
                             reference_tree=ctx.reference(i0, ctx.ladder.M)[1])
    fiber_cud = test_CUD(fiber, C0, cfg.cud_eps, cfg.nballs, seed=_seed(cfg.seed, ctx.stage, 11))

    fidelity = _fidelity(ctx, chain, orbits)
    periodicity = _periodicity(ctx, chain)
    if fidelity["max_defect"] > 1e-10:
        ctx.fail(f"stage {ctx.stage} fidelity",
                 f"orbit changes by {fidelity['max_defect']:.3g} at doubled precision")
    if periodicity > 1e-8:
        ctx.fail(f"stage {ctx.stage} periodicity", f"f_M^q defect {periodicity:.3g}")

    closeness_sum = sum((r.closeness["value"] if r.closeness["value"] is not None else math.inf)
                        for r in ctx.records)
    est = sup_distance(chain, ConjugatedChain(MapChain(), ctx.alphas[0]), cfg.delta,
                       cfg.closeness_samples, _seed(cfg.seed, ctx.stage, 12), d=cfg.d,
                       norm=cfg.ball_norm)
    return {
        "C0": C0,
        "C0_worst_ratio": worst,
        "orbit_length": q,
        "certified_length": len(orbits[i0]),
        "points": points,
        "fiber_control": {"ud_pass": fiber_ud.passed, "cud_pass": fiber_cud.passed},
        "fidelity": fidelity,
        "periodicity_defect": periodicity,
        "closeness_sum": closeness_sum if math.isfinite(closeness_sum) else None,
        "closeness_final": {"value": est.value if math.isfinite(est.value) else None,
                            "overflow": est.overflow, "count": est.count, "seed": est.seed},
        "eps0": ctx.eps0,
    }


def _fidelity(ctx: InnerContext, chain: ConjugatedChain, orbits: dict) -> dict:
    """Recompute a few orbit points at twice the precision."""
    cfg = ctx.cfg
    q = chain.alpha.denominator
    p, length = ctx.final_sampling
    length = q if length is None else length
    idx = sorted(orbits)[: cfg.fidelity_points]
    stride = max(1, length // 64)
    worst = 0.0
    with working_precision(2 * cfg.precision_bits):
        k = (np.arange(0, length, stride, dtype=object) * p) % q
        c = cis(exact_turns(k, q, np.empty(0, dtype=object)))
        for i in idx:
            pts = c[:, None] * to_mp(ctx.bases[i])[None, :]
            hi = to_complex(chain.conj.apply(pts))
            worst = max(worst, float(np.max(np.abs(hi - orbits[i][::stride]))))
    return {"points": len(idx), "stride": stride, "max_defect": worst,
            "precision_bits": cfg.precision_bits}


def _periodicity(ctx: InnerContext, chain: ConjugatedChain) -> float:
    """max |f_M^q(x) - x| over images x = G_M(zbar) of a few bases."""
    cfg = ctx.cfg
    q = chain.alpha.denominator
    with working_precision(cfg.precision_bits):
        z = to_mp(ctx.bases[: cfg.fidelity_points])
        x = chain.conj.apply(z)
        back = chain.apply(x, q)
        return float(np.max(np.abs(to_complex(back) - to_complex(x))))


# ---------------------------------------------------------------- outer loop

def orbit_points(F: ConjugatedChain, x: np.ndarray, length: int, bits: int) -> np.ndarray:
    """``F^i(x)`` for ``i = 1 ... length`` computed through one conjugacy."""
    return _orbit_segment(F, x, 1, length, bits)


def _orbit_segment(F: ConjugatedChain, x: np.ndarray, first: int, last: int,
                   bits: int) -> np.ndarray:
    with working_precision(bits):
        zbar = F.conj.inverse().apply(to_mp(np.asarray(x)[None, :]))[0]
        pts = F.orbit_from_base(zbar, np.arange(first, last + 1))
        return to_complex(pts)


def run_outer_loop(cfg: RunConfig, progress: Optional[Callable[[str], None]] = None) -> list:
    """Run ``cfg.N`` outer stages and check (H_n) after each one."""
    alpha = approximate_start(cfg.t0, cfg.eps0 / 2)
    H = MapChain()
    F_prev = ConjugatedChain(MapChain(), cfg.t0)
    states = []
    C0 = None
    lengths = []
    xs, xlabels = outer_ensemble(cfg.d, cfg.n_lebesgue, _seed(cfg.seed, 99))
    for n in range(cfg.N):
        if progress:
            progress(f"stage {n}: inner induction from {format_rational(alpha)}")
        inner = run_inner_induction(alpha, cfg, stage=n)
        failures = list(inner.failures)
        H = H.compose(inner.ladder.chain())
        t_next = inner.alpha_final
        F = ConjugatedChain(H, t_next)
        if C0 is None:
            C0 = inner.final["C0"]
        lengths.append(t_next.denominator)

        budget = cfg.eps / 2 ** n
        est = sup_distance(F, F_prev, cfg.delta, cfg.closeness_samples,
                           _seed(cfg.seed, n, 13), d=cfg.d, norm=cfg.ball_norm)
        close_ok = (not est.overflow) and est.value < budget
        closeness = {"value": est.value if math.isfinite(est.value) else None,
                     "overflow": est.overflow, "budget": budget, "pass": close_ok,
                     "count": est.count, "seed": est.seed}
        if not close_ok:
            msg = "|F_n - F_{n-1}| overflowed on B_delta" if est.overflow else \
                f"|F_n - F_(n-1)| = {est.value:.3g} exceeds {budget:.3g}"
            failures.append({"where": f"stage {n} (H_n) closeness", "message": msg})

        checks = []
        for k, x in enumerate(xs):
            orbit = np.empty((0, cfg.d), dtype=complex)
            for j in range(n + 1):
                found, tried = None, []
                L = cfg.cud_min_length
                while L < lengths[j] and L <= cfg.cud_max_length:
                    if len(orbit) < L:
                        # orbit prefixes are reused: extend by the missing steps only
                        orbit = np.vstack([orbit, _orbit_segment(F, x, len(orbit) + 1, L,
                                                                 cfg.precision_bits)])
                    rep = test_CUD(OrbitSample(orbit[:L]), C0, 1.0 / (j + 1), cfg.nballs,
                                   seed=_seed(cfg.seed, n, 14, j, k))
                    tried.append(L)
                    if rep.passed:
                        found = L
                        break
                    L *= 2
                checks.append({"point": xlabels[k], "j": j, "M_j": lengths[j],
                               "M_prime": found, "tried": tried, "pass": found is not None})
                if found is None:
                    failures.append({"where": f"stage {n} (H_n) distribution",
                                     "message": f"{xlabels[k]}: no orbit segment shorter than "
                                                f"M_{j}={lengths[j]} (searched up to "
                                                f"{cfg.cud_max_length}) is (C0, 1/{j + 1})-UD"})
        state = ConstructionState(n=n, H=H, t_next=t_next, inner=inner, closeness=closeness,
                                  cud_checks=checks, C0=C0, failures=failures)
        states.append(state)
        if failures and cfg.on_failure == "abort":
            raise StageFailure(f"(H_{n}) violated", {"failures": failures})
        F_prev = F
        alpha = t_next
    return states


# keep pytest from collecting the ensemble builder as a test function
test_ensemble.__test__ = False
