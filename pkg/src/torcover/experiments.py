"""Named experiments: configuration, per-replica measurement and reduction.

Every experiment splits into independent work items ``(experiment_id, n,
replica_index)``.  Each item draws all of its randomness from its own
:class:`~torcover.rng.SeedSpec`, so results do not depend on how items are
scheduled.  Parameters that define nested events (``gamma``, ``beta``,
``delta``, ``v``) are evaluated on the same replica, which turns the
monotonicity claims into per-replica assertions.

Reducers return a :class:`Result` holding a summary dictionary, plot-ready
rows and named checks.  ``invariant`` checks are deterministic given the
construction and must never fail; ``band`` checks compare Monte Carlo
estimates with desk-scale acceptance bands.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .harmonic import default_anchor, entrance_law_exact, flatness, reference_laws
from .lattice import AnnulusFamily, Region, Site, ball, box, box_side, disc, tile_boxes
from .rng import SeedSpec
from .slt import (
    CouplingReport,
    PoissonField,
    SoftLocalTime,
    check_U_event,
    count_N,
    ratio_bound_holds,
    reference_vector,
    simulate_independent_via_slt,
    verify_inclusions,
)
from .stats import (
    Proportion,
    SummaryStats,
    chi2_goodness,
    chi2_homogeneity,
    ks_exponential,
    nondecreasing,
    nonincreasing,
)
from .walk import CoverState, Walk, WalkTruncated, default_cap

FOUR_OVER_PI = 4 / math.pi
TRUNCATION_LIMIT = 0.01
EPS = 1e-9


class ConfigError(ValueError):
    """A parameter lies outside the domain of the requested experiment."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters shared by all experiments.

    Tuple-valued fields are sweeps.  ``n`` sweeps produce independent runs
    per side length; ``gamma``, ``beta``, ``delta`` and ``v`` sweeps are
    evaluated on shared replicas.
    """

    n: tuple[int, ...] = (32,)
    gamma: tuple[float, ...] = (0.5,)
    alpha: float = 0.8
    eta: float = 0.125
    delta: tuple[float, ...] = (0.3,)
    v: tuple[float, ...] = (0.5,)
    b: float = 0.0625
    beta: tuple[float, ...] = (0.5,)
    replicas: int = 100
    seed: int = 0
    cap: int | None = None
    m0: int = 20
    law_replicas: int = 0
    window_replicas: int = 0
    start: str = "uniform"
    radius: float = 2.0
    distance: int = 6
    c_boxes: float = 0.1

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------- geometry


def margin(n: int, alpha: float, eta: float) -> int:
    """``floor(eta n^alpha)``."""
    return math.floor(eta * n**alpha + EPS)


def s_n(n: int, alpha: float) -> float:
    """Side of the auxiliary torus, ``n / floor(n^(1-alpha))``."""
    return n / math.floor(n ** (1 - alpha) + EPS)


def ell_n(n: int, alpha: float, eta: float) -> int:
    """``2 floor(eta n^alpha) + floor(n^alpha)``."""
    return 2 * margin(n, alpha, eta) + box_side(n, alpha)


def r_n(n: int, gamma: float, alpha: float) -> float:
    """Per-box time budget ``(4 gamma / pi) n^(2 alpha) ln^2 n`` (``ln`` of the big torus)."""
    return FOUR_OVER_PI * gamma * n ** (2 * alpha) * math.log(n) ** 2


def cover_threshold(n: int, gamma: float) -> int:
    return math.floor(FOUR_OVER_PI * gamma * n * n * math.log(n) ** 2)


def hit_threshold(n: int, beta: float) -> int:
    return math.floor(2 / math.pi * beta * n * n * math.log(n) ** 2)


def hit_mean_reference(n: int) -> float:
    return 2 / math.pi * n * n * math.log(n)


# ---------------------------------------------------------------- results


@dataclass
class Check:
    passed: bool
    kind: str  # "invariant" or "band"
    detail: str = ""


@dataclass
class Result:
    experiment: str
    summary: dict
    rows: list[dict] = field(default_factory=list)
    checks: dict[str, Check] = field(default_factory=dict)

    def check(self, name: str, passed: bool, kind: str, detail: str = "") -> None:
        self.checks[name] = Check(bool(passed), kind, detail)

    @property
    def invariants_hold(self) -> bool:
        return all(c.passed for c in self.checks.values() if c.kind == "invariant")

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks.values())


def _record(exp_id: str, index: int, n: int, quantity: str, value, truncated: bool = False, **extra) -> dict:
    rec = {
        "experiment_id": exp_id,
        "replica_index": index,
        "n": n,
        "quantity": quantity,
        "value": value,
        "truncated": truncated,
    }
    rec.update(extra)
    return rec


def _row(parameter: str, estimate, ci_low=None, ci_high=None, **extra) -> dict:
    row = {"parameter": parameter, "estimate": estimate, "ci_low": ci_low, "ci_high": ci_high}
    row.update(extra)
    return row


def _by_n(records: list[dict]) -> dict[int, list[dict]]:
    out: dict[int, list[dict]] = {}
    for r in records:
        out.setdefault(r["n"], []).append(r)
    return out


def _truncation_check(res: Result, n: int, recs: list[dict]) -> None:
    t = sum(r["truncated"] for r in recs)
    res.check(
        f"truncation_n{n}",
        t <= TRUNCATION_LIMIT * len(recs),
        "invariant",
        f"{t} of {len(recs)} replicas truncated",
    )


def _median_ci(values: np.ndarray, confidence: float = 0.95) -> tuple[float, float]:
    from scipy.stats import binom

    v = np.sort(values)
    N = v.size
    lo = int(binom.ppf((1 - confidence) / 2, N, 0.5))
    hi = int(binom.isf((1 - confidence) / 2, N, 0.5))
    return float(v[max(lo - 1, 0)]), float(v[min(hi, N - 1)])


# ---------------------------------------------------------------- base


class Experiment:
    """One named experiment; subclasses fill in the three hooks."""

    name = ""
    default_overrides: dict = {}

    def validate(self, cfg: ExperimentConfig) -> None:
        if cfg.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        for n in cfg.n:
            if n < 2:
                raise ConfigError("n must be >= 2")
        if cfg.cap is not None and cfg.cap <= 0:
            raise ConfigError("cap must be positive")

    def items(self, cfg: ExperimentConfig) -> list[tuple[str, int, int]]:
        return [(f"{self.name}:n={n}", n, i) for n in cfg.n for i in range(cfg.replicas)]

    def replica(self, cfg: ExperimentConfig, exp_id: str, n: int, index: int) -> dict:
        raise NotImplementedError

    def reduce(self, cfg: ExperimentConfig, records: list[dict]) -> Result:
        raise NotImplementedError

    @staticmethod
    def rng(cfg: ExperimentConfig, exp_id: str, index: int) -> np.random.Generator:
        return SeedSpec(cfg.seed, exp_id, index).generator()


def _start(cfg: ExperimentConfig, n: int):
    if cfg.start == "uniform":
        return "uniform"
    if cfg.start == "far":
        return Site(n // 2, n // 2)
    raise ConfigError("start must be 'uniform' or 'far'")


def _censored_cover(n: int, start, horizon: int, rng: np.random.Generator) -> int | None:
    """Cover time if it is at most ``horizon``, else ``None``."""
    walk = Walk(n, start, rng)
    state = CoverState(walk)
    state.advance_to(horizon)
    return walk.time if state.covered else None


# ---------------------------------------------------------------- cover


class CoverScaling(Experiment):
    """Distribution of ``T_cov / (n^2 ln^2 n)``, with ``4/pi`` as the target."""

    name = "cover"
    band = (0.4, 1.3)
    band_n = 128

    def validate(self, cfg):
        super().validate(cfg)
        if cfg.replicas < 30:
            raise ConfigError("cover needs replicas >= 30")
        if min(cfg.n) < 3:
            raise ConfigError("cover needs n >= 3 so that ln^2 n is not degenerate")

    def replica(self, cfg, exp_id, n, index):
        from .walk import cover_time

        rng = self.rng(cfg, exp_id, index)
        try:
            t = cover_time(_start(cfg, n), n, cfg.cap, rng)
        except WalkTruncated as e:
            return _record(exp_id, index, n, "cover_time", None, True, uncovered=e.uncovered)
        return _record(exp_id, index, n, "cover_time", t)

    def reduce(self, cfg, records):
        res = Result(self.name, {"target": FOUR_OVER_PI, "per_n": {}})
        medians = []
        for n, recs in sorted(_by_n(records).items()):
            _truncation_check(res, n, recs)
            times = np.array([r["value"] for r in recs if not r["truncated"]], dtype=float)
            ratios = times / (n * n * math.log(n) ** 2)
            st = SummaryStats.of(f"cover:n={n}", ratios, len(recs) - times.size)
            lo, hi = _median_ci(ratios)
            res.summary["per_n"][str(n)] = st.as_dict() | {"median_ci": [lo, hi]}
            res.rows.append(_row(f"n={n}", st.median, lo, hi, n=n, quantity="median_ratio"))
            res.check(f"visits_every_site_n{n}", bool(np.all(times >= n * n - 1)), "invariant")
            medians.append(st.median)
            if n == self.band_n:
                res.check(
                    f"median_in_band_n{n}",
                    self.band[0] <= st.median <= self.band[1],
                    "band",
                    f"median {st.median:.4f} vs {self.band}",
                )
        if len(medians) > 1:
            res.check(
                "median_strictly_increasing",
                all(a < b for a, b in zip(medians, medians[1:])),
                "band",
                "medians " + ", ".join(f"{m:.4f}" for m in medians),
            )
        return res


# ---------------------------------------------------------------- hitting


class HittingTail(Experiment):
    """``T(0)`` from the configured start: mean, exponentiality and tails in ``beta``."""

    name = "hit"

    def validate(self, cfg):
        super().validate(cfg)
        _start(cfg, 2)
        if any(b <= 0 for b in cfg.beta):
            raise ConfigError("beta must be positive")

    def replica(self, cfg, exp_id, n, index):
        from .walk import hitting_time

        rng = self.rng(cfg, exp_id, index)
        try:
            t = hitting_time(_start(cfg, n), Site(0, 0), n, cfg.cap, rng)
        except WalkTruncated:
            return _record(exp_id, index, n, "hitting_time", None, True)
        return _record(exp_id, index, n, "hitting_time", t)

    def reduce(self, cfg, records):
        betas = sorted(cfg.beta)
        res = Result(self.name, {"betas": betas, "per_n": {}})
        for n, recs in sorted(_by_n(records).items()):
            _truncation_check(res, n, recs)
            T = np.array([r["value"] for r in recs if not r["truncated"]], dtype=float)
            st = SummaryStats.of(f"hit:n={n}", T, len(recs) - T.size)
            ref = hit_mean_reference(n)
            ks = ks_exponential(T / T.mean()) if T.size and T.mean() > 0 else None
            events = np.array([[t >= hit_threshold(n, b) for b in betas] for t in T], dtype=bool)
            violations = int(np.sum(events[:, 1:] & ~events[:, :-1])) if T.size else 0
            res.check(f"crn_monotone_beta_n{n}", violations == 0, "invariant", f"{violations} violations")
            tails = {}
            estimates = []
            for a, beta in enumerate(betas):
                prop = Proportion.of(int(events[:, a].sum()), T.size)
                expo = prop.exponent(n)
                tails[str(beta)] = prop.as_dict() | {"threshold": hit_threshold(n, beta), "exponent": expo}
                estimates.append(prop.p)
                res.rows.append(_row(f"n={n},beta={beta}", prop.p, prop.ci_low, prop.ci_high, n=n,
                                     beta=beta, exponent=expo))
                res.check(
                    f"exponent_near_beta_n{n}_beta{beta}",
                    expo is not None and beta - 0.2 <= expo <= beta + 0.2,
                    "band",
                    f"fitted exponent {expo}",
                )
            res.check(f"tail_nonincreasing_beta_n{n}", nonincreasing(estimates), "invariant")
            mean_ratio = st.mean / ref if st.mean else None
            res.summary["per_n"][str(n)] = st.as_dict() | {
                "mean_reference": ref,
                "mean_over_reference": mean_ratio,
                "ks_exp1": ks,
                "tails": tails,
            }
            res.rows.append(_row(f"n={n}", st.mean, n=n, quantity="mean_hitting_time", reference=ref))
            res.check(f"mean_within_20pct_n{n}", mean_ratio is not None and abs(mean_ratio - 1) <= 0.2,
                      "band", f"mean/reference = {mean_ratio}")
            res.check(f"ks_below_0.05_n{n}", ks is not None and ks < 0.05, "band", f"KS = {ks}")
        return res


# ---------------------------------------------------------------- tails


class _CoverTail(Experiment):
    def _horizon(self, cfg, n):
        return max(cover_threshold(n, g) for g in cfg.gamma)

    def replica(self, cfg, exp_id, n, index):
        rng = self.rng(cfg, exp_id, index)
        horizon = self._horizon(cfg, n)
        t = _censored_cover(n, _start(cfg, n), horizon, rng)
        return _record(exp_id, index, n, "cover_time", t, censored_at=horizon)

    def _event(self, t, thr) -> bool:
        raise NotImplementedError

    def reduce(self, cfg, records):
        gammas = sorted(cfg.gamma)
        res = Result(self.name, {"gammas": gammas, "per_n": {}})
        p_by_gamma: dict[float, list[float]] = {g: [] for g in gammas}
        for n, recs in sorted(_by_n(records).items()):
            ev = np.array([[self._event(r["value"], cover_threshold(n, g)) for g in gammas] for r in recs])
            per = {}
            ests = []
            for a, g in enumerate(gammas):
                prop = Proportion.of(int(ev[:, a].sum()), len(recs))
                per[str(g)] = prop.as_dict() | {"threshold": cover_threshold(n, g), "exponent": prop.exponent(n)}
                ests.append(prop.p)
                p_by_gamma[g].append(prop.p)
                res.rows.append(_row(f"n={n},gamma={g}", prop.p, prop.ci_low, prop.ci_high, n=n, gamma=g,
                                     exponent=prop.exponent(n)))
            self._checks(res, n, gammas, ev, ests, per)
            res.summary["per_n"][str(n)] = per
        self._trend_checks(res, p_by_gamma)
        return res

    def _checks(self, res, n, gammas, ev, ests, per):
        pass

    def _trend_checks(self, res, p_by_gamma):
        pass


class LowerTail(_CoverTail):
    """``P[T_cov <= (4/pi) gamma n^2 ln^2 n]`` for ``gamma < 1``."""

    name = "lower-tail"

    def validate(self, cfg):
        super().validate(cfg)
        if any(not 0 < g < 1 for g in cfg.gamma):
            raise ConfigError("gamma must lie in (0,1) for lower-tail")

    def _event(self, t, thr):
        return t is not None and t <= thr

    def _checks(self, res, n, gammas, ev, ests, per):
        v = int(np.sum(ev[:, :-1] & ~ev[:, 1:]))
        res.check(f"crn_monotone_gamma_n{n}", v == 0, "invariant", f"{v} violations")
        res.check(f"estimate_nondecreasing_gamma_n{n}", nondecreasing(ests), "invariant")

    def _trend_checks(self, res, p_by_gamma):
        for g, ps in p_by_gamma.items():
            if len(ps) > 1:
                res.check(f"decreasing_in_n_gamma{g}", all(a > b for a, b in zip(ps, ps[1:])), "band",
                          "estimates " + ", ".join(f"{p:.3g}" for p in ps))


class UpperTail(_CoverTail):
    """``P[T_cov >= (4/pi) gamma n^2 ln^2 n]`` for ``gamma >= 1``."""

    name = "upper-tail"
    anchor_band = (0.2, 0.8)
    exponent_band = (0.1, 0.9)

    def validate(self, cfg):
        super().validate(cfg)
        if any(g < 1 for g in cfg.gamma):
            raise ConfigError("gamma must be >= 1 for upper-tail (gamma = 1 is the sanity anchor)")

    def _event(self, t, thr):
        return t is None or t >= thr

    def _checks(self, res, n, gammas, ev, ests, per):
        v = int(np.sum(ev[:, 1:] & ~ev[:, :-1]))
        res.check(f"crn_monotone_gamma_n{n}", v == 0, "invariant", f"{v} violations")
        res.check(f"estimate_nonincreasing_gamma_n{n}", nonincreasing(ests), "invariant")
        for g in gammas:
            p = per[str(g)]
            if g == 1:
                res.check(f"anchor_gamma1_n{n}", self.anchor_band[0] <= p["p"] <= self.anchor_band[1], "band",
                          f"p = {p['p']}")
            else:
                e = p["exponent"]
                res.check(f"exponent_band_n{n}_gamma{g}",
                          e is not None and self.exponent_band[0] <= e <= self.exponent_band[1], "band",
                          f"exponent = {e}")


# ---------------------------------------------------------------- boxes


@lru_cache(maxsize=16)
def _box_indices(n: int, alpha: float) -> tuple[np.ndarray, ...]:
    return tuple(b.indices for b in tile_boxes(n, alpha))


def uncovered_box_count(visited: np.ndarray, boxes) -> int:
    return sum(1 for idx in boxes if not visited[idx].all())


class UncoveredBoxes(Experiment):
    """Boxes of side ``n^alpha`` not fully covered at ``(4/pi) gamma n^2 ln^2 n``."""

    name = "boxes"
    band = 0.95

    def validate(self, cfg):
        super().validate(cfg)
        for g in cfg.gamma:
            if not 0 < g < 1:
                raise ConfigError("gamma must lie in (0,1) for boxes")
            if not math.sqrt(g) < cfg.alpha < 1:
                raise ConfigError("alpha must lie in (sqrt(gamma),1) for boxes")

    def replica(self, cfg, exp_id, n, index):
        rng = self.rng(cfg, exp_id, index)
        boxes = _box_indices(n, cfg.alpha)
        walk = Walk(n, _start(cfg, n), rng)
        state = CoverState(walk)
        counts = {}
        for g in sorted(cfg.gamma):
            state.advance_to(cover_threshold(n, g))
            counts[g] = uncovered_box_count(state.visited, boxes)
        return _record(exp_id, index, n, "uncovered_boxes", [counts[g] for g in cfg.gamma],
                       gammas=list(cfg.gamma), total_boxes=len(boxes))

    def reduce(self, cfg, records):
        gammas = list(cfg.gamma)
        order = np.argsort(gammas)
        res = Result(self.name, {"gammas": gammas, "alpha": cfg.alpha, "per_n": {}})
        for n, recs in sorted(_by_n(records).items()):
            C = np.array([r["value"] for r in recs], dtype=np.int64)
            Cs = C[:, order]
            v = int(np.sum(Cs[:, 1:] > Cs[:, :-1]))
            res.check(f"crn_nonincreasing_gamma_n{n}", v == 0, "invariant", f"{v} violations")
            level = cfg.c_boxes * n ** (2 * (1 - cfg.alpha))
            per = {}
            for a, g in enumerate(gammas):
                st = SummaryStats.of(f"boxes:n={n},gamma={g}", C[:, a])
                pos = Proportion.of(int(np.sum(C[:, a] > 0)), len(recs))
                big = Proportion.of(int(np.sum(C[:, a] >= level)), len(recs))
                per[str(g)] = st.as_dict() | {"positive": pos.as_dict(), "above_level": big.as_dict(),
                                              "level": level, "total_boxes": recs[0]["total_boxes"]}
                res.rows.append(_row(f"n={n},gamma={g}", pos.p, pos.ci_low, pos.ci_high, n=n, gamma=g,
                                     quantity="fraction_count_positive", mean_count=st.mean))
                res.check(f"count_positive_fraction_n{n}_gamma{g}", pos.p >= self.band, "band",
                          f"fraction {pos.p}")
            res.summary["per_n"][str(n)] = per
        return res


# ---------------------------------------------------------------- small torus


def _check_small_torus_domain(cfg: ExperimentConfig, name: str) -> None:
    if len(cfg.gamma) != 1:
        raise ConfigError(f"{name} takes a single gamma")
    g, a, eta = cfg.gamma[0], cfg.alpha, cfg.eta
    if not 0 < g < 1:
        raise ConfigError(f"gamma must lie in (0,1) for {name}")
    if not 0 < a < math.sqrt(g):
        raise ConfigError(f"alpha must lie in (0,sqrt(gamma)) for {name}")
    eta_max = min(1.0, 0.5 * (math.sqrt(g) / a - 1))
    if not 0 < eta < eta_max:
        raise ConfigError(f"eta must lie in (0, min(1, (sqrt(gamma)/alpha - 1)/2)) = (0, {eta_max:.4g}) for {name}")
    d_max = 1 - a * a * (1 + 2 * eta) ** 2 / g
    for d in cfg.delta:
        if not 0 < d < d_max:
            raise ConfigError(f"delta must lie in (0, 1 - alpha^2 (1+2 eta)^2 / gamma) = (0, {d_max:.4g}) for {name}")
    for n in cfg.n:
        if margin(n, a, eta) < 1:
            raise ConfigError(f"floor(eta n^alpha) must be >= 1 for {name} (n={n})")


@dataclass(frozen=True)
class SmallTorus:
    """The torus of side ``ell_n`` with its centered box ``B`` and far set ``B~``."""

    n: int
    gamma: float
    alpha: float
    eta: float

    @property
    def side(self) -> int:
        return box_side(self.n, self.alpha)

    @property
    def margin(self) -> int:
        return margin(self.n, self.alpha, self.eta)

    @property
    def ell(self) -> int:
        return ell_n(self.n, self.alpha, self.eta)

    @property
    def r(self) -> float:
        return r_n(self.n, self.gamma, self.alpha)

    @property
    def x0(self) -> Site:
        return Site(self.margin, self.margin)

    def box(self) -> Region:
        return box(self.x0, self.side, self.ell)

    def far_mask(self) -> np.ndarray:
        """``B~``: sites at linf distance ``>= floor(eta n^alpha)`` from every site of ``B``."""
        ell, lo, hi = self.ell, self.margin, self.margin + self.side - 1
        c = np.arange(ell)
        # per-axis torus distance from a coordinate to the interval [lo, hi]
        inside = (c >= lo) & (c <= hi)
        d = np.where(inside, 0, np.minimum(np.minimum(np.abs(c - lo), ell - np.abs(c - lo)),
                                            np.minimum(np.abs(c - hi), ell - np.abs(c - hi))))
        far = (d[:, None] >= lo) | (d[None, :] >= lo)
        return far.reshape(-1)

    def budget(self, delta: float) -> int:
        return math.floor((1 - delta) * self.r)


class SmallTorusCover(Experiment):
    """``Q_x0[T_cov(ell_n) > (1 - delta) r_n]`` on the small torus."""

    name = "small-torus"
    band = 0.5
    default_overrides = {"n": (256,), "gamma": (0.9,), "alpha": 0.5, "eta": 0.125, "delta": (0.3,)}

    def validate(self, cfg):
        super().validate(cfg)
        _check_small_torus_domain(cfg, self.name)

    def replica(self, cfg, exp_id, n, index):
        st = SmallTorus(n, cfg.gamma[0], cfg.alpha, cfg.eta)
        horizon = max(st.budget(d) for d in cfg.delta)
        t = _censored_cover(st.ell, st.x0, horizon, self.rng(cfg, exp_id, index))
        return _record(exp_id, index, n, "small_torus_cover_time", t, censored_at=horizon, ell=st.ell)

    def reduce(self, cfg, records):
        deltas = sorted(cfg.delta)
        res = Result(self.name, {"deltas": deltas, "threshold": 0.25, "per_n": {}})
        for n, recs in sorted(_by_n(records).items()):
            st = SmallTorus(n, cfg.gamma[0], cfg.alpha, cfg.eta)
            ev = np.array([[r["value"] is None or r["value"] > st.budget(d) for d in deltas] for r in recs])
            v = int(np.sum(ev[:, :-1] & ~ev[:, 1:]))
            res.check(f"crn_monotone_delta_n{n}", v == 0, "invariant", f"{v} violations")
            per = {"ell": st.ell, "r_n": st.r}
            ests = []
            for a, d in enumerate(deltas):
                prop = Proportion.of(int(ev[:, a].sum()), len(recs))
                per[str(d)] = prop.as_dict() | {"budget": st.budget(d)}
                ests.append(prop.p)
                res.rows.append(_row(f"n={n},delta={d}", prop.p, prop.ci_low, prop.ci_high, n=n, delta=d,
                                     ell=st.ell))
                res.check(f"estimate_below_half_n{n}_delta{d}", prop.p <= self.band, "band", f"p = {prop.p}")
            res.check(f"estimate_nondecreasing_delta_n{n}", nondecreasing(ests), "invariant")
            res.summary["per_n"][str(n)] = per
        return res


def j_hat(durations: np.ndarray, budget: int) -> int:
    """First ``j >= 0`` with ``durations[0] + ... + durations[j] >= budget``.

    Equivalently the number of excursions completed before the one during
    which the accumulated time reaches ``budget``.
    """
    return int(np.searchsorted(np.cumsum(durations), budget, side="left"))


def small_torus_durations(st: SmallTorus, budget: int, rng: np.random.Generator) -> np.ndarray:
    """Durations of the ``dB -> B~`` excursions completed before the budget runs out."""
    ell = st.ell
    in_box = st.box().mask().view(np.uint8)
    in_far = st.far_mask().view(np.uint8)
    walk = Walk(ell, st.x0, rng)
    durations = np.zeros(int(st.r / st.margin) + 2, dtype=np.int64)
    state = np.array([1, 0, 0, 0, 0], dtype=np.int64)
    while True:
        words = walk._buffer()
        x, y, pos, finished = K.small_torus_excursions(
            walk.x, walk.y, ell, in_box, in_far, state, words, walk._pos, budget, durations
        )
        walk.x, walk.y, walk._pos = x, y, pos
        if finished:
            break
    return durations[: state[1]].copy()


class ExcursionCountJ(Experiment):
    """``J^``: excursions from ``B`` to ``B~`` until the budget ``floor((1-delta) r_n)`` is spent."""

    name = "excursions-j"
    default_overrides = SmallTorusCover.default_overrides

    def validate(self, cfg):
        super().validate(cfg)
        _check_small_torus_domain(cfg, self.name)

    def replica(self, cfg, exp_id, n, index):
        st = SmallTorus(n, cfg.gamma[0], cfg.alpha, cfg.eta)
        budgets = [st.budget(d) for d in cfg.delta]
        dur = small_torus_durations(st, max(budgets), self.rng(cfg, exp_id, index))
        js = [j_hat(dur, b) for b in budgets]
        short = r_n(n, cfg.gamma[0], cfg.alpha) / math.log(n) ** 6
        j0 = js[0]
        return _record(exp_id, index, n, "J_hat", js, deltas=list(cfg.delta),
                       short_excursions=int(np.sum(dur[:j0] <= short)), min_duration=int(dur[:j0].min()) if j0 else None)

    def reduce(self, cfg, records):
        deltas = list(cfg.delta)
        order = np.argsort(deltas)
        res = Result(self.name, {"deltas": deltas, "per_n": {}})
        for n, recs in sorted(_by_n(records).items()):
            st = SmallTorus(n, cfg.gamma[0], cfg.alpha, cfg.eta)
            J = np.array([r["value"] for r in recs], dtype=np.int64)
            bound = st.r / st.margin
            worst = int(J.max())
            res.check(f"deterministic_bound_n{n}", worst <= bound, "invariant", f"max J = {worst}, bound {bound:.1f}")
            mins = [r["min_duration"] for r in recs if r["min_duration"] is not None]
            res.check(f"excursions_at_least_margin_n{n}", all(m >= st.margin for m in mins), "invariant")
            Js = J[:, order]
            v = int(np.sum(Js[:, 1:] > Js[:, :-1]))
            res.check(f"crn_nonincreasing_delta_n{n}", v == 0, "invariant", f"{v} violations")
            ln6 = math.log(n) ** 6
            per = {"bound": bound, "ln6": ln6, "ell": st.ell}
            total = int(J[:, 0].sum())
            short = sum(r["short_excursions"] for r in recs)
            per["short_excursion_fraction"] = short / total if total else 0.0
            for a, d in enumerate(deltas):
                stat = SummaryStats.of(f"excursions-j:n={n},delta={d}", J[:, a])
                prop = Proportion.of(int(np.sum(J[:, a] <= ln6)), len(recs))
                per[str(d)] = stat.as_dict() | {"P_J_le_ln6": prop.as_dict()}
                res.rows.append(_row(f"n={n},delta={d}", stat.mean, n=n, delta=d, quantity="mean_J",
                                     p_le_ln6=prop.p))
                res.check(f"P_J_le_ln6_at_least_half_n{n}_delta{d}", prop.p >= 0.5, "band", f"p = {prop.p}")
            res.summary["per_n"][str(n)] = per
        return res


# ---------------------------------------------------------------- soft local times


@dataclass(frozen=True)
class SLTGeometry:
    """Single annulus ``B(c, max(1, b n)) subset B(c, n/2 - 1/2)`` centred at ``(n/2, n/2)``."""

    n: int
    b: float

    @property
    def center(self) -> Site:
        return Site(self.n // 2, self.n // 2)

    @property
    def r(self) -> float:
        return max(1.0, self.b * self.n)

    @property
    def R(self) -> float:
        return self.n / 2 - 0.5


@lru_cache(maxsize=8)
def slt_setup(n: int, b: float):
    """``(family, reference law, flatness)`` of the default soft-local-time geometry."""
    g = SLTGeometry(n, b)
    fam = AnnulusFamily.of([(ball(g.center, g.r, n), disc(g.center, g.R, n))])
    ref = reference_laws(fam, default_anchor(fam))
    return fam, ref[0], flatness(fam, ref, n)


def _exit_site(fam: AnnulusFamily, rng: np.random.Generator) -> Site:
    walk = Walk(fam.n, "uniform", rng)
    walk.run_until(fam.outer.boundary_mask())
    return walk.position


def direct_start_sites(fam: AnnulusFamily, m: int, rng: np.random.Generator) -> list[int]:
    """Start-site labels (positions in ``dA``) of the first ``m`` excursions of a walk."""
    walk = Walk(fam.n, "uniform", rng)
    inner = fam.inner.boundary_mask()
    outer = fam.outer.boundary_mask()
    col = {s: i for i, s in enumerate(fam.inner.boundary)}
    walk.run_until(outer)
    out = []
    for _ in range(m):
        walk.run_until(inner)
        out.append(col[walk.position])
        walk.run_until(outer)
    return out


def slt_start_sites(fam: AnnulusFamily, m: int, field_seed, rng: np.random.Generator) -> tuple[list[int], list[float]]:
    """Start-site labels and ``xi`` values of the first ``m`` soft-local-time excursions."""
    from .slt import ExactDriver

    field_ = PoissonField.for_family(fam, field_seed)
    driver = ExactDriver(fam)
    G = SoftLocalTime(field_)
    y = _exit_site(fam, rng)
    sites, xis = [], []
    for _ in range(m):
        xi, p = G.step(driver.density(y))
        sites.append(p.site_index)
        xis.append(xi)
        y = field_.mark(p).end_site
    return sites, xis


class SLTVerification(Experiment):
    """Soft-local-time coupling diagnostics on a single annulus.

    ``replicas`` coupling runs check the deterministic statements (ratio
    bound, prefix inclusions on the window event, graph invariants) and
    collect ``xi`` samples.  ``law_replicas`` paired runs compare the first
    three start sites with a direct decomposition.  ``window_replicas``
    field-only realizations give the ``N`` window law and the ``U`` event
    frequencies.
    """

    name = "slt-verify"
    default_overrides = {"n": (16,), "replicas": 1000, "law_replicas": 10000, "window_replicas": 10000}
    xi_per_replica = 10
    law_m = 3

    def validate(self, cfg):
        super().validate(cfg)
        if any(not 0 < v < 1 for v in cfg.v):
            raise ConfigError("v must lie in (0,1) for slt-verify")
        if not 0 < cfg.b < 1 / 3:
            raise ConfigError("b must lie in (0,1/3) for slt-verify")
        if cfg.m0 < 2:
            raise ConfigError("m0 must be >= 2 for slt-verify")
        for n in cfg.n:
            if n < 8:
                raise ConfigError("slt-verify needs n >= 8")

    def items(self, cfg):
        out = []
        for n in cfg.n:
            out += [(f"{self.name}:coupling:n={n}", n, i) for i in range(cfg.replicas)]
            out += [(f"{self.name}:law:n={n}", n, i) for i in range(cfg.law_replicas)]
            out += [(f"{self.name}:window:n={n}", n, i) for i in range(cfg.window_replicas)]
        return out

    def replica(self, cfg, exp_id, n, index):
        ss = SeedSpec(cfg.seed, exp_id, index).seed_sequence()
        field_seed, walk_seed, direct_seed = ss.spawn(3)
        fam, href, flat = slt_setup(n, cfg.b)
        walk_rng = np.random.Generator(np.random.PCG64(walk_seed))
        if ":law:" in exp_id:
            sites, _ = slt_start_sites(fam, self.law_m, field_seed, walk_rng)
            direct = direct_start_sites(fam, self.law_m, np.random.Generator(np.random.PCG64(direct_seed)))
            return _record(exp_id, index, n, "start_sites", {"slt": sites, "direct": direct})
        if ":window:" in exp_id:
            return _record(exp_id, index, n, "window", self._window(cfg, fam, href, field_seed))
        return _record(exp_id, index, n, "coupling", self._coupling(cfg, fam, href, flat, field_seed, walk_rng))

    def _coupling(self, cfg, fam, href, flat, field_seed, walk_rng) -> dict:
        from .slt import ExactDriver

        v = cfg.v[0]
        m0 = cfg.m0
        m_max = 2 * m0
        steps = math.ceil((1 + 3 * v) * m_max)
        certified = v >= 3 * flat
        field_ = PoissonField.for_family(fam, field_seed)
        hvec = reference_vector(field_, href)
        driver = ExactDriver(fam)
        G = SoftLocalTime(field_)
        y = _exit_site(fam, walk_rng)
        acc = np.zeros_like(G.G)
        ratio_viol = graph_viol = 0
        durations = []
        for _ in range(steps):
            d = driver.density(y)
            xi, p = G.step(d)
            acc += xi * d
            if certified and not ratio_bound_holds(G.G, hvec, v):
                ratio_viol += 1
            if abs(G.G[p.site_index] - p.u) > 1e-12 * max(1.0, p.u):
                graph_viol += 1
            for i in range(len(field_.sites)):
                if field_.height(i, int(G.taken[i])) < G.G[i] * (1 - 1e-12):
                    graph_viol += 1
            mark = field_.mark(p)
            durations.append(mark.duration)
            y = mark.end_site
        accumulation_ok = bool(np.allclose(G.G, acc, rtol=1e-9, atol=0))
        dep = list(G.consumed)
        ind, _ = simulate_independent_via_slt(field_, href, steps)
        ind_keys = [e.point for e in ind]
        u_holds, first_bad = check_U_event(field_, href, m0, v, m_max)
        inclusions = {}
        if certified and u_holds:
            for m in (m0, 2 * m0):
                r = verify_inclusions(dep, ind_keys, m, v, flat)
                inclusions[str(m)] = [r.dependent_in_independent, r.independent_in_dependent]
        return {
            "certified": certified,
            "U": u_holds,
            "U_first_violation": first_bad,
            "inclusions": inclusions,
            "ratio_bound_violations": ratio_viol,
            "graph_violations": graph_viol,
            "accumulation_ok": accumulation_ok,
            "steps": steps,
            "order_differs": dep[:steps] != ind_keys[:steps],
            "xi": G.xi_history[: self.xi_per_replica],
            "durations": durations[: self.xi_per_replica],
        }

    def _window(self, cfg, fam, href, field_seed) -> dict:
        m0, v = cfg.m0, cfg.v[0]
        field_ = PoissonField.for_family(fam, field_seed)
        trend_m0 = [m0 // 2, m0, 2 * m0]
        a, b = m0 / 2, float(m0)
        n_half, n_rest, n_full = count_N(field_, href, 0, a), count_N(field_, href, a, b), count_N(field_, href, 0, b)
        return {
            "N0m": n_full,
            "N_additive": n_half + n_rest == n_full,
            "U": check_U_event(field_, href, m0, v, 2 * m0)[0],
            "U_by_m0": [check_U_event(field_, href, k, v, 4 * m0)[0] for k in trend_m0],
            "U_two_sided_by_v": [
                check_U_event(field_, href, m0, w, 2 * m0, two_sided_only=True)[0] for w in sorted(cfg.v)
            ],
        }

    def reduce(self, cfg, records):
        res = Result(self.name, {"per_n": {}})
        for n, recs in sorted(_by_n(records).items()):
            fam, href, flat = slt_setup(n, cfg.b)
            v = cfg.v[0]
            g = SLTGeometry(n, cfg.b)
            per: dict = {"r": g.r, "R": g.R, "flatness": flat, "v": v, "certified": v >= 3 * flat, "m0": cfg.m0}
            coup = [r["value"] for r in recs if r["quantity"] == "coupling"]
            law = [r["value"] for r in recs if r["quantity"] == "start_sites"]
            win = [r["value"] for r in recs if r["quantity"] == "window"]
            if coup:
                self._reduce_coupling(res, n, cfg, coup, flat, per)
            if win:
                self._reduce_window(res, n, cfg, win, per)
            if law:
                a = [tuple(x["slt"]) for x in law]
                b = [tuple(x["direct"]) for x in law]
                p = chi2_homogeneity(a, b)
                per["law_chi2_p"] = p
                per["law_replicas"] = len(law)
                res.rows.append(_row(f"n={n},law_chi2", p, n=n, quantity="chi2_p_first3_start_sites"))
                res.check(f"slt_law_matches_direct_n{n}", p > 0.01, "band", f"chi2 p = {p:.4g}")
            res.summary["per_n"][str(n)] = per
        return res

    def _reduce_coupling(self, res, n, cfg, coup, flat, per):
        v, m0 = cfg.v[0], cfg.m0
        R = len(coup)
        incl_cases = [c for c in coup if c["inclusions"]]
        incl_fail = sum(1 for c in incl_cases for pair in c["inclusions"].values() for ok in pair if not ok)
        ratio_viol = sum(c["ratio_bound_violations"] for c in coup)
        graph_viol = sum(c["graph_violations"] for c in coup)
        u_count = sum(c["U"] for c in coup)
        xi = np.concatenate([c["xi"] for c in coup])
        dur = np.concatenate([c["durations"] for c in coup]).astype(float)
        ks = ks_exponential(xi)
        rho = float(np.corrcoef(xi, dur)[0, 1]) if xi.size > 2 else None
        report = CouplingReport(
            v=v, m0=m0, m_max=2 * m0, flatness=flat, certified=v >= 3 * flat,
            U_holds=[u_count, R],
            inclusion_checks=[len(incl_cases), incl_fail],
            ratio_bound_violations=ratio_viol,
            ratio_bound_steps=sum(c["steps"] for c in coup),
        )
        per.update({
            "coupling_replicas": R,
            "coupling_report": asdict(report),
            "P_U": Proportion.of(u_count, R).as_dict(),
            "inclusion_cases": len(incl_cases),
            "inclusion_failures": incl_fail,
            "xi_ks": ks,
            "xi_samples": int(xi.size),
            "xi_duration_corr": rho,
            "order_differs_fraction": float(np.mean([c["order_differs"] for c in coup])),
        })
        res.rows.append(_row(f"n={n},P_U", u_count / R, n=n, quantity="P_U", v=v, m0=m0))
        res.rows.append(_row(f"n={n},xi_ks", ks, n=n, quantity="xi_ks"))
        res.check(f"inclusions_hold_n{n}", incl_fail == 0 and len(incl_cases) > 0, "invariant",
                  f"{incl_fail} failures over {len(incl_cases)} certified U realizations")
        res.check(f"ratio_bound_n{n}", ratio_viol == 0, "invariant", f"{ratio_viol} violations")
        res.check(f"graph_invariants_n{n}", graph_viol == 0 and all(c["accumulation_ok"] for c in coup),
                  "invariant", f"{graph_viol} violations")
        res.check(f"xi_ks_below_0.02_n{n}", ks < 0.02, "band", f"KS = {ks:.4g} on {xi.size} samples")
        if rho is not None:
            res.check(f"xi_mark_uncorrelated_n{n}", abs(rho) < 0.03, "band", f"rho = {rho:.4f}")

    def _reduce_window(self, res, n, cfg, win, per):
        m0, R = cfg.m0, len(win)
        N = np.array([w["N0m"] for w in win], dtype=float)
        var = float(N.var(ddof=1)) if R > 1 else float("nan")
        U_m0 = np.array([w["U_by_m0"] for w in win], dtype=bool)
        two = np.array([w["U_two_sided_by_v"] for w in win], dtype=bool)
        u_trend_viol = int(np.sum(U_m0[:, :-1] & ~U_m0[:, 1:]))
        v_viol = int(np.sum(two[:, :-1] & ~two[:, 1:]))
        per.update({
            "window_replicas": R,
            "N_windows": {f"0,{m0}": {"mean": float(N.mean()), "var": var}},
            "P_U_window": Proportion.of(int(sum(w["U"] for w in win)), R).as_dict(),
            "P_U_by_m0": dict(zip(map(str, [m0 // 2, m0, 2 * m0]), U_m0.mean(axis=0).tolist())),
            "P_U_two_sided_by_v": dict(zip(map(str, sorted(cfg.v)), two.mean(axis=0).tolist())),
        })
        if "coupling_report" in per:
            per["coupling_report"]["N_windows"] = per["N_windows"]
        res.rows.append(_row(f"n={n},N(0,{m0})_mean", float(N.mean()), n=n, quantity="N0m_mean", var=var))
        res.check(f"N_additive_n{n}", all(w["N_additive"] for w in win), "invariant")
        res.check(f"U_nondecreasing_m0_n{n}", u_trend_viol == 0, "invariant", f"{u_trend_viol} violations")
        res.check(f"U_two_sided_monotone_v_n{n}", v_viol == 0, "invariant", f"{v_viol} violations")
        res.check(f"poisson_window_mean_n{n}", abs(N.mean() - m0) <= 3 * math.sqrt(m0 / R), "band",
                  f"mean {N.mean():.4f}")
        res.check(f"poisson_window_var_n{n}", abs(var - m0) <= 0.1 * m0, "band", f"var {var:.4f}")


# ---------------------------------------------------------------- entrance


@lru_cache(maxsize=8)
def entrance_setup(n: int, radius: float, distance: int):
    c = Site(n // 2, n // 2)
    A = ball(c, radius, n)
    start = Site((c.x + distance) % n, c.y)
    if start in A:
        raise ConfigError("entrance start must lie outside the ball (distance > radius)")
    return A, start, entrance_law_exact(A, start, n)


class Entrance(Experiment):
    """Monte Carlo entrance law into a ball against the exact linear solve."""

    name = "entrance"
    band = 0.02
    default_overrides = {"n": (16,), "replicas": 100000}

    def validate(self, cfg):
        super().validate(cfg)
        for n in cfg.n:
            if not 0 < cfg.radius < n / 2:
                raise ConfigError("radius must lie in (0, n/2) for entrance")
            if cfg.distance <= cfg.radius:
                raise ConfigError("distance must exceed radius for entrance")

    def replica(self, cfg, exp_id, n, index):
        A, start, _ = entrance_setup(n, cfg.radius, cfg.distance)
        walk = Walk(n, start, self.rng(cfg, exp_id, index))
        try:
            walk.run_until(A.mask(), cfg.cap)
        except WalkTruncated:
            return _record(exp_id, index, n, "entrance_site", None, True)
        return _record(exp_id, index, n, "entrance_site", [walk.x, walk.y])

    def reduce(self, cfg, records):
        res = Result(self.name, {"per_n": {}})
        for n, recs in sorted(_by_n(records).items()):
            _truncation_check(res, n, recs)
            A, start, exact = entrance_setup(n, cfg.radius, cfg.distance)
            col = {s: i for i, s in enumerate(exact.sites)}
            counts = np.zeros(len(exact.sites), dtype=np.int64)
            for r in recs:
                if not r["truncated"]:
                    counts[col[Site(*r["value"])]] += 1
            emp = counts / counts.sum()
            tv = 0.5 * float(np.abs(emp - exact.probs).sum())
            p = chi2_goodness(counts, exact.probs)
            res.summary["per_n"][str(n)] = {
                "start": list(start), "radius": cfg.radius, "tv": tv, "chi2_p": p,
                "exact": exact.probs.tolist(), "empirical": emp.tolist(),
                "sites": [list(s) for s in exact.sites],
            }
            res.rows.append(_row(f"n={n}", tv, n=n, quantity="tv_exact_vs_mc"))
            res.check(f"tv_below_{self.band}_n{n}", tv <= self.band, "band", f"TV = {tv:.4g}")
        return res


# ---------------------------------------------------------------- registry and runner


REGISTRY: dict[str, Experiment] = {
    e.name: e
    for e in (
        CoverScaling(),
        HittingTail(),
        LowerTail(),
        UpperTail(),
        UncoveredBoxes(),
        SmallTorusCover(),
        ExcursionCountJ(),
        SLTVerification(),
        Entrance(),
    )
}


def get(name: str) -> Experiment:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(REGISTRY)}") from None


def _run_item(args) -> dict:
    name, cfg, item = args
    return REGISTRY[name].replica(cfg, *item)


def run_replicas(name: str, cfg: ExperimentConfig, parallelism: int = 1) -> list[dict]:
    """Evaluate every work item; records come back in work-item order."""
    exp = get(name)
    exp.validate(cfg)
    items = exp.items(cfg)
    if parallelism <= 1 or len(items) < 2:
        return [exp.replica(cfg, *it) for it in items]
    chunk = max(1, len(items) // (parallelism * 16))
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_item, [(name, cfg, it) for it in items], chunksize=chunk))


def run_experiment(name: str, cfg: ExperimentConfig, parallelism: int = 1) -> tuple[list[dict], Result]:
    records = run_replicas(name, cfg, parallelism)
    return records, get(name).reduce(cfg, records)


# functional entry points, one per experiment


def cover_scaling(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("cover", cfg, parallelism)[1]


def hitting_tail(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("hit", cfg, parallelism)[1]


def lower_tail(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("lower-tail", cfg, parallelism)[1]


def upper_tail(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("upper-tail", cfg, parallelism)[1]


def uncovered_boxes(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("boxes", cfg, parallelism)[1]


def small_torus_cover(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("small-torus", cfg, parallelism)[1]


def excursion_count_J(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("excursions-j", cfg, parallelism)[1]


def slt_verification_suite(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("slt-verify", cfg, parallelism)[1]


def entrance(cfg: ExperimentConfig, parallelism: int = 1) -> Result:
    return run_experiment("entrance", cfg, parallelism)[1]
