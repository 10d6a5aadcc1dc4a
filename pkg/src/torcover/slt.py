"""Soft local times on a marked Poisson field over ``dA x R_+``.

Each boundary site carries an independent unit-rate Poisson process of
heights; each point carries a walk excursion started at its site as mark.
A soft local time ``G`` is raised by ``xi * density`` until its graph
touches the lowest unconsumed point, which is consumed and whose mark
becomes the next excursion.  Running several soft local times over one
field realization couples the processes they generate.

On a single ray points are always consumed bottom-up, so per-site
consumption is a counter.  Heights and marks are drawn from per-site and
per-point streams; extending the field or sampling marks in a different
order never changes the realization.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .excursions import Excursion
from .harmonic import EntranceLaw, solver_for
from .lattice import AnnulusFamily, Site, site_from_index
from .walk import Walk

TIE_RTOL = 1e-15
BLOCK = 32


class FieldExhausted(RuntimeError):
    """A hand-built field was queried above its materialized height."""


@dataclass(frozen=True)
class MarkedPoint:
    """Field point ``(z, u)``; ``rank`` is its position on the ray at ``z``."""

    site_index: int
    rank: int
    z: Site
    u: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.site_index, self.rank)


class PoissonField:
    """Unit-rate Poisson points on each ray ``{z} x R_+`` for ``z`` in ``sites``.

    Parameters
    ----------
    sites : sequence of Site
        Rays of the field, in canonical order.
    seed : int or SeedSequence, optional
        Root of the per-site height streams and per-point mark streams.
        ``None`` builds a fixed field (see :meth:`from_points`).
    family : AnnulusFamily, optional
        Needed to sample marks: a mark is a walk from ``z`` stopped on the
        outer boundary of the annulus containing ``z``.
    """

    def __init__(self, sites: Sequence[Site], seed=None, family: AnnulusFamily | None = None):
        self.sites = tuple(sites)
        self.family = family
        self.index = {s: i for i, s in enumerate(self.sites)}
        self._heights: list[np.ndarray] = [np.empty(0) for _ in self.sites]
        self._fixed_cap: float | None = None
        if seed is None:
            self._root = None
            self._streams = None
        else:
            self._root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
            self._streams = [
                np.random.Generator(np.random.PCG64(self._child((0, i)))) for i in range(len(self.sites))
            ]
        self._marks: dict[tuple[int, int], Excursion] = {}

    @classmethod
    def for_family(cls, family: AnnulusFamily, seed) -> "PoissonField":
        return cls(family.inner.boundary, seed, family)

    @classmethod
    def from_points(cls, sites: Sequence[Site], heights: dict, height_cap: float) -> "PoissonField":
        """Field with prescribed points on ``[0, height_cap]`` and nothing known above."""
        f = cls(sites, None)
        for s, hs in heights.items():
            f._heights[f.index[s]] = np.sort(np.asarray(hs, dtype=float))
        f._fixed_cap = float(height_cap)
        return f

    def _child(self, key: tuple) -> np.random.SeedSequence:
        return np.random.SeedSequence(self._root.entropy, spawn_key=self._root.spawn_key + key)

    @property
    def height_cap(self) -> float:
        """Level below which every ray is fully materialized."""
        if self._fixed_cap is not None:
            return self._fixed_cap
        return min((h[-1] if h.size else 0.0) for h in self._heights)

    def ensure(self, i: int, level: float) -> None:
        """Materialize ray ``i`` strictly above ``level``."""
        h = self._heights[i]
        if h.size and h[-1] > level:
            return
        if self._streams is None:
            if level > self._fixed_cap:
                raise FieldExhausted(f"level {level} above the fixed cap {self._fixed_cap}")
            return
        rng = self._streams[i]
        last = h[-1] if h.size else 0.0
        blocks = [h]
        while last <= level:
            new = last + np.cumsum(rng.exponential(1.0, BLOCK))
            blocks.append(new)
            last = new[-1]
        self._heights[i] = np.concatenate(blocks)

    def extend(self, level: float) -> None:
        for i in range(len(self.sites)):
            self.ensure(i, level)

    def height(self, i: int, rank: int) -> float:
        h = self._heights[i]
        if self._streams is None:
            if rank >= h.size:
                raise FieldExhausted(f"no point of rank {rank} on ray {i} below the fixed cap")
            return float(h[rank])
        while rank >= h.size:
            self.ensure(i, (h[-1] if h.size else 0.0))
            h = self._heights[i]
        return float(h[rank])

    def heights(self, i: int, level: float) -> np.ndarray:
        """Heights on ray ``i`` that are ``<= level``."""
        self.ensure(i, level)
        h = self._heights[i]
        return h[: np.searchsorted(h, level, side="right")]

    def point(self, i: int, rank: int) -> MarkedPoint:
        return MarkedPoint(i, rank, self.sites[i], self.height(i, rank))

    def mark(self, p: MarkedPoint) -> Excursion:
        """The excursion attached to ``p``, sampled on first request."""
        if p.key in self._marks:
            return self._marks[p.key]
        if self.family is None or self._root is None:
            raise ValueError("this field has no mark sampler")
        fam = self.family
        j = fam.region_of(p.z)
        stop = fam.pairs[j][1].boundary_mask().view(np.uint8)
        walk = Walk(fam.n, p.z, np.random.Generator(np.random.PCG64(self._child((1, p.site_index, p.rank)))))
        pieces = [np.array([walk.index], dtype=np.int64)]
        chunk = 64
        while True:
            traj = walk.trajectory(chunk)
            hit = np.flatnonzero(stop[traj])
            if hit.size:
                pieces.append(traj[: hit[0] + 1])
                break
            pieces.append(traj)
            chunk = min(2 * chunk, 1 << 16)
        path = np.concatenate(pieces)
        end = site_from_index(int(path[-1]), fam.n)
        exc = Excursion(
            region_index=j,
            start_site=p.z,
            end_site=end,
            start_time=0,
            end_time=path.size - 1,
            path=np.array(path, dtype=np.int64),
            point=p.key,
        )
        self._marks[p.key] = exc
        return exc

    def dump(self, level: float | None = None) -> dict:
        level = self.height_cap if level is None else level
        return {
            "sites": [[s.x, s.y] for s in self.sites],
            "height_cap": level,
            "heights": [self.heights(i, level).tolist() for i in range(len(self.sites))],
        }

    @classmethod
    def load(cls, data: dict) -> "PoissonField":
        sites = [Site(x, y) for x, y in data["sites"]]
        return cls.from_points(sites, dict(zip(sites, data["heights"])), data["height_cap"])


class SoftLocalTime:
    """Running ``G`` on the rays of a field, with its consumption record."""

    def __init__(self, field: PoissonField):
        self.field = field
        self.G = np.zeros(len(field.sites))
        self.taken = np.zeros(len(field.sites), dtype=np.int64)
        self.consumed: list[tuple[int, int]] = []
        self.xi_history: list[float] = []

    def step(self, density: np.ndarray) -> tuple[float, MarkedPoint]:
        """Raise ``G`` along ``density`` to the next field point."""
        density = np.asarray(density, dtype=float)
        live = np.flatnonzero(density > 0)
        if live.size == 0:
            raise ValueError("density vanishes everywhere")
        heights = np.array([self.field.height(int(i), int(self.taken[i])) for i in live])
        vals = np.maximum(heights - self.G[live], 0.0) / density[live]
        best = vals.min()
        # near-ties resolve to the lowest site index (each ray offers one candidate)
        k = int(np.flatnonzero(vals <= best * (1 + TIE_RTOL))[0])
        i = int(live[k])
        point = MarkedPoint(i, int(self.taken[i]), self.field.sites[i], float(heights[k]))
        xi = float(best)
        self.G += xi * density
        self.taken[i] += 1
        self.consumed.append(point.key)
        self.xi_history.append(xi)
        return xi, point

    def ratios(self, href: np.ndarray) -> np.ndarray:
        """``G / href`` with ``0/0 = +inf``."""
        out = np.full(self.G.shape, np.inf)
        pos = href > 0
        out[pos] = self.G[pos] / href[pos]
        out[(~pos) & (self.G > 0)] = np.inf
        return out


def slt_step(field: PoissonField, G: SoftLocalTime, density) -> tuple[float, MarkedPoint, SoftLocalTime]:
    """One soft-local-time step; ``density`` is an array or an :class:`EntranceLaw`."""
    if G.field is not field:
        raise ValueError("soft local time belongs to another field")
    xi, point = G.step(_aligned(field, density))
    return xi, point, G


def _aligned(field: PoissonField, density) -> np.ndarray:
    if isinstance(density, EntranceLaw):
        vec = np.zeros(len(field.sites))
        for s, p in zip(density.sites, density.probs):
            vec[field.index[s]] = p
        return vec
    return np.asarray(density, dtype=float)


class ExactDriver:
    """Entrance densities ``H_A(y, .)`` from the exact solver, by outer-boundary site."""

    def __init__(self, family: AnnulusFamily):
        self.family = family
        self.solver = solver_for(family.inner)

    def density(self, y: Site) -> np.ndarray:
        return self.solver.row(y)


@dataclass
class SLTRun:
    """Output of a coupled soft-local-time run."""

    excursions: list[Excursion]
    slt: SoftLocalTime
    entry_sites: list[Site]  # X_{D_0}, X_{D_1}, ...
    densities: list[np.ndarray] = field(default_factory=list)


def simulate_excursions_via_slt(
    field: PoissonField,
    family: AnnulusFamily,
    m: int,
    driver: ExactDriver | None = None,
    x_d0: Site | None = None,
    start: Site | None = None,
    rng: np.random.Generator | None = None,
    keep_densities: bool = False,
) -> SLTRun:
    """Generate ``m`` excursions of the walk through the field.

    ``X_{D_0}`` is ``x_d0`` when given; otherwise a walk from ``start``
    (drawn from ``rng``) is run to the outer boundary.  Every later
    ``X_{D_i}`` is the endpoint of the previous excursion.
    """
    driver = ExactDriver(family) if driver is None else driver
    if x_d0 is None:
        if start is None or rng is None:
            raise ValueError("need x_d0, or a start site and an rng")
        walk = Walk(family.n, start, rng)
        walk.run_until(family.outer.boundary_mask())
        x_d0 = walk.position
    if x_d0 not in set(family.outer.boundary):
        raise ValueError("X_{D_0} must lie on the outer boundary")
    G = SoftLocalTime(field)
    entries = [x_d0]
    excursions = []
    dens = []
    y = x_d0
    for _ in range(m):
        d = driver.density(y)
        if keep_densities:
            dens.append(d)
        _, point = G.step(d)
        exc = field.mark(field.point(*point.key))
        excursions.append(exc)
        y = exc.end_site
        entries.append(y)
    return SLTRun(excursions, G, entries, dens)


def reference_vector(field: PoissonField, href: EntranceLaw) -> np.ndarray:
    return _aligned(field, href)


def simulate_independent_via_slt(field: PoissonField, href: EntranceLaw, m: int) -> tuple[list[Excursion], SoftLocalTime]:
    """``m`` i.i.d. excursions with start law ``href`` from the same field.

    The soft local time stays proportional to ``href``, so points are taken
    in increasing order of ``u / href(z)``.
    """
    vec = _aligned(field, href)
    G = SoftLocalTime(field)
    excursions = []
    for _ in range(m):
        _, point = G.step(vec)
        if field.family is not None and field._root is not None:
            excursions.append(field.mark(point))
        else:
            excursions.append(Excursion(-1, point.z, None, 0, None, point=point.key))
    return excursions, G


def _ratio_sorted(field: PoissonField, href: EntranceLaw, level: float) -> np.ndarray:
    # all points with u / href(z) <= level, as sorted ratios
    qs = []
    for s, h in zip(href.sites, href.probs):
        if h <= 0:
            continue
        i = field.index[s]
        qs.append(field.heights(i, level * h) / h)
    return np.sort(np.concatenate(qs)) if qs else np.empty(0)


def count_N(field: PoissonField, href: EntranceLaw, a: float, b: float) -> int:
    """``#{theta : a H~(z) < u <= b H~(z)}`` over the support of ``href``."""
    if not 0 <= a <= b:
        raise ValueError("need 0 <= a <= b")
    total = 0
    for s, h in zip(href.sites, href.probs):
        if h <= 0:
            continue
        hs = field.heights(field.index[s], b * h)
        total += hs.size - int(np.searchsorted(hs, a * h, side="right"))
    return total


def check_U_event(
    field: PoissonField, href: EntranceLaw, m0: int, v: float, m_max: int, two_sided_only: bool = False
) -> tuple[bool, int | None]:
    """Window-concentration event over integer ``m`` in ``[m0, m_max]``.

    Requires ``N(m, (1+v)m) < 2vm`` and ``(1-v)m < N(0, m) < (1+v)m``.
    With ``two_sided_only`` only the second condition is checked; unlike
    the full event it is monotone in ``v``.  Returns ``(holds, first
    violating m)``.
    """
    if not 0 < v < 1:
        raise ValueError("v must lie in (0, 1)")
    if m_max < m0:
        raise ValueError("m_max must be >= m0")
    q = _ratio_sorted(field, href, (1 + v) * m_max)
    for m in range(m0, m_max + 1):
        below_m = int(np.searchsorted(q, m, side="right"))
        below_top = int(np.searchsorted(q, (1 + v) * m, side="right"))
        window_ok = two_sided_only or below_top - below_m < 2 * v * m
        if not (window_ok and (1 - v) * m < below_m < (1 + v) * m):
            return False, m
    return True, None


@dataclass
class InclusionCheck:
    certified: bool
    holds: bool | None
    dependent_in_independent: bool | None = None
    independent_in_dependent: bool | None = None
    reason: str = ""


def prefix_lengths(m: int, v: float) -> tuple[int, int]:
    """``(floor((1-v)m), ceil((1+3v)m))``."""
    return math.floor((1 - v) * m + 1e-12), math.ceil((1 + 3 * v) * m - 1e-12)


def verify_inclusions(
    dependent: Sequence,
    independent: Sequence,
    m: int,
    v: float,
    flatness: float,
) -> InclusionCheck:
    """Check both prefix inclusions between region-``j`` point sequences.

    ``dependent`` lists the field points (or excursions carrying them)
    selected by the walk's soft local time in region ``j``, in order;
    ``independent`` those of the i.i.d. construction.  Nothing is certified
    unless ``v >= 3 * flatness``.
    """
    if not v >= 3 * flatness:
        return InclusionCheck(False, None, reason=f"v={v} < 3*flatness={3 * flatness:.4g}")
    small, large = prefix_lengths(m, v)
    dep = [_key(e) for e in dependent]
    ind = [_key(e) for e in independent]
    if len(dep) < large or len(ind) < large:
        raise ValueError(f"need {large} points of each sequence, got {len(dep)} and {len(ind)}")
    a = set(dep[:small]) <= set(ind[:large])
    b = set(ind[:small]) <= set(dep[:large])
    return InclusionCheck(True, a and b, a, b)


def _key(e) -> tuple[int, int]:
    if isinstance(e, Excursion):
        return e.point
    if isinstance(e, MarkedPoint):
        return e.key
    return tuple(e)


def ratio_bound_holds(G: np.ndarray, href: np.ndarray, v: float, rtol: float = 1e-9) -> bool:
    """``max G/href <= (1+v) min G/href`` over the support of ``href``."""
    pos = href > 0
    r = G[pos] / href[pos]
    return bool(r.max() <= (1 + v) * r.min() * (1 + rtol) + 1e-300)


@dataclass
class CouplingReport:
    v: float
    m0: int
    m_max: int
    flatness: float
    certified: bool
    N_windows: dict = field(default_factory=dict)
    U_holds: list = field(default_factory=list)
    inclusion_checks: list = field(default_factory=list)
    ratio_bound_violations: int = 0
    ratio_bound_steps: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def region_href(field: PoissonField, href: EntranceLaw) -> np.ndarray:
    return _aligned(field, href)


__all__ = [
    "CouplingReport",
    "ExactDriver",
    "FieldExhausted",
    "InclusionCheck",
    "MarkedPoint",
    "PoissonField",
    "SLTRun",
    "SoftLocalTime",
    "check_U_event",
    "count_N",
    "prefix_lengths",
    "ratio_bound_holds",
    "simulate_excursions_via_slt",
    "simulate_independent_via_slt",
    "site_from_index",
    "slt_step",
    "verify_inclusions",
]
