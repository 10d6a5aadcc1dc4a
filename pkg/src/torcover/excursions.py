"""Decomposition of a walk into excursions between ``dA`` and ``dA'``.

Stopping times follow the usual convention: ``D_0`` is the first visit to
the outer boundary (time 0 allowed), ``S_k`` the next visit to the inner
boundary after ``D_{k-1}`` and ``D_k`` the next visit to the outer boundary
after ``S_k``.  The piece of trajectory before ``D_0`` never counts as an
excursion, even when the walk starts inside ``A``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .lattice import AnnulusFamily, Site, disc, site_from_index
from .walk import Walk

CHUNK = 1 << 16


@dataclass
class Excursion:
    """One walk segment from ``dA_j`` to its first visit of ``dA'_j``."""

    region_index: int
    start_site: Site
    end_site: Site | None
    start_time: int
    end_time: int | None
    path: np.ndarray | None = None
    incomplete: bool = False
    point: tuple[int, int] | None = None  # field point when built from soft local times

    @property
    def duration(self) -> int | None:
        return None if self.end_time is None else self.end_time - self.start_time

    def sites(self, n: int) -> list[Site]:
        if self.path is None:
            raise ValueError("excursion path was not stored")
        return [site_from_index(int(k), n) for k in self.path]


@dataclass
class ExcursionSchedule:
    """``D_0`` and the ``(S_i, D_i, j_i)`` triples of a decomposed run."""

    n_regions: int
    horizon: int
    D0: int | None = None
    starts: list[int] = field(default_factory=list)
    ends: list[int | None] = field(default_factory=list)
    regions: list[int] = field(default_factory=list)

    @property
    def incomplete(self) -> bool:
        return bool(self.ends) and self.ends[-1] is None

    @property
    def d0_resolved(self) -> bool:
        return self.D0 is not None

    def region_indices(self, j: int) -> list[int]:
        """``sigma^{(j)}``: positions (0-based) of the region-``j`` excursions."""
        return [i for i, r in enumerate(self.regions) if r == j]

    def completion_times(self) -> list[int]:
        return [d for d in self.ends if d is not None]

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_regions": self.n_regions,
                "horizon": self.horizon,
                "D0": self.D0,
                "excursions": [[s, d, j] for s, d, j in zip(self.starts, self.ends, self.regions)],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ExcursionSchedule":
        d = json.loads(text)
        sched = cls(d["n_regions"], d["horizon"], d["D0"])
        for s, e, j in d["excursions"]:
            sched.starts.append(s)
            sched.ends.append(e)
            sched.regions.append(j)
        return sched


class Decomposer:
    """Streaming fold of a trajectory into an :class:`ExcursionSchedule`."""

    def __init__(self, family: AnnulusFamily, horizon: int):
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        self.family = family
        self.schedule = ExcursionSchedule(len(family), horizon)
        self._inner = family.inner_boundary_labels
        self._outer = family.outer_boundary_labels
        self._state = np.zeros(3, dtype=np.int64)
        self._ev_time = np.empty(4096, dtype=np.int64)
        self._ev_kind = np.empty(4096, dtype=np.int64)
        self._ev_region = np.empty(4096, dtype=np.int64)
        self._ev_site = np.empty(4096, dtype=np.int64)
        self.t = 0  # time of the next position to be fed
        self.d0_site: Site | None = None
        self.start_sites: list[Site] = []
        self.end_sites: list[Site | None] = []

    def feed(self, positions: np.ndarray) -> None:
        positions = np.ascontiguousarray(positions, dtype=np.int64)
        done = 0
        while done < positions.shape[0]:
            self._state[2] = 0
            k = K.decompose_positions(
                positions[done:], self.t, self._inner, self._outer, self._state,
                self._ev_time, self._ev_kind, self._ev_region, self._ev_site,
            )
            self._absorb(int(self._state[2]))
            done += k
            self.t += k

    def _absorb(self, count: int) -> None:
        s = self.schedule
        n = self.family.n
        for t, kind, j, p in zip(
            self._ev_time[:count], self._ev_kind[:count], self._ev_region[:count], self._ev_site[:count]
        ):
            if kind == 0:
                s.D0 = int(t)
                self.d0_site = site_from_index(int(p), n)
            elif kind == 1:
                s.starts.append(int(t))
                s.ends.append(None)
                s.regions.append(int(j))
                self.start_sites.append(site_from_index(int(p), n))
                self.end_sites.append(None)
            else:
                s.ends[-1] = int(t)
                self.end_sites[-1] = site_from_index(int(p), n)


def _driver_positions(driver, n: int, horizon: int) -> Iterable[np.ndarray]:
    if isinstance(driver, Walk):
        yield np.array([driver.index], dtype=np.int64)
        remaining = horizon
        while remaining > 0:
            k = min(CHUNK, remaining)
            yield driver.trajectory(k)
            remaining -= k
        return
    arr = np.asarray(driver)
    if arr.ndim == 2:
        arr = (arr[:, 0] % n) * n + arr[:, 1] % n
    yield arr[: horizon + 1].astype(np.int64)


def decompose(driver, family: AnnulusFamily, horizon: int, store_paths: bool = False):
    """Cut ``X_0, ..., X_horizon`` into excursions.

    Parameters
    ----------
    driver : Walk or array-like
        A walk (advanced by ``horizon`` steps) or an explicit trajectory,
        given either as flat indices or as ``(x, y)`` rows.
    family : AnnulusFamily
    horizon : int
        Last observed time.
    store_paths : bool
        Keep each excursion's sites; otherwise only endpoints and times.

    Returns
    -------
    (ExcursionSchedule, list of Excursion)
    """
    n = family.n
    dec = Decomposer(family, horizon)
    kept = []
    for chunk in _driver_positions(driver, n, horizon):
        dec.feed(chunk)
        if store_paths:
            kept.append(chunk)
    sched = dec.schedule
    sched.horizon = dec.t - 1
    traj = np.concatenate(kept) if store_paths else None
    excursions = []
    for i, (s, d, j) in enumerate(zip(sched.starts, sched.ends, sched.regions)):
        end = d if d is not None else sched.horizon
        excursions.append(
            Excursion(
                region_index=j,
                start_site=dec.start_sites[i],
                end_site=dec.end_sites[i],
                start_time=s,
                end_time=d,
                path=traj[s : end + 1].copy() if traj is not None else None,
                incomplete=d is None,
            )
        )
    return sched, excursions


def count_excursions(schedule: ExcursionSchedule, t: int) -> tuple[np.ndarray, int]:
    """``zeta_j(t)`` per region and their total ``zeta(t)``.

    An excursion counts as soon as it has started (``S <= t``), so the one
    in progress at time ``t`` is included.
    """
    if t > schedule.horizon:
        raise ValueError(f"t={t} beyond the decomposed horizon {schedule.horizon}")
    counts = np.zeros(schedule.n_regions, dtype=np.int64)
    for s, j in zip(schedule.starts, schedule.regions):
        if s > t:
            break
        counts[j] += 1
    return counts, int(counts.sum())


def completion_times(
    n: int, r: float, R: float, start: Site, j_max: int, rng: np.random.Generator
) -> np.ndarray:
    """``D_1, ..., D_{j_max}`` for the single annulus between ``B(0, r)`` and ``B(0, R)``."""
    center = Site(0, 0)
    inner, outer = disc(center, r, n), disc(center, R, n)
    fam = AnnulusFamily.of([(inner, outer)])
    walk = Walk(n, start, rng)
    state = np.zeros(3, dtype=np.int64)
    out = np.zeros(j_max, dtype=np.int64)
    # time 0 may already be D_0
    if fam.outer_boundary_labels[walk.index] > 0:
        state[0] = 1
    while state[1] < j_max:
        words = walk._buffer()
        x, y, pos = K.count_completed_excursions(
            walk.x, walk.y, n, fam.inner_boundary_labels, fam.outer_boundary_labels,
            state, words, walk._pos, j_max, out,
        )
        walk.x, walk.y, walk._pos = x, y, pos
    return out


def excursion_duration_stats(
    n: int,
    r: float,
    R: float,
    start: Site,
    j_max: int,
    reps: int,
    rng: np.random.Generator,
    deltas: Sequence[float] = (0.5,),
    js: Sequence[int] | None = None,
) -> dict:
    """Empirical ``P[D_j <= (1 + delta) (2 n^2 ln(R/r) / pi) j]``.

    Returns a dict with the grid of ``deltas`` and ``js`` and a
    ``fractions`` array of shape ``(len(deltas), len(js))`` computed on
    shared replicas.
    """
    if not 0 < r < R <= n / 2:
        raise ValueError("need 0 < r < R <= n/2")
    js = list(range(1, j_max + 1)) if js is None else list(js)
    if max(js) > j_max:
        raise ValueError("requested j beyond j_max")
    unit = 2 * n * n * math.log(R / r) / math.pi
    D = np.empty((reps, j_max), dtype=np.int64)
    for i in range(reps):
        D[i] = completion_times(n, r, R, start, j_max, rng)
    fractions = np.empty((len(deltas), len(js)))
    for a, delta in enumerate(deltas):
        for b, j in enumerate(js):
            fractions[a, b] = np.mean(D[:, j - 1] <= (1 + delta) * unit * j)
    return {"deltas": list(deltas), "js": js, "fractions": fractions, "unit": unit, "D": D}
