"""Entrance laws ``H_A(x, .)`` and flatness of conditional entrance measures.

The exact law solves the discrete Dirichlet problem off ``A``: for each
``y`` on the boundary of ``A``, ``h(z) = P_z[X_{T(A)} = y]`` is harmonic on
the complement and equals the indicator of ``y`` on ``A``.  One sparse LU
factorization of ``I - P`` restricted to the complement handles every
boundary site at once and yields the law from every outside start.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import DIRECTIONS, AnnulusFamily, Region, Site, site
from .walk import Walk

RESIDUAL_TOL = 1e-10


class InvalidStartError(ValueError):
    """The walk would start inside the target set."""


class ZeroConditioningError(ValueError):
    """The conditioning event has probability zero."""


@dataclass(frozen=True)
class EntranceLaw:
    """Probability vector over an ordered set of boundary sites."""

    sites: tuple[Site, ...]
    probs: np.ndarray

    def __post_init__(self):
        if len(self.sites) != len(self.probs):
            raise ValueError("sites and probs differ in length")
        if np.any(self.probs < 0):
            raise ValueError("negative probability")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {np.sum(self.probs)!r}")

    def __getitem__(self, s: Site) -> float:
        return float(self.probs[self.sites.index(s)])

    def as_dict(self) -> dict[Site, float]:
        return dict(zip(self.sites, map(float, self.probs)))

    def total_variation(self, other: "EntranceLaw") -> float:
        a, b = self.as_dict(), other.as_dict()
        return 0.5 * sum(abs(a.get(s, 0.0) - b.get(s, 0.0)) for s in set(a) | set(b))

    def to_json(self) -> str:
        return json.dumps(
            {"sites": [[s.x, s.y] for s in self.sites], "probs": [float(p) for p in self.probs]}
        )

    @classmethod
    def from_json(cls, text: str) -> "EntranceLaw":
        d = json.loads(text)
        return cls(tuple(Site(x, y) for x, y in d["sites"]), np.asarray(d["probs"], dtype=float))


class EntranceSolver:
    """Exact entrance laws into ``A`` from every site outside it."""

    def __init__(self, A: Region):
        n = A.n
        self.region = A
        self.n = n
        inside = A.mask()
        outside = np.flatnonzero(~inside)
        if outside.size == 0:
            raise ValueError("region covers the torus")
        self.outside = outside
        row_of = -np.ones(n * n, dtype=np.int64)
        row_of[outside] = np.arange(outside.size)
        self._row_of = row_of
        col_of = -np.ones(n * n, dtype=np.int64)
        col_of[A.boundary_indices] = np.arange(len(A.boundary))

        rows, cols, vals = [], [], []
        brow, bcol, bval = [], [], []
        for r, k in enumerate(outside):
            x, y = divmod(int(k), n)
            rows.append(r)
            cols.append(r)
            vals.append(1.0)
            for dx, dy in DIRECTIONS:
                nb = ((x + dx) % n) * n + (y + dy) % n
                if inside[nb]:
                    brow.append(r)
                    bcol.append(col_of[nb])
                    bval.append(0.25)
                else:
                    rows.append(r)
                    cols.append(row_of[nb])
                    vals.append(-0.25)
        m = outside.size
        M = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
        B = sp.csr_matrix((bval, (brow, bcol)), shape=(m, len(A.boundary))).toarray()
        H = spla.splu(M).solve(B)
        residual = np.max(np.abs(M @ H - B)) if H.size else 0.0
        if residual > RESIDUAL_TOL:
            raise RuntimeError(f"entrance solve residual {residual:.3g} above tolerance")
        np.clip(H, 0.0, None, out=H)
        self.table = H

    def row(self, x: Site) -> np.ndarray:
        """Entrance probabilities from ``x``, aligned with ``region.boundary``."""
        k = site(x[0], x[1], self.n).index(self.n)
        r = self._row_of[k]
        if r < 0:
            raise InvalidStartError(f"start {tuple(x)} lies inside the target region")
        return self.table[r]

    def law(self, x: Site) -> EntranceLaw:
        p = self.row(x).copy()
        return EntranceLaw(self.region.boundary, p / p.sum())


@lru_cache(maxsize=64)
def solver_for(A: Region) -> EntranceSolver:
    return EntranceSolver(A)


def entrance_law_exact(A: Region, x: Site, n: int) -> EntranceLaw:
    """``H_A(x, .)`` computed by the harmonic linear solve.

    Raises
    ------
    InvalidStartError
        If ``x`` is in ``A``.
    """
    if A.n != n:
        raise ValueError("region does not live on Z^2_n")
    return solver_for(A).law(x)


def entrance_law_mc(A: Region, x, n: int, reps: int, rng: np.random.Generator, cap: int | None = None) -> EntranceLaw:
    """Empirical entrance law from ``reps`` walks started at ``x``.

    ``x`` is a site outside ``A`` or an :class:`EntranceLaw`-like start
    distribution, from which each start is drawn independently.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    mask = A.mask().view(np.uint8)
    col_of = {s.index(n): i for i, s in enumerate(A.boundary)}
    counts = np.zeros(len(A.boundary), dtype=np.int64)
    if isinstance(x, EntranceLaw):
        starts = [x.sites[i] for i in rng.choice(len(x.sites), size=reps, p=x.probs)]
    else:
        if site(x[0], x[1], n) in A:
            raise InvalidStartError(f"start {tuple(x)} lies inside the target region")
        starts = None
    walk = Walk(n, starts[0] if starts else x, rng)
    for i in range(reps):
        s = starts[i] if starts else x
        walk.place(s)
        walk.run_until(mask, cap)
        counts[col_of[walk.index]] += 1
    return EntranceLaw(A.boundary, counts / reps)


def conditional_entrance(family: AnnulusFamily, y: Site, j: int, n: int) -> EntranceLaw:
    """``P_y[X_{T(A)} = . | X_{T(A)} in A_j]`` as a law on the boundary of ``A_j``."""
    p = conditional_row(family, y, j)
    return EntranceLaw(family.pairs[j][0].boundary, p)


def _region_columns(family: AnnulusFamily, j: int) -> np.ndarray:
    cols = {s: i for i, s in enumerate(family.inner.boundary)}
    return np.array([cols[s] for s in family.pairs[j][0].boundary], dtype=np.int64)


def conditional_row(family: AnnulusFamily, y: Site, j: int) -> np.ndarray:
    row = solver_for(family.inner).row(y)[_region_columns(family, j)]
    mass = row.sum()
    if mass <= 0:
        raise ZeroConditioningError(f"walk from {tuple(y)} cannot enter A_{j} first")
    return row / mass


def default_anchor(family: AnnulusFamily) -> Site:
    """A site outside ``A'`` maximizing its distance to ``A`` (lexicographic ties)."""
    n = family.n
    outer = family.outer.mask()
    inner = np.array([(s.x, s.y) for s in family.inner.sites])
    best, best_d = None, -1.0
    for k in np.flatnonzero(~outer):
        x, y = divmod(int(k), n)
        dx = np.abs(inner[:, 0] - x)
        dy = np.abs(inner[:, 1] - y)
        dx = np.minimum(dx, n - dx)
        dy = np.minimum(dy, n - dy)
        d = float(np.min(dx * dx + dy * dy))
        if d > best_d:
            best, best_d = Site(x, y), d
    if best is None:
        raise ValueError("A' covers the torus; no anchor available")
    return best


def reference_laws(family: AnnulusFamily, anchor: Site | None = None) -> list[EntranceLaw]:
    """``H~_j(x) = P_{z0}[X_{T(A_j)} = x]`` for an anchor ``z0`` outside ``A'``."""
    z0 = default_anchor(family) if anchor is None else anchor
    if z0 in family.outer:
        raise ValueError("anchor must lie outside A'")
    return [entrance_law_exact(a, z0, family.n) for a, _ in family.pairs]


def flatness(family: AnnulusFamily, reference: list[EntranceLaw], n: int) -> float:
    """``sup |P_y[X_{T(A)} = x | X_{T(A)} in A_j] / H~_j(x) - 1|``.

    The supremum runs over ``j``, ``y`` on the boundary of ``A'`` and ``x``
    on the boundary of ``A_j``.  Returns ``inf`` when the reference vanishes
    where a conditional law does not.
    """
    worst = 0.0
    for j, (a, _) in enumerate(family.pairs):
        ref = np.array([reference[j][s] for s in a.boundary])
        for y in family.outer.boundary:
            try:
                cond = conditional_row(family, y, j)
            except ZeroConditioningError:
                continue
            pos = ref > 0
            if np.any(cond[~pos] > 0):
                return math.inf
            worst = max(worst, float(np.max(np.abs(cond[pos] / ref[pos] - 1.0))))
    return worst
