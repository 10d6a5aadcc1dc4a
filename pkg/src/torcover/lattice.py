"""Geometry of the two-dimensional discrete torus Z^2_n.

Sites are stored as reduced coordinate pairs; regions keep their sites and
inner boundary in lexicographic order so that anything derived from them
(flat indices, JSON dumps, entrance-law supports) is deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np

__all__ = [
    "AnnulusFamily",
    "DegenerateRegionError",
    "InvalidRadiusError",
    "Region",
    "Site",
    "ball",
    "box",
    "box_side",
    "disc",
    "inner_boundary",
    "neighbors",
    "site",
    "tile_boxes",
    "torus_distance",
]

# Step directions, in the order used by every walk kernel.
DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class DegenerateRegionError(ValueError):
    """Raised for regions that are empty or cover the whole torus."""


class InvalidRadiusError(ValueError):
    """Raised when a ball radius is not below half the side length."""


class Site(NamedTuple):
    x: int
    y: int

    def index(self, n: int) -> int:
        """Flat index ``x * n + y``; sorting by it is lexicographic order."""
        return self.x * n + self.y


def site(x: int, y: int, n: int) -> Site:
    """Return the site with coordinates reduced modulo ``n``."""
    return Site(x % n, y % n)


def site_from_index(idx: int, n: int) -> Site:
    return Site(idx // n, idx % n)


def neighbors(s: Site, n: int) -> list[Site]:
    """The four neighbors of ``s`` by direction (repeats are kept for n = 2)."""
    return [site(s.x + dx, s.y + dy, n) for dx, dy in DIRECTIONS]


def _check_n(n: int) -> None:
    if int(n) != n or n < 2:
        raise ValueError(f"torus side length must be an integer >= 2, got {n}")


def _centered_offset(a: int, b: int, n: int) -> int:
    # Image of b under the bijection Z_n -> [1, n] sending a to ceil(n/2),
    # minus ceil(n/2).
    c = -(-n // 2)
    return (b - a + c - 1) % n + 1 - c


def torus_distance(a: Site, b: Site, n: int, norm: str = "euclidean") -> float:
    """Distance between two sites after centering ``a`` in ``[1, n]^2``.

    Parameters
    ----------
    a, b : Site
        Sites of the torus.
    n : int
        Side length.
    norm : {"euclidean", "l1", "linf"}
        Norm applied to the centered displacement.
    """
    dx = _centered_offset(a.x, b.x, n)
    dy = _centered_offset(a.y, b.y, n)
    if norm == "euclidean":
        return math.hypot(dx, dy)
    if norm == "l1":
        return float(abs(dx) + abs(dy))
    if norm == "linf":
        return float(max(abs(dx), abs(dy)))
    raise ValueError(f"unknown norm {norm!r}")


def inner_boundary(sites: Iterable[Site], n: int) -> frozenset[Site]:
    """Sites of ``sites`` having at least one neighbor outside the set."""
    members = frozenset(sites)
    if not members:
        raise DegenerateRegionError("region is empty")
    if len(members) >= n * n:
        raise DegenerateRegionError("region covers the whole torus")
    return frozenset(
        s for s in members if any(t not in members for t in neighbors(s, n))
    )


@dataclass(frozen=True)
class Region:
    """Finite subset of the torus with its cached inner boundary."""

    n: int
    sites: tuple[Site, ...]
    boundary: tuple[Site, ...]

    @classmethod
    def from_sites(cls, sites: Iterable[Site], n: int) -> "Region":
        _check_n(n)
        members = {site(s[0], s[1], n) for s in sites}
        bnd = inner_boundary(members, n)
        return cls(n, tuple(sorted(members)), tuple(sorted(bnd)))

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, s: object) -> bool:
        return s in self.site_set

    @cached_property
    def site_set(self) -> frozenset[Site]:
        return frozenset(self.sites)

    @cached_property
    def indices(self) -> np.ndarray:
        return np.array([s.index(self.n) for s in self.sites], dtype=np.int64)

    @cached_property
    def boundary_indices(self) -> np.ndarray:
        return np.array([s.index(self.n) for s in self.boundary], dtype=np.int64)

    def mask(self) -> np.ndarray:
        """Flat boolean membership array of length ``n * n``."""
        m = np.zeros(self.n * self.n, dtype=np.bool_)
        m[self.indices] = True
        return m

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.n * self.n, dtype=np.bool_)
        m[self.boundary_indices] = True
        return m

    def to_json(self) -> str:
        return json.dumps([[s.x, s.y] for s in self.sites])

    @classmethod
    def from_json(cls, text: str, n: int) -> "Region":
        return cls.from_sites((Site(x, y) for x, y in json.loads(text)), n)


def disc(center: Site, r: float, n: int) -> Region:
    """Closed Euclidean disc around ``center`` without the radius check.

    Used where a radius of exactly ``n / 2`` is geometrically meaningful
    (the literal bijection image is still a proper subset of the torus).
    """
    _check_n(n)
    c = -(-n // 2)
    members = []
    for dx in range(1 - c, n - c + 1):
        for dy in range(1 - c, n - c + 1):
            if dx * dx + dy * dy <= r * r:
                members.append(site(center.x + dx, center.y + dy, n))
    return Region.from_sites(members, n)


def ball(center: Site, r: float, n: int) -> Region:
    """Discrete ball ``B(center, r)``: sites at Euclidean torus distance <= r.

    Raises
    ------
    InvalidRadiusError
        If ``r >= n / 2``.
    """
    if not r > 0:
        raise InvalidRadiusError(f"radius must be positive, got {r}")
    if r >= n / 2:
        raise InvalidRadiusError(f"radius {r} must be < n/2 = {n / 2}")
    return disc(center, r, n)


def box(corner: Site, size: int, n: int) -> Region:
    """Axis-aligned ``size x size`` box with lower-left corner ``corner``."""
    return Region.from_sites(
        (site(corner.x + i, corner.y + j, n) for i in range(size) for j in range(size)),
        n,
    )


def box_side(n: int, alpha: float) -> int:
    """``floor(n^alpha)``, guarded against round-off just below an integer."""
    return math.floor(n**alpha + 1e-9)


def box_corners(n: int, alpha: float) -> list[Site]:
    """Lower-left corners of the serpentine box tiling, in enumeration order.

    Rows of boxes are stacked bottom to top; odd rows run left to right and
    even rows right to left, so consecutive boxes share an edge.  Box ``k``
    of a row starts at ``k * size``; when ``size`` does not divide ``n`` the
    last box of each row (column) wraps around and overlaps the first.
    """
    _check_n(n)
    size = box_side(n, alpha)
    if size < 1:
        raise ValueError(f"floor(n**alpha) must be >= 1 (n={n}, alpha={alpha})")
    count = -(-n // size)
    corners = []
    for row in range(count):
        cols = range(count) if row % 2 == 0 else range(count - 1, -1, -1)
        for col in cols:
            corners.append(Site((col * size) % n, (row * size) % n))
    return corners


def tile_boxes(n: int, alpha: float) -> list[Region]:
    """Tile the torus with ``ceil(n / floor(n^alpha))^2`` boxes of side ``floor(n^alpha)``."""
    size = box_side(n, alpha)
    return [box(c, size, n) for c in box_corners(n, alpha)]


@dataclass(frozen=True)
class AnnulusFamily:
    """Pairs ``(A_j, A'_j)`` between whose boundaries excursions are cut.

    Validated on construction: ``A_j`` inside ``A'_j`` and away from its
    boundary, the ``A'_j`` pairwise disjoint, and the boundary of the union
    of the ``A'_j`` equal to the union of their boundaries.
    """

    n: int
    pairs: tuple[tuple[Region, Region], ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("annulus family needs at least one pair")
        for j, (inner, outer) in enumerate(self.pairs):
            if inner.n != self.n or outer.n != self.n:
                raise ValueError(f"pair {j} lives on a different torus")
            if not inner.site_set <= outer.site_set:
                raise ValueError(f"A_{j} is not contained in A'_{j}")
            if inner.site_set & set(outer.boundary):
                raise ValueError(f"A_{j} meets the boundary of A'_{j}")
        for i in range(len(self.pairs)):
            for j in range(i + 1, len(self.pairs)):
                if self.pairs[i][1].site_set & self.pairs[j][1].site_set:
                    raise ValueError(f"A'_{i} and A'_{j} intersect")
        union_outer = set().union(*(o.site_set for _, o in self.pairs))
        union_bnd = set().union(*(o.boundary for _, o in self.pairs))
        if inner_boundary(union_outer, self.n) != union_bnd:
            raise ValueError("boundary of A' differs from the union of the boundaries of A'_j")

    @classmethod
    def of(cls, pairs: Iterable[tuple[Region, Region]]) -> "AnnulusFamily":
        pairs = tuple(pairs)
        return cls(pairs[0][0].n, pairs)

    @classmethod
    def balls(cls, centers: Iterable[Site], r: float, R: float, n: int) -> "AnnulusFamily":
        return cls.of((ball(c, r, n), ball(c, R, n)) for c in centers)

    def __len__(self) -> int:
        return len(self.pairs)

    @cached_property
    def inner(self) -> Region:
        """``A``, the union of the inner regions."""
        return Region.from_sites((s for a, _ in self.pairs for s in a.sites), self.n)

    @cached_property
    def outer(self) -> Region:
        """``A'``, the union of the outer regions."""
        return Region.from_sites((s for _, b in self.pairs for s in b.sites), self.n)

    @cached_property
    def inner_boundary_labels(self) -> np.ndarray:
        """Flat array: ``j + 1`` on the boundary of ``A_j``, 0 elsewhere."""
        lab = np.zeros(self.n * self.n, dtype=np.int32)
        for j, (a, _) in enumerate(self.pairs):
            lab[a.boundary_indices] = j + 1
        return lab

    @cached_property
    def outer_boundary_labels(self) -> np.ndarray:
        lab = np.zeros(self.n * self.n, dtype=np.int32)
        for j, (_, b) in enumerate(self.pairs):
            lab[b.boundary_indices] = j + 1
        return lab

    def region_of(self, s: Site) -> int:
        """Index ``j`` of the outer region containing ``s``, or -1."""
        for j, (_, b) in enumerate(self.pairs):
            if s in b:
                return j
        return -1
