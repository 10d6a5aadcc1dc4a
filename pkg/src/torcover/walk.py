"""Simple random walk on Z^2_n: stepping, hitting times and cover times.

The walk is indexed from ``t = 0`` with ``X_0`` the start site, so a walk
started on its target has hitting time 0.  Every potentially unbounded run
takes a cap; running past it raises :class:`WalkTruncated` instead of
returning a clipped value.
"""

from __future__ import annotations

import math
from typing import Union

import numpy as np

from . import _kernels as K
from .lattice import DIRECTIONS, Region, Site, site, site_from_index

BUFFER_WORDS = 2048  # 65536 steps per refill

Start = Union[Site, tuple, str, None]


class WalkTruncated(RuntimeError):
    """A run reached its step cap before the requested event."""

    def __init__(self, cap: int, uncovered: int | None = None):
        self.cap = cap
        self.uncovered = uncovered
        msg = f"walk exceeded cap of {cap} steps"
        if uncovered is not None:
            msg += f" with {uncovered} sites still uncovered"
        super().__init__(msg)


def default_cap(n: int) -> int:
    """100 times the first-order cover time ``(4/pi) n^2 ln^2 n``."""
    return max(1000, math.ceil(100 * 4 / math.pi * n * n * math.log(n) ** 2))


class Walk:
    """Single-owner walk state: position, time and a private random stream.

    Parameters
    ----------
    n : int
        Torus side length.
    start : Site, tuple, "uniform" or None
        Starting site; ``"uniform"``/``None`` draws it uniformly from ``rng``.
    rng : numpy.random.Generator
        Source of all randomness for this walk.
    """

    def __init__(self, n: int, start: Start, rng: np.random.Generator):
        if n < 2:
            raise ValueError("n must be >= 2")
        self.n = n
        self.rng = rng
        self.time = 0
        if start is None or start == "uniform":
            k = int(rng.integers(n * n))
            self.x, self.y = divmod(k, n)
        else:
            s = site(start[0], start[1], n)
            self.x, self.y = s.x, s.y
        self._words = np.empty(0, dtype=np.uint64)
        self._pos = 0

    @property
    def position(self) -> Site:
        return Site(self.x, self.y)

    @property
    def index(self) -> int:
        return self.x * self.n + self.y

    def place(self, s: Site) -> None:
        """Move the walker to ``s`` without advancing time (for restarts)."""
        self.x, self.y = s[0] % self.n, s[1] % self.n

    def _buffer(self) -> np.ndarray:
        if self._pos >= self._words.shape[0] * 32:
            self._words = self.rng.bit_generator.random_raw(BUFFER_WORDS).astype(np.uint64)
            self._pos = 0
        return self._words

    def next_direction(self) -> int:
        words = self._buffer()
        d = int((int(words[self._pos >> 5]) >> (2 * (self._pos & 31))) & 3)
        self._pos += 1
        return d

    def step(self) -> Site:
        """Advance one step in a uniformly chosen direction."""
        dx, dy = DIRECTIONS[self.next_direction()]
        self.x = (self.x + dx) % self.n
        self.y = (self.y + dy) % self.n
        self.time += 1
        return self.position

    def run_until(self, stop: np.ndarray, cap: int | None = None) -> int:
        """Step until the flat mask ``stop`` holds at the current site.

        Returns the number of steps taken (0 if already there).
        """
        if stop.dtype == np.bool_:
            stop = stop.view(np.uint8)
        if stop[self.x * self.n + self.y]:
            return 0
        cap = default_cap(self.n) if cap is None else cap
        taken = 0
        while taken < cap:
            words = self._buffer()
            x, y, pos, steps, hit = K.walk_until(
                self.x, self.y, self.n, stop, words, self._pos, cap - taken
            )
            self.x, self.y, self._pos = x, y, pos
            taken += steps
            self.time += steps
            if hit:
                return taken
        raise WalkTruncated(cap)

    def run_until_set(self, targets: Region, cap: int | None = None) -> tuple[int, Site]:
        """First entrance into ``targets``: ``(time, site)`` on this walk's clock."""
        if not len(targets):
            raise ValueError("target set is empty")
        self.run_until(targets.mask().view(np.uint8), cap)
        return self.time, self.position

    def trajectory(self, steps: int) -> np.ndarray:
        """Advance ``steps`` steps and return the visited flat positions."""
        out = np.empty(steps, dtype=np.int64)
        filled = 0
        while filled < steps:
            words = self._buffer()
            x, y, pos, k = K.walk_trajectory(self.x, self.y, self.n, words, self._pos, out[filled:])
            self.x, self.y, self._pos = x, y, pos
            filled += k
        self.time += steps
        return out

    def cover(self, visited: np.ndarray, remaining: int, max_steps: int) -> int:
        """Advance up to ``max_steps`` marking ``visited``; returns remaining count."""
        taken = 0
        while remaining > 0 and taken < max_steps:
            words = self._buffer()
            x, y, pos, steps, remaining = K.walk_cover(
                self.x, self.y, self.n, visited, remaining, words, self._pos, max_steps - taken
            )
            self.x, self.y, self._pos = x, y, pos
            taken += steps
            self.time += steps
        return remaining


def _target_mask(target: Site, n: int) -> np.ndarray:
    m = np.zeros(n * n, dtype=np.uint8)
    m[site(target[0], target[1], n).index(n)] = 1
    return m


def hitting_time(start: Start, target: Site, n: int, cap: int | None, rng: np.random.Generator) -> int:
    """``T_n(target) = min{t >= 0 : X_t = target}``.

    Raises
    ------
    WalkTruncated
        If the target is not reached within ``cap`` steps.
    """
    walk = Walk(n, start, rng)
    return walk.run_until(_target_mask(target, n), cap)


class CoverState:
    """Visited bitmap plus an unvisited counter for a walk."""

    def __init__(self, walk: Walk):
        self.walk = walk
        n = walk.n
        self.visited = np.zeros(n * n, dtype=np.uint8)
        self.visited[walk.index] = 1
        self.remaining = n * n - 1

    def advance_to(self, t: int) -> int:
        """Run the walk up to absolute time ``t`` (or until covered)."""
        if t > self.walk.time:
            self.remaining = self.walk.cover(self.visited, self.remaining, t - self.walk.time)
        return self.remaining

    @property
    def covered(self) -> bool:
        return self.remaining == 0


def cover_time(
    start: Start, n: int, cap: int | None, rng: np.random.Generator, return_last: bool = False
):
    """First time every site has been visited (the start counts at ``t = 0``).

    Returns the cover time, or ``(time, last_site)`` with ``return_last``.

    Raises
    ------
    WalkTruncated
        Carrying the number of still-uncovered sites if ``cap`` is hit.
    """
    cap = default_cap(n) if cap is None else cap
    walk = Walk(n, start, rng)
    state = CoverState(walk)
    state.advance_to(cap)
    if not state.covered:
        raise WalkTruncated(cap, state.remaining)
    if return_last:
        return walk.time, walk.position
    return walk.time


def run_until_set(walk: Walk, targets: Region, cap: int | None = None) -> tuple[int, Site, Walk]:
    """Functional form of :meth:`Walk.run_until_set` returning the walk too."""
    t, s = walk.run_until_set(targets, cap)
    return t, s, walk


def step(walk: Walk) -> Walk:
    walk.step()
    return walk


__all__ = [
    "CoverState",
    "Walk",
    "WalkTruncated",
    "cover_time",
    "default_cap",
    "hitting_time",
    "run_until_set",
    "site_from_index",
    "step",
]
