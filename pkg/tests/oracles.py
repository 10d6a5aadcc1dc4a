"""Reference computations that share no code with the package.

Values produced here are frozen into the tests as literals; the functions
stay so that the frozen numbers can be regenerated.
"""

from __future__ import annotations

import math

import numpy as np

STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def brute_distance(a, b, n, norm="euclidean"):
    """Minimum over all Z^2 representatives of ``b - a`` (window of one period)."""
    best = math.inf
    for kx in (-1, 0, 1):
        for ky in (-1, 0, 1):
            dx = b[0] - a[0] + kx * n
            dy = b[1] - a[1] + ky * n
            d = {"euclidean": math.hypot(dx, dy), "l1": abs(dx) + abs(dy), "linf": max(abs(dx), abs(dy))}[norm]
            best = min(best, d)
    return best


def brute_ball(center, r, n):
    cx, cy = center
    return {
        ((cx + dx) % n, (cy + dy) % n)
        for dx in range(-n, n + 1)
        for dy in range(-n, n + 1)
        if dx * dx + dy * dy <= r * r + 1e-12
    }


def brute_boundary(sites, n):
    return {
        (x, y) for (x, y) in sites if any(((x + dx) % n, (y + dy) % n) not in sites for dx, dy in STEPS)
    }


def exact_cover_expectation(n):
    """``E[T_cov]`` from ``(0, 0)`` by a linear solve over (visited set, position)."""
    N = n * n
    full = (1 << N) - 1
    states = [(mask, p) for mask in range(1 << N) for p in range(N) if mask >> p & 1 and mask != full]
    index = {s: i for i, s in enumerate(states)}
    M = np.eye(len(states))
    rhs = np.ones(len(states))
    for (mask, p), i in index.items():
        x, y = divmod(p, n)
        for dx, dy in STEPS:
            q = ((x + dx) % n) * n + (y + dy) % n
            m2 = mask | (1 << q)
            if m2 != full:
                M[i, index[(m2, q)]] -= 0.25
    h = np.linalg.solve(M, rhs)
    return float(h[index[(1, 0)]])


def exact_hitting_expectation(n, start, target):
    """``E_start[T(target)]`` by a dense linear solve."""
    N = n * n
    t = target[0] * n + target[1]
    M = np.eye(N)
    rhs = np.ones(N)
    for p in range(N):
        if p == t:
            M[p] = 0
            M[p, p] = 1
            rhs[p] = 0
            continue
        x, y = divmod(p, n)
        for dx, dy in STEPS:
            M[p, ((x + dx) % n) * n + (y + dy) % n] -= 0.25
    return float(np.linalg.solve(M, rhs)[start[0] * n + start[1]])


def dense_entrance_law(sites, boundary, x, n):
    """``H_A(x, .)`` by value iteration on the full torus (independent of sparse LU).

    Returns a dict over ``boundary``.
    """
    sites = set(sites)
    out = {}
    idx = {(a, b): a * n + b for a in range(n) for b in range(n)}
    for y in boundary:
        h = np.zeros(n * n)
        h[idx[y]] = 1.0
        free = [idx[s] for s in idx if s not in sites]
        nbrs = {
            k: [((k // n + dx) % n) * n + (k % n + dy) % n for dx, dy in STEPS] for k in free
        }
        for _ in range(20000):
            old = h.copy()
            for k in free:
                h[k] = 0.25 * sum(old[j] for j in nbrs[k])
            if np.max(np.abs(h - old)) < 1e-13:
                break
        out[y] = h[idx[x]]
    return out


def hand_trajectory():
    """A 20-step path on Z^2_16 around the annulus ``B((8,8),1) subset B((8,8),3)``.

    Returns ``(path, D0, starts, ends)``, checked by hand: the walk enters
    the outer boundary at t=1, touches the inner boundary at t=3 and t=11
    and returns to the outer boundary at t=5 and t=13.
    """
    path = [(8, 12), (8, 11), (8, 10), (8, 9), (8, 10), (8, 11), (8, 12), (9, 12), (9, 11), (8, 11),
            (8, 10), (8, 9), (9, 9), (10, 9), (11, 9), (12, 9), (12, 10), (12, 11), (12, 12), (11, 12),
            (10, 12)]
    return path, 1, [3, 11], [5, 13]


def poisson_first_selection(heights, density):
    """Direct evaluation of ``inf{s : s * density(z) >= u}`` over given field points."""
    best, arg = math.inf, None
    for z, hs in heights.items():
        if density.get(z, 0) > 0:
            for u in hs:
                s = u / density[z]
                if s < best:
                    best, arg = s, (z, u)
    return best, arg


if __name__ == "__main__":
    print("cover n=2:", exact_cover_expectation(2))
    print("hit n=2:", exact_hitting_expectation(2, (0, 0), (1, 1)))
    print("distance:", brute_distance((0, 0), (3, 4), 16))
    b = brute_ball((8, 8), 2.5, 16)
    print("ball:", len(b), len(brute_boundary(b, 16)))
    print("first selection:", poisson_first_selection({"a": [1.0], "b": [3.0]}, {"a": 0.5, "b": 0.5}))
