"""Compiled inner loops for walks on Z^2_n.

Every kernel consumes step directions from a buffer of raw 64-bit words,
two bits per step (32 steps per word), starting at direction offset
``pos``.  Kernels return the updated offset so the caller can refill the
buffer and resume; the consumed sequence is therefore independent of how
the work is split across calls.

Direction codes: 0 -> (+1, 0), 1 -> (-1, 0), 2 -> (0, +1), 3 -> (0, -1).
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _direction(words, pos):
    return (words[pos >> 5] >> np.uint64(2 * (pos & 31))) & np.uint64(3)


@njit(cache=True, inline="always")
def _move(x, y, d, n):
    if d == 0:
        x += 1
        if x == n:
            x = 0
    elif d == 1:
        x -= 1
        if x < 0:
            x = n - 1
    elif d == 2:
        y += 1
        if y == n:
            y = 0
    else:
        y -= 1
        if y < 0:
            y = n - 1
    return x, y


@njit(cache=True)
def walk_until(x, y, n, stop, words, pos, max_steps):
    """Step until ``stop[x * n + y]`` is set, ``max_steps`` or buffer end.

    Returns ``(x, y, pos, steps, hit)``.
    """
    end = words.shape[0] * 32
    steps = 0
    while steps < max_steps and pos < end:
        x, y = _move(x, y, _direction(words, pos), n)
        pos += 1
        steps += 1
        if stop[x * n + y]:
            return x, y, pos, steps, True
    return x, y, pos, steps, False


@njit(cache=True)
def walk_cover(x, y, n, visited, remaining, words, pos, max_steps):
    """Step while marking ``visited`` until nothing remains unvisited.

    Returns ``(x, y, pos, steps, remaining)``.
    """
    end = words.shape[0] * 32
    steps = 0
    while remaining > 0 and steps < max_steps and pos < end:
        x, y = _move(x, y, _direction(words, pos), n)
        pos += 1
        steps += 1
        k = x * n + y
        if visited[k] == 0:
            visited[k] = 1
            remaining -= 1
    return x, y, pos, steps, remaining


@njit(cache=True)
def walk_trajectory(x, y, n, words, pos, out):
    """Fill ``out`` with successive flat positions; returns ``(x, y, pos, filled)``."""
    end = words.shape[0] * 32
    filled = 0
    m = out.shape[0]
    while filled < m and pos < end:
        x, y = _move(x, y, _direction(words, pos), n)
        pos += 1
        out[filled] = x * n + y
        filled += 1
    return x, y, pos, filled


@njit(cache=True)
def decompose_positions(traj, t0, inner_lab, outer_lab, state, ev_time, ev_kind, ev_region, ev_site):
    """Streaming excursion decomposition over a chunk of flat positions.

    ``traj[k]`` is the position at time ``t0 + k``.  ``state`` holds
    ``[phase, region, n_events]`` where phase 0 waits for the first visit
    to the outer boundary, 1 waits for the inner boundary and 2 waits for
    the outer boundary again.  Events are written as (time, kind, region,
    site) with kind 0 = D0, 1 = S, 2 = D.  Stops early when the event buffers
    would overflow; returns the number of positions consumed.
    """
    phase = state[0]
    region = state[1]
    ne = state[2]
    cap = ev_time.shape[0]
    k = 0
    m = traj.shape[0]
    while k < m:
        if ne >= cap:
            break
        p = traj[k]
        if phase == 0:
            if outer_lab[p] > 0:
                ev_time[ne] = t0 + k
                ev_kind[ne] = 0
                ev_site[ne] = p
                ev_region[ne] = outer_lab[p] - 1
                ne += 1
                phase = 1
        elif phase == 1:
            if inner_lab[p] > 0:
                region = inner_lab[p] - 1
                ev_time[ne] = t0 + k
                ev_kind[ne] = 1
                ev_site[ne] = p
                ev_region[ne] = region
                ne += 1
                phase = 2
        else:
            if outer_lab[p] > 0:
                ev_time[ne] = t0 + k
                ev_kind[ne] = 2
                ev_site[ne] = p
                ev_region[ne] = outer_lab[p] - 1
                ne += 1
                phase = 1
        k += 1
    state[0] = phase
    state[1] = region
    state[2] = ne
    return k


@njit(cache=True)
def count_completed_excursions(x, y, n, inner_lab, outer_lab, state, words, pos, target, t_out):
    """Run the decomposition directly on the walk, recording completion times.

    ``state`` is ``[phase, completed, time]``; ``t_out[i]`` receives
    ``D_{i+1}``.  Stops once ``target`` excursions are complete or the
    buffer is exhausted.  Returns ``(x, y, pos)``.
    """
    end = words.shape[0] * 32
    phase = state[0]
    done = state[1]
    t = state[2]
    while done < target and pos < end:
        x, y = _move(x, y, _direction(words, pos), n)
        pos += 1
        t += 1
        p = x * n + y
        if phase == 0:
            if outer_lab[p] > 0:
                phase = 1
        elif phase == 1:
            if inner_lab[p] > 0:
                phase = 2
        elif outer_lab[p] > 0:
            t_out[done] = t
            done += 1
            phase = 1
    state[0] = phase
    state[1] = done
    state[2] = t
    return x, y, pos


@njit(cache=True)
def small_torus_excursions(x, y, n, in_box, in_far, state, words, pos, budget, durations):
    """Alternating box-to-far-set excursions with an in-excursion time budget.

    ``state`` is ``[phase, j, accumulated, start_time, time]``: phase 1 means
    inside an excursion that started in the box and ends on the far set,
    phase 0 means returning to the box.  The run stops as soon as the
    accumulated excursion time reaches ``budget``; ``durations[j]`` records
    the length of each completed excursion.  Returns ``(x, y, pos, finished)``.
    """
    end = words.shape[0] * 32
    phase = state[0]
    j = state[1]
    acc = state[2]
    start = state[3]
    t = state[4]
    finished = False
    while pos < end:
        if phase == 1 and acc + (t - start) >= budget:
            finished = True
            break
        x, y = _move(x, y, _direction(words, pos), n)
        pos += 1
        t += 1
        p = x * n + y
        if phase == 1:
            if in_far[p]:
                if acc + (t - start) >= budget:
                    finished = True
                    break
                acc += t - start
                if j < durations.shape[0]:
                    durations[j] = t - start
                j += 1
                phase = 0
        elif in_box[p]:
            start = t
            phase = 1
    state[0] = phase
    state[1] = j
    state[2] = acc
    state[3] = start
    state[4] = t
    return x, y, pos, finished
