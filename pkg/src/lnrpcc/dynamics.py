"""Compiled particle rules and the iteration loop.

Every rule works in place on plain arrays so the same functions serve the
compiled loop in :func:`advance` and direct calls from Python. Randomness
comes from a xoshiro256+ stream whose four-word state array travels with
the caller, so concurrent runs never share a generator.

Array conventions: ``omega`` is ``(n, c)``; ``dist`` is ``(tables, n)`` of
hop-count estimates; particle ``j`` reads and writes ``dist[table[j]]``.
"""

import numpy as np
from numba import njit

RANDOM = 0
GREEDY = 1
ISOLATED = -1


_ROT = np.uint64(45)
_SH17 = np.uint64(17)
_SH11 = np.uint64(11)
_W = np.uint64(64)
_SCALE = 2.0**-53


def make_rng_state(seed) -> np.ndarray:
    """Four-word generator state derived from an integer seed."""
    words = np.random.SeedSequence(int(seed)).generate_state(4, dtype=np.uint64)
    if not words.any():
        words[0] = 1
    return words


@njit(cache=True)
def next_double(s):
    """Uniform draw in [0, 1); advances ``s`` in place."""
    result = s[0] + s[3]
    t = s[1] << _SH17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << _ROT) | (s[3] >> (_W - _ROT))
    return (result >> _SH11) * _SCALE


@njit(cache=True)
def inverse_square_table(n):
    """``out[d] = (1 + d) ** -2`` for hop counts ``0..n-1``."""
    out = np.empty(max(n, 1))
    for d in range(out.shape[0]):
        out[d] = 1.0 / ((1.0 + d) * (1.0 + d))
    return out


@njit(cache=True)
def greedy_weights(omega, dist_row, nbrs, ell, out):
    """Fill ``out`` with unnormalized greedy weights and return their total."""
    total = 0.0
    for a in range(nbrs.shape[0]):
        v = nbrs[a]
        d = 1.0 + dist_row[v]
        w = omega[v, ell] / (d * d)
        out[a] = w
        total += w
    return total


@njit(cache=True)
def move_probabilities(omega, dist_row, nbrs, ell, p_greedy):
    """Probability of visiting each neighbour in ``nbrs``.

    Mixture ``p_greedy * greedy + (1 - p_greedy) * uniform``. A greedy term
    with zero total mass is replaced by the uniform one.
    """
    deg = nbrs.shape[0]
    probs = np.empty(deg)
    w = np.empty(deg)
    total = greedy_weights(omega, dist_row, nbrs, ell, w)
    for a in range(deg):
        g = w[a] / total if total > 0.0 else 1.0 / deg
        probs[a] = p_greedy * g + (1.0 - p_greedy) / deg
    return probs


@njit(cache=True)
def select_target(omega, dist_row, nbrs, ell, p_greedy, scratch, rng):
    """Draw the movement kind, then the neighbour. Returns ``(node, kind)``."""
    deg = nbrs.shape[0]
    if deg == 0:
        return -1, ISOLATED
    kind = GREEDY if next_double(rng) < p_greedy else RANDOM
    if kind == GREEDY:
        total = greedy_weights(omega, dist_row, nbrs, ell, scratch)
        if total > 0.0:
            r = next_double(rng) * total
            acc = 0.0
            for a in range(deg):
                acc += scratch[a]
                if r < acc:
                    return nbrs[a], kind
            # r landed in the rounding gap at the top; take the last positive weight
            for a in range(deg - 1, -1, -1):
                if scratch[a] > 0.0:
                    return nbrs[a], kind
    a = int(next_double(rng) * deg)
    if a >= deg:
        a = deg - 1
    return nbrs[a], kind


@njit(cache=True)
def update_domination(omega, i, ell, strength, delta_v):
    """Move ``delta_v * strength`` of mass from the other classes to ``ell``.

    Each other class loses an equal share, floored at zero; ``ell`` gains
    exactly what was removed.
    """
    c = omega.shape[1]
    dec = delta_v * strength / (c - 1)
    gained = 0.0
    for k in range(c):
        if k == ell:
            continue
        old = omega[i, k]
        new = old - dec
        if new < 0.0:
            new = 0.0
        omega[i, k] = new
        gained += old - new
    omega[i, ell] += gained


@njit(cache=True)
def update_strength(strength, dominance, delta_rho, relaxed):
    """New particle strength after visiting a node where its class holds ``dominance``."""
    if relaxed:
        return strength + delta_rho * (dominance - strength)
    return dominance


@njit(cache=True)
def update_distance(dist_row, src, dst):
    d = dist_row[src] + 1
    if d < dist_row[dst]:
        dist_row[dst] = d


@njit(cache=True)
def update_accumulated(lam, i, ell, strength):
    lam[i, ell] += strength


@njit(cache=True)
def holds_node(omega, i, ell):
    """True when class ``ell`` strictly dominates node ``i`` (no shock)."""
    top = omega[i, ell]
    for k in range(omega.shape[1]):
        if k != ell and omega[i, k] >= top:
            return False
    return True


@njit(cache=True)
def row_max(omega, i):
    m = omega[i, 0]
    for k in range(1, omega.shape[1]):
        if omega[i, k] > m:
            m = omega[i, k]
    return m


@njit(cache=True)
def advance(
    indptr,
    indices,
    omega,
    lam,
    rowmax,
    frozen,
    label,
    strength,
    current,
    previous,
    table,
    dist,
    p_greedy,
    delta_v,
    delta_rho,
    relaxed,
    accumulate,
    monitor,
    counters,
    tau,
    max_iters,
    rng,
    trace,
):
    """Run up to ``max_iters`` iterations or until the monitor stalls.

    ``monitor`` holds ``[sum of row maxima, best average]`` and ``counters``
    holds ``[iterations since improvement, iterations done, isolated
    events]``; both persist across calls so the loop can be resumed. One
    iteration moves every particle once, in array order. When ``trace`` has
    rows, each particle move of the first ``len(trace) // n_particles``
    iterations is recorded as ``(iteration, particle, kind, target, stayed)``.

    The rules are inlined here (same arithmetic as the functions above) to
    avoid per-move array views. Returns ``(iterations run, stalled, trace
    rows written)``.
    """
    n, c = omega.shape
    n_particles = label.shape[0]
    max_deg = 1
    for u in range(n):
        if indptr[u + 1] - indptr[u] > max_deg:
            max_deg = indptr[u + 1] - indptr[u]
    scratch = np.empty(max_deg)
    inv_sq = inverse_square_table(n)
    n_trace = 0
    done = 0
    while done < max_iters:
        for j in range(n_particles):
            q = current[j]
            start = indptr[q]
            deg = indptr[q + 1] - start
            ell = label[j]
            t = table[j]
            if deg == 0:
                counters[2] += 1
                if n_trace < trace.shape[0]:
                    trace[n_trace, 0] = counters[1]
                    trace[n_trace, 1] = j
                    trace[n_trace, 2] = ISOLATED
                    trace[n_trace, 3] = -1
                    trace[n_trace, 4] = 1
                    n_trace += 1
                continue

            # movement kind, then target
            kind = GREEDY if next_double(rng) < p_greedy else RANDOM
            i = -1
            if kind == GREEDY:
                total = 0.0
                for a in range(deg):
                    v = indices[start + a]
                    w = omega[v, ell] * inv_sq[dist[t, v]]
                    scratch[a] = w
                    total += w
                if total > 0.0:
                    r = next_double(rng) * total
                    acc = 0.0
                    for a in range(deg):
                        acc += scratch[a]
                        if r < acc:
                            i = indices[start + a]
                            break
                    if i < 0:
                        for a in range(deg - 1, -1, -1):
                            if scratch[a] > 0.0:
                                i = indices[start + a]
                                break
            if i < 0:
                a = int(next_double(rng) * deg)
                if a >= deg:
                    a = deg - 1
                i = indices[start + a]

            s = strength[j]
            if not frozen[i]:
                dec = delta_v * s / (c - 1)
                gained = 0.0
                for k in range(c):
                    if k != ell:
                        old = omega[i, k]
                        new = old - dec
                        if new < 0.0:
                            new = 0.0
                        omega[i, k] = new
                        gained += old - new
                omega[i, ell] += gained
                m = omega[i, 0]
                for k in range(1, c):
                    if omega[i, k] > m:
                        m = omega[i, k]
                monitor[0] += m - rowmax[i]
                rowmax[i] = m
            if accumulate and kind == RANDOM:
                lam[i, ell] += s
            dom = omega[i, ell]
            if relaxed:
                strength[j] = s + delta_rho * (dom - s)
            else:
                strength[j] = dom
            dq = dist[t, q] + 1
            if dq < dist[t, i]:
                dist[t, i] = dq
            stayed = True
            for k in range(c):
                if k != ell and omega[i, k] >= dom:
                    stayed = False
                    break
            if stayed:
                previous[j] = q
                current[j] = i
            if n_trace < trace.shape[0]:
                trace[n_trace, 0] = counters[1]
                trace[n_trace, 1] = j
                trace[n_trace, 2] = kind
                trace[n_trace, 3] = i
                trace[n_trace, 4] = 1 if stayed else 0
                n_trace += 1
        done += 1
        counters[1] += 1
        avg = monitor[0] / n
        if avg > monitor[1]:
            monitor[1] = avg
            counters[0] = 0
        else:
            counters[0] += 1
            if counters[0] >= tau:
                return done, True, n_trace
    return done, False, n_trace
