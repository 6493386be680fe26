"""Reference kernels built directly on the public game/geometry functions.

Works for every game (any projectable sets). The compiled backend in
``_ckernels`` must agree with these routines to rounding error.
"""

import numpy as np

from .game import implicit_cost, implicit_cost_inexact

NAME = "python"


def implicit_values(game, i, pts, eps):
    """``h_i`` (``eps == 0``) or ``h_i^eps`` at each row of ``pts``."""
    if eps == 0.0:
        return implicit_cost(game, i, pts)
    return implicit_cost_inexact(game, i, pts, eps)


def _oracle_rows(game, u, idx_k, noise_k, Ms, qs):
    out = np.empty(game.n)
    for i in range(game.N):
        a, c = game.offsets[i], game.offsets[i + 1]
        j = idx_k[i]
        out[a:c] = Ms[j, a:c] @ u + qs[j, a:c]
    return out + noise_k


def sfbf_inner(game, xbar, F, gamma, eta, delta, eps, idx, noise, W):
    """Inner forward-backward-forward loop with pre-drawn randomness.

    Returns ``(z_K, z_half, solves, status, bad_step)``; ``status`` is 0 on
    success and 1 when an iterate became non-finite at ``bad_step``.
    """
    K = noise.shape[0]
    Ms, qs = game.oracle.component_stack()
    offs = game.offsets
    h_bar = [implicit_values(game, i, xbar[offs[i]:offs[i + 1]], eps) for i in range(game.N)]
    solves = game.N
    z = np.array(xbar, dtype=float)
    z_half = np.empty((K, game.n))
    for k in range(K):
        zh = game.X.project(z - gamma * F)
        z_half[k] = zh
        if not np.all(np.isfinite(zh)):
            return z, z_half, solves, 1, k
        v_z = _oracle_rows(game, zh, idx[k], noise[k], Ms, qs) + eta * zh
        v_x = _oracle_rows(game, xbar, idx[k], noise[k], Ms, qs) + eta * xbar
        H_z = np.empty(game.n)
        H_x = np.empty(game.n)
        for i in range(game.N):
            a, c = offs[i], offs[i + 1]
            w = W[k, a:c]
            vals = implicit_values(game, i, np.stack([zh[a:c] + delta * w, zh[a:c],
                                                      xbar[a:c] + delta * w]), eps)
            H_z[a:c] = (c - a) * w * ((vals[0] - vals[1]) / delta)
            H_x[a:c] = (c - a) * w * ((vals[2] - h_bar[i]) / delta)
            solves += 3
        z = zh - gamma * ((v_z + H_z) - (v_x + H_x))
        if not np.all(np.isfinite(z)):
            return z, z_half, solves, 1, k
    return z, z_half, solves, 0, -1
