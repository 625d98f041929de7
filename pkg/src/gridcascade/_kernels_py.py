"""Pure-numpy implementations of the hot kernels.

Signatures match the compiled ``_kernels`` extension exactly; ``kernels``
picks one at import time.
"""
from __future__ import annotations

import numpy as np


def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, n + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _objective(Q, b, x):
    return float(x @ (Q @ x) - 2.0 * (b @ x))


def pgd_simplex(Q, b, x0, step0, tol=1e-10, max_iter=10000, trace=False):
    """Minimise ``x'Qx - 2b'x`` over the simplex by monotone accelerated
    projected gradient (MFISTA).

    The extrapolated point is only accepted when it does not raise the
    objective, so the iterate sequence is monotone. Momentum restarts after a
    rejected step. Stops once the Frank-Wolfe gap ``g'x - min(g)`` at the
    iterate, an upper bound on its suboptimality, falls below ``tol``, or when
    a plain projected step from the iterate itself no longer decreases the
    objective (stationary to rounding).
    Returns ``(x, f, iterations, converged, history)``; ``history`` holds the
    objective after every iteration when ``trace`` is set, else ``None``.
    """
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    x = project_simplex(x0)
    f = _objective(Q, b, x)
    y = x.copy()
    fy_pt = f
    t = 1.0
    restarted = True
    step = float(step0)
    hist = [f] if trace else None
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        g = 2.0 * (Q @ y - b)
        while True:
            z = project_simplex(y - step * g)
            d = z - y
            fz = _objective(Q, b, z)
            if fz <= fy_pt + g @ d + (d @ d) / (2.0 * step) + 1e-15 or step < 1e-20:
                break
            step *= 0.5
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if fz <= f:
            x_prev, x, f = x, z, fz
            y = x + ((t - 1.0) / t_new) * (x - x_prev)
            t = t_new
            restarted = False
        elif restarted:
            if trace:
                hist.append(f)
            converged = True
            break
        else:
            y = x.copy()
            t = 1.0
            restarted = True
        fy_pt = _objective(Q, b, y)
        if trace:
            hist.append(f)
        gx = 2.0 * (Q @ x - b)
        if gx @ x - gx.min() < tol:
            converged = True
            break
    return x, f, it, converged, hist


def rollout(W, beta, s0, eps, max_steps, tol=1e-9):
    """Hard-excitation cascade rollout.

    Each step computes ``p = beta + W @ s`` for the current binary state and
    keeps a link alive iff it was alive and ``p >= eps - tol``. Stops after
    the first step that changes nothing (that repeated state is included) or
    after ``max_steps`` steps. Returns ``(states, probs)`` with
    ``len(probs) == len(states) - 1``.
    """
    s = np.asarray(s0, dtype=np.int8).copy()
    states = [s.copy()]
    probs = []
    for _ in range(max_steps):
        p = beta + W @ s
        nxt = (s.astype(bool) & (p >= eps - tol)).astype(np.int8)
        probs.append(p)
        states.append(nxt)
        if np.array_equal(nxt, s):
            break
        s = nxt
    return np.array(states, dtype=np.int8), np.array(probs, dtype=np.float64).reshape(len(probs), -1)


def transition_counts(S, C1, C11, C0, C01):
    """Accumulate one sample's transition tallies in place.

    ``S`` is the (T, n) binary state sequence. For influenced link ``i`` with
    first failure time ``tau_i`` (or T when it survives), pairs ``(t, t+1)``
    with ``t + 1 <= tau_i`` are counted: ``C1[j, i]`` steps with j alive,
    ``C11[j, i]`` of those followed by i alive, and likewise for j dead.
    """
    S = np.asarray(S, dtype=np.int64)
    T, n = S.shape
    dead = S == 0
    fails = dead.any(axis=0)
    tau = np.where(fails, np.argmax(dead, axis=0), T - 1)  # 0-based index of tau_i
    prefix = np.vstack([np.zeros((1, n), dtype=np.int64), np.cumsum(S, axis=0)])
    c1 = prefix[tau].T  # c1[j, i] = sum_{t < tau_i} S[t, j]
    npairs = tau[None, :]
    c0 = npairs - c1
    # the pair ending at tau_i is the only one where i is dead at t+1
    last = S[np.maximum(tau - 1, 0)].T * (fails & (tau > 0))[None, :]
    last0 = (1 - S[np.maximum(tau - 1, 0)]).T * (fails & (tau > 0))[None, :]
    C1 += c1
    C11 += c1 - last
    C0 += c0
    C01 += c0 - last0
