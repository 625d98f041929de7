"""Small dense linear-programming kernel.

Two-phase tableau simplex for problems with a few hundred rows at most::

    min c @ x   s.t.  A_ub @ x <= b_ub,  A_eq @ x == b_eq,  lb <= x <= ub

Bounds must be finite. Entering variables follow Dantzig's rule with the
lowest index breaking ties; after a run of degenerate pivots the rule
switches to Bland's, which cannot cycle. Everything is deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL, INFEASIBLE, ITERATION_LIMIT = 0, 2, 1


@dataclass
class LPResult:
    x: np.ndarray | None
    fun: float
    status: int
    iterations: int

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    def __init__(self, T: np.ndarray, basis: np.ndarray, pivot_tol: float):
        self.T = T
        self.basis = basis
        self.pivot_tol = pivot_tol
        self.iterations = 0

    def pivot(self, row: int, col: int) -> None:
        T = self.T
        T[row] /= T[row, col]
        colv = T[:, col].copy()
        colv[row] = 0.0
        T -= np.outer(colv, T[row])
        self.basis[row] = col
        self.iterations += 1

    def run(self, allowed: np.ndarray, opt_tol: float, max_iter: int) -> int:
        """Minimise the objective held in the last row over ``allowed`` columns."""
        T = self.T
        m = T.shape[0] - 1
        degenerate = 0
        while self.iterations < max_iter:
            red = T[m, :-1]
            cand = np.flatnonzero(allowed & (red < -opt_tol))
            if cand.size == 0:
                return OPTIMAL
            col = cand[0] if degenerate > 50 else cand[np.argmin(red[cand])]
            colv = T[:m, col]
            pos = np.flatnonzero(colv > self.pivot_tol)
            if pos.size == 0:
                # unbounded; cannot happen with finite bounds
                raise RuntimeError("LP unbounded; variable bounds must be finite")
            ratios = T[pos, -1] / colv[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
            row = ties[np.argmin(self.basis[ties])]
            degenerate = degenerate + 1 if best <= 1e-12 else 0
            self.pivot(row, col)
        return ITERATION_LIMIT


def linprog(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None, *,
            feas_tol: float = 1e-7, opt_tol: float = 1e-9, max_iter: int = 20000) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
        raise ValueError("all variable bounds must be finite")
    if np.any(ub < lb - feas_tol):
        return LPResult(None, np.inf, INFEASIBLE, 0)

    # shift x = lb + y, y in [0, ub - lb]; upper bounds become rows
    span = np.maximum(ub - lb, 0.0)
    has_ub = np.flatnonzero(span < np.inf)
    rows_ub = np.vstack([A_ub, np.eye(n)[has_ub]])
    rhs_ub = np.concatenate([b_ub - A_ub @ lb, span[has_ub]])
    rhs_eq = b_eq - A_eq @ lb
    m_ub, m_eq = rows_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # columns: y (n) | slacks (m_ub) | artificials (as needed) | rhs
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = rows_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    rhs = np.concatenate([rhs_ub, rhs_eq])
    neg = rhs < 0
    A[neg] *= -1
    rhs = np.where(neg, -rhs, rhs)

    need_art = np.ones(m, dtype=bool)
    need_art[:m_ub] = neg[:m_ub]
    art_rows = np.flatnonzero(need_art)
    n_art = art_rows.size
    ncol = n + m_ub + n_art
    T = np.zeros((m + 1, ncol + 1))
    T[:m, : n + m_ub] = A
    T[art_rows, n + m_ub + np.arange(n_art)] = 1.0
    T[:m, -1] = rhs
    basis = np.empty(m, dtype=np.intp)
    basis[:m_ub] = n + np.arange(m_ub)
    basis[art_rows] = n + m_ub + np.arange(n_art)
    tab = _Tableau(T, basis, pivot_tol=1e-10)

    allowed = np.ones(ncol, dtype=bool)
    if n_art:
        # phase 1: minimise the sum of artificials
        T[m, :] = 0.0
        T[m, n + m_ub:ncol] = 1.0
        for r in art_rows:
            T[m] -= T[r]
        status = tab.run(allowed, opt_tol, max_iter)
        if status != OPTIMAL:
            return LPResult(None, np.inf, status, tab.iterations)
        if -T[m, -1] > feas_tol * max(1.0, np.abs(rhs).max(initial=0.0)):
            return LPResult(None, np.inf, INFEASIBLE, tab.iterations)
        # drive remaining artificials out of the basis where possible
        for r in range(m):
            if tab.basis[r] >= n + m_ub:
                nz = np.flatnonzero(np.abs(T[r, : n + m_ub]) > 1e-9)
                if nz.size:
                    tab.pivot(r, nz[0])
        allowed[n + m_ub:] = False

    # phase 2
    T[m, :] = 0.0
    T[m, :n] = c
    for r in range(m):
        j = tab.basis[r]
        if j < n and c[j] != 0.0:
            T[m] -= c[j] * T[r]
    status = tab.run(allowed, opt_tol, max_iter)
    y = np.zeros(ncol)
    y[tab.basis] = T[:m, -1]
    x = lb + np.clip(y[:n], 0.0, None)
    x = np.minimum(x, ub)
    return LPResult(x, float(c @ x), status, tab.iterations)
