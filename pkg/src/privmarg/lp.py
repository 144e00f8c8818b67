"""Small dense linear programs: two-phase tableau simplex with Bland's rule.

Solves ``max c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.
Only meant for the tiny certification instances; no sparsity, no presolve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEASIBILITY_TOL = 1e-7
PIVOT_TOL = 1e-11


class LPBudgetExceeded(RuntimeError):
    """Instance is larger than the solver is meant to handle, or pivots ran out."""


@dataclass
class LPResult:
    status: str  # "optimal", "infeasible" or "unbounded"
    x: np.ndarray | None
    objective: float | None
    iterations: int
    infeasibility: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "unbounded")


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])


def _simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_iter: int) -> tuple[str, int]:
    """Minimise the objective held in the last row of T (reduced costs, rhs in last column)."""
    m = T.shape[0] - 1
    it = 0
    while True:
        cost = T[-1, :-1]
        # Bland: lowest-index improving column
        cand = np.flatnonzero(allowed & (cost < -PIVOT_TOL))
        if cand.size == 0:
            return "optimal", it
        col = int(cand[0])
        colv = T[:m, col]
        pos = colv > PIVOT_TOL
        if not pos.any():
            return "unbounded", it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, row, col)
        basis[row] = col
        it += 1
        if it >= max_iter:
            raise LPBudgetExceeded(f"no convergence after {max_iter} pivots")


def linprog_max(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, *, max_iter: int = 200_000,
                max_cells: int = 20_000_000, tol: float = FEASIBILITY_TOL) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    if A_ub.shape != (b_ub.size, n) or A_eq.shape != (b_eq.size, n):
        raise ValueError("constraint shapes do not match the objective")
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    # columns: x (n), slacks (m_ub), artificials (m), rhs
    width = n + m_ub + m + 1
    if (m + 1) * width > max_cells:
        raise LPBudgetExceeded(f"tableau of {m + 1} x {width} exceeds {max_cells} cells")
    T = np.zeros((m + 1, width))
    T[:m_ub, :n] = A_ub
    T[:m_ub, n:n + m_ub] = np.eye(m_ub)
    T[m_ub:m, :n] = A_eq
    T[:m, -1] = np.concatenate([b_ub, b_eq])
    neg = T[:m, -1] < 0
    T[:m][neg] *= -1
    T[:m, n + m_ub:n + m_ub + m] = np.eye(m)
    basis = list(range(n + m_ub, n + m_ub + m))
    # phase one: minimise the sum of artificials
    T[-1, :] = -T[:m].sum(axis=0)
    T[-1, n + m_ub:n + m_ub + m] = 0.0
    allowed = np.zeros(width - 1, dtype=bool)
    allowed[:] = True
    _, it1 = _simplex(T, basis, allowed, max_iter)
    infeas = max(0.0, -T[-1, -1])
    scale = max(1.0, float(np.abs(np.concatenate([b_ub, b_eq])).max(initial=0.0)))
    if infeas > tol * scale:
        return LPResult("infeasible", None, None, it1, infeas)
    # drive artificials out of the basis where possible
    art0 = n + m_ub
    for r, bcol in enumerate(basis):
        if bcol >= art0:
            nz = np.flatnonzero(np.abs(T[r, :art0]) > PIVOT_TOL)
            if nz.size:
                _pivot(T, r, int(nz[0]))
                basis[r] = int(nz[0])
    allowed = np.zeros(width - 1, dtype=bool)
    allowed[:art0] = True
    # phase two: minimise -c
    cost = np.zeros(width)
    cost[:n] = -c
    T[-1, :] = cost
    for r, bcol in enumerate(basis):
        if T[-1, bcol] != 0.0:
            T[-1] -= T[-1, bcol] * T[r]
    status, it2 = _simplex(T, basis, allowed, max_iter - it1)
    x = np.zeros(width - 1)
    for r, bcol in enumerate(basis):
        x[bcol] = T[r, -1]
    x = x[:n]
    if status == "unbounded":
        return LPResult("unbounded", x, np.inf, it1 + it2, infeas)
    return LPResult("optimal", x, float(c @ x), it1 + it2, infeas)


def feasible(A_ub=None, b_ub=None, A_eq=None, b_eq=None, *, n: int, **kw) -> LPResult:
    return linprog_max(np.zeros(n), A_ub, b_ub, A_eq, b_eq, **kw)
