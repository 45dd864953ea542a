"""Dense primal active-set solver for strictly convex quadratic programs.

Solves  min 0.5 x'Hx + g'x  subject to  G x <= h  with a positive-definite
Hessian. Infeasible starts are handled by a regularized slack minimization
(Phase 1) whose regularization is continued toward zero, which separates
"feasible but far from the start" from genuinely inconsistent rows. The
working-set loop follows the textbook primal scheme: solve the equality
constrained subproblem on the current working set, take the blocking-ratio
step, and drop the most negative multiplier when stationary.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["QpResult", "solve_qp"]


@dataclass
class QpResult:
    x: np.ndarray
    status: str  # optimal | infeasible | max_iter
    iterations: int
    active_set: list = field(default_factory=list)
    multipliers: np.ndarray | None = None
    max_violation: float = 0.0


def _kkt_step(H, g, G, x, work):
    """Direction to the minimizer on the working-set manifold, plus duals."""
    n = H.shape[0]
    grad = H @ x + g
    if not work:
        try:
            return np.linalg.solve(H, -grad), np.empty(0)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(H, -grad, rcond=None)[0], np.empty(0)
    A = G[work]
    k = A.shape[0]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = H
    kkt[:n, n:] = A.T
    kkt[n:, :n] = A
    rhs = np.concatenate([-grad, np.zeros(k)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _active_set_core(H, g, G, h, x, max_iter):
    """Primal active-set iteration from a feasible point x."""
    m = G.shape[0]
    work: list[int] = []
    mu = np.empty(0)
    it = 0
    while it < max_iter:
        it += 1
        p, mu = _kkt_step(H, g, G, x, work)
        step_scale = 1e-11 * (1.0 + float(np.max(np.abs(x))))
        if float(np.max(np.abs(p), initial=0.0)) <= step_scale:
            if mu.size == 0 or float(np.min(mu)) >= -1e-10:
                lam = np.zeros(m)
                if work:
                    lam[work] = np.maximum(mu, 0.0)
                return x, work, lam, it, "optimal"
            work.pop(int(np.argmin(mu)))
            continue
        gp = G @ p
        slack = h - G @ x
        alpha = 1.0
        blocker = -1
        for i in range(m):
            if i in work or gp[i] <= 1e-12 * (1.0 + abs(h[i])):
                continue
            ratio = max(slack[i], 0.0) / gp[i]
            if ratio < alpha - 1e-14:
                alpha = ratio
                blocker = i
        x = x + alpha * p
        if blocker >= 0:
            work.append(blocker)
    lam = np.zeros(m)
    if work:
        lam[work] = np.maximum(mu, 0.0) if mu.size else 0.0
    return x, work, lam, it, "max_iter"


def _repair(G, h, x, tol):
    """Project away tiny residual violations left by Phase 1."""
    for _ in range(4):
        resid = G @ x - h
        bad = np.flatnonzero(resid > 0.0)
        if bad.size == 0:
            return x, 0.0
        A = G[bad]
        r = resid[bad]
        gram = A @ A.T + 1e-13 * np.eye(bad.size)
        x = x - A.T @ np.linalg.solve(gram, r)
    worst = float(np.max(G @ x - h, initial=0.0))
    return x, worst


def _phase1(G, h, x0, tol, max_iter):
    """Find a feasible point or report the minimal achievable violation.

    Minimizes 0.5 s^2 + 0.5 eps ||x - x0||^2 over G x - h <= s, continuing
    eps toward zero so the pull toward x0 cannot mask feasibility.
    """
    m, n = G.shape
    x = np.array(x0, dtype=float)
    worst = float(np.max(G @ x - h, initial=0.0))
    iterations = 0
    for eps in (1e-6, 1e-8, 1e-10, 1e-12):
        if worst <= tol:
            break
        H_ext = np.diag(np.concatenate([np.full(n, eps), [1.0]]))
        g_ext = np.concatenate([-eps * x, [0.0]])
        G_ext = np.hstack([G, -np.ones((m, 1))])
        y = np.concatenate([x, [worst + 1.0]])
        y, _, _, it, _ = _active_set_core(H_ext, g_ext, G_ext, h, y, max_iter)
        iterations += it
        x = y[:n]
        new_worst = float(np.max(G @ x - h, initial=0.0))
        if new_worst >= worst * 0.999 and new_worst > tol:
            worst = new_worst
            break
        worst = new_worst
    if worst > tol:
        x, worst = _repair(G, h, x, tol)
    return x, worst, iterations


def solve_qp(hessian, gradient, rows=None, rhs=None, x0=None,
             tol: float = 1e-8, max_iter: int | None = None) -> QpResult:
    """Minimize 0.5 x'Hx + g'x subject to rows @ x <= rhs.

    Parameters
    ----------
    hessian, gradient : ndarray
        Positive-definite H (n x n) and linear term g (n,).
    rows, rhs : ndarray, optional
        Inequality rows G (m x n) and right-hand side h (m,). Omit both
        for an unconstrained solve.
    x0 : ndarray, optional
        Starting guess; it is made feasible before the main iteration.
    tol : float
        Feasibility tolerance used by Phase 1 and for the final residuals.

    Returns the minimizer with the final working set, the full multiplier
    vector (zeros on inactive rows), and the iteration count. KKT residuals
    at an "optimal" exit are at the 1e-8 level for well-scaled data.
    """
    H = np.asarray(hessian, dtype=float)
    g = np.asarray(gradient, dtype=float)
    n = H.shape[0]
    if rows is None or len(rows) == 0:
        x = np.linalg.solve(H, -g)
        return QpResult(x=x, status="optimal", iterations=1,
                        active_set=[], multipliers=np.empty(0))
    G = np.asarray(rows, dtype=float)
    h = np.asarray(rhs, dtype=float)
    m = G.shape[0]
    if max_iter is None:
        max_iter = max(200, 10 * (n + m))

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    iterations = 0
    worst = float(np.max(G @ x - h, initial=0.0))
    if worst > tol:
        x, worst, it1 = _phase1(G, h, x, tol, max_iter)
        iterations += it1
        if worst > tol:
            return QpResult(x=x, status="infeasible", iterations=iterations,
                            active_set=[], multipliers=np.zeros(m),
                            max_violation=worst)
    x, work, lam, it2, status = _active_set_core(H, g, G, h, x, max_iter)
    iterations += it2
    return QpResult(x=x, status=status, iterations=iterations,
                    active_set=sorted(work), multipliers=lam,
                    max_violation=float(np.max(G @ x - h, initial=0.0)))
