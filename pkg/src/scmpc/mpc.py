"""Finite-horizon optimal control problems and their SQP solver.

The linear scheme condenses the double-integrator predictions into the
input sequence, giving a strictly convex quadratic cost, affine rows for
input, position, and terminal constraints, and one quadratic barrier row
per obstacle per step. The barrier rows are the only nonconvexity; the
solver linearizes them about the current iterate, solves the resulting
dense QP with an active-set method, and applies a merit line search on
the original quadratic constraints.

The nonlinear baseline applies the same machinery to the unicycle model
discretized with RK4, relinearizing the rollout every iteration. It is
kept for timing comparisons and trajectory cross-checks.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .lti import LtiModel, TerminalData, discretize_double_integrator, terminal_data
from .qp import solve_qp
from .safety import Obstacle

__all__ = [
    "MpcConfig",
    "QuadraticRow",
    "QcqpProblem",
    "SolveResult",
    "build_qcqp",
    "solve_sqp",
    "LinearMpc",
    "NonlinearMpc",
    "solve_scnmpc",
    "estimate_flops_ip",
    "estimate_flops_sqp",
]


def _as_matrix(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and shape[0] == shape[1] and arr.size == shape[0]:
        arr = np.diag(arr)
    if arr.shape != shape:
        raise ConfigError(f"{name} must have shape {shape}")
    return arr


def _as_vector(value, size, name):
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size != size:
        raise ConfigError(f"{name} must have {size} entries")
    return arr


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Horizons, weights, bounds, and sampling time of the controller.

    The nmpc_* fields parameterize the nonlinear baseline only: its stage
    and terminal weights act on the pose, and u_min/u_max bound its
    velocity-level inputs.
    """

    horizon: int = 8
    constraint_horizon: int = 10
    gamma: float = 0.1
    ts: float = 0.05
    Q: np.ndarray = field(default_factory=lambda: np.eye(4))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.1]))
    v_min: np.ndarray = field(default_factory=lambda: np.array([-10.0, -10.0]))
    v_max: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0]))
    pos_min: np.ndarray = field(default_factory=lambda: np.array([-10.0, -10.0]))
    pos_max: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0]))
    terminal_mode: str = "lyapunov_weight"
    u_min: np.ndarray = field(default_factory=lambda: np.array([-2.0, -3.0]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([2.0, 3.0]))
    nmpc_Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 0.0]))
    nmpc_R: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.1]))
    nmpc_P: np.ndarray = field(default_factory=lambda: np.diag([20.0, 20.0, 0.0]))

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be at least 1")
        if int(self.constraint_horizon) < 0:
            raise ConfigError("constraint_horizon must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if not self.ts > 0.0:
            raise ConfigError("ts must be positive")
        if self.terminal_mode != "lyapunov_weight":
            raise ConfigError("terminal_mode must be 'lyapunov_weight'")
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "constraint_horizon", int(self.constraint_horizon))
        object.__setattr__(self, "Q", _as_matrix(self.Q, (4, 4), "Q"))
        object.__setattr__(self, "R", _as_matrix(self.R, (2, 2), "R"))
        object.__setattr__(self, "nmpc_Q", _as_matrix(self.nmpc_Q, (3, 3), "nmpc_Q"))
        object.__setattr__(self, "nmpc_R", _as_matrix(self.nmpc_R, (2, 2), "nmpc_R"))
        object.__setattr__(self, "nmpc_P", _as_matrix(self.nmpc_P, (3, 3), "nmpc_P"))
        for name in ("v_min", "v_max", "pos_min", "pos_max", "u_min", "u_max"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), 2, name))
        if not np.all(self.v_min < self.v_max):
            raise ConfigError("v_min must be elementwise below v_max")
        if not np.all(self.pos_min < self.pos_max):
            raise ConfigError("pos_min must be elementwise below pos_max")
        if not np.all(self.u_min < self.u_max):
            raise ConfigError("u_min must be elementwise below u_max")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -1e-12:
            raise ConfigError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0.0:
            raise ConfigError("R must be positive definite")


@dataclass
class QuadraticRow:
    """One barrier constraint c(V) >= 0 on the stacked input sequence.

    c(V) = |p1(V) - c|^2 - r^2 - decay * (|p0(V) - c|^2 - r^2) with affine
    position maps p(V) = offset + map @ V. The baseline per-step rows use
    decay = 0, which drops the second term.
    """

    map_next: np.ndarray
    off_next: np.ndarray
    map_prev: np.ndarray
    off_prev: np.ndarray
    center: np.ndarray
    radius_sq: float
    decay: float

    def value(self, v: np.ndarray) -> float:
        d1 = self.off_next + self.map_next @ v - self.center
        out = float(d1 @ d1) - self.radius_sq
        if self.decay != 0.0:
            d0 = self.off_prev + self.map_prev @ v - self.center
            out -= self.decay * (float(d0 @ d0) - self.radius_sq)
        return out

    def gradient(self, v: np.ndarray) -> np.ndarray:
        d1 = self.off_next + self.map_next @ v - self.center
        grad = 2.0 * (self.map_next.T @ d1)
        if self.decay != 0.0:
            d0 = self.off_prev + self.map_prev @ v - self.center
            grad -= 2.0 * self.decay * (self.map_prev.T @ d0)
        return grad


@dataclass
class QcqpProblem:
    """Condensed problem over the stacked inputs V = (v_0, ..., v_{N-1})."""

    hessian: np.ndarray
    gradient: np.ndarray
    cost_offset: float
    lin_rows: np.ndarray
    lin_rhs: np.ndarray
    quad_rows: list
    pred_map: np.ndarray
    pred_off: np.ndarray
    z0: np.ndarray
    n_steps: int
    v_lo: np.ndarray
    v_hi: np.ndarray
    infeasible: bool = False

    def cost(self, v: np.ndarray) -> float:
        return float(0.5 * v @ self.hessian @ v + self.gradient @ v
                     + self.cost_offset)

    def predict(self, v: np.ndarray) -> np.ndarray:
        stacked = self.pred_off + self.pred_map @ v
        return np.vstack([self.z0, stacked.reshape(self.n_steps, 4)])


@dataclass
class SolveResult:
    """Solver outcome: status, input plan, prediction, and diagnostics."""

    status: str  # optimal | max_iter | infeasible
    v_sequence: np.ndarray
    z_prediction: np.ndarray
    cost: float
    sqp_iterations: int
    qp_iterations_total: int
    solve_time: float


def prediction_matrices(model: LtiModel, n_steps: int):
    """Stacked maps (F, G) with (z_1, ..., z_N) = F z0 + G V."""
    A, B = model.A, model.B
    powers = [np.eye(4)]
    for _ in range(n_steps):
        powers.append(powers[-1] @ A)
    F = np.vstack([powers[i] for i in range(1, n_steps + 1)])
    G = np.zeros((4 * n_steps, 2 * n_steps))
    for i in range(1, n_steps + 1):
        for j in range(i):
            G[4 * (i - 1):4 * i, 2 * j:2 * j + 2] = powers[i - 1 - j] @ B
    return F, G


class _CondensedWorkspace:
    """Constant matrices of the condensed problem for one configuration.

    Everything that does not depend on the measured state is precomputed
    here: prediction maps, the cost Hessian, the affine description of the
    linear rows, the closed-loop powers behind the terminal rows, and the
    barrier-row position maps.
    """

    def __init__(self, cfg: MpcConfig, model: LtiModel, terminal: TerminalData,
                 obstacles, mode: str):
        n = cfg.horizon
        nc = cfg.constraint_horizon
        nv = 2 * n
        F, G = prediction_matrices(model, n)
        q_blocks = [cfg.Q] * (n - 1) + [terminal.Qbar]
        qt = np.zeros((4 * n, 4 * n))
        for k, blk in enumerate(q_blocks):
            qt[4 * k:4 * k + 4, 4 * k:4 * k + 4] = blk
        rt = np.kron(np.eye(n), cfg.R)
        self.hessian = 2.0 * (G.T @ qt @ G + rt)
        self.hessian = 0.5 * (self.hessian + self.hessian.T)
        self.grad_map = 2.0 * (G.T @ qt @ F)
        self.offset_form = cfg.Q + F.T @ qt @ F
        self.F, self.G = F, G
        self.n_steps = n
        self.v_lo = np.tile(cfg.v_min, n)
        self.v_hi = np.tile(cfg.v_max, n)

        pos_idx = np.array([4 * k + c for k in range(n) for c in (0, 2)])
        G_pos, F_pos = G[pos_idx], F[pos_idx]
        rows = [np.eye(nv), -np.eye(nv), G_pos, -G_pos]
        h_const = [np.tile(cfg.v_max, n), -np.tile(cfg.v_min, n),
                   np.tile(cfg.pos_max, n), -np.tile(cfg.pos_min, n)]
        h_lin = [np.zeros((nv, 4)), np.zeros((nv, 4)), -F_pos, F_pos]

        F_N, G_N = F[4 * (n - 1):4 * n], G[4 * (n - 1):4 * n]
        A_cl = model.A + model.B @ terminal.K
        sel = np.zeros((2, 4))
        sel[0, 0] = 1.0
        sel[1, 2] = 1.0
        power = np.eye(4)
        for _ in range(nc + 1):
            km = terminal.K @ power
            sm = sel @ power
            rows += [km @ G_N, -(km @ G_N), sm @ G_N, -(sm @ G_N)]
            h_const += [cfg.v_max, -cfg.v_min, cfg.pos_max, -cfg.pos_min]
            h_lin += [-(km @ F_N), km @ F_N, -(sm @ F_N), sm @ F_N]
            power = A_cl @ power
        self.lin_rows = np.vstack(rows)
        self.h_const = np.concatenate(h_const)
        self.h_lin = np.vstack(h_lin)

        # Barrier rows: constant position maps, per-obstacle centers.
        self.mode = mode
        self.centers = [obs.center() for obs in obstacles]
        self.radii_sq = [obs.radius**2 for obs in obstacles]
        self.quad_maps = []
        if mode == "cbf":
            for k in range(n):
                map_next = G[[4 * k, 4 * k + 2]]
                f_next = F[[4 * k, 4 * k + 2]]
                if k == 0:
                    map_prev = np.zeros((2, nv))
                    f_prev = sel  # picks (z1, z3) straight from z0
                else:
                    map_prev = G[[4 * (k - 1), 4 * (k - 1) + 2]]
                    f_prev = F[[4 * (k - 1), 4 * (k - 1) + 2]]
                self.quad_maps.append((map_next, f_next, map_prev, f_prev))
        else:  # euclid: plain per-step sign constraint on z_1 .. z_N
            for k in range(n):
                map_next = G[[4 * k, 4 * k + 2]]
                f_next = F[[4 * k, 4 * k + 2]]
                self.quad_maps.append((map_next, f_next, None, None))


def build_qcqp(z0, cfg: MpcConfig, model: LtiModel, terminal: TerminalData,
               obstacles, mode: str = "cbf", workspace=None) -> QcqpProblem:
    """Assemble the condensed problem for the measured linear state z0.

    z0 and the obstacles are expected in goal-centered coordinates (the
    regulation target at the origin). A z0 outside the position box flags
    the problem infeasible immediately.
    """
    if mode not in ("cbf", "euclid"):
        raise ConfigError(f"unsupported problem mode '{mode}'")
    z0 = np.asarray(z0, dtype=float).ravel()
    if workspace is None:
        workspace = _CondensedWorkspace(cfg, model, terminal, obstacles, mode)
    ws = workspace
    decay = 1.0 - cfg.gamma
    nv = 2 * ws.n_steps
    quad_rows = []
    for ci, center in enumerate(ws.centers):
        for map_next, f_next, map_prev, f_prev in ws.quad_maps:
            if map_prev is None:
                row = QuadraticRow(map_next, f_next @ z0, np.zeros((2, nv)),
                                   np.zeros(2), center, ws.radii_sq[ci], 0.0)
            else:
                row = QuadraticRow(map_next, f_next @ z0, map_prev,
                                   f_prev @ z0, center, ws.radii_sq[ci], decay)
            quad_rows.append(row)
    pos0 = z0[[0, 2]]
    outside = bool(np.any(pos0 > cfg.pos_max) or np.any(pos0 < cfg.pos_min))
    return QcqpProblem(
        hessian=ws.hessian,
        gradient=ws.grad_map @ z0,
        cost_offset=float(z0 @ ws.offset_form @ z0),
        lin_rows=ws.lin_rows,
        lin_rhs=ws.h_const + ws.h_lin @ z0,
        quad_rows=quad_rows,
        pred_map=ws.G,
        pred_off=ws.F @ z0,
        z0=z0,
        n_steps=ws.n_steps,
        v_lo=ws.v_lo,
        v_hi=ws.v_hi,
        infeasible=outside,
    )


def _violations(problem: QcqpProblem, v: np.ndarray) -> np.ndarray:
    lin = problem.lin_rows @ v - problem.lin_rhs
    out = np.clip(lin, 0.0, None)
    if problem.quad_rows:
        quad = np.array([max(0.0, -row.value(v)) for row in problem.quad_rows])
        out = np.concatenate([out, quad])
    return out


def _merit_penalty(violations: np.ndarray, feas_tol: float) -> float:
    # Violations within half the feasibility tolerance are treated as zero,
    # otherwise the penalty blocks full steps near the solution where the
    # relinearized rows move by second-order amounts (Maratos effect).
    return float(np.sum(np.clip(violations - 0.5 * feas_tol, 0.0, None)))


def _empty_result(problem, status, t0, sqp_iters=0, qp_iters=0):
    n = problem.n_steps
    v = np.zeros(2 * n)
    return SolveResult(status=status, v_sequence=v.reshape(n, 2),
                       z_prediction=problem.predict(v), cost=problem.cost(v),
                       sqp_iterations=sqp_iters, qp_iterations_total=qp_iters,
                       solve_time=time.perf_counter() - t0)


def solve_sqp(problem: QcqpProblem, warm_start=None, opt_tol: float = 1e-6,
              feas_tol: float = 1e-6, max_iter: int = 50) -> SolveResult:
    """Solve the condensed problem by sequential quadratic programming.

    Each iteration linearizes the barrier rows about the current iterate
    (their gradients are affine, so the linearization is first-order
    exact), solves the dense QP, and backtracks on an l1 merit function
    evaluated on the original quadratic constraints. Terminates when the
    QP step norm drops below opt_tol with worst violation below feas_tol.
    """
    t0 = time.perf_counter()
    if problem.infeasible:
        return _empty_result(problem, "infeasible", t0)
    nv = 2 * problem.n_steps
    if warm_start is None:
        v = np.zeros(nv)
    else:
        v = np.asarray(warm_start, dtype=float).ravel().copy()
    v = np.clip(v, problem.v_lo, problem.v_hi)

    status = "max_iter"
    qp_total = 0
    rho = 10.0
    it = 0
    for it in range(1, max_iter + 1):
        if problem.quad_rows:
            extra_rows = np.empty((len(problem.quad_rows), nv))
            extra_rhs = np.empty(len(problem.quad_rows))
            for i, row in enumerate(problem.quad_rows):
                grad = row.gradient(v)
                cval = row.value(v)
                if cval < 0.0 and float(grad @ grad) < 1e-18:
                    # Iterate sits at the obstacle center; push along the
                    # direction from the center toward the initial state.
                    d = problem.z0[[0, 2]] - row.center
                    if float(d @ d) < 1e-18:
                        d = np.array([1.0, 0.0])
                    grad = 2.0 * (row.map_next.T @ d)
                extra_rows[i] = -grad
                extra_rhs[i] = cval - grad @ v
            rows = np.vstack([problem.lin_rows, extra_rows])
            rhs = np.concatenate([problem.lin_rhs, extra_rhs])
        else:
            rows, rhs = problem.lin_rows, problem.lin_rhs
        qp = solve_qp(problem.hessian, problem.gradient, rows, rhs, x0=v,
                      tol=1e-8)
        qp_total += qp.iterations
        if qp.status == "infeasible":
            status = "infeasible"
            break
        if qp.multipliers is not None and qp.multipliers.size:
            rho = max(rho, 10.0 * (1.0 + float(np.max(qp.multipliers))))
        d = qp.x - v
        step = float(np.max(np.abs(d), initial=0.0))
        worst = float(np.max(_violations(problem, v), initial=0.0))
        if step <= opt_tol and worst <= feas_tol:
            status = "optimal"
            break
        pen0 = _merit_penalty(_violations(problem, v), feas_tol)
        merit0 = problem.cost(v) + rho * pen0
        ddir = float((problem.hessian @ v + problem.gradient) @ d) - rho * pen0
        slack = 1e-12 * (1.0 + abs(merit0))
        bar = merit0 + slack
        v_prev = v.copy()

        def _accept(candidate, alpha):
            merit = problem.cost(candidate) + rho * _merit_penalty(
                _violations(problem, candidate), feas_tol)
            return merit <= bar + 1e-4 * alpha * min(ddir, 0.0)

        moved = False
        trial = v + d
        if _accept(trial, 1.0):
            v = trial
            moved = True
        elif problem.quad_rows:
            # Second-order correction: keep the gradients, re-anchor the
            # row values at the full-step point, and solve once more.
            rhs_soc = rhs.copy()
            base = problem.lin_rhs.shape[0]
            for i, row in enumerate(problem.quad_rows):
                rhs_soc[base + i] = row.value(trial) + extra_rows[i] @ trial
            qp2 = solve_qp(problem.hessian, problem.gradient, rows, rhs_soc,
                           x0=trial, tol=1e-8)
            qp_total += qp2.iterations
            if qp2.status != "infeasible" and _accept(qp2.x, 1.0):
                v = qp2.x
                moved = True
        if not moved:
            alpha = 0.5
            while alpha >= 1e-6:
                trial = v + alpha * d
                if _accept(trial, alpha):
                    v = trial
                    moved = True
                    break
                alpha *= 0.5
        taken = float(np.max(np.abs(v - v_prev), initial=0.0)) if moved else 0.0
        worst = float(np.max(_violations(problem, v), initial=0.0))
        if worst <= feas_tol and (not moved or taken <= opt_tol):
            status = "optimal"
            break
        if not moved:
            break

    return SolveResult(
        status=status,
        v_sequence=v.reshape(problem.n_steps, 2).copy(),
        z_prediction=problem.predict(v),
        cost=problem.cost(v),
        sqp_iterations=it,
        qp_iterations_total=qp_total,
        solve_time=time.perf_counter() - t0,
    )


class LinearMpc:
    """Receding-horizon controller on the linear coordinates.

    Owns the discrete model, terminal data, the condensed workspace, and
    the shifted warm start. On an infeasible step the barrier decay is
    relaxed once (gamma doubled, capped at 1); a second failure is
    reported as infeasible.
    """

    def __init__(self, cfg: MpcConfig, obstacles=(), goal=(0.0, 0.0),
                 mode: str = "cbf", warm_start: bool = True):
        if mode not in ("cbf", "euclid"):
            raise ConfigError(f"unsupported mode '{mode}' for LinearMpc")
        self.cfg = cfg
        self.mode = mode
        self.use_warm_start = warm_start
        self.model = discretize_double_integrator(cfg.ts)
        self.terminal = terminal_data(self.model, cfg.Q, cfg.R)
        self.goal_z = np.array([goal[0], 0.0, goal[1], 0.0])
        self.obstacles = [Obstacle(o.x - goal[0], o.y - goal[1], o.radius)
                          for o in obstacles]
        self.workspace = _CondensedWorkspace(cfg, self.model, self.terminal,
                                             self.obstacles, mode)
        self._warm = None

    def solve(self, z0) -> SolveResult:
        t0 = time.perf_counter()
        z0s = np.asarray(z0, dtype=float).ravel() - self.goal_z
        problem = build_qcqp(z0s, self.cfg, self.model, self.terminal,
                             self.obstacles, mode=self.mode,
                             workspace=self.workspace)
        warm = self._warm if self.use_warm_start else None
        res = solve_sqp(problem, warm_start=warm)
        if res.status == "infeasible" and self.mode == "cbf" and self.cfg.gamma < 1.0:
            relaxed = replace(self.cfg, gamma=min(2.0 * self.cfg.gamma, 1.0))
            problem = build_qcqp(z0s, relaxed, self.model, self.terminal,
                                 self.obstacles, mode=self.mode,
                                 workspace=self.workspace)
            res = solve_sqp(problem, warm_start=warm)
        if res.status != "infeasible":
            flat = res.v_sequence.ravel()
            tail = self.terminal.K @ res.z_prediction[-1]
            self._warm = np.concatenate([flat[2:], tail])
            res.z_prediction = res.z_prediction + self.goal_z
        res.solve_time = time.perf_counter() - t0
        return res


def _unicycle_jacobians(x, u):
    c, s = math.cos(x[2]), math.sin(x[2])
    fx = np.zeros((3, 3))
    fx[0, 2] = -u[0] * s
    fx[1, 2] = u[0] * c
    fu = np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])
    return fx, fu


def _unicycle_rhs(x, u):
    c, s = math.cos(x[2]), math.sin(x[2])
    return np.array([u[0] * c, u[0] * s, u[1]])


def _rk4_with_jacobians(x, u, ts):
    """RK4 step of the unicycle plus exact step Jacobians A, B."""
    eye = np.eye(3)
    k1 = _unicycle_rhs(x, u)
    j1x, j1u = _unicycle_jacobians(x, u)
    x2 = x + 0.5 * ts * k1
    k2 = _unicycle_rhs(x2, u)
    f2x, f2u = _unicycle_jacobians(x2, u)
    j2x = f2x @ (eye + 0.5 * ts * j1x)
    j2u = f2x @ (0.5 * ts * j1u) + f2u
    x3 = x + 0.5 * ts * k2
    k3 = _unicycle_rhs(x3, u)
    f3x, f3u = _unicycle_jacobians(x3, u)
    j3x = f3x @ (eye + 0.5 * ts * j2x)
    j3u = f3x @ (0.5 * ts * j2u) + f3u
    x4 = x + ts * k3
    k4 = _unicycle_rhs(x4, u)
    f4x, f4u = _unicycle_jacobians(x4, u)
    j4x = f4x @ (eye + ts * j3x)
    j4u = f4x @ (ts * j3u) + f4u
    x_next = x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    a = eye + (ts / 6.0) * (j1x + 2.0 * j2x + 2.0 * j3x + j4x)
    b = (ts / 6.0) * (j1u + 2.0 * j2u + 2.0 * j3u + j4u)
    return x_next, a, b


class NonlinearMpc:
    """Receding-horizon controller on the RK4-discretized unicycle.

    Single-shooting form: the dynamics equalities are eliminated by the
    rollout and relinearized around the current iterate at every SQP
    iteration. Used as the timing and trajectory baseline.
    """

    def __init__(self, cfg: MpcConfig, obstacles=(), goal=(0.0, 0.0),
                 warm_start: bool = True):
        self.cfg = cfg
        self.use_warm_start = warm_start
        self.goal = np.array([goal[0], goal[1], 0.0])
        self.obstacles = list(obstacles)
        self._warm = None

    def _rollout(self, x0, u_flat):
        n = self.cfg.horizon
        states = np.empty((n + 1, 3))
        sens = [np.zeros((3, 2 * n))]
        states[0] = x0
        for k in range(n):
            u = u_flat[2 * k:2 * k + 2]
            x_next, a, b = _rk4_with_jacobians(states[k], u, self.cfg.ts)
            states[k + 1] = x_next
            s_next = a @ sens[k]
            s_next[:, 2 * k:2 * k + 2] += b
            sens.append(s_next)
        return states, sens

    def _true_cost(self, states, u_flat):
        cfg = self.cfg
        err = states - self.goal
        cost = 0.0
        for k in range(cfg.horizon):
            cost += float(err[k] @ cfg.nmpc_Q @ err[k])
            u = u_flat[2 * k:2 * k + 2]
            cost += float(u @ cfg.nmpc_R @ u)
        cost += float(err[-1] @ cfg.nmpc_P @ err[-1])
        return cost

    def _true_violations(self, states, u_flat, gamma):
        cfg = self.cfg
        out = [np.clip(u_flat - np.tile(cfg.u_max, cfg.horizon), 0.0, None),
               np.clip(np.tile(cfg.u_min, cfg.horizon) - u_flat, 0.0, None)]
        pos = states[1:, :2]
        out.append(np.clip(pos - cfg.pos_max, 0.0, None).ravel())
        out.append(np.clip(cfg.pos_min - pos, 0.0, None).ravel())
        for obs in self.obstacles:
            h = (states[:, 0] - obs.x) ** 2 + (states[:, 1] - obs.y) ** 2 - obs.radius**2
            resid = h[1:] - (1.0 - gamma) * h[:-1]
            out.append(np.clip(-resid, 0.0, None))
        return np.concatenate(out)

    def _solve_with_gamma(self, x0, gamma, warm, opt_tol, feas_tol, max_iter):
        cfg = self.cfg
        n = cfg.horizon
        nv = 2 * n
        u = np.zeros(nv) if warm is None else np.clip(
            warm, np.tile(cfg.u_min, n), np.tile(cfg.u_max, n))
        rt = np.kron(np.eye(n), cfg.nmpc_R)
        bound_rows = np.vstack([np.eye(nv), -np.eye(nv)])
        bound_rhs = np.concatenate([np.tile(cfg.u_max, n), -np.tile(cfg.u_min, n)])
        status = "max_iter"
        qp_total = 0
        rho = 10.0
        it = 0
        states, sens = self._rollout(x0, u)
        for it in range(1, max_iter + 1):
            hess = 2.0 * rt.copy()
            grad = np.zeros(nv)
            for k in range(1, n + 1):
                w = cfg.nmpc_Q if k < n else cfg.nmpc_P
                sk = sens[k]
                off = states[k] - sk @ u - self.goal
                hess += 2.0 * (sk.T @ w @ sk)
                grad += 2.0 * (sk.T @ w @ off)
            hess = 0.5 * (hess + hess.T)
            rows = [bound_rows]
            rhs = [bound_rhs]
            for k in range(1, n + 1):
                sp = sens[k][:2]
                off = states[k][:2] - sp @ u
                rows += [sp, -sp]
                rhs += [cfg.pos_max - off, -(cfg.pos_min - off)]
            for obs in self.obstacles:
                c = obs.center()
                r2 = obs.radius**2
                for k in range(n):
                    p0, p1 = states[k][:2], states[k + 1][:2]
                    s0, s1 = sens[k][:2], sens[k + 1][:2]
                    cval = (float((p1 - c) @ (p1 - c)) - r2
                            - (1.0 - gamma) * (float((p0 - c) @ (p0 - c)) - r2))
                    g = 2.0 * (s1.T @ (p1 - c)) - 2.0 * (1.0 - gamma) * (s0.T @ (p0 - c))
                    rows.append(-g[None, :])
                    rhs.append(np.atleast_1d(cval - g @ u))
            qp = solve_qp(hess, grad, np.vstack(rows), np.concatenate(rhs),
                          x0=u, tol=1e-8)
            qp_total += qp.iterations
            if qp.status == "infeasible":
                status = "infeasible"
                break
            if qp.multipliers is not None and qp.multipliers.size:
                rho = max(rho, 10.0 * (1.0 + float(np.max(qp.multipliers))))
            d = qp.x - u
            step = float(np.max(np.abs(d), initial=0.0))
            worst = float(np.max(self._true_violations(states, u, gamma), initial=0.0))
            if step <= opt_tol and worst <= feas_tol:
                status = "optimal"
                break
            pen0 = _merit_penalty(self._true_violations(states, u, gamma), feas_tol)
            merit0 = self._true_cost(states, u) + rho * pen0
            ddir = float((hess @ u + grad) @ d) - rho * pen0
            slack = 1e-12 * (1.0 + abs(merit0))
            u_prev = u.copy()
            alpha = 1.0
            moved = False
            while alpha >= 1e-6:
                trial = u + alpha * d
                t_states, t_sens = self._rollout(x0, trial)
                merit = (self._true_cost(t_states, trial)
                         + rho * _merit_penalty(
                             self._true_violations(t_states, trial, gamma), feas_tol))
                if merit <= merit0 + 1e-4 * alpha * min(ddir, 0.0) + slack:
                    u, states, sens = trial, t_states, t_sens
                    moved = True
                    break
                alpha *= 0.5
            taken = float(np.max(np.abs(u - u_prev), initial=0.0)) if moved else 0.0
            worst = float(np.max(self._true_violations(states, u, gamma), initial=0.0))
            if worst <= feas_tol and (not moved or taken <= opt_tol):
                status = "optimal"
                break
            if not moved:
                break
        return u, states, status, it, qp_total

    def solve(self, x0) -> SolveResult:
        t0 = time.perf_counter()
        x0 = np.asarray(x0, dtype=float).ravel()[:3]
        warm = self._warm if self.use_warm_start else None
        u, states, status, iters, qp_total = self._solve_with_gamma(
            x0, self.cfg.gamma, warm, 1e-6, 1e-6, 50)
        if status == "infeasible" and self.cfg.gamma < 1.0:
            u, states, status, iters, qp_total = self._solve_with_gamma(
                x0, min(2.0 * self.cfg.gamma, 1.0), warm, 1e-6, 1e-6, 50)
        if status != "infeasible":
            self._warm = np.concatenate([u[2:], u[-2:]])
        return SolveResult(
            status=status,
            v_sequence=u.reshape(self.cfg.horizon, 2).copy(),
            z_prediction=states,
            cost=self._true_cost(states, u),
            sqp_iterations=iters,
            qp_iterations_total=qp_total,
            solve_time=time.perf_counter() - t0,
        )


def solve_scnmpc(x0, cfg: MpcConfig, obstacles=(), goal=(0.0, 0.0),
                 warm_start=None) -> SolveResult:
    """One-shot nonlinear MPC solve from the pose x0 (x1, x2, heading)."""
    controller = NonlinearMpc(cfg, obstacles=obstacles, goal=goal)
    controller._warm = None if warm_start is None else np.asarray(
        warm_start, dtype=float).ravel()
    return controller.solve(np.asarray(x0, dtype=float).ravel()[:3])


def estimate_flops_ip(n_steps: int, n_inputs: int, ip_iterations: float) -> float:
    """Worst-case flop count model of an interior-point QCQP solve."""
    if n_steps <= 0 or n_inputs <= 0 or ip_iterations <= 0:
        raise ConfigError("flops estimate arguments must be positive")
    nm = n_steps * n_inputs
    return ip_iterations * ((2.0 / 3.0) * nm**3 + 2.0 * nm**2)


def estimate_flops_sqp(sqp_iterations: float, n_steps: int, n_inputs: int,
                       ip_iterations: float) -> float:
    """SQP flop model: iteration count times the interior-point cost."""
    if sqp_iterations <= 0:
        raise ConfigError("flops estimate arguments must be positive")
    return sqp_iterations * estimate_flops_ip(n_steps, n_inputs, ip_iterations)
