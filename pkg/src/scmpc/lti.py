"""Discrete prediction model and terminal-cost machinery.

Exact zero-order-hold discretization of the pair of double integrators,
an infinite-horizon LQR gain from a Riccati fixed-point iteration, and the
terminal weight from the discrete Lyapunov equation that makes the finite
horizon cost match the infinite-horizon one under the terminal controller.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = [
    "LtiModel",
    "TerminalData",
    "continuous_matrices",
    "discretize_double_integrator",
    "riccati_solution",
    "dlqr_gain",
    "terminal_weight",
    "spectral_radius",
    "terminal_data",
]


@dataclass(frozen=True)
class LtiModel:
    """Per-step transition matrices z+ = A z + B v and the sampling time."""

    A: np.ndarray
    B: np.ndarray
    ts: float


@dataclass(frozen=True)
class TerminalData:
    """Terminal controller gain, Lyapunov weight, and closed-loop radius."""

    K: np.ndarray
    Qbar: np.ndarray
    spectral_radius: float


def continuous_matrices():
    """Continuous-time matrices of the two decoupled double integrators."""
    A = np.zeros((4, 4))
    A[0, 1] = 1.0
    A[2, 3] = 1.0
    B = np.zeros((4, 2))
    B[1, 0] = 1.0
    B[3, 1] = 1.0
    return A, B


def discretize_double_integrator(ts: float) -> LtiModel:
    """Exact ZOH discretization of the double-integrator pair.

    The chain structure admits the closed form A = [[1, ts], [0, 1]] and
    B = [[ts^2/2], [ts]] per chain; no matrix exponential is needed.
    """
    if not ts > 0.0:
        raise ConfigError("ts must be positive")
    a = np.array([[1.0, ts], [0.0, 1.0]])
    b = np.array([[0.5 * ts * ts], [ts]])
    A = np.zeros((4, 4))
    B = np.zeros((4, 2))
    A[:2, :2] = a
    A[2:, 2:] = a
    B[:2, :1] = b
    B[2:, 1:] = b
    return LtiModel(A, B, ts)


def riccati_solution(model: LtiModel, Q: np.ndarray, R: np.ndarray,
                     tol: float = 1e-12, max_iter: int = 10000) -> np.ndarray:
    """Fixed point of the discrete Riccati recursion, iterated from Q."""
    A, B = model.A, model.B
    P = np.array(Q, dtype=float)
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A - B @ gain)
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol:
            return P_next
        P = P_next
    raise NumericalError(
        f"Riccati iteration did not converge within {max_iter} iterations"
    )


def dlqr_gain(model: LtiModel, Q: np.ndarray, R: np.ndarray,
              tol: float = 1e-12, max_iter: int = 10000) -> np.ndarray:
    """Infinite-horizon discrete LQR gain.

    The sign is carried inside K, so the closed loop is A + B K.
    """
    P = riccati_solution(model, Q, R, tol=tol, max_iter=max_iter)
    BtP = model.B.T @ P
    return -np.linalg.solve(R + BtP @ model.B, BtP @ model.A)


def terminal_weight(model: LtiModel, K: np.ndarray, Q: np.ndarray,
                    R: np.ndarray) -> np.ndarray:
    """Solve Qbar - Acl' Qbar Acl = Q + K' R K for the terminal weight.

    Uses the doubling iteration for the convergent series; requires the
    closed loop A + B K to be a contraction.
    """
    A_cl = model.A + model.B @ K
    if spectral_radius(A_cl) >= 1.0:
        raise ConfigError("terminal gain not stabilizing")
    S = Q + K.T @ R @ K
    M = A_cl.copy()
    for _ in range(200):
        increment = M.T @ S @ M
        S = S + increment
        if np.max(np.abs(increment)) <= 1e-16 * max(1.0, np.max(np.abs(S))):
            break
        M = M @ M
    return 0.5 * (S + S.T)


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue magnitude, from the LAPACK QR eigensolver."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError("spectral_radius expects a square matrix")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def terminal_data(model: LtiModel, Q: np.ndarray, R: np.ndarray) -> TerminalData:
    """Bundle LQR gain, terminal weight, and closed-loop spectral radius."""
    K = dlqr_gain(model, Q, R)
    Qbar = terminal_weight(model, K, Q, R)
    rho = spectral_radius(model.A + model.B @ K)
    return TerminalData(K=K, Qbar=Qbar, spectral_radius=rho)
