"""Discounted infinite-horizon LQ gain synthesis.

The per-cycle model is Delta_x(k+1) = Delta_x(k) + B Delta_u(k) and the cost
sums beta^k (|Delta_x|_Q^2 + |Delta_u|_R^2) with beta = 1/(1 + discount).
Scaling the system by sqrt(beta) turns this into a standard DARE, solved
directly; an explicit value-iteration recursion serves as an independent
reference implementation.  The stationary feedback is u = u_nominal -
L (x - x_nominal), computed once offline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class SynthesisError(RuntimeError):
    """Gain synthesis failed; carries the last Riccati residual."""

    def __init__(self, message: str, residual: float = float("nan"),
                 iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class LqWeights:
    """Diagonal LQ weights and the per-cycle discount rate.

    ``state_weight`` and ``control_weight`` are the diagonals of Q and R,
    scalars meaning uniform diagonals.  ``discount`` is the rate lambda in
    the per-cycle factor 1/(1 + lambda).
    """

    state_weight: float | np.ndarray = 1.0
    control_weight: float | np.ndarray = 1.0
    discount: float = 0.0

    def __post_init__(self) -> None:
        if self.discount < 0:
            raise ValueError(f"discount rate {self.discount} must be >= 0")
        if np.any(np.asarray(self.state_weight) < 0):
            raise ValueError("state weights must be nonnegative")
        if np.any(np.asarray(self.control_weight) <= 0):
            raise ValueError("control weights must be strictly positive")

    @property
    def beta(self) -> float:
        return 1.0 / (1.0 + self.discount)

    def matrices(self, n_states: int, n_controls: int) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(self.state_weight, dtype=float)
        r = np.asarray(self.control_weight, dtype=float)
        q = np.diag(np.broadcast_to(q, (n_states,)).astype(float))
        r = np.diag(np.broadcast_to(r, (n_controls,)).astype(float))
        return q, r


@dataclass
class GainSynthesis:
    riccati: np.ndarray           # P, symmetric PSD
    gain: np.ndarray              # L, controls x links
    residual: float               # inf-norm DARE residual
    iterations: int               # 0 when the direct solver succeeded
    closed_loop_radius: float


def _as_matrix(b) -> np.ndarray:
    values = getattr(b, "values", b)
    return np.atleast_2d(np.asarray(values, dtype=float))


def _dare_residual(p: np.ndarray, a_bar: np.ndarray, b_bar: np.ndarray,
                   q: np.ndarray, r: np.ndarray) -> float:
    apb = a_bar.T @ p @ b_bar
    inner = q + a_bar.T @ p @ a_bar - apb @ np.linalg.solve(
        r + b_bar.T @ p @ b_bar, apb.T)
    return float(np.max(np.abs(p - inner)))


def _iterate_riccati(a_bar: np.ndarray, b_bar: np.ndarray, q: np.ndarray,
                     r: np.ndarray, max_iter: int, tol: float
                     ) -> tuple[np.ndarray, float, int]:
    """Fixed-point Riccati recursion, fallback for the direct solver."""
    p = q.copy()
    residual = float("inf")
    for it in range(1, max_iter + 1):
        apb = a_bar.T @ p @ b_bar
        p_next = q + a_bar.T @ p @ a_bar - apb @ np.linalg.solve(
            r + b_bar.T @ p @ b_bar, apb.T)
        p_next = 0.5 * (p_next + p_next.T)
        residual = float(np.max(np.abs(p_next - p)))
        p = p_next
        if residual <= tol:
            return p, residual, it
    return p, residual, max_iter


def solve_discounted_dare(b, weights: LqWeights, *, residual_tol: float = 1e-8,
                          max_iter: int = 10_000) -> GainSynthesis:
    """Solve the discounted Riccati problem for Delta_x' = Delta_x + B Delta_u.

    Reduces to a standard DARE through the sqrt(beta) system scaling, then
    recovers the stationary gain L of u = -L Delta_x.  Falls back to the
    fixed-point recursion if the direct solve fails; raises SynthesisError
    when the residual stays above ``residual_tol`` or the closed loop is
    unstable.
    """
    b = _as_matrix(b)
    n, m = b.shape
    q, r = weights.matrices(n, m)
    beta = weights.beta
    sqb = np.sqrt(beta)
    a_bar = sqb * np.eye(n)
    b_bar = sqb * b

    iterations = 0
    try:
        p = scipy.linalg.solve_discrete_are(a_bar, b_bar, q, r)
        p = 0.5 * (p + p.T)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        p, _, iterations = _iterate_riccati(a_bar, b_bar, q, r, max_iter, 1e-10)

    residual = _dare_residual(p, a_bar, b_bar, q, r)
    if not np.isfinite(residual) or residual > residual_tol:
        raise SynthesisError(
            f"Riccati residual {residual:.3e} above {residual_tol:.1e}",
            residual=residual, iterations=iterations)

    # L = (R + beta B'PB)^-1 beta B'P  (A = I)
    gain = np.linalg.solve(r + beta * b.T @ p @ b, beta * b.T @ p)
    radius = closed_loop_radius(b, gain, weights.discount)
    if radius >= 1.0:
        raise SynthesisError(
            f"closed-loop spectral radius {radius:.6f} not below 1",
            residual=residual, iterations=iterations)
    return GainSynthesis(riccati=p, gain=gain, residual=residual,
                         iterations=iterations, closed_loop_radius=radius)


def value_iteration_oracle(b, weights: LqWeights, horizon: int) -> np.ndarray:
    """Finite-horizon backward Riccati recursion; reference for the solver.

    Starts from the terminal weight Q and applies ``horizon`` backward
    steps, returning the gain of the last step.  With horizon 1 this is the
    one-step problem gain (R + beta B'QB)^-1 beta B'Q.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    b = _as_matrix(b)
    n, m = b.shape
    q, r = weights.matrices(n, m)
    beta = weights.beta
    p = q.copy()
    gain = np.zeros((m, n))
    for _ in range(horizon):
        pb = p @ b
        gain = np.linalg.solve(r + beta * b.T @ pb, beta * pb.T)
        p = q + beta * p - beta * pb @ gain
        p = 0.5 * (p + p.T)
    return gain


def closed_loop_radius(b, gain: np.ndarray, discount: float = 0.0) -> float:
    """Spectral radius of sqrt(beta) (I - B L), the discounted closed loop."""
    b = _as_matrix(b)
    beta = 1.0 / (1.0 + discount)
    closed = np.sqrt(beta) * (np.eye(b.shape[0]) - b @ np.asarray(gain))
    return float(np.max(np.abs(np.linalg.eigvals(closed))))


def webster_cycle(lost_time: float, load: float, c_min: float = 40.0,
                  c_max: float = 90.0) -> float:
    """Near-optimal cycle length (1.5 T + 5)/(1 - Y) clamped to [c_min, c_max]."""
    if not 0.0 <= load < 1.0:
        raise ValueError(f"junction load {load} must lie in [0, 1)")
    if lost_time < 0:
        raise ValueError(f"lost time {lost_time} must be >= 0")
    if c_min > c_max:
        raise ValueError(f"empty cycle interval [{c_min}, {c_max}]")
    raw = (1.5 * lost_time + 5.0) / (1.0 - load)
    return float(min(max(raw, c_min), c_max))


def write_gain_csv(path: str, gain: np.ndarray, control_ids: list[str],
                   link_ids: list[str]) -> None:
    """Store L as CSV, one row per link, one column per control id."""
    gain = np.asarray(gain)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id"] + list(control_ids))
        for i, lid in enumerate(link_ids):
            w.writerow([lid] + [repr(float(v)) for v in gain[:, i]])


def read_gain_csv(path: str) -> tuple[np.ndarray, list[str], list[str]]:
    """Inverse of write_gain_csv; exact float round-trip."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    control_ids = rows[0][1:]
    link_ids = [row[0] for row in rows[1:]]
    gain = np.array([[float(v) for v in row[1:]] for row in rows[1:]]).T
    return gain, control_ids, link_ids
