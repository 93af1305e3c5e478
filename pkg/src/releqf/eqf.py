"""Equivariant Filter for relative attitude and target angular velocity.

The filter state lives on SE(3) as ``(Q_hat, q_hat)``; the manifold estimate
is recovered through the state action at the origin,
``(R_hat, omega_hat) = (Q_hat, -Q_hat^T q_hat)``. A 6x6 Riccati matrix
``Sigma`` over local error coordinates ``[eps_R; eps_omega]`` shapes the gain.

Discretisation:

* prediction: ``Q_hat <- exp(dt q_hat^) Q_hat exp(dt u^)``; exact for inputs
  held over the step, since left and right translations commute. ``Sigma``
  receives the growth terms ``A Sigma + Sigma A^T + M`` through the
  transition matrix of ``A``.
* update: the correction ``(Delta_Q, delta_q)`` is applied as
  ``Q_hat <- exp(dt Delta_Q^vee) Q_hat`` and
  ``q_hat <- q_hat + dt (Delta_Q q_hat + delta_q)``; ``Sigma`` receives the
  damping term ``-Sigma C^T N^-1 C Sigma``. The update may be iterated on one
  measurement with the period divided by the iteration count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg.lapack import dpotrf

from .errors import LostPositivity
from .liegroup import AlgebraElement, GroupElement, so3_exp, wedge
from .model import ManifoldState, Measurement, ReferenceDirections
from .symmetry import group_error, state_from_group, theta

_I3 = np.eye(3)


def _check_spd(S: np.ndarray, name: str) -> None:
    _, info = dpotrf(S, lower=1, clean=0)
    if info != 0:
        raise LostPositivity(f"{name} is not positive definite")


@dataclass(frozen=True)
class GainConfig:
    """Initial Riccati value and the state/output gain matrices."""

    Sigma0: np.ndarray = field(default_factory=lambda: np.eye(6))
    M: np.ndarray = field(default_factory=lambda: np.eye(6))
    N: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(6))

    def __post_init__(self):
        for name in ("Sigma0", "M", "N"):
            m = np.array(getattr(self, name), dtype=float)
            if m.shape != (6, 6):
                raise ValueError(f"{name} must be 6x6, got {m.shape}")
            if np.linalg.norm(m - m.T) > 1e-12:
                raise ValueError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        N_inv = np.linalg.inv(self.N)
        N_inv = 0.5 * (N_inv + N_inv.T)
        N_inv.setflags(write=False)
        object.__setattr__(self, "N_inv", N_inv)

    @classmethod
    def scalar(cls, k_n: float = 10.0, m: float = 1.0, sigma0: float = 1.0) -> GainConfig:
        """``Sigma0 = sigma0 I``, ``M = m I``, ``N = k_n^-1 I``."""
        if not (k_n > 0 and m > 0 and sigma0 > 0):
            raise ValueError("scalar gains must be positive")
        return cls(sigma0 * np.eye(6), m * np.eye(6), np.eye(6) / k_n)

    @property
    def k_n(self) -> float | None:
        """Output gain scalar when ``N`` is a multiple of the identity."""
        d = self.N[0, 0]
        if np.allclose(self.N, d * np.eye(6), rtol=0, atol=1e-15 * max(1.0, d)):
            return 1.0 / d
        return None


class FilterState(NamedTuple):
    X_hat: GroupElement
    Sigma: np.ndarray
    t: float = 0.0

    @classmethod
    def initial(cls, gains: GainConfig, X_hat: GroupElement | None = None, t: float = 0.0) -> FilterState:
        X_hat = X_hat if X_hat is not None else GroupElement.identity()
        return cls(X_hat, np.array(gains.Sigma0), t)


def compute_A(q_hat) -> np.ndarray:
    A = np.zeros((6, 6))
    A[0:3, 3:6] = -_I3
    A[3:6, 3:6] = wedge(q_hat)
    return A


def compute_C(refs: ReferenceDirections, Q_hat: np.ndarray) -> np.ndarray:
    """First-order output matrix; residual error is quadratic in ``eps``."""
    C = np.zeros((6, 6))
    Qt = Q_hat.T
    C[0:3, 0:3] = Qt @ wedge(refs.d1_ring)
    C[3:6, 0:3] = Qt @ wedge(refs.d2_ring)
    return C


def compute_C_star(y: Measurement, y_hat: Measurement, Q_hat: np.ndarray) -> np.ndarray:
    """Output matrix built from the equivariant output; residual error is cubic."""
    C = np.zeros((6, 6))
    Qt = Q_hat.T
    C[0:3, 0:3] = 0.5 * wedge(y.d1 + y_hat.d1) @ Qt
    C[3:6, 0:3] = 0.5 * wedge(y.d2 + y_hat.d2) @ Qt
    return C


def riccati_step(
    Sigma: np.ndarray,
    A: np.ndarray | None,
    C: np.ndarray | None,
    gains: GainConfig,
    dt: float,
    *,
    include_M: bool = True,
) -> np.ndarray:
    """One explicit Euler step of the Riccati equation, then symmetrisation.

    ``A=None`` drops the drift term and ``C=None`` the damping term. Raises :class:`LostPositivity` if the
    result is not positive definite, which means ``dt`` is too large for the
    current gains.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    rate = np.zeros((6, 6))
    if A is not None:
        AS = A @ Sigma
        rate = AS + AS.T
    if include_M:
        rate = rate + gains.M
    if C is not None:
        SCt = Sigma @ C.T
        rate = rate - SCt @ gains.N_inv @ SCt.T
    out = Sigma + dt * rate
    out = 0.5 * (out + out.T)
    _check_spd(out, "Riccati state")
    return out


def riccati_damping_exact(Sigma: np.ndarray, C: np.ndarray, gains: GainConfig, dt: float) -> np.ndarray:
    """Exact flow of ``Sigma_dot = -Sigma C^T N^-1 C Sigma`` over ``dt``.

    With ``C`` frozen, ``Sigma(dt)^-1 = Sigma^-1 + dt C^T N^-1 C``, evaluated
    in the Woodbury form so that no inverse of ``Sigma`` is needed. Positive
    definite for any ``dt``.
    """
    SCt = Sigma @ C.T
    S = C @ SCt + gains.N / dt
    out = Sigma - SCt @ np.linalg.solve(S, SCt.T)
    out = 0.5 * (out + out.T)
    _check_spd(out, "Riccati state")
    return out


def predicted_output(X_hat: GroupElement, refs: ReferenceDirections, t: float = 0.0) -> Measurement:
    Qt = X_hat.Q.T
    return Measurement(Qt @ refs.d1_ring, Qt @ refs.d2_ring, t)


def transition_matrix(q_hat, dt: float, rot: np.ndarray | None = None) -> np.ndarray:
    """``expm(dt A)`` for ``A = [[0, -I], [0, q_hat^]]`` in closed form.

    The upper right block is ``-(dt I + b W + c W^2)`` with ``W = q_hat^``;
    ``W^2 = q q^T - |q|^2 I`` is expanded to keep this cheap. ``rot`` may
    pass in ``exp(dt q_hat^)`` when the caller already has it.
    """
    x, y, z = np.asarray(q_hat, dtype=float).tolist()
    n2 = x * x + y * y + z * z
    th2 = n2 * dt * dt
    if th2 < 1e-8:
        b = dt * dt * (0.5 - th2 / 24.0)
        c = dt**3 * (1.0 / 6.0 - th2 / 120.0)
    else:
        th = math.sqrt(th2)
        b = (1.0 - math.cos(th)) / n2
        c = (dt - math.sin(th) / math.sqrt(n2)) / n2
    d = dt - c * n2
    E = (so3_exp((dt * x, dt * y, dt * z)) if rot is None else rot).tolist()
    return np.array(
        [
            [1.0, 0.0, 0.0, -(d + c * x * x), b * z - c * x * y, -(b * y + c * x * z)],
            [0.0, 1.0, 0.0, -(b * z + c * x * y), -(d + c * y * y), b * x - c * y * z],
            [0.0, 0.0, 1.0, b * y - c * x * z, -(b * x + c * y * z), -(d + c * z * z)],
            [0.0, 0.0, 0.0, *E[0]],
            [0.0, 0.0, 0.0, *E[1]],
            [0.0, 0.0, 0.0, *E[2]],
        ]
    )


def propagate_sigma(
    Sigma: np.ndarray, q_hat, gains: GainConfig, dt: float, rot: np.ndarray | None = None
) -> np.ndarray:
    """Growth part of the Riccati flow: ``Phi Sigma Phi^T + dt M``.

    Agrees with an Euler step of ``A Sigma + Sigma A^T + M`` to first order
    in ``dt`` and stays positive definite for any step, including the long
    steps of a diverging low-rate run where ``|q_hat| dt`` is large.
    """
    Phi = transition_matrix(q_hat, dt, rot)
    out = Phi @ Sigma @ Phi.T + dt * gains.M
    return 0.5 * (out + out.T)


def predict(
    fs: FilterState, u, dt: float, gains: GainConfig, *, propagation: str = "transition"
) -> FilterState:
    """Propagate the group estimate and the Riccati state over ``dt``.

    ``propagation="euler"`` uses :func:`riccati_step` for ``Sigma`` instead
    of the transition-matrix form and may raise :class:`LostPositivity`.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    Q_hat, q_hat = fs.X_hat
    E = so3_exp(dt * q_hat)
    Q_next = E @ Q_hat @ so3_exp(dt * np.asarray(u, dtype=float))
    if propagation == "transition":
        Sigma = propagate_sigma(fs.Sigma, q_hat, gains, dt, E)
    elif propagation == "euler":
        Sigma = riccati_step(fs.Sigma, compute_A(q_hat), None, gains, dt)
    else:
        raise ValueError(f"unknown propagation mode {propagation!r}")
    return FilterState(GroupElement(Q_next, q_hat), Sigma, fs.t + dt)


def correction(
    fs: FilterState,
    y: Measurement,
    refs: ReferenceDirections,
    gains: GainConfig,
    *,
    use_c_star: bool = True,
) -> AlgebraElement:
    """Correction terms ``(Delta_Q, delta_q) = (gamma_1^, -gamma_2)``.

    ``gamma = Sigma C^T N^-1 (y - y_hat)``; both output matrices give the same
    ``gamma`` for this system.
    """
    y_hat = predicted_output(fs.X_hat, refs)
    if use_c_star:
        C = compute_C_star(y, y_hat, fs.X_hat.Q)
    else:
        C = compute_C(refs, fs.X_hat.Q)
    gamma = fs.Sigma @ (C.T @ (gains.N_inv @ (y.stacked() - y_hat.stacked())))
    return AlgebraElement(wedge(gamma[:3]), -gamma[3:])


def correction_closed_form(
    fs: FilterState, y: Measurement, refs: ReferenceDirections, k_n: float
) -> AlgebraElement:
    """Correction terms for ``N = k_n^-1 I`` written without the output matrix.

    The innovation direction is ``sum_i (Q_hat d_i) x d_ring_i``: each measured
    direction mapped back through the estimate, crossed with its reference.
    """
    Q_hat = fs.X_hat.Q
    r = np.cross(Q_hat @ y.d1, refs.d1_ring) + np.cross(Q_hat @ y.d2, refs.d2_ring)
    S_R = fs.Sigma[0:3, 0:3]
    S_Rw = fs.Sigma[0:3, 3:6]
    return AlgebraElement(wedge(k_n * (S_R @ r)), -k_n * (S_Rw.T @ r))


def apply_correction(X_hat: GroupElement, delta: AlgebraElement, dt: float) -> GroupElement:
    gamma1 = np.array([delta.S[2, 1], delta.S[0, 2], delta.S[1, 0]])
    Q_next = so3_exp(dt * gamma1) @ X_hat.Q
    q_next = X_hat.q + dt * (delta.S @ X_hat.q + delta.s)
    return GroupElement(Q_next, q_next)


def update(
    fs: FilterState,
    y: Measurement,
    refs: ReferenceDirections,
    gains: GainConfig,
    dt_update: float,
    iterations: int = 1,
    *,
    damping: str = "auto",
    riccati_output: str = "C",
    scale_damping: bool = True,
) -> tuple[FilterState, AlgebraElement]:
    """Apply the measurement ``iterations`` times with period ``dt_update``.

    ``dt_update`` is the already-reduced period (nominal period divided by
    ``iterations``). ``damping`` selects how the Riccati damping term is
    integrated: ``"euler"`` (may raise :class:`LostPositivity`), ``"exact"``
    (Woodbury flow, positive definite for any step) or ``"auto"``, an Euler
    step that falls back to the exact flow when it would lose positivity;
    ``riccati_output`` selects the output matrix used there (``"C"`` or
    ``"C_star"``). With ``scale_damping=False`` the damping uses the
    nominal period on every iteration.

    Returns the new state and the correction of the last iteration.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not dt_update > 0.0:
        raise ValueError("dt_update must be positive")
    if damping not in ("auto", "exact", "euler"):
        raise ValueError(f"unknown damping mode {damping!r}")
    if riccati_output not in ("C", "C_star"):
        raise ValueError(f"unknown riccati_output {riccati_output!r}")
    dt_sigma = dt_update if scale_damping else dt_update * iterations
    X_hat, Sigma = fs.X_hat, fs.Sigma
    yv = y.stacked()
    d1r, d2r = refs.d1_ring, refs.d2_ring
    delta = AlgebraElement.zero()
    for _ in range(iterations):
        Q_hat = X_hat.Q
        Qt = Q_hat.T
        y_hat = Measurement(Qt @ d1r, Qt @ d2r)
        C_star = compute_C_star(y, y_hat, Q_hat)
        gamma = Sigma @ (C_star.T @ (gains.N_inv @ (yv - y_hat.stacked())))
        delta = AlgebraElement(wedge(gamma[:3]), -gamma[3:])
        C_ric = compute_C(refs, Q_hat) if riccati_output == "C" else C_star
        X_hat = apply_correction(X_hat, delta, dt_update)
        if damping == "exact":
            Sigma = riccati_damping_exact(Sigma, C_ric, gains, dt_sigma)
        elif damping == "euler":
            Sigma = riccati_step(Sigma, None, C_ric, gains, dt_sigma, include_M=False)
        else:
            try:
                Sigma = riccati_step(Sigma, None, C_ric, gains, dt_sigma, include_M=False)
            except LostPositivity:
                Sigma = riccati_damping_exact(Sigma, C_ric, gains, dt_sigma)
    return FilterState(X_hat, Sigma, fs.t), delta


def state_estimate(fs: FilterState) -> ManifoldState:
    return state_from_group(fs.X_hat)


def local_error(truth: GroupElement, estimate: GroupElement) -> np.ndarray:
    """Stacked local coordinates of ``phi(truth * estimate^-1, origin)``."""
    E = group_error(truth, estimate)
    return theta(state_from_group(E)).stacked()


def lyapunov_value(fs: FilterState, truth: GroupElement) -> float:
    eps = local_error(truth, fs.X_hat)
    return float(eps @ np.linalg.solve(fs.Sigma, eps))


def group_error_norms(truth: GroupElement, estimate: GroupElement) -> tuple[float, float]:
    """``(||Q_tilde - I||_F, ||q_tilde||)``."""
    E = group_error(truth, estimate)
    return float(np.linalg.norm(E.Q - _I3)), float(np.linalg.norm(E.q))


@dataclass
class EquivariantFilter:
    """Stateful driver around the functional core, used by the simulator."""

    refs: ReferenceDirections
    gains: GainConfig = field(default_factory=GainConfig)
    damping: str = "auto"
    riccati_output: str = "C"
    scale_damping: bool = True
    propagation: str = "transition"
    state: FilterState | None = None
    last_correction: AlgebraElement = field(default_factory=AlgebraElement.zero)

    name = "eqf"

    def __post_init__(self):
        if self.state is None:
            self.state = FilterState.initial(self.gains)

    def predict(self, u, dt: float) -> None:
        self.state = predict(self.state, u, dt, self.gains, propagation=self.propagation)

    def update(self, y: Measurement, dt_update: float, iterations: int = 1) -> None:
        self.state, self.last_correction = update(
            self.state,
            y,
            self.refs,
            self.gains,
            dt_update,
            iterations,
            damping=self.damping,
            riccati_output=self.riccati_output,
            scale_damping=self.scale_damping,
        )

    def estimate(self) -> ManifoldState:
        return state_estimate(self.state)

    def correction_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        S = self.last_correction.S
        return np.array([S[2, 1], S[0, 2], S[1, 0]]), self.last_correction.s

    def sigma_trace(self) -> float:
        return float(np.trace(self.state.Sigma))
