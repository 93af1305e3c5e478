"""Baseline EKF on the 12-dimensional vectorised state ``[vect(R); omega]``.

``vect`` is column-major. The attitude block is not constrained to SO(3)
by the filter equations, so it is projected back after every update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import LostPositivity
from .liegroup import AlgebraElement, nearest_rotation, wedge
from .model import ManifoldState, Measurement, ReferenceDirections, unvect, vect

_I3 = np.eye(3)
_E = [wedge(e) for e in np.eye(3)]


class EkfState(NamedTuple):
    x: np.ndarray
    P: np.ndarray
    t: float = 0.0

    @property
    def R(self) -> np.ndarray:
        return unvect(self.x[:9])

    @property
    def omega(self) -> np.ndarray:
        return self.x[9:]

    @classmethod
    def from_state(cls, est: ManifoldState, P0: np.ndarray, t: float = 0.0) -> EkfState:
        return cls(np.concatenate([vect(est.R), est.omega]), np.array(P0, dtype=float), t)


def dynamics(x: np.ndarray, u) -> np.ndarray:
    R = unvect(x[:9])
    om = x[9:]
    return np.concatenate([vect(R @ wedge(u - om)), np.cross(om, u)])


def dynamics_jacobian(x: np.ndarray, u) -> np.ndarray:
    """d f / d x for ``f = [vect(R (u - omega)^); omega x u]``."""
    R = unvect(x[:9])
    W = wedge(np.asarray(u) - x[9:])
    J = np.zeros((12, 12))
    # vect(R W) = (W^T kron I) vect(R)
    J[:9, :9] = np.kron(W.T, _I3)
    # column j of -R omega^ is R e_j^ omega
    for j in range(3):
        J[3 * j : 3 * j + 3, 9:] = R @ _E[j]
    J[9:, 9:] = -wedge(u)
    return J


def measurement_jacobian(refs: ReferenceDirections) -> np.ndarray:
    H = np.zeros((6, 12))
    H[0:3, :9] = np.kron(_I3, refs.d1_ring)
    H[3:6, :9] = np.kron(_I3, refs.d2_ring)
    return H


def output(x: np.ndarray, refs: ReferenceDirections) -> np.ndarray:
    Rt = unvect(x[:9]).T
    return np.concatenate([Rt @ refs.d1_ring, Rt @ refs.d2_ring])


def ekf_predict(s: EkfState, u, M: np.ndarray, dt: float) -> EkfState:
    """Euler mean propagation, ``P <- F P F^T + dt M`` with ``F = I + dt J``."""
    u = np.asarray(u, dtype=float)
    F = np.eye(12) + dt * dynamics_jacobian(s.x, u)
    x = s.x + dt * dynamics(s.x, u)
    P = F @ s.P @ F.T + dt * M
    return EkfState(x, 0.5 * (P + P.T), s.t + dt)


def ekf_update(s: EkfState, y: Measurement, refs: ReferenceDirections, N: np.ndarray) -> EkfState:
    """Kalman update with Joseph-form covariance, followed by projection."""
    H = measurement_jacobian(refs)
    PHt = s.P @ H.T
    S = H @ PHt + N
    K = np.linalg.solve(S, PHt.T).T
    x = s.x + K @ (y.stacked() - output(s.x, refs))
    IKH = np.eye(12) - K @ H
    P = IKH @ s.P @ IKH.T + K @ N @ K.T
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise LostPositivity("EKF covariance is not positive definite") from None
    return project_so3(EkfState(x, P, s.t))


def project_so3(s: EkfState) -> EkfState:
    x = s.x.copy()
    x[:9] = vect(nearest_rotation(unvect(s.x[:9])))
    return EkfState(x, s.P, s.t)


@dataclass
class ExtendedKalmanFilter:
    """Stateful driver with the same interface as ``EquivariantFilter``.

    ``M`` is the continuous process gain (12x12) and ``N`` the continuous
    output gain (6x6); the discrete measurement covariance for an update of
    period ``dt`` is ``N / dt``.
    """

    refs: ReferenceDirections
    M: np.ndarray = field(default_factory=lambda: np.eye(12))
    N: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(6))
    P0: np.ndarray = field(default_factory=lambda: np.eye(12))
    state: EkfState | None = None
    last_correction: AlgebraElement = field(default_factory=AlgebraElement.zero)

    name = "ekf"

    def __post_init__(self):
        if self.state is None:
            self.state = EkfState.from_state(ManifoldState.origin(), self.P0)

    def predict(self, u, dt: float) -> None:
        self.state = ekf_predict(self.state, u, self.M, dt)

    def update(self, y: Measurement, dt_update: float, iterations: int = 1) -> None:
        # each pass reuses y with covariance N / dt_update, mirroring the EqF
        for _ in range(iterations):
            self.state = ekf_update(self.state, y, self.refs, self.N / dt_update)

    def estimate(self) -> ManifoldState:
        return ManifoldState(nearest_rotation(self.state.R), self.state.omega.copy())

    def correction_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(3), np.zeros(3)

    def sigma_trace(self) -> float:
        return float(np.trace(self.state.P))
