"""Group actions of SE(3) on states, inputs and outputs, and the equivariant lift."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .liegroup import (
    AlgebraElement,
    GroupElement,
    se3_adjoint,
    se3_inv,
    se3_mul,
    so3_exp,
    so3_log,
    wedge,
)
from .model import ManifoldState, Measurement, SystemInput

ORIGIN = ManifoldState(np.eye(3), np.zeros(3))


class LocalError(NamedTuple):
    eps_R: np.ndarray
    eps_omega: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.eps_R, self.eps_omega])

    @classmethod
    def from_vector(cls, eps) -> LocalError:
        eps = np.asarray(eps, dtype=float)
        return cls(eps[:3], eps[3:])


def phi(g: GroupElement, x: ManifoldState) -> ManifoldState:
    """Right action on the state: ``(R Q, Q^T (omega - q))``."""
    return ManifoldState(x.R @ g.Q, g.Q.T @ (x.omega - g.q))


def psi(g: GroupElement, inp: SystemInput) -> SystemInput:
    Qt = g.Q.T
    return SystemInput(Qt @ inp.u, Qt @ inp.a, Qt @ (inp.v - g.q), Qt @ (inp.w + g.q))


def rho(g: GroupElement, y: Measurement) -> Measurement:
    Qt = g.Q.T
    return Measurement(Qt @ y.d1, Qt @ y.d2, y.t)


def lift(x: ManifoldState, inp: SystemInput) -> AlgebraElement:
    return AlgebraElement(
        wedge(inp.u - x.omega + inp.v),
        -inp.a + np.cross(inp.u, inp.w) + np.cross(x.omega, inp.v),
    )


def check_lift_condition2(g: GroupElement, x: ManifoldState, inp: SystemInput, lift_fn=lift) -> float:
    """Norm of ``Ad_{g^-1} lift(x, u) - lift(phi_g(x), psi_g(u))``."""
    lhs = se3_adjoint(se3_inv(g), lift_fn(x, inp))
    rhs = lift_fn(phi(g, x), psi(g, inp))
    return float(np.sqrt(np.sum((lhs.S - rhs.S) ** 2) + np.sum((lhs.s - rhs.s) ** 2)))


def state_from_group(g: GroupElement) -> ManifoldState:
    """``phi(g, origin)`` in closed form."""
    return ManifoldState(g.Q, -(g.Q.T @ g.q))


def group_from_state(x: ManifoldState) -> GroupElement:
    """The group element that carries the origin to ``x``."""
    return GroupElement(x.R, -(x.R @ x.omega))


def group_error(truth: GroupElement, estimate: GroupElement) -> GroupElement:
    """``E = truth * estimate^{-1}``."""
    return se3_mul(truth, se3_inv(estimate))


def theta(e: ManifoldState) -> LocalError:
    """Logarithmic chart at the origin."""
    return LocalError(so3_log(e.R), np.array(e.omega, dtype=float))


def theta_inv(eps: LocalError) -> ManifoldState:
    return ManifoldState(so3_exp(eps.eps_R), np.array(eps.eps_omega, dtype=float))
