"""Relative attitude kinematics, direction measurements and observability rank.

State ``(R, omega)``: ``R`` rotates chaser-frame vectors into the target
frame, ``omega`` is the target angular velocity expressed in the chaser frame.
Inputs ``(u, a, v, w)``: chaser rate, target angular acceleration (chaser
frame) and the two virtual inputs of the extended system.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateDirections
from .liegroup import random_unit_vector, so3_exp, wedge

_ZERO3 = np.zeros(3)


class ManifoldState(NamedTuple):
    R: np.ndarray
    omega: np.ndarray

    @classmethod
    def origin(cls) -> ManifoldState:
        return cls(np.eye(3), np.zeros(3))


class SystemInput(NamedTuple):
    u: np.ndarray
    a: np.ndarray = _ZERO3
    v: np.ndarray = _ZERO3
    w: np.ndarray = _ZERO3


class Measurement(NamedTuple):
    d1: np.ndarray
    d2: np.ndarray
    t: float = 0.0

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.d1, self.d2])


@dataclass(frozen=True)
class ReferenceDirections:
    """Two non-collinear unit vectors fixed in the target frame."""

    d1_ring: np.ndarray
    d2_ring: np.ndarray

    def __post_init__(self):
        d1 = np.asarray(self.d1_ring, dtype=float)
        d2 = np.asarray(self.d2_ring, dtype=float)
        for name, d in (("d1_ring", d1), ("d2_ring", d2)):
            if d.shape != (3,) or not np.all(np.isfinite(d)):
                raise DegenerateDirections(f"{name} must be a finite 3-vector")
            if abs(np.linalg.norm(d) - 1.0) > 1e-12:
                raise DegenerateDirections(f"{name} is not unit length")
        if np.linalg.norm(np.cross(d1, d2)) <= 1e-6:
            raise DegenerateDirections("reference directions are collinear")
        object.__setattr__(self, "d1_ring", d1)
        object.__setattr__(self, "d2_ring", d2)

    @classmethod
    def normalized(cls, d1, d2) -> ReferenceDirections:
        d1 = np.asarray(d1, dtype=float)
        d2 = np.asarray(d2, dtype=float)
        n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
        if n1 == 0.0 or n2 == 0.0:
            raise DegenerateDirections("zero-length reference direction")
        return cls(d1 / n1, d2 / n2)

    @classmethod
    def default(cls) -> ReferenceDirections:
        return cls(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.d1_ring, self.d2_ring)


def state_derivative(x: ManifoldState, inp: SystemInput) -> tuple[np.ndarray, np.ndarray]:
    """Vector field of the extended system: ``(R_dot, omega_dot)``."""
    R_dot = x.R @ wedge(inp.u - x.omega + inp.v)
    omega_dot = np.cross(x.omega + inp.w, inp.u) + inp.a
    return R_dot, omega_dot


def integrate_truth(x: ManifoldState, inp: SystemInput, dt: float) -> ManifoldState:
    """Advance the true state by ``dt`` with inputs held constant.

    The attitude step factors as ``R exp(-dt omega^) exp(dt (u + v)^)`` and the
    rate step rotates ``omega + w`` by ``exp(-dt u^)``. Both are exact for
    ``a = v = w = 0`` (constant target rate in its own frame), so ``|omega|``
    is conserved to round-off; with ``a`` or ``v`` nonzero the scheme is first
    order.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    R_next = x.R @ so3_exp(-dt * x.omega) @ so3_exp(dt * (inp.u + inp.v))
    omega_next = so3_exp(-dt * inp.u) @ (x.omega + inp.w) - inp.w + dt * inp.a
    return ManifoldState(R_next, omega_next)


def measure(x: ManifoldState, refs: ReferenceDirections, t: float = 0.0) -> Measurement:
    Rt = x.R.T
    return Measurement(Rt @ refs.d1_ring, Rt @ refs.d2_ring, t)


def apply_noise(m: Measurement, sigma_theta: float, rng: np.random.Generator) -> Measurement:
    """Rotate each direction by ``theta ~ N(0, sigma^2)`` about a uniform axis."""
    if sigma_theta < 0.0:
        raise ValueError("sigma_theta must be non-negative")
    if sigma_theta == 0.0:
        return m
    out = []
    for d in (m.d1, m.d2):
        theta = sigma_theta * rng.standard_normal()
        axis = random_unit_vector(rng)
        out.append(so3_exp(theta * axis) @ d)
    return Measurement(out[0], out[1], m.t)


def vect(R: np.ndarray) -> np.ndarray:
    """Column-major stacking of a 3x3 matrix."""
    return np.asarray(R).reshape(9, order="F")


def unvect(r: np.ndarray) -> np.ndarray:
    return np.asarray(r).reshape(3, 3, order="F")


# --------------------------------------------------------------------------
# observability


class ObservabilityResult(NamedTuple):
    rank: int
    singular_values: np.ndarray
    jacobian: np.ndarray
    null_basis: np.ndarray
    unobserved_basis: np.ndarray
    null_angle: float


RANK_RTOL = 1e-8


@functools.lru_cache(maxsize=None)
def _lie_jacobian_fn(expanded: bool, n_lie: int):
    """Lambdified d/dx of the stacked Lie derivatives of orders 0..n_lie.

    Arguments of the returned callable: ``(x[12], u, a, v, w, d1, d2)``.
    """
    import sympy as sp

    xs = sp.symbols("x0:12")
    inputs = [sp.Matrix(sp.symbols(f"{n}0:3")) for n in ("u", "a", "v", "w", "p", "r")]
    u, a, v, w, d1, d2 = inputs
    R = sp.Matrix(3, 3, lambda i, j: xs[3 * j + i])
    om = sp.Matrix(xs[9:12])

    def hat(c):
        return sp.Matrix([[0, -c[2], c[1]], [c[2], 0, -c[0]], [-c[1], c[0], 0]])

    R_dot = R * hat(u - om + v)
    f = sp.Matrix([R_dot[i, j] for j in range(3) for i in range(3)] + list((om + w).cross(u) + a))
    blocks = [R.T * d1, R.T * d2]
    if expanded:
        RRt = R * R.T
        blocks += [RRt[:, k] for k in range(3)]
    h = sp.Matrix.vstack(*blocks)
    X = sp.Matrix(xs)

    rows = []
    L = h
    for order in range(n_lie + 1):
        J = L.jacobian(X)
        rows.append(J)
        if order < n_lie:
            L = sp.expand(J * f)
    dO = sp.Matrix.vstack(*rows)
    return sp.lambdify([xs, *[list(c) for c in inputs]], dO, modules="numpy", cse=True)


def observability_rank(
    x: ManifoldState,
    inp: SystemInput,
    refs: ReferenceDirections,
    expanded: bool = False,
    n_lie: int = 2,
) -> ObservabilityResult:
    """Numeric rank of the observability co-distribution at ``x``.

    The state is vectorised as ``[vect(R); omega]`` (column-major ``vect``)
    and the Lie derivatives of the output, up to order ``n_lie``, are
    differentiated symbolically. With ``expanded`` the output is augmented
    by the columns of ``R R^T`` (orthonormality as fictitious measurements).
    Rank threshold: singular values above ``RANK_RTOL * s_max``.
    """
    if not isinstance(refs, ReferenceDirections):
        refs = ReferenceDirections(*refs)
    if n_lie < 2:
        raise ValueError("n_lie must be at least 2")
    fn = _lie_jacobian_fn(bool(expanded), int(n_lie))
    xvec = np.concatenate([vect(x.R), x.omega])
    dO = np.asarray(
        fn(xvec, inp.u, inp.a, inp.v, inp.w, refs.d1_ring, refs.d2_ring), dtype=float
    )
    _, s, Vt = np.linalg.svd(dO)
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    null_basis = Vt[rank:].T

    n = refs.normal / np.linalg.norm(refs.normal)
    unobs = np.stack(
        [np.concatenate([vect(np.outer(n, e)), np.zeros(3)]) for e in np.eye(3)], axis=1
    )
    if null_basis.shape[1] == unobs.shape[1]:
        from scipy.linalg import subspace_angles

        angle = float(np.max(subspace_angles(null_basis, unobs)))
    else:
        angle = float("nan")
    return ObservabilityResult(rank, s, dO, null_basis, unobs, angle)
