"""SO(3) and SE(3) primitives.

Rotations are plain ``(3, 3)`` float arrays. Elements of SE(3) are stored as
``(Q, q)`` pairs with the product ``(Q2, q2)(Q1, q1) = (Q2 Q1, Q2 q1 + q2)``,
i.e. the usual homogeneous-matrix product of ``[[Q, q], [0, 1]]``. Algebra
elements are ``(S, s)`` with ``S`` skew-symmetric.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import NearPiSingularity, NonSkewInput

SMALL_ANGLE = 1e-6
PI_MARGIN = 1e-6

_I3 = np.eye(3)


class GroupElement(NamedTuple):
    Q: np.ndarray
    q: np.ndarray

    @classmethod
    def identity(cls) -> GroupElement:
        return cls(np.eye(3), np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.Q
        T[:3, 3] = self.q
        return T


class AlgebraElement(NamedTuple):
    S: np.ndarray
    s: np.ndarray

    @classmethod
    def zero(cls) -> AlgebraElement:
        return cls(np.zeros((3, 3)), np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        X = np.zeros((4, 4))
        X[:3, :3] = self.S
        X[:3, 3] = self.s
        return X

    def __add__(self, other):  # type: ignore[override]
        return AlgebraElement(self.S + other.S, self.s + other.s)

    def scale(self, alpha: float) -> AlgebraElement:
        return AlgebraElement(alpha * self.S, alpha * self.s)


def wedge(v) -> np.ndarray:
    """Skew matrix with ``wedge(v) @ y == cross(v, y)``."""
    x, y, z = np.asarray(v, dtype=float).tolist()
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    asym = np.linalg.norm(S + S.T)
    if not asym <= tol:
        raise NonSkewInput(f"||S + S^T|| = {asym:.3e} exceeds {tol:.1e}")
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def so3_exp(v) -> np.ndarray:
    """Rodrigues formula with a Taylor fallback near zero."""
    x, y, z = np.asarray(v, dtype=float).tolist()
    th2 = x * x + y * y + z * z
    th = math.sqrt(th2)
    if th < SMALL_ANGLE:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
    # I + a K + b K^2, written out to avoid temporaries
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - b * (yy + zz), b * xy - a * z, b * xz + a * y],
            [b * xy + a * z, 1.0 - b * (xx + zz), b * yz - a * x],
            [b * xz - a * y, b * yz + a * x, 1.0 - b * (xx + yy)],
        ]
    )


def so3_angle(R: np.ndarray) -> float:
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    s = 0.5 * math.sqrt(
        (R[2, 1] - R[1, 2]) ** 2 + (R[0, 2] - R[2, 0]) ** 2 + (R[1, 0] - R[0, 1]) ** 2
    )
    return math.atan2(s, c)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Principal logarithm as a rotation vector.

    Raises :class:`NearPiSingularity` when the angle is within ``PI_MARGIN``
    of pi, where the principal branch is not defined.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    th = math.atan2(s, c)
    if th >= math.pi - PI_MARGIN:
        raise NearPiSingularity(f"rotation angle {th:.9f} rad is too close to pi")
    if th < SMALL_ANGLE:
        return w * (1.0 + th * th / 6.0)
    return w * (th / s)


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return so3_exp(axis / np.linalg.norm(axis) * angle)


def is_rotation(m: np.ndarray, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(
        np.linalg.norm(m.T @ m - _I3) <= tol and abs(np.linalg.det(m) - 1.0) <= tol
    )


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Frobenius-nearest rotation (orthogonal polar factor with det +1)."""
    U, _, Vt = np.linalg.svd(np.asarray(m, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


def se3_mul(a: GroupElement, b: GroupElement) -> GroupElement:
    return GroupElement(a.Q @ b.Q, a.Q @ b.q + a.q)


def se3_inv(a: GroupElement) -> GroupElement:
    Qt = a.Q.T
    return GroupElement(Qt, -(Qt @ a.q))


def dl(g: GroupElement, x: AlgebraElement) -> tuple[np.ndarray, np.ndarray]:
    """Differential of left multiplication by ``g`` (a tangent vector at ``g``)."""
    return g.Q @ x.S, g.Q @ x.s


def dr(g: GroupElement, x: AlgebraElement) -> tuple[np.ndarray, np.ndarray]:
    """Differential of right multiplication by ``g`` (a tangent vector at ``g``)."""
    return x.S @ g.Q, x.S @ g.q + x.s


def se3_adjoint(g: GroupElement, x: AlgebraElement) -> AlgebraElement:
    QSQt = g.Q @ x.S @ g.Q.T
    return AlgebraElement(QSQt, -(QSQt @ g.q) + g.Q @ x.s)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalised Gaussian quaternion."""
    w, x, y, z = random_unit_vector(rng, dim=4)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_unit_vector(rng: np.random.Generator, dim: int = 3) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        n = math.sqrt(v @ v)
        if n > 1e-12:
            return v / n


def random_group_element(rng: np.random.Generator, scale: float = 1.0) -> GroupElement:
    return GroupElement(random_rotation(rng), scale * rng.standard_normal(3))
