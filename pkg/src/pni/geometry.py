"""Implicit target relations and the induced tangent-space splitting.

The state space is treated as a fibered space: the last coordinate is the
fiber, every other coordinate belongs to the base.  A target relation
``lambda +/- phi(x) = 0`` carries a one-form ``grad_phi`` (the connection)
that splits each tangent vector into a horizontal part, aligned with the
relation, and a vertical part, aligned with the fiber.  The splitting is
orthogonal with respect to the rank-one metric built from the relation's
normal vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ResidualSign",
    "ImplicitManifold",
    "SplitMetric",
    "TangentSplit",
    "SingularBlockError",
    "IntegrabilityResult",
    "build_metric",
    "connection_from_metric",
    "split_tangent",
    "split_tangent_3d",
    "orthogonality_defect",
    "check_integrability",
    "finite_difference_gradient",
    "gradient_defect",
]

# Divisor blocks smaller than this are treated as singular.
SINGULAR_TOL = 1e-12


class SingularBlockError(ValueError):
    """A metric block used as a divisor is numerically zero."""


class ResidualSign(Enum):
    """Convention for the residual: PLUS is lam + phi(x), MINUS is lam - phi(x)."""

    PLUS = 1
    MINUS = -1


def _freeze(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImplicitManifold:
    """Target relation ``lam + sign*phi(x) = 0`` with its gradient one-form.

    ``phi`` maps a base point (1-d array, possibly batched on leading axes)
    to the fiber coordinate; ``grad_phi`` returns the gradient with the same
    trailing shape as the base point.  Both callables must be consistent:
    ``gradient_defect`` cross-validates them by central differences.
    """

    phi: Callable[[np.ndarray], np.ndarray]
    grad_phi: Callable[[np.ndarray], np.ndarray]
    sign: ResidualSign = ResidualSign.PLUS

    def normal(self, x: np.ndarray) -> np.ndarray:
        """Normal vector [sign*grad_phi(x), 1] of the zero set at x."""
        x = np.asarray(x, dtype=float)
        g = self.sign.value * np.asarray(self.grad_phi(x), dtype=float)
        return np.concatenate([np.atleast_1d(g), [1.0]])


@dataclass(frozen=True)
class SplitMetric:
    """Symmetric metric with the last coordinate as the fiber block.

    Built from a single constraint normal it is positive semi-definite with
    rank one.  The blocks follow the base/fiber partition: ``m11`` is the
    base-base block, ``m21``/``m12`` the coupling, ``m22`` the fiber scalar.
    """

    r: np.ndarray

    def __post_init__(self):
        r = _freeze(self.r)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError(f"metric must be square, got shape {r.shape}")
        if not np.array_equal(r, r.T):
            raise ValueError("metric must be symmetric")
        object.__setattr__(self, "r", r)

    @property
    def dim(self) -> int:
        return self.r.shape[0]

    @property
    def m11(self) -> np.ndarray:
        return self.r[:-1, :-1]

    @property
    def m12(self) -> np.ndarray:
        return self.r[:-1, -1]

    @property
    def m21(self) -> np.ndarray:
        return self.r[-1, :-1]

    @property
    def m22(self) -> float:
        return float(self.r[-1, -1])


@dataclass(frozen=True)
class TangentSplit:
    """Horizontal/vertical decomposition of a tangent vector.

    The vertical part is the exact complement of the horizontal part
    (``v_v == v - v_h`` bitwise), so the base components recover the input
    with no error and the fiber component to within one rounding of the
    pathway scale.  The parts are orthogonal under the metric that produced
    the connection.
    """

    v_h: np.ndarray
    v_v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_h", _freeze(self.v_h))
        object.__setattr__(self, "v_v", _freeze(self.v_v))


@dataclass(frozen=True)
class IntegrabilityResult:
    integrable: bool
    max_asymmetry: float


def build_metric(manifold: ImplicitManifold, x) -> SplitMetric:
    """Rank-one metric n^T n from the relation's normal n = [sign*grad_phi, 1].

    Raises ValueError when phi or grad_phi is undefined (non-finite) at x.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    phi_val = np.asarray(manifold.phi(x), dtype=float)
    normal = manifold.normal(x)
    if not (np.all(np.isfinite(phi_val)) and np.all(np.isfinite(normal))):
        raise ValueError(f"phi/grad_phi undefined at x={x!r}")
    return SplitMetric(np.outer(normal, normal))


def connection_from_metric(metric: SplitMetric) -> np.ndarray:
    """Connection coefficients m21 * m22^-1 of the base/fiber splitting."""
    if abs(metric.m22) < SINGULAR_TOL:
        raise SingularBlockError(f"fiber block m22={metric.m22!r} is singular")
    return metric.m21 / metric.m22


def split_tangent(v, connection) -> TangentSplit:
    """Split v = (xdot, lamdot) into horizontal and vertical parts.

    Horizontal: (xdot, -c.xdot); vertical: (0, lamdot + c.xdot), where c is
    the connection one-form.  The vertical part is built as the exact
    complement v - v_h, and the parts are orthogonal under any symmetric
    metric whose coupling row equals c * m22.
    """
    v = np.asarray(v, dtype=float)
    connection = np.atleast_1d(np.asarray(connection, dtype=float))
    if v.ndim != 1 or v.shape[0] != connection.shape[0] + 1:
        raise ValueError(
            f"dimension mismatch: v has {v.shape}, connection has {connection.shape}"
        )
    xdot = v[:-1]
    coupled = float(connection @ xdot)
    v_h = np.concatenate([xdot, [-coupled]])
    v_v = v - v_h
    return TangentSplit(v_h, v_v)


def split_tangent_3d(v, metric: SplitMetric) -> TangentSplit:
    """Three-coordinate splitting with two fibered directions.

    Horizontal part: (xdot, -m21/m22 * xdot, -m31/m33 * xdot - m32/m33 * ydot);
    the vertical part is the remainder.  Orthogonality under the metric holds
    when the y/lambda coupling entry m23 vanishes (or the vertical part does);
    use ``orthogonality_defect`` to verify for a given metric rather than
    assuming it.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    r = metric.r
    if r.shape != (3, 3):
        raise ValueError(f"expected a 3x3 metric, got shape {r.shape}")
    m22, m33 = r[1, 1], r[2, 2]
    if abs(m22) < SINGULAR_TOL or abs(m33) < SINGULAR_TOL:
        raise SingularBlockError(f"singular divisor block: m22={m22}, m33={m33}")
    xdot, ydot, _ = v
    v_h = np.array(
        [
            xdot,
            -r[1, 0] / m22 * xdot,
            -r[2, 0] / m33 * xdot - r[2, 1] / m33 * ydot,
        ]
    )
    v_v = v - v_h
    return TangentSplit(v_h, v_v)


def orthogonality_defect(split: TangentSplit, metric) -> float:
    """Raw bilinear form v_h^T R v_v; zero when the split is metric-orthogonal."""
    r = metric.r if isinstance(metric, SplitMetric) else np.asarray(metric, dtype=float)
    return float(split.v_h @ r @ split.v_v)


def finite_difference_gradient(phi, x, base_step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of phi with step 1e-5 * (1 + |x_i|) per axis."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        h = base_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (float(phi(xp)) - float(phi(xm))) / (2.0 * h)
    return grad


def gradient_defect(manifold: ImplicitManifold, points: Sequence) -> float:
    """Worst relative mismatch between grad_phi and finite differences of phi."""
    worst = 0.0
    for x in points:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        g = np.atleast_1d(np.asarray(manifold.grad_phi(x), dtype=float))
        fd = finite_difference_gradient(manifold.phi, x)
        scale = 1.0 + float(np.max(np.abs(g)))
        worst = max(worst, float(np.max(np.abs(g - fd))) / scale)
    return worst


def _one_form_jacobian(one_form, x, base_step: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian J[i, j] = d omega_i / d x_j of a one-form."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = x.shape[0]
    jac = np.empty((k, k))
    for j in range(k):
        h = base_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        wp = np.atleast_1d(np.asarray(one_form(xp), dtype=float))
        wm = np.atleast_1d(np.asarray(one_form(xm), dtype=float))
        jac[:, j] = (wp - wm) / (2.0 * h)
    return jac


def check_integrability(manifold, sample_points: Sequence, rtol: float = 1e-4) -> IntegrabilityResult:
    """Test whether the connection one-form is exact (curl-free) on samples.

    Accepts an ImplicitManifold (its grad_phi is checked) or a bare one-form
    callable.  Integrable means the numerically estimated Jacobian of the
    one-form is symmetric at every sample to relative tolerance ``rtol``;
    one-dimensional bases are always integrable.  Never raises: failures are
    reported through the result.
    """
    one_form = manifold.grad_phi if isinstance(manifold, ImplicitManifold) else manifold
    worst_raw = 0.0
    worst_rel = 0.0
    for x in sample_points:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape[0] < 2:
            continue
        jac = _one_form_jacobian(one_form, x)
        scale = 1.0 + float(np.max(np.abs(jac)))
        asym = float(np.max(np.abs(jac - jac.T)))
        worst_raw = max(worst_raw, asym)
        worst_rel = max(worst_rel, asym / scale)
    return IntegrabilityResult(integrable=worst_rel <= rtol, max_asymmetry=worst_raw)
