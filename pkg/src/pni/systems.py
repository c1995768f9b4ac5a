"""Concrete plants and closed loops: three stabilization examples, a linear
conditioning demo, and a DC-DC buck converter under two cascade controllers.

The buck closed-loop matrices are assembled by substituting the controller
expressions into the open-loop model rather than transcribing final
coefficient tables, so every entry is traceable to the substitution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import ImplicitManifold, ResidualSign
from .synthesis import ClosedLoopField, ControlAffinePlant, PniLaw, close_loop

__all__ = [
    "SynthesizedSystem",
    "make_a1",
    "make_a2",
    "make_a3",
    "BuckParams",
    "BuckState",
    "AffineField",
    "BuckOpenLoop",
    "BuckLoop",
    "buck_open_loop",
    "buck_dual_pi",
    "buck_pni",
    "eigenvalues",
    "linearize",
]


@dataclass(frozen=True)
class SynthesizedSystem:
    """A plant, its synthesized law, the closed loop, and the state-box
    half-width on which the example is exercised."""

    plant: ControlAffinePlant
    law: PniLaw
    loop: ClosedLoopField
    domain: float


def make_a1(alpha: float) -> SynthesizedSystem:
    """Planar plant x1dot = x1 + x2, x2dot = u, target relation x2 + 2*x1 = 0.

    With alpha = 1 the closed loop is xdot = [[1, 1], [-4, -3]] x.
    """
    manifold = ImplicitManifold(
        phi=lambda x: 2.0 * x[..., 0],
        grad_phi=lambda x: 2.0 * np.ones_like(x),
        sign=ResidualSign.PLUS,
    )
    plant = ControlAffinePlant(
        f=lambda x, lam: (x[..., 0] + lam)[..., None],
        g=lambda x, lam: np.zeros_like(lam),
        state_dim=2,
    )
    law = PniLaw(manifold=manifold, alpha=alpha)
    return SynthesizedSystem(plant, law, close_loop(plant, law), domain=2.0)


def make_a2(alpha: float) -> SynthesizedSystem:
    """Oscillatory unstable plant x1dot = x2, x2dot = -13*x1 + 4*x2 + u.

    The law cancels the fiber drift; with target relation x2 + x1 = 0 and
    alpha = 1 the closed loop is xdot = [[0, 1], [-1, -2]] x (double pole -1).
    """
    manifold = ImplicitManifold(
        phi=lambda x: x[..., 0],
        grad_phi=lambda x: np.ones_like(x),
        sign=ResidualSign.PLUS,
    )
    plant = ControlAffinePlant(
        f=lambda x, lam: lam[..., None],
        g=lambda x, lam: -13.0 * x[..., 0] + 4.0 * lam,
        state_dim=2,
    )
    law = PniLaw(manifold=manifold, alpha=alpha, cancel_drift=True)
    return SynthesizedSystem(plant, law, close_loop(plant, law), domain=2.0)


def make_a3(alpha: float) -> SynthesizedSystem:
    """Nonlinear plant x1dot = -x1 + x1^3*x2, x2dot = u, relation x2 + x1^2 = 0.

    The target dynamics x1dot = -x1 - x1^5 converge asymptotically (checked
    by the velocity-storage test), so the origin is asymptotically stable.
    """
    manifold = ImplicitManifold(
        phi=lambda x: x[..., 0] ** 2,
        grad_phi=lambda x: 2.0 * x,
        sign=ResidualSign.PLUS,
    )
    plant = ControlAffinePlant(
        f=lambda x, lam: (-x[..., 0] + x[..., 0] ** 3 * lam)[..., None],
        g=lambda x, lam: np.zeros_like(lam),
        state_dim=2,
    )
    law = PniLaw(manifold=manifold, alpha=alpha)
    return SynthesizedSystem(plant, law, close_loop(plant, law), domain=0.8)


# --------------------------------------------------------------------------
# DC-DC buck converter with cascade voltage/current control
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BuckParams:
    """Converter parameters and controller gains.

    Defaults are the dual-PI benchmark set (r_load 18.6 ohm, l 1 mH,
    c 510 uF, outer PI 1/30, inner PI 1/700).  The single-PI variant uses
    only kp1/ki1 plus the attractivity rate alpha.
    """

    r_load: float = 18.6
    l: float = 1e-3
    c: float = 510e-6
    kp1: float = 1.0
    ki1: float = 30.0
    kp2: float = 1.0
    ki2: float = 700.0
    alpha: float = 700.0
    v_ref: float = 10.0

    def __post_init__(self):
        if not (self.r_load > 0 and self.l > 0 and self.c > 0):
            raise ValueError("r_load, l, c must be strictly positive")
        gains = (self.kp1, self.ki1, self.kp2, self.ki2, self.alpha, self.v_ref)
        if not all(np.isfinite(g) for g in gains):
            raise ValueError("gains must be finite")


@dataclass(frozen=True)
class BuckState:
    """State layout: capacitor voltage, outer integral, inductor current,
    inner integral.  Fixes the CSV column order vc, zeta1, il, zeta2."""

    x1: float
    zeta1: float
    x2: float
    zeta2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.zeta1, self.x2, self.zeta2])

    @classmethod
    def from_array(cls, a) -> "BuckState":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class AffineField:
    """Affine vector field state -> a @ state + b, callable as field(t, state)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("a", "b"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        return state @ self.a.T + self.b

    def equilibrium(self) -> np.ndarray:
        """Least-squares solution of a x = -b (minimum norm if a is singular)."""
        return np.linalg.lstsq(self.a, -self.b, rcond=None)[0]


@dataclass(frozen=True)
class BuckOpenLoop:
    """Open-loop model xdot = a @ x + b_inputs @ (v_ref, i_ref, u)."""

    a: np.ndarray
    b_inputs: np.ndarray

    def field(self, state, v_ref: float, i_ref: float, u: float) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        return state @ self.a.T + self.b_inputs @ np.array([v_ref, i_ref, u])


@dataclass(frozen=True)
class BuckLoop:
    """Closed-loop converter: affine field plus residual/input maps.

    ``residual`` is the current-tracking mismatch x2 - i_ref; ``control`` the
    duty input u reconstructed from the realized x2 derivative.  For the
    single-PI loop ``regulation_block`` holds the (x1, zeta1, x2) submatrix
    that governs regulation; the remaining integral state is decoupled and
    contributes a structural zero eigenvalue.
    """

    field: AffineField
    residual: Callable[[np.ndarray], np.ndarray]
    control: Callable[[np.ndarray], np.ndarray]
    regulation_block: Optional[np.ndarray] = None


def _current_reference_rows(p: BuckParams):
    """i_ref = kp1*(v_ref - x1) + ki1*zeta1 as (state row, v_ref coefficient)."""
    return np.array([-p.kp1, p.ki1, 0.0, 0.0]), p.kp1


def buck_open_loop(p: BuckParams) -> BuckOpenLoop:
    """Averaged converter model with inputs (v_ref, i_ref, u).

    x1dot = -x1/(RC) + x2/C, zeta1dot = v_ref - x1,
    x2dot = -x1/L + u/L,     zeta2dot = i_ref - x2.
    """
    a = np.array(
        [
            [-1.0 / (p.r_load * p.c), 0.0, 1.0 / p.c, 0.0],
            [-1.0, 0.0, 0.0, 0.0],
            [-1.0 / p.l, 0.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
        ]
    )
    b_inputs = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0 / p.l],
            [0.0, 1.0, 0.0],
        ]
    )
    return BuckOpenLoop(a=a, b_inputs=b_inputs)


def _residual_fn(p: BuckParams):
    def resid(state):
        state = np.asarray(state, dtype=float)
        i_ref = p.kp1 * (p.v_ref - state[..., 0]) + p.ki1 * state[..., 1]
        return state[..., 2] - i_ref

    return resid


def buck_dual_pi(p: BuckParams) -> BuckLoop:
    """Dual-PI cascade: outer PI forms i_ref, inner PI forms the duty input.

    Built by substituting u = kp2*(i_ref - x2) + ki2*zeta2 and
    i_ref = kp1*(v_ref - x1) + ki1*zeta1 into the open-loop model.  Note the
    inner integral gain enters the current row as ki2/l via the u/l path.
    """
    open_loop = buck_open_loop(p)
    bv, bi, bu = open_loop.b_inputs.T
    i_ref_row, i_ref_vref = _current_reference_rows(p)
    u_row = p.kp2 * (i_ref_row - np.array([0.0, 0.0, 1.0, 0.0]))
    u_row = u_row + p.ki2 * np.array([0.0, 0.0, 0.0, 1.0])
    u_vref = p.kp2 * i_ref_vref

    a_cl = open_loop.a + np.outer(bi, i_ref_row) + np.outer(bu, u_row)
    b_cl = (bv + bi * i_ref_vref + bu * u_vref) * p.v_ref

    def control(state):
        state = np.asarray(state, dtype=float)
        i_ref = p.kp1 * (p.v_ref - state[..., 0]) + p.ki1 * state[..., 1]
        return p.kp2 * (i_ref - state[..., 2]) + p.ki2 * state[..., 3]

    return BuckLoop(field=AffineField(a_cl, b_cl), residual=_residual_fn(p), control=control)


def buck_pni(p: BuckParams) -> BuckLoop:
    """Single-PI loop: the current row is replaced by the pathway/push law.

    The target relation is x2 = i_ref(x1, zeta1); the current derivative is
    rebuilt as d(i_ref)/dt - alpha*(x2 - i_ref), which makes the residual
    decay at exactly alpha.  Only kp1, ki1, alpha are used.  The inner
    integral state remains defined but feeds nothing back (zero column).
    """
    open_loop = buck_open_loop(p)
    bv, bi, bu = open_loop.b_inputs.T
    i_ref_row, i_ref_vref = _current_reference_rows(p)

    a_cl = open_loop.a + np.outer(bi, i_ref_row)
    b_cl = (bv + bi * i_ref_vref) * p.v_ref

    # pathway: d(i_ref)/dt through the (x1, zeta1) rows; push: -alpha*(x2 - i_ref)
    grad = np.array([-p.kp1, p.ki1])
    m_row = np.array([0.0, 0.0, 1.0, 0.0]) - i_ref_row
    a_cl[2] = grad @ a_cl[:2] - p.alpha * m_row
    b_cl[2] = grad @ b_cl[:2] - p.alpha * (-i_ref_vref) * p.v_ref

    field = AffineField(a_cl, b_cl)
    resid = _residual_fn(p)

    def control(state):
        state = np.asarray(state, dtype=float)
        x2dot = field(0.0, state)[..., 2]
        return p.l * x2dot + state[..., 0]

    return BuckLoop(
        field=field,
        residual=resid,
        control=control,
        regulation_block=a_cl[:3, :3].copy(),
    )


# --------------------------------------------------------------------------
# Spectra
# --------------------------------------------------------------------------

def linearize(field, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Recover (a, b) of an affine field by probing basis states.

    Exact for affine fields up to floating-point roundoff; used to read the
    matrix out of a synthesized closed loop.
    """
    if isinstance(field, AffineField):
        return np.array(field.a), np.array(field.b)
    zero = np.zeros(dim)
    f = field.field if isinstance(field, ClosedLoopField) else field
    b = np.asarray(f(zero), dtype=float)
    a = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        a[:, j] = np.asarray(f(e), dtype=float) - b
    return a, b


def _char_poly_coeffs(a: np.ndarray) -> np.ndarray:
    """Characteristic polynomial coefficients by the trace-recursion method."""
    n = a.shape[0]
    coeffs = np.empty(n + 1)
    coeffs[0] = 1.0
    m = np.eye(n)
    for k in range(1, n + 1):
        m = a @ m
        coeffs[k] = -np.trace(m) / k
        m = m + coeffs[k] * np.eye(n)
    return coeffs


def eigenvalues(a) -> np.ndarray:
    """All eigenvalues of a linear field, sorted by real part then imaginary.

    For 2x2 matrices the quadratic formula on trace/determinant is used, so
    exact double roots stay exact; larger matrices go through the
    characteristic polynomial with a companion-matrix root solve.
    """
    mat = np.asarray(getattr(a, "a", a), dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    n = mat.shape[0]
    if n == 1:
        eig = np.array([mat[0, 0] + 0j])
    elif n == 2:
        tr = mat[0, 0] + mat[1, 1]
        det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        disc = tr * tr - 4.0 * det
        if disc >= 0:
            root = np.sqrt(disc)
            eig = np.array([(tr - root) / 2.0 + 0j, (tr + root) / 2.0 + 0j])
        else:
            root = np.sqrt(-disc)
            eig = np.array([(tr - 1j * root) / 2.0, (tr + 1j * root) / 2.0])
    else:
        eig = np.roots(_char_poly_coeffs(mat))
    order = np.lexsort((eig.imag, eig.real))
    return eig[order]
