"""Deterministic fixed-step integration and convergence diagnostics.

The integrator is classic fourth-order Runge-Kutta with a fixed step: two
runs with the same configuration produce bit-identical records.  Diagnostics
quantify how trajectories approach their targets: exponential-rate fits,
settling time, overshoot, steady-state error, and the split between the decay
rate normal to a target relation and the rate along it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import ImplicitManifold
from .synthesis import residual

__all__ = [
    "SimConfig",
    "Trajectory",
    "ConvergenceReport",
    "BlowUpError",
    "NonFiniteFieldError",
    "InsufficientSamplesError",
    "integrate",
    "matrix_exponential",
    "linear_analytic_oracle",
    "fit_exponential_rate",
    "rate_split",
    "transient_metrics",
    "central_derivative",
]

BLOWUP_LIMIT = 1e12
RATE_FIT_FLOOR = 1e-8


class BlowUpError(RuntimeError):
    """State magnitude exceeded the blow-up limit during integration."""


class NonFiniteFieldError(RuntimeError):
    """The vector field produced NaN or Inf."""


class InsufficientSamplesError(ValueError):
    """Too few usable samples for a rate fit."""


def _freeze(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SimConfig:
    """Fixed-step run settings; states are recorded every ``record_every`` steps."""

    t_end: float
    step: float
    initial_state: np.ndarray
    record_every: int = 1

    def __post_init__(self):
        if not 0 < self.step <= self.t_end:
            raise ValueError(f"need 0 < step <= t_end, got step={self.step}, t_end={self.t_end}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        state = _freeze(np.atleast_1d(self.initial_state))
        if not np.all(np.isfinite(state)):
            raise ValueError("initial state must be finite")
        object.__setattr__(self, "initial_state", state)


@dataclass(frozen=True)
class Trajectory:
    """Recorded run: times plus per-time states, residuals, and inputs.

    ``states`` has shape (samples, n) or (samples, batch, n) for batched
    initial conditions; residuals and inputs drop the trailing state axis.
    """

    times: np.ndarray
    states: np.ndarray
    residuals: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        times = _freeze(self.times)
        if times.ndim != 1 or times.shape[0] < 1:
            raise ValueError("times must be a non-empty 1-d array")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        for name in ("states", "residuals", "inputs"):
            arr = _freeze(getattr(self, name))
            if arr.shape[0] != times.shape[0]:
                raise ValueError(f"{name} length does not match times")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class ConvergenceReport:
    """Transient metrics of one output channel against a reference."""

    fitted_rate: float
    settling_time_2pct: float
    steady_state_error: float
    overshoot_pct: float
    sign_change_count: int
    settled: bool


def integrate(
    field: Callable[[float, np.ndarray], np.ndarray],
    config: SimConfig,
    residual_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    input_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    """Fixed-step RK4 integration of ``field(t, state)``.

    The initial state may carry a leading batch axis; the field must then
    broadcast.  Aborts with BlowUpError when any state magnitude exceeds
    1e12 and with NonFiniteFieldError when the field produces NaN/Inf.
    """
    h = config.step
    n_steps = int(round(config.t_end / h))
    if n_steps < 1:
        raise ValueError("configuration yields no integration steps")
    y = np.array(config.initial_state, dtype=float)

    probe = np.asarray(field(0.0, y), dtype=float)
    if probe.shape != y.shape or not np.all(np.isfinite(probe)):
        raise NonFiniteFieldError(
            f"field is not finite/shape-consistent at the initial state (shape {probe.shape})"
        )

    def record(state):
        states.append(state.copy())
        residuals.append(
            np.zeros(state.shape[:-1]) if residual_fn is None else np.asarray(residual_fn(state), dtype=float)
        )
        inputs.append(
            np.zeros(state.shape[:-1]) if input_fn is None else np.asarray(input_fn(state), dtype=float)
        )

    states: list = []
    residuals: list = []
    inputs: list = []
    times = [0.0]
    record(y)

    sixth = h / 6.0
    half = h / 2.0
    for k in range(n_steps):
        t = k * h
        k1 = field(t, y)
        k2 = field(t + half, y + half * k1)
        k3 = field(t + half, y + half * k2)
        k4 = field(t + h, y + h * k3)
        y = y + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        peak = np.max(np.abs(y))
        if not peak < BLOWUP_LIMIT:
            t_fail = (k + 1) * h
            if math.isfinite(peak):
                raise BlowUpError(f"|state| = {peak:.3e} exceeded {BLOWUP_LIMIT:.0e} at t = {t_fail:.6g}")
            raise NonFiniteFieldError(f"state became non-finite at t = {t_fail:.6g}")
        if (k + 1) % config.record_every == 0:
            times.append((k + 1) * h)
            record(y)

    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        residuals=np.array(residuals),
        inputs=np.array(inputs),
    )


def matrix_exponential(a: np.ndarray) -> np.ndarray:
    """exp(A) by scaling-and-squaring on a Taylor series, accurate to ~1e-14."""
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a, np.inf)
    squarings = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    scaled = a / (2.0**squarings)
    result = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, 40):
        term = term @ scaled / k
        result = result + term
        if np.linalg.norm(term, np.inf) <= 1e-18 * np.linalg.norm(result, np.inf):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def linear_analytic_oracle(a: np.ndarray, x0: np.ndarray, t: float) -> np.ndarray:
    """Exact solution exp(A t) x0 of xdot = A x (reference for the integrator)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    return matrix_exponential(a * t) @ np.asarray(x0, dtype=float)


def fit_exponential_rate(times, values, floor: float = RATE_FIT_FLOOR) -> float:
    """Decay rate from the least-squares slope of ln|values| against time.

    Samples with |value| <= floor are excluded; at least 10 must remain.
    Positive return means decay.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = np.abs(values) > floor
    if int(mask.sum()) < 10:
        raise InsufficientSamplesError(
            f"only {int(mask.sum())} samples above floor {floor:g}; need >= 10"
        )
    slope = np.polyfit(times[mask], np.log(np.abs(values[mask])), 1)[0]
    return float(-slope)


def rate_split(
    trajectory: Trajectory,
    manifold: ImplicitManifold,
    equilibrium=None,
) -> tuple[float, float]:
    """(tangential_rate, normal_rate) decay split of a converging trajectory.

    Normal rate: fit of the relation residual |M(t)|.  Tangential rate: fit of
    the base-coordinate error |x(t) - x*| with x* the base equilibrium (origin
    by default).  A direction already at its target reports rate 0.
    """
    states = trajectory.states
    base = states[..., :-1]
    lam = states[..., -1]
    m = residual(manifold, base, lam)
    if equilibrium is None:
        equilibrium = np.zeros(base.shape[-1])
    err = np.linalg.norm(base - np.asarray(equilibrium, dtype=float), axis=-1)

    def safe_fit(vals):
        try:
            return fit_exponential_rate(trajectory.times, vals)
        except InsufficientSamplesError:
            return 0.0

    return safe_fit(err), safe_fit(m)


def transient_metrics(trajectory: Trajectory, reference: float, channel: int) -> ConvergenceReport:
    """Settling/overshoot/SSE/sign-change metrics for one state channel.

    The settling band is 2% of |reference|, or 2% of the peak deviation when
    the reference is zero.  Overshoot is the excursion past the reference in
    the step direction, as a percentage of the same denominator.  Sign changes
    are counted above a noise floor of 1e-6 times the peak deviation.
    """
    y = trajectory.states[..., channel]
    if y.ndim != 1:
        raise ValueError("transient metrics need an unbatched trajectory")
    t = trajectory.times
    err = y - reference
    peak_dev = float(np.max(np.abs(err)))
    denom = abs(reference) if reference != 0.0 else peak_dev
    band = 0.02 * denom

    above = np.abs(err) > band
    if not above.any():
        settling, settled = 0.0, True
    elif above[-1]:
        settling, settled = math.inf, False
    else:
        settling = float(t[int(np.flatnonzero(above).max()) + 1])
        settled = True

    direction = math.copysign(1.0, reference - y[0]) if reference != y[0] else 1.0
    excess = float(np.max(err * direction))
    overshoot = 100.0 * max(0.0, excess) / denom if denom > 0 else 0.0

    floor = 1e-6 * peak_dev
    signs = np.sign(np.where(np.abs(err) > floor, err, 0.0))
    signs = signs[signs != 0]
    changes = int(np.sum(signs[1:] * signs[:-1] < 0))

    try:
        rate = fit_exponential_rate(t, err)
    except InsufficientSamplesError:
        rate = 0.0

    return ConvergenceReport(
        fitted_rate=rate,
        settling_time_2pct=settling,
        steady_state_error=float(abs(err[-1])),
        overshoot_pct=overshoot,
        sign_change_count=changes,
        settled=settled,
    )


def central_derivative(times, values) -> np.ndarray:
    """Fourth-order five-point derivative at interior samples times[2:-2].

    Sampling must be uniform.  The result aligns with values[2:-2]; callers
    check decay inequalities on the interior where the stencil is exact to
    O(h^4).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape[0] < 5:
        raise ValueError("need at least 5 samples for the five-point stencil")
    spacing = np.diff(times)
    h = spacing[0]
    if np.max(np.abs(spacing - h)) > 1e-9 * max(h, 1.0):
        raise ValueError("central_derivative requires uniform sampling")
    return (-values[4:] + 8.0 * values[3:-1] - 8.0 * values[1:-3] + values[:-4]) / (12.0 * h)
