"""Experiment runner: build a study, simulate it, write CSV and a report.

Configuration is a flat ``key = value`` text file; ``--set`` flags override
file values.  Override keys are validated against a per-study schema before
anything runs, so typos fail fast with exit code 2.  Simulation blow-ups and
I/O failures exit 3, violated run invariants exit 4.  Outputs are
deterministic: floats are printed with 17 significant digits.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import estimation as est
from . import systems
from .sim import (
    BlowUpError,
    NonFiniteFieldError,
    SimConfig,
    Trajectory,
    fit_exponential_rate,
    InsufficientSamplesError,
    integrate,
    rate_split,
    transient_metrics,
)
from .synthesis import (
    conditioned_field,
    krasovskii_check,
    residual_decay_defect,
    target_field,
)

__all__ = ["ExperimentSpec", "ConfigError", "InvariantViolation", "run", "emit_csv", "main"]

STUDIES = (
    "A1",
    "A2",
    "A3",
    "B1_LINEAR",
    "BUCK_DUAL_PI",
    "BUCK_PNI",
    "EST_GE",
    "EST_MRE",
    "EST_CGE",
    "EXCITATION",
)

EXIT_CONFIG = 2
EXIT_SIM = 3
EXIT_INVARIANT = 4


class ConfigError(Exception):
    """Unusable study name, key, or value."""


class InvariantViolation(Exception):
    """A post-run consistency check failed."""


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated floats, got {text!r}") from exc


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"expected a float, got {text!r}") from exc


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def _parse_signal(text: str) -> str:
    if text not in ("PE", "IE"):
        raise ConfigError(f"signal must be PE or IE, got {text!r}")
    return text


_COMMON_KEYS = {
    "step": _parse_float,
    "t_end": _parse_float,
    "record_every": _parse_int,
    "x0": _float_list,
    "out": str,
}
_BUCK_KEYS = {
    "r_load": _parse_float,
    "l": _parse_float,
    "c": _parse_float,
    "kp1": _parse_float,
    "ki1": _parse_float,
    "kp2": _parse_float,
    "ki2": _parse_float,
    "alpha": _parse_float,
    "v_ref": _parse_float,
}
_SCHEMAS = {
    "A1": {**_COMMON_KEYS, "alpha": _parse_float},
    "A2": {**_COMMON_KEYS, "alpha": _parse_float},
    "A3": {**_COMMON_KEYS, "alpha": _parse_float},
    "B1_LINEAR": {
        **_COMMON_KEYS,
        "a11": _parse_float,
        "a12": _parse_float,
        "a21": _parse_float,
        "a22": _parse_float,
    },
    "BUCK_DUAL_PI": {**_COMMON_KEYS, **_BUCK_KEYS},
    "BUCK_PNI": {**_COMMON_KEYS, **_BUCK_KEYS},
    "EST_GE": {
        **_COMMON_KEYS,
        "gamma": _parse_float,
        "beta": _parse_float,
        "signal": _parse_signal,
        "theta_true": _float_list,
    },
    "EST_MRE": None,  # same as EST_GE, filled below
    "EST_CGE": None,
    "EXCITATION": {
        "step": _parse_float,
        "t_end": _parse_float,
        "out": str,
        "signal": _parse_signal,
        "window": _parse_float,
        "threshold": _parse_float,
    },
}
_SCHEMAS["EST_MRE"] = dict(_SCHEMAS["EST_GE"])
_SCHEMAS["EST_CGE"] = dict(_SCHEMAS["EST_GE"])


@dataclass
class ExperimentSpec:
    """A study name plus raw (unparsed) key -> value overrides."""

    study: str
    overrides: dict = field(default_factory=dict)


def parse_overrides(study: str, raw: dict) -> dict:
    """Validate raw overrides against the study schema; reject unknown keys."""
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}; expected one of {', '.join(STUDIES)}")
    schema = _SCHEMAS[study]
    parsed = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for study {study}")
        parsed[key] = schema[key](value)
    return parsed


def read_config_file(path: str) -> dict:
    """Read a flat ``key = value`` file; blank lines and # comments allowed."""
    raw = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


# --------------------------------------------------------------------------
# CSV and report emission
# --------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return f"{value:.17g}"


def emit_csv(trajectory: Trajectory, path, state_names=None, estimation: bool = False) -> None:
    """Write a trajectory as UTF-8 CSV with 17-significant-digit values.

    Control layout: ``t,<state names...>,residual,u``.  Estimation layout:
    ``t,err_1..err_q,err_norm`` where the norm is taken from the residual
    column.  Only unbatched trajectories can be written.
    """
    if len(trajectory) < 1:
        raise ValueError("cannot write an empty trajectory")
    states = trajectory.states
    if states.ndim != 2:
        raise ValueError("cannot write a batched trajectory")
    n = states.shape[1]
    if estimation:
        header = ["t"] + [f"err_{i + 1}" for i in range(n)] + ["err_norm"]
        columns = [trajectory.times] + [states[:, i] for i in range(n)] + [trajectory.residuals]
    else:
        if state_names is None:
            state_names = [f"x{i + 1}" for i in range(n)]
        if len(state_names) != n:
            raise ValueError(f"need {n} state names, got {len(state_names)}")
        header = ["t", *state_names, "residual", "u"]
        columns = (
            [trajectory.times]
            + [states[:, i] for i in range(n)]
            + [trajectory.residuals, trajectory.inputs]
        )
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _fmt_eig(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def _write_report(path, lines) -> None:
    rendered = []
    for key, value in lines:
        if isinstance(value, float):
            value = _fmt(value)
        rendered.append(f"{key} = {value}")
    Path(path).write_text("\n".join(rendered) + "\n", encoding="utf-8", newline="\n")


# --------------------------------------------------------------------------
# Study runners
# --------------------------------------------------------------------------

@dataclass
class _StudyOutput:
    trajectory: Optional[Trajectory]
    state_names: Optional[list]
    estimation: bool
    report: list


def _metrics_lines(prefix: str, report) -> list:
    return [
        (f"{prefix}.fitted_rate", report.fitted_rate),
        (f"{prefix}.settling_time_2pct", report.settling_time_2pct),
        (f"{prefix}.steady_state_error", report.steady_state_error),
        (f"{prefix}.overshoot_pct", report.overshoot_pct),
        (f"{prefix}.sign_change_count", str(report.sign_change_count)),
        (f"{prefix}.settled", str(report.settled)),
    ]


def _run_example_study(study: str, o: dict) -> _StudyOutput:
    alpha = o.get("alpha", 1.0)
    maker = {"A1": systems.make_a1, "A2": systems.make_a2, "A3": systems.make_a3}[study]
    system = maker(alpha)
    x0 = np.array(o.get("x0", (1.0, 1.0)), dtype=float)
    if x0.shape != (2,):
        raise ConfigError(f"{study} needs a 2-state x0, got {len(x0)} values")
    cfg = SimConfig(
        t_end=o.get("t_end", 10.0),
        step=o.get("step", 1e-3),
        initial_state=x0,
        record_every=o.get("record_every", 1),
    )
    traj = integrate(system.loop, cfg, residual_fn=system.loop.residual, input_fn=system.loop.control)

    report = [("study", study), ("alpha", alpha)]
    if study in ("A1", "A2"):
        a_cl, _ = systems.linearize(system.loop, 2)
        for i, z in enumerate(systems.eigenvalues(a_cl)):
            report.append((f"eigenvalue_{i + 1}", _fmt_eig(z)))
    else:
        target = target_field(system.plant, system.law.manifold)
        grid = [np.array([x]) for x in np.linspace(-system.domain, system.domain, 33)]
        kras = krasovskii_check(target, grid)
        report.append(("krasovskii_passed", str(kras.passed)))
        report.append(("krasovskii_worst", kras.worst))
    try:
        report.append(("residual_rate", fit_exponential_rate(traj.times, traj.residuals)))
    except InsufficientSamplesError:
        report.append(("residual_rate", "insufficient-samples"))
    tangential, normal = rate_split(traj, system.law.manifold)
    report.append(("tangential_rate", tangential))
    report.append(("normal_rate", normal))
    report.extend(_metrics_lines("x1", transient_metrics(traj, 0.0, 0)))

    probe = traj.states[:: max(1, len(traj) // 16)]
    defect = residual_decay_defect(system.loop, system.law, probe)
    report.append(("residual_decay_defect", defect))
    if defect > 1e-8:
        raise InvariantViolation(f"residual decay defect {defect:.3e} exceeds 1e-8")
    return _StudyOutput(traj, ["x1", "x2"], False, report)


def _run_b1_study(o: dict) -> _StudyOutput:
    a = np.array(
        [
            [o.get("a11", -1.0), o.get("a12", 0.5)],
            [o.get("a21", 1.0), o.get("a22", -2.0)],
        ]
    )
    try:
        conditioned = conditioned_field(a)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    x0 = np.array(o.get("x0", (1.0, 1.0)), dtype=float)
    if x0.shape != (2,):
        raise ConfigError(f"B1_LINEAR needs a 2-state x0, got {len(x0)} values")
    cfg = SimConfig(
        t_end=o.get("t_end", 10.0),
        step=o.get("step", 1e-3),
        initial_state=x0,
        record_every=o.get("record_every", 1),
    )
    connection = conditioned.connection

    def resid(state):
        return state[..., 1] + connection * state[..., 0]

    traj = integrate(lambda t, s: s @ a.T, cfg, residual_fn=resid)
    report = [("study", "B1_LINEAR"), ("connection", connection)]
    for i, z in enumerate(systems.eigenvalues(a)):
        report.append((f"eigenvalue_{i + 1}", _fmt_eig(z)))
    for i, z in enumerate(systems.eigenvalues(conditioned.matrix)):
        report.append((f"conditioned_eigenvalue_{i + 1}", _fmt_eig(z)))
    report.extend(_metrics_lines("x1", transient_metrics(traj, 0.0, 0)))
    return _StudyOutput(traj, ["x1", "x2"], False, report)


def _run_buck_study(study: str, o: dict) -> _StudyOutput:
    defaults = {"ki1": 100.0} if study == "BUCK_PNI" else {}
    keys = ("r_load", "l", "c", "kp1", "ki1", "kp2", "ki2", "alpha", "v_ref")
    params_kwargs = {k: o[k] for k in keys if k in o}
    try:
        params = systems.BuckParams(**{**defaults, **params_kwargs})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    loop = systems.buck_pni(params) if study == "BUCK_PNI" else systems.buck_dual_pi(params)

    x0 = np.array(o.get("x0", (0.0, 0.0, 0.0, 0.0)), dtype=float)
    if x0.shape != (4,):
        raise ConfigError(f"{study} needs a 4-state x0, got {len(x0)} values")
    cfg = SimConfig(
        t_end=o.get("t_end", 0.5),
        step=o.get("step", 1e-6),
        initial_state=x0,
        record_every=o.get("record_every", 100),
    )
    traj = integrate(loop.field, cfg, residual_fn=loop.residual, input_fn=loop.control)

    report = [("study", study), ("v_ref", params.v_ref), ("alpha", params.alpha)]
    eig = systems.eigenvalues(loop.field)
    for i, z in enumerate(eig):
        report.append((f"eigenvalue_{i + 1}", _fmt_eig(z)))
    if loop.regulation_block is not None:
        block_eig = systems.eigenvalues(loop.regulation_block)
        for i, z in enumerate(block_eig):
            report.append((f"regulation_eigenvalue_{i + 1}", _fmt_eig(z)))
        hurwitz = bool(np.all(block_eig.real < 0))
        report.append(("regulation_hurwitz", str(hurwitz)))
        try:
            report.append(("residual_rate", fit_exponential_rate(traj.times, traj.residuals)))
        except InsufficientSamplesError:
            report.append(("residual_rate", "insufficient-samples"))
    else:
        hurwitz = bool(np.all(eig.real < 0))
        report.append(("hurwitz", str(hurwitz)))
    report.extend(_metrics_lines("vc", transient_metrics(traj, params.v_ref, 0)))
    if not hurwitz:
        raise InvariantViolation(f"{study}: closed loop is not Hurwitz")
    return _StudyOutput(traj, ["vc", "zeta1", "il", "zeta2"], False, report)


def _run_estimation_study(study: str, o: dict) -> _StudyOutput:
    method = {"EST_GE": "GE", "EST_MRE": "MRE_GE", "EST_CGE": "CGE"}[study]
    signal_name = o.get("signal", "PE")
    signal = est.pe_test_signal() if signal_name == "PE" else est.ie_test_signal()
    if "theta_true" in o:
        theta = np.array(o["theta_true"], dtype=float)
        if theta.shape != (signal.q,):
            raise ConfigError(f"theta_true needs {signal.q} values for signal {signal_name}")
        signal = est.RegressorSignal(q=signal.q, phi=signal.phi, theta_true=theta)
    cfg = SimConfig(
        t_end=o.get("t_end", 20.0 if signal.q == 2 else 50.0),
        step=o.get("step", 1e-3),
        initial_state=np.array(signal.theta_true),
        record_every=o.get("record_every", 10),
    )
    result = est.run_estimation(
        signal,
        method,
        gamma=o.get("gamma", 100.0),
        beta=o.get("beta", 0.9),
        config=cfg,
    )
    report = [("study", study), ("method", method), ("signal", signal_name)]
    report.append(("final_error_norm", float(result.trajectory.residuals[-1])))
    report.extend(_metrics_lines("err_norm", result.norm_report))
    for i, comp in enumerate(result.component_reports):
        report.append((f"err_{i + 1}.sign_change_count", str(comp.sign_change_count)))
    return _StudyOutput(result.trajectory, None, True, report)


def _run_excitation_study(o: dict) -> _StudyOutput:
    signal_name = o.get("signal", "PE")
    signal = est.pe_test_signal() if signal_name == "PE" else est.ie_test_signal()
    verdict = est.excitation_check(
        signal.phi,
        horizon=o.get("t_end", 50.0),
        window=o.get("window", 2.0 * math.pi),
        level_threshold=o.get("threshold", 1e-3),
        dt=o.get("step", 1e-3),
    )
    report = [
        ("study", "EXCITATION"),
        ("signal", signal_name),
        ("verdict", verdict.kind.value),
        ("level", verdict.level),
        ("window", verdict.window),
    ]
    return _StudyOutput(None, None, False, report)


def run(spec: ExperimentSpec, out_dir: Optional[str] = None, suffix: str = "") -> int:
    """Execute one study and write its CSV/report files.

    Returns the process exit code: 0 on success, 2 for configuration
    errors, 3 for simulation or I/O failures, 4 for violated invariants.
    """
    try:
        overrides = parse_overrides(spec.study, spec.overrides)
        out = Path(out_dir or overrides.get("out") or os.environ.get("PNI_OUT_DIR") or ".")
        study = spec.study
        if study in ("A1", "A2", "A3"):
            output = _run_example_study(study, overrides)
        elif study == "B1_LINEAR":
            output = _run_b1_study(overrides)
        elif study in ("BUCK_DUAL_PI", "BUCK_PNI"):
            output = _run_buck_study(study, overrides)
        elif study in ("EST_GE", "EST_MRE", "EST_CGE"):
            output = _run_estimation_study(study, overrides)
        else:
            output = _run_excitation_study(overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUpError, NonFiniteFieldError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT

    try:
        out.mkdir(parents=True, exist_ok=True)
        stem = spec.study + suffix
        if output.trajectory is not None:
            csv_path = out / f"{stem}.csv"
            emit_csv(output.trajectory, csv_path, output.state_names, output.estimation)
            print(f"wrote {csv_path}")
        report_path = out / f"{stem}_report.txt"
        _write_report(report_path, output.report)
        print(f"wrote {report_path}")
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_SIM
    return 0


# --------------------------------------------------------------------------
# Command line entry
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pni", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run one study")
    runp.add_argument("study")
    runp.add_argument("--config", help="flat key = value configuration file")
    runp.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        dest="sets",
        help="override a config value (repeatable; wins over --config)",
    )
    runp.add_argument("--out", help="output directory (default $PNI_OUT_DIR or .)")
    runp.add_argument("--sweep", metavar="KEY=V1,V2,...", help="run once per value")
    sub.add_parser("list", help="list available studies")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "list":
        for study in STUDIES:
            print(study)
        return 0

    try:
        raw = read_config_file(args.config) if args.config else {}
        for item in args.sets:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, value = item.partition("=")
            raw[key.strip()] = value.strip()
        sweep_key, sweep_values = None, [None]
        if args.sweep:
            if "=" not in args.sweep:
                raise ConfigError(f"--sweep expects KEY=V1,V2,..., got {args.sweep!r}")
            sweep_key, _, joined = args.sweep.partition("=")
            sweep_key = sweep_key.strip()
            sweep_values = [v.strip() for v in joined.split(",") if v.strip()]
            if not sweep_values:
                raise ConfigError("--sweep needs at least one value")
        # validate early so a bad sweep key fails before any run
        probe = dict(raw)
        if sweep_key is not None:
            probe[sweep_key] = sweep_values[0]
        parse_overrides(args.study, probe)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    worst = 0
    for value in sweep_values:
        overrides = dict(raw)
        suffix = ""
        if sweep_key is not None:
            overrides[sweep_key] = value
            suffix = f"__{sweep_key}={value}"
        code = run(ExperimentSpec(args.study, overrides), out_dir=args.out, suffix=suffix)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
