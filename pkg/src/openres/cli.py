"""Command-line front end.

Usage::

    openres <validate|resonances|evolve|montecarlo|kernel|nonmarkovian> --config PATH
            [--output PATH] [--format csv|json] [--seed N] [--trajectories K]
            [--dt X] [--t-max X] [--z-max X] [--emit-plot-data PATH]

The config is a JSON document: either a bare system spec or a run config
with a ``"spec"`` entry (inline object or path relative to the config) plus
command parameters (``state0``, ``times``, ``dt``, ``t_max``,
``trajectories``, ``seed``, ``scheme``, ``z_max``, ``profile``, ``tau_max``,
``dtau``, ``omega_bar``).  Flags override config fields.

Exit codes: 0 success, 1 I/O, 2 validation, 3 numerical precondition,
4 resolution or resource guard.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import memory, moments, resonances, trajectories
from .errors import (
    ConsistencyError,
    NumericalPreconditionError,
    OpenResError,
    ResolutionError,
    ResourceError,
    SpecificationError,
)
from .model import (
    SystemSpec,
    build_damping_matrix,
    build_effective_hamiltonian,
    complex_matrix_from_json,
    overlap_diagnostics,
    validate_spec,
)

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_RESOLUTION = 0, 1, 2, 3, 4
THREADS_ENV = "OPENRES_THREADS"
COMMANDS = ("validate", "resonances", "evolve", "montecarlo", "kernel", "nonmarkovian")
DEFAULT_FORMAT = {
    "validate": "json", "resonances": "json", "evolve": "csv",
    "montecarlo": "csv", "kernel": "csv", "nonmarkovian": "csv",
}


class ConfigError(SpecificationError):
    pass


# ---------------------------------------------------------------------------
# config handling


def _read_json(path: Path) -> Any:
    text = path.read_text()  # OSError -> exit 1
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_config(path: str | os.PathLike) -> tuple[dict[str, Any], SystemSpec]:
    """Return ``(run_config, spec)``; a bare spec document gives an empty run config."""
    path = Path(path)
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    if "spec" in doc:
        cfg = dict(doc)
        raw = cfg.pop("spec")
        if isinstance(raw, str):
            ref = Path(raw)
            if not ref.is_absolute():
                ref = path.parent / ref
            if not ref.exists():
                raise FileNotFoundError(f"spec file not found: {ref}")
            raw = _read_json(ref)
    else:
        cfg, raw = {}, doc
    if not isinstance(raw, dict):
        raise ConfigError("spec must be a JSON object")
    return cfg, SystemSpec.from_dict(raw)


def _vector(obj, L: int, what: str) -> np.ndarray:
    v = np.asarray(complex_matrix_from_json(obj), dtype=complex).ravel()
    if v.size != L:
        raise ConfigError(f"{what} must have {L} entries, got {v.size}")
    return v


def parse_state(obj: dict[str, Any] | None, spec: SystemSpec) -> moments.GaussianState:
    """Initial state from the config; defaults to the thermal state at the spec's n_th."""
    L = spec.n_modes
    if obj is None:
        return moments.GaussianState.thermal(L, spec.n_th)
    kind = obj.get("kind", "moments")
    n = float(obj.get("n_th", 0.0))
    if kind == "vacuum":
        return moments.GaussianState.vacuum(L)
    if kind == "thermal":
        return moments.GaussianState.thermal(L, float(obj.get("n_th", spec.n_th)))
    if kind == "coherent":
        return moments.GaussianState.coherent(_vector(obj["mu"], L, "mu"), n_th=n)
    if kind == "moments":
        m = _vector(obj["m"], L, "m") if "m" in obj else np.zeros(L, complex)
        N = complex_matrix_from_json(obj["N"]) if "N" in obj else np.zeros((L, L), complex)
        S = complex_matrix_from_json(obj["S"]) if "S" in obj else np.zeros((L, L), complex)
        return moments.GaussianState(m, N, S)
    raise ConfigError(f"unknown state0 kind {kind!r}")


def _profile(cfg: dict[str, Any], spec: SystemSpec) -> memory.SpectralProfile:
    d = cfg.get("profile")
    if d is None:
        raise ConfigError("config needs a 'profile' object for this command")
    d = dict(d)
    if "W0" not in d:
        d["W0"] = {"re": spec.W.real.tolist(), "im": spec.W.imag.tolist()}
        if spec.V is not None and "V0" not in d:
            d["V0"] = {"re": spec.V.real.tolist(), "im": spec.V.imag.tolist()}
    prof = memory.SpectralProfile.from_dict(d)
    if prof.n_modes != spec.n_modes:
        raise ConfigError("profile W0 rows must match the number of modes")
    return prof


def _get(cfg, args, name, default=None, cast=float):
    flag = getattr(args, name, None)
    if flag is not None:
        return cast(flag)
    if name in cfg:
        return cast(cfg[name])
    if default is None:
        raise ConfigError(f"missing parameter {name!r} (config field or --{name.replace('_', '-')})")
    return cast(default)


def _times(cfg, args) -> np.ndarray:
    if "times" in cfg and args.dt is None and args.t_max is None:
        return np.asarray(cfg["times"], dtype=float)
    dt, t_max = _get(cfg, args, "dt"), _get(cfg, args, "t_max")
    n = int(round(t_max / dt))
    return dt * np.arange(n + 1)


# ---------------------------------------------------------------------------
# output


def _plot_rows(header: list[str], body: list[list[str]]):
    for row in body:
        for name, val in zip(header[1:], row[1:]):
            yield row[0], name, val


def _write_plot_data(path: str, csv_text: str) -> None:
    rows = list(csv.reader(io.StringIO(csv_text)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([rows[0][0], "series", "value"])
    w.writerows(_plot_rows(rows[0], rows[1:]))
    Path(path).write_text(buf.getvalue())


def _emit(args, text: str, suffix_docs: dict[str, str] | None = None) -> None:
    if args.output:
        Path(args.output).write_text(text)
        for suffix, doc in (suffix_docs or {}).items():
            Path(args.output + suffix).write_text(doc)
    else:
        sys.stdout.write(text)
        for doc in (suffix_docs or {}).values():
            sys.stdout.write(doc)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_validate(cfg, spec: SystemSpec, args) -> int:
    problems = validate_spec(spec)
    report: dict[str, Any] = {"label": spec.label, "spec_hash": spec.spec_hash, "violations": problems}
    if not problems:
        report["overlap"] = overlap_diagnostics(spec, build_damping_matrix(spec)).to_dict()
    report["valid"] = not problems
    _emit(args, _dumps(report))
    for p in problems:
        print(f"violation: {p}", file=sys.stderr)
    return EXIT_OK if not problems else EXIT_VALIDATION


def cmd_resonances(cfg, spec: SystemSpec, args) -> int:
    gamma = build_damping_matrix(spec)
    dec = resonances.decompose(build_effective_hamiltonian(spec, gamma))
    report = resonances.resonance_report(dec)
    report["spec_hash"] = spec.spec_hash
    _emit(args, _dumps(report))
    return EXIT_OK


def cmd_evolve(cfg, spec: SystemSpec, args) -> int:
    state0 = parse_state(cfg.get("state0"), spec)
    times = _times(cfg, args)
    gamma = build_damping_matrix(spec)
    M = moments.derive_drift(spec, gamma)
    states = moments.evolve_series(state0, M, gamma, spec.n_th, times)
    text = moments.states_to_csv(states)
    if args.format == "json":
        text = _dumps({
            "spec_hash": spec.spec_hash,
            "times": [s.t for s in states],
            "m": [{"re": s.m.real.tolist(), "im": s.m.imag.tolist()} for s in states],
            "N": [{"re": s.N.real.tolist(), "im": s.N.imag.tolist()} for s in states],
            "S": [{"re": s.S.real.tolist(), "im": s.S.imag.tolist()} for s in states],
        })
    elif args.emit_plot_data:
        _write_plot_data(args.emit_plot_data, text)
    _emit(args, text)
    return EXIT_OK


def cmd_montecarlo(cfg, spec: SystemSpec, args) -> int:
    state0 = parse_state(cfg.get("state0"), spec)
    dt = _get(cfg, args, "dt")
    t_max = _get(cfg, args, "t_max")
    K = _get(cfg, args, "trajectories", cast=int)
    seed = _get(cfg, args, "seed", 0, cast=int)
    z_max = _get(cfg, args, "z_max", moments.DEFAULT_Z_MAX)
    scheme = cfg.get("scheme", "exact-ou")
    threads = os.environ.get(THREADS_ENV)
    ens = trajectories.run_ensemble(
        spec, state0, scheme, dt, t_max, K, seed,
        record_every=int(cfg.get("record_every", 1)),
        workers=int(threads) if threads else None,
    )
    times = cfg.get("times") if args.dt is None and args.t_max is None else None
    rep = moments.equivalence_report(spec, state0, times, ens, z_max=z_max)
    summary = rep.to_dict()
    summary["seed"] = seed
    if args.format == "json":
        _emit(args, _dumps(summary))
    else:
        text = ens.to_csv()
        if args.emit_plot_data:
            _write_plot_data(args.emit_plot_data, text)
        _emit(args, text, {".equivalence.json": _dumps(summary)} if args.output else None)
    print(f"equivalence pass={rep.passed} max|z|={rep.max_abs_z:.3f} seed={seed}", file=sys.stderr)
    return EXIT_OK


def cmd_kernel(cfg, spec: SystemSpec, args) -> int:
    prof = _profile(cfg, spec)
    tau_max = _get(cfg, args, "t_max", cfg.get("tau_max"))
    dtau = _get(cfg, args, "dt", cfg.get("dtau", memory.RESOLUTION / prof.max_frequency()))
    kern = memory.compute_kernels(prof, memory.uniform_grid(tau_max, dtau), cfg.get("method", "closed"))
    omega_bar = float(cfg.get("omega_bar", np.mean(prof.center)))
    lim = memory.markov_limit_check(kern, omega_bar, cfg.get("window", "fejer"))
    markov = {
        "omega_bar": omega_bar,
        "window": lim.window,
        "residual": lim.residual,
        "gamma_eff": {"re": lim.gamma_eff.real.tolist(), "im": lim.gamma_eff.imag.tolist()},
    }
    if args.format == "json":
        _emit(args, _dumps({
            "tau": kern.tau.tolist(),
            "Gamma": {"re": kern.Gamma.real.tolist(), "im": kern.Gamma.imag.tolist()},
            "Sigma": {"re": kern.Sigma.real.tolist(), "im": kern.Sigma.imag.tolist()},
            "markov": markov,
        }))
    else:
        text = kern.to_csv()
        if args.emit_plot_data:
            _write_plot_data(args.emit_plot_data, text)
        _emit(args, text, {".markov.json": _dumps(markov)} if args.output else None)
    print(f"markov residual={lim.residual:.6g}", file=sys.stderr)
    return EXIT_OK


def cmd_nonmarkovian(cfg, spec: SystemSpec, args) -> int:
    prof = _profile(cfg, spec)
    state0 = parse_state(cfg.get("state0"), spec)
    t_max = _get(cfg, args, "t_max")
    dt = _get(cfg, args, "dt")
    sol = memory.solve_mean_volterra(spec.omega, prof, state0.m, t_max, dt)
    dev = memory.mean_deviation(sol, spec.omega, prof, state0.m) if np.any(state0.m) else np.zeros(sol.t.size)
    if args.format == "json":
        _emit(args, _dumps({
            "t": sol.t.tolist(),
            "z": {"re": sol.z.real.tolist(), "im": sol.z.imag.tolist()},
            "markov_deviation": dev.tolist(),
            "max_markov_deviation": float(dev.max()),
        }))
    else:
        text = sol.to_csv()
        if args.emit_plot_data:
            _write_plot_data(args.emit_plot_data, text)
        _emit(args, text)
    print(f"max relative deviation from Markov mean={dev.max():.6g}", file=sys.stderr)
    return EXIT_OK


HANDLERS: dict[str, Callable[..., int]] = {
    "validate": cmd_validate,
    "resonances": cmd_resonances,
    "evolve": cmd_evolve,
    "montecarlo": cmd_montecarlo,
    "kernel": cmd_kernel,
    "nonmarkovian": cmd_nonmarkovian,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="openres", description="Multimode open-resonator field dynamics")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON system spec or run config")
    p.add_argument("--output", help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--seed", type=int)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--z-max", dest="z_max", type=float)
    p.add_argument("--emit-plot-data", metavar="PATH", help="also write long-format (t, series, value) CSV")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.format is None:
        args.format = DEFAULT_FORMAT[args.command]
    try:
        try:
            cfg, spec = load_config(args.config)
        except SpecificationError as exc:
            # an invalid spec is a validation outcome, reported the same way for every command
            if args.command == "validate":
                _emit(args, _dumps({"valid": False, "violations": [str(exc)]}))
            raise
        return HANDLERS[args.command](cfg, spec, args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ResolutionError, ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except (NumericalPreconditionError, ConsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OpenResError, ValueError, KeyError, TypeError) as exc:
        msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
