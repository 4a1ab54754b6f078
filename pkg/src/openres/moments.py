"""Exact Gaussian-moment evolution of the multimode master equation.

The Fokker-Planck equation for the Glauber-Sudarshan P function has linear
drift and constant diffusion, so Gaussian states stay Gaussian and the
dynamics closes on the first and second moments::

    dm/dt = M m
    dN/dt = conj(M) N + N M^T + 2 n_th gamma^T
    dS/dt = M S + S M^T

with ``m = <a>``, ``N_{lm} = <a_l^dagger a_m>``, ``S_{lm} = <a_l a_m>`` and
drift ``M = -i diag(omega) - gamma = -i H``.  Steps use the exact
propagator ``exp(M dt)`` so no time-discretization error enters.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ConsistencyError, NumericalPreconditionError, SpecificationError
from .model import SystemSpec, build_damping_matrix

#: Default |z| bound for the Langevin/master-equation comparison.
DEFAULT_Z_MAX = 4.0


@dataclass(frozen=True, eq=False)
class GaussianState:
    """First and normally ordered second moments of a Gaussian P function."""

    m: np.ndarray
    N: np.ndarray
    S: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.m, dtype=complex).reshape(-1)
        L = m.size
        N = np.asarray(self.N, dtype=complex)
        S = np.asarray(self.S, dtype=complex)
        if N.shape != (L, L) or S.shape != (L, L):
            raise SpecificationError(f"N and S must be {L} x {L}")
        for name, a in (("m", m), ("N", N), ("S", S)):
            if not np.all(np.isfinite(a)):
                raise SpecificationError(f"state field {name} is not finite")
            a.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n_modes(self) -> int:
        return self.m.size

    @classmethod
    def vacuum(cls, L: int, t: float = 0.0) -> "GaussianState":
        z = np.zeros((L, L), complex)
        return cls(np.zeros(L, complex), z, z, t)

    @classmethod
    def thermal(cls, L: int, n_th: float, t: float = 0.0) -> "GaussianState":
        return cls(np.zeros(L, complex), n_th * np.eye(L), np.zeros((L, L), complex), t)

    @classmethod
    def coherent(cls, mu, n_th: float = 0.0, t: float = 0.0) -> "GaussianState":
        """Displaced thermal state; ``n_th = 0`` gives a coherent state."""
        mu = np.asarray(mu, dtype=complex).reshape(-1)
        L = mu.size
        N = np.outer(mu.conj(), mu) + n_th * np.eye(L)
        return cls(mu, N, np.outer(mu, mu), t)

    def covariance(self) -> np.ndarray:
        """``N - outer(conj m, m)``: normally ordered covariance with the mean removed."""
        return self.N - np.outer(self.m.conj(), self.m)

    def invariant_violations(self, atol: float = 1e-10) -> list[str]:
        problems = []
        scale = max(1.0, float(np.abs(self.N).max(initial=0.0)))
        if np.abs(self.N - self.N.conj().T).max(initial=0.0) > 1e-12 * scale:
            problems.append("N is not Hermitian")
        if np.abs(self.S - self.S.T).max(initial=0.0) > 1e-12 * scale:
            problems.append("S is not symmetric")
        C = self.covariance()
        ev = np.linalg.eigvalsh(0.5 * (C + C.conj().T))
        if ev.min() < -atol * scale:
            problems.append(f"N - outer(conj m, m) has negative eigenvalue {ev.min():.3e}")
        return problems

    def replace(self, **kw) -> "GaussianState":
        d = dict(m=self.m, N=self.N, S=self.S, t=self.t)
        d.update(kw)
        return GaussianState(**d)

    def flat(self) -> np.ndarray:
        """Concatenation ``[m, N.ravel(), S.ravel()]`` (row-major)."""
        return np.concatenate([self.m, self.N.ravel(), self.S.ravel()])


def derive_drift(spec: SystemSpec, gamma: np.ndarray) -> np.ndarray:
    """Drift matrix ``M = -i diag(omega) - gamma`` of the c-number Langevin equation."""
    M = -np.asarray(gamma, dtype=complex).copy()
    M[np.diag_indices(spec.n_modes)] -= 1j * spec.omega
    return M


@lru_cache(maxsize=64)
def _propagator_cached(M_bytes: bytes, D_bytes: bytes, L: int, dt: float):
    M = np.frombuffer(M_bytes, dtype=complex).reshape(L, L)
    D = np.frombuffer(D_bytes, dtype=complex).reshape(L, L)
    if not np.any(D):
        E = expm(M * dt)
        Q = np.zeros((L, L), complex)
    else:
        # Van Loan: expm([[M, D], [0, -M^H]] h) = [[E, F], [0, E^{-H}]], Q = F E^H.
        # The lower block grows like exp(||gamma|| h), so F E^H cancels badly
        # for long steps; evaluate on a short step and double up with
        # Q(2h) = Q(h) + E(h) Q(h) E(h)^H.
        growth = np.linalg.norm(M + M.conj().T, 2) * abs(dt)
        k = max(0, int(np.ceil(np.log2(growth))) + 1) if growth > 1 else 0
        h = dt / 2**k
        B = np.zeros((2 * L, 2 * L), complex)
        B[:L, :L] = M
        B[:L, L:] = D
        B[L:, L:] = -M.conj().T
        X = expm(B * h)
        E = X[:L, :L]
        Q = X[:L, L:] @ E.conj().T
        for _ in range(k):
            Q = Q + E @ Q @ E.conj().T
            E = E @ E
        E = expm(M * dt) if k else E
        Q = 0.5 * (Q + Q.conj().T)
    E.setflags(write=False)
    Q.setflags(write=False)
    return E, Q


def propagator(M: np.ndarray, D: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(exp(M dt), Q(dt))`` with ``Q = int_0^dt e^{Ms} D e^{M^H s} ds``.

    Results are cached on the exact bytes of ``(M, D, dt)``.
    """
    M = np.ascontiguousarray(M, dtype=complex)
    D = np.ascontiguousarray(D, dtype=complex)
    return _propagator_cached(M.tobytes(), D.tobytes(), M.shape[0], float(dt))


def _check_dt(dt: float) -> float:
    dt = float(dt)
    if not np.isfinite(dt) or dt < 0:
        raise SpecificationError(f"dt must be finite and non-negative, got {dt}")
    return dt


def evolve_state(
    state: GaussianState, M: np.ndarray, gamma: np.ndarray, n_th: float, dt: float
) -> GaussianState:
    """Advance a Gaussian state by ``dt`` with the exact propagator.

    ``dt = 0`` returns the state unchanged; negative ``dt`` is rejected.
    """
    dt = _check_dt(dt)
    if dt == 0:
        return state
    D = 2.0 * n_th * np.asarray(gamma, dtype=complex)
    E, Q = propagator(M, D, dt)
    Ec = E.conj()
    m = E @ state.m
    N = Ec @ state.N @ E.T + Q.conj()
    S = E @ state.S @ E.T
    N = 0.5 * (N + N.conj().T)
    S = 0.5 * (S + S.T)
    out = GaussianState(m, N, S, state.t + dt)
    if not (np.all(np.isfinite(out.N)) and np.all(np.isfinite(out.m))):
        raise ConsistencyError("non-finite state after evolution")
    return out


def evolve_series(
    state0: GaussianState, M: np.ndarray, gamma: np.ndarray, n_th: float, times: Sequence[float]
) -> list[GaussianState]:
    """States at each of the absolute (non-decreasing, >= state0.t) ``times``."""
    out = []
    s = state0
    for t in np.asarray(times, dtype=float):
        if t < s.t - 1e-12 * max(1.0, abs(t)):
            raise SpecificationError("times must be non-decreasing and start at or after state0.t")
        s = evolve_state(s, M, gamma, n_th, max(t - s.t, 0.0))
        s = s.replace(t=t)
        out.append(s)
    return out


def lyapunov_residual(M: np.ndarray, gamma: np.ndarray, n_th: float, N: np.ndarray) -> np.ndarray:
    """``conj(M) N + N M^T + 2 n_th gamma^T``; zero at a stationary N."""
    return M.conj() @ N + N @ M.T + 2.0 * n_th * np.asarray(gamma).T


def stationary_state(M: np.ndarray, gamma: np.ndarray, n_th: float) -> GaussianState:
    """Thermal stationary state ``m = 0, S = 0, N = n_th I``.

    Raises
    ------
    NumericalPreconditionError
        When gamma has a null space: the undamped directions (eigenvectors
        of gamma with zero eigenvalue) are listed in the message and in the
        ``undamped`` attribute of the exception.
    """
    gamma = np.asarray(gamma, dtype=complex)
    L = gamma.shape[0]
    norm = np.linalg.norm(gamma, 2)
    w, v = np.linalg.eigh(gamma)
    null = w <= 1e-12 * max(norm, 1e-300)
    if norm == 0 or np.any(null):
        vecs = v[:, null] if norm > 0 else np.eye(L)
        err = NumericalPreconditionError(
            "damping matrix is singular; undamped eigenvectors (columns): "
            + np.array2string(vecs, precision=4)
        )
        err.undamped = vecs
        raise err
    N = n_th * np.eye(L, dtype=complex)
    res = np.linalg.norm(lyapunov_residual(M, gamma, n_th, N), 2)
    if res > 1e-10 * n_th * norm or (n_th == 0 and res != 0):
        raise ConsistencyError(f"stationary Lyapunov residual {res:.3e} exceeds tolerance")
    return GaussianState(np.zeros(L, complex), N, np.zeros((L, L), complex))


def weak_coupling_reference(
    spec: SystemSpec, gamma: np.ndarray, state0: GaussianState, t: float
) -> GaussianState:
    """Evolve with the off-diagonal damping dropped (independent oscillators)."""
    gd = np.diag(np.diag(np.asarray(gamma))).astype(complex)
    return evolve_state(state0, derive_drift(spec, gd), gd, spec.n_th, t)


# ---------------------------------------------------------------------------
# Monte Carlo comparison


@dataclass
class EquivalenceReport:
    """Per-component z-scores of Monte Carlo moments against the exact solution."""

    times: np.ndarray
    analytic: np.ndarray  # (T, F) complex, F = L + 2 L^2
    estimate: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    z_re: np.ndarray
    z_im: np.ndarray
    n_modes: int
    z_max: float
    spec_hash: str
    n_trajectories: int
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def max_abs_z(self) -> float:
        return float(max(np.abs(self.z_re).max(initial=0.0), np.abs(self.z_im).max(initial=0.0)))

    @property
    def passed(self) -> bool:
        # z_max <= 0 can never certify anything.
        return self.z_max > 0 and self.max_abs_z <= self.z_max

    def component(self, quantity: str):
        """Return ``(analytic, estimate, z_re, z_im)`` for 'm', 'N' or 'S' with shape (T, ...)."""
        L = self.n_modes
        sl = {"m": slice(0, L), "N": slice(L, L + L * L), "S": slice(L + L * L, L + 2 * L * L)}[quantity]
        shape = (len(self.times),) + ((L,) if quantity == "m" else (L, L))
        return tuple(a[:, sl].reshape(shape) for a in (self.analytic, self.estimate, self.z_re, self.z_im))

    def rows(self) -> list[dict[str, Any]]:
        L = self.n_modes
        names = [f"m{i}" for i in range(L)]
        names += [f"N{i}_{j}" for i in range(L) for j in range(L)]
        names += [f"S{i}_{j}" for i in range(L) for j in range(L)]
        out = []
        for k, t in enumerate(self.times):
            for f, name in enumerate(names):
                out.append({
                    "t": float(t),
                    "component": name,
                    "analytic": [float(self.analytic[k, f].real), float(self.analytic[k, f].imag)],
                    "estimate": [float(self.estimate[k, f].real), float(self.estimate[k, f].imag)],
                    "stderr": [float(self.stderr_re[k, f]), float(self.stderr_im[k, f])],
                    "z": [float(self.z_re[k, f]), float(self.z_im[k, f])],
                })
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "z_max": self.z_max,
            "max_abs_z": self.max_abs_z,
            "n_trajectories": self.n_trajectories,
            "spec_hash": self.spec_hash,
            "times": [float(t) for t in self.times],
            "meta": self.meta,
            "components": self.rows(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _zscore(diff: np.ndarray, se: np.ndarray, atol: np.ndarray) -> np.ndarray:
    z = np.zeros_like(diff)
    big = np.abs(diff) > atol
    with np.errstate(divide="ignore", invalid="ignore"):
        z[big] = np.where(se[big] > 0, diff[big] / se[big], np.copysign(np.inf, diff[big]))
    return z


def equivalence_report(
    spec: SystemSpec,
    state0: GaussianState,
    times: Sequence[float] | None,
    ensemble,
    z_max: float = DEFAULT_Z_MAX,
    atol: float = 1e-10,
) -> EquivalenceReport:
    """Compare ensemble moment estimates with the exact Gaussian evolution.

    Deviations below ``atol * (1 + |analytic|)`` count as zero so that
    noiseless (``n_th = 0``) ensembles, which differ from the exact solution
    only by rounding, give z = 0 exactly.
    """
    if ensemble.spec_hash != spec.spec_hash:
        raise SpecificationError("ensemble was generated from a different system spec")
    grid = ensemble.times
    if times is None:
        idx = np.arange(grid.size)
    else:
        idx = np.array([ensemble.time_index(t) for t in times], dtype=int)
    sel_t = grid[idx]
    gamma = build_damping_matrix(spec)
    M = derive_drift(spec, gamma)
    states = evolve_series(state0, M, gamma, spec.n_th, sel_t)
    analytic = np.array([s.flat() for s in states])
    est, se_re, se_im = ensemble.moment_estimates()
    est, se_re, se_im = est[idx], se_re[idx], se_im[idx]
    diff = est - analytic
    tol = atol * (1.0 + np.abs(analytic))
    z_re = _zscore(diff.real, se_re, tol)
    z_im = _zscore(diff.imag, se_im, tol)
    return EquivalenceReport(
        times=sel_t, analytic=analytic, estimate=est, stderr_re=se_re, stderr_im=se_im,
        z_re=z_re, z_im=z_im, n_modes=spec.n_modes, z_max=float(z_max),
        spec_hash=spec.spec_hash, n_trajectories=ensemble.n_trajectories,
        meta=ensemble.metadata(),
    )


# ---------------------------------------------------------------------------
# CSV export


def moment_columns(L: int) -> list[str]:
    cols = []
    for i in range(L):
        cols += [f"re_m{i}[1]", f"im_m{i}[1]"]
    for q in ("N", "S"):
        for i in range(L):
            for j in range(L):
                cols += [f"re_{q}{i}_{j}[1]", f"im_{q}{i}_{j}[1]"]
    return cols


def _interleave(z: np.ndarray) -> np.ndarray:
    out = np.empty(2 * z.size)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def states_to_csv(states: Sequence[GaussianState], stderr: np.ndarray | None = None) -> str:
    """Serialize a time series; ``stderr`` (T, 2F) appends a ``stderr_`` column group."""
    L = states[0].n_modes
    cols = moment_columns(L)
    header = ["t[1/freq]"] + cols
    if stderr is not None:
        header += ["stderr_" + c for c in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k, s in enumerate(states):
        row = [fmt(s.t)] + [fmt(v) for v in _interleave(s.flat())]
        if stderr is not None:
            row += [fmt(v) for v in stderr[k]]
        w.writerow(row)
    return buf.getvalue()
