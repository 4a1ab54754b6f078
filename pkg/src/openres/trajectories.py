"""Monte Carlo ensembles of the c-number Langevin equation.

Each trajectory obeys ``dalpha/dt = M alpha + phi(t)`` with circular complex
Gaussian white noise, ``E[phi phi^H] = 2 n_th gamma delta(t - t')`` and
``E[phi phi^T] = 0``.  Averages over the ensemble are normally ordered
moments, so they can be set against :mod:`openres.moments` directly.

Trajectory ``k`` draws from its own PCG64 stream seeded by
``SeedSequence(base_seed, spawn_key=(k,))``: the ensemble does not depend on
block size, ordering, or how many workers process it.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConsistencyError, ResolutionError, ResourceError, SpecificationError
from .model import SystemSpec, build_damping_matrix
from .moments import GaussianState, derive_drift, fmt, moment_columns, propagator

SCHEMES = ("exact-ou", "euler-maruyama")

#: ``dt * ||M||_2`` must stay below this for Euler-Maruyama.
EM_STABILITY_BOUND = 0.1

DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes, only for full-path storage


def hermitian_factor(A: np.ndarray, rtol: float = 1e-12, what: str = "matrix") -> np.ndarray:
    """Return ``R`` with ``R R^H = A`` for Hermitian PSD ``A``.

    Eigenvalues in ``[-rtol ||A||, 0]`` are clamped to zero; anything more
    negative raises :class:`ConsistencyError`.
    """
    A = 0.5 * (A + A.conj().T)
    w, v = np.linalg.eigh(A)
    scale = np.abs(w).max(initial=0.0)
    if w.size and w.min() < -rtol * scale:
        raise ConsistencyError(f"{what} is not positive semidefinite (eigenvalue {w.min():.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Noise intensity ``D = 2 n_th gamma`` and a factor ``R R^H = D``."""

    intensity: np.ndarray
    factor: np.ndarray

    @classmethod
    def from_damping(cls, gamma: np.ndarray, n_th: float) -> "NoiseModel":
        D = 2.0 * float(n_th) * np.asarray(gamma, dtype=complex)
        return cls(D, hermitian_factor(D, what="noise intensity"))

    @classmethod
    def from_spec(cls, spec: SystemSpec) -> "NoiseModel":
        return cls.from_damping(build_damping_matrix(spec), spec.n_th)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.intensity)


def _circular(x: np.ndarray) -> np.ndarray:
    """Map real normals ``(..., 2L)`` to standard circular complex normals ``(..., L)``."""
    L = x.shape[-1] // 2
    return (x[..., :L] + 1j * x[..., L:]) * np.sqrt(0.5)


# ---------------------------------------------------------------------------
# initial states


def initial_factor(state0: GaussianState, atol: float = 1e-10) -> np.ndarray:
    """Real ``2L x 2L`` factor F such that ``m + (F eta)[:L] + i (F eta)[L:]``
    samples the P function of ``state0`` for ``eta ~ N(0, I_2L)``.

    Raises :class:`SpecificationError` when the state has no proper
    (non-negative) P function, e.g. squeezing below the vacuum level.
    """
    m = state0.m
    C = (state0.N - np.outer(m.conj(), m)).T  # E[d d^H]
    R = state0.S - np.outer(m, m)  # E[d d^T]
    Exx = 0.5 * (C + R).real
    Eyy = 0.5 * (C - R).real
    Exy = 0.5 * (R.imag - C.imag)
    cov = np.block([[Exx, Exy], [Exy.T, Eyy]])
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    scale = max(1.0, np.abs(w).max(initial=0.0))
    if w.min() < -atol * scale:
        raise SpecificationError(
            "initial state has no proper Glauber-Sudarshan P function "
            f"(P covariance eigenvalue {w.min():.3e} < 0); squeezed or sub-vacuum "
            "states cannot be sampled with c-number trajectories"
        )
    return v * np.sqrt(np.clip(w, 0.0, None))


def _apply_initial(m: np.ndarray, F: np.ndarray, eta: np.ndarray) -> np.ndarray:
    L = m.size
    x = eta @ F.T
    return m + x[..., :L] + 1j * x[..., L:]


def sample_initial(state0: GaussianState, rng: np.random.Generator) -> np.ndarray:
    """Draw one ``alpha(0)`` from the Gaussian P function of ``state0``."""
    F = initial_factor(state0)
    return _apply_initial(state0.m, F, rng.standard_normal(2 * state0.n_modes))


# ---------------------------------------------------------------------------
# single steps


def exact_ou_coefficients(M: np.ndarray, noise: NoiseModel, dt: float):
    """``(exp(M dt), R_Q)`` with ``R_Q R_Q^H = Q(dt)``."""
    E, Q = propagator(M, noise.intensity, dt)
    if noise.is_zero:
        return E, np.zeros_like(E)
    return E, hermitian_factor(Q, what="Q(dt)")


def step_exact_ou(alpha, M, noise: NoiseModel, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Exact Ornstein-Uhlenbeck update ``alpha' = e^{M dt} alpha + xi``.

    ``alpha`` may be a single vector or a batch ``(K, L)``.  With zero noise
    no random numbers are consumed.
    """
    alpha = np.asarray(alpha, dtype=complex)
    if dt < 0:
        raise SpecificationError("dt must be non-negative")
    if dt == 0:
        return alpha.copy()
    E, RQ = exact_ou_coefficients(M, noise, dt)
    out = alpha @ E.T
    if not noise.is_zero:
        eta = _circular(rng.standard_normal(alpha.shape[:-1] + (2 * alpha.shape[-1],)))
        out = out + eta @ RQ.T
    return out


def _em_guard(M: np.ndarray, dt: float) -> None:
    norm = np.linalg.norm(M, 2)
    if dt * norm >= EM_STABILITY_BOUND:
        raise ResolutionError(
            f"Euler-Maruyama stability guard: dt*||M|| = {dt * norm:.3g} >= {EM_STABILITY_BOUND}",
            suggested_dt=0.5 * EM_STABILITY_BOUND / norm,
        )


def step_euler_maruyama(alpha, M, noise: NoiseModel, dt: float, rng: np.random.Generator) -> np.ndarray:
    """``alpha' = alpha + M alpha dt + R eta sqrt(dt)``."""
    alpha = np.asarray(alpha, dtype=complex)
    _em_guard(M, dt)
    out = alpha + dt * (alpha @ M.T)
    if not noise.is_zero:
        eta = _circular(rng.standard_normal(alpha.shape[:-1] + (2 * alpha.shape[-1],)))
        out = out + np.sqrt(dt) * (eta @ noise.factor.T)
    return out


# ---------------------------------------------------------------------------
# streaming moments


def moment_features(alpha: np.ndarray) -> np.ndarray:
    """Per-sample ``[alpha, conj(alpha) alpha^T, alpha alpha^T]`` flattened on the last axis."""
    L = alpha.shape[-1]
    N = alpha.conj()[..., :, None] * alpha[..., None, :]
    S = alpha[..., :, None] * alpha[..., None, :]
    lead = alpha.shape[:-1]
    return np.concatenate([alpha, N.reshape(lead + (L * L,)), S.reshape(lead + (L * L,))], axis=-1)


@dataclass
class MomentAccumulator:
    """Welford/Chan accumulator for complex samples; real and imaginary
    variances are tracked separately."""

    count: int
    mean: np.ndarray
    m2_re: np.ndarray
    m2_im: np.ndarray

    @classmethod
    def empty(cls, shape) -> "MomentAccumulator":
        return cls(0, np.zeros(shape, complex), np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_batch(cls, x: np.ndarray) -> "MomentAccumulator":
        """Batch along axis 0."""
        n = x.shape[0]
        mean = x.mean(axis=0)
        d = x - mean
        return cls(n, mean, (d.real ** 2).sum(axis=0), (d.imag ** 2).sum(axis=0))

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.count == 0:
            return MomentAccumulator(self.count, self.mean.copy(), self.m2_re.copy(), self.m2_im.copy())
        if self.count == 0:
            return MomentAccumulator(other.count, other.mean.copy(), other.m2_re.copy(), other.m2_im.copy())
        n = self.count + other.count
        delta = other.mean - self.mean
        f = self.count * other.count / n
        mean = self.mean + delta * (other.count / n)
        return MomentAccumulator(
            n, mean,
            self.m2_re + other.m2_re + delta.real ** 2 * f,
            self.m2_im + other.m2_im + delta.imag ** 2 * f,
        )

    def stderr(self) -> tuple[np.ndarray, np.ndarray]:
        if self.count < 2:
            return np.zeros_like(self.m2_re), np.zeros_like(self.m2_im)
        k = 1.0 / ((self.count - 1) * self.count)
        return np.sqrt(self.m2_re * k), np.sqrt(self.m2_im * k)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray
    accumulator: MomentAccumulator
    base_seed: int
    spec_hash: str
    scheme: str
    dt: float
    n_trajectories: int
    n_modes: int
    samples: np.ndarray | None = None  # (K, T, L) when full paths were stored
    extra: dict[str, Any] = field(default_factory=dict)

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise SpecificationError(f"time {t} is not on the ensemble grid")
        return k

    def moment_estimates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(mean, stderr_re, stderr_im)``, each (T, L + 2 L^2)."""
        se_re, se_im = self.accumulator.stderr()
        return self.accumulator.mean, se_re, se_im

    def moments_at(self, t: float) -> GaussianState:
        L = self.n_modes
        v = self.accumulator.mean[self.time_index(t)]
        return GaussianState(v[:L], v[L:L + L * L].reshape(L, L), v[L + L * L:].reshape(L, L), t)

    def metadata(self) -> dict[str, Any]:
        return {
            "base_seed": self.base_seed,
            "scheme": self.scheme,
            "n_trajectories": self.n_trajectories,
            "dt": self.dt,
            "spec_hash": self.spec_hash,
            **self.extra,
        }

    def to_csv(self) -> str:
        """Moment time series with a ``stderr_`` column group."""
        L = self.n_modes
        mean, se_re, se_im = self.moment_estimates()
        cols = moment_columns(L)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t[1/freq]"] + cols + ["stderr_" + c for c in cols])
        for k, t in enumerate(self.times):
            vals = np.empty(2 * mean.shape[1])
            vals[0::2], vals[1::2] = mean[k].real, mean[k].imag
            ses = np.empty_like(vals)
            ses[0::2], ses[1::2] = se_re[k], se_im[k]
            w.writerow([fmt(t)] + [fmt(x) for x in vals] + [fmt(x) for x in ses])
        return buf.getvalue()

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, sort_keys=True)


def trajectory_rng(base_seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(base_seed, spawn_key=(k,))))


def _simulate_block(ks, *, m0, F0, A, R, scheme, n_steps, record, chunk, base_seed, want_paths):
    """Run trajectories ``ks``; returns (accumulator, paths or None)."""
    L = m0.size
    B = len(ks)
    rngs = [trajectory_rng(base_seed, k) for k in ks]
    eta0 = np.stack([r.standard_normal(2 * L) for r in rngs])
    alpha = _apply_initial(m0, F0, eta0)
    noisy = np.any(R)
    n_rec = int(record.sum())
    F = L + 2 * L * L
    mean = np.empty((n_rec, F), complex)
    m2_re = np.empty((n_rec, F))
    m2_im = np.empty((n_rec, F))
    paths = np.empty((B, n_rec, L), complex) if want_paths else None

    def rec(j):
        a = MomentAccumulator.from_batch(moment_features(alpha))
        mean[j], m2_re[j], m2_im[j] = a.mean, a.m2_re, a.m2_im
        if want_paths:
            paths[:, j] = alpha

    j = 0
    if record[0]:
        rec(0)
        j = 1
    At, Rt = A.T, R.T
    step = 0
    while step < n_steps:
        c = min(chunk, n_steps - step)
        if noisy:
            eta = _circular(np.stack([r.standard_normal((c, 2 * L)) for r in rngs]))
            kicks = eta @ Rt  # (B, c, L)
        for i in range(c):
            if scheme == "exact-ou":
                alpha = alpha @ At
            else:
                alpha = alpha + alpha @ At
            if noisy:
                alpha = alpha + kicks[:, i]
            step += 1
            if record[step]:
                rec(j)
                j += 1
    return MomentAccumulator(B, mean, m2_re, m2_im), paths


def run_ensemble(
    spec: SystemSpec,
    state0: GaussianState,
    scheme: str = "exact-ou",
    dt: float = 0.1,
    t_max: float = 1.0,
    K: int = 1000,
    base_seed: int = 0,
    *,
    record_every: int = 1,
    store_paths: bool = False,
    block_size: int = 1024,
    workers: int | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    chunk: int = 256,
) -> TrajectoryEnsemble:
    """Simulate ``K`` independent c-number Langevin trajectories.

    The grid is ``state0.t + k dt`` for ``k = 0 .. t_max/dt`` (``t_max/dt``
    must be an integer to 1e-9), recorded every ``record_every`` steps plus
    the final point.  Moments are accumulated in streaming form; full paths
    (K x T x L) are kept only with ``store_paths=True`` and must fit in
    ``memory_budget`` bytes.

    ``block_size`` and ``workers`` only affect speed, never the sampled
    paths; accumulated moments agree across partitions to rounding.
    """
    if scheme not in SCHEMES:
        raise SpecificationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if K < 1:
        raise SpecificationError("K must be >= 1")
    if dt <= 0 or t_max < 0:
        raise SpecificationError("dt must be positive and t_max non-negative")
    if state0.n_modes != spec.n_modes:
        raise SpecificationError("initial state and spec disagree on the number of modes")
    n_steps = int(round(t_max / dt))
    if abs(n_steps * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise SpecificationError(f"t_max={t_max} is not an integer multiple of dt={dt}")
    record = np.zeros(n_steps + 1, bool)
    record[::max(1, int(record_every))] = True
    record[-1] = True
    times = state0.t + dt * np.flatnonzero(record)
    L = spec.n_modes
    if store_paths:
        need = K * times.size * L * 16
        if need > memory_budget:
            raise ResourceError(
                f"storing {K} x {times.size} x {L} paths needs {need} bytes > budget {memory_budget}; "
                "use streaming mode (store_paths=False)"
            )

    gamma = build_damping_matrix(spec)
    M = derive_drift(spec, gamma)
    noise = NoiseModel.from_damping(gamma, spec.n_th)
    if scheme == "exact-ou":
        A, R = exact_ou_coefficients(M, noise, dt)
    else:
        _em_guard(M, dt)
        A, R = dt * M, np.sqrt(dt) * noise.factor
    F0 = initial_factor(state0)

    blocks = [range(s, min(s + block_size, K)) for s in range(0, K, block_size)]
    kw = dict(m0=state0.m, F0=F0, A=A, R=R, scheme=scheme, n_steps=n_steps, record=record,
              chunk=chunk, base_seed=base_seed, want_paths=store_paths)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda ks: _simulate_block(ks, **kw), blocks))
    else:
        results = [_simulate_block(ks, **kw) for ks in blocks]
    acc = MomentAccumulator.empty((times.size, L + 2 * L * L))
    for a, _ in results:  # merge in block order for bit reproducibility
        acc = acc.merge(a)
    samples = np.concatenate([p for _, p in results]) if store_paths else None
    return TrajectoryEnsemble(
        times=times, accumulator=acc, base_seed=int(base_seed), spec_hash=spec.spec_hash,
        scheme=scheme, dt=float(dt), n_trajectories=int(K), n_modes=L, samples=samples,
        extra={"t_max": float(t_max), "record_every": int(record_every)},
    )
