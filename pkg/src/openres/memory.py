"""Non-Markovian field dynamics: memory kernels, bath correlations, Volterra mean.

Frequency-dependent couplings factor per channel as
``W_lm(w) = W0_lm g_m(w)`` and ``V_lm(w) = V0_lm g_m(w)`` with a real profile
``g_m`` normalized to ``g_m(center_m) = 1`` and vanishing below the channel
threshold.  Every kernel is then a contraction of the scalar transforms

    G_m(tau) = int_{threshold_m}^inf g_m(w)^2 exp(-i w tau) dw

with the amplitude matrices:

    Gamma(tau) = sum_m G_m W0[:, m] W0[:, m]^*  -  conj(G_m) V0[:, m]^* V0[:, m]
    Sigma(tau) = sum_m G_m W0[:, m] V0[:, m]^*  -  conj(G_m) V0[:, m]^* W0[:, m]^*

(outer products, first index l, second index mu).  ``G_m`` has closed forms
for both profile families, including the threshold cut; adaptive quadrature
is available as an independent check and for arbitrary bath occupations.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.special import exp1

from .errors import ResolutionError, SpecificationError
from .model import complex_matrix_from_json, complex_matrix_to_json
from .moments import fmt

PROFILE_KINDS = ("flat-band", "lorentzian")

#: Kernel grid must satisfy ``dtau <= RESOLUTION / max(center + width)``.
RESOLUTION = 0.1

#: ``tau_max * width`` below this triggers a truncation warning.
MIN_TRUNCATION = 50.0


@dataclass(frozen=True, eq=False)
class SpectralProfile:
    """Per-channel spectral shape of the inside/outside couplings.

    ``width`` is the band half-width B (flat band, ``g = 1`` on
    ``[center - B, center + B]``) or the Lorentzian half-width (``g**2 =
    width**2 / ((w - center)**2 + width**2)``).  Scalars broadcast over
    channels.  ``V0=None`` means ``V0 = W0`` (time-reversal invariant).
    """

    kind: str
    center: np.ndarray
    width: np.ndarray
    W0: np.ndarray
    V0: np.ndarray | None = None
    threshold: np.ndarray | float = 0.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise SpecificationError(f"unknown profile kind {self.kind!r}; expected one of {PROFILE_KINDS}")
        W0 = np.atleast_2d(np.asarray(self.W0, dtype=complex))
        M = W0.shape[1]
        V0 = W0 if self.V0 is None else np.atleast_2d(np.asarray(self.V0, dtype=complex))
        if V0.shape != W0.shape:
            raise SpecificationError(f"V0 shape {V0.shape} differs from W0 shape {W0.shape}")
        vals = {}
        for name in ("center", "width", "threshold"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (M,)).copy()
            if not np.all(np.isfinite(v)):
                raise SpecificationError(f"profile {name} must be finite")
            vals[name] = v
        if np.any(vals["width"] <= 0):
            raise SpecificationError("profile width must be positive")
        if np.any(vals["threshold"] < 0):
            raise SpecificationError("profile threshold must be non-negative")
        if not (np.all(np.isfinite(W0)) and np.all(np.isfinite(V0))):
            raise SpecificationError("W0 and V0 must be finite")
        for name, a in (("W0", W0), ("V0", V0), *vals.items()):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_modes(self) -> int:
        return self.W0.shape[0]

    @property
    def n_channels(self) -> int:
        return self.W0.shape[1]

    def g2(self, m: int, w) -> np.ndarray:
        """``g_m(w)**2``, zero below the threshold."""
        w = np.asarray(w, dtype=float)
        c, b, thr = self.center[m], self.width[m], self.threshold[m]
        if self.kind == "flat-band":
            out = ((w >= c - b) & (w <= c + b)).astype(float)
        else:
            out = b * b / ((w - c) ** 2 + b * b)
        return np.where(w >= thr, out, 0.0)

    def support(self, m: int) -> tuple[float, float]:
        """Integration interval of channel ``m`` (upper end may be inf)."""
        c, b, thr = self.center[m], self.width[m], self.threshold[m]
        if self.kind == "flat-band":
            return max(c - b, thr), c + b
        return thr, np.inf

    def max_frequency(self) -> float:
        return float(np.max(self.center + self.width))

    def markov_damping(self) -> np.ndarray:
        """``pi W0 W0^dagger``: the broadband limit of the damping matrix."""
        return np.pi * self.W0 @ self.W0.conj().T

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "center": self.center.tolist(),
            "width": self.width.tolist(),
            "threshold": self.threshold.tolist(),
            "W0": complex_matrix_to_json(self.W0),
            "V0": complex_matrix_to_json(self.V0),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SpectralProfile":
        try:
            W0 = complex_matrix_from_json(d["W0"])
            kind, center, width = d["kind"], d["center"], d["width"]
        except KeyError as exc:
            raise SpecificationError(f"missing field {exc.args[0]!r} in profile") from None
        V0 = complex_matrix_from_json(d["V0"]) if d.get("V0") is not None else None
        return cls(kind, center, width, W0, V0, d.get("threshold", 0.0))


# ---------------------------------------------------------------------------
# scalar transforms


def _scaled_exp1(z: complex) -> complex:
    """``exp(z) E1(z)`` without overflow (asymptotic series for |Re z| >= 600)."""
    if abs(z.real) < 600:
        return np.exp(z) * exp1(z)
    s, term, k = 0j, 1.0 / z, 0
    while True:
        s += term
        nxt = -term * (k + 1) / z
        if abs(nxt) >= abs(term) or abs(nxt) < 1e-18 * abs(s):
            return s
        term, k = nxt, k + 1


def _lorentzian_transform(tau: float, a: float, c: float, lam: float) -> complex:
    """``int_a^inf lam^2/((w-c)^2+lam^2) exp(-i w tau) dw`` in closed form.

    Partial fractions reduce it to ``int_a^inf exp(-i w tau)/(w - p) dw``
    with ``p = c +- i lam``, i.e. exponential integrals; the pole below the
    real axis adds ``-2 pi i`` when the integration ray crosses the cut.
    """
    if tau == 0:
        return complex(lam * (np.pi / 2 - np.arctan((a - c) / lam)))
    if tau < 0:
        return np.conj(_lorentzian_transform(-tau, a, c, lam))
    out = 0j
    for sgn in (1.0, -1.0):
        s0 = complex(tau * sgn * lam, tau * (a - c))
        val = np.exp(-1j * a * tau) * _scaled_exp1(s0)
        if s0.real < 0 and s0.imag < 0:
            val -= 2j * np.pi * np.exp(-1j * c * tau - lam * tau)
        out += sgn * val
    return lam / 2j * out


def _flat_transform(tau: np.ndarray, a: float, b: float) -> np.ndarray:
    if b <= a:
        return np.zeros_like(tau, dtype=complex)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return np.exp(-1j * mid * tau) * 2 * half * np.sinc(half * tau / np.pi)


def channel_transform(profile: SpectralProfile, m: int, tau) -> np.ndarray:
    """Closed-form ``G_m(tau)`` on an array of lags."""
    tau = np.asarray(tau, dtype=float)
    a, b = profile.support(m)
    if profile.kind == "flat-band":
        return _flat_transform(tau, a, b)
    c, lam = profile.center[m], profile.width[m]
    flat = tau.ravel()
    return np.array([_lorentzian_transform(float(t), a, c, lam) for t in flat]).reshape(tau.shape)


def _fourier_quad(f: Callable, a: float, b: float, tau: float, breaks: Sequence[float] = ()) -> complex:
    """``int_a^b f(w) exp(-i w tau) dw`` by QUADPACK (QAWO/QAWF pieces)."""
    edges = [a] + sorted(x for x in breaks if a < x < b) + [b]
    re = im = 0.0
    kw = dict(epsabs=1e-13, epsrel=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for lo, hi in zip(edges[:-1], edges[1:]):
            if tau == 0:
                re += quad(f, lo, hi, limit=4000, **kw)[0]
            elif np.isinf(hi):
                re += quad(f, lo, hi, weight="cos", wvar=tau, **kw)[0]
                im -= quad(f, lo, hi, weight="sin", wvar=tau, **kw)[0]
            else:
                re += quad(f, lo, hi, weight="cos", wvar=tau, limit=4000, **kw)[0]
                im -= quad(f, lo, hi, weight="sin", wvar=tau, limit=4000, **kw)[0]
    return complex(re, im)


def channel_transform_quad(
    profile: SpectralProfile, m: int, tau, weight: Callable | None = None, lower: float | None = None
) -> np.ndarray:
    """Adaptive-quadrature ``int g_m^2 weight(w) exp(-i w tau) dw``.

    ``lower`` overrides the threshold (e.g. ``-inf`` for the untruncated line).
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    a, b = profile.support(m)
    if lower is not None:
        a = lower
    c, wd = profile.center[m], profile.width[m]
    if profile.kind == "flat-band":
        base = lambda w: 1.0  # noqa: E731
        breaks: list[float] = []
    else:
        base = lambda w: wd * wd / ((w - c) ** 2 + wd * wd)  # noqa: E731
        breaks = [c - 60 * wd, c + 60 * wd]
    f = base if weight is None else (lambda w: base(w) * weight(w))
    if np.isinf(a):
        out = []
        for t in tau:
            lo = _fourier_quad(lambda w: f(-w), -breaks[0] if breaks else 0.0, np.inf, -t) if breaks else 0j
            out.append(lo + _fourier_quad(f, breaks[0], b, t, breaks[1:]))
        return np.array(out)
    return np.array([_fourier_quad(f, a, b, t, breaks) for t in tau])


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True, eq=False)
class MemoryKernel:
    tau: np.ndarray
    Gamma: np.ndarray  # (T, L, L)
    Sigma: np.ndarray  # (T, L, L)
    profile: SpectralProfile

    @property
    def dtau(self) -> float:
        return float(self.tau[1] - self.tau[0]) if self.tau.size > 1 else 0.0

    @property
    def tau_max(self) -> float:
        return float(self.tau[-1])

    def block(self) -> np.ndarray:
        """``[[Gamma, Sigma], [conj Sigma, conj Gamma]]`` per lag, shape (T, 2L, 2L)."""
        return np.block([[self.Gamma, self.Sigma], [self.Sigma.conj(), self.Gamma.conj()]])

    def to_csv(self) -> str:
        L = self.Gamma.shape[1]
        head = ["tau[1/freq]"]
        for name in ("Gamma", "Sigma"):
            for i in range(L):
                for j in range(L):
                    head += [f"re_{name}{i}_{j}[freq^2]", f"im_{name}{i}_{j}[freq^2]"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for k, t in enumerate(self.tau):
            row = [fmt(t)]
            for arr in (self.Gamma[k], self.Sigma[k]):
                for z in arr.ravel():
                    row += [fmt(z.real), fmt(z.imag)]
            w.writerow(row)
        return buf.getvalue()


def uniform_grid(tau_max: float, dtau: float) -> np.ndarray:
    if dtau <= 0 or tau_max <= 0:
        raise SpecificationError("tau_max and dtau must be positive")
    n = int(round(tau_max / dtau))
    return dtau * np.arange(n + 1)


def _contract(G: np.ndarray, profile: SpectralProfile) -> tuple[np.ndarray, np.ndarray]:
    W0, V0 = profile.W0, profile.V0
    Gamma = np.einsum("tm,lm,km->tlk", G, W0, W0.conj()) - np.einsum("tm,lm,km->tlk", G.conj(), V0.conj(), V0)
    Sigma = np.einsum("tm,lm,km->tlk", G, W0, V0.conj()) - np.einsum("tm,lm,km->tlk", G.conj(), V0.conj(), W0.conj())
    return Gamma, Sigma


def compute_kernels(profile: SpectralProfile, tau_grid, method: str = "closed") -> MemoryKernel:
    """Sample Gamma(tau) and Sigma(tau) on a uniform grid starting at 0.

    ``method='quadrature'`` evaluates every channel transform with adaptive
    quadrature instead of the closed forms (slow; for cross-checks).

    Raises
    ------
    ResolutionError
        When the grid step exceeds ``0.1 / max(center + width)``.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or tau.size < 1 or tau[0] != 0:
        raise SpecificationError("tau grid must be a 1-d array starting at 0")
    if tau.size > 1:
        steps = np.diff(tau)
        if np.ptp(steps) > 1e-9 * steps[0] or steps[0] <= 0:
            raise SpecificationError("tau grid must be uniform and increasing")
        limit = RESOLUTION / profile.max_frequency()
        if steps[0] > limit * (1 + 1e-12):
            raise ResolutionError(
                f"kernel step {steps[0]:.4g} does not resolve the fastest oscillation", suggested_dt=limit
            )
    if method == "closed":
        G = np.stack([channel_transform(profile, m, tau) for m in range(profile.n_channels)], axis=1)
    elif method == "quadrature":
        G = np.stack([channel_transform_quad(profile, m, tau) for m in range(profile.n_channels)], axis=1)
    else:
        raise SpecificationError(f"unknown kernel method {method!r}")
    Gamma, Sigma = _contract(G, profile)
    return MemoryKernel(tau, Gamma, Sigma, profile)


# ---------------------------------------------------------------------------
# Markov limit


def _window(tau: np.ndarray, window: str) -> np.ndarray:
    if window == "none":
        return np.ones_like(tau)
    if window == "fejer":
        return 1.0 - tau / tau[-1]
    raise SpecificationError(f"unknown window {window!r}")


def half_line_integral(f: np.ndarray, tau: np.ndarray, window: str = "fejer") -> np.ndarray:
    """Trapezoid ``int_0^tau_max w(tau) f(tau) dtau`` over axis 0."""
    return np.trapezoid(f * _window(tau, window).reshape((-1,) + (1,) * (f.ndim - 1)), tau, axis=0)


@dataclass(frozen=True)
class MarkovLimit:
    gamma_eff: np.ndarray
    reference: np.ndarray
    residual: float
    window: str

    @property
    def damping(self) -> np.ndarray:
        """Hermitian part of gamma_eff; the anti-Hermitian part is the frequency shift."""
        return 0.5 * (self.gamma_eff + self.gamma_eff.conj().T)

    @property
    def frequency_shift(self) -> np.ndarray:
        return 0.5j * (self.gamma_eff - self.gamma_eff.conj().T)


def markov_limit_check(kernel: MemoryKernel, omega_bar: float, window: str = "fejer") -> MarkovLimit:
    """Effective damping ``int_0^tau_max Gamma(tau) exp(i omega_bar tau) dtau``.

    The kernel's half-line Fourier integral converges only conditionally;
    ``window='fejer'`` applies the triangular weight ``1 - tau/tau_max``
    (Cesaro mean of the truncated integral), whose error falls off as
    ``1/(B tau_max)`` without the oscillating sine-integral ripple.
    ``window='none'`` gives the sharp truncation.

    The residual compares the Hermitian part with ``pi W0 W0^dagger``
    (relative 2-norm; 0 when both vanish).
    """
    tau = kernel.tau
    width = float(np.min(kernel.profile.width))
    if tau[-1] * width < MIN_TRUNCATION:
        warnings.warn(
            f"tau_max * width = {tau[-1] * width:.3g} < {MIN_TRUNCATION}: Markov integral is truncated",
            RuntimeWarning,
            stacklevel=2,
        )
    phase = np.exp(1j * omega_bar * tau)[:, None, None]
    g = half_line_integral(kernel.Gamma * phase, tau, window)
    ref = kernel.profile.markov_damping()
    herm = 0.5 * (g + g.conj().T)
    rn = np.linalg.norm(ref, 2)
    dn = np.linalg.norm(herm - ref, 2)
    residual = float(dn / rn) if rn > 0 else float(dn)
    return MarkovLimit(g, ref, residual, window)


# ---------------------------------------------------------------------------
# bath noise


def _occupation_transforms(profile, m, tau, n_of_omega):
    """Return ``(int g^2 n e^{-iw tau}, int g^2 (1+n) e^{-iw tau})`` for channel m."""
    G = channel_transform(profile, m, tau)
    if np.isscalar(n_of_omega) or isinstance(n_of_omega, (int, float)):
        n = float(n_of_omega)
        return n * G, (1.0 + n) * G
    Gn = channel_transform_quad(profile, m, tau, weight=n_of_omega)
    return Gn, G + Gn


def noise_autocorrelation(profile: SpectralProfile, n_of_omega, tau_grid) -> tuple[np.ndarray, np.ndarray]:
    """Thermal correlators of the Langevin force.

    Returns ``(C_plus, C_minus)`` sampled on ``tau_grid``::

        C_plus[l, mu](tau)  = <f_l(t + tau) f_mu^dagger(t)>
            = sum_m int [(1+n) e^{-iw tau} W_lm W*_mum + n e^{+iw tau} V*_lm V_mum]
        C_minus[l, mu](tau) = <f_l^dagger(t + tau) f_mu(t)>
            = sum_m int [n e^{+iw tau} W*_lm W_mum + (1+n) e^{-iw tau} V_lm V*_mum]

    ``n_of_omega`` is a constant occupation or a callable ``n(w)``; the
    callable form uses adaptive quadrature.
    """
    tau = np.asarray(tau_grid, dtype=float)
    W0, V0 = profile.W0, profile.V0
    pairs = [_occupation_transforms(profile, m, tau, n_of_omega) for m in range(profile.n_channels)]
    Gn = np.stack([p[0] for p in pairs], axis=1)
    G1n = np.stack([p[1] for p in pairs], axis=1)
    Cp = np.einsum("tm,lm,km->tlk", G1n, W0, W0.conj()) + np.einsum("tm,lm,km->tlk", Gn.conj(), V0.conj(), V0)
    Cm = np.einsum("tm,lm,km->tlk", Gn.conj(), W0.conj(), W0) + np.einsum("tm,lm,km->tlk", G1n, V0, V0.conj())
    return Cp, Cm


def noise_markov_weight(C: np.ndarray, tau: np.ndarray, omega_bar: float, sign: int, window: str = "fejer"):
    """``int_{-inf}^{inf} C(tau) exp(sign i omega_bar tau) dtau`` from the half line.

    Uses ``C(-tau) = C(tau)^dagger`` so the full-line integral is ``X + X^H``.
    Demodulate ``C_plus`` with ``sign=+1`` and ``C_minus`` with ``sign=-1``;
    the white-noise limits are ``2 (1 + n) gamma`` and ``2 n gamma^T``.
    """
    X = half_line_integral(C * np.exp(sign * 1j * omega_bar * tau)[:, None, None], tau, window)
    return X + X.conj().T


# ---------------------------------------------------------------------------
# Volterra mean dynamics


@dataclass
class VolterraSolution:
    t: np.ndarray
    z: np.ndarray  # (T, 2L): [<a>, <a^dagger>]
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def mean_a(self) -> np.ndarray:
        L = self.z.shape[1] // 2
        return self.z[:, :L]

    def to_csv(self) -> str:
        L = self.z.shape[1] // 2
        head = ["t[1/freq]"]
        head += [f"{p}_a{i}[1]" for i in range(L) for p in ("re", "im")]
        head += [f"{p}_adag{i}[1]" for i in range(L) for p in ("re", "im")]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for t, row in zip(self.t, self.z):
            w.writerow([fmt(t)] + [fmt(v) for z in row for v in (z.real, z.imag)])
        return buf.getvalue()


def solve_mean_volterra(
    omega,
    profile: SpectralProfile,
    m0,
    t_max: float,
    dt: float,
    mdag0=None,
    kernel: MemoryKernel | None = None,
    growth_limit: float = 10.0,
) -> VolterraSolution:
    """Integrate the mean of the exact (non-Markovian) Langevin equation.

    ``z = (<a>, <a^dagger>)`` obeys
    ``dz/dt = -i diag(omega, -omega) z - int_0^t K(t - s) z(s) ds`` with the
    block kernel ``K = [[Gamma, Sigma], [conj Sigma, conj Gamma]]``.

    The free rotation is integrated exactly; the memory integral uses the
    trapezoid rule on the history (O(N^2) overall) and the step is the
    trapezoidal corrector of the variation-of-constants formula, solved
    exactly since it is linear in the new point.

    Raises
    ------
    ResolutionError
        ``dt > 0.1 / max(omega)``, a kernel grid incompatible with ``dt``,
        or growth of ``|z|`` beyond ``growth_limit`` times its initial value.
    """
    omega = np.asarray(omega, dtype=float)
    L = omega.size
    if profile.n_modes != L:
        raise SpecificationError("profile and omega disagree on the number of modes")
    limit = RESOLUTION / float(np.max(np.abs(omega)))
    if dt > limit * (1 + 1e-12):
        raise ResolutionError(f"dt={dt:.4g} does not resolve the mode oscillation", suggested_dt=limit)
    n = int(round(t_max / dt))
    if n < 1 or abs(n * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise SpecificationError("t_max must be a positive integer multiple of dt")
    if kernel is None:
        kernel = compute_kernels(profile, dt * np.arange(n + 1))
        stride = 1
    else:
        ratio = dt / kernel.dtau
        stride = int(round(ratio))
        if stride < 1 or abs(stride - ratio) > 1e-9 * ratio:
            raise ResolutionError("kernel grid step must divide dt", suggested_dt=kernel.dtau)
        if kernel.tau_max < t_max * (1 - 1e-12):
            raise SpecificationError("kernel grid is shorter than t_max")
    K = kernel.block()[: stride * n + 1 : stride]
    m0 = np.asarray(m0, dtype=complex).reshape(L)
    mdag0 = m0.conj() if mdag0 is None else np.asarray(mdag0, dtype=complex).reshape(L)
    z0 = np.concatenate([m0, mdag0])
    D = 2 * L
    rot = np.exp(-1j * np.concatenate([omega, -omega]) * dt)
    # history stored newest-first: rev[n_tot - k] = z_k
    rev = np.zeros((n + 1, D), complex)
    rev[n] = z0
    Kflat = np.ascontiguousarray(K.transpose(1, 0, 2)).reshape(D, (n + 1) * D)
    lhs = np.linalg.inv(np.eye(D) + 0.25 * dt * dt * K[0])
    z = np.empty((n + 1, D), complex)
    z[0] = z0
    mem = np.zeros(D, complex)  # I_n
    norm0 = max(np.linalg.norm(z0), np.finfo(float).tiny)
    for j in range(n):
        # H_{j+1} = dt [1/2 K_{j+1} z_0 + sum_{k=1..j} K_{j+1-k} z_k]
        hist = 0.5 * dt * (K[j + 1] @ z0)
        if j > 0:
            hist = hist + dt * (Kflat[:, D : (j + 1) * D] @ rev[n - j : n].ravel())
        rhs = rot * z[j] - 0.5 * dt * (rot * mem + hist)
        znew = lhs @ rhs
        mem = hist + 0.5 * dt * (K[0] @ znew)
        z[j + 1] = znew
        rev[n - j - 1] = znew
        if np.linalg.norm(znew) > growth_limit * norm0:
            raise ResolutionError(
                f"Volterra integration unstable at t={(j + 1) * dt:.4g}: |z| grew beyond "
                f"{growth_limit}x (|Gamma(0)|={np.abs(K[0]).max():.3g}, dt={dt:.3g})",
                suggested_dt=0.5 * dt,
            )
    return VolterraSolution(dt * np.arange(n + 1), z, {"dt": dt, "kernel_stride": stride})


def markov_mean(omega, profile: SpectralProfile, m0, times) -> np.ndarray:
    """Markovian/RWA mean ``<a>(t) = exp(M t) m0`` with ``gamma = pi W0 W0^dagger``."""
    omega = np.asarray(omega, dtype=float)
    M = -profile.markov_damping() - 1j * np.diag(omega)
    m0 = np.asarray(m0, dtype=complex)
    return np.array([expm(M * t) @ m0 for t in np.asarray(times, dtype=float)])


def mean_deviation(sol: VolterraSolution, omega, profile: SpectralProfile, m0) -> np.ndarray:
    """Relative deviation ``|<a>_volterra - <a>_markov| / |<a>_markov|`` per time."""
    ref = markov_mean(omega, profile, m0, sol.t)
    return np.linalg.norm(sol.mean_a - ref, axis=1) / np.linalg.norm(ref, axis=1)


# ---------------------------------------------------------------------------
# rotating-wave / Markov correction scan


@dataclass(frozen=True)
class ScanCase:
    omega: np.ndarray
    profile: SpectralProfile
    m0: np.ndarray
    gamma: float


def overlapping_family(
    gamma: float = 1.0, overlap: float = 3.0, n_modes: int = 2, coupling: float = 0.8,
    antiresonant: float = 0.0,
) -> Callable[[float], ScanCase]:
    """Broadband family at fixed damping and fixed overlap ``gamma/spacing``.

    For a ratio ``r = omega_bar / gamma`` the modes sit at ``omega_bar``
    plus offsets with spacing ``gamma / overlap``; the damping matrix is
    ``gamma`` on the diagonal and ``coupling * gamma`` off it, realized by
    ``W0 = sqrt(gamma_matrix / pi)`` with one flat-band channel per mode
    spanning ``[0, 2 omega_bar]`` (band width grows with ``omega_bar``).
    ``antiresonant`` sets ``V0 = antiresonant * W0``.
    """
    L = int(n_modes)
    g = gamma * ((1 - coupling) * np.eye(L) + coupling * np.ones((L, L)))
    w, v = np.linalg.eigh(g / np.pi)
    if w.min() < 0:
        raise SpecificationError("coupling must keep the damping matrix positive semidefinite")
    W0 = (v * np.sqrt(w)) @ v.conj().T
    spacing = gamma / overlap if L > 1 else 0.0
    offsets = spacing * (np.arange(L) - 0.5 * (L - 1))
    m0 = np.zeros(L, complex)
    m0[0] = 1.0

    def make(ratio: float) -> ScanCase:
        wbar = ratio * gamma
        prof = SpectralProfile("flat-band", wbar, wbar, W0, antiresonant * W0, 0.0)
        return ScanCase(wbar + offsets, prof, m0, gamma)

    return make


@dataclass
class ScanResult:
    ratios: np.ndarray
    deviations: np.ndarray
    slope: float

    @property
    def gamma_over_omega(self) -> np.ndarray:
        return 1.0 / self.ratios

    def rows(self) -> list[dict[str, float]]:
        return [
            {"omega_over_gamma": float(r), "gamma_over_omega": float(1 / r), "deviation": float(d)}
            for r, d in zip(self.ratios, self.deviations)
        ]


def rwa_correction_scan(
    family: Callable[[float], ScanCase], ratios: Sequence[float], t_horizon: float = 3.0, dt_factor: float = 1.0
) -> ScanResult:
    """Deviation of the exact mean from the Markovian/RWA mean versus ``omega_bar/gamma``.

    For each ratio the Volterra solution runs to ``t_horizon / gamma`` with
    the coarsest step allowed by the resolution rules (times ``dt_factor``);
    the deviation is the maximum relative error of ``<a>(t)``.  ``slope`` is
    the least-squares log-log slope of deviation against ``gamma/omega_bar``
    (nan when any deviation vanishes).
    """
    devs = []
    ratios = np.asarray(ratios, dtype=float)
    for r in ratios:
        case = family(float(r))
        fmax = max(float(np.max(case.omega)), case.profile.max_frequency())
        t_max = t_horizon / case.gamma if case.gamma > 0 else t_horizon / max(float(np.min(case.omega)), 1.0)
        dt = dt_factor * RESOLUTION / fmax
        n = int(np.ceil(t_max / dt))
        dt = t_max / n
        sol = solve_mean_volterra(case.omega, case.profile, case.m0, t_max, dt)
        devs.append(float(np.max(mean_deviation(sol, case.omega, case.profile, case.m0))))
    devs = np.array(devs)
    if np.all(devs > 0) and len(ratios) > 1:
        slope = float(np.polyfit(np.log(1 / ratios), np.log(devs), 1)[0])
    else:
        slope = float("nan")
    return ScanResult(ratios, devs, slope)
