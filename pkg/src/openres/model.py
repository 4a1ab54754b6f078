"""Open-resonator system specification and the derived Markovian matrices.

The inside modes have frequencies ``omega`` (length L) and couple to M
outside channels through the amplitude matrix ``W`` (L x M).  In the
Markovian, rotating-wave limit everything downstream is fixed by the
damping matrix ``gamma = pi W W^dagger`` and the non-Hermitian effective
Hamiltonian ``H = diag(omega) - i gamma`` (units with hbar = 1).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConsistencyError, SpecificationError

#: Relative asymmetry of ``pi W W^dagger`` tolerated before symmetrization.
HERMITIAN_RTOL = 1e-12

#: ``||gamma||_2 >= MARKOV_SUSPECT_RATIO * min(omega)`` raises the markov-suspect flag.
MARKOV_SUSPECT_RATIO = 0.1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Inside-mode frequencies, inside/outside couplings and bath temperature.

    Parameters
    ----------
    omega : array_like, shape (L,)
        Mode frequencies, all strictly positive.
    W : array_like, shape (L, M)
        Resonant coupling amplitudes (units frequency**0.5).
    V : array_like, shape (L, M), optional
        Antiresonant amplitudes.  When omitted, :attr:`coupling_V` returns
        ``W`` itself (time-reversal invariant resonator).
    n_th : float
        Thermal photon number of the outside field.
    label : str
        Free-form identifier.
    """

    omega: np.ndarray
    W: np.ndarray
    V: np.ndarray | None = None
    n_th: float = 0.0
    label: str = ""
    _hash: str = field(default="", init=False, repr=False)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        W = np.asarray(self.W, dtype=complex)
        if omega.ndim != 1 or omega.size < 1:
            raise SpecificationError("omega must be a non-empty vector")
        if W.ndim == 1:
            W = W.reshape(-1, 1)
        if W.ndim != 2 or W.shape[1] < 1:
            raise SpecificationError("W must be an L x M matrix with M >= 1")
        if W.shape[0] != omega.size:
            raise SpecificationError(
                f"dimension mismatch: omega has {omega.size} modes, W has {W.shape[0]} rows"
            )
        if not np.all(np.isfinite(omega)):
            raise SpecificationError("omega must be finite")
        if np.any(omega <= 0):
            raise SpecificationError("omega must be positive")
        if not np.all(np.isfinite(W)):
            raise SpecificationError("W entries must be finite")
        V = self.V
        if V is not None:
            V = np.asarray(V, dtype=complex)
            if V.ndim == 1:
                V = V.reshape(-1, 1)
            if V.shape != W.shape:
                raise SpecificationError(f"V shape {V.shape} differs from W shape {W.shape}")
            if not np.all(np.isfinite(V)):
                raise SpecificationError("V entries must be finite")
            V = _frozen(V)
        n_th = float(self.n_th)
        if not np.isfinite(n_th) or n_th < 0:
            raise SpecificationError("n_th must be a finite non-negative number")
        object.__setattr__(self, "omega", _frozen(omega))
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "n_th", n_th)
        object.__setattr__(self, "label", str(self.label))
        object.__setattr__(self, "_hash", hashlib.sha256(self.to_json().encode()).hexdigest())

    @property
    def n_modes(self) -> int:
        return self.omega.size

    @property
    def n_channels(self) -> int:
        return self.W.shape[1]

    @property
    def coupling_V(self) -> np.ndarray:
        return self.W if self.V is None else self.V

    @property
    def spec_hash(self) -> str:
        """SHA-256 digest of the canonical JSON document."""
        return self._hash

    def replace(self, **changes) -> "SystemSpec":
        kw = dict(omega=self.omega, W=self.W, V=self.V, n_th=self.n_th, label=self.label)
        kw.update(changes)
        return SystemSpec(**kw)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "label": self.label,
            "omega": [float(x) for x in self.omega],
            "W": complex_matrix_to_json(self.W),
            "n_th": self.n_th,
        }
        if self.V is not None:
            d["V"] = complex_matrix_to_json(self.V)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SystemSpec":
        try:
            omega = d["omega"]
            W = complex_matrix_from_json(d["W"])
        except KeyError as exc:
            raise SpecificationError(f"missing field {exc.args[0]!r} in system spec") from None
        V = complex_matrix_from_json(d["V"]) if d.get("V") is not None else None
        return cls(omega=omega, W=W, V=V, n_th=d.get("n_th", 0.0), label=d.get("label", ""))

    @classmethod
    def from_json(cls, text: str) -> "SystemSpec":
        return cls.from_dict(json.loads(text))


def complex_matrix_to_json(a: np.ndarray) -> dict[str, list]:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def complex_matrix_from_json(obj) -> np.ndarray:
    """Accept ``{"re": [[..]], "im": [[..]]}`` or a plain nested list of reals."""
    if isinstance(obj, dict):
        if "re" not in obj:
            raise SpecificationError("complex matrix object needs an 're' field")
        re = np.asarray(obj["re"], dtype=float)
        im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != im.shape:
            raise SpecificationError("'re' and 'im' parts differ in shape")
        return re + 1j * im
    return np.asarray(obj, dtype=complex)


def build_damping_matrix(spec: SystemSpec) -> np.ndarray:
    """Return the Hermitian PSD damping matrix ``pi W W^dagger``.

    The product is symmetrized to remove floating-point asymmetry; an
    asymmetry above ``HERMITIAN_RTOL`` (relative) before that step means
    something upstream is broken and raises :class:`ConsistencyError`.
    """
    W = spec.W
    g = np.pi * (W @ W.conj().T)
    scale = max(np.abs(g).max(initial=0.0), np.finfo(float).tiny)
    asym = np.abs(g - g.conj().T).max(initial=0.0)
    if asym > HERMITIAN_RTOL * scale:
        raise ConsistencyError(f"damping matrix asymmetry {asym:.3e} exceeds tolerance")
    g = 0.5 * (g + g.conj().T)
    g.setflags(write=False)
    return g


def build_effective_hamiltonian(spec: SystemSpec, gamma: np.ndarray) -> np.ndarray:
    """``H = diag(omega) - i gamma``."""
    gamma = np.asarray(gamma)
    L = spec.n_modes
    if gamma.shape != (L, L):
        raise SpecificationError(f"gamma has shape {gamma.shape}, expected {(L, L)}")
    H = -1j * gamma.astype(complex)
    H[np.diag_indices(L)] += spec.omega
    return H


def check_damping_invariants(gamma: np.ndarray, rtol: float = 1e-12) -> list[str]:
    """Return a list of violated damping-matrix invariants (empty when valid)."""
    problems = []
    gamma = np.asarray(gamma)
    norm = np.linalg.norm(gamma, 2) if gamma.size else 0.0
    if np.abs(gamma - gamma.conj().T).max(initial=0.0) > rtol * max(norm, 1e-300):
        problems.append("gamma is not Hermitian")
    ev = np.linalg.eigvalsh(0.5 * (gamma + gamma.conj().T))
    if ev.size and ev.min() < -rtol * norm:
        problems.append(f"gamma is not positive semidefinite (min eigenvalue {ev.min():.3e})")
    return problems


@dataclass(frozen=True)
class OverlapReport:
    mean_spacing: float | None
    typical_gamma: float
    overlap_ratio: float | None
    gamma_norm: float
    markov_ratio: float
    regime: str

    @property
    def overlapping(self) -> bool:
        return self.overlap_ratio is not None and self.overlap_ratio >= 1.0

    @property
    def markov_suspect(self) -> bool:
        return self.markov_ratio >= MARKOV_SUSPECT_RATIO

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean_spacing": self.mean_spacing,
            "typical_gamma": self.typical_gamma,
            "overlap_ratio": self.overlap_ratio,
            "gamma_norm": self.gamma_norm,
            "markov_ratio": self.markov_ratio,
            "overlapping": self.overlapping,
            "markov_suspect": self.markov_suspect,
            "regime": self.regime,
        }


def overlap_diagnostics(spec: SystemSpec, gamma: np.ndarray) -> OverlapReport:
    """Classify the damping regime.

    The typical coupling is the largest ``|gamma_{lm}|`` and the spacing is
    the mean nearest-neighbour gap of the sorted frequencies.  The regime is
    ``markov-suspect`` whenever ``||gamma||_2 >= 0.1 min(omega)`` (a warning
    that antiresonant terms may matter), otherwise ``overlapping`` when the
    ratio reaches 1 and ``isolated`` below.
    """
    gamma = np.asarray(gamma)
    typical = float(np.abs(gamma).max(initial=0.0))
    if spec.n_modes >= 2:
        spacing = float(np.mean(np.diff(np.sort(spec.omega))))
        ratio = typical / spacing if spacing > 0 else float("inf")
    else:
        spacing, ratio = None, None
    gnorm = float(np.linalg.norm(gamma, 2))
    markov_ratio = gnorm / float(spec.omega.min())
    if markov_ratio >= MARKOV_SUSPECT_RATIO:
        regime = "markov-suspect"
    elif ratio is not None and ratio >= 1.0:
        regime = "overlapping"
    else:
        regime = "isolated"
    return OverlapReport(spacing, typical, ratio, gnorm, markov_ratio, regime)


def validate_spec(spec: SystemSpec) -> list[str]:
    """Run every model-level invariant check; returns the violations."""
    gamma = build_damping_matrix(spec)
    problems = check_damping_invariants(gamma)
    if np.linalg.matrix_rank(gamma) > min(spec.n_modes, spec.n_channels):
        problems.append("rank(gamma) exceeds min(L, M)")
    H = build_effective_hamiltonian(spec, gamma)
    if np.imag(np.trace(H)) > 0:
        problems.append("Im tr H must be non-positive")
    if not np.array_equal(np.real(np.diag(H)), spec.omega):
        problems.append("diagonal of Re H differs from omega")
    return problems


def _two_mode_coupling(gamma_diag: float, gamma_off: complex) -> np.ndarray:
    g = np.array([[gamma_diag, gamma_off], [np.conj(gamma_off), gamma_diag]], dtype=complex)
    w, v = np.linalg.eigh(g / np.pi)
    if w.min() < -1e-14 * max(abs(gamma_diag), 1.0):
        raise SpecificationError("two-mode-parametric needs gamma_diag >= |gamma_off|")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def generate_example(kind: str, params: dict | None = None, seed: int | None = None) -> SystemSpec:
    """Parametric stand-ins for coupling amplitudes of real resonators.

    Kinds
    -----
    ``single-mode``
        ``omega`` (1.0), ``w`` (0.1).
    ``rank-one-multimode``
        ``w`` (list, one per mode), ``omega`` (default ``1 + 0.01 k``).
    ``random-gaussian-coupling``
        ``L``, ``M``, ``scale``, optional ``omega``; W has i.i.d. circular
        complex Gaussian entries of variance ``scale**2``.
    ``two-mode-parametric``
        ``omega`` (pair), ``gamma_diag``, ``gamma_off``; W is the Hermitian
        square root of ``gamma / pi`` so that ``pi W W^dagger`` reproduces
        the requested 2 x 2 damping matrix exactly.

    All kinds accept ``n_th`` and ``label``.
    """
    p = dict(params or {})
    n_th = p.pop("n_th", 0.0)
    label = p.pop("label", kind)
    if kind == "single-mode":
        w = p.get("w", 0.1)
        return SystemSpec(omega=[p.get("omega", 1.0)], W=[[w]], n_th=n_th, label=label)
    if kind == "rank-one-multimode":
        w = np.atleast_1d(np.asarray(p.get("w", [1.0, 1.0, 1.0]), dtype=complex))
        L = w.size
        omega = p.get("omega", 1.0 + 0.01 * np.arange(L))
        return SystemSpec(omega=omega, W=w.reshape(L, 1), n_th=n_th, label=label)
    if kind == "random-gaussian-coupling":
        L, M = int(p.get("L", 2)), int(p.get("M", 1))
        scale = float(p.get("scale", 0.05))
        if scale < 0:
            raise SpecificationError("coupling scale must be non-negative")
        if L < 1 or M < 1:
            raise SpecificationError("L and M must be >= 1")
        rng = np.random.default_rng(seed)
        W = scale * (rng.standard_normal((L, M)) + 1j * rng.standard_normal((L, M))) / np.sqrt(2)
        omega = p.get("omega")
        if omega is None:
            omega = 1.0 + 0.01 * np.arange(L)
        return SystemSpec(omega=omega, W=W, n_th=n_th, label=label)
    if kind == "two-mode-parametric":
        gd = float(p.get("gamma_diag", 0.12))
        go = complex(p.get("gamma_off", 0.1))
        if gd < 0:
            raise SpecificationError("coupling scale must be non-negative")
        omega = p.get("omega", [1.0, 1.01])
        return SystemSpec(omega=omega, W=_two_mode_coupling(gd, go), n_th=n_th, label=label)
    raise SpecificationError(f"unknown example kind {kind!r}")
