"""Biorthogonal resonance analysis of the effective Hamiltonian.

``H = T diag(Omega) T^{-1}`` with right eigenvectors in the columns of ``T``.
Resonance operators ``d_n = sum_l Tinv[n, l] a_l`` and
``e_n^dagger = sum_l a_l^dagger T[l, n]`` are represented only through their
coefficient matrices; all commutators are bilinear and follow from them:

* ``[d_m, e_n^dagger] = delta_mn``
* ``[e_m, e_n^dagger] = A_mn``, ``A = T^H T``
* ``[d_m, d_n^dagger] = B_mn``, ``B = Tinv Tinv^H``
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ExceptionalPointError, SpecificationError

DEGENERACY_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class ResonanceDecomposition:
    """Eigen-decomposition of a non-Hermitian H with biorthogonal bookkeeping.

    Attributes
    ----------
    Omega : ndarray, shape (L,)
        Complex resonances sorted by real part.
    T, Tinv : ndarray, shape (L, L)
        Right eigenvectors (unit columns) and the inverse matrix.
    A : ndarray
        ``T^H T``; unit diagonal for unit-norm columns.
    condition : float
        2-norm condition number of ``T``.
    H : ndarray
        The decomposed matrix.
    """

    Omega: np.ndarray
    T: np.ndarray
    Tinv: np.ndarray
    A: np.ndarray
    condition: float
    H: np.ndarray

    @property
    def B(self) -> np.ndarray:
        return self.Tinv @ self.Tinv.conj().T

    def reconstruction_error(self) -> float:
        """``||T diag(Omega) Tinv - H|| / ||H||``."""
        Hn = np.linalg.norm(self.H, 2)
        err = np.linalg.norm((self.T * self.Omega) @ self.Tinv - self.H, 2)
        return float(err / Hn) if Hn else float(err)

    def normality_residual(self) -> float:
        H = self.H
        return float(np.linalg.norm(H @ H.conj().T - H.conj().T @ H, 2))

    def propagator(self, t: float) -> np.ndarray:
        """``exp(-i H t) = T diag(exp(-i Omega t)) Tinv``."""
        return (self.T * np.exp(-1j * self.Omega * t)) @ self.Tinv

    def with_columns_scaled(self, c) -> "ResonanceDecomposition":
        """Same decomposition with ``T -> T diag(c)``; invariants that do not
        depend on normalization must be unchanged."""
        c = np.asarray(c, dtype=complex)
        T = self.T * c
        Tinv = self.Tinv / c[:, None]
        return ResonanceDecomposition(self.Omega, T, Tinv, T.conj().T @ T, float(np.linalg.cond(T)), self.H)


def _phase_fix(T: np.ndarray) -> np.ndarray:
    T = T / np.linalg.norm(T, axis=0)
    for n in range(T.shape[1]):
        col = T[:, n]
        k = int(np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0])
        T[:, n] = col * (abs(col[k]) / col[k])
    return T


def decompose(H: np.ndarray, rtol: float = DEGENERACY_RTOL) -> ResonanceDecomposition:
    """Diagonalize ``H`` by a similarity transformation.

    Raises :class:`ExceptionalPointError` when two eigenvalues are closer
    than ``rtol * ||H||_2``.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise SpecificationError("H must be square")
    L = H.shape[0]
    Hn = np.linalg.norm(H, 2)
    w, v = np.linalg.eig(H)
    order = np.lexsort((w.imag, w.real))
    w, v = w[order], v[:, order]
    if L > 1:
        gaps = np.abs(w[:, None] - w[None, :]) + np.diag(np.full(L, np.inf))
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        thr = rtol * max(Hn, np.finfo(float).tiny)
        if gaps[i, j] <= thr:
            raise ExceptionalPointError(sorted((i, j)), gaps[i, j], thr)
    T = _phase_fix(v)
    Tinv = np.linalg.inv(T)
    A = T.conj().T @ T
    A = 0.5 * (A + A.conj().T)
    A[np.diag_indices(L)] = 1.0
    return ResonanceDecomposition(w, T, Tinv, A, float(np.linalg.cond(T)), H)


def commutator_matrix(dec: ResonanceDecomposition) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A, B)``: Gram matrices of the ``e`` and ``d`` resonance operators."""
    return dec.T.conj().T @ dec.T, dec.B


def lamprecht_ritsch_coefficients(dec: ResonanceDecomposition) -> np.ndarray:
    """``C_nm = i A_nm (Omega_m - conj(Omega_n))`` (hbar = 1).

    The recycling term of the zero-temperature master equation in resonance
    form is ``sum_nm C_nm d_m rho d_n^dagger``.
    """
    A = dec.T.conj().T @ dec.T
    return 1j * A * (dec.Omega[None, :] - dec.Omega.conj()[:, None])


def lamprecht_ritsch_damping(dec: ResonanceDecomposition, C: np.ndarray | None = None) -> np.ndarray:
    """Map the resonance-basis coefficients back to the mode basis.

    Expanding ``d_m = sum_l Tinv[m, l] a_l`` turns ``sum C_nm d_m rho d_n^H``
    into ``sum_{lm} (Tinv^H C Tinv)_{lm} a_m rho a_l^dagger``; for a
    consistent decomposition this equals ``2 gamma``.
    """
    if C is None:
        C = lamprecht_ritsch_coefficients(dec)
    return dec.Tinv.conj().T @ C @ dec.Tinv


def complex_orthogonal(dec: ResonanceDecomposition, rtol: float = 1e-10) -> ResonanceDecomposition:
    """Rescale columns so that ``T^T T = I``.

    Possible only for complex-symmetric H (time-reversal invariant, real
    gamma), where ``Tinv = T^T`` and the mode-basis map of the recycling
    coefficients reads ``conj(T) C T^T``.
    """
    H = dec.H
    if np.linalg.norm(H - H.T, 2) > rtol * np.linalg.norm(H, 2):
        raise SpecificationError("complex-orthogonal normalization needs a complex-symmetric H")
    q = np.einsum("ln,ln->n", dec.T, dec.T)
    return dec.with_columns_scaled(1.0 / np.sqrt(q))


def petermann_factors(dec: ResonanceDecomposition) -> np.ndarray:
    """Excess-noise factors ``K_n = A_nn B_nn`` (>= 1, = 1 for normal H)."""
    A_diag = np.einsum("ln,ln->n", dec.T.conj(), dec.T).real
    B_diag = np.einsum("nl,nl->n", dec.Tinv, dec.Tinv.conj()).real
    return A_diag * B_diag


def resonance_report(dec: ResonanceDecomposition) -> dict[str, Any]:
    """JSON-ready summary: Omega, A, B, C, K, condition number, normality residual."""

    def cm(a):
        a = np.atleast_1d(a)
        return {"re": a.real.tolist(), "im": a.imag.tolist()}

    A, B = commutator_matrix(dec)
    return {
        "Omega": cm(dec.Omega),
        "A": cm(A),
        "B": cm(B),
        "C": cm(lamprecht_ritsch_coefficients(dec)),
        "K": petermann_factors(dec).tolist(),
        "condition": dec.condition,
        "normality_residual": dec.normality_residual(),
        "reconstruction_error": dec.reconstruction_error(),
    }


def resonance_report_json(dec: ResonanceDecomposition) -> str:
    return json.dumps(resonance_report(dec), indent=2, sort_keys=True)
