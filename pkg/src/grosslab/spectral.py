"""Norms, resolvents, ground states and propagators.

Small operators are handled densely (exact up to rounding); large ones go
through ARPACK, sparse LU or ``expm_multiply``.  Every randomized start
vector comes from :func:`rng_for`, so results do not depend on scheduling.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "ConvergenceError",
    "FormBoundReport",
    "ResolventRecord",
    "Propagator",
    "rng_for",
    "op_norm",
    "form_difference_constant",
    "resolvent_apply",
    "ground_state",
    "lowest_eigenvalue",
    "propagate",
]

DENSE_NORM_LIMIT = 400
DENSE_SOLVE_LIMIT = 4096
RESOLVENT_TOL = 1e-10
PROPAGATE_TOL = 1e-9
SVDS_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """An iterative routine hit its cap before reaching tolerance."""


def rng_for(seed, tag, index=0):
    """Generator seeded by ``(seed, tag, index)``; stable across processes."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode()), int(index)])
    return np.random.default_rng(ss)


def _start_vector(A, seed, tag, size):
    rng = rng_for(seed, tag)
    v0 = rng.standard_normal(size)
    if np.issubdtype(A.dtype, np.complexfloating):
        v0 = v0 + 1j * rng.standard_normal(size)
    return v0


def _dense(A):
    if sp.issparse(A):
        return A.toarray()
    if isinstance(A, spla.LinearOperator):
        return A @ np.eye(A.shape[1], dtype=complex)
    return np.asarray(A)


def op_norm(A, tol=1e-12, maxiter=20000, seed=0, method="auto", hermitian=False):
    """Largest singular value of ``A``.

    ``method`` is ``dense`` (SVD or Hermitian eigenvalues), ``lanczos``
    (ARPACK), ``power`` (power iteration on ``A* A``) or ``auto`` (dense up
    to 400 columns, Lanczos above, power iteration if Lanczos stalls).
    """
    n = max(A.shape)
    if sp.issparse(A) and A.count_nonzero() == 0:
        return 0.0
    if method == "auto":
        method = "dense" if n <= DENSE_NORM_LIMIT else "lanczos"
    if method == "dense":
        mat = _dense(A)
        if mat.size == 0:
            return 0.0
        if hermitian:
            return float(np.max(np.abs(np.linalg.eigvalsh(mat))))
        return float(sla.svdvals(mat)[0])
    if method == "lanczos":
        v0 = _start_vector(A, seed, "op_norm", min(A.shape))
        try:
            if hermitian:
                vals = spla.eigsh(A, k=1, which="LM", v0=v0, tol=tol, return_eigenvectors=False)
                return float(abs(vals[0]))
            # svds squares the tolerance internally (Gram operator)
            vals = spla.svds(A, k=1, v0=v0, tol=max(tol, SVDS_TOL), return_singular_vectors=False)
            return float(vals[0])
        except spla.ArpackError:
            # stalled or degenerate start (e.g. A v0 = 0): fall back
            method = "power"
    op = spla.aslinearoperator(A)
    rng = rng_for(seed, "op_norm")
    v = rng.standard_normal(A.shape[1]) + 1j * rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(maxiter):
        w = op.rmatvec(op.matvec(v))
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * new:
            return float(np.sqrt(new))
        est = new
    raise ConvergenceError(f"power iteration did not converge in {maxiter} steps (estimate {np.sqrt(est):.6g})")


def lowest_eigenvalue(A, seed=0, tol=1e-12):
    """Smallest eigenvalue of a Hermitian operator."""
    if A.shape[0] <= DENSE_NORM_LIMIT:
        return float(np.linalg.eigvalsh(_dense(A))[0])
    v0 = _start_vector(A, seed, "lowest_eigenvalue", A.shape[0])
    try:
        return float(spla.eigsh(A, k=1, which="SA", v0=v0, tol=tol, return_eigenvectors=False)[0])
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(str(exc)) from exc


def _h0_inv_sqrt(H0):
    """``(H0 + 1)^{-1/2}`` for a diagonal (1-d array or diagonal matrix) or dense ``H0``."""
    if np.ndim(H0) == 1:
        return sp.diags(1.0 / np.sqrt(np.asarray(H0, dtype=float) + 1.0))
    if sp.issparse(H0):
        off = H0 - sp.diags(H0.diagonal())
        if off.count_nonzero() == 0:
            return sp.diags(1.0 / np.sqrt(H0.diagonal().real + 1.0))
    evals, evecs = np.linalg.eigh(_dense(H0))
    if evals.min() < -1e-10:
        raise ValueError("H0 must be positive semidefinite")
    return (evecs / np.sqrt(evals + 1.0)) @ evecs.conj().T


def form_difference_constant(W1, W2, H0):
    """``||(H0 + 1)^{-1/2} (W1 - W2) (H0 + 1)^{-1/2}||``."""
    S = _h0_inv_sqrt(H0)
    diff = W1 - W2
    return op_norm(S @ diff @ S, hermitian=_hermitian_pair(W1, W2))


def _hermitian_pair(W1, W2):
    try:
        diff = W1 - W2
        if sp.issparse(diff):
            return abs(diff - diff.getH()).max() < 1e-12 if diff.nnz else True
        diff = np.asarray(diff)
        return np.allclose(diff, diff.conj().T, atol=1e-12)
    except (TypeError, ValueError, AttributeError):
        return False


def _is_real(z):
    return complex(z).imag == 0.0


def resolvent_apply(A, z, psi, tol=RESOLVENT_TOL):
    """Solve ``(A - z) phi = psi``.

    Real ``z`` must lie strictly below the spectrum of ``A``.  Returns
    ``phi``; raises :class:`ConvergenceError` if the relative residual exceeds
    ``tol``.
    """
    z = complex(z)
    n = A.shape[0]
    if _is_real(z):
        e0, _ = ground_state(A)
        if z.real >= e0:
            raise ValueError(f"real shift {z.real} not below the spectrum (E0={e0:.6g})")
    psi = np.asarray(psi, dtype=complex)
    if n <= DENSE_SOLVE_LIMIT:
        M = _dense(A).astype(complex) - z * np.eye(n)
        phi = sla.solve(M, psi)
        shifted = M
    else:
        shifted = (sp.csc_matrix(A, dtype=complex) - z * sp.identity(n, dtype=complex, format="csc")).tocsc()
        phi = spla.splu(shifted).solve(psi)
    res = np.linalg.norm(shifted @ phi - psi) / max(np.linalg.norm(psi), 1e-300)
    if res > tol:
        raise ConvergenceError(f"near-singular shift z={z}: residual {res:.3e}")
    return phi


def ground_state(A, seed=0, tol=1e-12):
    """Smallest eigenpair of a Hermitian operator."""
    n = A.shape[0]
    if n <= 2048:
        evals, evecs = np.linalg.eigh(_dense(A))
        return float(evals[0]), evecs[:, 0]
    v0 = _start_vector(A, seed, "ground_state", n)
    try:
        evals, evecs = spla.eigsh(A, k=1, which="SA", v0=v0, tol=tol, maxiter=50 * n)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(str(exc)) from exc
    return float(evals[0]), evecs[:, 0]


class Propagator:
    """``exp(-i A t)`` for repeated times, via one dense diagonalization."""

    def __init__(self, A):
        mat = _dense(A)
        if np.iscomplexobj(mat) and not np.any(mat.imag):
            mat = mat.real  # real symmetric blocks diagonalize several times faster
        evals, evecs = np.linalg.eigh(mat)
        self.evals = evals
        self.evecs = evecs

    def __call__(self, t, psi):
        coef = self.evecs.conj().T @ psi
        return self.evecs @ (np.exp(-1j * t * self.evals)[:, None] * coef.reshape(len(coef), -1)).reshape(coef.shape)


def propagate(A, t, psi, tol=PROPAGATE_TOL):
    """``exp(-i A t) psi``; checks norm preservation to ``tol``."""
    psi = np.asarray(psi, dtype=complex)
    if t == 0:
        return psi.copy()
    if A.shape[0] <= DENSE_SOLVE_LIMIT:
        out = Propagator(A)(t, psi)
    else:
        out = spla.expm_multiply(-1j * t * sp.csr_matrix(A, dtype=complex), psi)
    n0 = np.linalg.norm(psi)
    if abs(np.linalg.norm(out) - n0) > tol * max(n0, 1.0):
        raise ConvergenceError("propagator lost unitarity beyond tolerance")
    return out


@dataclass
class FormBoundReport:
    """Relative bound ``a``, additive ``b`` and pairwise form-difference constants."""

    a: float
    b: float
    C_pairs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("relative bound must be non-negative")

    def set_pair(self, lam1, lam2, value):
        self.C_pairs[(lam1, lam2)] = value
        self.C_pairs[(lam2, lam1)] = value


@dataclass(frozen=True)
class ResolventRecord:
    z: complex
    lam: float
    norm_diff: float
    D: float
