"""Truncated symmetric Fock space in the occupation-number basis.

Mode functions are plain complex arrays of amplitudes ``sqrt(w) * f(k)``, so
``np.vdot(f, g)`` is the continuum inner product.  All operators are
compressions to ``sum(n) <= nmax``: creation rows that would leave the
truncated space are dropped.
"""
from __future__ import annotations

import math
import warnings
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply
from scipy.special import comb, gammaln

from . import kernels

__all__ = [
    "FockBasis",
    "TruncationWarning",
    "mode_function",
    "create",
    "annihilate",
    "field_phi",
    "field_pi",
    "number_op",
    "weyl",
    "coherent",
    "coherent_series",
    "coherent_leakage",
]

# dense Hermitian diagonalization below this dimension, Krylov action above
DENSE_LIMIT = 2500


class TruncationWarning(UserWarning):
    """Probability mass of an exact state lies above the Fock truncation."""


class FockBasis:
    """Occupation vectors with ``sum(n) <= nmax`` over ``n_modes`` modes.

    States are graded by total number; within a grade they follow
    ``itertools.combinations_with_replacement`` over mode labels, so the
    single-phonon block is ``e_1, e_2, ...`` in mode order.
    """

    def __init__(self, n_modes, nmax):
        if n_modes < 0 or nmax < 0:
            raise ValueError("n_modes and nmax must be non-negative")
        self.n_modes = int(n_modes)
        self.nmax = int(nmax)
        self.states = kernels.enumerate_states(self.n_modes, self.nmax)
        self.totals = self.states.sum(axis=1).astype(np.int64)

    def __len__(self):
        return len(self.states)

    @property
    def dim(self):
        return len(self.states)

    @staticmethod
    def expected_dim(n_modes, nmax):
        return int(comb(n_modes + nmax, nmax, exact=True))

    @cached_property
    def raise_table(self):
        return kernels.raise_table(self.states, self.nmax)

    @cached_property
    def _lookup(self):
        return {row.tobytes(): i for i, row in enumerate(self.states)}

    def index(self, occupation):
        key = np.asarray(occupation, dtype=np.int16).tobytes()
        try:
            return self._lookup[key]
        except KeyError:
            raise KeyError(f"occupation {tuple(occupation)} not in basis") from None

    def vacuum(self):
        out = np.zeros(self.dim, dtype=complex)
        out[0] = 1.0
        return out

    def headroom(self, margin):
        """Boolean mask of states with ``sum(n) <= nmax - margin``."""
        return self.totals <= self.nmax - margin

    @cached_property
    def _ladder_pattern(self):
        # (target, source, mode, sqrt(n_mode + 1)) for every allowed raise
        src, mode = np.nonzero(self.raise_table >= 0)
        tgt = self.raise_table[src, mode]
        amp = np.sqrt(self.states[src, mode].astype(float) + 1.0)
        return tgt, src, mode, amp


def mode_function(values, weight):
    """Amplitudes ``sqrt(weight) * values`` of a sampled function."""
    return math.sqrt(weight) * np.asarray(values, dtype=complex)


def _as_modes(f, basis):
    f = np.asarray(f, dtype=complex).ravel()
    if f.shape != (basis.n_modes,):
        raise ValueError(f"expected {basis.n_modes} mode amplitudes, got {f.shape}")
    return f


def create(f, basis):
    """``a*(f)`` with ``<n + e_j| a*(f) |n> = sqrt(n_j + 1) f_j``."""
    f = _as_modes(f, basis)
    tgt, src, mode, amp = basis._ladder_pattern
    n = basis.dim
    return sp.csr_matrix((f[mode] * amp, (tgt, src)), shape=(n, n))


def annihilate(f, basis):
    """``a(f)`` with ``<n| a(f) |n + e_j> = sqrt(n_j + 1) conj(f_j)``."""
    f = _as_modes(f, basis)
    tgt, src, mode, amp = basis._ladder_pattern
    n = basis.dim
    return sp.csr_matrix((np.conj(f[mode]) * amp, (src, tgt)), shape=(n, n))


def field_phi(f, basis):
    return (annihilate(f, basis) + create(f, basis)).tocsr()


def field_pi(f, basis):
    """``pi(f) = phi(i f) = i (a*(f) - a(f))``."""
    return field_phi(1j * np.asarray(f, dtype=complex), basis)


def number_op(basis):
    return sp.diags(basis.totals.astype(float)).tocsr()


def weyl(f, basis):
    """Dense unitary ``exp(i pi(f))`` of the compressed generator.

    Computed by diagonalizing the Hermitian matrix ``pi(f)``, which keeps the
    result unitary to machine precision.
    """
    gen = field_pi(f, basis).toarray()
    evals, evecs = sla.eigh(gen)
    return (evecs * np.exp(1j * evals)) @ evecs.conj().T


def coherent_leakage(f, nmax):
    """Poisson weight above ``nmax`` of the exact coherent state ``exp(-i pi(f)) Omega``."""
    mean = float(np.vdot(f, f).real)
    if mean == 0.0:
        return 0.0
    n = np.arange(nmax + 1)
    inside = np.exp(n * math.log(mean) - mean - gammaln(n + 1)).sum()
    return max(0.0, 1.0 - float(inside))


def coherent(f, basis, warn=True):
    """``exp(-i pi(f)) Omega`` on the truncated space.

    Emits :class:`TruncationWarning` when the exact state puts more than
    ``1e-6`` of its weight above the truncation.
    """
    f = _as_modes(f, basis)
    leak = coherent_leakage(f, basis.nmax)
    if warn and leak > 1e-6:
        warnings.warn(
            f"coherent state leaks {leak:.2e} above nmax={basis.nmax}",
            TruncationWarning,
            stacklevel=2,
        )
    if basis.dim <= DENSE_LIMIT:
        return weyl(-f, basis)[:, 0].copy()
    gen = (-1j * field_pi(f, basis)).tocsc()
    return expm_multiply(gen, basis.vacuum())


def coherent_series(h, basis, normalized=False):
    """Truncated ``sum_n a*(h)**n / n! Omega``, componentwise ``prod h_j**n_j / sqrt(n_j!)``.

    With ``normalized`` the result is multiplied by ``exp(-||h||**2 / 2)``,
    giving the truncation of the exact coherent state.
    """
    h = _as_modes(h, basis)
    occ = basis.states.astype(float)
    amps = np.ones(basis.dim, dtype=complex)
    for j in np.flatnonzero(h != 0):
        nj = occ[:, j]
        amps *= h[j] ** nj / np.sqrt(np.exp(gammaln(nj + 1)))
    for j in np.flatnonzero(h == 0):
        amps[occ[:, j] > 0] = 0.0
    if normalized:
        amps *= math.exp(-0.5 * float(np.vdot(h, h).real))
    return amps
