"""Electron lattice tensored with the truncated Fock space.

A state is a flat complex array indexed by ``x * D + n`` (site-major), where
``D`` is the Fock dimension.  Norms carry the site weight ``(ell / L)**d`` so
lattice norms approximate continuum ``L^2`` norms.

Electron momenta live in the Brillouin box ``(2 pi / ell) * (-L/2, L/2]^d``.
On a finite periodic lattice no momentum operator can satisfy
``p e^{ikx} = e^{ikx} (p + k)`` for every state, so identities built on that
shift rule are exact only on states whose shifted momenta stay inside the
box; :meth:`QSpace.momentum_window` selects such states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, expm_multiply

from .fock import DENSE_LIMIT, FockBasis, field_pi, number_op

__all__ = [
    "FormFactorField",
    "QSpace",
    "XBlockOperator",
    "classify_structure",
]


@dataclass(frozen=True, eq=False)
class FormFactorField:
    """Mode amplitudes ``F_x(k)`` tabulated as ``(n_sites, n_modes)``."""

    table: np.ndarray
    name: str = ""

    def sup_norm(self):
        return float(np.sqrt(np.max(np.sum(np.abs(self.table) ** 2, axis=1))))

    def __add__(self, other):
        return FormFactorField(self.table + other.table, f"{self.name}+{other.name}")

    def __sub__(self, other):
        return FormFactorField(self.table - other.table, f"{self.name}-{other.name}")

    def scaled(self, factor, name=None):
        """Multiply every mode amplitude by ``factor`` (scalar or per-mode array)."""
        return FormFactorField(self.table * np.asarray(factor)[None, ...], name or self.name)


class QSpace:
    """``L**d`` electron sites times the Fock space over the active modes.

    ``mode_cutoff`` restricts phonons to ``|k| <= mode_cutoff``; modes beyond
    every cutoff in use never couple and would only inflate the dimension.
    """

    def __init__(self, grid, nmax, mode_cutoff=None):
        self.grid = grid
        self.d = grid.dimension
        self.L = grid.sites_per_dim
        self.ell = grid.torus_length
        self.n_sites = self.L**self.d
        self.site_weight = (self.ell / self.L) ** self.d
        sel = np.ones(grid.count, dtype=bool) if mode_cutoff is None else grid.kabs <= mode_cutoff + 1e-12
        self.mode_index = np.flatnonzero(sel)
        self.kmodes = grid.modes[sel]
        self.kabs = grid.kabs[sel]
        self.n_modes = len(self.mode_index)
        self.fock = FockBasis(self.n_modes, nmax)
        self.nmax = nmax
        self.D = self.fock.dim
        self.dim = self.n_sites * self.D

        spacing = grid.spacing
        ints = np.arange(self.L)
        freq = np.fft.fftfreq(self.L, 1.0 / self.L).round().astype(int)
        freq[freq == -self.L // 2] = self.L // 2
        xg = np.meshgrid(*([ints] * self.d), indexing="ij")
        qg = np.meshgrid(*([freq] * self.d), indexing="ij")
        self.site_labels = np.stack([g.ravel() for g in xg], axis=1)
        self.momentum_labels = np.stack([g.ravel() for g in qg], axis=1)
        self.x = self.site_labels * (self.ell / self.L)
        self.q = self.momentum_labels * spacing
        self.q2 = np.sum(self.q**2, axis=1)
        # total phonon momentum of each Fock state
        self.phonon_momentum = self.fock.states.astype(float) @ self.kmodes

    # ---- states -------------------------------------------------------
    def inner(self, phi, psi):
        return self.site_weight * np.vdot(phi, psi)

    def norm(self, psi):
        return math.sqrt(self.site_weight) * float(np.linalg.norm(psi))

    def form_norm(self, psi):
        """``||(H0 + 1)**(1/2) psi||``."""
        return self.norm(self.apply_h0_function(lambda e: np.sqrt(e + 1.0), psi))

    def product_state(self, gamma, eta):
        """``gamma (x) eta`` from site amplitudes and a Fock vector."""
        return np.kron(np.asarray(gamma, dtype=complex), np.asarray(eta, dtype=complex))

    def to_momentum(self, psi):
        """Electron-momentum amplitudes, shape ``(n_sites, D)``, unitary normalization."""
        arr = np.asarray(psi).reshape((self.L,) * self.d + (self.D,))
        out = np.fft.fftn(arr, axes=tuple(range(self.d)), norm="ortho")
        return out.reshape(self.n_sites, self.D)

    def from_momentum(self, amps):
        arr = np.asarray(amps).reshape((self.L,) * self.d + (self.D,))
        out = np.fft.ifftn(arr, axes=tuple(range(self.d)), norm="ortho")
        return out.reshape(-1)

    def momentum_window(self, qmax):
        """Mask over electron momenta with every component ``|q_j| <= qmax``."""
        return np.all(np.abs(self.q) <= qmax + 1e-12, axis=1)

    def headroom_qmax(self, steps=1, cutoff=None):
        """Largest window such that ``steps`` phonon shifts of size ``<= cutoff`` stay in the box."""
        cutoff = float(np.max(np.abs(self.kmodes))) if cutoff is None else cutoff
        return self.grid.lambda_grid - self.grid.spacing / 2 - steps * cutoff

    def random_state(self, rng, fock_margin=0, qmax=None):
        """Normalized random state on ``sum(n) <= nmax - fock_margin`` (and ``|q| <= qmax``)."""
        amps = rng.standard_normal((self.n_sites, self.D)) + 1j * rng.standard_normal((self.n_sites, self.D))
        amps[:, ~self.fock.headroom(fock_margin)] = 0.0
        if qmax is not None:
            amps[~self.momentum_window(qmax), :] = 0.0
            psi = self.from_momentum(amps)
        else:
            psi = amps.reshape(-1)
        return psi / self.norm(psi)

    # ---- total-momentum sectors ------------------------------------------
    # P = q + sum_k k n_k (mod the lattice) commutes with every operator built
    # here.  In sector P the state |q, n> has q = P - K(n), so a sector is a
    # copy of the Fock space and a#(e^{-ikx} f) acts in it as plain a#(f).
    @cached_property
    def _phonon_labels(self):
        # total phonon momentum label of each Fock state, reduced mod L
        mode_labels = self.grid.labels[self.mode_index]
        return (self.fock.states.astype(np.int64) @ mode_labels) % self.L

    def _sector_index(self, sector):
        q = (self.momentum_labels[sector] % self.L - self._phonon_labels) % self.L
        return np.ravel_multi_index(tuple(q.T), (self.L,) * self.d)

    @cached_property
    def sector_q_index(self):
        """``(n_sectors, D)`` flat momentum index of the state ``(P, n)``."""
        return np.stack([self._sector_index(P) for P in range(self.n_sectors)])

    @property
    def n_sectors(self):
        return self.n_sites

    def sector_momenta(self, sector):
        """Electron momentum of each Fock state in ``sector``, shape ``(D, d)``."""
        return self.q[self._sector_index(sector)]

    def to_sectors(self, psi):
        """Split a state into ``(n_sectors, D)`` sector amplitudes (unitary)."""
        mom = self.to_momentum(psi)
        return mom[self.sector_q_index, np.arange(self.D)[None, :]]

    def from_sectors(self, blocks):
        mom = np.zeros((self.n_sites, self.D), dtype=complex)
        mom[self.sector_q_index, np.arange(self.D)[None, :]] = blocks
        return self.from_momentum(mom)

    # ---- multipliers ----------------------------------------------------
    def apply_multiplier(self, symbol, psi):
        """Apply an electron Fourier multiplier given per momentum (``n_sites`` or ``(n_sites, D)``)."""
        sym = np.asarray(symbol)
        if sym.ndim == 1:
            sym = sym[:, None]
        return self.from_momentum(sym * self.to_momentum(psi))

    def site_multiplier(self, symbol, values):
        """Apply a Fourier multiplier to a function on the sites alone."""
        arr = np.asarray(values, dtype=complex).reshape((self.L,) * self.d)
        out = np.fft.ifftn(np.asarray(symbol).reshape((self.L,) * self.d) * np.fft.fftn(arr))
        return out.reshape(-1)

    def apply_h0_function(self, func, psi):
        """``func(H0) psi`` using the joint eigenbasis (electron momentum, occupation)."""
        energies = self.q2[:, None] + self.fock.totals[None, :]
        return self.apply_multiplier(func(energies), psi)

    def multiplier_op(self, symbol):
        """Sparse matrix of the multiplier (dense ``n_sites x n_sites`` block times ``I_D``)."""
        labels = self.momentum_labels
        phase = np.exp(-2j * np.pi * (labels @ self.site_labels.T) / self.L)
        mat = (phase.conj().T * np.asarray(symbol)[None, :]) @ phase / self.n_sites
        mat[np.abs(mat) < 1e-15] = 0.0
        return sp.kron(sp.csr_matrix(mat), sp.identity(self.D, format="csr"), format="csr")

    def momentum_op(self, axis):
        return self.multiplier_op(self.q[:, axis])

    def laplacian_op(self):
        return self.multiplier_op(self.q2)

    def position_op(self, values):
        """Multiplication by a site function, ``values`` of length ``n_sites``."""
        return sp.kron(sp.diags(np.asarray(values)), sp.identity(self.D), format="csr")

    def plane_wave(self, k):
        """Site values of ``e^{i k x}``."""
        return np.exp(1j * (self.x @ np.asarray(k, dtype=float)))

    def number_op(self):
        return sp.kron(sp.identity(self.n_sites), number_op(self.fock), format="csr")

    def h0(self):
        return (self.laplacian_op() + self.number_op()).tocsr()

    # ---- x-dependent mode functions -------------------------------------
    def plane_field(self, amplitudes, name=""):
        """``F_x(k) = e^{-i k x} f(k)`` for mode amplitudes ``f`` over the active modes."""
        f = np.asarray(amplitudes, dtype=complex)
        return FormFactorField(np.exp(-1j * (self.x @ self.kmodes.T)) * f[None, :], name)

    def constant_field(self, amplitudes, name=""):
        f = np.asarray(amplitudes, dtype=complex)
        return FormFactorField(np.tile(f, (self.n_sites, 1)), name)

    def _ladder(self, F, adjoint):
        table = np.asarray(F.table if isinstance(F, FormFactorField) else F)
        tgt, src, mode, amp = self.fock._ladder_pattern
        offs = (np.arange(self.n_sites) * self.D)[:, None]
        vals = table[:, mode] * amp[None, :]
        rows = (offs + tgt[None, :]).ravel()
        cols = (offs + src[None, :]).ravel()
        if adjoint:
            return sp.csr_matrix((np.conj(vals).ravel(), (cols, rows)), shape=(self.dim, self.dim))
        return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(self.dim, self.dim))

    def gen_create(self, F):
        """``(a*(F) psi)(x) = a*(F_x) psi(x)``."""
        return self._ladder(F, adjoint=False)

    def gen_annihilate(self, F):
        return self._ladder(F, adjoint=True)

    def field_ops(self, F):
        a = self.gen_annihilate(F)
        c = self.gen_create(F)
        return (a + c).tocsr(), (1j * (c - a)).tocsr()

    def dot_p_annihilate(self, components):
        """``sum_j p_j a(F_j)`` for per-axis fields ``F_j``."""
        out = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for j, F in enumerate(components):
            out = out + self.momentum_op(j) @ self.gen_annihilate(F)
        return out.tocsr()

    def covariance_phases(self):
        """``T_x = exp(-i x . P_ph)`` per site; ``a#(e^{-ikx} f) = T_x a#(f) T_x*``."""
        return np.exp(-1j * (self.x @ self.phonon_momentum.T))

    def x_block_exp_pi(self, base_amplitudes):
        """``exp(i pi(F))`` for ``F_x(k) = e^{-ikx} f(k)``, as an :class:`XBlockOperator`."""
        gen = field_pi(base_amplitudes, self.fock)
        return XBlockOperator.from_generator(gen, self.covariance_phases())


class XBlockOperator(LinearOperator):
    """Site-block-diagonal operator with blocks ``T_x W T_x*``.

    ``W`` is either stored densely or applied as ``exp(i G)`` for a sparse
    Hermitian generator ``G`` (large Fock spaces).
    """

    def __init__(self, phases, dense=None, generator=None, sign=1):
        n_sites, D = phases.shape
        super().__init__(dtype=complex, shape=(n_sites * D, n_sites * D))
        self.phases = phases
        self.dense = dense
        self.generator = generator
        self.sign = sign

    @classmethod
    def from_generator(cls, generator, phases):
        if generator.shape[0] <= DENSE_LIMIT:
            evals, evecs = np.linalg.eigh(generator.toarray())
            dense = (evecs * np.exp(1j * evals)) @ evecs.conj().T
            return cls(phases, dense=dense)
        return cls(phases, generator=generator.tocsc())

    def _base(self, cols):
        # cols has shape (D, m)
        if self.dense is not None:
            return self.dense @ cols
        return expm_multiply(1j * self.sign * self.generator, cols)

    def _matmat(self, X):
        n_sites, D = self.phases.shape
        m = X.shape[1]
        arr = X.reshape(n_sites, D, m) * np.conj(self.phases)[:, :, None]
        cols = arr.transpose(1, 0, 2).reshape(D, n_sites * m)
        out = self._base(cols).reshape(D, n_sites, m).transpose(1, 0, 2)
        return (out * self.phases[:, :, None]).reshape(n_sites * D, m)

    def _matvec(self, x):
        return self._matmat(np.asarray(x).reshape(-1, 1)).ravel()

    def _adjoint(self):
        if self.dense is not None:
            return XBlockOperator(self.phases, dense=self.dense.conj().T)
        return XBlockOperator(self.phases, generator=self.generator, sign=-self.sign)

    def block(self, site):
        ph = self.phases[site]
        if self.dense is not None:
            base = self.dense
        else:
            base = expm_multiply(1j * self.sign * self.generator, np.eye(self.phases.shape[1], dtype=complex))
        return ph[:, None] * base * np.conj(ph)[None, :]

    def tosparse(self):
        return sp.block_diag([self.block(x) for x in range(self.phases.shape[0])], format="csr")


def classify_structure(A, space, tol=0.0):
    """Sparsity class: ``x-block-diagonal``, ``momentum-multiplier`` or ``general``."""
    A = sp.csr_matrix(A)
    coo = A.tocoo()
    keep = np.abs(coo.data) > tol
    rows, cols = coo.row[keep], coo.col[keep]
    if np.all(rows // space.D == cols // space.D):
        return "x-block-diagonal"
    if np.all(rows % space.D == cols % space.D):
        return "momentum-multiplier"
    return "general"
