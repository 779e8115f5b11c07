"""Cutoff Hamiltonians, the Gross transform and the dressed Hamiltonian.

Position-space assemblies return scipy sparse matrices (or block operators)
on the full :class:`~grosslab.qspace.QSpace`.  Because total momentum is
conserved, every operator here also has an exact ``D x D`` block per
momentum sector; the ``sector_*`` helpers build those blocks directly and are
what the experiments use for norms, spectra and propagators.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from . import fock
from .model import ConfigError, build_grid, kB_norm_sq, scalar_C_KL, scalar_D
from .qspace import FormFactorField, QSpace

__all__ = [
    "GrossFields",
    "DressingResidual",
    "HamiltonianSet",
    "coupling_amplitudes",
    "build_B_field",
    "cutoff_hamiltonian",
    "gross_transform",
    "dressed_interaction",
    "dressed_hamiltonian",
    "undressed_H",
    "dressing_identity_residual",
]


def coupling_amplitudes(space, lam):
    """``sqrt(w) v(k) chi_lam(k)`` over the active modes of ``space``."""
    grid = space.grid
    v = grid.vsamples[space.mode_index] * np.sqrt(grid.weight)
    return np.where(space.kabs <= lam + 1e-12, v, 0.0).astype(complex)


@dataclass(frozen=True, eq=False)
class GrossFields:
    """Mode amplitudes at ``x = 0`` of ``G_K, G_lam, B, kB, k^2 B``.

    The x-dependent fields are ``e^{-ikx}`` times these; see :meth:`field`.
    """

    K: float
    lam: float
    g_K: np.ndarray
    g_lam: np.ndarray
    b: np.ndarray
    kb: np.ndarray  # (d, M)
    k2b: np.ndarray
    space: QSpace = field(repr=False)

    def field(self, name):
        """One of ``G_K, G_lam, B, k2B`` or ``kB0, kB1, ...`` as a :class:`FormFactorField`."""
        if name.startswith("kB"):
            return self.space.plane_field(self.kb[int(name[2:])], name)
        amps = {"G_K": self.g_K, "G_lam": self.g_lam, "B": self.b, "k2B": self.k2b}[name]
        return self.space.plane_field(amps, name)

    @property
    def kB_fields(self):
        return [self.field(f"kB{j}") for j in range(self.kb.shape[0])]

    @property
    def b_norm_sq(self):
        return float(np.vdot(self.b, self.b).real)

    @property
    def kb_norm_sq(self):
        return float(np.sum(np.abs(self.kb) ** 2))

    @property
    def re_bg(self):
        """``Re <B_x, G_lam,x>``, the same for every ``x``."""
        return float(np.vdot(self.b, self.g_lam).real)


def build_B_field(space, K, lam):
    """``B(k) = -(1 + k^2)^{-1} G_lam(k) (1 - chi_K(k))`` and its momentum weights.

    ``K == lam`` gives ``B = 0``; ``K > lam`` is rejected.
    """
    if K > lam:
        raise ConfigError(f"need K <= lam, got K={K}, lam={lam}")
    if np.sum(space.grid.kabs <= lam + 1e-12) != np.sum(space.kabs <= lam + 1e-12):
        raise ConfigError(f"cutoff {lam} exceeds the active mode set")
    g_K = coupling_amplitudes(space, K)
    g_lam = coupling_amplitudes(space, lam)
    k2 = space.kabs**2
    b = np.where(space.kabs > K + 1e-12, -g_lam / (1.0 + k2), 0.0)
    kb = space.kmodes.T * b[None, :]
    return GrossFields(float(K), float(lam), g_K, g_lam, b, kb, k2 * b, space)


# ---- position-space assemblies ------------------------------------------
def cutoff_hamiltonian(space, lam):
    """``H_lam = p^2 + N + phi(G_lam)``."""
    phi, _ = space.field_ops(space.plane_field(coupling_amplitudes(space, lam)))
    return (space.h0() + phi).tocsr()


def gross_transform(space, K, lam, fields=None):
    """``U = exp(i pi(B))`` as a site-block-diagonal unitary."""
    fields = fields or build_B_field(space, K, lam)
    return space.x_block_exp_pi(fields.b)


def dressed_interaction(space, K, lam, fields=None):
    """``V = -2 a*(kB).p - 2 p.a(kB) + phi(kB)^2 + C_{K,lam}``."""
    fields = fields or build_B_field(space, K, lam)
    C = scalar_C_KL(K, lam, space.grid)
    out = C * sp.identity(space.dim, dtype=complex, format="csr")
    for j, F in enumerate(fields.kB_fields):
        p = space.momentum_op(j)
        a = space.gen_annihilate(F)
        phi, _ = space.field_ops(F)
        out = out - 2.0 * (a.getH() @ p) - 2.0 * (p @ a) + phi @ phi
    return out.tocsr()


def dressed_hamiltonian(space, K, lam, fields=None):
    """``H' = H_K + V_{K,lam}``."""
    return (cutoff_hamiltonian(space, K) + dressed_interaction(space, K, lam, fields)).tocsr()


def undressed_H(space, K, lam_ref, fields=None):
    """``U* H' U`` at the reference cutoff, as a linear operator."""
    fields = fields or build_B_field(space, K, lam_ref)
    U = gross_transform(space, K, lam_ref, fields)
    Hd = dressed_hamiltonian(space, K, lam_ref, fields)
    Uh = U.adjoint()
    return LinearOperator(
        (space.dim, space.dim),
        matvec=lambda v: Uh @ (Hd @ (U @ v)),
        rmatvec=lambda v: Uh @ (Hd @ (U @ v)),
        dtype=complex,
    )


@dataclass(frozen=True)
class DressingResidual:
    """Relative residuals ``max_trials ||lhs - rhs|| / ||psi||``."""

    total: float
    momentum: float
    number: float
    field: float
    flagged: tuple = ()


def dressing_identity_residual(space, K, lam, trials, margin=2, leak_tol=1e-6):
    """Residual of ``U H_lam U* = H_K + V`` and of its three building blocks.

    Trials whose weight above ``nmax - margin`` exceeds ``leak_tol`` are
    listed in ``flagged`` (they lack occupation headroom).
    """
    fields = build_B_field(space, K, lam)
    U = gross_transform(space, K, lam, fields)
    Uh = U.adjoint()
    H = cutoff_hamiltonian(space, lam)
    Hd = dressed_hamiltonian(space, K, lam, fields)
    N = space.number_op()
    phiB, _ = space.field_ops(fields.field("B"))
    phiG, _ = space.field_ops(fields.field("G_lam"))
    moms = [space.momentum_op(j) for j in range(space.d)]
    phikB = [space.field_ops(F)[0] for F in fields.kB_fields]

    def conj(A, v):
        return U @ (A @ (Uh @ v))

    total = mom = num = fld = 0.0
    flagged = []
    top = ~space.fock.headroom(margin)
    for i, psi in enumerate(trials):
        nrm = space.norm(psi)
        amps = np.asarray(psi).reshape(space.n_sites, space.D)
        if space.site_weight * np.sum(np.abs(amps[:, top]) ** 2) / nrm**2 > leak_tol:
            flagged.append(i)
        total = max(total, space.norm(conj(H, psi) - Hd @ psi) / nrm)
        for p, pk in zip(moms, phikB):
            mom = max(mom, space.norm(conj(p, psi) - (p @ psi - pk @ psi)) / nrm)
        rhs = N @ psi + phiB @ psi + fields.b_norm_sq * psi
        num = max(num, space.norm(conj(N, psi) - rhs) / nrm)
        rhs = phiG @ psi + 2.0 * fields.re_bg * psi
        fld = max(fld, space.norm(conj(phiG, psi) - rhs) / nrm)
    return DressingResidual(total, mom, num, fld, tuple(flagged))


# ---- sector blocks ---------------------------------------------------------
class HamiltonianSet:
    """All cutoff-dependent operators for one configuration.

    Phonons are restricted to ``|k| <= max(lambda_list)``; the largest cutoff
    plays the role of the uncut reference.  Operators are built on first use
    and cached.
    """

    def __init__(self, config, nmax=None, K=None):
        self.config = config
        self.K = config.K if K is None else K
        self.grid = build_grid(config)
        self.space = QSpace(self.grid, config.nmax if nmax is None else nmax, mode_cutoff=config.lambda_ref)
        self.lambdas = tuple(config.lambda_list)
        self.lambda_ref = config.lambda_ref
        self._cache = {}

    @cached_property
    def constants(self):
        out = {}
        for lam in self.lambdas:
            f = self.fields(lam)
            out[lam] = {
                "D": scalar_D(lam, self.grid),
                "C_KL": scalar_C_KL(self.K, lam, self.grid),
                "kB_norm": float(np.sqrt(kB_norm_sq(self.K, lam, self.grid))),
                "B_sup": float(np.sqrt(f.b_norm_sq)),
            }
        return out

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def fields(self, lam):
        return self._get(("fields", lam), lambda: build_B_field(self.space, self.K, lam))

    # position space
    def H0(self):
        return self._get("H0", self.space.h0)

    def H(self, lam):
        return self._get(("H", lam), lambda: cutoff_hamiltonian(self.space, lam))

    def U(self, lam):
        return self._get(("U", lam), lambda: gross_transform(self.space, self.K, lam, self.fields(lam)))

    def V(self, lam):
        return self._get(("V", lam), lambda: dressed_interaction(self.space, self.K, lam, self.fields(lam)))

    def Hdressed(self, lam):
        return self._get(("Hd", lam), lambda: (self.H(self.K) + self.V(lam)).tocsr())

    def undressed(self):
        return undressed_H(self.space, self.K, self.lambda_ref, self.fields(self.lambda_ref))

    # sectors
    def sector_momenta(self, P):
        return self.space.sector_momenta(P)

    def sector_h0_diag(self, P):
        q = self.space.sector_momenta(P)
        return np.sum(q**2, axis=1) + self.space.fock.totals

    def _fock(self, kind, amps):
        key = (kind, amps.tobytes())
        builders = {"phi": fock.field_phi, "a": fock.annihilate}
        return self._get(key, lambda: builders[kind](amps, self.space.fock))

    def sector_phi(self, amps):
        return self._fock("phi", np.ascontiguousarray(amps))

    def sector_H(self, lam, P):
        """Block of ``H_lam`` in sector ``P`` (sparse ``D x D``)."""
        g = coupling_amplitudes(self.space, lam)
        return (sp.diags(self.sector_h0_diag(P)) + self.sector_phi(g)).tocsr()

    def sector_V(self, lam, P):
        f = self.fields(lam)
        q = self.space.sector_momenta(P)
        D = self.space.D
        out = self.constants_for(lam)["C_KL"] * sp.identity(D, dtype=complex, format="csr")
        for j in range(self.space.d):
            a = self._fock("a", np.ascontiguousarray(f.kb[j]))
            pa = sp.diags(q[:, j]) @ a
            phi = self.sector_phi(f.kb[j])
            out = out - 2.0 * pa.getH() - 2.0 * pa + phi @ phi
        return out.tocsr()

    def sector_Hdressed(self, lam, P):
        return (self.sector_H(self.K, P) + self.sector_V(lam, P)).tocsr()

    def sector_U(self, lam):
        """Dense ``exp(i pi(b))``; identical in every sector."""
        return self._get(("sU", lam), lambda: fock.weyl(self.fields(lam).b, self.space.fock))

    def constants_for(self, lam):
        if lam in self.constants:
            return self.constants[lam]
        return {"C_KL": scalar_C_KL(self.K, lam, self.grid), "D": scalar_D(lam, self.grid)}
