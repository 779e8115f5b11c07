import math

import numpy as np
import pytest
import scipy.sparse as sp

from grosslab import fock
from grosslab.hamiltonians import (
    HamiltonianSet,
    build_B_field,
    coupling_amplitudes,
    cutoff_hamiltonian,
    dressed_hamiltonian,
    dressed_interaction,
    dressing_identity_residual,
    gross_transform,
    undressed_H,
)
from grosslab.model import ConfigError, build_grid, kB_norm_sq, scalar_C_KL
from grosslab.qspace import QSpace
from grosslab.spectral import lowest_eigenvalue, op_norm

from conftest import make_config


@pytest.fixture(scope="module")
def hs():
    return HamiltonianSet(make_config(sites_per_dim=8, nmax=3, K=1.5, lambda_list=(2.5, 3.5)))


def _random(space, rng, **kw):
    return space.random_state(rng, **kw)


class TestFields:
    def test_infrared_mask(self, hs):
        f = hs.fields(3.5)
        assert np.all(f.b[hs.space.kabs <= 1.5] == 0)
        assert np.all(f.b[(hs.space.kabs > 1.5) & (hs.space.kabs <= 3.5)] != 0)

    def test_resolvent_identity_per_mode(self, hs):
        f = hs.fields(3.5)
        k2 = hs.space.kabs**2
        np.testing.assert_allclose((1 + k2) * f.b, f.g_K - f.g_lam, atol=1e-15)
        np.testing.assert_allclose(f.k2b + f.g_lam, f.g_K - f.b, atol=1e-15)

    def test_rejects_K_above_lambda(self, hs):
        with pytest.raises(ConfigError):
            build_B_field(hs.space, 3.0, 2.5)

    def test_rejects_cutoff_beyond_active_modes(self):
        space = QSpace(build_grid(make_config(sites_per_dim=16, lambda_list=(2.5, 3.5))), 1, mode_cutoff=2.5)
        with pytest.raises(ConfigError):
            build_B_field(space, 1.5, 3.5)

    def test_kb_norm_matches_quadrature(self, hs):
        f = hs.fields(3.5)
        assert f.kb_norm_sq == pytest.approx(kB_norm_sq(1.5, 3.5, hs.grid), rel=1e-13)

    def test_field_tail_decreases(self):
        cfg = make_config(sites_per_dim=32, nmax=1, lambda_list=(3.5, 5.5, 7.5, 9.5, 11.5))
        space = QSpace(build_grid(cfg), 1, mode_cutoff=11.5)
        ref = build_B_field(space, 1.5, 11.5).field("B")
        gaps = [(build_B_field(space, 1.5, lam).field("B") - ref).sup_norm() for lam in cfg.lambda_list]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] == 0.0


class TestTransform:
    def test_identity_when_K_equals_lambda(self, hs):
        U = gross_transform(hs.space, 2.5, 2.5)
        psi = _random(hs.space, np.random.default_rng(0))
        assert np.allclose(U @ psi, psi, atol=1e-14)

    def test_unitary(self, hs):
        U = hs.sector_U(3.5)
        assert np.max(np.abs(U.conj().T @ U - np.eye(hs.space.D))) <= 1e-10
        Ux = hs.U(3.5)
        psi = _random(hs.space, np.random.default_rng(1))
        assert hs.space.norm(Ux.H @ (Ux @ psi) - psi) <= 1e-10

    def test_weyl_difference_between_cutoffs(self, hs):
        b1, b2 = hs.fields(2.5).b, hs.fields(3.5).b
        R = np.diag(1 / np.sqrt(hs.space.fock.totals + 1.0))
        lhs = np.linalg.norm((hs.sector_U(2.5) - hs.sector_U(3.5)) @ R, 2)
        F1, F2 = hs.fields(2.5).field("B"), hs.fields(3.5).field("B")
        im = np.max(np.abs(np.sum(np.conj(F1.table) * F2.table, axis=1).imag))
        assert lhs <= 2 * (F1 - F2).sup_norm() + im
        assert (F1 - F2).sup_norm() == pytest.approx(np.linalg.norm(b1 - b2))


class TestDressedInteraction:
    def test_vanishes_when_K_equals_lambda(self, hs):
        assert scalar_C_KL(3.5, 3.5, hs.grid) == 0.0
        V = dressed_interaction(hs.space, 3.5, 3.5)
        assert abs(V).max() == 0.0

    def test_hermitian(self, hs):
        V = hs.V(3.5)
        assert abs(V - V.getH()).max() <= 1e-10

    def test_constant_term(self, hs):
        V = hs.V(3.5)
        # on a state orthogonal to every phonon: only C and the <0|phi(kB)^2|0> = ||kB||^2 terms survive
        psi = hs.space.product_state(np.ones(hs.space.n_sites), hs.space.fock.vacuum())
        val = hs.space.inner(psi, V @ psi) / hs.space.inner(psi, psi)
        expect = hs.constants[3.5]["C_KL"] + hs.fields(3.5).kb_norm_sq
        assert val.real == pytest.approx(expect, rel=1e-12)

    def test_assembly_identity(self, hs):
        Hd = dressed_hamiltonian(hs.space, 1.5, 3.5)
        assert abs(Hd - cutoff_hamiltonian(hs.space, 1.5) - hs.V(3.5)).max() <= 1e-12

    def test_kb_term_decreases_in_K(self):
        cfg = make_config(sites_per_dim=16, nmax=2, K=0.5, lambda_list=(3.5, 5.5))
        norms = {}
        for K in (0.5, 1.5, 2.5, 3.5):
            h = HamiltonianSet(cfg, K=K)
            for lam in cfg.lambda_list:
                f = h.fields(lam)
                worst = 0.0
                for P in range(h.space.n_sectors):
                    q = h.space.sector_momenta(P)
                    op = sum(sp.diags(q[:, j]) @ fock.annihilate(f.kb[j], h.space.fock) for j in range(h.space.d))
                    op = op @ sp.diags(1 / (h.sector_h0_diag(P) + 1))
                    worst = max(worst, op_norm(sp.csr_matrix(op)))
                norms[(K, lam)] = worst
        for lam in cfg.lambda_list:
            seq = [norms[(K, lam)] for K in (0.5, 1.5, 2.5, 3.5)]
            assert all(b <= a + 1e-12 for a, b in zip(seq, seq[1:]))


class TestSectors:
    """Sector blocks must reproduce the position-space operators exactly."""

    def _compare(self, hs, full, block_fn, rng):
        space = hs.space
        psi = _random(space, rng)
        got = space.to_sectors(full @ psi)
        blocks = space.to_sectors(psi)
        for P in range(space.n_sectors):
            assert np.allclose(block_fn(P) @ blocks[P], got[P], atol=1e-12)

    def test_H(self, hs, rng):
        self._compare(hs, hs.H(2.5), lambda P: hs.sector_H(2.5, P), rng)

    def test_V(self, hs, rng):
        self._compare(hs, hs.V(3.5), lambda P: hs.sector_V(3.5, P), rng)

    def test_dressed(self, hs, rng):
        self._compare(hs, hs.Hdressed(3.5), lambda P: hs.sector_Hdressed(3.5, P), rng)

    def test_U(self, hs, rng):
        self._compare(hs, hs.U(3.5), lambda P: hs.sector_U(3.5), rng)

    def test_constants(self, hs):
        for lam in hs.lambdas:
            c = hs.constants[lam]
            assert set(c) == {"D", "C_KL", "kB_norm", "B_sup"}
            assert c["B_sup"] == pytest.approx(hs.fields(lam).field("B").sup_norm())


class TestDressingIdentity:
    def test_K_equals_lambda(self, hs, rng):
        trials = [_random(hs.space, rng) for _ in range(3)]
        r = dressing_identity_residual(hs.space, 3.5, 3.5, trials)
        assert max(r.total, r.momentum, r.number, r.field) <= 1e-10

    def test_flags_trials_without_headroom(self, hs, rng):
        trials = [_random(hs.space, rng), _random(hs.space, rng, fock_margin=2)]
        r = dressing_identity_residual(hs.space, 1.5, 3.5, trials)
        assert r.flagged == (0,)


@pytest.fixture(scope="module")
def wide():
    # spacing 2 leaves only the modes +-2 below the cutoff; L = 32 gives room for 14 momentum shifts
    cfg = make_config(torus_length=math.pi, sites_per_dim=32, nmax=14, K=1.5, lambda_list=(3.5,))
    return QSpace(build_grid(cfg), 14, mode_cutoff=3.5)


class TestUndressed:
    def test_hermitian(self, hs, rng):
        A = hs.undressed()
        phi, psi = _random(hs.space, rng), _random(hs.space, rng)
        assert abs(np.vdot(phi, A @ psi) - np.vdot(A @ phi, psi)) <= 1e-10

    def test_agrees_with_cutoff_hamiltonian(self, wide, rng):
        A = undressed_H(wide, 1.5, 3.5)
        H = cutoff_hamiltonian(wide, 3.5)
        qmax = wide.headroom_qmax(steps=wide.nmax)
        for _ in range(5):
            psi = wide.random_state(rng, fock_margin=wide.nmax - 2, qmax=qmax)
            assert wide.norm(A @ psi - H @ psi) <= 1e-8

    def test_independent_of_K(self, wide, rng):
        # K = 2.5 lies above the only active modes, so B = 0 there
        A1, A2 = undressed_H(wide, 1.5, 3.5), undressed_H(wide, 2.5, 3.5)
        qmax = wide.headroom_qmax(steps=wide.nmax)
        for _ in range(3):
            psi = wide.random_state(rng, fock_margin=wide.nmax - 2, qmax=qmax)
            assert wide.norm(A1 @ psi - A2 @ psi) <= 1e-8

    def test_ground_energy_decreases_with_cutoff(self):
        cfg = make_config(sites_per_dim=16, nmax=3, K=0.5, lambda_list=(1.5, 2.5, 3.5, 4.5))
        h = HamiltonianSet(cfg)
        energies = [min(lowest_eigenvalue(h.sector_H(lam, P)) for P in range(h.space.n_sectors)) for lam in h.lambdas]
        assert all(b < a for a, b in zip(energies, energies[1:]))


def test_coupling_amplitudes_masked(hs):
    g = coupling_amplitudes(hs.space, 2.5)
    assert np.all(g[hs.space.kabs > 2.5] == 0)
    assert np.allclose(np.abs(g[hs.space.kabs <= 2.5]) ** 2, hs.grid.weighted_sq()[hs.space.mode_index][hs.space.kabs <= 2.5])
