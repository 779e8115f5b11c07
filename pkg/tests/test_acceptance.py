"""Acceptance criteria 1 to 11, one test each (criterion 8 is split by dimension).

Every test records its outcome through the ``criterion`` fixture before it
asserts, so the terminal summary lists one PASS/FAIL line per criterion.
"""
import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from grosslab import cli, fock
from grosslab.experiments import (
    exp_coherent_core,
    exp_dressing,
    exp_dynamics,
    exp_form_bound,
    exp_regularity,
    exp_resolvent_rate,
)
from grosslab.hamiltonians import HamiltonianSet
from grosslab.model import FormFactorSpec, ModelConfig, build_grid, kB_norm_sq, scalar_C_KL, scalar_D
from grosslab.qspace import QSpace

from conftest import REF_CONFIG, TWO_PI, make_config

SMOOTH = FormFactorSpec("smooth_power", beta=0.125)
POLARON = FormFactorSpec("polaron")
N_TRIALS = 50


@pytest.fixture(scope="module")
def ref_hs():
    return HamiltonianSet(REF_CONFIG)


def _worst(records):
    return max((r.ratio for r in records), default=0.0)


def _rand(rng, m, scale=1.0):
    return scale * (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / math.sqrt(2 * m)


# ---- 1 ----------------------------------------------------------------------------
def test_c01_ccr_and_adjointness(criterion):
    rng = np.random.default_rng(101)
    b = fock.FockBasis(4, 6)
    head = np.eye(b.dim)[:, b.headroom(2)]
    worst = 0.0
    for _ in range(N_TRIALS):
        f, g = _rand(rng, 4, 1.5), _rand(rng, 4, 1.5)
        a_f, ad_g = fock.annihilate(f, b), fock.create(g, b)
        pf, pg, qg = fock.field_phi(f, b), fock.field_phi(g, b), fock.field_pi(g, b)
        errs = [
            np.abs((a_f @ ad_g - ad_g @ a_f) @ head - np.vdot(f, g) * head),
            np.abs((a_f @ fock.annihilate(g, b) - fock.annihilate(g, b) @ a_f) @ head),
            np.abs((pf @ pg - pg @ pf) @ head - 2j * np.vdot(f, g).imag * head),
            np.abs((pf @ qg - qg @ pf) @ head - 2j * np.vdot(f, g).real * head),
            np.abs((fock.create(f, b) - a_f.getH()).toarray()),
            np.abs((pf - pf.getH()).toarray()),
        ]
        worst = max(worst, max(float(np.max(e)) for e in errs))

    # the x-dependent generalized ladders: a*(F) is the adjoint of a(F)
    space = QSpace(build_grid(make_config(sites_per_dim=16, nmax=3, lambda_list=(3.5,))), 3, mode_cutoff=3.5)
    F = space.plane_field(_rand(rng, space.n_modes, 2.0))
    worst = max(worst, float(abs(space.gen_create(F) - space.gen_annihilate(F).getH()).max()))
    ok = criterion(1, "CCR / adjointness to 1e-12", worst <= 1e-12, f"worst {worst:.2e}")
    assert ok


# ---- 2 ----------------------------------------------------------------------------
def test_c02_ladder_constants(criterion):
    rng = np.random.default_rng(202)
    b = fock.FockBasis(4, 6)
    counts = {}

    # number bounds: ||a(f) psi|| <= ||f|| ||N^1/2 psi||, ||a*(f) psi|| <= ||f|| ||(N+1)^1/2 psi||
    N, N1 = np.sqrt(b.totals.astype(float)), np.sqrt(b.totals + 1.0)
    viol = 0
    for _ in range(N_TRIALS):
        f = _rand(rng, 4, rng.uniform(0.1, 3.0))
        psi = rng.standard_normal(b.dim) + 1j * rng.standard_normal(b.dim)
        nf = np.linalg.norm(f)
        viol += np.linalg.norm(fock.annihilate(f, b) @ psi) > nf * np.linalg.norm(N * psi) + 1e-12
        viol += np.linalg.norm(fock.create(f, b) @ psi) > nf * np.linalg.norm(N1 * psi) + 1e-12
    counts["number"] = viol

    # quadratic bound: ||phi(f)^2 (N+1)^-1|| <= 4 sqrt 2 ||f||^2
    R = np.diag(1.0 / (b.totals + 1.0))
    viol = 0
    for _ in range(N_TRIALS):
        f = _rand(rng, 4, rng.uniform(0.1, 2.0))
        phi = fock.field_phi(f, b).toarray()
        viol += np.linalg.norm(phi @ phi @ R, 2) > 4 * math.sqrt(2) * np.linalg.norm(f) ** 2 + 1e-12
    counts["quadratic"] = viol

    # Weyl difference: ||(W(f) - W(g)) (N+1)^-1/2|| <= 2||f-g|| + |Im<f,g>| on headroom states
    wb = fock.FockBasis(3, 10)
    cols = np.eye(wb.dim)[:, wb.headroom(5)] / np.sqrt(wb.totals + 1.0)[:, None]
    viol = 0
    for _ in range(N_TRIALS):
        f, g = _rand(rng, 3, rng.uniform(0.1, 1.0)), _rand(rng, 3, rng.uniform(0.1, 1.0))
        lhs = np.linalg.norm((fock.weyl(f, wb) - fock.weyl(g, wb)) @ cols, 2)
        viol += lhs > 2 * np.linalg.norm(f - g) + abs(np.vdot(f, g).imag) + 1e-12
    counts["weyl"] = viol

    # kinetic-number bound: ||a(f_x) psi|| <= C_f ||(1+p^2)^1/2 N^1/2 psi|| with the lattice C_f
    space = QSpace(build_grid(make_config(sites_per_dim=16, nmax=3, lambda_list=(3.5,))), 3, mode_cutoff=3.5)
    h = space.q[:, None, :] - space.kmodes[None, :, :]
    weights = np.sqrt((1 + space.q2)[:, None] * space.fock.totals[None, :])
    qmax = space.headroom_qmax()
    viol = 0
    for _ in range(N_TRIALS):
        f = 0.8 * (rng.standard_normal(space.n_modes) + 1j * rng.standard_normal(space.n_modes))
        C_f = math.sqrt(float(np.max(np.sum(np.abs(f) ** 2 / (1 + np.sum(h**2, axis=2)), axis=1))))
        A = space.gen_annihilate(space.plane_field(f))
        psi = space.random_state(rng, qmax=qmax)
        viol += space.norm(A @ psi) > C_f * space.norm(space.apply_multiplier(weights, psi)) + 1e-12
    counts["kinetic"] = viol

    total = sum(int(v) for v in counts.values())
    detail = ", ".join(f"{k}: {int(v)} violations" for k, v in counts.items())
    ok = criterion(2, "ladder and Weyl bounds, 50 trials each", total == 0, detail)
    assert ok


# ---- 3 ----------------------------------------------------------------------------
def test_c03_field_difference_bound(criterion, ref_hs):
    rep = exp_form_bound(REF_CONFIG, n_pairs=100, hs=ref_hs)
    pairs = [r for r in rep.select("pair") if "trial=equal" not in r.key]
    assert len(pairs) == 100
    ok = criterion(3, "field difference bound, 100 random tuples", all(r.passed for r in pairs),
                   f"worst ratio {_worst(pairs):.4f}")
    assert ok


# ---- 4 ----------------------------------------------------------------------------
def test_c04_commutator_identity(criterion):
    rng = np.random.default_rng(404)
    cases = [
        (make_config(sites_per_dim=16, nmax=3, K=1.5, lambda_list=(3.5,)), (2.5, 3.5)),
        (make_config(dimension=2, sites_per_dim=6, nmax=2, K=0.5, lambda_list=(2.1,)), (1.5, 2.1)),
    ]
    worst = 0.0
    for cfg, (l1, l2) in cases:
        space = QSpace(build_grid(cfg), cfg.nmax, mode_cutoff=l2)
        v = space.grid.vsamples[space.mode_index] * math.sqrt(space.grid.weight)
        G = {lam: np.where(space.kabs <= lam + 1e-12, v, 0.0).astype(complex) for lam in (l1, l2)}
        dG = G[l1] - G[l2]
        k2 = space.kabs**2
        lhs = sp.csr_matrix((space.dim, space.dim), dtype=complex)
        for j in range(space.d):
            A_j = space.gen_annihilate(space.plane_field(space.kmodes[:, j] / k2 * dG))
            p = space.momentum_op(j)
            lhs = lhs + p @ A_j - A_j @ p
        rhs = space.gen_annihilate(space.plane_field(dG))
        qmax = space.headroom_qmax()
        for _ in range(10):
            psi = space.random_state(rng, fock_margin=1, qmax=qmax)
            worst = max(worst, space.norm(lhs @ psi - rhs @ psi))
    ok = criterion(4, "commutator identity to 1e-10", worst <= 1e-10, f"worst {worst:.2e}")
    assert ok


# ---- 5 ----------------------------------------------------------------------------
DRESS_CONFIG = ModelConfig(
    dimension=1, torus_length=TWO_PI, sites_per_dim=32, nmax=4,
    form_factor=SMOOTH, K=2.0, lambda_list=(2.5, 3.5),
)


def test_c05_dressing_identity(criterion):
    rep = exp_dressing(DRESS_CONFIG)
    exact = rep.select("K=lam")
    halving = rep.select("halving") + rep.select("rounding")
    assert exact and halving
    recs = exact + halving
    worst_exact = max(r.measured for r in exact)
    worst_halving = max((r.ratio for r in rep.select("halving")), default=0.0)
    ok = criterion(5, "dressing identity, nmax 4 -> 8", all(r.passed for r in recs),
                   f"K=lam residual {worst_exact:.1e}, worst halving ratio {worst_halving:.3f}")
    assert ok


# ---- 6 ----------------------------------------------------------------------------
def test_c06_resolvent_rate(criterion, ref_hs):
    rep = exp_resolvent_rate(REF_CONFIG, z=1j, hs=ref_hs)
    recs = rep.select("fitted C") + rep.select("monotone")
    assert recs
    ok = criterion(6, "resolvent rate monotone and within 2C sqrt(D)", all(r.passed for r in recs),
                   f"worst ratio {_worst(rep.select('fitted C')):.3f}")
    assert ok


# ---- 7 ----------------------------------------------------------------------------
def test_c07_dynamics_rate(criterion, ref_hs):
    rep = exp_dynamics(REF_CONFIG, t_list=(0.5, 1.0), hs=ref_hs)
    rate = [r for r in rep.select("rate") if not r.key.startswith("t=0;")]
    other = rep.select("group") + rep.select("unitary")
    ok = criterion(7, "propagator rate, group law, unitarity", rep.verdict,
                   f"C={rep.extras['C']:.3g}, worst rate ratio {_worst(rate):.3g}, "
                   f"worst residual {max(r.measured for r in other):.1e}")
    assert ok


# ---- 8 ----------------------------------------------------------------------------
D2_REGULARITY = ModelConfig(
    dimension=2, torus_length=TWO_PI, sites_per_dim=8, nmax=3,
    form_factor=POLARON, K=1.45, lambda_list=(1.5, 2.1, 2.5, 3.1, 3.5, 3.9),
)
D1_REGULARITY = ModelConfig(
    dimension=1, torus_length=TWO_PI, sites_per_dim=256, nmax=2,
    form_factor=SMOOTH, K=1.5,
    lambda_list=(4.0, 6.0, 8.5, 12.5, 18.5, 27.5, 40.0, 59.0, 87.0, 127.5),
)


def _regularity_detail(rep):
    return ", ".join(
        f"{r.key} slope {r.measured:.3f} ({rep.extras[r.key]['classification']}, want {rep.extras[r.key]['criterion']})"
        for r in rep.records
    )


def test_c08_regularity_d2(criterion):
    rep = exp_regularity(D2_REGULARITY, s_list=(1.0, 1.25, 1.5, 1.75))
    want = {"1": "bounded", "1.25": "bounded", "1.5": "divergent", "1.75": "divergent"}
    got = rep.extras["curves"]
    ok = criterion("8a", "regularity dichotomy, d=2 polaron L=8", got == want and rep.verdict, _regularity_detail(rep))
    assert ok


def test_c08_regularity_d1(criterion):
    rep = exp_regularity(D1_REGULARITY, s_list=(1.0, 1.25, 1.5, 1.75))
    want = {"1": "bounded", "1.25": "bounded", "1.5": "bounded", "1.75": "divergent"}
    got = rep.extras["curves"]
    ok = criterion("8b", "regularity threshold, d=1 smooth power", got == want and rep.verdict, _regularity_detail(rep))
    assert ok


# ---- 9 ----------------------------------------------------------------------------
CORE_CONFIG = ModelConfig(
    dimension=1, torus_length=TWO_PI, sites_per_dim=64, nmax=8,
    form_factor=SMOOTH, K=1.5, lambda_list=(2.5,),
)


def test_c09_coherent_core(criterion):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fock.TruncationWarning)
        rep = exp_coherent_core(CORE_CONFIG, f_scale=0.3)
    runs = rep.extras["runs"]
    assert set(runs) == {"nmax=8", "nmax=16"}
    ok = criterion(9, "coherent-core residual", rep.verdict,
                   f"residual {runs['nmax=8']['residual']:.2e} -> {runs['nmax=16']['residual']:.2e}, "
                   f"mode identity {runs['nmax=8']['mode_identity']:.1e}")
    assert ok


# ---- 10 ---------------------------------------------------------------------------
def test_c10_d3_scalar_oracles(criterion):
    K, lam = 2.0, 9.5
    grid = build_grid(ModelConfig(
        dimension=3, torus_length=8 * math.pi, sites_per_dim=80, nmax=0,
        form_factor=POLARON, K=K, lambda_list=(lam,),
    ))

    def F_C(r):
        return r / (2 * (1 + r * r)) - 1.5 * math.atan(r)

    def F_kB(r):
        return math.atan(r) / 2 - r / (2 * (1 + r * r))

    exact = {
        "D": 4 * math.pi * (1 / K - 1 / lam),
        "C": 4 * math.pi * (F_C(lam) - F_C(K)),
        "kB": 4 * math.pi * (F_kB(lam) - F_kB(K)),
    }
    got = {
        "D": scalar_D(K, grid) - scalar_D(lam, grid),
        "C": scalar_C_KL(K, lam, grid),
        "kB": kB_norm_sq(K, lam, grid),
    }
    rel = {k: abs(got[k] - exact[k]) / abs(exact[k]) for k in exact}
    ok = criterion(10, "d=3 closed-form oracles within 2%", max(rel.values()) <= 0.02,
                   ", ".join(f"{k} {v:.2%}" for k, v in rel.items()))
    assert ok


# ---- 11 ---------------------------------------------------------------------------
def test_c11_determinism(criterion, tmp_path):
    cfg = tmp_path / "ref.cfg"
    cfg.write_text(
        "dimension = 1\ntorus_length = 6.283185307179586\nsites_per_dim = 8\nnmax = 3\n"
        "form_factor = smooth_power\nbeta = 0.125\nK = 1.5\nlambda_list = 2.5, 3.5\nseed = 3\n"
    )
    names = ("form_bound", "dynamics", "regularity")
    for d in ("a", "b"):
        cli.run(["run", "--config", str(cfg), "--exp", ",".join(names), "--out", str(tmp_path / d)])
    same = all(
        (tmp_path / "a" / f"{n}.{ext}").read_bytes() == (tmp_path / "b" / f"{n}.{ext}").read_bytes()
        for n in names for ext in ("json", "csv")
    )
    ok = criterion(11, "byte-identical reports", same, ", ".join(names))
    assert ok
