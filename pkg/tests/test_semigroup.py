"""Discrete semigroup: spectral calculus, smoothing fits, Duhamel form."""

import numpy as np
import pytest

from memslab.grid import GridSpec, ScalarField, discrete_norm, embed_interior
from memslab.dynamics import SimConfig, run
from memslab.semigroup import (
    apply_semigroup,
    delta_source,
    duhamel_reconstruct,
    make_operator,
    smoothing_rate_fit,
)

G1 = GridSpec(dim_D=1, nx=48, n_eta=9)


@pytest.fixture(scope="module")
def handle():
    return make_operator(G1, beta=1.0, tau=0.0)


def l2_diff(grid, a, b):
    return discrete_norm(ScalarField(grid, a - b, "none"), "L2")


def test_time_zero_is_identity(handle, rng):
    w = embed_interior(G1, rng.standard_normal(G1.nx), "clamped")
    out = apply_semigroup(w, 0.0, handle)
    assert np.all(out.values == w.values)
    with pytest.raises(ValueError):
        apply_semigroup(w, -0.1, handle)


def test_eigenvector_decay(handle):
    vals, vecs = handle.eigensystem()
    k = 3
    w = embed_interior(G1, vecs[:, k], "clamped")
    t = 1e-4
    out = apply_semigroup(w, t, handle)
    assert np.abs(out.values - np.exp(-t * vals[k]) * w.values).max() < 1e-12


def test_semigroup_property(handle, rng):
    w = embed_interior(G1, rng.standard_normal(G1.nx), "clamped")
    one = apply_semigroup(apply_semigroup(w, 2e-4, handle), 5e-4, handle)
    two = apply_semigroup(w, 7e-4, handle)
    assert np.abs(one.values - two.values).max() < 1e-10


def test_l2_contractivity(handle, rng):
    for _ in range(5):
        w = embed_interior(G1, rng.standard_normal(G1.nx), "clamped")
        n0 = discrete_norm(w, "L2")
        for t in (1e-5, 1e-3, 1e-1):
            assert discrete_norm(apply_semigroup(w, t, handle), "L2") <= n0 + 1e-12


def test_operator_norm_decay_rate(handle):
    # ||e^{-tA}||_{L2->L2} = e^{-t mu_min} on the spectral path
    vals, vecs = handle.eigensystem()
    t = 2e-3
    w = embed_interior(G1, vecs[:, 0], "clamped")
    out = apply_semigroup(w, t, handle)
    ratio = discrete_norm(out, "L2") / discrete_norm(w, "L2")
    assert abs(ratio - np.exp(-t * handle.mu_min)) < 1e-10


def test_crank_nicolson_path_matches_spectral():
    # force the CN branch by a large grid? cheaper: compare CN on the same
    # operator via a temporary low eigen limit
    import memslab.semigroup as sg

    w = embed_interior(G1, np.sin(np.pi * G1.xs[1:-1]), "clamped")
    t = 5e-4
    exact = apply_semigroup(w, t, make_operator(G1, 1.0, 0.0))
    old = sg.EIGEN_LIMIT
    sg.EIGEN_LIMIT = 1
    try:
        cn = apply_semigroup(w, t, make_operator(G1, 1.0, 0.0))
    finally:
        sg.EIGEN_LIMIT = old
    assert l2_diff(G1, cn.values, exact.values) < 1e-3 * discrete_norm(exact, "L2")


def test_delta_source_has_unit_mass():
    for g in (G1, GridSpec(dim_D=2, nx=16, ny=16, n_eta=9)):
        assert abs(discrete_norm(delta_source(g), "L1") - 1.0) < 1e-12


def test_smoothing_fit_negative_and_stable(handle):
    fit = smoothing_rate_fit(handle)
    assert fit.theta < 0.0
    assert fit.theta_stderr < abs(fit.theta)
    # the L1 -> L2 ratio decays monotonically over the fitted decade
    assert np.all(np.diff(fit.norms) < 0)
    # refined grid, same decade: fitted slope moves by well under 20%
    fine = make_operator(GridSpec(dim_D=1, nx=97, n_eta=9), 1.0, 0.0)
    fit2 = smoothing_rate_fit(fine, t_range=(fit.times[0], fit.times[-1]))
    assert abs(fit2.theta - fit.theta) / abs(fit.theta) < 0.2


def test_smoothing_fit_tau_shifts_exponent(handle):
    # growing tau moves the fitted slope from the fourth-order reference
    # (-d/8 = -0.125 in 1D, and the measured beta-only value is -0.129 on
    # this decade) toward the faster second-order heat decay -d/4
    thetas = []
    for tau in (0.0, 10.0, 100.0):
        h = make_operator(G1, 1.0, tau)
        thetas.append(smoothing_rate_fit(h, t_range=(2e-4, 2e-3)).theta)
    assert abs(thetas[0] - (-0.125)) < 0.05
    assert thetas[0] > thetas[1] > thetas[2]
    assert thetas[2] < -0.2


def test_smoothing_fit_rejects_unresolved_range(handle):
    with pytest.raises(ValueError, match="resolved"):
        smoothing_rate_fit(handle, t_range=(1e-9, 1e-8))
    with pytest.raises(ValueError):
        smoothing_rate_fit(handle, target_norm="L7")


def test_duhamel_matches_pure_semigroup_when_unforced(handle):
    cfg = SimConfig(grid=G1, lam=0.0, a=0.0, T0=0.05, dt0=1e-3, u0="bump:0.4")
    rec = run(cfg, store_forcings=True)
    recon = duhamel_reconstruct(rec, handle)
    direct = apply_semigroup(
        embed_interior(G1, rec.u0_interior, "clamped"), rec.columns["t"][-1], handle
    )
    stepped = embed_interior(G1, rec.final_interior, "clamped")
    assert l2_diff(G1, recon.values, direct.values) < 1e-12
    # reconstruction differs from the stepped run only by the scheme's O(dt)
    assert l2_diff(G1, recon.values, stepped.values) < 5e-2 * discrete_norm(direct, "L2") + 1e-8


def test_duhamel_requires_stored_forcings(handle):
    cfg = SimConfig(grid=G1, lam=0.0, T0=0.02, dt0=1e-2)
    rec = run(cfg)
    with pytest.raises(ValueError, match="store_forcings"):
        duhamel_reconstruct(rec, handle)


def test_single_step_duhamel_consistency(handle):
    # One IMEX step against the one-term Duhamel sum, Taylor-compared at
    # dt in {1e-3, 5e-4}.  The homogeneous part agrees to O(dt^2) once the
    # initial state is spectrally prepared (a short semigroup flight).  Any
    # model-generated forcing, however, carries a stiff tail in the clamped
    # eigenbasis (it does not vanish on the boundary ring), and the modes
    # near mu ~ 1/dt contribute at first order: with the frozen nonlocal
    # coefficient as forcing, the measured defect halves with dt.
    from memslab.dynamics import _Stepper
    from memslab.identities import bump_deflection

    cfg = SimConfig(grid=G1, lam=0.0, a=1.0, T0=1.0, u0="zero")
    stepper = _Stepper(cfg)
    u0v = apply_semigroup(bump_deflection(G1, 0.3).v, 2e-2, handle).interior()
    q0 = stepper.dirichlet_energy(u0v)
    h0 = cfg.a * q0 * (stepper.L @ u0v)

    errs_hom, errs_forced = [], []
    for dt in (1e-3, 5e-4):
        hom = stepper.implicit_solve(dt, u0v)
        hom_exact = apply_semigroup(embed_interior(G1, u0v, "clamped"), dt, handle)
        errs_hom.append(np.abs(hom - hom_exact.interior()).max())
        stepped = stepper.implicit_solve(dt, u0v + dt * h0)
        duh = hom_exact.interior() + dt * h0
        errs_forced.append(np.abs(stepped - duh).max())
    assert errs_hom[1] < 0.35 * errs_hom[0]       # O(dt^2): quartering
    assert errs_forced[1] < 0.55 * errs_forced[0]  # forcing tail: halving
