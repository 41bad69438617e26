"""Stationary solves and fold-bracketing continuation (1D beam scale)."""

import numpy as np
import pytest

from memslab.grid import GridSpec, ScalarField, embed_interior
from memslab.dynamics import SimConfig, run
from memslab.identities import bump_deflection, rellich_residual, energy_identity_residual
from memslab.potential import DeflectionState, solve_traces
from memslab.stationary import (
    BranchPoint,
    continue_branch,
    newton_solve,
    stationary_residual,
)

G1 = GridSpec(dim_D=1, nx=32, n_eta=13)
CFG = SimConfig(grid=G1, beta=1.0, tau=0.0, a=0.0, epsilon=0.3, lam=1.0)


def zero_state():
    return DeflectionState(ScalarField(G1, np.zeros(G1.shape_D), "clamped"))


def l2(vec):
    return float(np.sqrt(G1.hx * np.dot(vec, vec)))


def test_residual_vanishes_for_unforced_zero():
    r = stationary_residual(zero_state(), CFG, lam=0.0)
    assert np.all(r.values == 0.0)


def test_residual_reduces_to_linear_part_when_lambda_zero():
    from memslab.grid import bilaplacian_matrix

    v = bump_deflection(G1, 0.4)
    r = stationary_residual(v, CFG, lam=0.0)
    expected = bilaplacian_matrix(G1) @ v.v.interior()
    assert np.abs(r.interior() - expected).max() < 1e-9


def test_newton_at_lambda_zero_converges_immediately():
    bp = newton_solve(zero_state(), 0.0, CFG)
    assert bp.converged
    assert bp.newton_iters <= 1
    assert bp.sup_defl < 1e-12


def test_newton_small_lambda_from_flat():
    bp = newton_solve(zero_state(), 0.5, CFG)
    assert bp.converged
    assert bp.residual_l2 <= 1e-8
    assert bp.min_gap > 0.5
    assert bp.u.v.values[G1.nx // 2 + 1] < 0.0    # deflects toward the ground plate


def test_converged_point_satisfies_trace_identities():
    bp = newton_solve(zero_state(), 1.0, CFG)
    assert bp.converged
    shared = solve_traces(bp.u, CFG.epsilon)
    assert rellich_residual(bp.u, CFG.epsilon, shared=shared).passed
    assert energy_identity_residual(bp.u, CFG.epsilon, shared=shared).passed


def test_stationary_point_is_imex_fixed_point():
    # a discrete stationary point is an exact fixed point of the IMEX map, so
    # the evolution started there stays put over the whole horizon
    bp = newton_solve(zero_state(), 1.0, CFG)
    cfg = SimConfig(grid=G1, beta=1.0, tau=0.0, a=0.0, epsilon=0.3, lam=1.0,
                    T0=1.0, dt0=2e-2)
    rec = run(cfg, u0_state=bp.u)
    assert rec.terminal == "completed_T0"
    drift = l2(rec.final_interior - bp.u.v.interior())
    assert drift < 1e-3


def test_newton_fails_beyond_fold():
    # far beyond the pull-in value the Newton iteration from the flat state
    # must not converge; the failure signal is what the continuation uses
    bp = newton_solve(zero_state(), 50.0, CFG)
    assert not bp.converged


def test_continuation_brackets_fold():
    res = continue_branch(0.4, 0.4, CFG)
    assert len(res.points) >= 10
    lams = [p.lam for p in res.points]
    sup = [p.sup_defl for p in res.points]
    assert all(np.diff(lams) > 0)
    assert all(np.diff(sup) > -1e-12)
    assert res.lambda_fail - res.lambda_ok <= 1e-4 * 0.4 + 1e-15
    assert res.lambda_ok == lams[-1]
    # every reported point is converged and keeps a positive gap
    assert all(p.converged and p.min_gap > 0 for p in res.points)


def test_continuation_rejects_bad_start():
    with pytest.raises(RuntimeError, match="lambda_start"):
        continue_branch(50.0, 1.0, CFG)
    with pytest.raises(ValueError):
        continue_branch(-1.0, 0.4, CFG)
