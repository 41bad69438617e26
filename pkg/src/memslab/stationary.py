"""Stationary deflections and continuation in lambda toward the pull-in fold.

The stationary problem  beta B u - (tau + a q(u)) L u + lambda g(u) = 0  is
solved by a damped Newton iteration whose Jacobian action is obtained by
forward-differencing the residual (the forcing g passes through an elliptic
solve, so no exact linearization is available).  The Krylov solve for each
Newton step is GMRES preconditioned with the frozen-coefficient operator

    M = beta B - tau L - 2 lambda diag(g / w),

which captures the destabilizing local derivative of the forcing
(g ~ gamma^2 ~ 1/w^2 gives dg/du ~ -2 g / w) and keeps the Krylov iteration
count small on the stable branch.

Continuation is natural (previous solution as the initial guess) with step
halving on failure; the loop terminates once the gap between the last
converged lambda and the smallest failed lambda is below 1e-4 * lambda_start,
which *is* the reported pull-in bracket.  The unstable upper branch is out of
scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import ScalarField, embed_interior
from .potential import DeflectionState, GeometryError, solve_traces
from .dynamics import SimConfig, _Stepper

#: L2 residual below which a Newton solve counts as converged
NEWTON_TOL = 1e-8

NEWTON_MAX_ITER = 50

#: forward-difference step scale for Jacobian-vector products
JVP_STEP = 1e-6


@dataclass
class BranchPoint:
    """One point of the stationary branch."""

    lam: float
    u: Optional[DeflectionState]
    sup_defl: float
    min_gap: float
    newton_iters: int
    converged: bool
    residual_l2: float


class _StationaryProblem:
    """Residual evaluation and Newton machinery on interior vectors."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.stepper = _Stepper(cfg)
        self.cell = self.stepper.cell

    def state(self, vec: np.ndarray) -> DeflectionState:
        return DeflectionState(embed_interior(self.cfg.grid, vec, "clamped"))

    def residual(self, vec: np.ndarray, lam: float):
        """F(u) and the forcing values (interior); raises GeometryError near touchdown."""
        cfg = self.cfg
        st = self.state(vec)
        _, traces, _ = solve_traces(st, cfg.epsilon)
        g_int = (traces.g.values[1:-1].copy() if cfg.grid.dim_D == 1
                 else traces.g.values[1:-1, 1:-1].ravel())
        q = self.stepper.dirichlet_energy(vec)
        F = cfg.beta * (self.stepper.B @ vec) - (cfg.tau + cfg.a * q) * (self.stepper.L @ vec) \
            + lam * g_int
        return F, g_int

    def l2(self, vec: np.ndarray) -> float:
        return float(np.sqrt(self.cell * np.dot(vec, vec)))

    def preconditioner(self, vec: np.ndarray, g_int: np.ndarray, lam: float):
        w_int = 1.0 + vec
        M = (self.cfg.beta * self.stepper.B - self.cfg.tau * self.stepper.L
             - 2.0 * lam * sp.diags(g_int / w_int)).tocsc()
        lu = spla.splu(M)
        return spla.LinearOperator(M.shape, lu.solve)

    def newton(self, u_init: np.ndarray, lam: float) -> BranchPoint:
        u = u_init.copy()
        try:
            F, g_int = self.residual(u, lam)
        except GeometryError:
            return BranchPoint(lam, None, np.nan, np.nan, 0, False, np.inf)
        res = self.l2(F)
        for it in range(1, NEWTON_MAX_ITER + 1):
            if res <= NEWTON_TOL:
                st = self.state(u)
                return BranchPoint(lam, st, float(np.abs(st.v.values).max()),
                                   st.min_gap, it - 1, True, res)
            norm_u = np.linalg.norm(u)

            def jvp(p):
                norm_p = np.linalg.norm(p)
                if norm_p == 0.0:
                    return np.zeros_like(p)
                delta = JVP_STEP * (1.0 + norm_u) / norm_p
                try:
                    F_pert, _ = self.residual(u + delta * p, lam)
                except GeometryError:
                    F_pert, _ = self.residual(u - delta * p, lam)
                    return (F - F_pert) / delta
                return (F_pert - F) / delta

            J = spla.LinearOperator((u.size, u.size), matvec=jvp)
            M = self.preconditioner(u, g_int, lam)
            p, info = spla.gmres(J, -F, M=M, rtol=1e-6, atol=0.0,
                                 restart=30, maxiter=8)
            if info != 0 and self.l2(F + np.asarray(J @ p)) > 0.9 * res:
                return BranchPoint(lam, None, np.nan, np.nan, it, False, res)

            # damping: halve until the residual actually decreases
            alpha = 1.0
            improved = False
            for _ in range(12):
                try:
                    F_new, g_new = self.residual(u + alpha * p, lam)
                except GeometryError:
                    alpha *= 0.5
                    continue
                res_new = self.l2(F_new)
                if res_new < res:
                    u = u + alpha * p
                    F, g_int, res = F_new, g_new, res_new
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                return BranchPoint(lam, None, np.nan, np.nan, it, False, res)
        if res <= NEWTON_TOL:
            st = self.state(u)
            return BranchPoint(lam, st, float(np.abs(st.v.values).max()),
                               st.min_gap, NEWTON_MAX_ITER, True, res)
        return BranchPoint(lam, None, np.nan, np.nan, NEWTON_MAX_ITER, False, res)


def stationary_residual(u: DeflectionState, cfg: SimConfig, lam: Optional[float] = None) -> ScalarField:
    """Residual field beta B u - (tau + a q) L u + lambda g(u) (zero boundary)."""
    problem = _StationaryProblem(cfg)
    F, _ = problem.residual(u.v.interior(), cfg.lam if lam is None else lam)
    return embed_interior(cfg.grid, F, "none")


def newton_solve(u_init: DeflectionState, lam: float, cfg: SimConfig) -> BranchPoint:
    """Damped Newton-Krylov solve for a stationary deflection at ``lam``."""
    return _StationaryProblem(cfg).newton(u_init.v.interior(), lam)


@dataclass
class ContinuationResult:
    points: list                       # converged BranchPoints, lambda increasing
    lambda_ok: float                   # largest converged lambda
    lambda_fail: float                 # smallest failed lambda above it
    n_failures: int

    @property
    def bracket(self) -> tuple:
        return (self.lambda_ok, self.lambda_fail)

    @property
    def bracket_mid(self) -> float:
        return 0.5 * (self.lambda_ok + self.lambda_fail)


def continue_branch(lambda_start: float, dlambda: float, cfg: SimConfig,
                    max_solves: int = 400) -> ContinuationResult:
    """Natural continuation from lambda_start until the fold is bracketed.

    The first solve (from the flat state) must converge, otherwise the
    parameters are rejected outright.  On failure the step is halved; the
    loop stops when the bracket [lambda_ok, lambda_fail] is narrower than
    1e-4 * lambda_start.
    """
    if lambda_start <= 0 or dlambda <= 0:
        raise ValueError("lambda_start and dlambda must be positive")
    problem = _StationaryProblem(cfg)
    zero = np.zeros(cfg.grid.interior_size)
    first = problem.newton(zero, lambda_start)
    if not first.converged:
        raise RuntimeError(
            f"continuation rejected: no convergence at lambda_start={lambda_start}"
        )
    points = [first]
    lam_ok = lambda_start
    lam_fail = None
    width_target = 1e-4 * lambda_start
    step = dlambda
    n_failures = 0
    solves = 1
    while solves < max_solves:
        if lam_fail is not None:
            if lam_fail - lam_ok <= width_target:
                break
            step = min(step, 0.5 * (lam_fail - lam_ok))
        lam_try = lam_ok + step
        bp = problem.newton(points[-1].u.v.interior(), lam_try)
        solves += 1
        if bp.converged:
            points.append(bp)
            lam_ok = lam_try
        else:
            lam_fail = lam_try if lam_fail is None else min(lam_fail, lam_try)
            n_failures += 1
            step *= 0.5
    if lam_fail is None:
        raise RuntimeError(
            f"no fold found: branch still converging at lambda={lam_ok} "
            f"after {solves} solves"
        )
    return ContinuationResult(points=points, lambda_ok=lam_ok,
                              lambda_fail=lam_fail, n_failures=n_failures)
