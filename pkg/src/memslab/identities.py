"""Integral identities and inequalities of the model, checked as residuals.

This is the oracle layer of the artifact: every check compares two
independently computed quantities (a trace-side integral against a
bottom-side integral, an energy against its boundary representation, a norm
against a closed-form bound) and reports a scaled residual.  Equality checks
converge to zero under grid refinement; inequality checks must hold outright
for every admissible deflection, so a failure there is a build-breaking
defect signal rather than a tolerance issue.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    GridSpec,
    ScalarField,
    field_from_function,
    gradient_components,
    integrate,
    mechanical_energy,
)
from .potential import DeflectionState, PotentialField, forcing_l1, solve_traces

#: relative-tolerance constant for equality identities on clamped fields:
#: tol = C * (hx^2 + h_eta^2).  Calibrated once on the polynomial-bump corpus
#: (worst case c = 0.8 at the coarsest grid gives residual/scale about
#: 0.7 * (hx^2 + h_eta^2)) and frozen.
C_IDENTITY = 8.0

#: equality tolerance for admissible fields with nonzero boundary slope:
#: tol = C * (hx + h_eta).  Such deflections tilt the moving face into the
#: lateral wall, the potential picks up an edge singularity along the contact
#: ring, and the measured residual order degrades to about 1.35; a
#: first-order budget keeps the margin growing under refinement.
C_IDENTITY_EDGE = 2.0

#: barrier violations scale like h^2; calibrated on the bump corpus where the
#: measured violation is zero, so the unit constant leaves ample slack.
C_BARRIER = 1.0

#: slack for inequalities that the analysis proves with O(1) margin
INEQ_TOL = 1e-8

#: tolerance for the flat (constant-deflection) cases, which are exact
FLAT_TOL = 1e-10


@dataclass
class IdentityReport:
    """Outcome of one identity/inequality check.

    ``kind`` is "equality" (residual = |lhs - rhs|) or "upper_bound"
    (residual = max(lhs - rhs, 0), i.e. lhs must not exceed rhs).  In both
    cases the check passes iff residual / scale <= tol with
    scale = max(|lhs|, |rhs|, 1), which keeps the ratio meaningful when both
    sides vanish.
    """

    name: str
    lhs: float
    rhs: float
    tol: float
    kind: str = "equality"
    residual: float = field(init=False)
    scale: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        if self.kind not in ("equality", "upper_bound"):
            raise ValueError(f"unknown report kind {self.kind!r}")
        if self.kind == "equality":
            self.residual = abs(self.lhs - self.rhs)
        else:
            self.residual = max(self.lhs - self.rhs, 0.0)
        self.scale = max(abs(self.lhs), abs(self.rhs), 1.0)
        self.passed = self.residual / self.scale <= self.tol

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "scale": self.scale,
            "tol": self.tol,
            "pass": self.passed,
        }


def default_identity_tol(grid: GridSpec, clamped: bool = True) -> float:
    if clamped:
        return C_IDENTITY * (grid.hx**2 + grid.h_eta**2)
    return C_IDENTITY_EDGE * (grid.hx + grid.h_eta)


def _shared_traces(v: DeflectionState, epsilon: float, shared=None):
    """Reuse a (PotentialField, TraceData, E_e) triple when the caller has one."""
    if shared is not None:
        return shared
    return solve_traces(v, epsilon)


def _grad_sq(v: DeflectionState) -> np.ndarray:
    return sum(d**2 for d in gradient_components(v.v))


# ---------------------------------------------------------------------------
# equality identities
# ---------------------------------------------------------------------------

def rellich_residual(v: DeflectionState, epsilon: float, tol: float = None,
                     shared=None) -> IdentityReport:
    """Trace identity linking the moving face to the fixed bottom face:

        int_D (1 + eps^2 |grad v|^2)(gamma^2 - 2 gamma) dx
            = int_D (gamma_b^2 - 2 gamma_b) dx.
    """
    g = v.grid
    _, tr, _ = _shared_traces(v, epsilon, shared)
    gam = tr.gamma.values
    gam_b = tr.gamma_b.values
    lhs = integrate((1.0 + epsilon**2 * _grad_sq(v)) * (gam**2 - 2.0 * gam), g)
    rhs = integrate(gam_b**2 - 2.0 * gam_b, g)
    if tol is None:
        tol = default_identity_tol(g)
    return IdentityReport("rellich", lhs, rhs, tol)


def energy_identity_residual(v: DeflectionState, epsilon: float, tol: float = None,
                             shared=None) -> IdentityReport:
    """Boundary representation of the field energy:

        E_e(v) = |D| - int_D v (1 + eps^2 |grad v|^2) gamma dx.
    """
    g = v.grid
    _, tr, Ee = _shared_traces(v, epsilon, shared)
    rhs = g.area - integrate(v.v.values * (1.0 + epsilon**2 * _grad_sq(v)) * tr.gamma.values, g)
    if tol is None:
        tol = default_identity_tol(g)
    return IdentityReport("energy_identity", Ee, rhs, tol)


# ---------------------------------------------------------------------------
# inequalities (hold unconditionally for admissible deflections)
# ---------------------------------------------------------------------------

def l1_bound_check(v: DeflectionState, epsilon: float, tol: float = INEQ_TOL,
                   shared=None) -> IdentityReport:
    """Forcing bound  ||g(v)||_L1 <= (4 + 2/kappa^2)|D| + 4 eps^2 ||grad v||_L2^2,

    with kappa the certified gap floor of v.
    """
    g = v.grid
    _, tr, _ = _shared_traces(v, epsilon, shared)
    lhs = forcing_l1(tr)
    grad_l2_sq = integrate(_grad_sq(v), g)
    rhs = (4.0 + 2.0 / v.kappa**2) * g.area + 4.0 * epsilon**2 * grad_l2_sq
    return IdentityReport("l1_forcing_bound", lhs, rhs, tol, kind="upper_bound")


def coercivity_check(v: DeflectionState, *, beta: float, tau: float, a: float,
                     lam: float, epsilon: float, tol: float = INEQ_TOL,
                     shared=None) -> IdentityReport:
    """Total-energy lower bound

        E(v) >= E_m(v) - 3 lambda eps^2 ||grad v||_L2^2
                       - lambda |D| (4 + 1/(2 kappa^2)).

    Reported as: bound_expression <= E(v).
    """
    g = v.grid
    _, _, Ee = _shared_traces(v, epsilon, shared)
    Em = mechanical_energy(v.v, beta, tau, a)
    E = Em - lam * Ee
    grad_l2_sq = integrate(_grad_sq(v), g)
    bound = Em - 3.0 * lam * epsilon**2 * grad_l2_sq - lam * g.area * (4.0 + 0.5 / v.kappa**2)
    return IdentityReport("coercivity", bound, E, tol, kind="upper_bound")


def barrier_check(pf: PotentialField, tol: float = None) -> IdentityReport:
    """Two-sided barrier in mapped coordinates:

        0 <= phi(x, eta) <= min{1, eta w(x) / kappa},

    reported as the maximum violation over all cylinder nodes.
    """
    g = pf.phi.grid
    w = 1.0 + pf.v_ref.v.values
    if g.dim_D == 1:
        upper = np.minimum(1.0, w[:, None] * g.etas[None, :] / pf.v_ref.kappa)
    else:
        upper = np.minimum(1.0, w[:, :, None] * g.etas[None, None, :] / pf.v_ref.kappa)
    viol_hi = float((pf.phi.values - upper).max())
    viol_lo = float((-pf.phi.values).max())
    violation = max(viol_hi, viol_lo, 0.0)
    if tol is None:
        tol = max(C_BARRIER * g.hx**2, FLAT_TOL)
    return IdentityReport("barrier", violation, 0.0, tol, kind="upper_bound")


# ---------------------------------------------------------------------------
# deflection corpus
# ---------------------------------------------------------------------------

def bump_deflection(grid: GridSpec, depth: float) -> DeflectionState:
    """Clamped polynomial bump -depth * prod_axis (1 - x_i^2)^2 (unit box scaled)."""
    lo, hi = grid.bounds[0]
    cx, rx = 0.5 * (lo + hi), 0.5 * (hi - lo)
    if grid.dim_D == 1:
        fn = lambda x: -depth * (1 - ((x - cx) / rx) ** 2) ** 2
    else:
        lo2, hi2 = grid.bounds[1]
        cy, ry = 0.5 * (lo2 + hi2), 0.5 * (hi2 - lo2)
        fn = lambda X, Y: (
            -depth * (1 - ((X - cx) / rx) ** 2) ** 2 * (1 - ((Y - cy) / ry) ** 2) ** 2
        )
    return DeflectionState(field_from_function(grid, fn, "clamped"))


def constant_deflection(grid: GridSpec, value: float) -> DeflectionState:
    """Constant deflection; non-clamped, for potential-only tests."""
    return DeflectionState(
        ScalarField(grid, np.full(grid.shape_D, value), "none"), zero_boundary=False
    )


def random_sine_deflection(grid: GridSpec, rng: np.random.Generator,
                           kappa_target: float, modes: int = 4) -> DeflectionState:
    """Smooth random field from a truncated sine series, rescaled so its
    certified gap floor is exactly ``kappa_target``.

    The series vanishes on the boundary (but is not clamped), so these fields
    exercise the potential/identity layer over the admissible set.
    """
    if not 0.0 < kappa_target < 1.0:
        raise ValueError("kappa_target must lie in (0, 1)")
    lo, hi = grid.bounds[0]
    sx = (grid.xs - lo) / (hi - lo)
    if grid.dim_D == 1:
        v = np.zeros(grid.shape_D)
        for m in range(1, modes + 1):
            v += rng.standard_normal() / m**2 * np.sin(m * np.pi * sx)
    else:
        lo2, hi2 = grid.bounds[1]
        sy = (grid.ys - lo2) / (hi2 - lo2)
        v = np.zeros(grid.shape_D)
        for m in range(1, modes + 1):
            for n in range(1, modes + 1):
                amp = rng.standard_normal() / (m**2 + n**2)
                v += amp * np.outer(np.sin(m * np.pi * sx), np.sin(n * np.pi * sy))
    if v.min() >= 0.0:
        v = -v
    v *= (1.0 - kappa_target) / (-v.min())
    return DeflectionState(ScalarField(grid, v, "none"))


def corpus(grid: GridSpec, seed: int = 1234, n_random: int = 5):
    """The fixed deflection corpus: flat states, polynomial bumps, seeded
    random sine fields.  Returns (name, DeflectionState, clamped?) triples.
    """
    rng = np.random.default_rng(seed)
    entries = [
        ("zero", DeflectionState(field_from_function(grid, (lambda x: 0.0 * x)
                                                     if grid.dim_D == 1 else
                                                     (lambda X, Y: 0.0 * X), "clamped")), True),
        ("const:-0.5", constant_deflection(grid, -0.5), False),
    ]
    for depth in (0.3, 0.5, 0.8):
        entries.append((f"bump:{depth}", bump_deflection(grid, depth), True))
    for i in range(n_random):
        kappa = float(rng.uniform(0.1, 0.9))
        entries.append((f"sine:{i}", random_sine_deflection(grid, rng, kappa), False))
    return entries


# ---------------------------------------------------------------------------
# the verify suite
# ---------------------------------------------------------------------------

def run_suite(grid: GridSpec, epsilon: float, *, beta: float = 1.0, tau: float = 0.0,
              a: float = 0.0, lam: float = 1.0, seed: int = 1234,
              corpus_name: str = "default"):
    """Evaluate every identity/inequality over the corpus; returns reports.

    Each corpus entry is solved once and the solve is shared by all five
    checks.  ``corpus_name`` "quick" restricts to the flat states and one
    bump (used for smoke runs); "default" is the full fixed corpus.
    """
    if corpus_name not in ("default", "quick"):
        raise ValueError(f"unknown corpus {corpus_name!r}")
    entries = corpus(grid, seed=seed)
    if corpus_name == "quick":
        entries = [e for e in entries if e[0] in ("zero", "const:-0.5", "bump:0.5")]

    reports = []
    for name, v, clamped in entries:
        shared = solve_traces(v, epsilon)
        flat = name in ("zero", "const:-0.5")
        tol_eq = FLAT_TOL if flat else default_identity_tol(grid, clamped)
        for rep in (
            rellich_residual(v, epsilon, tol=tol_eq, shared=shared),
            energy_identity_residual(v, epsilon, tol=tol_eq, shared=shared),
            l1_bound_check(v, epsilon, shared=shared),
            coercivity_check(v, beta=beta, tau=tau, a=a, lam=lam, epsilon=epsilon,
                             shared=shared),
            barrier_check(shared[0], tol=FLAT_TOL if flat else None),
        ):
            rep.name = f"{rep.name}[{name}]"
            reports.append(rep)
    return reports
