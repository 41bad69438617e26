"""Electrostatic potential in the deforming gap, solved on a fixed cylinder.

The gap region {(x, z) : -1 < z < v(x)} is mapped onto the reference cylinder
D x (0, 1) by eta = (1 + z) / w(x) with w = 1 + v.  Writing the potential as
phi(x, eta) = psi(x, -1 + eta * w(x)), the rescaled Laplace equation
eps^2 lap_x psi + d_zz psi = 0 becomes (chain rule, derived by hand):

    eps^2 lap_x phi
      - 2 eps^2 eta (grad w / w) . grad_x(d_eta phi)
      + (eps^2 eta^2 |grad w|^2 / w^2 + 1 / w^2) d_eta^2 phi
      + eps^2 eta (2 |grad w|^2 - w lap w) / w^2 d_eta phi  =  0,

with phi = eta on every face of the cylinder boundary (bottom 0, top 1,
lateral eta).  All derivative coefficients are evaluated from the stored
deflection by centered differences; the mixed term uses centered cross
differences.  For constant deflections every metric coefficient vanishes and
phi = eta solves the discrete system exactly, which pins the whole pipeline.

Traces are recovered from one-sided second-order eta differences:
gamma = d_eta phi(., 1) / w and gamma_b = d_eta phi(., 0) / w.  The forcing is
never obtained by differencing phi horizontally on the moving face; instead it
uses the boundary relation grad psi(x, v(x)) = -gamma grad v, giving
g = (1 + eps^2 |grad v|^2) gamma^2 node-wise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    GridSpec,
    ScalarField,
    gradient_components,
    integrate,
    trapezoid_weights,
)

#: unknown count up to which the transformed system is solved directly
DIRECT_SOLVE_LIMIT = 70_000

#: relative-residual target of every potential solve
SOLVE_RTOL = 1e-10


class GeometryError(RuntimeError):
    """The deflection has (numerically) touched down: min(1 + v) <= 0."""


class SolverError(RuntimeError):
    """Linear solver failed to reach the residual target."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass
class DeflectionState:
    """Admissible plate deflection with a certified gap floor.

    ``kappa`` is the largest floor in (0, 1] with v >= -1 + kappa node-wise;
    it is certified from the data when not supplied, so inequality checks
    downstream are never vacuous.  ``zero_boundary`` may be relaxed for the
    constant-deflection cases used in potential-only tests.
    """

    v: ScalarField
    kappa: float = None
    zero_boundary: bool = True

    def __post_init__(self):
        if self.v.on_cylinder:
            raise ValueError("deflection must live on the plate grid")
        gap = 1.0 + self.v.values
        min_gap = float(gap.min())
        if min_gap <= 0.0:
            raise GeometryError(f"gap floor {min_gap:.3e} <= 0 (touchdown)")
        certified = min(min_gap, 1.0)
        if self.kappa is None:
            self.kappa = certified
        else:
            if not 0.0 < self.kappa <= 1.0:
                raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
            if min_gap < self.kappa - 1e-12:
                raise ValueError(
                    f"asserted floor kappa={self.kappa} not satisfied (min gap {min_gap:.6e})"
                )
        if self.zero_boundary:
            b = _boundary_values(self.v.values, self.v.grid)
            if np.abs(b).max() > 1e-12:
                raise ValueError("deflection must vanish on the boundary nodes")

    @property
    def grid(self) -> GridSpec:
        return self.v.grid

    @property
    def min_gap(self) -> float:
        return float((1.0 + self.v.values).min())


@dataclass
class PotentialField:
    """Transformed potential phi(x, eta) together with its source state."""

    phi: ScalarField
    v_ref: DeflectionState
    epsilon: float

    def __post_init__(self):
        if not self.phi.on_cylinder:
            raise ValueError("potential must live on the cylinder grid")
        if self.epsilon <= 0:
            raise ValueError("aspect ratio epsilon must be positive")


@dataclass
class TraceData:
    """Vertical-derivative traces and the induced forcing on the plate grid."""

    gamma: ScalarField
    gamma_b: ScalarField
    g: ScalarField
    epsilon: float


def _boundary_values(vals, grid):
    if grid.dim_D == 1:
        return np.array([vals[0], vals[-1]])
    return np.concatenate([vals[0, :], vals[-1, :], vals[:, 0], vals[:, -1]])


# ---------------------------------------------------------------------------
# metric coefficients from the deflection
# ---------------------------------------------------------------------------

def _metric_terms(v: DeflectionState):
    """w, its interior-node gradient components, Laplacian and |grad w|^2.

    Derivatives are centered and use the *stored* boundary values of v, so
    constant deflections yield exactly vanishing metric terms.
    """
    g = v.grid
    w = 1.0 + v.v.values
    if g.dim_D == 1:
        wx = (w[2:] - w[:-2]) / (2 * g.hx)
        lap = (w[:-2] - 2 * w[1:-1] + w[2:]) / g.hx**2
        return w, (wx,), lap
    wx = (w[2:, 1:-1] - w[:-2, 1:-1]) / (2 * g.hx)
    wy = (w[1:-1, 2:] - w[1:-1, :-2]) / (2 * g.hy)
    lap = (w[:-2, 1:-1] - 2 * w[1:-1, 1:-1] + w[2:, 1:-1]) / g.hx**2 + (
        w[1:-1, :-2] - 2 * w[1:-1, 1:-1] + w[1:-1, 2:]
    ) / g.hy**2
    return w, (wx, wy), lap


@lru_cache(maxsize=8)
def _interior_index(dim_D: int, nx: int, ny: int, n_int_eta: int):
    """Flattened unknown ids arranged on the interior lattice (C order)."""
    if dim_D == 1:
        return np.arange(nx * n_int_eta).reshape(nx, n_int_eta)
    return np.arange(nx * ny * n_int_eta).reshape(nx, ny, n_int_eta)


def assemble_transformed(v: DeflectionState, epsilon: float):
    """Assemble the transformed potential system on interior cylinder nodes.

    Returns ``(A, b)`` with A sparse CSR over the interior unknowns (plate
    interior x eta levels 1..n_eta-2, C order) and b carrying the Dirichlet
    data phi = eta from all six faces.  The sign is chosen so the diagonal is
    positive.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    g = v.grid
    w_full, grads_w, lap_w = _metric_terms(v)
    eps2 = epsilon**2
    he = g.h_eta
    K = g.n_eta - 2                      # interior eta levels
    etas = g.etas[1:-1]

    if g.dim_D == 1:
        w = w_full[1:-1][:, None]        # (nx, 1)
        gw = (grads_w[0][:, None],)
        lapw = lap_w[:, None]
        hxs = (g.hx,)
        P = _interior_index(1, g.nx, 0, K)
        shape = (g.nx, K)
    else:
        w = w_full[1:-1, 1:-1][:, :, None]
        gw = (grads_w[0][:, :, None], grads_w[1][:, :, None])
        lapw = lap_w[:, :, None]
        hxs = (g.hx, g.hy)
        P = _interior_index(2, g.nx, g.ny, K)
        shape = (g.nx, g.ny, K)

    eta = etas.reshape((1,) * (len(shape) - 1) + (K,))
    gw2 = sum(d**2 for d in gw)
    c_ee = eps2 * eta**2 * gw2 / w**2 + 1.0 / w**2          # d_eta^2 coefficient
    c_e = eps2 * eta * (2.0 * gw2 - w * lapw) / w**2        # d_eta coefficient
    c_mixed = [-2.0 * eps2 * eta * d / w for d in gw]       # d_x d_eta coefficients

    # offsets: (plate-axis shifts..., eta shift) -> coefficient array
    # assembled with an overall minus sign so the diagonal is positive
    zeros_ax = (0,) * len(hxs)
    entries = []
    diag = 2.0 * c_ee / he**2 + np.zeros(shape)
    for ax, hx in enumerate(hxs):
        diag += 2.0 * eps2 / hx**2
        for s in (-1, 1):
            shift = [0] * len(hxs)
            shift[ax] = s
            entries.append((tuple(shift) + (0,), np.full(shape, -eps2 / hx**2)))
    for s in (-1, 1):
        entries.append((zeros_ax + (s,), -(c_ee / he**2 + s * c_e / (2 * he))))
    for ax, hx in enumerate(hxs):
        for sx in (-1, 1):
            for se in (-1, 1):
                shift = [0] * len(hxs)
                shift[ax] = sx
                coef = -c_mixed[ax] * sx * se / (4.0 * hx * he)
                entries.append((tuple(shift) + (se,), coef + np.zeros(shape)))
    entries.append((zeros_ax + (0,), diag))

    n_unknowns = P.size
    b = np.zeros(n_unknowns)
    rows_list, cols_list, vals_list = [], [], []
    idx = np.indices(shape)              # interior lattice coordinates (0-based)
    interior_counts = (g.nx,) if g.dim_D == 1 else (g.nx, g.ny)

    for shift, coef in entries:
        coefs = np.broadcast_to(coef, shape)
        # neighbour position on the interior lattice
        nb = [idx[d] + shift[d] for d in range(len(shape))]
        inside = np.ones(shape, dtype=bool)
        for d, cnt in enumerate(interior_counts):
            inside &= (nb[d] >= 0) & (nb[d] < cnt)
        inside &= (nb[-1] >= 0) & (nb[-1] < K)
        if shift == zeros_ax + (0,):
            rows_list.append(P.ravel())
            cols_list.append(P.ravel())
            vals_list.append(coefs.ravel())
            continue
        # interior neighbours become matrix entries
        nb_clipped = [np.clip(n, 0, s - 1) for n, s in zip(nb, shape)]
        cols = P[tuple(nb_clipped)]
        m = inside.ravel()
        rows_list.append(P.ravel()[m])
        cols_list.append(cols.ravel()[m])
        vals_list.append(coefs.ravel()[m])
        # boundary neighbours carry Dirichlet data phi = eta on every face
        out = ~inside
        if np.any(out):
            k_nb = np.clip(nb[-1] + 1, 0, g.n_eta - 1)   # absolute eta level
            data = g.etas[k_nb]
            np.add.at(b, P[out], -coefs[out] * data[out])

    A = sp.coo_matrix(
        (np.concatenate(vals_list), (np.concatenate(rows_list), np.concatenate(cols_list))),
        shape=(n_unknowns, n_unknowns),
    ).tocsr()
    return A, b


def _solve_linear(A, b):
    """Direct solve below DIRECT_SOLVE_LIMIT, AMG-accelerated Krylov above."""
    n = A.shape[0]
    if n <= DIRECT_SOLVE_LIMIT:
        return spla.spsolve(A.tocsc(), b), 0
    try:
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(
            A, symmetry="nonsymmetric", max_coarse=500
        )
        res = []
        x = ml.solve(b, tol=SOLVE_RTOL / 10, maxiter=300, accel="bicgstab", residuals=res)
        bnorm = np.linalg.norm(b)
        if np.linalg.norm(b - A @ x) <= SOLVE_RTOL * bnorm:
            return x, len(res)
    except Exception:
        pass
    # fallback: ILU-preconditioned BiCGStab
    ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=12)
    M = spla.LinearOperator(A.shape, ilu.solve)
    x, info = spla.bicgstab(A, b, rtol=SOLVE_RTOL / 10, atol=0.0, maxiter=2000, M=M)
    res = float(np.linalg.norm(b - A @ x) / np.linalg.norm(b))
    if info != 0 or res > SOLVE_RTOL:
        raise SolverError("potential solve failed", abs(info), res)
    return x, max(info, 0)


def solve_potential(v: DeflectionState, epsilon: float) -> PotentialField:
    """Solve the transformed potential problem to relative residual <= 1e-10."""
    g = v.grid
    A, b = assemble_transformed(v, epsilon)
    x, _ = _solve_linear(A, b)
    bnorm = np.linalg.norm(b)
    res = float(np.linalg.norm(b - A @ x) / bnorm) if bnorm > 0 else 0.0
    if res > SOLVE_RTOL:
        raise SolverError("potential solve above residual target", 0, res)

    # boundary data phi = eta on every face; interior filled from the solve
    phi = np.broadcast_to(g.etas, g.shape_cylinder).copy()
    K = g.n_eta - 2
    if g.dim_D == 1:
        phi[1:-1, 1:-1] = x.reshape(g.nx, K)
    else:
        phi[1:-1, 1:-1, 1:-1] = x.reshape(g.nx, g.ny, K)
    return PotentialField(ScalarField(g, phi, "none"), v, epsilon)


# ---------------------------------------------------------------------------
# traces, forcing, electrostatic energy
# ---------------------------------------------------------------------------

def extract_traces(pf: PotentialField) -> TraceData:
    """Traces gamma, gamma_b (one-sided second-order in eta) and forcing g."""
    g = pf.phi.grid
    phi = pf.phi.values
    he = g.h_eta
    w = 1.0 + pf.v_ref.v.values
    d_top = (3.0 * phi[..., -1] - 4.0 * phi[..., -2] + phi[..., -3]) / (2 * he)
    d_bot = (-3.0 * phi[..., 0] + 4.0 * phi[..., 1] - phi[..., 2]) / (2 * he)
    gamma = d_top / w
    gamma_b = d_bot / w
    grads = gradient_components(pf.v_ref.v)
    grad_sq = sum(d**2 for d in grads)
    g_forcing = (1.0 + pf.epsilon**2 * grad_sq) * gamma**2
    return TraceData(
        gamma=ScalarField(g, gamma, "none"),
        gamma_b=ScalarField(g, gamma_b, "none"),
        g=ScalarField(g, g_forcing, "none"),
        epsilon=pf.epsilon,
    )


def _eta_derivative(phi: np.ndarray, he: float) -> np.ndarray:
    d = np.empty_like(phi)
    d[..., 1:-1] = (phi[..., 2:] - phi[..., :-2]) / (2 * he)
    d[..., 0] = (-3.0 * phi[..., 0] + 4.0 * phi[..., 1] - phi[..., 2]) / (2 * he)
    d[..., -1] = (3.0 * phi[..., -1] - 4.0 * phi[..., -2] + phi[..., -3]) / (2 * he)
    return d


def _plate_derivative(phi: np.ndarray, axis: int, h: float) -> np.ndarray:
    d = np.empty_like(phi)
    sl = [slice(None)] * phi.ndim

    def at(i):
        out = list(sl)
        out[axis] = i
        return tuple(out)

    d[at(slice(1, -1))] = (phi[at(slice(2, None))] - phi[at(slice(None, -2))]) / (2 * h)
    d[at(0)] = (-3.0 * phi[at(0)] + 4.0 * phi[at(1)] - phi[at(2)]) / (2 * h)
    d[at(-1)] = (3.0 * phi[at(-1)] - 4.0 * phi[at(-2)] + phi[at(-3)]) / (2 * h)
    return d


def electrostatic_energy(pf: PotentialField) -> float:
    """Field energy over the physical gap, written in mapped coordinates.

    E_e = int_D int_0^1 [ eps^2 |grad_x phi - eta (grad w / w) d_eta phi|^2
                          + (d_eta phi)^2 / w^2 ] w  d eta dx,
    with w the Jacobian of the gap map; trapezoidal quadrature throughout.
    """
    g = pf.phi.grid
    phi = pf.phi.values
    w = 1.0 + pf.v_ref.v.values
    grads_w = gradient_components(pf.v_ref.v)
    d_eta = _eta_derivative(phi, g.h_eta)
    eta = np.broadcast_to(g.etas, g.shape_cylinder)

    if g.dim_D == 1:
        w3 = w[:, None]
        horiz = (_plate_derivative(phi, 0, g.hx) - eta * (grads_w[0][:, None] / w3) * d_eta,)
    else:
        w3 = w[:, :, None]
        horiz = (
            _plate_derivative(phi, 0, g.hx) - eta * (grads_w[0][:, :, None] / w3) * d_eta,
            _plate_derivative(phi, 1, g.hy) - eta * (grads_w[1][:, :, None] / w3) * d_eta,
        )
    integrand = (pf.epsilon**2 * sum(h**2 for h in horiz) + d_eta**2 / w3**2) * w3

    w_eta = np.full(g.n_eta, g.h_eta)
    w_eta[0] *= 0.5
    w_eta[-1] *= 0.5
    wD = trapezoid_weights(g)
    if g.dim_D == 1:
        weights = wD[:, None] * w_eta[None, :]
    else:
        weights = wD[:, :, None] * w_eta[None, None, :]
    return float(np.sum(weights * integrand))


def solve_traces(v: DeflectionState, epsilon: float):
    """One-stop solve: returns (PotentialField, TraceData, E_e)."""
    pf = solve_potential(v, epsilon)
    traces = extract_traces(pf)
    return pf, traces, electrostatic_energy(pf)


def forcing_l1(traces: TraceData) -> float:
    """||g(v)||_{L1(D)} by trapezoidal quadrature (g >= 0 up to roundoff)."""
    return integrate(np.abs(traces.g.values), traces.g.grid)
