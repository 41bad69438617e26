"""Tensor-product grids, clamped/Dirichlet difference stencils, and discrete norms.

The plate lives on an axis-aligned box D (an interval or a square, default
(-1,1)^d) sampled on a uniform grid that stores boundary nodes explicitly.
The electrostatic potential lives on the reference cylinder D x [0,1] with
``n_eta`` levels in the vertical coordinate.  Everything downstream (potential
solves, energy monitors, time stepping, continuation) is built from the
operators and quadratures defined here.

Conventions:
  * ``nx``/``ny`` count *interior* nodes, so a plate axis has ``nx + 2`` nodes
    and spacing ``hx = (b - a) / (nx + 1)``.
  * ``n_eta`` counts *all* vertical levels including eta = 0 and eta = 1, so
    ``h_eta = 1 / (n_eta - 1)``.
  * Arrays are laid out x-major: shape ``(nx+2,)``, ``(nx+2, ny+2)`` or
    ``(nx+2, ny+2, n_eta)``; interior unknowns flatten in C order.
  * Operators never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

BOUNDARY_TAGS = ("clamped", "dirichlet", "none")

NORM_KINDS = ("L1", "L2", "H1semi", "H2proxy")

#: fixed float format used by every CSV/JSON writer (determinism contract)
FLOAT_FMT = "%.17g"


class GridError(ValueError):
    """Raised for malformed grids or grid/field mismatches."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor-product grid on D (and on the reference cylinder).

    ``dim_D`` is the plate dimension (1 for a beam cross-section, 2 for a
    plate); ``ny`` is ignored when ``dim_D == 1``.
    """

    dim_D: int = 2
    nx: int = 32
    ny: int = 32
    n_eta: int = 17
    bounds: tuple = ((-1.0, 1.0), (-1.0, 1.0))

    def __post_init__(self):
        if self.dim_D not in (1, 2):
            raise GridError(f"dim_D must be 1 or 2, got {self.dim_D}")
        if self.nx < 8 or (self.dim_D == 2 and self.ny < 8) or self.n_eta < 8:
            raise GridError("node counts must be >= 8 on every used axis")
        for lo, hi in self.bounds[: self.dim_D]:
            if not hi > lo:
                raise GridError(f"degenerate axis bounds ({lo}, {hi})")

    # -- spacings (uniform per axis, derived from bounds and counts) --------

    @property
    def hx(self) -> float:
        lo, hi = self.bounds[0]
        return (hi - lo) / (self.nx + 1)

    @property
    def hy(self) -> float:
        if self.dim_D == 1:
            return 0.0
        lo, hi = self.bounds[1]
        return (hi - lo) / (self.ny + 1)

    @property
    def h_eta(self) -> float:
        return 1.0 / (self.n_eta - 1)

    # -- node coordinates ----------------------------------------------------

    @property
    def xs(self) -> np.ndarray:
        lo, hi = self.bounds[0]
        return np.linspace(lo, hi, self.nx + 2)

    @property
    def ys(self) -> np.ndarray:
        lo, hi = self.bounds[1]
        return np.linspace(lo, hi, self.ny + 2)

    @property
    def etas(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_eta)

    @property
    def shape_D(self) -> tuple:
        if self.dim_D == 1:
            return (self.nx + 2,)
        return (self.nx + 2, self.ny + 2)

    @property
    def shape_cylinder(self) -> tuple:
        return self.shape_D + (self.n_eta,)

    @property
    def interior_size(self) -> int:
        n = self.nx
        if self.dim_D == 2:
            n *= self.ny
        return n

    @property
    def area(self) -> float:
        """|D|, the measure of the plate domain."""
        lo, hi = self.bounds[0]
        a = hi - lo
        if self.dim_D == 2:
            lo, hi = self.bounds[1]
            a *= hi - lo
        return a

    def meshgrid(self):
        if self.dim_D == 1:
            return (self.xs,)
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def refined(self, factor: int = 2) -> "GridSpec":
        """Grid with every plate axis refined; eta levels scale as n_eta-1."""
        return replace(
            self,
            nx=(self.nx + 1) * factor - 1,
            ny=(self.ny + 1) * factor - 1 if self.dim_D == 2 else self.ny,
            n_eta=(self.n_eta - 1) * factor + 1,
        )


@dataclass
class ScalarField:
    """Real-valued field over a plate grid or the reference cylinder.

    ``boundary_tag`` records which closure the difference operators should
    use: "dirichlet" (boundary value 0), "clamped" (value 0 plus mirror ghost
    encoding a vanishing normal derivative), or "none".
    """

    grid: GridSpec
    values: np.ndarray
    boundary_tag: str = "none"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape not in (self.grid.shape_D, self.grid.shape_cylinder):
            raise GridError(
                f"value shape {self.values.shape} matches neither plate "
                f"{self.grid.shape_D} nor cylinder {self.grid.shape_cylinder}"
            )
        if self.boundary_tag not in BOUNDARY_TAGS:
            raise GridError(f"unknown boundary tag {self.boundary_tag!r}")
        if not np.all(np.isfinite(self.values)):
            raise GridError("field contains non-finite entries")

    @property
    def on_cylinder(self) -> bool:
        return self.values.shape == self.grid.shape_cylinder

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.boundary_tag)

    def interior(self) -> np.ndarray:
        """Interior plate values flattened in C order."""
        if self.on_cylinder:
            raise GridError("interior() is defined for plate fields only")
        if self.grid.dim_D == 1:
            return self.values[1:-1].copy()
        return self.values[1:-1, 1:-1].ravel().copy()


def field_from_function(grid: GridSpec, fn: Callable, tag: str = "none") -> ScalarField:
    """Sample ``fn`` on the plate grid (fn of x in 1D, of (x, y) in 2D)."""
    if grid.dim_D == 1:
        vals = fn(grid.xs)
    else:
        X, Y = grid.meshgrid()
        vals = fn(X, Y)
    return ScalarField(grid, np.asarray(vals, dtype=float), tag)


def zeros_field(grid: GridSpec, tag: str = "clamped") -> ScalarField:
    return ScalarField(grid, np.zeros(grid.shape_D), tag)


def embed_interior(grid: GridSpec, vec: np.ndarray, tag: str = "clamped") -> ScalarField:
    """Wrap a flat interior vector into a full-grid field with zero boundary."""
    vals = np.zeros(grid.shape_D)
    if grid.dim_D == 1:
        vals[1:-1] = vec
    else:
        vals[1:-1, 1:-1] = np.reshape(vec, (grid.nx, grid.ny))
    return ScalarField(grid, vals, tag)


def _require_plate(f: ScalarField, op: str):
    if f.on_cylinder:
        raise GridError(f"{op} expects a plate field, got a cylinder field")


# ---------------------------------------------------------------------------
# difference operators
# ---------------------------------------------------------------------------

def apply_laplacian(f: ScalarField) -> ScalarField:
    """Second-order 3-point (1D) / 5-point (2D) Laplacian.

    Boundary values of ``f`` are taken as 0 (both closures share that), and
    the result is populated on interior nodes with zero boundary entries.
    """
    _require_plate(f, "apply_laplacian")
    if f.boundary_tag not in ("dirichlet", "clamped"):
        raise GridError("apply_laplacian needs a dirichlet or clamped closure")
    g = f.grid
    v = f.values.copy()
    out = np.zeros_like(v)
    if g.dim_D == 1:
        v[0] = v[-1] = 0.0
        out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / g.hx**2
    else:
        v[0, :] = v[-1, :] = 0.0
        v[:, 0] = v[:, -1] = 0.0
        out[1:-1, 1:-1] = (
            (v[:-2, 1:-1] - 2.0 * v[1:-1, 1:-1] + v[2:, 1:-1]) / g.hx**2
            + (v[1:-1, :-2] - 2.0 * v[1:-1, 1:-1] + v[1:-1, 2:]) / g.hy**2
        )
    return ScalarField(g, out, "none")


def _extend_clamped_1d(v: np.ndarray, axis: int) -> np.ndarray:
    """Pad one axis with the mirror ghost (ghost = first interior value)."""
    pads = [(0, 0)] * v.ndim
    pads[axis] = (1, 1)
    ext = np.pad(v, pads)
    lead = [slice(None)] * v.ndim

    def at(i):
        idx = list(lead)
        idx[axis] = i
        return tuple(idx)

    ext[at(0)] = v[at(1)]          # ghost below = value one node inside
    ext[at(-1)] = v[at(-2)]
    return ext


def apply_bilaplacian_clamped(f: ScalarField) -> ScalarField:
    """Clamped bi-Laplacian: 5-point (1D) / 13-point (2D) stencil.

    Ghost nodes outside D are eliminated by the zero boundary value and a
    mirror reflection (ghost value = first interior value), which encodes a
    vanishing normal derivative while keeping the assembled operator
    symmetric.
    """
    _require_plate(f, "apply_bilaplacian_clamped")
    if f.boundary_tag != "clamped":
        raise GridError("apply_bilaplacian_clamped needs a clamped field")
    g = f.grid
    v = f.values.copy()
    out = np.zeros_like(v)
    if g.dim_D == 1:
        v[0] = v[-1] = 0.0
        e = _extend_clamped_1d(v, 0)
        # the 4th-difference array below covers exactly the interior nodes
        out[1:-1] = (
            e[:-4] - 4.0 * e[1:-3] + 6.0 * e[2:-2] - 4.0 * e[3:-1] + e[4:]
        ) / g.hx**4
        return ScalarField(g, out, "none")

    v[0, :] = v[-1, :] = 0.0
    v[:, 0] = v[:, -1] = 0.0
    ex = _extend_clamped_1d(v, 0)
    d4x = (
        ex[:-4, :] - 4.0 * ex[1:-3, :] + 6.0 * ex[2:-2, :] - 4.0 * ex[3:-1, :] + ex[4:, :]
    ) / g.hx**4               # rows cover interior x only
    ey = _extend_clamped_1d(v, 1)
    d4y = (
        ey[:, :-4] - 4.0 * ey[:, 1:-3] + 6.0 * ey[:, 2:-2] - 4.0 * ey[:, 3:-1] + ey[:, 4:]
    ) / g.hy**4               # columns cover interior y only
    # cross term: no ghosts needed, it only touches nodes one step away
    d2y = np.zeros_like(v)
    d2y[:, 1:-1] = (v[:, :-2] - 2.0 * v[:, 1:-1] + v[:, 2:]) / g.hy**2
    d2xd2y = (d2y[:-2, :] - 2.0 * d2y[1:-1, :] + d2y[2:, :]) / g.hx**2
    out[1:-1, 1:-1] = (
        d4x[:, 1:-1] + d4y[1:-1, :] + 2.0 * d2xd2y[:, 1:-1]
    )
    return ScalarField(g, out, "none")


def gradient_components(f: ScalarField) -> tuple:
    """Gradient on the full plate grid, second order.

    Centered differences at interior nodes, one-sided 3-point formulas on the
    boundary (so no closure assumption is made about f).
    """
    _require_plate(f, "gradient_components")
    g = f.grid

    def diff(v, axis, h):
        d = np.zeros_like(v)
        sl = [slice(None)] * v.ndim

        def at(i):
            idx = list(sl)
            idx[axis] = i
            return tuple(idx)

        d[at(slice(1, -1))] = (v[at(slice(2, None))] - v[at(slice(None, -2))]) / (2 * h)
        d[at(0)] = (-3.0 * v[at(0)] + 4.0 * v[at(1)] - v[at(2)]) / (2 * h)
        d[at(-1)] = (3.0 * v[at(-1)] - 4.0 * v[at(-2)] + v[at(-3)]) / (2 * h)
        return d

    if g.dim_D == 1:
        return (diff(f.values, 0, g.hx),)
    return (diff(f.values, 0, g.hx), diff(f.values, 1, g.hy))


# ---------------------------------------------------------------------------
# quadrature and norms
# ---------------------------------------------------------------------------

def trapezoid_weights(grid: GridSpec) -> np.ndarray:
    """Composite trapezoidal weights over the plate grid (includes spacings)."""
    wx = np.full(grid.nx + 2, grid.hx)
    wx[0] *= 0.5
    wx[-1] *= 0.5
    if grid.dim_D == 1:
        return wx
    wy = np.full(grid.ny + 2, grid.hy)
    wy[0] *= 0.5
    wy[-1] *= 0.5
    return np.outer(wx, wy)


def integrate(f_values: np.ndarray, grid: GridSpec) -> float:
    """Trapezoidal integral of nodal values over D."""
    return float(np.sum(trapezoid_weights(grid) * f_values))


def discrete_norm(f: ScalarField, kind: str) -> float:
    """Discrete norms over D by composite trapezoidal quadrature.

    ``H2proxy`` is the monitored stand-in for the H^2-type quantities:
    sqrt(||f||_L2^2 + ||lap_h f||_L2^2), with the discrete Laplacian taken
    with boundary values of f read as 0.
    """
    _require_plate(f, "discrete_norm")
    if kind not in NORM_KINDS:
        raise GridError(f"unknown norm kind {kind!r}")
    w = trapezoid_weights(f.grid)
    if kind == "L1":
        return float(np.sum(w * np.abs(f.values)))
    if kind == "L2":
        return float(np.sqrt(np.sum(w * f.values**2)))
    if kind == "H1semi":
        grads = gradient_components(f)
        return float(np.sqrt(sum(np.sum(w * d**2) for d in grads)))
    # H2proxy
    lap = apply_laplacian(ScalarField(f.grid, f.values, "dirichlet"))
    l2sq = np.sum(w * f.values**2)
    lapsq = np.sum(w * lap.values**2)
    return float(np.sqrt(l2sq + lapsq))


def mechanical_energy(f: ScalarField, beta: float, tau: float, a: float) -> float:
    """Bending + stretching energy: beta/2 ||lap f||^2 + tau/2 |f|_H1^2 + a/4 |f|_H1^4."""
    lap = apply_laplacian(ScalarField(f.grid, f.values, f.boundary_tag
                                      if f.boundary_tag != "none" else "dirichlet"))
    w = trapezoid_weights(f.grid)
    lap_sq = float(np.sum(w * lap.values**2))
    h1_sq = discrete_norm(f, "H1semi") ** 2
    return 0.5 * beta * lap_sq + 0.5 * tau * h1_sq + 0.25 * a * h1_sq**2


# ---------------------------------------------------------------------------
# assembled interior operators
# ---------------------------------------------------------------------------

def _lap1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="csr") / h**2


def _bilap1d(n: int, h: float) -> sp.csr_matrix:
    b = sp.diags([1.0, -4.0, 6.0, -4.0, 1.0], [-2, -1, 0, 1, 2], shape=(n, n), format="lil")
    b[0, 0] += 1.0    # mirror ghost folds onto the first interior node
    b[n - 1, n - 1] += 1.0
    return (b / h**4).tocsr()


def laplacian_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Dirichlet Laplacian on interior unknowns (C-order flattening)."""
    if grid.dim_D == 1:
        return _lap1d(grid.nx, grid.hx)
    Lx = _lap1d(grid.nx, grid.hx)
    Ly = _lap1d(grid.ny, grid.hy)
    Ix = sp.identity(grid.nx, format="csr")
    Iy = sp.identity(grid.ny, format="csr")
    return (sp.kron(Lx, Iy) + sp.kron(Ix, Ly)).tocsr()


def bilaplacian_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Clamped bi-Laplacian on interior unknowns; symmetric positive definite."""
    if grid.dim_D == 1:
        return _bilap1d(grid.nx, grid.hx)
    Bx = _bilap1d(grid.nx, grid.hx)
    By = _bilap1d(grid.ny, grid.hy)
    Lx = _lap1d(grid.nx, grid.hx)
    Ly = _lap1d(grid.ny, grid.hy)
    Ix = sp.identity(grid.nx, format="csr")
    Iy = sp.identity(grid.ny, format="csr")
    return (sp.kron(Bx, Iy) + sp.kron(Ix, By) + 2.0 * sp.kron(Lx, Ly)).tocsr()


# ---------------------------------------------------------------------------
# snapshot CSV format
# ---------------------------------------------------------------------------

def write_snapshot(path, f: ScalarField):
    """Plate-field snapshot: header `# grid nx=.. [ny=..] h=..`, one node per row."""
    _require_plate(f, "write_snapshot")
    g = f.grid
    with open(path, "w") as fh:
        if g.dim_D == 1:
            fh.write(f"# grid nx={g.nx} h={FLOAT_FMT % g.hx}\n")
            for x, val in zip(g.xs, f.values):
                fh.write(f"{FLOAT_FMT % x},{FLOAT_FMT % val}\n")
        else:
            fh.write(f"# grid nx={g.nx} ny={g.ny} h={FLOAT_FMT % g.hx}\n")
            X, Y = g.meshgrid()
            for x, y, val in zip(X.ravel(), Y.ravel(), f.values.ravel()):
                fh.write(f"{FLOAT_FMT % x},{FLOAT_FMT % y},{FLOAT_FMT % val}\n")


def read_snapshot(path, n_eta: int = 17, tag: str = "none") -> ScalarField:
    """Read a plate-field snapshot written by :func:`write_snapshot`."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# grid "):
            raise GridError(f"not a field snapshot, header was {header!r}")
        kv = dict(tok.split("=") for tok in header[len("# grid "):].split())
        nx = int(kv["nx"])
        h = float(kv["h"])
        half = h * (nx + 1) / 2.0
        if "ny" in kv:
            ny = int(kv["ny"])
            grid = GridSpec(dim_D=2, nx=nx, ny=ny, n_eta=n_eta,
                            bounds=((-half, half), (-half, half)))
        else:
            grid = GridSpec(dim_D=1, nx=nx, n_eta=n_eta, bounds=((-half, half), (-half, half)))
        data = np.loadtxt(fh, delimiter=",")
    vals = data[:, -1].reshape(grid.shape_D)
    return ScalarField(grid, vals, tag)


def write_cylinder_snapshot(path, f: ScalarField):
    """Cylinder-field snapshot: adds n_eta to the header and an eta column."""
    if not f.on_cylinder:
        raise GridError("write_cylinder_snapshot expects a cylinder field")
    g = f.grid
    with open(path, "w") as fh:
        if g.dim_D == 1:
            fh.write(f"# grid nx={g.nx} n_eta={g.n_eta} h={FLOAT_FMT % g.hx}\n")
            for i, x in enumerate(g.xs):
                for k, eta in enumerate(g.etas):
                    fh.write(f"{FLOAT_FMT % x},{FLOAT_FMT % eta},{FLOAT_FMT % f.values[i, k]}\n")
        else:
            fh.write(f"# grid nx={g.nx} ny={g.ny} n_eta={g.n_eta} h={FLOAT_FMT % g.hx}\n")
            X, Y = g.meshgrid()
            for i in range(g.nx + 2):
                for j in range(g.ny + 2):
                    for k, eta in enumerate(g.etas):
                        fh.write(
                            f"{FLOAT_FMT % X[i, j]},{FLOAT_FMT % Y[i, j]},"
                            f"{FLOAT_FMT % eta},{FLOAT_FMT % f.values[i, j, k]}\n"
                        )
