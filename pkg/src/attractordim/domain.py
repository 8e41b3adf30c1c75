"""Box-domain discretization: grids, nodal fields, norms, and the sparse
symmetric operator induced by the form integral(grad u . grad v + beta u v).

The box is discretized with second-order 7-point finite differences on a
uniform interior-node grid; the Dirichlet boundary is implicit (boundary
values are zero and never stored).  Linear indexing is row-major with the
x index fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DomainError,
    EigensolverError,
    GridMismatchError,
    HypothesisViolationError,
    OverflowNodeError,
)

FIELD_MAGIC = "adf1"
FIELD_HEADER_BYTES = 64

#: symmetry slack allowed in assembled operators, relative to max|entry|
ASSEMBLY_SYMMETRY_TOL = 1e-14


@dataclass(frozen=True)
class Grid:
    """Uniform interior-node grid on an open box with zero boundary values.

    extents: three half-open intervals (a, b) per axis.
    shape:   interior node counts (n1, n2, n3) along (x, y, z); the node
             spacing per axis is (b - a) / (n + 1).
    """

    extents: tuple[tuple[float, float], ...]
    shape: tuple[int, int, int]

    def __post_init__(self):
        if len(self.extents) != 3 or len(self.shape) != 3:
            raise DomainError("grid requires three extents and three node counts")
        for a, b in self.extents:
            if not (np.isfinite(a) and np.isfinite(b)) or not b - a > 0:
                raise DomainError(f"invalid extent ({a}, {b}): length must be positive")
        for n in self.shape:
            if int(n) != n or n < 2:
                raise DomainError(f"points_per_axis must be integers >= 2, got {n}")
        object.__setattr__(self, "extents", tuple((float(a), float(b)) for a, b in self.extents))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))

    @property
    def lengths(self) -> tuple[float, float, float]:
        return tuple(b - a for a, b in self.extents)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(l / (n + 1) for l, n in zip(self.lengths, self.shape))

    @property
    def dof(self) -> int:
        n1, n2, n3 = self.shape
        return n1 * n2 * n3

    @property
    def cell_volume(self) -> float:
        h1, h2, h3 = self.spacing
        return h1 * h2 * h3

    def axis_nodes(self, axis: int) -> np.ndarray:
        """Interior node coordinates along one axis."""
        a, _ = self.extents[axis]
        h = self.spacing[axis]
        n = self.shape[axis]
        return a + h * np.arange(1, n + 1)

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat (x, y, z) coordinate arrays in linear (x-fastest) order."""
        xs, ys, zs = (self.axis_nodes(i) for i in range(3))
        Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
        return X.ravel(), Y.ravel(), Z.ravel()

    def as_array3d(self, values: np.ndarray) -> np.ndarray:
        """View flat nodal values as a (n3, n2, n1) array (x fastest)."""
        n1, n2, n3 = self.shape
        return np.asarray(values).reshape(n3, n2, n1)


def build_grid(extents, points_per_axis) -> Grid:
    """Construct a grid; raises DomainError on non-positive lengths or n < 2."""
    return Grid(tuple(tuple(e) for e in extents), tuple(points_per_axis))


@dataclass(frozen=True)
class Field:
    """Nodal scalar function on a grid; values at interior nodes only."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64).ravel())
        if vals.size != self.grid.dof:
            raise DomainError(
                f"field length {vals.size} does not match grid dof {self.grid.dof}"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    def same_grid(self, other: "Field") -> None:
        if self.grid != other.grid:
            raise GridMismatchError("fields live on different grids")


def constant_field(grid: Grid, value: float) -> Field:
    return Field(grid, np.full(grid.dof, float(value)))


def field_from_function(grid: Grid, fn: Callable) -> Field:
    """Sample fn(x, y, z) at the grid nodes."""
    x, y, z = grid.node_coordinates()
    vals = np.broadcast_to(np.asarray(fn(x, y, z), dtype=np.float64), x.shape)
    return Field(grid, np.array(vals))


# ---------------------------------------------------------------------------
# operator assembly

@dataclass(frozen=True)
class SymmetricOperator:
    """Sparse symmetric realization of a bilinear form on a grid.

    The matrix is the unweighted finite-difference operator (units 1/length^2);
    the weighted L2 pairing <M u, v> * cell_volume equals the discrete form.
    """

    matrix: sp.csr_matrix
    grid: Grid
    kind: str = "diffusion_form"

    def __post_init__(self):
        m = self.matrix
        if m.shape != (self.grid.dof, self.grid.dof):
            raise DomainError("operator size does not match grid dof")
        scale = float(np.max(np.abs(m.data))) if m.nnz else 0.0
        asym = abs(m - m.T)
        max_asym = float(asym.data.max()) if asym.nnz else 0.0
        if max_asym > ASSEMBLY_SYMMETRY_TOL * max(scale, 1.0):
            raise DomainError(
                f"assembled operator asymmetric: {max_asym:.3e} > "
                f"{ASSEMBLY_SYMMETRY_TOL:.0e} * {scale:.3e}"
            )

    @property
    def dof(self) -> int:
        return self.grid.dof

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def form(self, u: Field, v: Field) -> float:
        """Discrete bilinear form a(u, v) with cell-volume weighting."""
        u.same_grid(v)
        return float(self.grid.cell_volume * (u.values @ (self.matrix @ v.values)))


def _dirichlet_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """7-point discrete -Laplace with implicit zero Dirichlet boundary."""
    n1, n2, n3 = grid.shape
    h1, h2, h3 = grid.spacing
    dx = _dirichlet_1d(n1, h1)
    dy = _dirichlet_1d(n2, h2)
    dz = _dirichlet_1d(n3, h3)
    ix, iy, iz = (sp.identity(n, format="csr") for n in (n1, n2, n3))
    # x is the fastest linear index, so it sits in the innermost kron factor
    lap = (
        sp.kron(iz, sp.kron(iy, dx))
        + sp.kron(iz, sp.kron(dy, ix))
        + sp.kron(dz, sp.kron(iy, ix))
    )
    return lap.tocsr()


def assemble_operator(grid: Grid, beta: Field) -> SymmetricOperator:
    """Operator of the form integral(grad u . grad v) + integral(beta u v)."""
    if beta.grid != grid:
        raise GridMismatchError("beta field is not sampled on the target grid")
    mat = (laplacian_matrix(grid) + sp.diags(beta.values)).tocsr()
    return SymmetricOperator(mat, grid, kind="diffusion_form")


def h1_gram_matrix(grid: Grid) -> sp.csr_matrix:
    """Matrix realizing the discrete H1 inner product (gradient + identity)."""
    return (laplacian_matrix(grid) + sp.identity(grid.dof, format="csr")).tocsr()


def shift_diagonal(op: SymmetricOperator, diag: np.ndarray, scale: float = 1.0,
                   kind: str | None = None) -> SymmetricOperator:
    """Return scale * op + diag as a new operator on the same grid."""
    mat = (scale * op.matrix + sp.diags(np.asarray(diag, dtype=np.float64))).tocsr()
    return SymmetricOperator(mat, op.grid, kind=kind or op.kind)


# ---------------------------------------------------------------------------
# norms and inner products

def l2_inner(u: Field, v: Field) -> float:
    u.same_grid(v)
    return float(u.grid.cell_volume * (u.values @ v.values))


def l2_norm(u: Field) -> float:
    return math.sqrt(u.grid.cell_volume) * float(np.linalg.norm(u.values))


def lp_norm(u: Field, p: float) -> float:
    if not (1.0 <= p < math.inf):
        raise DomainError(f"Lp norm requires p in [1, inf), got {p}")
    w = u.grid.cell_volume
    return float((w * np.sum(np.abs(u.values) ** p)) ** (1.0 / p))


def gradient_energy(u: Field) -> float:
    """Squared L2 norm of the one-sided gradient with zero extension."""
    g = u.grid
    arr = g.as_array3d(u.values)
    h1, h2, h3 = g.spacing
    total = 0.0
    for axis, h in ((2, h1), (1, h2), (0, h3)):
        d = np.diff(arr, axis=axis, prepend=0.0, append=0.0)
        total += float(np.sum(d * d)) / h**2
    return g.cell_volume * total


def h1_norm(u: Field) -> float:
    return math.sqrt(gradient_energy(u) + l2_norm(u) ** 2)


def _window_bounds(grid: Grid, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Index range of nodes inside the unit window centered at each node."""
    xs = grid.axis_nodes(axis)
    a, _ = grid.extents[axis]
    h = grid.spacing[axis]
    # node i sits at a + h*(i+1); slack guards float fenceposts
    lo = np.ceil((xs - 0.5 - a) / h - 1.0 - 1e-12).astype(int)
    hi = np.floor((xs + 0.5 - a) / h - 1.0 + 1e-12).astype(int)
    return np.clip(lo, 0, grid.shape[axis] - 1), np.clip(hi, 0, grid.shape[axis] - 1)


def uniform_local_norm(u: Field, sigma: float) -> float:
    """Max over node-centered unit cubes (clipped to the box) of the local
    L^sigma norm, consistent with trivial extension by zero outside the box."""
    if sigma < 1.0:
        raise DomainError(f"uniform-local norm requires sigma >= 1, got {sigma}")
    g = u.grid
    n1, n2, n3 = g.shape
    arr = g.as_array3d(np.abs(u.values) ** sigma) * g.cell_volume
    # summed-area table with a zero layer in front of each axis
    s = np.zeros((n3 + 1, n2 + 1, n1 + 1))
    s[1:, 1:, 1:] = arr.cumsum(0).cumsum(1).cumsum(2)
    lox, hix = _window_bounds(g, 0)
    loy, hiy = _window_bounds(g, 1)
    loz, hiz = _window_bounds(g, 2)
    K1, J1, I1 = np.ix_(hiz + 1, hiy + 1, hix + 1)
    K0, J0, I0 = np.ix_(loz, loy, lox)
    box = (
        s[K1, J1, I1] - s[K0, J1, I1] - s[K1, J0, I1] - s[K1, J1, I0]
        + s[K0, J0, I1] + s[K0, J1, I0] + s[K1, J0, I0] - s[K0, J0, I0]
    )
    return float(np.max(box) ** (1.0 / sigma))


def norm(u: Field, kind: str, exponent: float | None = None) -> float:
    """Dispatcher over the supported norms: L2, H1, Lp(p), UniformLocal(sigma)."""
    key = kind.lower()
    if key == "l2":
        return l2_norm(u)
    if key == "h1":
        return h1_norm(u)
    if key == "lp":
        if exponent is None:
            raise DomainError("Lp norm requires an exponent")
        return lp_norm(u, exponent)
    if key in ("uniformlocal", "uniform_local"):
        if exponent is None:
            raise DomainError("uniform-local norm requires an exponent")
        return uniform_local_norm(u, exponent)
    raise DomainError(f"unknown norm kind {kind!r}")


def uniform_local_absorption_residual(
    omega: Field, u: Field, sigma: float, eps: float, m_b: float
) -> float:
    """Slack of the weighted-mass absorption inequality

        integral(|omega| u^2) <= |omega|_ul,sigma *
            (rho * eps * m_b^2 * |u|_H1^2 + (1-rho) * eps^(-rho/(1-rho)) * |u|_L2^2)

    with rho = 3/(2 sigma).  Nonnegative return certifies the sample.
    """
    if sigma <= 1.5:
        raise DomainError(f"absorption residual requires sigma > 3/2, got {sigma}")
    if eps <= 0 or m_b <= 0:
        raise DomainError("eps and m_b must be positive")
    omega.same_grid(u)
    rho = 3.0 / (2.0 * sigma)
    lhs = float(u.grid.cell_volume * np.sum(np.abs(omega.values) * u.values**2))
    rhs = uniform_local_norm(omega, sigma) * (
        rho * eps * m_b**2 * h1_norm(u) ** 2
        + (1.0 - rho) * eps ** (-rho / (1.0 - rho)) * l2_norm(u) ** 2
    )
    return rhs - lhs


def rayleigh_extremes(op: SymmetricOperator, dense_limit: int = 4096) -> tuple[float, float]:
    """Extreme generalized Rayleigh quotients of the form against the
    discrete H1 inner product; returns (lambda0, Lambda0) with
    lambda0 * |u|_H1^2 <= a(u, u) <= Lambda0 * |u|_H1^2 for all u."""
    import scipy.linalg as la

    gram = h1_gram_matrix(op.grid)
    n = op.dof
    if n <= dense_limit:
        # reduce the pencil (M, H) to standard form via the Cholesky factor
        # of H; the subset driver for the generalized problem is fragile
        a = op.matrix.toarray()
        chol = la.cholesky(gram.toarray(), lower=True)
        half = la.solve_triangular(chol, a, lower=True)
        c = la.solve_triangular(chol, half.T, lower=True).T
        c = 0.5 * (c + c.T)
        try:
            lo = la.eigh(c, subset_by_index=[0, 0], eigvals_only=True)[0]
            hi = la.eigh(c, subset_by_index=[n - 1, n - 1], eigvals_only=True)[0]
        except la.LinAlgError:  # subset driver occasionally fails; full solve
            vals = la.eigvalsh(c)
            lo, hi = vals[0], vals[-1]
        return float(lo), float(hi)
    try:
        v0 = np.ones(n)
        lo = spla.eigsh(op.matrix, k=1, M=gram, which="SA", v0=v0,
                        return_eigenvectors=False)[0]
        hi = spla.eigsh(op.matrix, k=1, M=gram, which="LA", v0=v0,
                        return_eigenvectors=False)[0]
    except spla.ArpackError as exc:  # pragma: no cover - size-dependent
        raise EigensolverError(f"generalized Rayleigh extremes failed: {exc}") from exc
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# nonlinearity

@dataclass(frozen=True)
class NonlinearitySpec:
    """Pointwise reaction term f(x, u) with derivatives and growth data.

    value/du/duu take (x, y, z, u) arrays and return an array broadcast to
    the node count.  growth_c and growth_gamma bound the second derivative:
    |duu f(x, u)| <= C (1 + |u|^gamma) with gamma in [2, 3); q and sigma
    record the integrability exponents of f(., 0) and du f(., 0).
    """

    value: Callable
    du: Callable
    duu: Callable
    growth_c: float
    growth_gamma: float
    q: float = 2.0
    sigma: float = 2.0
    description: str = ""

    def __post_init__(self):
        if self.growth_c < 0:
            raise DomainError("growth constant C must be nonnegative")
        if not (2.0 <= self.growth_gamma < 3.0):
            raise DomainError(f"growth exponent gamma must lie in [2, 3), got {self.growth_gamma}")
        if not (1.2 < self.q <= 2.0):
            raise DomainError(f"exponent q must lie in (6/5, 2], got {self.q}")
        if not (self.sigma > 1.5):
            raise DomainError(f"exponent sigma must exceed 3/2, got {self.sigma}")

    def check_growth(self, grid: Grid, u_range: float = 4.0, samples: int = 9):
        """Verify the second-derivative growth bound on a test lattice."""
        x, y, z = grid.node_coordinates()
        worst = None
        for uval in np.linspace(-u_range, u_range, samples):
            uu = np.full_like(x, uval)
            d2 = np.broadcast_to(np.asarray(self.duu(x, y, z, uu), dtype=float), x.shape)
            bound = self.growth_c * (1.0 + abs(uval) ** self.growth_gamma)
            bad = np.abs(d2) > bound + 1e-12
            if np.any(bad):
                i = int(np.argmax(np.abs(d2) - bound))
                worst = (i, uval, float(np.abs(d2[i])), bound)
                break
        if worst is not None:
            i, uval, got, bound = worst
            raise HypothesisViolationError(
                f"second-derivative growth bound violated at node {i}, u={uval:g}: "
                f"|duu f|={got:g} > C(1+|u|^gamma)={bound:g}",
                value=got,
                witness=(i, uval),
            )


def nemytskii(spec: NonlinearitySpec, u: Field, order: int = 0) -> Field:
    """Pointwise composition x -> f(x, u(x)) (or its u-derivatives)."""
    if order not in (0, 1, 2):
        raise DomainError(f"nemytskii order must be 0, 1 or 2, got {order}")
    x, y, z = u.grid.node_coordinates()
    fn = (spec.value, spec.du, spec.duu)[order]
    out = np.asarray(fn(x, y, z, u.values), dtype=np.float64)
    out = np.array(np.broadcast_to(out, u.values.shape))
    finite = np.isfinite(out)
    if not finite.all():
        i = int(np.argmax(~finite))
        raise OverflowNodeError(i, (x[i], y[i], z[i]), order)
    return Field(u.grid, out)


# ---------------------------------------------------------------------------
# binary field serialization

def write_field(u: Field, path) -> None:
    """Write little-endian float64 values (x fastest) behind a 64-byte text
    header recording extents and points_per_axis."""
    with open(path, "wb") as fh:
        fh.write(field_header(u.grid))
        fh.write(u.values.astype("<f8").tobytes())


def field_header(grid: Grid) -> bytes:
    parts = [FIELD_MAGIC]
    for a, b in grid.extents:
        parts += [repr(a), repr(b)]
    parts += [str(n) for n in grid.shape]
    text = " ".join(parts)
    if len(text) > FIELD_HEADER_BYTES:
        parts = [FIELD_MAGIC]
        for a, b in grid.extents:
            parts += [f"{a:.9g}", f"{b:.9g}"]
        parts += [str(n) for n in grid.shape]
        text = " ".join(parts)
    if len(text) > FIELD_HEADER_BYTES:
        raise DomainError("grid description does not fit the 64-byte field header")
    return text.ljust(FIELD_HEADER_BYTES).encode("ascii")


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        header = fh.read(FIELD_HEADER_BYTES).decode("ascii").split()
        if not header or header[0] != FIELD_MAGIC:
            raise DomainError(f"not a field file: bad magic in {path}")
        if len(header) != 10:
            raise DomainError(f"malformed field header in {path}")
        nums = [float(t) for t in header[1:7]]
        shape = tuple(int(t) for t in header[7:10])
        grid = build_grid([(nums[0], nums[1]), (nums[2], nums[3]), (nums[4], nums[5])], shape)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != grid.dof:
        raise DomainError(f"field payload has {data.size} values, expected {grid.dof}")
    return Field(grid, np.array(data))
