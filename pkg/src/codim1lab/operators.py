"""Sparse matrices for the offset Dirac family, the normal operator T and their product.

Discretisation
--------------
All operators are written in half-density form: a spinor psi is stored as
chi = sqrt(w) * psi, with w the volume weight, so that every self-adjoint
operator becomes a Hermitian matrix for the flat grid measure.

Both first-order operators are discretised on *staggered* lattices:

* meridian direction: a uniform grid of ``n`` nodes offset half a step from
  the ends; the two spinor components occupy alternate nodes.  This is the
  three-point central stencil restricted to a single sublattice, which
  removes the lattice doubler (the full stencil reproduces every eigenvalue
  twice and pairs the kernel of T with a spurious opposite-chirality mode).
* normal direction: the first component of T lives on the ``n`` half-offset
  nodes of ``Grid1D(n, -eps, eps)``, the second on the ``n - 1`` interior
  midpoints.  tan(pi s / 2 eps) is therefore only evaluated strictly inside
  (-eps, eps), and the second component has zero virtual values at +-eps.

Ordering of the product basis: all primal s-nodes first, then all dual
s-nodes; within each s-node the meridian lattice in node order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from .errors import InvalidGridError, InvalidModeError
from .geometry import OffsetGeometry, lam

_S1 = np.array([[0, 1], [1, 0]], dtype=complex)
_S2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
_S3 = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class Grid1D:
    """n nodes on [lo, hi], offset half a step from both ends."""

    n: int
    lo: float
    hi: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidGridError("grid needs an integer n >= 2")
        if not self.hi > self.lo:
            raise InvalidGridError("grid needs hi > lo")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.h

    @property
    def midpoints(self) -> np.ndarray:
        """The n - 1 interior points halfway between consecutive nodes."""
        return self.lo + np.arange(1, self.n) * self.h


def meridian_grid(g: OffsetGeometry, n: int) -> Grid1D:
    if n % 2:
        raise InvalidGridError("meridian grid needs an even node count (two spinor sublattices)")
    return Grid1D(n, 0.0, g.profile.length)


def normal_grid(eps: float, n: int) -> Grid1D:
    return Grid1D(n, -eps, eps)


@dataclass(frozen=True)
class OperatorMatrix:
    """Sparse matrix plus a description of the basis it acts on.

    ``basis`` carries coordinate arrays with one entry per basis vector
    (``u``, ``s``, ``comp`` for the X-spinor component and ``ncomp`` for the
    normal component where applicable).  ``kind`` is ``"hermitian"`` or
    ``"skew"``.
    """

    matrix: sp.csr_matrix
    basis: dict[str, Any]
    mode: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)
    kind: str = "hermitian"

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def symmetry_error(self) -> float:
        """Relative Frobenius defect from (skew-)Hermiticity."""
        m = self.matrix
        sign = 1.0 if self.kind == "hermitian" else -1.0
        nrm = sp.linalg.norm(m)
        if nrm == 0.0:
            return 0.0
        return float(sp.linalg.norm(m - sign * m.conj().T) / nrm)

    def __add__(self, other: OperatorMatrix) -> OperatorMatrix:
        if self.shape != other.shape:
            raise ValueError("shape mismatch")
        kind = self.kind if self.kind == other.kind else "general"
        return OperatorMatrix((self.matrix + other.matrix).tocsr(), self.basis, self.mode,
                              {**self.meta, **other.meta}, kind)


@dataclass(frozen=True)
class GradingMatrix:
    """Diagonal +-1 grading over the same basis as its operator."""

    diag: np.ndarray
    label: str

    @property
    def matrix(self) -> sp.dia_matrix:
        return sp.diags(self.diag.astype(complex))

    def anticommutator_error(self, op: OperatorMatrix) -> float:
        """max |G M G + M| / max |M|."""
        m = op.matrix.tocoo()
        if m.nnz == 0:
            return 0.0
        flip = self.diag[m.row] * self.diag[m.col] * m.data + m.data
        return float(np.max(np.abs(flip)) / np.max(np.abs(m.data)))


# ---------------------------------------------------------------------------
# meridian Dirac operator of a single leaf
# ---------------------------------------------------------------------------

def _check_mode(g: OffsetGeometry, m: float) -> float:
    two_m = 2.0 * float(m)
    if abs(two_m - round(two_m)) > 1e-12:
        raise InvalidModeError(f"mode {m!r} is neither integer nor half-integer")
    half = int(round(two_m)) % 2 == 1
    prof = g.profile
    if prof.has_poles and not half:
        raise InvalidModeError(f"mode {m!r}: profiles through the axis need half-integer modes")
    if not prof.has_poles:
        want_half = prof.spin_structure == "antiperiodic"
        if half != want_half:
            kind = "half-integer" if want_half else "integer"
            raise InvalidModeError(f"mode {m!r}: {prof.spin_structure} spin structure needs {kind} modes")
    return float(m)


def component_layout(m: float, n: int) -> np.ndarray:
    """Spinor component (0 upper, 1 lower) carried by each meridian node.

    For m > 0 the upper component is the regular one at u = 0, so it takes
    the first node; m < 0 mirrors the assignment, which makes D_{-m} the
    component-swapped copy of D_m.
    """
    comp = np.arange(n) % 2
    return comp if m > 0 else 1 - comp


def _meridian_edges(g: OffsetGeometry, m: float, s: float, grid_u: Grid1D):
    """Edge list (i, j, value) for the upper triangle of the leaf operator."""
    n, h = grid_u.n, grid_u.h
    comp = component_layout(m, n)
    i = np.arange(n - 1)
    j = i + 1
    ue = grid_u.midpoints
    sign = np.ones(n - 1)
    if not g.profile.has_poles:
        # closing edge across u = L ~ 0
        i = np.r_[i, n - 1]
        j = np.r_[j, 0]
        ue = np.r_[ue, 0.0]
        sign = np.r_[sign, -1.0 if g.profile.spin_structure == "antiperiodic" else 1.0]
    binv = 1.0 / g.a(ue, s)
    pot = m / g.r(ue, s)
    ci, cj = comp[i], comp[j]
    # -i sigma_1 sym(a^-1 d/du) + sigma_2 m / r, each coupling averaged over the edge
    val = -1j * binv / (2.0 * h) * _S1[ci, cj] + 0.5 * pot * _S2[ci, cj]
    return i, j, sign * val, comp


def _leaf_matrix(g, m, s, grid_u):
    i, j, v, comp = _meridian_edges(g, m, s, grid_u)
    n = grid_u.n
    mat = sp.coo_matrix((np.r_[v, np.conj(v)], (np.r_[i, j], np.r_[j, i])), shape=(n, n))
    return mat.tocsr(), comp


def assemble_mode_dirac(g: OffsetGeometry, m: float, s: float, grid_u: Grid1D) -> OperatorMatrix:
    """Half-density Dirac operator of the leaf X_s restricted to Fourier mode m.

    Continuum form on the metric a^2 du^2 + r^2 dphi^2, after conjugation by
    sqrt(a r)::

        -i sigma_1 (1/2){a^-1, d/du} + sigma_2 m / r

    The matrix is n x n: one spinor component per node.
    """
    m = _check_mode(g, m)
    g.check_offset(s)
    if abs(grid_u.lo) > 0 or abs(grid_u.hi - g.profile.length) > 1e-12 * g.profile.length:
        raise InvalidGridError("meridian grid must span [0, L]")
    if grid_u.n % 2:
        raise InvalidGridError("meridian grid needs an even node count")
    mat, comp = _leaf_matrix(g, m, s, grid_u)
    basis = {"u": grid_u.nodes, "comp": comp, "u_span": (grid_u.lo, grid_u.hi),
             "u_boundary": _u_boundary(g)}
    return OperatorMatrix(mat, basis, m, {"s": float(s)})


def chirality(op: OperatorMatrix) -> GradingMatrix:
    """gamma = sigma_3 on the X-spinor factor of any assembled operator."""
    return GradingMatrix(1.0 - 2.0 * op.basis["comp"], "gamma_s")


# ---------------------------------------------------------------------------
# normal operator T
# ---------------------------------------------------------------------------

def _check_normal_grid(eps: float, grid_s: Grid1D):
    if not eps > 0:
        raise InvalidGridError("eps must be positive")
    tol = 1e-12 * eps
    if abs(grid_s.lo + eps) > tol or abs(grid_s.hi - eps) > tol:
        raise InvalidGridError(f"normal grid must span (-{eps!r}, {eps!r})")
    x = np.r_[grid_s.nodes, grid_s.midpoints]
    if np.any(np.abs(x) >= eps):
        raise InvalidGridError("normal grid reaches +-eps where f diverges")


def f_profile(eps: float, s):
    """f(s) = -(pi / 2 eps) tan(pi s / 2 eps)."""
    k = math.pi / (2.0 * eps)
    return -k * np.tan(k * np.asarray(s, dtype=float))


def _t_plus(eps: float, grid_s: Grid1D) -> sp.csr_matrix:
    """Chiral block T_+ = i d/ds - i f, from primal to dual nodes, (n-1) x n."""
    n, h = grid_s.n, grid_s.h
    f = f_profile(eps, grid_s.midpoints)
    rows = np.r_[np.arange(n - 1), np.arange(n - 1)]
    cols = np.r_[np.arange(n - 1), np.arange(1, n)]
    vals = np.r_[-1j / h - 0.5j * f, 1j / h - 0.5j * f]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))


def assemble_normal_T(eps: float, grid_s: Grid1D) -> OperatorMatrix:
    """T = i sigma_1 d/ds - f sigma_2 on (-eps, eps), size (2n-1) x (2n-1).

    Basis: first component at the n primal nodes, second at the n-1 midpoints.
    """
    _check_normal_grid(eps, grid_s)
    tp = _t_plus(eps, grid_s)
    mat = sp.bmat([[None, tp.conj().T], [tp, None]], format="csr")
    n = grid_s.n
    basis = {"s": np.r_[grid_s.nodes, grid_s.midpoints],
             "ncomp": np.r_[np.zeros(n, int), np.ones(n - 1, int)],
             "s_span": (grid_s.lo, grid_s.hi)}
    return OperatorMatrix(mat, basis, None, {"epsilon": float(eps)})


def normal_grading(op: OperatorMatrix) -> GradingMatrix:
    """sigma_3 on the normal factor."""
    return GradingMatrix(1.0 - 2.0 * op.basis["ncomp"], "sigma_3")


def rescale_grid(grid_s: Grid1D) -> Grid1D:
    """Map a normal grid on (-eps, eps) to (-1, 1) by s -> s / eps."""
    eps = 0.5 * (grid_s.hi - grid_s.lo)
    if abs(grid_s.hi + grid_s.lo) > 1e-12 * eps:
        raise InvalidGridError("normal grid must be symmetric about 0")
    return Grid1D(grid_s.n, grid_s.lo / eps, grid_s.hi / eps)


# ---------------------------------------------------------------------------
# product operator
# ---------------------------------------------------------------------------

def _leaf_parts(g, m, s, grid_u, lam_u):
    """(D block, A block) at one offset, in the product's flat representation.

    With D the Hermitian half-density leaf matrix and L = Lambda at the nodes,
    the leaf Dirac operator carried over to the s-independent weight is
    L^{1/2} D L^{-1/2}, and the correction is the skew part
    A = (L^{-1/2} D L^{1/2} - L^{1/2} D L^{-1/2}) / 2, the lattice form of
    (1 / 2 Lambda)[D, Lambda].  Their sum is Hermitian.
    """
    d, _ = _leaf_matrix(g, m, s, grid_u)
    d = d.tocoo()
    q = np.sqrt(lam_u[d.row] / lam_u[d.col])
    dblk = sp.csr_matrix((d.data * q, (d.row, d.col)), shape=d.shape)
    ablk = sp.csr_matrix((0.5 * d.data * (1.0 / q - q), (d.row, d.col)), shape=d.shape)
    return dblk, ablk


def _u_boundary(g: OffsetGeometry) -> str:
    return "dirichlet" if g.profile.has_poles else g.profile.spin_structure


def _product_basis(grid_u, grid_s, comp, u_boundary):
    nu, ns = grid_u.n, grid_s.n
    s_all = np.r_[grid_s.nodes, grid_s.midpoints]
    return {
        "u": np.tile(grid_u.nodes, 2 * ns - 1),
        "s": np.repeat(s_all, nu),
        "comp": np.tile(comp, 2 * ns - 1),
        "ncomp": np.repeat(np.r_[np.zeros(ns, int), np.ones(ns - 1, int)], nu),
        "n_u": nu,
        "n_s": ns,
        "u_span": (grid_u.lo, grid_u.hi),
        "s_span": (grid_s.lo, grid_s.hi),
        "u_boundary": u_boundary,
    }


@dataclass(frozen=True)
class ProductParts:
    """Pieces of the product operator: D-blocks, A-term, gamma (x) T and the grading."""

    dirac: OperatorMatrix
    a_term: OperatorMatrix
    normal: OperatorMatrix
    grading: GradingMatrix

    @property
    def d1(self) -> OperatorMatrix:
        """Leafwise part D_{X.} + A (Hermitian)."""
        return self.dirac + self.a_term

    @property
    def total(self) -> OperatorMatrix:
        return self.d1 + self.normal


def product_parts(g: OffsetGeometry, m: float, eps: float, grid_u: Grid1D, grid_s: Grid1D,
                  t: float = 1.0, *, t_scale: float = 1.0, s_scale: float = 1.0) -> ProductParts:
    """Assemble every piece of D_{X_{st}} + A(., st) + gamma (x) T.

    ``s_scale`` and ``t_scale`` support the rescaled form: leaf coefficients
    are evaluated at ``s * s_scale * t`` and T is multiplied by ``t_scale``.
    """
    m = _check_mode(g, m)
    if not 0.0 <= t <= 1.0:
        raise ValueError("homotopy parameter t must lie in [0, 1]")
    if eps * s_scale > g.max_offset * (1.0 + 1e-12):
        g.check_offset(eps * s_scale)
    t_op = assemble_normal_T(eps, grid_s)
    s_all = np.r_[grid_s.nodes, grid_s.midpoints] * s_scale * t
    u = grid_u.nodes
    d_blocks, a_blocks = [], []
    for s in s_all:
        dblk, ablk = _leaf_parts(g, m, s, grid_u, lam(g, u, s))
        d_blocks.append(dblk)
        a_blocks.append(ablk)
    comp = component_layout(m, grid_u.n)
    gam = 1.0 - 2.0 * comp
    tp = _t_plus(eps, grid_s) * t_scale
    ns = grid_s.n
    off = sp.kron(tp, sp.diags(gam.astype(complex)), format="csr")
    normal = sp.bmat([[None, off.conj().T], [off, None]], format="csr")
    basis = _product_basis(grid_u, grid_s, comp, _u_boundary(g))
    meta = {"epsilon": float(eps), "t": float(t)}
    dmat = OperatorMatrix(sp.block_diag(d_blocks, format="csr"), basis, m, meta, "general")
    amat = OperatorMatrix(sp.block_diag(a_blocks, format="csr"), basis, m, meta, "skew")
    nmat = OperatorMatrix(normal, basis, m, meta)
    sig3 = np.repeat(np.r_[np.ones(ns), -np.ones(ns - 1)], grid_u.n)
    grading = GradingMatrix(np.tile(gam, 2 * ns - 1) * sig3, "Gamma")
    return ProductParts(dmat, amat, nmat, grading)


def _finish(parts: ProductParts):
    tot = parts.total
    return OperatorMatrix(tot.matrix, tot.basis, tot.mode, tot.meta, "hermitian"), parts.grading


def assemble_product(g, m, eps, grid_u, grid_s):
    """H = (D_{X.} + A) (x) 1 + gamma (x) T_eps with its grading Gamma = gamma (x) sigma_3."""
    return assemble_homotopy(g, m, eps, 1.0, grid_u, grid_s)


def assemble_homotopy(g, m, eps, t, grid_u, grid_s):
    """Homotopy family: leaf coefficients at offset s*t; t = 0 gives D_{X_0} (x) 1 + gamma (x) T."""
    return _finish(product_parts(g, m, eps, grid_u, grid_s, t))


def assemble_product_rescaled(g, m, eps, grid_u, unit_grid_s):
    """D_{X_{eps s}} + A_{eps s} + (1/eps) gamma (x) T_1 on a normal grid over (-1, 1)."""
    return _finish(product_parts(g, m, 1.0, grid_u, unit_grid_s, 1.0,
                                 t_scale=1.0 / eps, s_scale=eps))


def assemble_A_term(g: OffsetGeometry, m: float, grid_u: Grid1D, grid_s: Grid1D) -> OperatorMatrix:
    """Correction A = (1/2 Lambda)[D_{X_s}, Lambda], block diagonal over the normal nodes.

    The result is skew-Hermitian (a commutator of two self-adjoint operators).
    """
    eps = 0.5 * (grid_s.hi - grid_s.lo)
    return product_parts(g, m, eps, grid_u, grid_s).a_term


# ---------------------------------------------------------------------------
# twist unitary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwistReport:
    operator_error: float
    grading_error: float
    unitarity_error: float

    def ok(self, tol: float = 1e-13) -> bool:
        return max(self.operator_error, self.grading_error, self.unitarity_error) <= tol


TWIST_BLOCKS = ((1j, 0, 0, 0), (0, 0, 0, 1j), (0, 0, 1, 0), (0, -1, 0, 0))


def twist_unitary(d: int) -> np.ndarray:
    """The 4 x 4 block unitary over (Sigma+ + Sigma-) (x) C^2, each block d x d.

    Block order: outer index is the C^2 factor, inner the chirality.
    """
    return np.kron(np.array(TWIST_BLOCKS, dtype=complex), np.eye(d))


def _outer(a, b):
    """a (x) b with b acting on the outer C^2 factor."""
    return np.kron(b, a)


def verify_twist_unitary(seed: int | None = None, d: int = 4, *, dirac=None, fvals=None,
                         deriv=None) -> TwistReport:
    """Check the twist identity on finite-dimensional placeholders.

    U (f (x) s1 + i g (D + d) (x) s2) U* == D (x) 1 + g (i d) (x) s1 - g f (x) s2
    and U (1 (x) s3) U* == g (x) s3, with g the chirality, D an odd Hermitian
    placeholder, d an even anti-Hermitian one and f an even Hermitian one.
    Placeholders not passed are drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    eye, zero = np.eye(d), np.zeros((d, d))
    gam = np.block([[eye, zero], [zero, -eye]])

    def cplx(shape):
        return rng.normal(size=shape) + 1j * rng.normal(size=shape)

    if dirac is None:
        x = cplx((d, d))
        dirac = np.block([[zero, x], [x.conj().T, zero]])
    if deriv is None:
        p1, p2 = cplx((d, d)), cplx((d, d))
        deriv = np.block([[p1 - p1.conj().T, zero], [zero, p2 - p2.conj().T]]) / 2
    if fvals is None:
        q1, q2 = cplx((d, d)), cplx((d, d))
        fvals = np.block([[q1 + q1.conj().T, zero], [zero, q2 + q2.conj().T]]) / 2
    fvals = np.asarray(fvals) * np.eye(2 * d) if np.ndim(fvals) == 0 else np.asarray(fvals)
    u = twist_unitary(d)
    before = _outer(fvals, _S1) + _outer(1j * gam @ (dirac + deriv), _S2)
    after = _outer(dirac, np.eye(2)) + _outer(gam @ (1j * deriv), _S1) - _outer(gam @ fvals, _S2)
    g_before = _outer(np.eye(2 * d), _S3)
    g_after = _outer(gam, _S3)
    scale = max(np.abs(after).max(), 1.0)
    return TwistReport(
        operator_error=float(np.abs(u @ before @ u.conj().T - after).max() / scale),
        grading_error=float(np.abs(u @ g_before @ u.conj().T - g_after).max()),
        unitarity_error=float(np.abs(u @ u.conj().T - np.eye(4 * d)).max()),
    )
