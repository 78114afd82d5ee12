"""Eigenvalues, graded kernels and the weak-anticommutation probe."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotHermitianError
from .operators import GradingMatrix, OperatorMatrix

DENSE_LIMIT = 8192
HERMITIAN_TOL = 1e-12
RESIDUAL_TOL = 1e-8
GAP_RATIO_MIN = 10.0
CHIRALITY_TOL = 1e-6
DEFAULT_SEED = 20240607


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    norm: float
    vectors: np.ndarray | None = None
    sectors: list = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    method: str = "dense"
    complete: bool = True

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def residual_bound(self) -> float:
        return float(self.residuals.max()) if len(self.residuals) else 0.0

    @property
    def residual_ok(self) -> bool:
        return self.residual_bound <= RESIDUAL_TOL * max(self.norm, 1e-300)

    def smallest_abs(self, k: int) -> np.ndarray:
        order = np.argsort(np.abs(self.eigenvalues), kind="stable")
        return self.eigenvalues[order[:k]]


@dataclass(frozen=True)
class IndexResult:
    kernel_dim_plus: int
    kernel_dim_minus: int
    kernel_threshold: float
    gap_ratio: float
    indeterminate: bool = False
    kernel_values: tuple = ()
    note: str = ""

    @property
    def index(self) -> int:
        return self.kernel_dim_plus - self.kernel_dim_minus


def _as_sparse(M) -> sp.csr_matrix:
    if isinstance(M, OperatorMatrix):
        return M.matrix.tocsr()
    if sp.issparse(M):
        return M.tocsr()
    return sp.csr_matrix(np.asarray(M))


def _norm_bound(A: sp.csr_matrix) -> float:
    # max column sum; for a Hermitian matrix this bounds the spectral norm
    if A.nnz == 0:
        return 0.0
    return float(abs(A).sum(axis=0).max())


def check_hermitian(M, tol: float = HERMITIAN_TOL) -> float:
    A = _as_sparse(M)
    nrm = spla.norm(A)
    err = 0.0 if nrm == 0 else float(spla.norm(A - A.conj().T) / nrm)
    if err > tol:
        raise NotHermitianError(f"matrix is not Hermitian (relative defect {err:.3e})")
    return err


def eig_symmetric(M, k: int | None = None, seed: int = DEFAULT_SEED, method: str = "auto",
                  vectors: bool = True) -> SpectrumResult:
    """Eigenpairs of a Hermitian matrix.

    Dense full decomposition up to ``DENSE_LIMIT``; above that (or with
    method="sparse") the k smallest-|lambda| pairs by shift-invert Lanczos
    around a tiny positive shift, started from a seeded vector.  With k given,
    only the k smallest-|lambda| pairs are kept.  Eigenvalues come back sorted
    ascending.
    """
    A = _as_sparse(M)
    check_hermitian(A)
    n = A.shape[0]
    nrm = _norm_bound(A)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT or k is None else "sparse"
    if method == "sparse" and (k is None or k + 2 >= n):
        method = "dense"

    if method == "dense":
        w, v = sla.eigh(A.toarray())
        complete = k is None or k >= n
        if not complete:
            keep = np.sort(np.argsort(np.abs(w), kind="stable")[:k])
            w, v = w[keep], v[:, keep]
    elif method == "sparse":
        rng = np.random.default_rng(seed)
        v0 = rng.normal(size=n) + 1j * rng.normal(size=n)
        sigma = 1e-9 * max(nrm, 1.0) * (math.sqrt(5) - 1) / 2
        w, v = spla.eigsh(A.astype(complex), k=min(k + 2, n - 2), sigma=sigma, which="LM", v0=v0)
        keep = np.argsort(np.abs(w), kind="stable")[:k]
        w, v = w[keep], v[:, keep]
        order = np.argsort(w, kind="stable")
        w, v = w[order], v[:, order]
        complete = False
    else:
        raise ValueError(f"unknown method {method!r}")
    res = np.linalg.norm(A @ v - v * w, axis=0) if len(w) else np.zeros(0)
    mode = M.mode if isinstance(M, OperatorMatrix) else None
    meta = dict(M.meta) if isinstance(M, OperatorMatrix) else {}
    return SpectrumResult(np.asarray(w, dtype=float), res, nrm, v if vectors else None,
                          [mode] * len(w), meta, method, complete)


def _grading_diag(G) -> np.ndarray:
    if isinstance(G, GradingMatrix):
        return np.asarray(G.diag, dtype=float)
    if sp.issparse(G):
        return np.real(G.diagonal())
    G = np.asarray(G)
    return np.real(np.diag(G)) if G.ndim == 2 else np.real(G)


def graded_index(M, G, spectrum: SpectrumResult | None = None, scale: float | None = None,
                 gap_min: float = GAP_RATIO_MIN) -> IndexResult:
    """Graded kernel dimensions of a grading-odd Hermitian matrix.

    The kernel is the block of smallest |lambda| below the largest
    multiplicative gap among |lambda| < 0.5 * scale (or 0.1 * spectral span
    when no scale is given).  A virtual floor of 1e-9 * ||M|| sits below the
    spectrum, so an empty kernel competes on equal terms.  Kernel vectors are
    sorted into sectors by the eigenvalues of the grading compressed to the
    kernel, which are +-1 when the kernel is graded.
    """
    A = _as_sparse(M)
    d = _grading_diag(G)
    coo = A.tocoo()
    if coo.nnz and np.max(np.abs(d[coo.row] * d[coo.col] * coo.data + coo.data)) > 1e-12 * np.max(np.abs(coo.data)):
        raise ValueError("grading does not anticommute with the operator")
    if spectrum is None or spectrum.vectors is None:
        spectrum = eig_symmetric(A)
    lam = np.abs(spectrum.eigenvalues)
    order = np.argsort(lam, kind="stable")
    a = lam[order]
    nrm = spectrum.norm if spectrum.norm > 0 else _norm_bound(A)
    floor = 1e-9 * max(nrm, 1e-300)
    if scale is not None:
        cutoff = 0.5 * float(scale)
    else:
        ev = spectrum.eigenvalues
        cutoff = 0.1 * (float(ev.max() - ev.min()) if len(ev) else 0.0)
    if len(a) == 0:
        return IndexResult(0, 0, cutoff, 0.0, True, (), "empty spectrum")
    n_below = int(np.sum(a < cutoff))
    note = ""
    if n_below >= len(a):
        # a truncated spectrum: its largest value is the only known gap edge
        n_below = len(a) - 1
        note = "kernel search limited by the computed spectrum"
    best_k, best_ratio = 0, -1.0
    for kk in range(n_below + 1):
        below = floor if kk == 0 else max(a[kk - 1], floor)
        ratio = a[kk] / below
        if ratio > best_ratio:
            best_k, best_ratio = kk, ratio
    thresh = math.sqrt(max(a[best_k - 1], floor) * a[best_k]) if best_k else math.sqrt(floor * a[0])
    if best_k == 0:
        return IndexResult(0, 0, thresh, float(best_ratio), bool(best_ratio < gap_min), (), note)
    K = spectrum.vectors[:, order[:best_k]]
    P = K.conj().T @ (d[:, None] * K)
    chi = np.linalg.eigvalsh(0.5 * (P + P.conj().T))
    plus = int(np.sum(chi > 0))
    minus = best_k - plus
    graded = np.all(np.abs(np.abs(chi) - 1.0) <= CHIRALITY_TOL)
    if not graded:
        note = "kernel is not invariant under the grading"
    return IndexResult(plus, minus, thresh, float(best_ratio),
                       bool(best_ratio < gap_min or not graded), tuple(float(x) for x in a[:best_k]), note)


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)   # (sector, lambda_a, lambda_b, |delta|)
    truncated: bool = False

    @property
    def gaps(self) -> np.ndarray:
        return np.array([p[3] for p in self.pairs])

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max()) if self.pairs else 0.0


def _by_sector(spec: SpectrumResult) -> dict:
    labels = spec.sectors if len(spec.sectors) == len(spec.eigenvalues) else [None] * len(spec)
    out: dict = {}
    for lab, val in zip(labels, spec.eigenvalues):
        out.setdefault(lab, []).append(val)
    return {lab: np.array(v) for lab, v in out.items()}


def match_spectra(A: SpectrumResult, B: SpectrumResult, count: int) -> MatchResult:
    """Pair the ``count`` smallest-|lambda| values of A and B sector by sector.

    Within a sector both selections are sorted ascending and paired by order
    statistic.  Sectors present in only one input are skipped.  If either side
    has fewer than ``count`` values in a sector the pairing is shortened and
    ``truncated`` is set.
    """
    sa, sb = _by_sector(A), _by_sector(B)
    res = MatchResult()
    for lab in sorted((k for k in sa if k in sb), key=lambda x: (x is None, x)):
        va, vb = sa[lab], sb[lab]
        k = min(count, len(va), len(vb))
        if k < count:
            res.truncated = True
        pa = np.sort(va[np.argsort(np.abs(va), kind="stable")[:k]])
        pb = np.sort(vb[np.argsort(np.abs(vb), kind="stable")[:k]])
        res.pairs.extend((lab, float(x), float(y), float(abs(x - y))) for x, y in zip(pa, pb))
    if res.truncated:
        warnings.warn("match_spectra: fewer eigenvalues than requested in some sector", stacklevel=2)
    return res


# ---------------------------------------------------------------------------
# weak anticommutation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeResult:
    anticommutator_ratio: np.ndarray
    domination_ratio: np.ndarray

    @property
    def max_anticommutator(self) -> float:
        return float(self.anticommutator_ratio.max())

    @property
    def max_domination(self) -> float:
        return float(self.domination_ratio.max())

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.anticommutator_ratio)) and np.all(np.isfinite(self.domination_ratio)))


def _u_modes(u, lo, hi, boundary, nmodes):
    x = (np.asarray(u) - lo) / (hi - lo)
    if boundary == "dirichlet":
        return [np.sin(math.pi * (j + 1) * x) for j in range(nmodes)]
    shift = 0.5 if boundary == "antiperiodic" else 0.0
    out = []
    for j in range(nmodes):
        q = (j // 2 + shift) * (1 if j % 2 == 0 else -1)
        out.append(np.exp(2j * math.pi * q * x))
    return out


def band_limited_vector(basis: dict, coeffs: np.ndarray) -> np.ndarray:
    """Evaluate a smooth test vector on a product basis.

    ``coeffs[c, nc, j, k]`` multiplies u-mode j and s-mode k of X-component c
    and normal component nc; the modes vanish (or wrap) at the boundary the
    way the discrete operator expects, so the same coefficient array gives
    the same continuum function at every resolution.
    """
    nmu, nms = coeffs.shape[2], coeffs.shape[3]
    lo, hi = basis["u_span"]
    slo, shi = basis["s_span"]
    umodes = np.array(_u_modes(basis["u"], lo, hi, basis["u_boundary"], nmu))
    y = (basis["s"] - slo) / (shi - slo)
    smodes = np.array([np.sin(math.pi * (k + 1) * y) for k in range(nms)])
    c = basis["comp"]
    nc = basis["ncomp"]
    picked = coeffs[c, nc]                      # (N, nmu, nms)
    return np.einsum("njk,jn,kn->n", picked, umodes, smodes)


def anticommutator_probe(D1: OperatorMatrix, D2: OperatorMatrix, trials: int = 100,
                         seed: int = DEFAULT_SEED, nmodes: tuple[int, int] = (4, 4)) -> ProbeResult:
    """Empirical weak-anticommutation ratios over seeded smooth vectors.

    Per trial: ||{D1, D2} psi||^2 / (||psi||^2 + ||D1 psi||^2) and
    (||psi||^2 + ||D1 psi||^2 + ||D2 psi||^2) / (||psi||^2 + ||(D1 + D2) psi||^2).
    Mode coefficients decay like 1/(j k) so the vectors model smooth data.
    """
    if D1.shape != D2.shape:
        raise ValueError("operators act on different spaces")
    A1, A2 = D1.matrix, D2.matrix
    rng = np.random.default_rng(seed)
    nmu, nms = nmodes
    decay = 1.0 / np.outer(np.arange(1, nmu + 1), np.arange(1, nms + 1))
    r1 = np.empty(trials)
    r2 = np.empty(trials)
    for t in range(trials):
        c = rng.normal(size=(2, 2, nmu, nms)) + 1j * rng.normal(size=(2, 2, nmu, nms))
        psi = band_limited_vector(D1.basis, c * decay)
        p2 = np.vdot(psi, psi).real
        d1 = A1 @ psi
        d2 = A2 @ psi
        anti = A1 @ d2 + A2 @ d1
        n1 = np.vdot(d1, d1).real
        n2 = np.vdot(d2, d2).real
        s = d1 + d2
        r1[t] = np.vdot(anti, anti).real / (p2 + n1)
        r2[t] = (p2 + n1 + n2) / (p2 + np.vdot(s, s).real)
    return ProbeResult(r1, r2)
