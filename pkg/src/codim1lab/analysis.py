"""Refinement and epsilon sweeps: expansion, curvature limit, homotopy, decomposition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .geometry import OffsetGeometry, fermi_chart, lam, trace_ii
from .operators import (
    GradingMatrix,
    OperatorMatrix,
    assemble_homotopy,
    assemble_mode_dirac,
    assemble_normal_T,
    assemble_product,
    assemble_product_rescaled,
    meridian_grid,
    normal_grading,
    normal_grid,
)
from .spectral import eig_symmetric, graded_index

EXACT_FLOOR = 1e-13


@dataclass
class ConvergenceReport:
    param_name: str
    params: np.ndarray
    errors: np.ndarray
    fitted_order: float | None = None
    fit_residual: float | None = None
    monotone: bool = True
    exact: bool = False
    flags: list = field(default_factory=list)
    details: list = field(default_factory=list)

    def records(self):
        return [{"param_name": self.param_name, "param_value": float(p), "error": float(e)}
                for p, e in zip(self.params, self.errors)]

    def summary(self):
        return {"param_name": self.param_name, "fitted_order": self.fitted_order,
                "fit_residual": self.fit_residual, "monotone": self.monotone,
                "exact": self.exact, "flags": list(self.flags)}


def fit_order(params, errors):
    """Least-squares slope and rms residual of log(error) against log(param)."""
    x = np.log(np.asarray(params, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = math.sqrt(res[0] / len(x)) if len(res) else 0.0
    return float(coef[0]), rms


def make_report(name, params, errors, floor=EXACT_FLOOR, details=None,
                decreasing=True) -> ConvergenceReport:
    """Build a report; params are sorted descending before fitting.

    ``monotone`` asks for strictly decreasing errors as the parameter shrinks
    (strictly increasing with ``decreasing=False``).  Errors all at or below
    ``floor`` make the report exact with no order.
    """
    params = np.asarray(params, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(params) < 3:
        raise ValueError("a convergence fit needs at least 3 sample points")
    if np.any(errors < 0) or not np.all(np.isfinite(errors)):
        raise ValueError("errors must be finite and nonnegative")
    order = np.argsort(-params, kind="stable")
    params, errors = params[order], errors[order]
    if details is not None:
        details = [details[i] for i in order]
    rep = ConvergenceReport(name, params, errors, details=details or [])
    if np.all(errors <= floor):
        rep.exact = True
        return rep
    step = np.diff(errors)
    rep.monotone = bool(np.all(step < 0) if decreasing else np.all(step > 0))
    if not rep.monotone:
        rep.flags.append("non-monotone")
    if np.any(errors <= 0):
        rep.flags.append("zero error at some sample; not fitted")
        return rep
    rep.fitted_order, rep.fit_residual = fit_order(params, errors)
    return rep


def _check_eps_list(epsilons, g: OffsetGeometry | None = None):
    eps = [float(e) for e in epsilons]
    if len(eps) < 3:
        raise ValueError("need at least 3 epsilon values")
    if any(e <= 0 for e in eps):
        raise ValueError("epsilon values must be positive")
    if g is not None:
        for e in eps:
            g.check_offset(e)
    return eps


# ---------------------------------------------------------------------------
# eps -> 0 expansion
# ---------------------------------------------------------------------------

def _stub_product(eps: float, n_s: int):
    """gamma (x) T_eps with a zero leaf operator on a single spinor pair."""
    t = assemble_normal_T(eps, normal_grid(eps, n_s))
    gam = sp.diags([1.0, -1.0])
    tp = t.matrix[n_s:, :n_s]
    off = sp.kron(tp, gam, format="csr")
    mat = sp.bmat([[None, off.conj().T], [off, None]], format="csr")
    g_diag = np.kron(normal_grading(t).diag, np.array([1.0, -1.0]))
    return OperatorMatrix(mat, {}, None, {"epsilon": eps}), GradingMatrix(g_diag, "Gamma")


def expansion_sweep(g: OffsetGeometry | None, modes: Sequence[float], epsilons: Sequence[float],
                    n_u: int = 96, n_s: int = 96, k: int = 4, method: str = "sparse",
                    rescaled: bool = False, seed: int = 0) -> ConvergenceReport:
    """Low spectrum of H(eps) against the leaf operator at s = 0.

    Per eps the error is the largest |delta| over modes after pairing the k
    smallest-|lambda| eigenvalues of H(eps) and of D_{X_0, m} by order
    statistic.  ``g=None`` runs the point stub (zero leaf operator), whose
    low spectrum is exactly the two-dimensional kernel of gamma (x) T.
    """
    eps_list = _check_eps_list(epsilons, g)
    errors, details, norm = [], [], 0.0
    if g is None:
        ref = {None: np.zeros(2)}
        modes = [None]
        k = 2
    else:
        gu = meridian_grid(g, n_u)
        ref = {}
        for m in modes:
            d0 = eig_symmetric(assemble_mode_dirac(g, m, 0.0, gu), k, seed=seed, method="dense")
            ref[m] = np.sort(d0.eigenvalues)
    for eps in eps_list:
        worst, rows = 0.0, []
        for m in modes:
            if g is None:
                H, _ = _stub_product(eps, n_s)
            elif rescaled:
                H, _ = assemble_product_rescaled(g, m, eps, gu, normal_grid(1.0, n_s))
            else:
                H, _ = assemble_product(g, m, eps, gu, normal_grid(eps, n_s))
            spec = eig_symmetric(H, k, seed=seed, method=method, vectors=False)
            norm = max(norm, spec.norm)
            low = np.sort(spec.smallest_abs(k))
            delta = np.abs(low - ref[m])
            worst = max(worst, float(delta.max()))
            rows.append({"mode": m, "eigenvalues": low.tolist(), "reference": ref[m].tolist(),
                         "delta": delta.tolist()})
        errors.append(worst)
        details.append(rows)
    # rounding level of the largest operator in the sweep
    return make_report("epsilon", eps_list, errors, floor=1e-13 * norm, details=details)


def divergent_term_check(epsilons: Sequence[float], n_s: int = 512) -> ConvergenceReport:
    """Smallest nonzero |eigenvalue| of T_eps against eps; the fit should give -1.

    The kernel found by the graded index is excluded.
    """
    eps_list = _check_eps_list(epsilons)
    vals, details = [], []
    for eps in eps_list:
        t = assemble_normal_T(eps, normal_grid(eps, n_s))
        spec = eig_symmetric(t)
        idx = graded_index(t, normal_grading(t), spec)
        a = np.sort(np.abs(spec.eigenvalues))
        nz = float(a[idx.kernel_dim_plus + idx.kernel_dim_minus])
        vals.append(nz)
        details.append({"kernel": list(idx.kernel_values), "index": idx.index})
    return make_report("epsilon", eps_list, vals, details=details, decreasing=False)


# ---------------------------------------------------------------------------
# curvature limit and the A field
# ---------------------------------------------------------------------------

def curvature_field(g: OffsetGeometry, u, s):
    """c(u, s) = -(1/4)(a^-1 d_u log Lambda)^2 - (1/4) Tr II_s^2."""
    grad = g.dlog_lambda_du(u, s) / g.a(u, s)
    return -0.25 * grad ** 2 - 0.25 * trace_ii(g, u, s) ** 2


def limit_field(g: OffsetGeometry, u):
    return -0.25 * trace_ii(g, u, 0.0) ** 2


@dataclass
class CurvatureReport:
    epsilons: np.ndarray
    field_sup: np.ndarray
    deviations: np.ndarray
    u: np.ndarray
    limit: np.ndarray
    convergence: ConvergenceReport


def _sample_uv(g, n_u, n_s, eps):
    u = meridian_grid(g, n_u).nodes
    s = np.linspace(-eps, eps, n_s)
    return np.meshgrid(u, s, indexing="ij")


def curvature_convergence(g: OffsetGeometry, epsilons: Sequence[float], n_u: int = 256,
                          n_s: int = 65) -> CurvatureReport:
    """sup over |s| <= eps of |c(u, s) + (1/4) Tr II_0(u)^2| per eps."""
    eps_list = _check_eps_list(epsilons, g)
    u = meridian_grid(g, n_u).nodes
    target = limit_field(g, u)
    sups, devs = [], []
    for eps in eps_list:
        uu, ss = _sample_uv(g, n_u, n_s, eps)
        c = curvature_field(g, uu, ss)
        sups.append(float(np.max(np.abs(c))))
        devs.append(float(np.max(np.abs(c - target[:, None]))))
    rep = make_report("epsilon", eps_list, devs)
    return CurvatureReport(rep.params, np.array(sups)[np.argsort(-np.array(eps_list))],
                           rep.errors, u, target, rep)


def a_term_field_norm(g: OffsetGeometry, u, s):
    """Pointwise operator norm of A = -i sigma_1 (1/2) a^-1 d_u log Lambda."""
    return 0.5 * np.abs(g.dlog_lambda_du(u, s) / g.a(u, s))


def a_term_norm_sweep(g: OffsetGeometry, epsilons: Sequence[float], n_u: int = 256,
                      n_s: int = 65) -> ConvergenceReport:
    eps_list = _check_eps_list(epsilons, g)
    sup = []
    for eps in eps_list:
        uu, ss = _sample_uv(g, n_u, n_s, eps)
        sup.append(float(np.max(a_term_field_norm(g, uu, ss))))
    return make_report("epsilon", eps_list, sup, floor=0.0)


# ---------------------------------------------------------------------------
# homotopy
# ---------------------------------------------------------------------------

@dataclass
class HomotopyReport:
    t: np.ndarray
    index: list
    indeterminate: list
    low_spectra: list            # per t: {mode: sorted low eigenvalues}
    max_jump: float
    jump_constant: float
    min_gap: float
    flags: list = field(default_factory=list)

    @property
    def constant_index(self) -> bool:
        return len(set(self.index)) == 1

    @property
    def jump_to_gap(self) -> float:
        return self.max_jump / self.min_gap if self.min_gap > 0 else math.inf


def homotopy_scan(g: OffsetGeometry, modes: Sequence[float], eps: float, t_values: Sequence[float],
                  n_u: int = 48, n_s: int = 48, k: int = 8, seed: int = 0,
                  method: str = "sparse") -> HomotopyReport:
    """Graded index and low spectrum of H_t along the homotopy.

    The gap used for the jump bound is the smaller of the two spectral gaps
    at zero (min |lambda|) of adjacent samples, per mode.
    """
    t_values = np.asarray(sorted(float(t) for t in t_values))
    if t_values[0] != 0.0 or t_values[-1] != 1.0:
        raise ValueError("t grid must include 0 and 1")
    g.check_offset(eps)
    gu, gs = meridian_grid(g, n_u), normal_grid(eps, n_s)
    index, indet, spectra, flags = [], [], [], []
    for t in t_values:
        total, bad, low = 0, False, {}
        for m in modes:
            H, G = assemble_homotopy(g, m, eps, float(t), gu, gs)
            spec = eig_symmetric(H, k, seed=seed, method=method)
            res = graded_index(H, G, spec)
            total += res.index
            bad = bad or res.indeterminate
            low[m] = np.sort(spec.eigenvalues)
        index.append(total)
        indet.append(bad)
        spectra.append(low)
        if bad:
            flags.append(f"indeterminate index at t={t:g}")
    jump, const, gap = 0.0, 0.0, math.inf
    for i in range(1, len(t_values)):
        dt = t_values[i] - t_values[i - 1]
        for m in modes:
            a, b = spectra[i - 1][m], spectra[i][m]
            d = float(np.max(np.abs(a - b)))
            jump = max(jump, d)
            const = max(const, d / dt)
            gap = min(gap, float(np.min(np.abs(a))), float(np.min(np.abs(b))))
    if len(set(index)) != 1:
        flags.append("index changes along the homotopy")
    return HomotopyReport(t_values, index, indet, spectra, jump, const, gap, flags)


# ---------------------------------------------------------------------------
# Dirac decomposition against flat space
# ---------------------------------------------------------------------------

_PAULI = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex)


def clifford(v):
    """c(v) = v . sigma for v[..., 3]."""
    return np.einsum("...i,ijk->...jk", v, _PAULI)


def random_spinor(seed: int, n_waves: int = 6, max_freq: float = 2.0) -> Callable:
    """Smooth C^2-valued field on R^3: a seeded sum of plane waves."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(n_waves, 3))
    w *= max_freq * rng.uniform(0.3, 1.0, size=(n_waves, 1)) / np.linalg.norm(w, axis=1, keepdims=True)
    c = rng.normal(size=(n_waves, 2)) + 1j * rng.normal(size=(n_waves, 2))

    def psi(x):
        ph = np.exp(1j * np.einsum("...i,ki->...k", x, w))
        return np.einsum("...k,kj->...j", ph, c)

    return psi


def _cartesian_dirac(psi, x, h):
    """i sigma . grad psi by central differences."""
    out = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        d = (psi(x + e) - psi(x - e)) / (2 * h)
        out = out + np.einsum("jk,...k->...j", 1j * _PAULI[i], d)
    return out


def _fermi_dirac(g, psi, u, phi, s, h):
    """i c(nu) (D_{X_s} - (1/2) Tr II_s + d_s) psi through the Fermi chart."""
    def at(uu, pp, ss):
        return psi(fermi_chart(g, uu, pp, ss)[0])

    _, frame = fermi_chart(g, u, phi, s)
    e_u, e_phi, nu = frame[..., 0, :], frame[..., 1, :], frame[..., 2, :]
    p0 = at(u, phi, s)
    du = (at(u + h, phi, s) - at(u - h, phi, s)) / (2 * h) / g.a(u, s)[..., None]
    dphi = (at(u, phi + h, s) - at(u, phi - h, s)) / (2 * h) / g.r(u, s)[..., None]
    ds = (at(u, phi, s + h) - at(u, phi, s - h)) / (2 * h)
    cn = clifford(nu)
    km, kp = g.kappa_mu(u), g.kappa_pi(u)
    shape = (-km / (1 - s * km), -kp / (1 - s * kp))   # nabla_{e_A} nu = shape[A] e_A

    def cs(v):
        return 1j * clifford(v) @ cn

    def mul(m, v):
        return np.einsum("...jk,...k->...j", m, v)

    dx = 0.0
    for e, d, k in ((e_u, du, shape[0]), (e_phi, dphi, shape[1])):
        conn = d + mul(0.5j * cs(k[..., None] * e), p0)
        dx = dx + mul(1j * cs(e), conn)
    inner = dx - 0.5 * trace_ii(g, u, s)[..., None] * p0 + ds
    return mul(1j * cn, inner)


def decomposition_residual(g: OffsetGeometry, h_list: Sequence[float], seed: int = 0,
                           n_points: int = 64, spinor: Callable | None = None) -> ConvergenceReport:
    """Flat-space Dirac operator against its leaf/normal decomposition.

    Both sides are evaluated with central differences of step h, the left in
    Cartesian coordinates and the right through the Fermi chart, at seeded
    sample points kept away from the axis.  The sup residual should fall as h^2.
    """
    psi = spinor if spinor is not None else random_spinor(seed)
    rng = np.random.default_rng(seed + 1)
    L = g.profile.length
    lo, hi = (0.15 * L, 0.85 * L) if g.profile.has_poles else (0.0, L)
    u = rng.uniform(lo, hi, n_points)
    phi = rng.uniform(0.0, 2 * math.pi, n_points)
    s = rng.uniform(-0.5, 0.5, n_points) * g.max_offset
    x = fermi_chart(g, u, phi, s)[0]
    errs = []
    for h in h_list:
        lhs = _cartesian_dirac(psi, x, h)
        rhs = _fermi_dirac(g, psi, u, phi, s, h)
        errs.append(float(np.max(np.abs(lhs - rhs))))
    return make_report("h", list(h_list), errs, floor=0.0)


def lambda_trace_check(g: OffsetGeometry, h_list: Sequence[float], n_u: int = 64,
                       offsets: Sequence[float] | None = None) -> ConvergenceReport:
    """Central difference of log Lambda in s against Tr II, sup over a (u, s) sample."""
    u = meridian_grid(g, n_u).nodes
    if offsets is None:
        e = g.max_offset
        offsets = (-0.25 * e, 0.0, 0.25 * e)
    uu, ss = np.meshgrid(u, np.asarray(offsets, dtype=float), indexing="ij")
    exact = trace_ii(g, uu, ss)
    errs = []
    for h in h_list:
        num = (np.log(lam(g, uu, ss + h)) - np.log(lam(g, uu, ss - h))) / (2 * h)
        errs.append(float(np.max(np.abs(num - exact))))
    return make_report("h", list(h_list), errs, floor=0.0)
