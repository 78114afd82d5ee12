"""Surfaces of revolution in flat R^3 and their normal offset families.

A surface X is generated by rotating a plane curve (rho(u), z(u)) about the
z-axis, where u is arclength along the curve.  The offset leaf X_s is the
set of points X + s*nu.  Every scalar field used by the operators lives here:
principal curvatures, the offset metric coefficients a(u, s) and r(u, s),
the volume ratio Lambda and the trace of the second fundamental form.

Sign conventions: nu = sign * (-dz/du, drho/du) in the meridian plane and
II(A, B) = -<B, D_A nu>.  With the default orientation the unit sphere has
principal curvatures (-1, -1) and Tr II = -2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, FocalViolationError, GeometryError

#: offsets are accepted up to this fraction of the focal bound
FOCAL_SAFETY = 0.9

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


# ---------------------------------------------------------------------------
# parametrised generating curves
# ---------------------------------------------------------------------------

class _Curve:
    """Plane curve theta -> (rho, z) with derivatives up to third order."""

    closed = False

    def __init__(self, t0: float, t1: float):
        self.t0, self.t1 = float(t0), float(t1)

    def derivs(self, th):  # pragma: no cover - abstract
        raise NotImplementedError

    def speed(self, th):
        r, z = self.derivs(th)
        return np.hypot(r[1], z[1])

    def shape(self, th) -> dict[str, np.ndarray]:
        """Arclength-based fields at parameter values ``th``.

        Returns rho, z, the unit tangent (rho_u, z_u), the signed curvature
        k = rho_u z_uu - z_u rho_uu, its arclength derivative k_u, and the
        ratio q = z_u / rho with derivative q_u (regular limit q -> k at the
        axis).
        """
        th = np.asarray(th, dtype=float)
        (r0, r1, r2, r3), (z0, z1, z2, z3) = self.derivs(th)
        sig = np.hypot(r1, z1)
        sig_t = (r1 * r2 + z1 * z2) / sig
        num = r1 * z2 - z1 * r2
        num_t = r1 * z3 - z1 * r3
        k = num / sig**3
        k_u = (num_t / sig**3 - 3.0 * num * sig_t / sig**4) / sig
        rho_u, z_u = r1 / sig, z1 / sig
        k, k_u = self._exact_k(th, k, k_u)
        out = dict(rho=r0, z=z0, rho_u=rho_u, z_u=z_u, k=k, k_u=k_u)
        out.update(self._ratio(th, r0, rho_u, z_u, k))
        return out

    # hooks for profiles whose curvatures are known in closed form
    def _exact_k(self, th, k, k_u):
        return k, k_u

    def _ratio(self, th, rho, rho_u, z_u, k):
        scale = max(abs(self.t1 - self.t0), 1.0)
        on_axis = np.abs(rho) < 1e-14 * scale
        safe = np.where(on_axis, 1.0, rho)
        q = np.where(on_axis, k, z_u / safe)
        z_uu = k * rho_u
        q_u = np.where(on_axis, 0.0, (z_uu * safe - z_u * rho_u) / safe**2)
        return dict(q=q, q_u=q_u)


class _Sphere(_Curve):
    def __init__(self, radius):
        super().__init__(0.0, math.pi)
        self.R = radius

    def derivs(self, th):
        R, s, c = self.R, np.sin(th), np.cos(th)
        return (R * s, R * c, -R * s, -R * c), (R * c, -R * s, -R * c, R * s)

    def _exact_k(self, th, k, k_u):
        return np.full_like(th, -1.0 / self.R), np.zeros_like(th)

    def _ratio(self, th, rho, rho_u, z_u, k):
        return dict(q=np.full_like(th, -1.0 / self.R), q_u=np.zeros_like(th))


class _Spheroid(_Curve):
    def __init__(self, a, c):
        super().__init__(0.0, math.pi)
        self.a, self.c = a, c

    def derivs(self, th):
        a, c, s, co = self.a, self.c, np.sin(th), np.cos(th)
        return (a * s, a * co, -a * s, -a * co), (c * co, -c * s, -c * co, c * s)


class _Torus(_Curve):
    closed = True

    def __init__(self, R, r):
        super().__init__(0.0, 2.0 * math.pi)
        self.R, self.r = R, r

    def derivs(self, th):
        R, r, s, c = self.R, self.r, np.sin(th), np.cos(th)
        # clockwise in the (rho, z) half-plane so the default normal points outward
        return (R + r * c, -r * s, -r * c, r * s), (-r * s, -r * c, r * s, r * c)

    def _exact_k(self, th, k, k_u):
        return np.full_like(th, -1.0 / self.r), np.zeros_like(th)


class _SplineCurve(_Curve):
    """Cubic spline through a (rho, z) sample table, chord-length parametrised."""

    def __init__(self, pts: np.ndarray):
        pts = np.asarray(pts, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 8:
            raise GeometryError("custom profile needs at least 8 (rho, z) samples")
        if np.any(pts[:, 0] < -1e-12):
            raise GeometryError("custom profile has negative rho")
        span = np.ptp(pts, axis=0).max()
        self.closed = bool(np.linalg.norm(pts[0] - pts[-1]) <= 1e-9 * span)
        if self.closed:
            t = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]
            self._sr = CubicSpline(t, pts[:, 0], bc_type="periodic")
            self._sz = CubicSpline(t, pts[:, 1], bc_type="periodic")
            super().__init__(0.0, t[-1])
            return
        if abs(pts[0, 0]) > 1e-9 * span or abs(pts[-1, 0]) > 1e-9 * span:
            raise GeometryError("open custom profile must start and end on the rotation axis")
        pts = pts.copy()
        pts[0, 0] = pts[-1, 0] = 0.0
        # mirror a few samples through each pole so the spline is regular there
        m = min(6, len(pts) - 2)
        head = pts[1:m + 1][::-1] * np.array([-1.0, 1.0])
        tail = pts[-m - 1:-1][::-1] * np.array([-1.0, 1.0])
        ext = np.vstack([head, pts, tail])
        t = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(ext, axis=0), axis=1))]
        self._sr = CubicSpline(t, ext[:, 0])
        self._sz = CubicSpline(t, ext[:, 1])
        super().__init__(t[m], t[m + len(pts) - 1])

    def derivs(self, th):
        return (tuple(self._sr(th, nu) for nu in range(4)),
                tuple(self._sz(th, nu) for nu in range(4)))


# ---------------------------------------------------------------------------
# profile curve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileCurve:
    """Unit-speed generating curve, tabulated at ``arclength_nodes``."""

    kind: str
    params: Mapping[str, Any]
    topology: str
    spin_structure: str
    arclength_nodes: np.ndarray
    length: float
    _curve: _Curve = field(repr=False, compare=False)
    _theta_tab: np.ndarray = field(repr=False, compare=False)
    _u_tab: np.ndarray = field(repr=False, compare=False)

    @property
    def has_poles(self) -> bool:
        return self.topology == "interval-with-poles"

    def _check_u(self, u):
        u = np.asarray(u, dtype=float)
        tol = 1e-12 * max(self.length, 1.0)
        if np.any(u < -tol) or np.any(u > self.length + tol):
            raise DomainError(f"arclength outside [0, {self.length!r}]")
        return np.clip(u, 0.0, self.length)

    def _arclength_of(self, th):
        """Arclength from the curve start to parameter ``th``."""
        tt, uu = self._theta_tab, self._u_tab
        i = np.clip(np.searchsorted(tt, th, side="right") - 1, 0, len(tt) - 2)
        lo = tt[i]
        half = 0.5 * (th - lo)
        x = lo[..., None] + half[..., None] * (_GL_X + 1.0)
        return uu[i] + half * (self._curve.speed(x) @ _GL_W)

    def theta(self, u):
        """Curve parameter at arclength ``u`` (Newton-refined table lookup)."""
        u = self._check_u(u)
        th = np.interp(u, self._u_tab, self._theta_tab)
        c = self._curve
        for _ in range(6):
            step = (self._arclength_of(th) - u) / c.speed(th)
            th = np.clip(th - step, c.t0, c.t1)
            if np.all(np.abs(step) < 1e-15 * (c.t1 - c.t0)):
                break
        return th

    def sample(self, u) -> dict[str, np.ndarray]:
        """All arclength fields at ``u``; see ``_Curve.shape``."""
        return self._curve.shape(self.theta(u))

    def rho(self, u):
        return self.sample(u)["rho"]

    def z(self, u):
        return self.sample(u)["z"]


_KINDS = ("sphere", "spheroid", "torus", "custom")


def _positive(spec, key):
    try:
        v = float(spec[key])
    except (KeyError, TypeError, ValueError):
        raise GeometryError(f"geometry parameter {key!r} missing or not a number") from None
    if not v > 0 or not math.isfinite(v):
        raise GeometryError(f"geometry parameter {key!r} must be positive, got {v!r}")
    return v


def build_profile(spec: Mapping[str, Any], n_nodes: int = 512) -> ProfileCurve:
    """Build a unit-speed profile from a geometry config entry.

    ``spec`` holds ``kind`` plus the parameters of that kind:
    ``radius`` (sphere), ``equatorial_radius``/``polar_radius`` (spheroid),
    ``major_radius``/``minor_radius`` (torus) or ``samples`` (custom list
    of (rho, z) pairs).  ``spin_structure`` is optional.
    """
    kind = spec.get("kind")
    if kind not in _KINDS:
        raise GeometryError(f"unknown geometry kind {kind!r}")
    if int(n_nodes) < 16:
        raise GeometryError("n_nodes must be at least 16")
    n_nodes = int(n_nodes)
    if kind == "sphere":
        params = {"radius": _positive(spec, "radius")}
        curve: _Curve = _Sphere(params["radius"])
    elif kind == "spheroid":
        params = {"equatorial_radius": _positive(spec, "equatorial_radius"),
                  "polar_radius": _positive(spec, "polar_radius")}
        curve = _Spheroid(params["equatorial_radius"], params["polar_radius"])
    elif kind == "torus":
        params = {"major_radius": _positive(spec, "major_radius"),
                  "minor_radius": _positive(spec, "minor_radius")}
        if params["minor_radius"] >= params["major_radius"]:
            raise GeometryError("torus requires minor_radius < major_radius")
        curve = _Torus(params["major_radius"], params["minor_radius"])
    else:
        samples = spec.get("samples")
        if samples is None:
            raise GeometryError("custom geometry needs a 'samples' table")
        params = {"samples": [list(map(float, p)) for p in samples]}
        curve = _SplineCurve(np.asarray(params["samples"]))

    topology = "circle" if curve.closed else "interval-with-poles"
    spin = spec.get("spin_structure", "antiperiodic")
    if spin not in ("antiperiodic", "periodic"):
        raise GeometryError(f"unknown spin structure {spin!r}")

    # arclength table on a fine uniform theta grid, 16-point Gauss-Legendre per panel
    n_tab = max(4 * n_nodes, 256)
    th_tab = np.linspace(curve.t0, curve.t1, n_tab + 1)
    half = 0.5 * np.diff(th_tab)
    x = th_tab[:-1, None] + half[:, None] * (_GL_X + 1.0)
    u_tab = np.r_[0.0, np.cumsum(half * (curve.speed(x) @ _GL_W))]
    length = float(u_tab[-1])

    prof = ProfileCurve(kind=kind, params=params, topology=topology, spin_structure=spin,
                        arclength_nodes=np.linspace(0.0, length, n_nodes), length=length,
                        _curve=curve, _theta_tab=th_tab, _u_tab=u_tab)
    return prof


# ---------------------------------------------------------------------------
# offset family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OffsetGeometry:
    """Offset family X_s = X + s*nu of a surface of revolution."""

    profile: ProfileCurve
    normal_orientation: int = 1
    epsilon0: float = field(init=False)

    def __post_init__(self):
        if self.normal_orientation not in (1, -1):
            raise GeometryError("normal_orientation must be +1 or -1")
        object.__setattr__(self, "epsilon0", focal_bound(self))

    @property
    def max_offset(self) -> float:
        return FOCAL_SAFETY * self.epsilon0

    def check_offset(self, s):
        s = np.asarray(s, dtype=float)
        lim = self.max_offset
        if np.any(np.abs(s) > lim * (1.0 + 1e-12)):
            bad = s.flat[int(np.argmax(np.abs(s)))]
            raise FocalViolationError(bad, lim)
        return s

    def _fields(self, u):
        f = self.profile.sample(u)
        sg = self.normal_orientation
        return f, sg * f["k"], sg * f["q"]

    def kappa_mu(self, u):
        return self._fields(u)[1]

    def kappa_pi(self, u):
        return self._fields(u)[2]

    def a(self, u, s):
        """Meridian metric coefficient of X_s."""
        s = self.check_offset(s)
        return 1.0 - s * self.kappa_mu(u)

    def r(self, u, s):
        """Parallel radius of X_s."""
        s = self.check_offset(s)
        f, _, kp = self._fields(u)
        return f["rho"] * (1.0 - s * kp)

    def dlog_lambda_du(self, u, s):
        """u-derivative of log Lambda at (u, s)."""
        s = self.check_offset(s)
        f, km, kp = self._fields(u)
        sg = self.normal_orientation
        return s * sg * f["k_u"] / (1.0 - s * km) + s * sg * f["q_u"] / (1.0 - s * kp)


def principal_curvatures(g: OffsetGeometry, u):
    """Meridian and parallel principal curvatures of X at arclength ``u``.

    These are the eigenvalues of -D nu.  At a pole the parallel curvature is
    replaced by its regular limit, which equals the meridian one.
    """
    _, km, kp = g._fields(u)
    return km, kp


def focal_bound(g: OffsetGeometry) -> float:
    """Local focal distance: min over tabulated nodes of 1/max|kappa|.

    Only the focal (local) degeneration of the offsets is detected; global
    self-intersection of X_s is the caller's responsibility.  A profile with
    all curvatures zero returns ``inf``.
    """
    _, km, kp = g._fields(g.profile.arclength_nodes)
    kmax = float(np.max(np.maximum(np.abs(km), np.abs(kp))))
    return math.inf if kmax == 0.0 else 1.0 / kmax


def lam(g: OffsetGeometry, u, s):
    """Volume ratio Lambda(u, s) = rho / (a r) = sqrt(det g(u,0) / det g(u,s))."""
    s = g.check_offset(s)
    _, km, kp = g._fields(u)
    return 1.0 / ((1.0 - s * km) * (1.0 - s * kp))


def trace_ii(g: OffsetGeometry, u, s):
    """Trace of the second fundamental form of the leaf X_s.

    Equals d/ds log Lambda: kappa_mu/(1 - s kappa_mu) + kappa_pi/(1 - s kappa_pi).
    """
    s = g.check_offset(s)
    _, km, kp = g._fields(u)
    return km / (1.0 - s * km) + kp / (1.0 - s * kp)


def fermi_chart(g: OffsetGeometry, u, phi, s):
    """Point of X_s over (u, phi) and the orthonormal frame (e_u, e_phi, nu).

    Returns ``(point, frame)`` with ``point[..., 3]`` and ``frame[..., 3, 3]``
    whose rows are e_u, e_phi, nu.  The frame does not depend on s since
    offset tangent planes are parallel in flat space.
    """
    s = g.check_offset(s)
    f = g.profile.sample(u)
    phi = np.asarray(phi, dtype=float)
    sg = g.normal_orientation
    nrho, nz = -sg * f["z_u"], sg * f["rho_u"]
    rho_s = f["rho"] + s * nrho
    z_s = f["z"] + s * nz
    c, sn = np.cos(phi), np.sin(phi)
    rho_s, z_s, c, sn, nrho, nz, ru, zu = np.broadcast_arrays(
        rho_s, z_s, c, sn, nrho, nz, f["rho_u"], f["z_u"])
    point = np.stack([rho_s * c, rho_s * sn, z_s], axis=-1)
    e_u = np.stack([ru * c, ru * sn, zu], axis=-1)
    e_phi = np.stack([-sn, c, np.zeros_like(c)], axis=-1)
    nu = np.stack([nrho * c, nrho * sn, nz], axis=-1)
    return point, np.stack([e_u, e_phi, nu], axis=-2)


def build_geometry(spec: Mapping[str, Any], n_nodes: int | None = None) -> OffsetGeometry:
    """Profile plus normal orientation from one geometry config entry."""
    n = int(spec.get("n_nodes", 512) if n_nodes is None else n_nodes)
    orient = int(spec.get("normal_orientation", 1))
    return OffsetGeometry(build_profile(spec, n), orient)
