"""Retarded electromagnetic fields by light-cone quadrature.

The field at (t, x) integrates source derivatives over the light-cone
slice of the support with the weakly singular kernel 1/|x-y|.  Three
quadrature strategies cover the geometric regimes:

* observation point well outside the support: source-centered ball rule
  (kernel smooth, nodes cached and reused across evaluations);
* observation point inside or near the support: two-center coordinates
  (rho = |y|, s = |x - y|, phi) whose Jacobian rho s / |x| cancels the
  kernel, so the integrand is bounded and the source is resolved on its
  own radial scale regardless of where x sits;
* particle-ensemble sources: per-particle cluster rules around each
  mollified blob's retarded position (the field map is linear, so the
  per-particle decomposition is exact).

All paths integrate the same function; they are cross-checked against
each other in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import ball_quadrature, gauss_legendre, sphere_quadrature
from . import sources as _sources
from .sources import EnsembleMoments, HistoryWindowError, SourceHistory

__all__ = [
    "FieldValue",
    "PoyntingSample",
    "Resolution",
    "Ray",
    "eval_retarded",
    "eval_advanced",
    "eval_many",
    "bounding_domain",
    "poynting",
    "decay_diagnostic",
    "maxwell_residuals",
    "export_fields_csv",
]


@dataclass(frozen=True)
class FieldValue:
    """Electromagnetic field pair at one spacetime point."""

    E: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float).reshape(3)
        B = np.asarray(self.B, dtype=float).reshape(3)
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(B))):
            raise ValueError("field components must be finite")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "B", B)

    @property
    def magnitude(self) -> float:
        """|F| = sqrt(|E|^2 + |B|^2)."""
        return float(np.sqrt(np.sum(self.E**2) + np.sum(self.B**2)))


@dataclass(frozen=True)
class PoyntingSample:
    """Energy flux density S = (E ^ B) / 4 pi."""

    S: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S", np.asarray(self.S, dtype=float).reshape(3))


@dataclass(frozen=True)
class Resolution:
    """Quadrature resolution for one retarded-field evaluation.

    ``radial`` controls the radial Gauss rules of every path; the exterior
    ball uses an angular product rule of order ``angular_order``; the
    two-center path uses ``s_nodes`` cone-radius nodes and ``phi_nodes``
    azimuthal nodes; per-particle cluster rules use the ``cluster_*`` knobs.
    """

    radial: int = 40
    angular_order: int = 23
    s_nodes: int = 40
    phi_nodes: int = 24
    cluster_radial: int = 12
    cluster_order: int = 11
    family: str = "product"
    exterior_margin: float = 1.08

    def refined(self, factor: int = 2) -> "Resolution":
        return replace(
            self,
            radial=self.radial * factor,
            s_nodes=self.s_nodes * factor,
            phi_nodes=self.phi_nodes * factor,
            cluster_radial=self.cluster_radial * factor,
            angular_order=min(2 * self.angular_order + 1, 199),
            cluster_order=min(2 * self.cluster_order + 1, 199),
        )


def bounding_domain(src: SourceHistory, t: float, x) -> float:
    """Radius r* with the retarded-cone support slice inside |y| <= r*.

    Solves |y| <= R + a |t - |x - y|| in the worst case; when every retarded
    time on the cone is non-negative the tighter bound R + a t applies.
    """
    if src.a >= 1.0:
        raise ValueError("source spread rate must satisfy a < 1")
    R, a = src.R, src.a
    if a == 0.0:
        return R
    r = float(np.linalg.norm(x))
    safe = (R + a * (abs(t) + r)) / (1.0 - a)
    if t > 0:
        cand = R + a * t
        if t - r - cand >= 0.0:
            return cand
    return safe


def _quantize_up(r: float) -> float:
    """Round a domain radius up onto a sparse geometric lattice (cache reuse).

    Enlarging the domain never changes the integral: the integrand vanishes
    outside the support.
    """
    if r <= 0.0:
        raise ValueError("domain radius must be positive")
    step = 1.05
    return step ** math.ceil(math.log(r, step))


def _check_cone_window(src: SourceHistory, t: float, s_max: float, advanced: bool) -> None:
    lo, hi = src.window
    reach = t + s_max if advanced else t - s_max
    t_min, t_max = (min(t, reach), max(t, reach))
    if t_min < lo - 1e-9 or t_max > hi + 1e-9:
        kind = "advanced" if advanced else "retarded"
        raise HistoryWindowError(
            f"{kind} cone for (t={t:g}) needs source times [{t_min:g}, {t_max:g}] "
            f"outside the validity window [{lo:g}, {hi:g}]"
        )


def _orthonormal_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(axis)))] = 1.0
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def _exterior_field(src, t, x, res, r_env, sign):
    grid = ball_quadrature(r_env, res.radial, res.angular_order, res.family)
    y = grid.nodes
    s = np.linalg.norm(x[None, :] - y, axis=1)
    t_src = t + sign * s
    w = grid.weights / s
    fe, fb = src.source_pair(t_src, y)
    E = np.tensordot(w, fe, axes=(0, 0))
    B = np.tensordot(w, fb, axes=(0, 0))
    return FieldValue(E=E, B=B)


def _two_center_grid(x, res, r_env):
    """Nodes, weights and cone radii of the two-center rule around x.

    The per-rho cone interval [|d - rho|, d + rho] kinks at rho = d, so the
    radial integral is split there to keep each Gauss panel spectral.
    """
    d = float(np.linalg.norm(x))
    xhat = x / d
    e1, e2 = _orthonormal_frame(xhat)
    if d < r_env:
        n_lo = max(10, round(res.radial * d / r_env))
        n_hi = max(10, res.radial - n_lo + 10)
        r_lo, w_lo = gauss_legendre(n_lo, 0.0, d)
        r_hi, w_hi = gauss_legendre(n_hi, d, r_env)
        rho = np.concatenate([r_lo, r_hi])
        w_rho = np.concatenate([w_lo, w_hi])
    else:
        rho, w_rho = gauss_legendre(res.radial, 0.0, r_env)
    base, w_base = gauss_legendre(res.s_nodes, -1.0, 1.0)
    lo = np.abs(d - rho)
    hi = d + rho
    half = 0.5 * (hi - lo)
    s = lo[:, None] + half[:, None] * (base[None, :] + 1.0)
    w_s = half[:, None] * w_base[None, :]
    phi = 2.0 * np.pi * np.arange(res.phi_nodes) / res.phi_nodes
    w_phi = 2.0 * np.pi / res.phi_nodes

    z = (d**2 + rho[:, None] ** 2 - s**2) / (2.0 * d)
    b = np.sqrt(np.maximum(rho[:, None] ** 2 - z**2, 0.0))
    circle = np.cos(phi)[None, None, :, None] * e1 + np.sin(phi)[None, None, :, None] * e2
    y = z[..., None, None] * xhat + b[..., None, None] * circle
    w = (rho[:, None] / d * w_rho[:, None] * w_s)[..., None] * w_phi

    shape = y.shape[:3]
    y_flat = y.reshape(-1, 3)
    w_flat = np.broadcast_to(w, shape).reshape(-1)
    s_flat = np.broadcast_to(s[..., None], shape).reshape(-1)
    return y_flat, w_flat, s_flat


def _two_center_field(src, t, x, res, r_env, sign):
    y, w, s = _two_center_grid(x, res, r_env)
    t_src = t + sign * s
    fe, fb = src.source_pair(t_src, y)
    E = np.tensordot(w, fe, axes=(0, 0))
    B = np.tensordot(w, fb, axes=(0, 0))
    return FieldValue(E=E, B=B)


def eval_time_series(src: SourceHistory, x, times, res: Resolution = Resolution(),
                     advanced: bool = False, domain_radius: float | None = None,
                     need_B: bool = False, chunk: int = 2_000_000):
    """Fields at a fixed point for many times, sharing one quadrature grid.

    Used by tabulation-heavy consumers (work-integral bookkeeping); batching
    over the time axis amortizes the node construction.  Returns E of shape
    (n_times, 3), or (E, B) when ``need_B``.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    times = np.asarray(times, dtype=float)
    sign = 1.0 if advanced else -1.0
    r_env = domain_radius
    if r_env is None:
        r_env = _quantize_up(max(bounding_domain(src, float(t), x) for t in (times.min(), times.max())))
    _check_cone_window(src, float(times.min() if sign < 0 else times.max()),
                       float(np.linalg.norm(x)) + r_env, advanced=advanced)
    y, w, s = _two_center_grid(x, res, r_env)
    n_nodes = len(w)
    step = max(1, chunk // n_nodes)
    E = np.empty((len(times), 3))
    B = np.empty((len(times), 3)) if need_B else None
    for start in range(0, len(times), step):
        tt = times[start : start + step]
        t_src = (tt[:, None] + sign * s[None, :]).reshape(-1)
        y_tiled = np.broadcast_to(y, (len(tt),) + y.shape).reshape(-1, 3)
        vals = src.e_source(t_src, y_tiled).reshape(len(tt), n_nodes, 3)
        E[start : start + step] = np.tensordot(vals, w, axes=(1, 0))
        if need_B:
            vals = src.b_source(t_src, y_tiled).reshape(len(tt), n_nodes, 3)
            B[start : start + step] = np.tensordot(vals, w, axes=(1, 0))
    return (E, B) if need_B else E


def _observer_centered_field(src, t, x, res, r_env, sign):
    d = float(np.linalg.norm(x))
    dirs = sphere_quadrature(res.angular_order, res.family)
    s, ws = gauss_legendre(res.radial, 0.0, d + r_env)
    y = x[None, None, :] + s[:, None, None] * dirs.nodes[None, :, :]
    t_src = np.repeat(t + sign * s, len(dirs))
    w_flat = ((ws * s)[:, None] * dirs.weights[None, :]).reshape(-1)
    y_flat = y.reshape(-1, 3)
    fe, fb = src.source_pair(t_src, y_flat)
    E = np.tensordot(w_flat, fe, axes=(0, 0))
    B = np.tensordot(w_flat, fb, axes=(0, 0))
    return FieldValue(E=E, B=B)


def _cone_time_of_particle(traj, index, t, x, sign, window):
    """Intersection time of particle ``index`` with the cone of (t, x)."""
    tau = t
    for _ in range(80):
        pos = traj.position(np.clip(tau, window[0], window[1]))[0, index]
        tau_new = t + sign * float(np.linalg.norm(x - pos))
        if abs(tau_new - tau) < 1e-13 * max(1.0, abs(tau)):
            tau = tau_new
            break
        tau = tau_new
    return tau, traj.position(np.clip(tau, window[0], window[1]))[0, index]


def _particle_field(src: EnsembleMoments, t, x, res, sign):
    h = src.h
    pad = 1.05 * h / max(1e-12, 1.0 - src.a)
    E = np.zeros(3)
    B = np.zeros(3)
    for i, part in enumerate(src.particle_views()):
        if src.qw[i] == 0.0:
            continue
        tau, center = _cone_time_of_particle(src.traj, i, t, x, sign, src.window)
        gap = float(np.linalg.norm(x - center))
        if gap > 1.8 * pad:
            grid = ball_quadrature(pad, res.cluster_radial, res.cluster_order, res.family)
            y = center[None, :] + grid.nodes
            s = np.linalg.norm(x[None, :] - y, axis=1)
            w = grid.weights / s
            t_src = t + sign * s
            fe, fb = part.source_pair(t_src, y)
            E += np.tensordot(w, fe, axes=(0, 0))
            B += np.tensordot(w, fb, axes=(0, 0))
        else:
            # observation point inside or near this blob: observer-centered
            # spherical rule removes the kernel singularity
            s_max = gap + 1.5 * pad
            dirs = sphere_quadrature(res.cluster_order, res.family)
            s, ws = gauss_legendre(4 * res.cluster_radial, 0.0, s_max)
            y = x[None, None, :] + s[:, None, None] * dirs.nodes[None, :, :]
            t_src = np.repeat(t + sign * s, len(dirs))
            w_flat = ((ws * s)[:, None] * dirs.weights[None, :]).reshape(-1)
            y_flat = y.reshape(-1, 3)
            fe, fb = part.source_pair(t_src, y_flat)
            E += np.tensordot(w_flat, fe, axes=(0, 0))
            B += np.tensordot(w_flat, fb, axes=(0, 0))
    return FieldValue(E=E, B=B)


def _eval_cone(src: SourceHistory, t: float, x, res: Resolution,
               domain_radius: float | None, sign: float, path: str = "auto") -> FieldValue:
    x = np.asarray(x, dtype=float).reshape(3)
    r_obs = float(np.linalg.norm(x))
    r_env = domain_radius if domain_radius is not None else _quantize_up(bounding_domain(src, t, x))
    _check_cone_window(src, t, r_obs + r_env, advanced=sign > 0)

    if isinstance(src, _sources._Superposition):
        total_E = np.zeros(3)
        total_B = np.zeros(3)
        for part in src.parts:
            fv = _eval_cone(part, t, x, res, domain_radius, sign, path)
            total_E += fv.E
            total_B += fv.B
        return FieldValue(E=total_E, B=total_B)

    if isinstance(src, EnsembleMoments):
        return _particle_field(src, t, x, res, sign)

    if path == "exterior" or (path == "auto" and r_obs > res.exterior_margin * r_env):
        return _exterior_field(src, t, x, res, r_env, sign)
    if path == "two_center" or (path == "auto" and r_obs > 1e-3 * r_env):
        return _two_center_field(src, t, x, res, r_env, sign)
    return _observer_centered_field(src, t, x, res, r_env, sign)


def eval_retarded(src: SourceHistory, t: float, x, res: Resolution = Resolution(),
                  domain_radius: float | None = None, path: str = "auto") -> FieldValue:
    """Retarded field (E, B) of the source at the spacetime point (t, x).

    ``domain_radius`` overrides the integration-ball radius; passing a common
    value across a stencil of nearby points keeps the quadrature domain fixed,
    which finite-difference consumers rely on.  ``path`` pins the quadrature
    strategy ("exterior", "two_center", "observer") when callers need the
    same node layout across several evaluations.
    """
    return _eval_cone(src, float(t), x, res, domain_radius, sign=-1.0, path=path)


def eval_advanced(src: SourceHistory, t: float, x, res: Resolution = Resolution(),
                  domain_radius: float | None = None, path: str = "auto") -> FieldValue:
    """Advanced (anti-causal) counterpart of :func:`eval_retarded`.

    Not part of the physical model: it exists as the negative control for
    the no-incoming-radiation checks.
    """
    return _eval_cone(src, float(t), x, res, domain_radius, sign=+1.0, path=path)


def eval_many(src: SourceHistory, times, points, res: Resolution = Resolution(),
              advanced: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Fields at many spacetime points; returns (E, B) arrays of shape (n, 3)."""
    times = np.asarray(times, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if times.ndim == 0:
        times = np.full(len(points), float(times))
    ev = eval_advanced if advanced else eval_retarded
    E = np.empty_like(points)
    B = np.empty_like(points)
    for i, (ti, xi) in enumerate(zip(times, points)):
        fv = ev(src, ti, xi, res)
        E[i] = fv.E
        B[i] = fv.B
    return E, B


def poynting(fv: FieldValue) -> PoyntingSample:
    """Poynting vector (E ^ B) / 4 pi of a field sample."""
    return PoyntingSample(S=np.cross(fv.E, fv.B) / (4.0 * np.pi))


@dataclass(frozen=True)
class Ray:
    """Family of evaluation points r * direction with one cone coordinate fixed.

    ``kind`` is "u" (fixed retarded time), "v" (fixed advanced time) or "t"
    (fixed coordinate time).
    """

    kind: str
    value: float
    direction: np.ndarray

    def __post_init__(self):
        if self.kind not in ("u", "v", "t"):
            raise ValueError(f"ray kind must be 'u', 'v' or 't', got {self.kind!r}")
        k = np.asarray(self.direction, dtype=float).reshape(3)
        k = k / np.linalg.norm(k)
        object.__setattr__(self, "direction", k)

    def event(self, r: float) -> tuple[float, np.ndarray]:
        if self.kind == "u":
            return self.value + r, r * self.direction
        if self.kind == "v":
            return self.value - r, r * self.direction
        return self.value, r * self.direction


@dataclass(frozen=True)
class DecayDiagnostic:
    """|F| sampled along a ray plus a fitted power-law exponent."""

    radii: np.ndarray
    magnitudes: np.ndarray
    exponent: float
    prefactor: float


def decay_diagnostic(src: SourceHistory, ray: Ray, radii,
                     res: Resolution = Resolution()) -> DecayDiagnostic:
    """Sample |F_ret| along the ray and fit |F| ~ C r^exponent.

    Reported, not asserted: the decay estimates of the theory carry an
    unquantified constant, so only the exponent is meaningful.
    """
    radii = np.asarray(radii, dtype=float)
    mags = np.empty_like(radii)
    for i, r in enumerate(radii):
        t, x = ray.event(float(r))
        mags[i] = eval_retarded(src, t, x, res).magnitude
    floor = np.max(mags) * 1e-14 + 1e-300
    keep = mags > floor
    if np.count_nonzero(keep) >= 2:
        slope, intercept = np.polyfit(np.log(radii[keep]), np.log(mags[keep]), 1)
    else:
        slope, intercept = -np.inf, -np.inf
    return DecayDiagnostic(radii=radii, magnitudes=mags, exponent=float(slope),
                           prefactor=float(np.exp(intercept)))


def maxwell_residuals(src: SourceHistory, t: float, x, h: float,
                      res: Resolution = Resolution()) -> dict:
    """Centered-difference spot check of div B = 0 and Faraday's law.

    Returns absolute residuals together with the derivative scale they
    should be compared against.  All stencil evaluations share a single
    integration-domain radius and quadrature path so the quadrature error
    varies smoothly across the stencil.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if src.a == 0.0:
        r_dom = _quantize_up(src.R)
    else:
        # safe envelope with the stencil excursion folded into |t| and |x|
        r_dom = _quantize_up(
            (src.R + src.a * (abs(t) + h + float(np.linalg.norm(x)) + h)) / (1.0 - src.a)
        )
    if isinstance(src, EnsembleMoments):
        path = "auto"
    elif np.linalg.norm(x) - h > res.exterior_margin * r_dom:
        path = "exterior"
    else:
        path = "two_center"

    def field(tt, xx):
        return eval_retarded(src, tt, xx, res, domain_radius=r_dom, path=path)

    div_b = 0.0
    curl_e = np.zeros(3)
    grad_scale = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fp, fm = field(t, x + e), field(t, x - e)
        div_b += (fp.B[i] - fm.B[i]) / (2.0 * h)
        dE = (fp.E - fm.E) / (2.0 * h)
        dB = (fp.B - fm.B) / (2.0 * h)
        grad_scale = max(grad_scale, float(np.max(np.abs(dE))), float(np.max(np.abs(dB))))
        ip, ik = (i + 1) % 3, (i + 2) % 3
        curl_e[ip] += -dE[ik]
        curl_e[ik] += dE[ip]
    ftp, ftm = field(t + h, x), field(t - h, x)
    dB_dt = (ftp.B - ftm.B) / (2.0 * h)
    grad_scale = max(grad_scale, float(np.max(np.abs(dB_dt))))
    return {
        "div_B": abs(div_b),
        "faraday": float(np.max(np.abs(curl_e + dB_dt))),
        "scale": grad_scale,
        "h": h,
    }


def export_fields_csv(path, times, points, E, B) -> None:
    """Field-sample CSV: t,x1,x2,x3,E1,E2,E3,B1,B2,B3 with round-trip floats."""
    times = np.asarray(times, dtype=float)
    points = np.atleast_2d(points)
    E = np.atleast_2d(E)
    B = np.atleast_2d(B)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x1,x2,x3,E1,E2,E3,B1,B2,B3\n")
        for i in range(len(times)):
            row = [times[i], *points[i], *E[i], *B[i]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
