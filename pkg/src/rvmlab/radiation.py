"""Far-field radiation data on outgoing null directions.

For a compactly supported source, |x| F_ret(u + |x|, x) converges as
|x| -> infinity to a radiation field F_rad(u, k) that can be written as
the u-derivative of two auxiliary vectors

    M(u, k) = integral over the far-field ball of (j.k) k - j,
    N(u, k) = integral of j ^ k,

with all integrands evaluated on the tilted slice (u + k.y, y).  M and N
satisfy a set of algebraic identities (transversality, orthogonality,
equal norms, Poynting alignment) that survive discretization exactly:
each quadrature term already obeys N_i = k ^ M_i with M_i
perpendicular to k, so the checks below probe roundoff, not resolution.

Radiation fields are computed along two routes: path A evaluates the
direct integrals of the source derivatives, path B differences M and N
in u.  Their discrepancy is recorded with every slice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._numerics import loglog_slope, richardson_limit
from .geometry import DirectionGrid, ball_quadrature, omega_domain
from .fields import Resolution, eval_retarded
from .sources import SourceHistory

__all__ = [
    "RadiationSlice",
    "IdentityResiduals",
    "BallResolution",
    "ConvergenceError",
    "compute_MN",
    "compute_radiation",
    "radiation_at_direction",
    "identity_residuals",
    "far_field_convergence",
    "export_radiation_csv",
    "slice_residuals_json",
]


class ConvergenceError(RuntimeError):
    """Raised when a far-field limit fails its expected convergence rate."""


@dataclass(frozen=True)
class BallResolution:
    """Resolution of the far-field ball integrals."""

    radial: int = 32
    angular_order: int = 17
    family: str = "product"

    def refined(self, factor: int = 2) -> "BallResolution":
        return replace(self, radial=self.radial * factor,
                       angular_order=min(2 * self.angular_order + 1, 199))


@dataclass(frozen=True)
class RadiationSlice:
    """Per-direction far-field data at fixed retarded time u.

    ``M``, ``N``, ``E_rad``, ``B_rad`` have shape (n_directions, 3);
    the radiation fields are None for M/N-only slices.
    ``ab_discrepancy`` is the recorded path A vs path B mismatch, relative
    to the slice's field scale; ``boundary_residual`` is the largest |j|
    sampled on the integration-ball boundary (should vanish: the support
    is strictly inside).
    """

    u: float
    grid: DirectionGrid
    M: np.ndarray
    N: np.ndarray
    E_rad: np.ndarray | None = None
    B_rad: np.ndarray | None = None
    ab_discrepancy: float | None = None
    boundary_residual: float | None = None

    @property
    def field_scale(self) -> float:
        """Max |E_rad| over the slice (falls back to max |M|)."""
        arr = self.E_rad if self.E_rad is not None else self.M
        return float(np.max(np.linalg.norm(arr, axis=1), initial=0.0))


def _tilted_eval(src: SourceHistory, fn, u: float, k: np.ndarray, grid) -> np.ndarray:
    """Integrate fn(u + k.y, y) over the far-field ball for one direction."""
    times = u + grid.nodes @ k
    return np.tensordot(grid.weights, fn(times, grid.nodes), axes=(0, 0))


def _mn_single(src, u, k, grid):
    times = u + grid.nodes @ k
    j = src.j(times, grid.nodes)
    proj = (j @ k)[:, None] * k[None, :] - j
    M = np.tensordot(grid.weights, proj, axes=(0, 0))
    N = np.tensordot(grid.weights, np.cross(j, k[None, :]), axes=(0, 0))
    return M, N


def _far_ball(src: SourceHistory, u: float, ballres: BallResolution):
    radius = omega_domain(u, src.R, src.a)
    return ball_quadrature(radius, ballres.radial, ballres.angular_order, ballres.family)


def compute_MN(src: SourceHistory, u: float, grid: DirectionGrid,
               ballres: BallResolution = BallResolution(),
               check_boundary: bool = True) -> RadiationSlice:
    """The vectors M(u, k) and N(u, k) on every direction of the grid."""
    ball = _far_ball(src, u, ballres)
    M = np.empty((len(grid), 3))
    N = np.empty((len(grid), 3))
    for i, k in enumerate(grid.nodes):
        M[i], N[i] = _mn_single(src, u, k, ball)
    boundary = _boundary_residual(src, u, grid, ball.radius) if check_boundary else None
    return RadiationSlice(u=u, grid=grid, M=M, N=N, boundary_residual=boundary)


def _boundary_residual(src, u, grid, radius):
    """Max |j| on the integration-ball boundary sphere (tilted times)."""
    pts = radius * grid.nodes
    worst = 0.0
    for k in grid.nodes:
        times = u + pts @ k
        worst = max(worst, float(np.max(np.linalg.norm(src.j(times, pts), axis=1))))
    return worst


def compute_radiation(src: SourceHistory, u: float, grid: DirectionGrid,
                      ballres: BallResolution = BallResolution(),
                      du: float | None = None,
                      check_boundary: bool = True) -> RadiationSlice:
    """Radiation field slice: path A integrals plus the path B cross-check.

    Path A integrates the source derivatives directly; path B differences
    the M, N vectors at u +/- du.  Path A values are returned; the relative
    A-vs-B discrepancy is recorded on the slice.
    """
    if du is None:
        if src.timescale is None:
            raise ValueError("source has no characteristic timescale; pass du explicitly")
        du = 1e-3 * src.timescale
    ball = _far_ball(src, u, ballres)
    # the u +/- du slices reuse the same ball: enlarging the domain is free
    n = len(grid)
    M = np.empty((n, 3)); N = np.empty((n, 3))
    E_A = np.empty((n, 3)); B_A = np.empty((n, 3))
    E_B = np.empty((n, 3)); B_B = np.empty((n, 3))
    for i, k in enumerate(grid.nodes):
        M[i], N[i] = _mn_single(src, u, k, ball)
        E_A[i] = _tilted_eval(src, src.e_source, u, k, ball)
        B_A[i] = _tilted_eval(src, src.b_source, u, k, ball)
        Mp, Np = _mn_single(src, u + du, k, ball)
        Mm, Nm = _mn_single(src, u - du, k, ball)
        E_B[i] = (Mp - Mm) / (2.0 * du)
        B_B[i] = (Np - Nm) / (2.0 * du)
    scale = max(float(np.max(np.linalg.norm(E_A, axis=1))), 1e-300)
    disc = float(max(np.max(np.linalg.norm(E_A - E_B, axis=1)),
                     np.max(np.linalg.norm(B_A - B_B, axis=1))) / scale)
    boundary = _boundary_residual(src, u, grid, ball.radius) if check_boundary else None
    return RadiationSlice(u=u, grid=grid, M=M, N=N, E_rad=E_A, B_rad=B_A,
                          ab_discrepancy=disc, boundary_residual=boundary)


def radiation_at_direction(src: SourceHistory, u: float, k,
                           ballres: BallResolution = BallResolution()) -> tuple[np.ndarray, np.ndarray]:
    """(E_rad, B_rad) at a single direction via the path A integrals."""
    k = np.asarray(k, dtype=float)
    k = k / np.linalg.norm(k)
    ball = _far_ball(src, u, ballres)
    E = _tilted_eval(src, src.e_source, u, k, ball)
    B = _tilted_eval(src, src.b_source, u, k, ball)
    return E, B


# ---------------------------------------------------------------------------
# algebraic identity residuals


@dataclass(frozen=True)
class IdentityResiduals:
    """Normalized residuals of the far-field algebraic identities.

    The ``mn_*`` set checks M, N; the ``rad_*`` set checks (E_rad, B_rad).
    Linear-in-field residuals are normalized by the slice's max field
    magnitude, quadratic ones by its square.  ``planar`` is the residual of
    N = k ^ M (equivalently the two-component rotation structure of the
    pair).
    """

    mn_transverse: float
    mn_orthogonal: float
    mn_norm_gap: float
    mn_poynting: float
    rad_transverse: float
    rad_orthogonal: float
    rad_norm_gap: float
    rad_poynting: float
    planar: float

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}

    @property
    def worst_mn(self) -> float:
        return max(self.mn_transverse, self.mn_orthogonal, self.mn_norm_gap,
                   self.mn_poynting, self.planar)

    @property
    def worst_rad(self) -> float:
        return max(self.rad_transverse, self.rad_orthogonal, self.rad_norm_gap,
                   self.rad_poynting)


def _identity_set(V: np.ndarray, W: np.ndarray, k: np.ndarray):
    """Residuals of the pair identities for (V, W) against directions k."""
    scale = max(float(np.max(np.linalg.norm(V, axis=1), initial=0.0)),
                float(np.max(np.linalg.norm(W, axis=1), initial=0.0)))
    if scale == 0.0:
        return 0.0, 0.0, 0.0, 0.0
    transverse = max(float(np.max(np.abs(np.sum(V * k, axis=1)))),
                     float(np.max(np.abs(np.sum(W * k, axis=1))))) / scale
    orthogonal = float(np.max(np.abs(np.sum(V * W, axis=1)))) / scale**2
    norm_gap = float(np.max(np.abs(np.linalg.norm(V, axis=1) - np.linalg.norm(W, axis=1)))) / scale
    poynting = float(np.max(np.abs(np.sum(np.cross(V, W) * k, axis=1)
                                   - np.sum(V**2, axis=1)))) / scale**2
    return transverse, orthogonal, norm_gap, poynting


def identity_residuals(slice_: RadiationSlice) -> IdentityResiduals:
    """All normalized identity residuals of a slice (zero slice -> zeros)."""
    k = slice_.grid.nodes
    mn = _identity_set(slice_.M, slice_.N, k)
    if slice_.E_rad is not None:
        rad = _identity_set(slice_.E_rad, slice_.B_rad, k)
    else:
        rad = (0.0, 0.0, 0.0, 0.0)
    m_scale = float(np.max(np.linalg.norm(slice_.M, axis=1), initial=0.0))
    if m_scale > 0.0:
        planar = float(np.max(np.linalg.norm(slice_.N - np.cross(k, slice_.M), axis=1))) / m_scale
    else:
        planar = 0.0
    return IdentityResiduals(*mn, *rad, planar)


# ---------------------------------------------------------------------------
# far-field limit diagnostics


@dataclass(frozen=True)
class FarFieldConvergence:
    """Scaled fields along a null ray against the radiation-field limit."""

    radii: np.ndarray
    scaled_E: np.ndarray
    scaled_B: np.ndarray
    E_rad: np.ndarray
    B_rad: np.ndarray
    differences: np.ndarray
    slope: float
    extrapolated_E: np.ndarray
    extrapolated_B: np.ndarray

    @property
    def extrapolation_gap(self) -> float:
        """Relative gap between the Richardson limit and the direct integrals."""
        scale = max(float(np.linalg.norm(self.E_rad)), 1e-300)
        return float(max(np.linalg.norm(self.extrapolated_E - self.E_rad),
                         np.linalg.norm(self.extrapolated_B - self.B_rad)) / scale)


def far_field_convergence(src: SourceHistory, u: float, k, radii,
                          ballres: BallResolution = BallResolution(),
                          res: Resolution = Resolution(),
                          slope_band: tuple[float, float] = (-1.2, -0.8),
                          strict: bool = True) -> FarFieldConvergence:
    """Check |x| F_ret(u + |x|, x) -> F_rad(u, k) with its O(1/|x|) rate.

    Evaluates the retarded field along the outgoing ray, compares against
    the direct far-field integrals, fits the decay rate of the differences,
    and Richardson-extrapolates the ray values.  With ``strict`` a rate
    outside ``slope_band`` raises :class:`ConvergenceError`.
    """
    k = np.asarray(k, dtype=float)
    k = k / np.linalg.norm(k)
    radii = np.asarray(radii, dtype=float)
    E_rad, B_rad = radiation_at_direction(src, u, k, ballres)
    scaled_E = np.empty((len(radii), 3))
    scaled_B = np.empty((len(radii), 3))
    for i, r in enumerate(radii):
        fv = eval_retarded(src, u + r, r * k, res)
        scaled_E[i] = r * fv.E
        scaled_B[i] = r * fv.B
    diffs = np.sqrt(np.sum((scaled_E - E_rad) ** 2, axis=1)
                    + np.sum((scaled_B - B_rad) ** 2, axis=1))
    scale = max(float(np.linalg.norm(E_rad)), float(np.max(diffs)), 1e-300)
    slope = loglog_slope(radii, diffs, floor=1e-12 * scale)
    ex_E, _ = richardson_limit(radii, scaled_E)
    ex_B, _ = richardson_limit(radii, scaled_B)
    out = FarFieldConvergence(radii=radii, scaled_E=scaled_E, scaled_B=scaled_B,
                              E_rad=E_rad, B_rad=B_rad, differences=diffs,
                              slope=slope, extrapolated_E=ex_E, extrapolated_B=ex_B)
    if strict and not (slope_band[0] <= slope <= slope_band[1]):
        raise ConvergenceError(
            f"far-field differences decay with slope {slope:.3f}, expected within {slope_band}"
        )
    return out


# ---------------------------------------------------------------------------
# export


def export_radiation_csv(path, slices) -> None:
    """Slice CSV: u,k1..k3,M1..M3,N1..N3,Erad1..Erad3,Brad1..Brad3."""
    cols = ["u", "k1", "k2", "k3", "M1", "M2", "M3", "N1", "N2", "N3",
            "Erad1", "Erad2", "Erad3", "Brad1", "Brad2", "Brad3"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for sl in slices:
            E = sl.E_rad if sl.E_rad is not None else np.zeros_like(sl.M)
            B = sl.B_rad if sl.B_rad is not None else np.zeros_like(sl.N)
            for i, k in enumerate(sl.grid.nodes):
                row = [sl.u, *k, *sl.M[i], *sl.N[i], *E[i], *B[i]]
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def slice_residuals_json(slice_: RadiationSlice) -> dict:
    """JSON-ready residual block for one slice."""
    block = {"u": float(slice_.u), "residuals": identity_residuals(slice_).as_dict()}
    if slice_.ab_discrepancy is not None:
        block["ab_discrepancy"] = float(slice_.ab_discrepancy)
    if slice_.boundary_residual is not None:
        block["boundary_residual"] = float(slice_.boundary_residual)
    return block
