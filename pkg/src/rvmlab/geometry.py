"""Quadrature rules and spacetime geometry primitives.

All quantities use Gaussian units with the speed of light set to one, so
times and lengths share a unit and solid angles carry the full 4*pi.
Grids are immutable after construction and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "DirectionGrid",
    "BallGrid",
    "ConeCoordinates",
    "sphere_quadrature",
    "ball_quadrature",
    "shell_quadrature",
    "omega_domain",
    "gauss_legendre",
]

FOUR_PI = 4.0 * np.pi

# Product Gauss-Legendre x uniform-azimuth rules are generated on demand and
# work for any order up to this cap; the cap only guards against runaway
# allocations from a typo'd order.
MAX_PRODUCT_ORDER = 200

# 26-point octahedral rule (exact through degree 7): 6 face points, 12 edge
# points, 8 vertex points of the octahedron with the classical weights.
_OCT26_WEIGHTS = (1.0 / 21.0, 4.0 / 105.0, 9.0 / 280.0)
OCTAHEDRAL_MAX_ORDER = 7


@lru_cache(maxsize=128)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to the interval [a, b]."""
    if n < 1:
        raise ValueError(f"need at least one node, got n={n}")
    x, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


@dataclass(frozen=True)
class DirectionGrid:
    """Quadrature rule on the unit sphere.

    ``nodes`` are unit 3-vectors, ``weights`` are positive solid-angle
    weights summing to 4*pi, and the rule integrates spherical polynomials
    exactly through degree ``order``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        norms = np.linalg.norm(nodes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("direction nodes must be unit vectors")
        if np.any(weights <= 0.0):
            raise ValueError("direction weights must be positive")
        if abs(weights.sum() - FOUR_PI) > 1e-10:
            raise ValueError("direction weights must sum to 4*pi")

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over directions; ``values`` has shape (n, ...)."""
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class BallGrid:
    """Volume quadrature inside the ball |y| <= radius."""

    nodes: np.ndarray
    weights: np.ndarray
    radius: float

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if np.any(weights <= 0.0):
            raise ValueError("ball weights must be positive")
        r = np.linalg.norm(nodes, axis=1)
        if np.any(r > self.radius * (1.0 + 1e-12)):
            raise ValueError("ball nodes must lie inside the ball")
        volume = FOUR_PI / 3.0 * self.radius**3
        if abs(weights.sum() - volume) > 1e-8 * volume:
            raise ValueError("ball weights must sum to the ball volume")

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class ConeCoordinates:
    """Retarded/advanced time pair (u, v) with the radius they encode."""

    u: float
    v: float
    r: float

    def __post_init__(self):
        if self.r < 0.0:
            raise ValueError("radius must be non-negative")
        if abs((self.v - self.u) - 2.0 * self.r) > 1e-10 * max(1.0, abs(self.u), abs(self.v)):
            raise ValueError("inconsistent cone coordinates: v - u must equal 2r")

    @property
    def t(self) -> float:
        return 0.5 * (self.u + self.v)

    @classmethod
    def from_event(cls, t: float, x: np.ndarray) -> "ConeCoordinates":
        r = float(np.linalg.norm(x))
        return cls(u=t - r, v=t + r, r=r)

    @classmethod
    def retarded(cls, u: float, r: float) -> "ConeCoordinates":
        return cls(u=u, v=u + 2.0 * r, r=r)

    @classmethod
    def advanced(cls, v: float, r: float) -> "ConeCoordinates":
        return cls(u=v - 2.0 * r, v=v, r=r)


def _octahedral_26() -> tuple[np.ndarray, np.ndarray]:
    w_face, w_edge, w_vertex = _OCT26_WEIGHTS
    nodes, weights = [], []
    for i in range(3):
        for s in (1.0, -1.0):
            n = np.zeros(3)
            n[i] = s
            nodes.append(n)
            weights.append(w_face)
    s2 = 1.0 / np.sqrt(2.0)
    for i in range(3):
        j = (i + 1) % 3
        for si in (1.0, -1.0):
            for sj in (1.0, -1.0):
                n = np.zeros(3)
                n[i], n[j] = si * s2, sj * s2
                nodes.append(n)
                weights.append(w_edge)
    s3 = 1.0 / np.sqrt(3.0)
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            for sz in (1.0, -1.0):
                nodes.append(np.array([sx * s3, sy * s3, sz * s3]))
                weights.append(w_vertex)
    return np.array(nodes), FOUR_PI * np.array(weights)


@lru_cache(maxsize=64)
def sphere_quadrature(order: int, family: str = "product") -> DirectionGrid:
    """Direction grid exact for spherical polynomials up to ``order``.

    ``family="product"`` builds Gauss-Legendre in the polar cosine times a
    uniform azimuthal rule (even azimuthal count, hence antipodally
    symmetric).  ``family="octahedral"`` returns the 26-point degree-7
    octahedral rule.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if family == "product":
        if order > MAX_PRODUCT_ORDER:
            raise ValueError(f"product rule capped at order {MAX_PRODUCT_ORDER}, got {order}")
        n_polar = (order + 2) // 2
        n_azim = 2 * ((order + 2) // 2)  # even count keeps phi -> phi + pi closed
        cos_t, w_t = np.polynomial.legendre.leggauss(n_polar)
        phi = 2.0 * np.pi * np.arange(n_azim) / n_azim
        ct, ph = np.meshgrid(cos_t, phi, indexing="ij")
        st = np.sqrt(1.0 - ct**2)
        nodes = np.stack(
            [st * np.cos(ph), st * np.sin(ph), ct], axis=-1
        ).reshape(-1, 3)
        weights = np.repeat(w_t, n_azim) * (2.0 * np.pi / n_azim)
        return DirectionGrid(nodes=nodes, weights=weights, order=order)
    if family == "octahedral":
        if order > OCTAHEDRAL_MAX_ORDER:
            raise ValueError(
                f"octahedral rule is exact only through order {OCTAHEDRAL_MAX_ORDER}, got {order}"
            )
        nodes, weights = _octahedral_26()
        return DirectionGrid(nodes=nodes, weights=weights, order=OCTAHEDRAL_MAX_ORDER)
    raise ValueError(f"unknown rule family {family!r}")


@lru_cache(maxsize=256)
def _ball_quadrature_cached(radius: float, radial_nodes: int, angular_order: int, family: str) -> BallGrid:
    directions = sphere_quadrature(angular_order, family=family)
    r, wr = gauss_legendre(radial_nodes, 0.0, radius)
    wr = wr * r**2  # volume measure r^2 dr; Gauss nodes never sit at r = 0
    nodes = r[:, None, None] * directions.nodes[None, :, :]
    weights = wr[:, None] * directions.weights[None, :]
    return BallGrid(nodes=nodes.reshape(-1, 3), weights=weights.reshape(-1), radius=radius)


def ball_quadrature(radius: float, radial_nodes: int, angular_order: int, family: str = "product") -> BallGrid:
    """Tensor-product ball rule: Gauss-Legendre in radius against r^2 dr."""
    if radius <= 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    if radial_nodes < 1:
        raise ValueError(f"radial_nodes must be >= 1, got {radial_nodes}")
    return _ball_quadrature_cached(float(radius), int(radial_nodes), int(angular_order), family)


@lru_cache(maxsize=256)
def _shell_quadrature_cached(
    r_inner: float, r_outer: float, radial_nodes: int, angular_order: int, family: str
) -> tuple[np.ndarray, np.ndarray]:
    directions = sphere_quadrature(angular_order, family=family)
    # Integrate in the inverse radius w = 1/r: dx = r^2 dr dOmega = w^{-4} dw dOmega.
    # Cone-sliced integrands decay polynomially in 1/r, so they are smooth in w
    # and Gauss nodes in w resolve the far tail without truncation.
    w, ww = gauss_legendre(radial_nodes, 1.0 / r_outer, 1.0 / r_inner)
    r = 1.0 / w
    wr = ww / w**4
    nodes = r[:, None, None] * directions.nodes[None, :, :]
    weights = wr[:, None] * directions.weights[None, :]
    return nodes.reshape(-1, 3), weights.reshape(-1)


def shell_quadrature(
    r_inner: float,
    r_outer: float,
    radial_nodes: int,
    angular_order: int,
    family: str = "product",
) -> tuple[np.ndarray, np.ndarray]:
    """Volume rule on the shell r_inner <= |y| <= r_outer, graded in 1/r.

    Returns (nodes, weights).  ``r_outer=np.inf`` integrates the full tail.
    """
    if r_inner <= 0.0:
        raise ValueError("shell needs r_inner > 0")
    if not r_outer > r_inner:
        raise ValueError("shell needs r_outer > r_inner")
    return _shell_quadrature_cached(
        float(r_inner), float(r_outer), int(radial_nodes), int(angular_order), family
    )


def omega_domain(u: float, R: float, a: float) -> float:
    """Radius (1-a)^{-1} (R + a|u|) of the far-field integration ball.

    This ball contains every source point that can influence the outgoing
    null direction at retarded time u when the support spreads no faster
    than |x| <= R + a|t| with a < 1.
    """
    if R <= 0.0:
        raise ValueError(f"support radius must be positive, got {R}")
    if not 0.0 <= a < 1.0:
        raise ValueError(f"spread rate must satisfy 0 <= a < 1, got {a}")
    return (R + a * abs(u)) / (1.0 - a)
