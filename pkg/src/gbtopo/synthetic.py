"""Parametric ellipsoid and torus samplers with analytic curvature oracles.

These are the only source of pointwise curvature ground truth.  Sign
convention throughout: the shape operator is W(v) = -grad_v n with outward
unit normals, so the unit sphere has K = 1 and H = -1, and a torus has

    K(u) = cos(u) / (r (R + r cos u)),
    H(u) = -(1/r + cos(u) / (R + r cos u)) / 2,

with u the tube angle.  The torus formulas are derived from the
parameterization from first principles (the tests pin them against a
finite-difference shape operator).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .cloud_io import PointCloud
from .numerics import rng_for


@dataclass(frozen=True)
class EllipsoidSpec:
    a: float
    b: float
    c: float
    n: int
    scheme: str = "uniform_area"
    seed: int = 0

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("semi-axes must be positive")
        if self.n < 0:
            raise ValueError("n must be >= 0")


@dataclass(frozen=True)
class TorusSpec:
    R: float
    r: float
    n: int
    scheme: str = "uniform_area"
    seed: int = 0

    def __post_init__(self):
        if not self.R > self.r > 0:
            raise ValueError(f"need R > r > 0, got R={self.R}, r={self.r}")
        if self.n < 0:
            raise ValueError("n must be >= 0")


@dataclass
class GroundTruth:
    gaussian: np.ndarray  # (N,)
    mean: np.ndarray  # (N,)
    exact_normals: np.ndarray  # (N, 3) outward unit
    total_area: float
    euler: int


# ---------------------------------------------------------------------------
# generic parameter-space rejection sampler
# ---------------------------------------------------------------------------

class ParamSurface:
    """Protocol-ish base: a (u, v) chart with an area density."""

    u_range = (0.0, 2.0 * np.pi)
    v_range = (0.0, 2.0 * np.pi)

    def point(self, u, v):
        raise NotImplementedError

    def area_density(self, u, v):
        raise NotImplementedError

    def density_bound(self) -> float:
        raise NotImplementedError


def uniform_area_sample_param(surface: ParamSurface, n: int, seed: int):
    """Acceptance-rejection: uniform (u, v) proposals thinned by the area
    element, so accepted parameters are uniform per unit surface area."""
    rng = rng_for(seed, 17)
    bound = surface.density_bound()
    u_out = np.empty(0)
    v_out = np.empty(0)
    (u0, u1), (v0, v1) = surface.u_range, surface.v_range
    while u_out.size < n:
        remaining = n - u_out.size
        m = 64 + int(remaining * 1.5)
        u = rng.uniform(u0, u1, size=m)
        v = rng.uniform(v0, v1, size=m)
        keep = rng.uniform(0.0, bound, size=m) < surface.area_density(u, v)
        u_out = np.concatenate([u_out, u[keep]])
        v_out = np.concatenate([v_out, v[keep]])
    return u_out[:n], v_out[:n]


class TorusSurface(ParamSurface):
    def __init__(self, R, r):
        self.R = R
        self.r = r

    def point(self, u, v):
        w = self.R + self.r * np.cos(u)
        return np.stack([w * np.cos(v), w * np.sin(v), self.r * np.sin(u)], axis=-1)

    def area_density(self, u, v):
        return self.r * (self.R + self.r * np.cos(u))

    def density_bound(self):
        return self.r * (self.R + self.r)


class SphereSurface(ParamSurface):
    """Unit sphere in spherical angles; used mainly to cross-check sampling."""

    u_range = (0.0, np.pi)  # polar angle

    def __init__(self, radius=1.0):
        self.radius = radius

    def point(self, u, v):
        s = np.sin(u)
        return self.radius * np.stack([s * np.cos(v), s * np.sin(v), np.cos(u)], axis=-1)

    def area_density(self, u, v):
        return self.radius ** 2 * np.sin(u)

    def density_bound(self):
        return self.radius ** 2


# ---------------------------------------------------------------------------
# ellipsoid
# ---------------------------------------------------------------------------

def ellipsoid_curvatures(points: np.ndarray, a: float, b: float, c: float):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    m = x ** 2 / a ** 4 + y ** 2 / b ** 4 + z ** 2 / c ** 4
    abc2 = (a * b * c) ** 2
    K = 1.0 / (abc2 * m ** 2)
    H = (x ** 2 + y ** 2 + z ** 2 - a ** 2 - b ** 2 - c ** 2) / (2.0 * abc2 * np.sqrt(m ** 3))
    return K, H


def ellipsoid_area(a: float, b: float, c: float) -> float:
    """Surface area via the Legendre incomplete elliptic integral form."""
    a, b, c = sorted((a, b, c), reverse=True)
    if (a - c) <= 1e-12 * a:
        return 4.0 * np.pi * ((a + b + c) / 3.0) ** 2
    phi = np.arccos(c / a)
    m = (a ** 2 * (b ** 2 - c ** 2)) / (b ** 2 * (a ** 2 - c ** 2))
    F = special.ellipkinc(phi, m)
    E = special.ellipeinc(phi, m)
    s = np.sin(phi)
    return float(2.0 * np.pi * c ** 2 + (2.0 * np.pi * a * b / s) * (E * s ** 2 + F * np.cos(phi) ** 2))


def sample_ellipsoid(spec: EllipsoidSpec):
    rng = rng_for(spec.seed, 19)
    a, b, c = spec.a, spec.b, spec.c
    if spec.scheme == "uniform_area":
        # Uniform sphere directions thinned by the sphere->ellipsoid area
        # distortion abc * |A^{-T} u|; the bound is abc / min(a, b, c).
        dirs = np.empty((0, 3))
        while dirs.shape[0] < spec.n:
            m = 64 + int((spec.n - dirs.shape[0]) * 1.8)
            g = rng.normal(size=(m, 3))
            g /= np.linalg.norm(g, axis=1)[:, None]
            ratio = min(a, b, c) * np.sqrt(
                g[:, 0] ** 2 / a ** 2 + g[:, 1] ** 2 / b ** 2 + g[:, 2] ** 2 / c ** 2
            )
            keep = rng.uniform(size=m) < ratio
            dirs = np.concatenate([dirs, g[keep]])
        dirs = dirs[: spec.n]
    elif spec.scheme == "parametric":
        phi = rng.uniform(-np.pi, np.pi, size=spec.n)
        theta = rng.uniform(0.0, np.pi, size=spec.n)
        s = np.sin(theta)
        dirs = np.stack([s * np.cos(phi), s * np.sin(phi), np.cos(theta)], axis=1)
    else:
        raise ValueError(f"unknown ellipsoid scheme {spec.scheme!r}")

    points = dirs * np.array([a, b, c])
    grad = points / np.array([a ** 2, b ** 2, c ** 2])
    normals = grad / np.linalg.norm(grad, axis=1)[:, None]
    K, H = ellipsoid_curvatures(points, a, b, c)
    gt = GroundTruth(
        gaussian=K,
        mean=H,
        exact_normals=normals,
        total_area=ellipsoid_area(a, b, c),
        euler=2,
    )
    cloud = PointCloud(
        points,
        normals,
        {"gaussian_true": K, "mean_true": H},
    )
    return cloud, gt


# ---------------------------------------------------------------------------
# torus
# ---------------------------------------------------------------------------

def torus_curvatures(u: np.ndarray, R: float, r: float):
    w = R + r * np.cos(u)
    K = np.cos(u) / (r * w)
    H = -0.5 * (1.0 / r + np.cos(u) / w)
    return K, H


def sample_torus(spec: TorusSpec):
    surf = TorusSurface(spec.R, spec.r)
    if spec.scheme == "uniform_area":
        u, v = uniform_area_sample_param(surf, spec.n, spec.seed)
    elif spec.scheme in ("parametric", "random"):
        rng = rng_for(spec.seed, 23)
        u = rng.uniform(0.0, 2.0 * np.pi, size=spec.n)
        v = rng.uniform(0.0, 2.0 * np.pi, size=spec.n)
    else:
        raise ValueError(f"unknown torus scheme {spec.scheme!r}")

    points = surf.point(u, v)
    normals = np.stack([np.cos(u) * np.cos(v), np.cos(u) * np.sin(v), np.sin(u)], axis=1)
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    K, H = torus_curvatures(u, spec.R, spec.r)
    gt = GroundTruth(
        gaussian=K,
        mean=H,
        exact_normals=normals,
        total_area=4.0 * np.pi ** 2 * spec.R * spec.r,
        euler=0,
    )
    cloud = PointCloud(points, normals, {"gaussian_true": K, "mean_true": H, "tube_angle": u})
    return cloud, gt
