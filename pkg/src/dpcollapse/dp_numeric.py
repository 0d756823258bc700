"""Voxel evaluation of the gravitational self-energy of a displaced mass
distribution, with a radial-quadrature oracle for uniform spheres.

The self-energy of the density difference is written as
``E = G * [S(0) - S(d)]`` with ``S(d) = int int rho(x) rho(y - d) / |x - y|``,
summed over all ordered body pairs. Bodies are voxelised on a common lattice
spacing; each pair of voxels interacts through the exact Newtonian kernel of
two uniform boxes in the near field and a point-plus-quadrupole expansion
further out. Voxel pairs sharing a lattice offset are grouped by an FFT
cross-correlation of the voxel mass arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erf

from .physics import DomainError, PhysicalConstants

SHAPES = ("cylinder", "sphere", "box")
SELF_RULES = ("cubic_self_term", "skip_diagonal")
_SQPI = math.sqrt(math.pi)


class ConvergenceError(RuntimeError):
    """Refinement levels disagree beyond tolerance; carries the estimate."""

    def __init__(self, message, estimate, levels):
        super().__init__(message)
        self.estimate = estimate
        self.levels = levels


class FitError(RuntimeError):
    """The quadratic fit cannot be trusted."""


@dataclass(frozen=True)
class MassBody:
    """Homogeneous body. ``dims`` is ``(radius, thickness)`` for a cylinder,
    ``(radius,)`` for a sphere and ``(lx, ly, lz)`` for an axis-aligned box."""

    shape: str
    dims: tuple
    density: float
    center: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DomainError(f"unknown shape {self.shape!r}")
        n_dims = {"cylinder": 2, "sphere": 1, "box": 3}[self.shape]
        dims = tuple(float(x) for x in self.dims)
        if len(dims) != n_dims or not all(x > 0 and math.isfinite(x) for x in dims):
            raise DomainError(f"{self.shape} needs {n_dims} positive dimensions, got {self.dims!r}")
        if not (self.density > 0 and math.isfinite(self.density)):
            raise DomainError("density must be positive")
        center = np.asarray(self.center, dtype=float)
        axis = np.asarray(self.axis, dtype=float)
        if center.shape != (3,) or axis.shape != (3,) or not np.all(np.isfinite(center)):
            raise DomainError("center and axis must be finite 3-vectors")
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise DomainError("axis must be a unit vector")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "center", tuple(center))
        object.__setattr__(self, "axis", tuple(axis))

    @classmethod
    def cylinder(cls, radius, thickness, density, center=(0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0)):
        axis = np.asarray(axis, dtype=float)
        return cls("cylinder", (radius, thickness), density, center, tuple(axis / np.linalg.norm(axis)))

    @classmethod
    def sphere(cls, radius, density, center=(0.0, 0.0, 0.0)):
        return cls("sphere", (radius,), density, center)

    @classmethod
    def box(cls, lx, ly, lz, density, center=(0.0, 0.0, 0.0)):
        return cls("box", (lx, ly, lz), density, center)

    @property
    def volume(self) -> float:
        if self.shape == "cylinder":
            r, t = self.dims
            return math.pi * r * r * t
        if self.shape == "sphere":
            return 4.0 / 3.0 * math.pi * self.dims[0] ** 3
        return float(np.prod(self.dims))

    @property
    def mass(self) -> float:
        return self.density * self.volume

    def extent(self) -> np.ndarray:
        """Bounding-box side lengths in the frame where cylinder axes are z."""
        if self.shape == "cylinder":
            r, t = self.dims
            return np.array([2 * r, 2 * r, t])
        if self.shape == "sphere":
            return np.full(3, 2 * self.dims[0])
        return np.array(self.dims)

    def scaled(self, factor: float) -> "MassBody":
        from dataclasses import replace
        return replace(self, density=self.density * factor)


@dataclass(frozen=True)
class QuadratureConfig:
    """Voxel resolution and refinement control.

    ``refinement_levels`` counts evaluations at ``N, N/2, N/4, ...``; with two
    or more, the finest two must agree to ``tolerance`` (relative).
    """

    voxel_count_per_axis: int = 32
    refinement_levels: int = 1
    self_interaction_rule: str = "cubic_self_term"
    tolerance: float = 0.05
    near_field: float = 4.0

    def __post_init__(self):
        if self.voxel_count_per_axis < 8:
            raise DomainError("voxel_count_per_axis must be >= 8")
        if self.refinement_levels < 1:
            raise DomainError("refinement_levels must be >= 1")
        if self.voxel_count_per_axis >> (self.refinement_levels - 1) < 4:
            raise DomainError("too many refinement levels for this resolution")
        if self.self_interaction_rule not in SELF_RULES:
            raise DomainError(f"unknown self_interaction_rule {self.self_interaction_rule!r}")
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")


# ---------------------------------------------------------------------------
# box-box kernel


def _tent_gauss(t, r, a):
    """``int (a - |u|)_+ exp(-t^2 (u + r)^2) du`` in closed form."""

    def seg(w1, w2, c0, c1):
        # int_{w1}^{w2} (c0 + c1 w) exp(-t^2 w^2) dw
        e1 = erf(t * w2) - erf(t * w1)
        ex = np.expm1(-(t * w1) ** 2) - np.expm1(-(t * w2) ** 2)
        return c0 * _SQPI / (2 * t) * e1 + c1 * ex / (2 * t * t)

    return seg(r - a, r, a - r, 1.0) + seg(r, r + a, a + r, -1.0)


def _s_grid(rmax, amin, h):
    return np.arange(math.log(1e-14 / rmax), math.log(1e8 / amin), h)


def box_kernel(D, a, h: float = 0.1, chunk: int = 2048) -> np.ndarray:
    """``int int 1/|x - y|`` over two unit-density boxes of sides ``a`` whose
    centres differ by each row of ``D``.

    Uses ``1/|v| = 2/sqrt(pi) int_0^inf exp(-t^2 v^2) dt``; each axis then
    integrates in closed form and the outer integral is a trapezoid rule in
    ``ln t`` (geometric convergence).
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    a = np.asarray(a, dtype=float)
    scale = float(a.max())
    Dn, an = D / scale, a / scale
    s = _s_grid(float(np.abs(Dn).max(initial=0.0)) + 3 * an.max(), an.min(), h)
    t = np.exp(s)[:, None]
    out = np.empty(D.shape[0])
    for lo in range(0, D.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        prod = t.copy()
        for k in range(3):
            prod = prod * _tent_gauss(t, Dn[sl, k], an[k])
        out[sl] = prod.sum(axis=0)
    return 2 / _SQPI * h * out * scale**5


def _far_kernel(D, a):
    """Point plus quadrupole expansion of :func:`box_kernel`, for ``|D| >> a``."""
    V2 = float(np.prod(a)) ** 2
    R2 = np.einsum("ij,ij->i", D, D)
    R = np.sqrt(R2)
    quad = sum(a[k] ** 2 / 12.0 * (3 * D[:, k] ** 2 - R2) for k in range(3)) / R**5
    return V2 * (1.0 / R + quad)


def _far_kernel_difference(D, d, a):
    """``K(D) - K(D - d)`` in the far field without cancellation in 1/R."""
    V2 = float(np.prod(a)) ** 2
    E = D - d
    R = np.sqrt(np.einsum("ij,ij->i", D, D))
    Q = np.sqrt(np.einsum("ij,ij->i", E, E))
    mono = (np.dot(d, d) - 2.0 * D @ d) / (R * Q * (R + Q))

    def quad(X, r):
        return sum(a[k] ** 2 / 12.0 * (3 * X[:, k] ** 2 - r**2) for k in range(3)) / r**5

    return V2 * mono + V2 * (quad(D, R) - quad(E, Q))


# ---------------------------------------------------------------------------
# voxelisation


def _circle_quadrant_area(x, y, r):
    """Signed area of the disc of radius ``r`` within ``[0, x] x [0, y]``."""
    sx, sy = np.sign(x), np.sign(y)
    x = np.minimum(np.abs(x), r)
    y = np.minimum(np.abs(y), r)
    xc = np.sqrt(np.maximum(r * r - y * y, 0.0))

    def H(u):
        return 0.5 * (u * np.sqrt(np.maximum(r * r - u * u, 0.0)) + r * r * np.arcsin(u / r))

    m = np.minimum(x, xc)
    return sx * sy * (y * m + H(x) - H(m))


def _disc_area_fraction(x_edges, y_edges, r):
    P = _circle_quadrant_area
    X0, Y0 = np.meshgrid(x_edges[:-1], y_edges[:-1], indexing="ij")
    X1, Y1 = np.meshgrid(x_edges[1:], y_edges[1:], indexing="ij")
    area = P(X1, Y1, r) - P(X0, Y1, r) - P(X1, Y0, r) + P(X0, Y0, r)
    cell = np.outer(np.diff(x_edges), np.diff(y_edges))
    return np.clip(area / cell, 0.0, 1.0)


def _interval_fraction(edges, half):
    lo = np.maximum(edges[:-1], -half)
    hi = np.minimum(edges[1:], half)
    return np.clip((hi - lo) / np.diff(edges), 0.0, 1.0)


def _sphere_fraction(edges, radius, sub: int = 10):
    x, y, z = edges
    nx, ny, nz = len(x) - 1, len(y) - 1, len(z) - 1
    cx, cy, cz = (0.5 * (e[:-1] + e[1:]) for e in edges)
    hx, hy, hz = (0.5 * np.diff(e) for e in edges)
    X, Y, Z = np.meshgrid(cx, cy, cz, indexing="ij")
    HX, HY, HZ = np.meshgrid(hx, hy, hz, indexing="ij")
    near = np.sqrt(np.maximum(np.abs(X) - HX, 0) ** 2 + np.maximum(np.abs(Y) - HY, 0) ** 2
                   + np.maximum(np.abs(Z) - HZ, 0) ** 2)
    far = np.sqrt((np.abs(X) + HX) ** 2 + (np.abs(Y) + HY) ** 2 + (np.abs(Z) + HZ) ** 2)
    frac = np.where(far <= radius, 1.0, 0.0)
    edge = (near < radius) & (far > radius)
    idx = np.nonzero(edge)
    # midpoint sub-sampling of voxels cut by the surface
    u = (np.arange(sub) + 0.5) / sub - 0.5
    ux, uy, uz = np.meshgrid(u, u, u, indexing="ij")
    pts = np.stack([ux.ravel(), uy.ravel(), uz.ravel()])
    for lo in range(0, idx[0].size, 4096):
        sel = tuple(i[lo:lo + 4096] for i in idx)
        px = X[sel][:, None] + 2 * HX[sel][:, None] * pts[0]
        py = Y[sel][:, None] + 2 * HY[sel][:, None] * pts[1]
        pz = Z[sel][:, None] + 2 * HZ[sel][:, None] * pts[2]
        frac[sel] = np.mean(px * px + py * py + pz * pz <= radius * radius, axis=1)
    assert frac.shape == (nx, ny, nz)
    return frac


@dataclass
class VoxelGrid:
    """Voxel densities (kg/m^3) on a regular lattice; ``origin`` is the centre
    of voxel ``[0, 0, 0]``."""

    weights: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.weights.sum() * np.prod(self.spacing))


def voxelize(body: MassBody, spacing, center=None) -> VoxelGrid:
    """Partial-volume voxelisation of a body (cylinder axis must be z)."""
    spacing = np.asarray(spacing, dtype=float)
    center = np.asarray(body.center if center is None else center, dtype=float)
    n = np.maximum(np.ceil(body.extent() / spacing - 1e-9).astype(int), 1)
    edges = [(np.arange(n[k] + 1) - n[k] / 2.0) * spacing[k] for k in range(3)]
    if body.shape == "cylinder":
        r, t = body.dims
        frac = (_disc_area_fraction(edges[0], edges[1], r)[:, :, None]
                * _interval_fraction(edges[2], t / 2)[None, None, :])
    elif body.shape == "sphere":
        frac = _sphere_fraction(edges, body.dims[0])
    else:
        fx, fy, fz = (_interval_fraction(edges[k], body.dims[k] / 2) for k in range(3))
        frac = fx[:, None, None] * fy[None, :, None] * fz[None, None, :]
    origin = center + np.array([e[0] + spacing[k] / 2 for k, e in enumerate(edges)])
    return VoxelGrid(body.density * frac, origin, spacing)


def _rotation_to_z(axis) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    z = np.array([0.0, 0.0, 1.0])
    c = float(a @ z)
    if c > 1 - 1e-15:
        return np.eye(3)
    if c < -1 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    v = np.cross(a, z)
    s = np.linalg.norm(v)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1 - c) / s**2)


def _common_frame(bodies: Sequence[MassBody], displacement):
    """Rotate so that every cylinder axis is z; returns centres and displacement."""
    axes = [np.asarray(b.axis) for b in bodies if b.shape == "cylinder"]
    rot = np.eye(3)
    if axes:
        ref = axes[0]
        for ax in axes[1:]:
            if abs(abs(float(ax @ ref)) - 1.0) > 1e-12:
                raise DomainError("all cylinder axes in a body set must be parallel")
        rot = _rotation_to_z(ref)
        if any(b.shape == "box" for b in bodies) and not np.allclose(rot, np.eye(3)):
            raise DomainError("boxes are axis-aligned; cylinders must then lie along z")
    centers = [rot @ np.asarray(b.center) for b in bodies]
    return centers, rot @ np.asarray(displacement, dtype=float)


def _spacing(bodies, n):
    return np.min([b.extent() for b in bodies], axis=0) / n


# ---------------------------------------------------------------------------
# pair sums


def _offset_table(gb: VoxelGrid, gc: VoxelGrid):
    corr = fftconvolve(gb.weights, gc.weights[::-1, ::-1, ::-1])
    shift = np.array(gc.weights.shape) - 1
    L = np.indices(corr.shape).reshape(3, -1).T - shift
    D = (gb.origin - gc.origin) + L * gb.spacing
    # drop FFT round-off where no voxel pairs exist
    c = corr.ravel()
    keep = np.abs(c) > 1e-12 * np.abs(c).max()
    return D[keep], c[keep], L[keep]


def _pair_sum(D, C, L, a, d, rule, same_body, near_field, difference):
    """``sum C * [K(D) - K(D - d)]`` (difference) or ``sum C * K(D - d)``."""
    amax = float(a.max())
    E = D - d
    R_lo = np.minimum(np.linalg.norm(D, axis=1), np.linalg.norm(E, axis=1))
    if not difference:
        R_lo = np.linalg.norm(E, axis=1)
    near = R_lo < near_field * amax
    total = 0.0
    if difference:
        if np.any(~near):
            total += float(C[~near] @ _far_kernel_difference(D[~near], d, a))
    else:
        if np.any(~near):
            total += float(C[~near] @ _far_kernel(E[~near], a))
    if not np.any(near):
        return total
    Dn, En, Cn = D[near], E[near], C[near]
    if rule == "cubic_self_term":
        if difference:
            both = box_kernel(np.vstack([Dn, En]), a)
            k = both[: len(Dn)] - both[len(Dn):]
        else:
            k = box_kernel(En, a)
        return total + float(Cn @ k)
    # point kernel, dropping the voxel-with-itself pair of a body
    V2 = float(np.prod(a)) ** 2
    drop = same_body & np.all(L[near] == 0, axis=1) if same_body else np.zeros(len(Cn), bool)
    Cn = np.where(drop, 0.0, Cn)
    with np.errstate(divide="ignore", invalid="ignore"):
        kE = np.where(drop, 0.0, V2 / np.linalg.norm(En, axis=1))
        if difference:
            kD = np.where(drop, 0.0, V2 / np.linalg.norm(Dn, axis=1))
            return total + float(Cn @ (kD - kE))
    return total + float(Cn @ kE)


def _grids(bodies, n, displacement):
    centers, d = _common_frame(bodies, displacement)
    a = _spacing(bodies, n)
    return [voxelize(b, a, c) for b, c in zip(bodies, centers)], a, d


def _level_value(bodies, displacement, n, q, difference):
    grids, a, d = _grids(bodies, n, displacement)
    total = 0.0
    for i, gb in enumerate(grids):
        for j, gc in enumerate(grids):
            D, C, L = _offset_table(gb, gc)
            total += _pair_sum(D, C, L, a, d, q.self_interaction_rule, i == j,
                               q.near_field, difference)
    return total


def _refine(bodies, displacement, q, difference):
    counts = [q.voxel_count_per_axis >> k for k in range(q.refinement_levels)][::-1]
    levels = [(n, _level_value(bodies, displacement, n, q, difference)) for n in counts]
    est = levels[-1][1]
    if len(levels) >= 2:
        prev = levels[-2][1]
        change = abs(est - prev) / max(abs(est), np.finfo(float).tiny)
        if change > q.tolerance:
            raise ConvergenceError(
                f"relative change {change:.3g} between {levels[-2][0]} and "
                f"{levels[-1][0]} voxels exceeds {q.tolerance}", est, levels)
    return est, levels


def mutual_energy_S(body: MassBody, offset, q: QuadratureConfig = QuadratureConfig()) -> float:
    """``int int rho(x) rho(y - offset) / |x - y|`` in kg^2/m."""
    offset = np.asarray(offset, dtype=float)
    if offset.shape != (3,) or not np.all(np.isfinite(offset)):
        raise DomainError("offset must be a finite 3-vector")
    return _refine([body], offset, q, difference=False)[0]


def dp_energy_rigid(body_set: Sequence[MassBody], displacement,
                    q: QuadratureConfig = QuadratureConfig(),
                    consts: PhysicalConstants = PhysicalConstants()) -> float:
    """Self-energy (J) of the difference between a body set and its rigidly
    displaced copy, cross-body terms included."""
    return dp_energy_levels(body_set, displacement, q, consts)[0]


def dp_energy_levels(body_set, displacement, q: QuadratureConfig = QuadratureConfig(),
                     consts: PhysicalConstants = PhysicalConstants()):
    """``(estimate, [(voxels_per_axis, value), ...])`` coarse to fine."""
    bodies = list(body_set)
    if not bodies:
        raise DomainError("empty body set")
    d = np.asarray(displacement, dtype=float)
    if d.shape != (3,) or not np.all(np.isfinite(d)):
        raise DomainError("displacement must be a finite 3-vector")
    if not np.any(d):
        return 0.0, [(q.voxel_count_per_axis, 0.0)]
    est, levels = _refine(bodies, d, q, difference=True)
    return consts.G * est, [(n, consts.G * v) for n, v in levels]


# ---------------------------------------------------------------------------
# sphere oracle

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _gl(f, lo, hi):
    if hi <= lo:
        return 0.0
    x = 0.5 * (hi - lo) * _GL_X + 0.5 * (hi + lo)
    return 0.5 * (hi - lo) * float(_GL_W @ f(x))


def sphere_oracle(R: float, rho: float, d: float,
                  consts: PhysicalConstants = PhysicalConstants()) -> float:
    """Self-energy (J) of a uniform sphere superposed with its copy at ``d``.

    Radial quadrature of ``rho * Phi(r) * A(r)`` where ``Phi`` is the sphere's
    own potential and ``A`` the area of the displaced sphere on the shell of
    radius ``r``. Every piece is polynomial, so 12-point Gauss-Legendre is exact
    up to rounding; small ``d`` integrates the area difference directly.
    """
    if not (R > 0 and rho > 0):
        raise DomainError("R and rho must be positive")
    if not d >= 0:
        raise DomainError("d must be non-negative")
    if d == 0:
        return 0.0
    M = rho * 4.0 / 3.0 * math.pi * R**3

    def phi(r):
        return np.where(r < R, 2 * math.pi * rho * (R * R - r * r / 3.0), M / np.maximum(r, 1e-300))

    def cap(r):
        return math.pi * r * (R - r + d) * (R + r - d) / d

    if d < R:
        # S(0) - S(d): the shells differ only for R - d < r < R + d
        inner = _gl(lambda r: phi(r) * (4 * math.pi * r * r - cap(r)), R - d, R)
        outer = _gl(lambda r: -phi(r) * cap(r), R, R + d)
        diff = rho * (inner + outer)
    else:
        s_d = 0.0
        lo, hi = d - R, d + R
        for a, b in ((lo, min(R, hi)), (max(R, lo), hi)):
            s_d += _gl(lambda r: phi(r) * cap(r), a, b)
        diff = sphere_self_integral(R, rho) - rho * s_d
    return consts.G * diff


def sphere_self_integral(R: float, rho: float) -> float:
    """``S(0)`` of a uniform sphere, ``(6/5) M^2 / R``."""
    M = rho * 4.0 / 3.0 * math.pi * R**3
    return 1.2 * M * M / R


# ---------------------------------------------------------------------------
# quadratic fit


@dataclass
class QuadraticFit:
    k: float
    samples: np.ndarray
    energies: np.ndarray
    residuals: np.ndarray = field(repr=False)
    rel_rms: float = 0.0
    rel_max: float = 0.0


def fit_through_origin(samples, energies) -> QuadraticFit:
    s = np.asarray(samples, dtype=float)
    e = np.asarray(energies, dtype=float)
    x = s * s
    k = float(x @ e / (x @ x))
    res = e - k * x
    scale = np.maximum(np.abs(e), np.finfo(float).tiny)
    return QuadraticFit(k, s, e, res, float(np.sqrt(np.mean((res / scale) ** 2))),
                        float(np.max(np.abs(res) / scale)))


def fit_quadratic_coefficient(body_set: Sequence[MassBody], displacement_samples,
                              q: QuadratureConfig = QuadratureConfig(), direction=None,
                              consts: PhysicalConstants = PhysicalConstants(),
                              min_ratio: float = 1e-4) -> QuadraticFit:
    """Least-squares ``E = k * s^2`` through the origin (k in J/m^2).

    ``direction`` defaults to the first cylinder axis, else z. Samples far
    below the voxel size lose the energy to rounding and are rejected.
    """
    bodies = list(body_set)
    s = np.asarray(displacement_samples, dtype=float)
    if s.ndim != 1 or s.size < 4:
        raise DomainError("need at least 4 displacement samples")
    if np.any(s <= 0):
        raise DomainError("displacement samples must be positive")
    if direction is None:
        cyl = [b for b in bodies if b.shape == "cylinder"]
        direction = cyl[0].axis if cyl else (0.0, 0.0, 1.0)
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    a_min = float(_spacing(bodies, q.voxel_count_per_axis).min())
    if np.all(s < min_ratio * a_min):
        raise FitError(f"all samples below {min_ratio:g} voxel sides ({a_min:.3g} m); "
                       "the energy difference is lost to rounding")
    e = np.array([dp_energy_rigid(bodies, x * u, q, consts) for x in s])
    return fit_through_origin(s, e)
