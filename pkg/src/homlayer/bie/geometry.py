"""Smooth closed surfaces parameterized over the unit sphere, and their meshes.

Every surface is a map ``F: S^2 -> R^3``.  Geometry at a parameter point
``w`` is computed from the images ``T_l = DF(w) e_l`` of an oriented
tangent basis ``(e_1, e_2, w)``, so ``n = T_1 x T_2 / |T_1 x T_2|`` and the
area factor (surface measure over sphere measure) is ``|T_1 x T_2|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def tangent_basis(w):
    """Right-handed orthonormal (e1, e2) with e1 x e2 = w, for unit w (..., 3)."""
    w = np.asarray(w, float)
    ref = np.where(np.abs(w[..., 2:3]) < 0.9, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    e1 = np.cross(ref, w)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(w, e1)
    return e1, e2


class Shape:
    """Base class; subclasses define ``point`` and ``dpoint``."""

    name = "shape"
    center = np.zeros(3)

    def point(self, w):
        raise NotImplementedError

    def dpoint(self, w, t):
        """Derivative of F at ``w`` applied to tangent vectors ``t``."""
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def frame(self, w, e1=None, e2=None):
        """(point, unit outward normal, area factor) at parameter points ``w``."""
        w = np.asarray(w, float)
        if e1 is None:
            e1, e2 = tangent_basis(w)
        T1 = self.dpoint(w, e1)
        T2 = self.dpoint(w, e2)
        cr = np.cross(T1, T2)
        J = np.linalg.norm(cr, axis=-1)
        return self.point(w), cr / J[..., None], J

    def level(self, x):
        """Negative inside, positive outside, zero on the surface."""
        raise NotImplementedError

    def inside(self, x):
        return self.level(x) < 0

    def radial_parameter(self, x):
        """Initial parameter guess for the closest point: the direction from the center."""
        v = np.asarray(x, float) - self.center
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        return v / np.where(nv == 0, 1.0, nv)

    def closest(self, x, w0=None, iters: int = 60, tol: float = 1e-14):
        """Closest surface point by Gauss-Newton on the parameter sphere.

        Returns
        -------
        w : (P, 3) foot parameters, y : (P, 3) foot points, dist : (P,)
        unsigned distances.
        """
        x = np.atleast_2d(np.asarray(x, float))
        w = self.radial_parameter(x) if w0 is None else np.array(w0, float)
        for _ in range(iters):
            e1, e2 = tangent_basis(w)
            T1, T2 = self.dpoint(w, e1), self.dpoint(w, e2)
            r = self.point(w) - x
            g11 = (T1 * T1).sum(-1)
            g12 = (T1 * T2).sum(-1)
            g22 = (T2 * T2).sum(-1)
            b1 = -(T1 * r).sum(-1)
            b2 = -(T2 * r).sum(-1)
            det = g11 * g22 - g12**2
            s1 = (g22 * b1 - g12 * b2) / det
            s2 = (g11 * b2 - g12 * b1) / det
            # damp long steps; the parameter lives on the unit sphere
            step = np.sqrt(s1**2 + s2**2)
            damp = np.minimum(1.0, 0.5 / np.maximum(step, 1e-300))
            w = w + (damp * s1)[:, None] * e1 + (damp * s2)[:, None] * e2
            w /= np.linalg.norm(w, axis=-1, keepdims=True)
            if step.max() < tol:
                break
        y = self.point(w)
        return w, y, np.linalg.norm(y - x, axis=-1)

    def distance(self, x):
        """Unsigned distance to the surface."""
        return self.closest(x)[2]


@dataclass
class Sphere(Shape):
    radius: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name = "sphere"

    def __post_init__(self):
        self.center = np.asarray(self.center, float)

    def point(self, w):
        return self.center + self.radius * np.asarray(w, float)

    def dpoint(self, w, t):
        return self.radius * np.asarray(t, float)

    def level(self, x):
        return np.linalg.norm(np.asarray(x, float) - self.center, axis=-1) - self.radius

    def closest(self, x, w0=None, iters=0, tol=0.0):
        x = np.atleast_2d(np.asarray(x, float))
        w = self.radial_parameter(x)
        y = self.point(w)
        return w, y, np.abs(np.linalg.norm(x - self.center, axis=-1) - self.radius)

    def params(self):
        return {"radius": self.radius, "center": self.center.tolist()}


@dataclass
class Ellipsoid(Shape):
    axes: tuple = (2.0, 1.0, 1.0)
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name = "ellipsoid"

    def __post_init__(self):
        self.axes = np.asarray(self.axes, float)
        self.center = np.asarray(self.center, float)

    def point(self, w):
        return self.center + self.axes * np.asarray(w, float)

    def dpoint(self, w, t):
        return self.axes * np.asarray(t, float)

    def level(self, x):
        z = (np.asarray(x, float) - self.center) / self.axes
        return np.linalg.norm(z, axis=-1) - 1.0

    def radial_parameter(self, x):
        z = (np.asarray(x, float) - self.center) / self.axes
        nz = np.linalg.norm(z, axis=-1, keepdims=True)
        return z / np.where(nz == 0, 1.0, nz)

    def params(self):
        return {"axes": self.axes.tolist(), "center": self.center.tolist()}


@dataclass
class Star(Shape):
    """Radial graph r = R (1 + amp s(w)) with a fixed smooth cubic s."""

    radius: float = 1.0
    amp: float = 0.15
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name = "star"

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        if not 0 <= self.amp < 0.3:
            raise ValueError("amp must lie in [0, 0.3) to keep the surface star-shaped and smooth")

    @staticmethod
    def _s(w):
        x, y, z = w[..., 0], w[..., 1], w[..., 2]
        return 3.0 * x * y * z + z**2 - 1.0 / 3.0

    @staticmethod
    def _ds(w):
        x, y, z = w[..., 0], w[..., 1], w[..., 2]
        return np.stack([3 * y * z, 3 * x * z, 3 * x * y + 2 * z], axis=-1)

    def rho(self, w):
        return self.radius * (1.0 + self.amp * self._s(np.asarray(w, float)))

    def point(self, w):
        w = np.asarray(w, float)
        return self.center + self.rho(w)[..., None] * w

    def dpoint(self, w, t):
        w = np.asarray(w, float)
        t = np.asarray(t, float)
        drho = self.radius * self.amp * (self._ds(w) * t).sum(-1)
        return drho[..., None] * w + self.rho(w)[..., None] * t

    def level(self, x):
        v = np.asarray(x, float) - self.center
        r = np.linalg.norm(v, axis=-1)
        w = v / np.where(r == 0, 1.0, r)[..., None]
        return r / self.rho(w) - 1.0

    def params(self):
        return {"radius": self.radius, "amp": self.amp, "center": self.center.tolist()}


SHAPES = {"sphere": Sphere, "ellipsoid": Ellipsoid, "star": Star}


def make_shape(name: str, **kw) -> Shape:
    try:
        return SHAPES[name](**kw)
    except KeyError:
        raise ValueError(f"unsupported shape {name!r}; choose from {sorted(SHAPES)}") from None


@dataclass
class BoundaryMesh:
    """Nystrom nodes on the surface (product Gauss x trapezoid rule in (theta, phi)).

    Node ``j * 2n + k`` sits at ``theta_j`` (Gauss-Legendre in cos theta,
    ascending theta) and ``phi_k = pi k / n``.
    """

    shape: Shape
    n: int
    omega: np.ndarray
    theta: np.ndarray  # (n,)
    phi: np.ndarray  # (2n,)
    sphere_weights: np.ndarray  # (N,)
    points: np.ndarray
    normals: np.ndarray
    jac: np.ndarray
    weights: np.ndarray
    h: float

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def integrate(self, f):
        return float(np.dot(self.weights, f))

    def l2(self, f) -> float:
        f = np.asarray(f)
        return float(np.sqrt(np.dot(self.weights, np.abs(f) ** 2)))

    def closedness(self) -> float:
        """|sum_q w_q n_q| (zero for an exactly closed surface)."""
        return float(np.linalg.norm(self.weights @ self.normals))

    def describe(self) -> dict:
        return {"shape": self.shape.name, "params": self.shape.params(), "n": self.n,
                "nodes": self.size, "h": self.h, "area": self.area}


def make_boundary_mesh(shape: Shape | str, n: int, **shape_kw) -> BoundaryMesh:
    """Product quadrature mesh with ``n`` latitudes and ``2n`` longitudes.

    The rule integrates spherical harmonics up to degree 2n - 1 exactly in
    the parameter, hence smooth integrands with spectral accuracy.
    """
    if isinstance(shape, str):
        shape = make_shape(shape, **shape_kw)
    if n < 4:
        raise ValueError("refinement n must be at least 4")
    x, wt = np.polynomial.legendre.leggauss(n)
    order = np.argsort(-x)  # ascending theta
    x, wt = x[order], wt[order]
    theta = np.arccos(x)
    phi = np.pi * np.arange(2 * n) / n
    T, P = np.meshgrid(theta, phi, indexing="ij")
    st = np.sin(T)
    omega = np.stack([st * np.cos(P), st * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    ws = np.repeat(wt * np.pi / n, 2 * n)
    # spherical frame: e_theta x e_phi = w
    e1 = np.stack([np.cos(T) * np.cos(P), np.cos(T) * np.sin(P), -st], axis=-1).reshape(-1, 3)
    e2 = np.stack([-np.sin(P), np.cos(P), np.zeros_like(P)], axis=-1).reshape(-1, 3)
    pts, nrm, jac = shape.frame(omega, e1, e2)
    weights = ws * jac
    h = float(np.sqrt(weights.sum() / len(weights)))
    return BoundaryMesh(shape, n, omega, theta, phi, ws, pts, nrm, jac, weights, h)
