"""Lattice fields and the domains they live on."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator


@dataclass
class Box:
    """Axis-aligned box; ``periodic`` wraps every axis (the right end is identified with the left)."""

    lo: np.ndarray
    hi: np.ndarray
    periodic: bool = False

    def __post_init__(self):
        self.lo = np.asarray(self.lo, float)
        self.hi = np.asarray(self.hi, float)

    @classmethod
    def cube(cls, d, side=1.0, center=None, periodic=False):
        c = np.zeros(d) if center is None else np.asarray(center, float)
        return cls(c - side / 2, c + side / 2, periodic)

    @property
    def d(self):
        return len(self.lo)

    @property
    def bounds(self):
        return self.lo, self.hi

    def level(self, x):
        x = np.asarray(x, float)
        return np.max(np.maximum(self.lo - x, x - self.hi), axis=-1)

    def inside(self, x):
        return self.level(x) < 0

    def distance(self, x):
        """Distance to the boundary for points inside (exact)."""
        x = np.asarray(x, float)
        return np.min(np.minimum(x - self.lo, self.hi - x), axis=-1)

    def boundary_samples(self, n_per_side: int):
        """Midpoint samples on the faces: (points, outward normals, weights)."""
        d = self.d
        pts, nrm, wts = [], [], []
        for i in range(d):
            others = [a for a in range(d) if a != i]
            axes = [self.lo[a] + (np.arange(n_per_side) + 0.5) * (self.hi[a] - self.lo[a]) / n_per_side
                    for a in others]
            cell = np.prod([(self.hi[a] - self.lo[a]) / n_per_side for a in others])
            grid = np.meshgrid(*axes, indexing="ij")
            flat = np.stack([g.ravel() for g in grid], -1)
            for side, val in ((-1, self.lo[i]), (1, self.hi[i])):
                p = np.empty((len(flat), d))
                p[:, others] = flat
                p[:, i] = val
                nn = np.zeros((len(flat), d))
                nn[:, i] = side
                pts.append(p)
                nrm.append(nn)
                wts.append(np.full(len(flat), cell))
        return np.concatenate(pts), np.concatenate(nrm), np.concatenate(wts)

    def describe(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist(), "periodic": self.periodic}


@dataclass
class Disk:
    """Disk in the plane (two-dimensional stand-in for the sphere)."""

    radius: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.center = np.asarray(self.center, float)

    def level(self, x):
        return np.linalg.norm(np.asarray(x, float) - self.center, axis=-1) - self.radius

    def closest(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        v = x - self.center
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        w = v / np.where(r == 0, 1.0, r)
        return w, self.center + self.radius * w, np.abs(r[:, 0] - self.radius)


class Embedded:
    """Smooth domain given by a surface object with ``level`` and ``closest``.

    Works with the surfaces of :mod:`homlayer.bie.geometry` (d = 3) and
    :class:`Disk` (d = 2).
    """

    def __init__(self, surface, pad: float = 0.0, mesh=None):
        self.surface = surface
        self.mesh = mesh
        c = np.asarray(getattr(surface, "center", np.zeros(3)), float)
        self._d = len(c)
        self.pad = pad

    @property
    def d(self):
        return self._d

    @property
    def bounds(self):
        s = self.surface
        if hasattr(s, "axes"):
            ext = np.asarray(s.axes, float)
        elif hasattr(s, "amp"):
            ext = np.full(self.d, s.radius * (1 + 2 * s.amp))
        else:
            ext = np.full(self.d, s.radius)
        c = np.asarray(s.center, float)
        return c - ext - self.pad, c + ext + self.pad

    def level(self, x):
        return self.surface.level(x)

    def inside(self, x):
        return self.surface.level(x) < 0

    def distance(self, x):
        return self.surface.closest(np.atleast_2d(x))[2]

    def closest_point(self, x):
        return self.surface.closest(np.atleast_2d(x))[1]

    def boundary_samples(self, n: int):
        """(points, normals, weights) from a boundary mesh (d = 3) or uniform angles (d = 2)."""
        if self.d == 2:
            t = 2 * np.pi * (np.arange(n) + 0.5) / n
            w = np.stack([np.cos(t), np.sin(t)], -1)
            r = self.surface.radius
            return self.surface.center + r * w, w, np.full(n, 2 * np.pi * r / n)
        from ..bie.geometry import make_boundary_mesh

        m = self.mesh if self.mesh is not None else make_boundary_mesh(self.surface, n)
        return m.points, m.normals, m.weights

    def describe(self):
        s = self.surface
        return {"type": "embedded", "surface": getattr(s, "name", type(s).__name__),
                "params": s.params() if hasattr(s, "params") else {}}


@dataclass
class GridField:
    """Field on a uniform lattice.

    Attributes
    ----------
    values : ndarray, shape (m, n_1, ..., n_d)
        Nodal values; NaN outside the domain.
    axes : list of 1-D arrays
        Node coordinates per axis.
    h : float
        Lattice spacing.
    mask : bool ndarray, shape (n_1, ..., n_d)
        Nodes in the closed domain (unknowns plus boundary nodes).
    bc : dict
        Boundary-condition descriptor.
    """

    values: np.ndarray
    axes: list
    h: float
    mask: np.ndarray
    bc: dict = field(default_factory=dict)
    domain: object = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(len(a) for a in self.axes)
        if self.values.shape[1:] != shape or self.mask.shape != shape:
            raise ValueError("values/mask inconsistent with the lattice axes")
        for a in self.axes:
            if len(a) > 1 and not np.allclose(np.diff(a), self.h, rtol=1e-9, atol=0):
                raise ValueError("axes must be uniformly spaced with spacing h")

    @property
    def d(self):
        return len(self.axes)

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape[1:]

    def points(self):
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def scalar(self):
        if self.m != 1:
            raise ValueError("field has several components")
        return self.values[0]

    def gradient(self):
        """Central-difference gradient, shape (d, m, n_1, ..., n_d).

        One-sided where a neighbour is missing (lattice edge or outside the
        domain); NaN where neither neighbour exists.
        """
        v = self.values
        out = np.full((self.d,) + v.shape, np.nan)
        for i in range(self.d):
            ax = i + 1
            fwd = np.full(v.shape, np.nan)
            bwd = np.full(v.shape, np.nan)
            lo = [slice(None)] * v.ndim
            hi = [slice(None)] * v.ndim
            lo[ax], hi[ax] = slice(0, -1), slice(1, None)
            diff = (v[tuple(hi)] - v[tuple(lo)]) / self.h
            fwd[tuple(lo)] = diff
            bwd[tuple(hi)] = diff
            cen = 0.5 * (fwd + bwd)
            out[i] = np.where(np.isnan(cen), np.where(np.isnan(fwd), bwd, fwd), cen)
        return out

    def interpolate(self, x):
        """Multilinear interpolation at points (P, d); returns (P, m)."""
        out = []
        for a in range(self.m):
            f = RegularGridInterpolator(self.axes, self.values[a], bounds_error=False, fill_value=np.nan)
            out.append(f(np.atleast_2d(x)))
        return np.stack(out, -1)

    def l2(self, region=None) -> float:
        """Discrete L^2 norm over the domain nodes (optionally a sub-mask)."""
        msk = self.mask if region is None else (self.mask & region)
        v = np.where(np.isnan(self.values), 0.0, self.values)
        return float(np.sqrt((v[:, msk] ** 2).sum() * self.h**self.d))

    def __sub__(self, other):
        if self.values.shape != other.values.shape:
            raise ValueError("lattice mismatch")
        return GridField(self.values - other.values, self.axes, self.h, self.mask & other.mask,
                         {"derived": "difference"}, self.domain)

    def save(self, stem) -> Path:
        """Flat little-endian float64 dump ``<stem>.bin`` plus ``<stem>.json`` header."""
        stem = Path(stem)
        self.values.astype("<f8").tofile(stem.with_suffix(".bin"))
        header = {"shape": list(self.values.shape), "spacing": self.h,
                  "origin": [float(a[0]) for a in self.axes], "bc": self.bc,
                  "dtype": "float64", "order": "C",
                  "domain": self.domain.describe() if hasattr(self.domain, "describe") else None,
                  "info": {k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool))}}
        p = stem.with_suffix(".json")
        p.write_text(json.dumps(header, indent=1))
        return p

    @classmethod
    def load(cls, stem) -> "GridField":
        stem = Path(stem)
        hdr = json.loads(stem.with_suffix(".json").read_text())
        vals = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").reshape(hdr["shape"])
        h = hdr["spacing"]
        axes = [o + h * np.arange(n) for o, n in zip(hdr["origin"], vals.shape[1:])]
        return cls(vals, axes, h, ~np.isnan(vals[0]), hdr["bc"])

    def line_cut_csv(self, path, axis: int = 0, through=None):
        """Write the values along one lattice line through the node nearest ``through``."""
        centre = np.array([a[len(a) // 2] for a in self.axes]) if through is None else np.asarray(through)
        idx = [int(np.argmin(np.abs(a - c))) for a, c in zip(self.axes, centre)]
        idx[axis] = slice(None)
        vals = self.values[(slice(None),) + tuple(idx)]
        data = np.column_stack([self.axes[axis], vals.T])
        np.savetxt(path, data, delimiter=",", header="x," + ",".join(f"u{a}" for a in range(self.m)),
                   comments="")
