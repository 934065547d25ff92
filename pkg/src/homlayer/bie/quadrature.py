"""Singular and near-singular Nystrom quadrature on parameterized surfaces.

A floating partition of unity splits every boundary integral around the
target's (or foot point's) parameter ``w_P``:

* ``(1 - eta)`` times the kernel is smooth and integrated by the base rule,
* ``eta`` times the kernel lives on a cap of angular radius ``theta_c`` and
  is integrated in polar coordinates about ``w_P``, where the area element
  ``sin(theta')`` cancels the 1/r singularity.

Densities at the polar nodes come from tensor Lagrange interpolation of
the nodal values in (theta, phi), with theta continued across the poles.
The kernel is used in full; near the diagonal it differs from the
principal-part kernel by a smoother term, so the same polar rule covers
both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from ..kernels.fundamental import KernelContext, gamma_0
from .geometry import BoundaryMesh, tangent_basis


def bump(t, theta_c):
    """C-infinity cutoff: 1 with all derivatives at t = 0, 0 for t >= theta_c."""
    u = np.asarray(t, float) / theta_c
    out = np.zeros_like(u)
    inside = u < 1
    ui = u[inside]
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        e = np.where(ui > 0, np.exp(-1.0 / np.where(ui > 0, ui, 1.0)), 0.0)
        out[inside] = np.exp(2.0 * e / (ui - 1.0))
    return out


def _lagrange_weights(nodes, x):
    """Lagrange basis weights; nodes (Q, p), x (Q,) -> (Q, p)."""
    p = nodes.shape[1]
    w = np.ones_like(nodes)
    for s in range(p):
        for t in range(p):
            if s != t:
                w[:, s] *= (x - nodes[:, t]) / (nodes[:, s] - nodes[:, t])
    return w


@dataclass
class QuadratureOptions:
    theta_c: float = 1.5
    order: int = 8  # interpolation points per direction
    n_radial: int | None = None
    n_angular: int | None = None
    near_panel_nodes: int = 10
    near_factor: float = 6.0  # near rule for dist < near_factor * h
    near_angular: int | None = None

    def resolve(self, n):
        nr = self.n_radial or max(16, (3 * n) // 4)
        na = self.n_angular or max(24, n)
        nna = self.near_angular or max(48, (3 * n) // 2)
        return nr, na + (na % 2), nna + (nna % 2)


class Interpolator:
    """Tensor Lagrange interpolation from mesh nodes to arbitrary parameters."""

    def __init__(self, mesh: BoundaryMesh, order: int = 8):
        if order % 2:
            raise ValueError("interpolation order must be even")
        self.mesh, self.p = mesh, order
        n = mesh.n
        th = mesh.theta
        rev = np.arange(n)[::-1]
        self.th_ext = np.concatenate([-th[::-1], th, 2 * np.pi - th[::-1]])
        self.j_ext = np.concatenate([rev, np.arange(n), rev])
        self.shift_ext = np.concatenate([np.full(n, n), np.zeros(n, int), np.full(n, n)])

    def stencil(self, w):
        """Indices and weights, each (Q, p*p), for unit parameters ``w`` (Q, 3)."""
        w = np.atleast_2d(w)
        n, p = self.mesh.n, self.p
        theta = np.arccos(np.clip(w[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(w[:, 1], w[:, 0]), 2 * np.pi)
        pos = np.searchsorted(self.th_ext, theta)
        start = np.clip(pos - p // 2, 0, len(self.th_ext) - p)
        tw_idx = start[:, None] + np.arange(p)
        wt_theta = _lagrange_weights(self.th_ext[tw_idx], theta)
        dphi = np.pi / n
        u = phi / dphi
        k0 = np.floor(u).astype(int) - (p // 2 - 1)
        kk = k0[:, None] + np.arange(p)
        wt_phi = _lagrange_weights(kk.astype(float), u)
        jj = self.j_ext[tw_idx]  # (Q, p)
        sh = self.shift_ext[tw_idx]
        idx = jj[:, :, None] * (2 * n) + np.mod(kk[:, None, :] + sh[:, :, None], 2 * n)
        wts = wt_theta[:, :, None] * wt_phi[:, None, :]
        Q = w.shape[0]
        return idx.reshape(Q, p * p), wts.reshape(Q, p * p)

    def matrix(self, w):
        """Sparse (Q, N) interpolation matrix."""
        idx, wts = self.stencil(w)
        Q = idx.shape[0]
        rows = np.repeat(np.arange(Q), idx.shape[1])
        return sps.csr_matrix((wts.ravel(), (rows, idx.ravel())), shape=(Q, self.mesh.size))

    def __call__(self, f, w):
        idx, wts = self.stencil(w)
        return (np.asarray(f)[idx] * wts).sum(axis=1)


def _polar_nodes(w_p, e1, e2, rad, ang):
    """Parameter points on caps about w_p.  Shapes: w_p (P,3), rad (R,), ang (A,)."""
    ct, st = np.cos(rad), np.sin(rad)
    ca, sa = np.cos(ang), np.sin(ang)
    dirs = ca[None, :, None] * e1[:, None, :] + sa[None, :, None] * e2[:, None, :]  # (P, A, 3)
    return (ct[None, :, None, None] * w_p[:, None, None, :]
            + st[None, :, None, None] * dirs[:, None, :, :])  # (P, R, A, 3)


def _kernel_triplet(ctx: KernelContext, x, y, nx, ny):
    """Single layer, K and K* kernels for target x (.., 3), source y, normals."""
    val, grad = gamma_0(x - y, ctx, want_gradient=True)
    Agrad = grad @ ctx.A
    k = (nx * Agrad).sum(-1)
    kstar = -(ny * Agrad).sum(-1)  # n(y) . A grad_y Gamma(x - y)
    return val, k, kstar, grad


class LayerQuadrature:
    """Assembly of on-surface operators and off-surface evaluation.

    Parameters
    ----------
    mesh : BoundaryMesh
    ctx : KernelContext
    options : QuadratureOptions
    """

    def __init__(self, mesh: BoundaryMesh, ctx: KernelContext, options: QuadratureOptions | None = None):
        if ctx.d != 3:
            raise ValueError("layer potentials are implemented for surfaces in R^3")
        self.mesh, self.ctx = mesh, ctx
        self.opt = options or QuadratureOptions()
        self.nr, self.na, self.nna = self.opt.resolve(mesh.n)
        self.interp = Interpolator(mesh, self.opt.order)
        x, w = np.polynomial.legendre.leggauss(self.nr)
        tc = self.opt.theta_c
        self.rad = 0.5 * tc * (x + 1)
        self.rad_w = 0.5 * tc * w
        self.ang = 2 * np.pi * (np.arange(self.na) + 0.5) / self.na
        self.ang_w = 2 * np.pi / self.na

    # on-surface -----------------------------------------------------------
    def assemble(self):
        """Dense matrices of S, K and K* (principal values) on the mesh nodes."""
        mesh, ctx, tc = self.mesh, self.ctx, self.opt.theta_c
        n, N = mesh.n, mesh.size
        S = np.zeros((N, N))
        K = np.zeros((N, N))
        Ks = np.zeros((N, N))
        shape = mesh.shape
        radial = (self.rad_w * np.sin(self.rad) * bump(self.rad, tc))[:, None] * self.ang_w
        radial = np.broadcast_to(radial, (self.nr, self.na)).ravel()
        L = radial.size
        cols = (np.arange(2 * n)[None, :] - np.arange(2 * n)[:, None]) % (2 * n)  # (k, m) -> m - k
        for j in range(n):
            rows = slice(j * 2 * n, (j + 1) * 2 * n)
            wP = mesh.omega[rows]
            xP = mesh.points[rows]
            nP = mesh.normals[rows]
            # interpolation stencil for the first target of the ring
            th = mesh.theta[j]
            w0 = np.array([[np.sin(th), 0.0, np.cos(th)]])
            e1 = np.array([[np.cos(th), 0.0, -np.sin(th)]])
            e2 = np.array([[0.0, 1.0, 0.0]])
            loc0 = _polar_nodes(w0, e1, e2, self.rad, self.ang).reshape(L, 3)
            I0 = self.interp.matrix(loc0)  # (L, N)
            # all targets of the ring: rotate about the z-axis
            ph = mesh.phi
            c, s = np.cos(ph), np.sin(ph)
            loc = np.empty((2 * n, L, 3))
            loc[..., 0] = c[:, None] * loc0[:, 0] - s[:, None] * loc0[:, 1]
            loc[..., 1] = s[:, None] * loc0[:, 0] + c[:, None] * loc0[:, 1]
            loc[..., 2] = loc0[:, 2]
            y, ny, Jy = shape.frame(loc, *tangent_basis(loc))
            vals = _kernel_triplet(ctx, xP[:, None, :], y, nP[:, None, :], ny)[:3]
            wl = radial * Jy
            for M, v in zip((S, K, Ks), vals):
                U = np.asarray((I0.T @ (v * wl).T).T)  # (2n, N), frame of target 0
                U = U.reshape(2 * n, n, 2 * n)
                M[rows] = np.take_along_axis(U, cols[:, None, :], axis=2).reshape(2 * n, N)
            # smooth remainder with the base rule
            cosang = np.clip(wP @ mesh.omega.T, -1.0, 1.0)
            wgt = (1.0 - bump(np.arccos(cosang), tc)) * mesh.weights
            diag = np.arange(2 * n) + j * 2 * n
            wgt[np.arange(2 * n), diag] = 0.0
            dx = xP[:, None, :] - mesh.points[None, :, :]
            dx[np.arange(2 * n), diag] = 1.0  # dummy, weight is zero
            val, grad = gamma_0(dx, ctx, want_gradient=True)
            Ag = grad @ ctx.A
            S[rows] += wgt * val
            K[rows] += wgt * (nP[:, None, :] * Ag).sum(-1)
            Ks[rows] += wgt * -(mesh.normals[None, :, :] * Ag).sum(-1)
        return S, K, Ks

    # off-surface ----------------------------------------------------------
    def evaluate(self, x, f, want=("S", "gradS", "D"), chunk=64, on_surface_tol=1e-10):
        """Layer potentials of the nodal density ``f`` at points ``x`` (P, 3).

        Points closer than ``near_factor * h`` to the surface use a polar
        rule about their foot point with geometrically graded radial panels.
        Points on the surface (distance below ``on_surface_tol``) get the
        symmetric polar rule, i.e. principal values.

        Returns
        -------
        dict mapping each requested name to an array: ``S`` (P,), ``gradS``
        (P, 3), ``D`` (P,).
        """
        x = np.atleast_2d(np.asarray(x, float))
        f = np.asarray(f, float)
        mesh = self.mesh
        out = {k: np.zeros((len(x), 3) if k == "gradS" else len(x)) for k in want}
        wF, yF, dist = mesh.shape.closest(x)
        near = dist < self.opt.near_factor * mesh.h
        far = np.flatnonzero(~near)
        wf = mesh.weights * f
        for start in range(0, len(far), chunk):
            sel = far[start:start + chunk]
            dx = x[sel, None, :] - mesh.points[None, :, :]
            val, grad = gamma_0(dx, self.ctx, want_gradient=True)
            self._accumulate(out, sel, val, grad, wf[None, :], mesh.normals[None, :, :])
        near = np.flatnonzero(near)
        if len(near):
            levels = self._panel_levels(dist[near], wF[near], on_surface_tol)
            for lev in np.unique(levels):
                grp = near[levels == lev]
                for start in range(0, len(grp), max(1, chunk // 4)):
                    sel = grp[start:start + max(1, chunk // 4)]
                    self._near_batch(out, sel, x[sel], wF[sel], int(lev), f)
        return out

    def _panel_levels(self, dist, wF, tol):
        """Number of dyadic radial panels per point (0 = on-surface rule)."""
        _, _, J = self.mesh.shape.frame(wF)
        dang = dist / np.sqrt(J)
        lev = np.ceil(np.log2(self.opt.theta_c / np.maximum(0.5 * dang, 1e-300))).astype(int)
        lev = np.clip(lev, 1, 40)
        lev[dist < tol] = 0
        return lev

    def _accumulate(self, out, sel, val, grad, wf, ny):
        if "S" in out:
            out["S"][sel] += (val * wf).sum(-1)
        if "gradS" in out:
            out["gradS"][sel] += (grad * wf[..., None]).sum(-2)
        if "D" in out:
            Ag = grad @ self.ctx.A
            out["D"][sel] += (-(ny * Ag).sum(-1) * wf).sum(-1)

    def _near_batch(self, out, sel, x, w_f, levels, f):
        mesh, tc = self.mesh, self.opt.theta_c
        if levels == 0:
            rad, radw, nang = self.rad, self.rad_w, self.na
        else:
            edges = np.concatenate([[0.0], tc * 2.0 ** -np.arange(levels - 1, -1, -1)])
            g, gw = np.polynomial.legendre.leggauss(self.opt.near_panel_nodes)
            a, b = edges[:-1, None], edges[1:, None]
            rad = (0.5 * (b - a) * (g + 1) + a).ravel()
            radw = (0.5 * (b - a) * gw).ravel()
            nang = self.nna
        ang = 2 * np.pi * (np.arange(nang) + 0.5) / nang
        e1, e2 = tangent_basis(w_f)
        P = len(sel)
        loc = _polar_nodes(w_f, e1, e2, rad, ang).reshape(P, -1, 3)
        y, ny, Jy = mesh.shape.frame(loc)
        wl = (radw * np.sin(rad) * bump(rad, tc))[:, None] * (2 * np.pi / nang)
        wl = np.broadcast_to(wl, (rad.size, nang)).ravel()[None, :] * Jy
        floc = self.interp(f, loc.reshape(-1, 3)).reshape(P, -1)
        val, grad = gamma_0(x[:, None, :] - y, self.ctx, want_gradient=True)
        self._accumulate(out, sel, val, grad, wl * floc, ny)
        cosang = np.clip(w_f @ mesh.omega.T, -1.0, 1.0)
        wgt = (1.0 - bump(np.arccos(cosang), tc)) * mesh.weights
        dx = x[:, None, :] - mesh.points[None, :, :]
        tiny = np.linalg.norm(dx, axis=-1) < 1e-300
        dx[tiny] = 1.0  # those weights vanish
        wgt[tiny] = 0.0
        val, grad = gamma_0(dx, self.ctx, want_gradient=True)
        self._accumulate(out, sel, val, grad, wgt * f[None, :], mesh.normals[None, :, :])
