"""Conservative finite differences for the full operator on lattices.

``L u = -div(A(x/eps) grad u + V(x/eps) u) + B(x/eps) grad u + (c(x/eps) + lam) u``

Stencil, per axis ``i`` and face ``p+1/2`` between nodes ``p`` and ``p+e_i``:

* the diagonal flux ``a_ii (u_{p+1} - u_p) / h`` uses a face average of
  ``a_ii`` over the segment (harmonic for scalar problems, arithmetic for
  systems), three Gauss points;
* cross terms ``a_ij``, ``i != j``, use nodal values and centered
  differences;
* ``div(V u)`` uses the face flux ``V_{p+1/2} (u_p + u_{p+1}) / 2``;
* ``B d_i u`` is ``(B_{p+1/2}(u_{p+1} - u_p) + B_{p-1/2}(u_p - u_{p-1})) / 2h``.

With this pairing the matrix of the adjoint coefficients is exactly the
transpose of the matrix of the original ones, on any node set.

Boxes carry Dirichlet values on their boundary nodes.  Embedded domains
use ghost values: across a cut edge with crossing fraction ``theta`` the
outside value is the linear extrapolation through the boundary value,
``u_q = u_p + (g - u_p) / theta``; nodes with ``theta < THETA_SNAP`` become
Dirichlet nodes carrying ``g`` at their closest boundary point.  Local
truncation is first order on cut rows; observed convergence is second order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from ..coeffs import OperatorParams, PeriodicCoefficients, TrigField
from .grid import Box, Embedded, GridField

THETA_SNAP = 1e-6
GAUSS3 = (np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]) / 2 + 0.5, np.array([5.0, 8.0, 5.0]) / 18)
DIRECT_LIMIT = 40000


class FDSolveError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class UnderResolvedWarning(UserWarning):
    pass


def _as_periodic(coeffs) -> PeriodicCoefficients:
    if isinstance(coeffs, PeriodicCoefficients):
        return coeffs
    if hasattr(coeffs, "as_coefficients"):
        return coeffs.as_coefficients()
    raise TypeError("expected PeriodicCoefficients or HomogenizedCoefficients")


def _component(f: TrigField, idx) -> TrigField:
    idx = tuple(idx)
    sl = (slice(None),) + idx
    return TrigField(f.const[idx], f.modes, f.cos[sl], f.sin[sl])


def _evaluate(f: TrigField, x, eps, chunk=400000):
    """f(x / eps) for points (P, d) in chunks; (P, *shape)."""
    if f.is_constant:
        return np.broadcast_to(f.const, (len(x),) + f.shape)
    out = np.empty((len(x),) + f.shape)
    for s in range(0, len(x), chunk):
        out[s:s + chunk] = f(x[s:s + chunk] / eps)
    return out


def _as_callable(data, m, what):
    """Normalize boundary/forcing data to ``x (P,d) -> (P, m)``."""
    if data is None:
        return lambda x: np.zeros((len(x), m))
    if callable(data):
        def call(x):
            v = np.asarray(data(x), float)
            return v.reshape(len(x), m)
        return call
    const = np.broadcast_to(np.asarray(data, float).ravel(), (m,))
    return lambda x: np.broadcast_to(const, (len(x), m)).copy()


@dataclass
class Lattice:
    axes: list
    h: float
    status: np.ndarray  # 0 outside, 1 unknown, 2 Dirichlet node
    periodic: bool = False
    gval: np.ndarray | None = None  # (n_nodes, m) Dirichlet values
    snapped: int = 0

    @property
    def shape(self):
        return self.status.shape

    @property
    def d(self):
        return len(self.axes)

    def points(self):
        g = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([a.ravel() for a in g], -1)


def build_lattice(domain, grid: int) -> Lattice:
    """Node classification for ``grid`` cells along the longest side."""
    if isinstance(domain, Box):
        ext = domain.hi - domain.lo
        h = float(ext.max() / grid)
        n = np.rint(ext / h).astype(int)
        if not np.allclose(n * h, ext, rtol=1e-9):
            raise ValueError("box sides must be integer multiples of the spacing")
        if domain.periodic:
            axes = [domain.lo[i] + h * np.arange(n[i]) for i in range(domain.d)]
            return Lattice(axes, h, np.ones(tuple(n), np.int8), periodic=True)
        axes = [domain.lo[i] + h * np.arange(n[i] + 1) for i in range(domain.d)]
        status = np.full(tuple(n + 1), 2, np.int8)
        status[(slice(1, -1),) * domain.d] = 1
        return Lattice(axes, h, status)
    lo, hi = domain.bounds
    h = float((hi - lo).max() / grid)
    axes = []
    for i in range(len(lo)):
        k0 = int(np.floor(lo[i] / h)) - 2
        k1 = int(np.ceil(hi[i] / h)) + 2
        axes.append(h * np.arange(k0, k1 + 1))
    g = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([a.ravel() for a in g], -1)
    status = np.where(domain.level(pts) < 0, 1, 0).astype(np.int8).reshape(g[0].shape)
    return Lattice(axes, h, status)


def _crossing(domain, p, q, iters=50):
    """Fraction t in (0, 1] with level(p + t (q - p)) = 0 (p inside, q outside)."""
    a = np.zeros(len(p))
    b = np.ones(len(p))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        inside = domain.level(p + mid[:, None] * (q - p)) < 0
        a = np.where(inside, mid, a)
        b = np.where(inside, b, mid)
    return 0.5 * (a + b)


def _shift(flat_idx, shape, offset, periodic):
    """Lattice flat index of node + offset (offset per axis); -1 when off the lattice."""
    sub = np.array(np.unravel_index(flat_idx, shape))
    sub = sub + np.asarray(offset)[:, None]
    n = np.asarray(shape)[:, None]
    if periodic:
        sub %= n
        return np.ravel_multi_index(tuple(sub), shape)
    ok = np.all((sub >= 0) & (sub < n), axis=0)
    out = np.full(len(flat_idx), -1)
    out[ok] = np.ravel_multi_index(tuple(sub[:, ok]), shape)
    return out


def _face_average(f: TrigField, left, h, axis, eps, harmonic):
    """Segment average of f from ``left`` to ``left + h e_axis``."""
    if f.is_constant:
        return np.broadcast_to(f.const, (len(left),) + f.shape)
    t, w = GAUSS3
    acc = 0.0
    for tt, ww in zip(t, w):
        x = left.copy()
        x[:, axis] += tt * h
        v = _evaluate(f, x, eps)
        acc = acc + ww * (1.0 / v if harmonic else v)
    return 1.0 / acc if harmonic else acc


def _stencil(coeffs: PeriodicCoefficients, lat: Lattice, eps: float, lam: float, rows_flat):
    """Yield stencil groups ``(cols, blocks, axis)`` for the unknown rows.

    ``cols`` are lattice flat indices (``cols is rows_flat`` marks the
    diagonal), ``blocks`` has shape (P, m, m) and ``axis`` is the face axis
    of a nearest-neighbour entry, -1 otherwise.
    """
    d, m, h = coeffs.d, coeffs.m, lat.h
    x_r = lat.points()[rows_flat]
    P = len(rows_flat)
    harmonic = m == 1
    eye = np.eye(d, dtype=int)
    shape = (P, m, m)
    for i in range(d):
        for side in (+1, -1):
            nb = _shift(rows_flat, lat.shape, side * eye[i], lat.periodic)
            left = x_r.copy()
            if side < 0:
                left[:, i] -= h
            a_f = np.broadcast_to(_face_average(_component(coeffs.A, (i, i)), left, h, i, eps, harmonic), shape)
            V_f = np.broadcast_to(_face_average(_component(coeffs.V, (i,)), left, h, i, eps, False), shape)
            B_f = np.broadcast_to(_face_average(_component(coeffs.B, (i,)), left, h, i, eps, False), shape)
            del left
            # flux a_f (u_nb - u_p)/h^2, -div(V u) with the face mean of u, B du with one-sided halves
            vv = -side * V_f / (2 * h)
            bb = side * B_f / (2 * h)
            yield rows_flat, a_f / h**2 + vv - bb, -1
            yield nb, -a_f / h**2 + vv + bb, i
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            aij = _component(coeffs.A, (i, j))
            if aij.is_constant and not np.any(aij.const):
                continue
            for si in (+1, -1):
                xi = x_r.copy()
                xi[:, i] += si * h
                a_n = np.broadcast_to(_evaluate(aij, xi, eps), shape)
                for sj in (+1, -1):
                    nb = _shift(rows_flat, lat.shape, si * eye[i] + sj * eye[j], lat.periodic)
                    yield nb, -si * sj * a_n / (4 * h**2), -1
    c_n = np.broadcast_to(_evaluate(coeffs.c, x_r, eps), shape)
    yield rows_flat, c_n + lam * np.eye(m), -1


def assemble(coeffs, params: OperatorParams, domain, grid: int, g=None, f=None):
    """Sparse matrix and right-hand side of the Dirichlet problem.

    Returns
    -------
    M : csr_matrix over the unknown nodes (m components interleaved)
    rhs : ndarray
    lat : Lattice (with Dirichlet values filled in)
    num : lattice-shaped int array, unknown number or -1
    """
    coeffs = _as_periodic(coeffs)
    m, d = coeffs.m, coeffs.d
    lat = build_lattice(domain, grid)
    if lat.d != d:
        raise ValueError("domain dimension differs from the coefficients")
    gfun = _as_callable(g, m, "g")
    ffun = _as_callable(f, m, "f")
    pts = lat.points()
    status = lat.status.ravel().copy()
    gval = np.zeros((len(status), m))
    ghost = {}
    if isinstance(domain, Embedded) or not isinstance(domain, Box):
        # crossing fractions of cut edges; snap nodes that sit too close
        unk = np.flatnonzero(status == 1)
        eye = np.eye(d, dtype=int)
        theta_min = np.ones(len(unk))
        for i in range(d):
            for s in (1, -1):
                nb = _shift(unk, lat.shape, s * eye[i], False)
                cut = status[nb] == 0
                if np.any(cut):
                    th = _crossing(domain, pts[unk[cut]], pts[nb[cut]])
                    theta_min[cut] = np.minimum(theta_min[cut], th)
                    ghost[(i, s)] = (unk[cut], th)
        snap = unk[theta_min < THETA_SNAP]
        if len(snap):
            status[snap] = 2
            gval[snap] = gfun(domain.closest_point(pts[snap]))
        lat.snapped = len(snap)
    else:
        bnd = np.flatnonzero(status == 2)
        if len(bnd):
            gval[bnd] = gfun(pts[bnd])
    lat.status = status.reshape(lat.shape)
    lat.gval = gval
    unk = np.flatnonzero(status == 1)
    num = np.full(len(status), -1)
    num[unk] = np.arange(len(unk))
    nu = len(unk)
    rhs = ffun(pts[unk]).astype(float)  # (nu, m)
    theta = {}
    for key, (nodes, th) in ghost.items():
        full = np.ones(len(status))
        full[nodes] = th
        theta[key] = full
    D = np.zeros((nu, m, m))
    R, C, Vv = [], [], []
    ar = np.arange(m)
    for cols, vals, axis in _stencil(coeffs, lat, params.epsilon, params.lam, unk):
        if cols is unk:
            D += vals
            continue
        st = np.where(cols >= 0, status[np.maximum(cols, 0)], 0)
        k = st == 1
        if np.any(k):
            R.append(np.flatnonzero(k).astype(np.int32))
            C.append(num[cols[k]].astype(np.int32))
            Vv.append(np.ascontiguousarray(vals[k]))
        k = st == 2
        if np.any(k):
            rhs[k] -= np.einsum("pab,pb->pa", vals[k], gval[cols[k]])
        k = st == 0
        if np.any(k):
            if isinstance(domain, Box):
                raise RuntimeError("stencil left the box")
            src, dst = unk[k], cols[k]
            if axis >= 0:
                sides = np.sign(pts[dst, axis] - pts[src, axis]).astype(int)
                one = np.ones(len(status))
                th = np.where(sides > 0, theta.get((axis, 1), one)[src], theta.get((axis, -1), one)[src])
                gb = gfun(pts[src] + th[:, None] * (pts[dst] - pts[src]))
                D[k] += vals[k] * (1 - 1 / th)[:, None, None]
                rhs[k] -= np.einsum("pab,pb->pa", vals[k], gb) / th[:, None]
            else:
                gb = gfun(domain.closest_point(pts[dst]))
                rhs[k] -= np.einsum("pab,pb->pa", vals[k], gb)
    n = nu * m
    rows = [np.arange(nu, dtype=np.int32)]
    Rb = np.concatenate(R + rows)
    Cb = np.concatenate(C + rows)
    Vb = np.concatenate(Vv + [D])
    del R, C, Vv, D
    if m == 1:
        M = sps.csr_matrix((Vb.ravel(), (Rb, Cb)), shape=(n, n))
    else:
        rr = (Rb.astype(np.int64)[:, None, None] * m + ar[None, :, None])
        cc = (Cb.astype(np.int64)[:, None, None] * m + ar[None, None, :])
        M = sps.csr_matrix((Vb.ravel(), (np.broadcast_to(rr, Vb.shape).ravel(),
                                         np.broadcast_to(cc, Vb.shape).ravel())), shape=(n, n))
    M.sum_duplicates()
    M.eliminate_zeros()
    return M, rhs.ravel(), lat, num.reshape(lat.shape)


def assemble_neumann_box(coeffs, params: OperatorParams, box: Box, grid: int, gN=None, f=None):
    """Finite-volume system for the conormal problem on a box.

    ``gN(x, n)`` is the outward conormal flux ``n . (A grad u + V u)``.
    Requires ``a_ij = 0`` for ``i != j``.  Every lattice node is unknown;
    boundary nodes own half (quarter, ...) control volumes.
    """
    coeffs = _as_periodic(coeffs)
    d, m = coeffs.d, coeffs.m
    for i in range(d):
        for j in range(d):
            if i != j:
                a = _component(coeffs.A, (i, j))
                if np.any(a.const) or np.any(a.cos) or np.any(a.sin):
                    raise ValueError("conormal problem requires a_ij = 0 for i != j")
    lat = build_lattice(box, grid)
    h, eps, lam = lat.h, params.epsilon, params.lam
    shape = lat.shape
    nn = int(np.prod(shape))
    pts = lat.points()
    sub = np.array(np.unravel_index(np.arange(nn), shape))
    on_lo = sub == 0
    on_hi = sub == (np.asarray(shape)[:, None] - 1)
    frac = np.where(on_lo | on_hi, 0.5, 1.0)  # (d, nn)
    ffun = _as_callable(f, m, "f")
    rhs = ffun(pts).astype(float)  # (nn, m)
    R, C, Vv = [], [], []
    ar = np.arange(m)
    harmonic = m == 1
    eye = np.eye(d, dtype=int)
    all_nodes = np.arange(nn)

    def put(r, c, v):
        R.append(np.broadcast_to(r[:, None, None] * m + ar[None, :, None], v.shape).ravel())
        C.append(np.broadcast_to(c[:, None, None] * m + ar[None, None, :], v.shape).ravel())
        Vv.append(v.ravel())

    for i in range(d):
        for side in (1, -1):
            nb = _shift(all_nodes, shape, side * eye[i], False)
            ok = nb >= 0
            p, q = all_nodes[ok], nb[ok]
            left = pts[p].copy()
            if side < 0:
                left[:, i] -= h
            sc = (1.0 / frac[i, p])[:, None, None]
            a_f = np.broadcast_to(_face_average(_component(coeffs.A, (i, i)), left, h, i, eps, harmonic),
                                  (len(p), m, m)) * sc
            V_f = np.broadcast_to(_face_average(_component(coeffs.V, (i,)), left, h, i, eps, False),
                                  (len(p), m, m)) * sc
            B_f = np.broadcast_to(_face_average(_component(coeffs.B, (i,)), left, h, i, eps, False),
                                  (len(p), m, m)) * sc
            put(p, p, a_f / h**2)
            put(p, q, -a_f / h**2)
            vv = -side * V_f / (2 * h)
            put(p, p, vv)
            put(p, q, vv)
            bb = side * B_f / (2 * h)
            put(p, q, bb)
            put(p, p, -bb)
        # boundary faces
        if gN is not None:
            for side, msk in ((-1, on_lo[i]), (1, on_hi[i])):
                p = all_nodes[msk]
                nrm = np.zeros((len(p), d))
                nrm[:, i] = side
                val = np.asarray(gN(pts[p], nrm), float).reshape(len(p), m)
                rhs[p] += val / (h * frac[i, p])[:, None]
    c_n = np.broadcast_to(_evaluate(coeffs.c, pts, eps), (nn, m, m))
    put(all_nodes, all_nodes, c_n + lam * np.eye(m))
    M = sps.csr_matrix((np.concatenate(Vv), (np.concatenate(R), np.concatenate(C))), shape=(nn * m, nn * m))
    M.sum_duplicates()
    return M, rhs.ravel(), lat


def _is_symmetric(M, tol=1e-12):
    D = (M - M.T).tocoo()
    if D.nnz == 0:
        return True
    return float(np.abs(D.data).max()) <= tol * float(np.abs(M.data).max())


def linear_solve(M, rhs, tol=1e-10, method="auto", maxiter=2000):
    """Solve ``M x = rhs``; returns (x, info dict).

    ``auto`` uses sparse LU below DIRECT_LIMIT unknowns, otherwise an
    algebraic-multigrid preconditioned CG (symmetric matrices) or BiCGStab.
    """
    n = M.shape[0]
    nb = float(np.linalg.norm(rhs))
    if nb == 0:
        return np.zeros(n), {"method": "trivial", "residual": 0.0, "iterations": 0}
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "amg"
    info = {"method": method}
    if method == "direct":
        x = spla.splu(M.tocsc()).solve(rhs)
        info["iterations"] = 0
    else:
        import pyamg

        sym = _is_symmetric(M)
        ml = pyamg.smoothed_aggregation_solver(M.tocsr(), symmetry="symmetric" if sym else "nonsymmetric",
                                               max_coarse=500)
        P = ml.aspreconditioner(cycle="V")
        count = [0]

        def cb(_):
            count[0] += 1

        if sym:
            x, flag = spla.cg(M, rhs, rtol=tol, maxiter=maxiter, M=P, callback=cb)
            info["krylov"] = "cg"
        else:
            x, flag = spla.bicgstab(M, rhs, rtol=tol, maxiter=maxiter, M=P, callback=cb)
            info["krylov"] = "bicgstab"
            if flag != 0:
                x, flag = spla.gmres(M, rhs, x0=x, rtol=tol, restart=50, maxiter=maxiter, M=P)
                info["krylov"] = "bicgstab+gmres"
        info["iterations"] = count[0]
    res = float(np.linalg.norm(rhs - M @ x) / nb)
    info["residual"] = res
    if not np.all(np.isfinite(x)) or res > 10 * tol:
        raise FDSolveError(f"linear solve stalled at relative residual {res:.2e}", res)
    return x, info


def _resolution_check(coeffs, params, h, strict):
    if coeffs.bandwidth == 0:
        return None
    cells = params.epsilon / (h * coeffs.bandwidth)
    if cells < 8:
        msg = f"only {cells:.1f} cells per period (eps={params.epsilon:g}, h={h:g}); need >= 8"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, UnderResolvedWarning, stacklevel=3)
    return cells


def direct_solve(coeffs, params: OperatorParams, domain, bc=None, grid: int = 64, f=None,
                 bc_type: str = "dirichlet", tol: float = 1e-10, method: str = "auto",
                 strict: bool = False, check: bool = True) -> GridField:
    """Finite-difference solution of ``L_eps u = f`` with boundary data.

    Parameters
    ----------
    coeffs : PeriodicCoefficients or HomogenizedCoefficients
    params : OperatorParams
        ``lam`` and ``epsilon`` (the latter ignored for constant coefficients).
    domain : Box or Embedded
    bc : callable, constant or None
        Dirichlet values ``g(x)``, or for ``bc_type="neumann"`` the conormal
        flux ``g(x, n)`` (boxes only).
    grid : int
        Cells along the longest side of the domain (or bounding box).
    """
    pc = _as_periodic(coeffs)
    if check:
        params.check_solvable(pc.mu)
    if bc_type == "dirichlet":
        M, rhs, lat, num = assemble(pc, params, domain, grid, g=bc, f=f)
    elif bc_type == "neumann":
        if not isinstance(domain, Box) or domain.periodic:
            raise ValueError("conormal data is supported on non-periodic boxes only")
        M, rhs, lat = assemble_neumann_box(pc, params, domain, grid, gN=bc, f=f)
        num = np.arange(lat.status.size).reshape(lat.shape)
        lat.status = np.ones(lat.shape, np.int8)
        lat.gval = np.zeros((lat.status.size, pc.m))
    else:
        raise ValueError("bc_type must be 'dirichlet' or 'neumann'")
    cells = _resolution_check(pc, params, lat.h, strict)
    x, info = linear_solve(M, rhs, tol=tol, method=method)
    m = pc.m
    vals = np.full((lat.status.size, m), np.nan)
    st = lat.status.ravel()
    if bc_type == "dirichlet":
        vals[st == 2] = lat.gval[st == 2]
    unk = num.ravel() >= 0
    vals[unk] = x.reshape(-1, m)
    values = vals.T.reshape((m,) + lat.shape)
    info.update({"unknowns": int(M.shape[0]), "cells_per_period": cells, "snapped": lat.snapped,
                 "h": lat.h, "boundary": "cut-cell values" if isinstance(domain, Embedded) else "nodes"})
    return GridField(values, lat.axes, lat.h, st.reshape(lat.shape) > 0,
                     {"type": bc_type, "periodic": lat.periodic}, domain, info)


def discrete_green(coeffs, params: OperatorParams, source, domain: Box, grid: int = 128,
                   component: int = 0, tol: float = 1e-10, method: str = "auto",
                   check: bool = True) -> GridField:
    """Discrete Green function: delta of mass one at the node nearest ``source``.

    The source carries ``h^{-d} e_component``; the boundary is held at
    zero.  Returns the column ``G(., y)[:, component]``.
    """
    pc = _as_periodic(coeffs)
    if check:
        params.check_solvable(pc.mu)
    lat = build_lattice(domain, grid)
    src = [int(np.argmin(np.abs(a - s))) for a, s in zip(lat.axes, source)]
    if lat.status[tuple(src)] != 1:
        raise ValueError("source must be an interior node")
    h, d, m = lat.h, pc.d, pc.m
    node = np.array([a[i] for a, i in zip(lat.axes, src)])

    def forcing(x):
        out = np.zeros((len(x), m))
        hit = np.all(np.abs(x - node) < 0.5 * h, axis=1)
        out[hit, component] = h ** (-d)
        return out

    G = direct_solve(pc, params, domain, None, grid, f=forcing, tol=tol, method=method, check=False)
    G.info["source"] = node.tolist()
    G.info["source_index"] = src
    _resolution_check(pc, params, h, False)
    return G


def operator_matrix(coeffs, params, domain, grid):
    """Matrix over the unknown nodes (for transposition and spectrum checks)."""
    M, _, lat, num = assemble(_as_periodic(coeffs), params, domain, grid)
    return M, lat, num
