"""Layer potentials, trace operators and boundary integral solvers.

Conventions (outward normal n, "+" = limit from inside):

* single layer ``S f(x) = int Gamma(x - y) f(y) dS``,
* double layer ``D f(x) = int n(y) . A grad_y Gamma(x - y) f(y) dS``,
* ``(dS f / dn)_+- = (+-1/2 + K) f`` with ``K f(P) = p.v. int n(P) . A grad Gamma(P - y) f``,
* ``(D f)_+- = (-+1/2 + K*) f``.

Dirichlet data g: solve ``(-1/2 + K*) phi = g`` and set ``u = D phi``.
Neumann data f (conormal ``n . A grad u``): ``(1/2 + K) phi = f``, ``u = S phi``.
Regularity data g: first-kind ``S phi = g`` with Tikhonov damping, ``u = S phi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from ..kernels.fundamental import KernelContext, gamma_0
from .geometry import BoundaryMesh, make_boundary_mesh
from .quadrature import LayerQuadrature, QuadratureOptions

log = logging.getLogger(__name__)

DENSE_LIMIT = 20000


class BIESolveError(RuntimeError):
    """Linear solve failure with diagnostics attached."""

    def __init__(self, msg, residual=None, condition=None):
        super().__init__(msg)
        self.residual = residual
        self.condition = condition


class LayerPotentials:
    """Cached discretization of S, K, K* for one mesh and kernel context."""

    def __init__(self, mesh: BoundaryMesh, ctx: KernelContext, options: QuadratureOptions | None = None):
        self.mesh, self.ctx = mesh, ctx
        self.quad = LayerQuadrature(mesh, ctx, options)
        self._mats = None

    @property
    def matrices(self):
        if self._mats is None:
            self._mats = self.quad.assemble()
        return self._mats

    @property
    def S(self):
        return self.matrices[0]

    @property
    def K(self):
        return self.matrices[1]

    @property
    def Kstar(self):
        return self.matrices[2]

    def single_layer(self, f, x):
        return self.quad.evaluate(x, f, want=("S",))["S"]

    def grad_single_layer(self, f, x):
        return self.quad.evaluate(x, f, want=("gradS",))["gradS"]

    def double_layer(self, f, x):
        return self.quad.evaluate(x, f, want=("D",))["D"]

    def system(self, kind: str) -> "BIESystem":
        N = self.mesh.size
        I = np.eye(N)
        if kind == "dirichlet":
            M = -0.5 * I + self.Kstar
        elif kind == "neumann":
            M = 0.5 * I + self.K
        elif kind == "regularity":
            M = self.S
        else:
            raise ValueError(f"unknown problem kind {kind!r}")
        return BIESystem(kind, M, self.mesh, self.ctx)


_CACHE: dict = {}


def layer_potentials(mesh, ctx, options=None) -> LayerPotentials:
    """Return a cached LayerPotentials for (mesh, ctx)."""
    key = (id(mesh), id(ctx), repr(options))
    lp = _CACHE.get(key)
    if lp is None or lp.mesh is not mesh or lp.ctx is not ctx:
        if len(_CACHE) > 4:
            _CACHE.clear()
        lp = LayerPotentials(mesh, ctx, options)
        _CACHE[key] = lp
    return lp


def apply_single_layer(f, x, ctx: KernelContext, mesh: BoundaryMesh) -> np.ndarray:
    """S f at points ``x`` (on or off the surface)."""
    return layer_potentials(mesh, ctx).single_layer(f, x)


def apply_double_layer(f, x, ctx: KernelContext, mesh: BoundaryMesh) -> np.ndarray:
    """D f at points ``x``; on the surface this is the principal value K* f."""
    return layer_potentials(mesh, ctx).double_layer(f, x)


def apply_trace_K(f, ctx: KernelContext, mesh: BoundaryMesh) -> np.ndarray:
    return layer_potentials(mesh, ctx).K @ np.asarray(f, float)


def apply_trace_Kstar(f, ctx: KernelContext, mesh: BoundaryMesh) -> np.ndarray:
    return layer_potentials(mesh, ctx).Kstar @ np.asarray(f, float)


def weighted_condition(M, weights, method="svd") -> float:
    """2-norm condition number of M in the discrete L^2(dS) inner product."""
    s = np.sqrt(weights)
    Mw = (s[:, None] * M) / s[None, :]
    if method == "svd":
        sv = sla.svdvals(Mw, overwrite_a=True, check_finite=False)
        return float(sv[0] / sv[-1])
    lu, piv = sla.lu_factor(Mw, check_finite=False)
    anorm = np.abs(Mw).sum(axis=0).max()
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    return float(1.0 / rcond)


@dataclass
class BIESystem:
    """Dense second-kind (or first-kind) boundary system."""

    kind: str
    operator_matrix: np.ndarray
    mesh: BoundaryMesh
    ctx: KernelContext
    _lu: tuple | None = field(default=None, repr=False)
    _cond: float | None = field(default=None, repr=False)

    @property
    def size(self):
        return self.operator_matrix.shape[0]

    def condition(self, method="svd") -> float:
        if self._cond is None:
            self._cond = weighted_condition(self.operator_matrix, self.mesh.weights, method)
        return self._cond

    def solve(self, rhs, tol=1e-10):
        M = self.operator_matrix
        if self.size <= DENSE_LIMIT:
            if self._lu is None:
                self._lu = sla.lu_factor(M, check_finite=False)
            x = sla.lu_solve(self._lu, rhs, check_finite=False)
        else:
            x, info = spla.gmres(M, rhs, rtol=tol, atol=0.0, restart=100, maxiter=50)
            if info:
                raise BIESolveError("GMRES did not converge",
                                    residual=np.linalg.norm(M @ x - rhs) / np.linalg.norm(rhs))
        res = np.linalg.norm(M @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not np.all(np.isfinite(x)) or res > 1e-6:
            raise BIESolveError(f"{self.kind} solve failed (residual {res:.2e})", residual=res,
                                condition=self.condition("lu"))
        return x, res


@dataclass
class SolutionHandle:
    """Density plus evaluators of the represented solution."""

    kind: str
    density: np.ndarray
    potentials: LayerPotentials
    residual: float
    condition: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def mesh(self):
        return self.potentials.mesh

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        if not np.any(self.density):
            return np.zeros(len(x))
        if self.kind == "dirichlet":
            return self.potentials.double_layer(self.density, x)
        return self.potentials.single_layer(self.density, x)

    def gradient(self, x) -> np.ndarray:
        """Gradient; available for single-layer representations."""
        if self.kind == "dirichlet":
            raise NotImplementedError("use finite differences of evaluate() for the double layer")
        return self.potentials.grad_single_layer(self.density, x)

    def boundary_trace(self) -> np.ndarray:
        """Interior boundary values at the mesh nodes."""
        lp = self.potentials
        if self.kind == "dirichlet":
            return (-0.5 * np.eye(lp.mesh.size) + lp.Kstar) @ self.density
        return lp.S @ self.density

    def conormal_trace(self) -> np.ndarray:
        """Interior conormal derivative ``n . A grad u`` at the nodes (single layer only)."""
        if self.kind == "dirichlet":
            raise NotImplementedError
        lp = self.potentials
        return 0.5 * self.density + lp.K @ self.density


def _check_coercive(ctx: KernelContext, lam_hat=None, mu=None):
    if ctx.L <= 0:
        raise ValueError("kernel constant L must be positive for the boundary solvers")
    need = max(lam_hat or 0.0, mu or 0.0)
    if ctx.lam < need - 1e-14:
        raise ValueError(f"lambda = {ctx.lam:g} below max(lambda_hat, mu) = {need:g}")


def solve_dirichlet(g, mesh: BoundaryMesh, ctx: KernelContext, options=None,
                    condition: str | None = None, lam_hat=None, mu=None) -> SolutionHandle:
    """Solve ``(-1/2 + K*) phi = g``; the solution is ``u = D phi`` in the interior."""
    _check_coercive(ctx, lam_hat, mu)
    lp = layer_potentials(mesh, ctx, options)
    g = np.asarray(g, float)
    if not np.any(g):
        return SolutionHandle("dirichlet", np.zeros(mesh.size), lp, 0.0)
    sysm = lp.system("dirichlet")
    phi, res = sysm.solve(g)
    cond = sysm.condition(condition) if condition else None
    return SolutionHandle("dirichlet", phi, lp, res, cond)


def solve_neumann(f, mesh: BoundaryMesh, ctx: KernelContext, options=None,
                  condition: str | None = None, lam_hat=None, mu=None) -> SolutionHandle:
    """Solve ``(1/2 + K) phi = f`` for conormal data f; ``u = S phi``."""
    _check_coercive(ctx, lam_hat, mu)
    lp = layer_potentials(mesh, ctx, options)
    f = np.asarray(f, float)
    if not np.any(f):
        return SolutionHandle("neumann", np.zeros(mesh.size), lp, 0.0)
    sysm = lp.system("neumann")
    phi, res = sysm.solve(f)
    cond = sysm.condition(condition) if condition else None
    return SolutionHandle("neumann", phi, lp, res, cond)


def solve_regularity(g, mesh: BoundaryMesh, ctx: KernelContext, tangential=None, options=None,
                     alpha: float | None = None, max_condition: float = 1e13,
                     lam_hat=None, mu=None) -> SolutionHandle:
    """First-kind solve ``S phi = g`` with Tikhonov damping.

    Minimizes ``||S phi - g||^2 + alpha ||phi||^2`` in the discrete
    L^2(dS) norm.  The default ``alpha = h^6`` only damps singular values
    below h^3, far under the smallest resolved one (about h), so the bias
    stays below the discretization error.

    Parameters
    ----------
    tangential : (N, 3) array, optional
        Tangential gradient samples of g; used only for the H^1 residual
        reported in ``info``.

    Raises
    ------
    BIESolveError
        If the damped normal equations are too ill-conditioned.
    """
    _check_coercive(ctx, lam_hat, mu)
    lp = layer_potentials(mesh, ctx, options)
    g = np.asarray(g, float)
    if not np.any(g):
        return SolutionHandle("regularity", np.zeros(mesh.size), lp, 0.0)
    if alpha is None:
        alpha = mesh.h**6
    w = mesh.weights
    s = np.sqrt(w)
    Sw = (s[:, None] * lp.S) / s[None, :]
    normal = Sw.T @ Sw
    normal[np.diag_indices_from(normal)] += alpha
    anorm = np.abs(normal).sum(axis=0).max()
    try:
        cf = sla.cho_factor(normal, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise BIESolveError("damped normal equations are not positive definite") from exc
    rcond, _ = sla.lapack.dpocon(cf[0], anorm, uplo="L" if cf[1] else "U")
    cond = float(1.0 / max(rcond, 1e-300))
    if cond > max_condition:
        raise BIESolveError(f"regularized first-kind system too ill-conditioned ({cond:.2e}); "
                            "refine the mesh or use the Dirichlet route", condition=cond)
    phi_w = sla.cho_solve(cf, Sw.T @ (s * g), check_finite=False)
    phi = phi_w / s
    trace = lp.S @ phi
    res = mesh.l2(trace - g) / max(mesh.l2(g), 1e-300)
    info = {"alpha": alpha, "normal_condition": cond}
    if tangential is not None:
        grad = lp.grad_single_layer(phi, mesh.points)
        nrm = mesh.normals
        tg = grad - (grad * nrm).sum(-1, keepdims=True) * nrm
        info["tangential_residual"] = mesh.l2(np.linalg.norm(tg - tangential, axis=-1))
    return SolutionHandle("regularity", phi, lp, res, cond, info)


# jump relations -------------------------------------------------------------

EXTRAPOLATION = ((1.0, 8.0 / 3.0), (2.0, -2.0), (4.0, 1.0 / 3.0))
# offsets are t * LIMIT_SCALE * h; with anisotropic A the exterior field
# bends on an O(1) scale comparable to 4h at moderate n, so start below h
LIMIT_SCALE = 0.25


def H_of_n(ctx: KernelContext, n) -> np.ndarray:
    """H(n) = (n . A n)^{-1} for unit normals (..., 3)."""
    return 1.0 / np.einsum("...i,ij,...j->...", n, ctx.A, n)


@dataclass
class JumpReport:
    """Extrapolated one-sided limits against the jump formulas."""

    h: float
    gradS_in: np.ndarray
    gradS_out: np.ndarray
    D_in: np.ndarray
    D_out: np.ndarray
    predicted: dict
    deviations: dict

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values())

    def __str__(self):
        return "\n".join(f"{k}: relative L2 deviation {v:.3e}" for k, v in self.deviations.items())


def one_sided_limits(lp: LayerPotentials, f, w, offsets=EXTRAPOLATION, scale=LIMIT_SCALE):
    """Extrapolate grad S f and D f to the surface along +-n at parameters ``w``.

    Samples at distances ``t * scale * h`` for the ``(t, weight)`` pairs of
    ``offsets`` (second-order Richardson weights).

    Returns (gradS_in, gradS_out, D_in, D_out, points, normals).
    """
    mesh = lp.mesh
    P, nrm, _ = mesh.shape.frame(w)
    h = mesh.h * scale
    acc = {"gi": 0.0, "go": 0.0, "di": 0.0, "do": 0.0}
    for t, cw in offsets:
        xin = P - t * h * nrm
        xout = P + t * h * nrm
        ev_in = lp.quad.evaluate(xin, f, want=("gradS", "D"))
        ev_out = lp.quad.evaluate(xout, f, want=("gradS", "D"))
        acc["gi"] = acc["gi"] + cw * ev_in["gradS"]
        acc["go"] = acc["go"] + cw * ev_out["gradS"]
        acc["di"] = acc["di"] + cw * ev_in["D"]
        acc["do"] = acc["do"] + cw * ev_out["D"]
    return acc["gi"], acc["go"], acc["di"], acc["do"], P, nrm


def jump_check(f, ctx: KernelContext, mesh: BoundaryMesh, nodes=None, options=None) -> JumpReport:
    """Compare extrapolated one-sided limits with the jump relations.

    Checks, in relative discrete L^2 over the chosen nodes:

    * ``(grad S f)_+ - (grad S f)_- = n H(n) f``,
    * ``(n . A grad S f)_+- = (+-1/2 + K) f``,
    * ``(D f)_+- = (-+1/2 + K*) f``,
    * ``(grad S f)_+- = +-1/2 n H(n) f + p.v. int grad Gamma f``.

    Parameters
    ----------
    nodes : index array, optional
        Subset of mesh nodes (default: all).
    """
    lp = layer_potentials(mesh, ctx, options)
    f = np.asarray(f, float)
    idx = np.arange(mesh.size) if nodes is None else np.asarray(nodes)
    w = mesh.omega[idx]
    gi, go, di, do, P, nrm = one_sided_limits(lp, f, w)
    fn = f[idx]
    wts = mesh.weights[idx]
    H = H_of_n(ctx, nrm)
    Kf = (lp.K @ f)[idx]
    Ksf = (lp.Kstar @ f)[idx]
    pv = lp.quad.evaluate(P, f, want=("gradS",))["gradS"]
    jump = (H * fn)[:, None] * nrm

    def rel(a, b):
        a = np.atleast_2d(a.T).T
        b = np.atleast_2d(b.T).T
        num = np.sqrt(np.dot(wts, ((a - b) ** 2).reshape(len(wts), -1).sum(-1)))
        den = np.sqrt(np.dot(wts, (b**2).reshape(len(wts), -1).sum(-1)))
        return float(num / max(den, 1e-300))

    cin = ((gi @ ctx.A) * nrm).sum(-1)
    cout = ((go @ ctx.A) * nrm).sum(-1)
    pred = {
        "grad_jump": jump,
        "conormal_in": 0.5 * fn + Kf,
        "conormal_out": -0.5 * fn + Kf,
        "double_in": -0.5 * fn + Ksf,
        "double_out": 0.5 * fn + Ksf,
        "grad_in": 0.5 * jump + pv,
        "grad_out": -0.5 * jump + pv,
    }
    dev = {
        "grad_jump": rel(gi - go, pred["grad_jump"]),
        "conormal_in": rel(cin, pred["conormal_in"]),
        "conormal_out": rel(cout, pred["conormal_out"]),
        "double_in": rel(di, pred["double_in"]),
        "double_out": rel(do, pred["double_out"]),
        "grad_in": rel(gi, pred["grad_in"]),
        "grad_out": rel(go, pred["grad_out"]),
    }
    return JumpReport(mesh.h, gi, go, di, do, pred, dev)


def jump_coefficient(f, ctx: KernelContext, mesh: BoundaryMesh, w, options=None) -> np.ndarray:
    """Measured ``n . [(grad S f)_+ - (grad S f)_-] / f`` at parameters ``w``.

    Equals H(n) = 1 / (n . A n) when the jump relation holds.
    """
    lp = layer_potentials(mesh, ctx, options)
    w = np.atleast_2d(np.asarray(w, float))
    gi, go, _, _, P, nrm = one_sided_limits(lp, np.asarray(f, float), w)
    fP = lp.quad.interp(np.asarray(f, float), w)
    return ((gi - go) * nrm).sum(-1) / fP


# manufactured data ----------------------------------------------------------

def point_source_data(mesh: BoundaryMesh, ctx: KernelContext, x0):
    """Trace, conormal trace and tangential gradient of Gamma(. - x0) on the mesh."""
    dx = mesh.points - np.asarray(x0, float)
    val, grad = gamma_0(dx, ctx, want_gradient=True)
    conormal = ((grad @ ctx.A) * mesh.normals).sum(-1)
    tang = grad - (grad * mesh.normals).sum(-1, keepdims=True) * mesh.normals
    return val, conormal, tang


def manufactured_errors(kind: str, mesh: BoundaryMesh, ctx: KernelContext, x0, xs, options=None,
                        condition: str | None = None):
    """Relative max error of a point-source solution at interior points ``xs``.

    Returns (relative error, SolutionHandle).
    """
    g, fn, tg = point_source_data(mesh, ctx, x0)
    if kind == "dirichlet":
        sol = solve_dirichlet(g, mesh, ctx, options, condition=condition)
    elif kind == "neumann":
        sol = solve_neumann(fn, mesh, ctx, options, condition=condition)
    elif kind == "regularity":
        sol = solve_regularity(g, mesh, ctx, tangential=tg, options=options)
    else:
        raise ValueError(kind)
    exact = gamma_0(np.asarray(xs) - np.asarray(x0), ctx)
    err = np.abs(sol.evaluate(xs) - exact).max() / np.abs(exact).max()
    return float(err), sol


__all__ = [
    "BIESolveError", "BIESystem", "JumpReport", "LayerPotentials", "SolutionHandle",
    "apply_double_layer", "apply_single_layer", "apply_trace_K", "apply_trace_Kstar",
    "H_of_n", "jump_check", "jump_coefficient", "layer_potentials", "make_boundary_mesh",
    "manufactured_errors", "point_source_data", "solve_dirichlet", "solve_neumann",
    "solve_regularity", "weighted_condition",
]
