"""Fundamental solutions of constant-coefficient scalar operators.

The operator is

    L0 u = -div(A grad u + V u) + B . grad u + (c + lam) u

with A symmetric positive definite.  Since V is constant, div(V u) = V.grad u
and L0 reduces to -div(A grad) + b.grad + (c + lam) with b = B - V.  The
substitution u = exp(w.x) v, w = A^{-1} b / 2, removes the drift and leaves
-div(A grad v) + L v with L = lam + c + b A^{-1} b / 4, whose kernel is the
anisotropic Yukawa (modified Helmholtz) kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bessel import bessel_k


@dataclass(frozen=True)
class KernelContext:
    """Constant coefficients of a scalar (m = 1) operator and derived data.

    Parameters
    ----------
    A : (d, d) array
        Symmetric positive definite leading matrix.
    V, B : (d,) arrays
        First-order coefficients (divergence and drift parts).
    c : float
        Zero-order coefficient.
    lam : float
        Shift added to ``c``.
    include_c : bool
        Whether ``c`` enters the screening constant ``L``.  Only the
        validation tables switch this off.
    tilt_sign : {+1, -1}
        Sign of the exponential tilt.  +1 is the one that inverts L0; -1 is
        kept for the validation tables.
    """

    A: np.ndarray
    V: np.ndarray
    B: np.ndarray
    c: float = 0.0
    lam: float = 0.0
    include_c: bool = True
    tilt_sign: int = 1
    L: float = field(init=False)
    Ainv: np.ndarray = field(init=False)
    det: float = field(init=False)
    chol: np.ndarray = field(init=False)
    w: np.ndarray = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d):
            raise ValueError("A must be square")
        V = np.zeros(d) if self.V is None else np.asarray(self.V, float).reshape(d)
        B = np.zeros(d) if self.B is None else np.asarray(self.B, float).reshape(d)
        A = 0.5 * (A + A.T)
        try:
            chol = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise ValueError("A must be symmetric positive definite") from exc
        Ainv = np.linalg.inv(A)
        b = B - V
        L = float(self.lam) + 0.25 * float(b @ Ainv @ b)
        if self.include_c:
            L += float(self.c)
        set_ = object.__setattr__
        set_(self, "A", A)
        set_(self, "V", V)
        set_(self, "B", B)
        set_(self, "L", L)
        set_(self, "Ainv", Ainv)
        set_(self, "det", float(np.prod(np.diag(chol)) ** 2))
        set_(self, "chol", chol)
        set_(self, "w", 0.5 * self.tilt_sign * (Ainv @ b))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def has_drift(self) -> bool:
        return bool(np.any(self.B != self.V))

    @classmethod
    def from_homogenized(cls, H, lam=None, **kw) -> "KernelContext":
        """Build from a :class:`~homlayer.homog.HomogenizedCoefficients` with m = 1."""
        if H.m != 1:
            raise ValueError("kernels are only available for scalar operators (m = 1)")
        return cls(
            A=H.A_hat[:, :, 0, 0],
            V=H.V_hat[:, 0, 0],
            B=H.B_hat[:, 0, 0],
            c=float(H.c_hat[0, 0]),
            lam=H.lam if lam is None else lam,
            **kw,
        )

    def adjoint(self) -> "KernelContext":
        """Context of the adjoint operator (V and B swapped)."""
        return KernelContext(
            self.A, self.B, self.V, self.c, self.lam, self.include_c, self.tilt_sign
        )

    def r_aniso(self, x) -> np.ndarray:
        """sqrt(x A^{-1} x) for points ``x`` of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        return np.sqrt(np.einsum("...i,ij,...j->...", x, self.Ainv, x))


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}")
    return x


def gamma_hatA(x, ctx: KernelContext, want_gradient: bool = False):
    """Fundamental solution of -div(A grad) at ``x``.

    Parameters
    ----------
    x : array_like, shape (..., d)
        Evaluation points, nonzero.
    ctx : KernelContext
    want_gradient : bool

    Returns
    -------
    value : ndarray or float
    grad : ndarray, shape (..., d), only if ``want_gradient``
    """
    d = ctx.d
    x = _as_points(x, d)
    r = ctx.r_aniso(x)
    if np.any(r == 0):
        raise ValueError("kernel evaluated at the pole")
    sq = math.sqrt(ctx.det)
    if d == 3:
        val = 1.0 / (4 * math.pi * sq * r)
        gfac = -1.0 / (4 * math.pi * sq * r**3)
    elif d == 2:
        val = -np.log(r) / (2 * math.pi * sq)
        gfac = -1.0 / (2 * math.pi * sq * r**2)
    else:
        raise ValueError("only d = 2, 3 are supported")
    if not want_gradient:
        return val
    grad = gfac[..., None] * (x @ ctx.Ainv)
    return val, grad


def gamma_0(x, ctx: KernelContext, want_gradient: bool = False):
    """Fundamental solution of the full constant-coefficient operator.

    ``L0 gamma_0 = delta`` in the distributional sense, with

        gamma_0(x) = exp(w.x) (2 pi)^{-d/2} det(A)^{-1/2} (sqrt(L)/r)^nu K_nu(sqrt(L) r)

    where nu = d/2 - 1 and r = sqrt(x A^{-1} x).

    Parameters
    ----------
    x : array_like, shape (..., d)
    ctx : KernelContext
    want_gradient : bool

    Returns
    -------
    value, optionally gradient (shape (..., d)).

    Raises
    ------
    ValueError
        If ``ctx.L < 0`` (the operator is not coercive) or at the pole.
    """
    d = ctx.d
    if ctx.L < 0:
        raise ValueError(f"screening constant L = {ctx.L:.3g} < 0: operator not coercive")
    x = _as_points(x, d)
    if ctx.L == 0.0:
        # Laplace-type limit; only the tilt survives
        out = gamma_hatA(x, ctx, want_gradient)
        if not ctx.has_drift:
            return out
        tilt = np.exp(x @ ctx.w)
        if not want_gradient:
            return tilt * out
        val, g = out
        return tilt * val, tilt[..., None] * (g + val[..., None] * ctx.w)

    r = ctx.r_aniso(x)
    if np.any(r == 0):
        raise ValueError("kernel evaluated at the pole")
    nu = 0.5 * d - 1.0
    sL = math.sqrt(ctx.L)
    s = sL * r
    const = (2 * math.pi) ** (-0.5 * d) / math.sqrt(ctx.det) * ctx.L**nu
    tilt = np.exp(x @ ctx.w) if ctx.has_drift else 1.0
    knu = bessel_k(nu, s)
    val = tilt * const * s ** (-nu) * knu
    if not want_gradient:
        return val
    dk = -const * s ** (-nu) * bessel_k(nu + 1.0, s)
    grad = (tilt * dk * sL / r)[..., None] * (x @ ctx.Ainv)
    if ctx.has_drift:
        grad = grad + val[..., None] * ctx.w
    return val, grad


@dataclass
class SlopeFit:
    """Result of a log-log slope fit."""

    slope: float
    exact: bool
    max_diff: float
    radii: np.ndarray
    diffs: np.ndarray

    def __str__(self):
        return "exact" if self.exact else f"{self.slope:.4f}"


def kernel_difference_rate(ctx: KernelContext, l: int = 0, n_points: int = 25,
                           direction=None) -> SlopeFit:
    """Fit the near-diagonal decay of ``grad^l (gamma_0 - gamma_hatA)``.

    Least-squares slope of log|diff| against log|x| for |x| in
    [1e-3, 1e-1] along a fixed ray.  The expected bound is |x|^(3-d-l).
    """
    if l not in (0, 1):
        raise ValueError("l must be 0 or 1")
    d = ctx.d
    if direction is None:
        direction = np.array([1.0, 0.6, 0.3][:d])
    e = np.asarray(direction, float)
    e = e / np.linalg.norm(e)
    radii = np.logspace(-3, -1, n_points)
    pts = radii[:, None] * e
    if l == 0:
        diff = np.abs(gamma_0(pts, ctx) - gamma_hatA(pts, ctx))
    else:
        _, g0 = gamma_0(pts, ctx, True)
        _, ga = gamma_hatA(pts, ctx, True)
        diff = np.linalg.norm(g0 - ga, axis=-1)
    scale = np.abs(gamma_hatA(pts, ctx)) if l == 0 else 1.0 / radii ** (d - 1)
    if np.all(diff <= 1e-14 * np.maximum(scale, 1.0)):
        return SlopeFit(math.inf, True, float(diff.max()), radii, diff)
    slope = np.polyfit(np.log(radii), np.log(diff), 1)[0]
    return SlopeFit(float(slope), False, float(diff.max()), radii, diff)
