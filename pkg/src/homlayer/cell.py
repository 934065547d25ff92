"""Fourier-Galerkin solver for the periodic cell problems.

For each column beta the correctors solve, with mean zero on the torus,

    -div(A grad chi_0)  = div V
    -div(A grad chi_k)  = div A e_k        (k = 1..d)

i.e. ``-d_i(a_ij^{ag} d_j chi^{gb}) = d_i F_i^{ab}``.  Only the leading part
of the operator enters.  Products with the coefficients are formed on a
3/2-padded lattice, so the Galerkin system is exact for band-limited A as
long as the bandwidth stays below N/2.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .coeffs import PeriodicCoefficients, TrigField

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi


class CellSolveError(RuntimeError):
    """Iterative cell solve did not reach the tolerance."""

    def __init__(self, msg, residual):
        super().__init__(f"{msg} (relative residual {residual:.3e})")
        self.residual = residual


class _Spectral:
    """FFT bookkeeping for an N^d lattice and its 3/2-padded companion."""

    def __init__(self, N: int, d: int):
        if N < 4 or N & (N - 1):
            raise ValueError("grid resolution must be a power of two >= 4")
        self.N, self.d = N, d
        self.M = 3 * N // 2
        k = np.fft.fftfreq(N, 1.0 / N).astype(int)
        self.k1 = k
        self.keep = np.abs(k) < N // 2  # drop the Nyquist mode
        self.pad_idx = np.where(k >= 0, k, self.M + k)[self.keep]
        grids = np.meshgrid(*([k] * d), indexing="ij")
        self.kvec = np.stack(grids)  # (d, N, ..., N)
        mask = np.ones((N,) * d, bool)
        for a in range(d):
            sl = [slice(None)] * d
            sl[a] = ~self.keep
            mask[tuple(sl)] = False
        self.mask = mask  # modes kept by the Galerkin space
        self.axes = tuple(range(-d, 0))

    def pad(self, uh):
        """Zero-pad spectrum (..., N^d) to (..., M^d)."""
        out = np.zeros(uh.shape[: -self.d] + (self.M,) * self.d, dtype=complex)
        src = np.ix_(*([np.flatnonzero(self.keep)] * self.d))
        dst = np.ix_(*([self.pad_idx] * self.d))
        out[(Ellipsis,) + dst] = uh[(Ellipsis,) + src]
        return out

    def trunc(self, vh):
        """Truncate spectrum (..., M^d) to (..., N^d)."""
        out = np.zeros(vh.shape[: -self.d] + (self.N,) * self.d, dtype=complex)
        src = np.ix_(*([self.pad_idx] * self.d))
        dst = np.ix_(*([np.flatnonzero(self.keep)] * self.d))
        out[(Ellipsis,) + dst] = vh[(Ellipsis,) + src]
        return out

    def fwd(self, u, n):
        return np.fft.fftn(u, axes=self.axes) / n**self.d

    def inv(self, uh, n):
        return np.fft.ifftn(uh, axes=self.axes) * n**self.d

    def grad(self, uh):
        """Spectral gradient, new leading axis."""
        return TWO_PI * 1j * self.kvec.reshape((self.d,) + (1,) * (uh.ndim - self.d) + uh.shape[-self.d:]) * uh

    def div(self, fh):
        """Spectral divergence over the leading axis."""
        kv = self.kvec.reshape((self.d,) + (1,) * (fh.ndim - 1 - self.d) + fh.shape[-self.d:])
        return (TWO_PI * 1j * kv * fh).sum(axis=0)


def _coefficient_grids(coeffs: PeriodicCoefficients, sp: _Spectral):
    return {key: getattr(coeffs, key).sample(sp.M) for key in ("A", "V", "B", "c")}


def _leading_flux(Ag, sp, uh):
    """Spectrum of A grad u on the N modes; uh has shape (m, N^d)."""
    g = sp.inv(sp.pad(sp.grad(uh)), sp.M).real  # (d, m, M^d)
    flux = np.einsum("ijag...,jg...->ia...", Ag, g)
    return sp.trunc(sp.fwd(flux, sp.M))


def _mean_symbol(coeffs, sp, lam_shift=0.0, c0=None):
    """Per-mode m x m symbol of the mean-coefficient operator, inverted."""
    d, m = coeffs.d, coeffs.m
    Abar = coeffs.A.const
    kv = sp.kvec.reshape(d, -1).T.astype(float) * TWO_PI  # (P, d)
    S = np.einsum("pi,ijab,pj->pab", kv, Abar, kv)
    if c0 is not None:
        S = S + c0
    S = S + lam_shift * np.eye(m)
    zero = np.all(sp.kvec.reshape(d, -1) == 0, axis=0)
    if lam_shift == 0 and c0 is None:
        S[zero] = np.eye(m)
    Sinv = np.linalg.inv(S)
    if lam_shift == 0 and c0 is None:
        Sinv[zero] = 0.0
    return Sinv.reshape((sp.N,) * d + (m, m))


@dataclass(frozen=True)
class CorrectorSet:
    """Spectral correctors chi_0..chi_d.

    Attributes
    ----------
    chi_hat : complex ndarray, shape (d+1, m, m, N, ..., N)
        Normalized Fourier coefficients; ``chi_hat[k, :, b]`` is the
        vector field of column ``b`` of the k-th corrector.
    adjoint : bool
        True if the set belongs to the adjoint operator.
    residual : ndarray, shape (d+1,)
        Relative Galerkin residual per corrector.
    grid : int
        Resolution N per axis.
    """

    chi_hat: np.ndarray
    adjoint: bool
    residual: np.ndarray
    grid: int
    iterations: tuple = ()

    @property
    def d(self) -> int:
        return self.chi_hat.ndim - 3

    @property
    def m(self) -> int:
        return self.chi_hat.shape[1]

    def _sp(self):
        return _Spectral(self.grid, self.d)

    def values(self, k: int) -> np.ndarray:
        """chi_k on the native lattice, shape (m, m, N, ..., N)."""
        sp = self._sp()
        return sp.inv(self.chi_hat[k], self.grid).real

    def gradient_values(self, k: int) -> np.ndarray:
        """grad chi_k on the native lattice, shape (d, m, m, N, ..., N)."""
        sp = self._sp()
        return sp.inv(sp.grad(self.chi_hat[k]), self.grid).real

    def mean(self, k: int) -> np.ndarray:
        return self.chi_hat[(k, Ellipsis) + (0,) * self.d].real.copy()

    def grad_l2(self, k: int) -> float:
        """||grad chi_k||_{L^2(Y)} (Frobenius over the matrix entries)."""
        g = self._sp().grad(self.chi_hat[k])
        return float(np.sqrt((np.abs(g) ** 2).sum()))

    def _factors(self, coords, deriv_axis):
        sp = self._sp()
        mats = []
        for a, y in enumerate(coords):
            y = np.asarray(y, float)
            E = np.exp(TWO_PI * 1j * np.outer(y, sp.k1))
            E[:, ~sp.keep] = 0.0
            if a == deriv_axis:
                E = E * (TWO_PI * 1j * sp.k1)
            mats.append(E)
        return mats

    def sample_tensor(self, k: int, coords, deriv_axis: int | None = None) -> np.ndarray:
        """Evaluate chi_k (or one partial derivative) on a tensor lattice.

        Parameters
        ----------
        coords : sequence of 1-D arrays, one per axis
            Torus coordinates (any real values; periodicity is implicit).
        deriv_axis : int, optional
            Differentiate along this axis.

        Returns
        -------
        ndarray, shape (m, m, n_1, ..., n_d)
        """
        out = self.chi_hat[k]
        for E in self._factors(coords, deriv_axis):
            # contract the first remaining spectral axis, append the physical one
            out = np.tensordot(out, E, axes=([2], [1]))
        return out.real

    def evaluate(self, points, k: int, deriv_axis: int | None = None) -> np.ndarray:
        """chi_k at scattered points of shape (P, d); returns (P, m, m)."""
        pts = np.atleast_2d(np.asarray(points, float))
        sp = self._sp()
        kv = sp.kvec.reshape(self.d, -1)
        coef = self.chi_hat[k].reshape(self.m, self.m, -1)
        if deriv_axis is not None:
            coef = coef * (TWO_PI * 1j * kv[deriv_axis])
        ph = np.exp(TWO_PI * 1j * (pts @ kv))
        return np.einsum("pq,abq->pab", ph, coef).real

    def zeroed(self) -> "CorrectorSet":
        """Same layout with all correctors set to zero (ablation runs)."""
        return CorrectorSet(np.zeros_like(self.chi_hat), self.adjoint,
                            np.zeros_like(self.residual), self.grid)

    def export(self, path, fmt: str = "bin") -> Path:
        """Write sampled correctors plus a JSON header next to them.

        ``path`` is a stem; ``<stem>.bin`` (float64, C order, shape
        (d+1, m, m, N, ..., N)) or ``<stem>.csv`` and ``<stem>.json`` are
        written.
        """
        stem = Path(path)
        vals = np.stack([self.values(k) for k in range(self.d + 1)])
        if fmt == "bin":
            vals.astype("<f8").tofile(stem.with_suffix(".bin"))
        elif fmt == "csv":
            np.savetxt(stem.with_suffix(".csv"), vals.reshape(-1, self.grid ** self.d).T,
                       delimiter=",", header="columns: (k, alpha, beta) row-major", comments="# ")
        else:
            raise ValueError("fmt must be 'bin' or 'csv'")
        header = {
            "format": fmt, "dtype": "float64", "order": "C",
            "shape": list(vals.shape), "grid": self.grid, "d": self.d, "m": self.m,
            "adjoint": self.adjoint, "residual": [float(r) for r in self.residual],
            "lattice": "y = j / N, j = 0..N-1 per axis",
        }
        hpath = stem.with_suffix(".json")
        hpath.write_text(json.dumps(header, indent=1))
        return hpath


def _cell_operator(coeffs, sp, Ag, m):
    n = sp.N ** sp.d

    def matvec(x):
        u = x.reshape((m,) + (sp.N,) * sp.d)
        uh = sp.fwd(u, sp.N) * sp.mask
        uh[(Ellipsis,) + (0,) * sp.d] = 0.0
        rh = -sp.div(_leading_flux(Ag, sp, uh))
        rh *= sp.mask
        rh[(Ellipsis,) + (0,) * sp.d] = 0.0
        return sp.inv(rh, sp.N).real.ravel()

    return spla.LinearOperator((m * n, m * n), matvec=matvec, dtype=float)


def _precond(sp, Sinv, m):
    n = sp.N ** sp.d

    def apply(r):
        rh = sp.fwd(r.reshape((m,) + (sp.N,) * sp.d), sp.N)
        zh = np.einsum("...ab,b...->a...", Sinv, rh) * sp.mask
        return sp.inv(zh, sp.N).real.ravel()

    return spla.LinearOperator((m * n, m * n), matvec=apply, dtype=float)


def _krylov(op, rhs, M, symmetric, tol, maxiter):
    count = [0]

    def cb(*_):
        count[0] += 1

    if symmetric:
        x, info = spla.cg(op, rhs, rtol=tol, atol=0.0, M=M, maxiter=maxiter, callback=cb)
    else:
        x, info = spla.gmres(op, rhs, rtol=tol, atol=0.0, M=M, restart=60, maxiter=maxiter,
                             callback=cb, callback_type="pr_norm")
    res = np.linalg.norm(op.matvec(x) - rhs) / max(np.linalg.norm(rhs), 1e-300)
    return x, info, res, count[0]


def solve_correctors(coeffs: PeriodicCoefficients, grid: int = 64, adjoint: bool = False,
                     tol: float = 1e-12, maxiter: int = 2000) -> CorrectorSet:
    """Solve the d+1 cell problems spectrally.

    Parameters
    ----------
    coeffs : PeriodicCoefficients
    grid : int
        Torus resolution N (power of two, > 2 x coefficient bandwidth).
    adjoint : bool
        Solve for the adjoint operator (A*, V* = B^t) instead.
    tol : float
        Relative residual target of the Krylov solve.

    Raises
    ------
    CellSolveError
        If the Krylov solve stalls above ``max(tol, 1e-10)``.
    """
    if adjoint:
        coeffs = coeffs.adjoint()
    d, m, N = coeffs.d, coeffs.m, grid
    if 2 * coeffs.A.bandwidth >= N or 2 * coeffs.V.bandwidth >= N:
        raise ValueError(f"grid {N} does not resolve coefficient bandwidth {coeffs.bandwidth}")
    sp = _Spectral(N, d)
    shape = (d + 1, m, m) + (N,) * d
    chi_hat = np.zeros(shape, dtype=complex)
    residual = np.zeros(d + 1)
    iters = []
    if coeffs.A.is_constant and coeffs.V.is_constant:
        return CorrectorSet(chi_hat, adjoint, residual, N, tuple([0] * (d + 1)))

    Ag = coeffs.A.sample(sp.M)
    Vg = coeffs.V.sample(sp.M)
    symmetric = coeffs.is_symmetric(1e-13)
    op = _cell_operator(coeffs, sp, Ag, m)
    M = _precond(sp, _mean_symbol(coeffs, sp), m)
    for k in range(d + 1):
        # F_i^{ab}: V for k = 0, a_{i,k-1}^{ab} otherwise
        F = Vg if k == 0 else Ag[:, k - 1]
        for b in range(m):
            Fh = sp.trunc(sp.fwd(F[:, :, b], sp.M))  # (d, m, N^d)
            rh = sp.div(Fh) * sp.mask
            rh[(Ellipsis,) + (0,) * d] = 0.0
            rhs = sp.inv(rh, N).real.ravel()
            if not np.any(np.abs(rhs) > 1e-300):
                iters.append(0)
                continue
            x, info, res, it = _krylov(op, rhs, M, symmetric, tol, maxiter)
            if res > max(tol, 1e-10) * 10:
                raise CellSolveError(f"cell problem k={k}, column {b} did not converge", res)
            uh = sp.fwd(x.reshape((m,) + (N,) * d), N) * sp.mask
            uh[(Ellipsis,) + (0,) * d] = 0.0
            chi_hat[k, :, b] = uh
            residual[k] = max(residual[k], res)
            iters.append(it)
    log.debug("cell solves: iterations %s", iters)
    return CorrectorSet(chi_hat, adjoint, residual, N, tuple(iters))


def corrector_residual(cset: CorrectorSet, coeffs: PeriodicCoefficients) -> float:
    """Max over k of ||div(A grad chi_k + F_k)||_{L^2(Y)} on the Galerkin modes.

    ``coeffs`` are the coefficients of the operator the set was solved for
    (for an adjoint set, the original ones; the adjoint is formed here).
    """
    if cset.d != coeffs.d or cset.m != coeffs.m:
        raise ValueError("corrector set and coefficients disagree in shape")
    if cset.adjoint:
        coeffs = coeffs.adjoint()
    d, m = coeffs.d, coeffs.m
    sp = _Spectral(cset.grid, d)
    Ag = coeffs.A.sample(sp.M)
    Vg = coeffs.V.sample(sp.M)
    worst = 0.0
    for k in range(d + 1):
        F = Vg if k == 0 else Ag[:, k - 1]
        for b in range(m):
            flux = _leading_flux(Ag, sp, cset.chi_hat[k, :, b]) + sp.trunc(sp.fwd(F[:, :, b], sp.M))
            rh = sp.div(flux) * sp.mask
            worst = max(worst, float(np.sqrt((np.abs(rh) ** 2).sum())))
    return worst


def solve_torus(coeffs: PeriodicCoefficients, lam: float, f, grid: int = 64,
                tol: float = 1e-12, maxiter: int = 2000) -> np.ndarray:
    """Solve the full operator with shift on the unit torus.

    ``-div(A grad u + V u) + B grad u + (c + lam) u = f``

    Parameters
    ----------
    f : TrigField or ndarray
        Right-hand side, a TrigField of shape (m,) or lattice values of
        shape (m, N, ..., N).

    Returns
    -------
    ndarray, shape (m, N, ..., N)
        Solution values on the lattice ``y = j / N``.
    """
    d, m, N = coeffs.d, coeffs.m, grid
    sp = _Spectral(N, d)
    G = _coefficient_grids(coeffs, sp)
    fvals = f.sample(N) if isinstance(f, TrigField) else np.asarray(f, float)
    fvals = fvals.reshape((m,) + (N,) * d)
    n = N**d

    def matvec(x):
        uh = sp.fwd(x.reshape((m,) + (N,) * d), N) * sp.mask
        u = sp.inv(sp.pad(uh), sp.M).real
        g = sp.inv(sp.pad(sp.grad(uh)), sp.M).real
        flux = np.einsum("ijag...,jg...->ia...", G["A"], g) + np.einsum("iag...,g...->ia...", G["V"], u)
        zero = (np.einsum("iag...,ig...->a...", G["B"], g) + np.einsum("ag...,g...->a...", G["c"], u)
                + lam * u)
        rh = -sp.div(sp.trunc(sp.fwd(flux, sp.M))) + sp.trunc(sp.fwd(zero, sp.M))
        return sp.inv(rh * sp.mask, N).real.ravel()

    op = spla.LinearOperator((m * n, m * n), matvec=matvec, dtype=float)
    Sinv = _mean_symbol(coeffs, sp, lam_shift=lam, c0=coeffs.c.const)
    M = _precond(sp, Sinv, m)
    rhs = sp.inv(sp.fwd(fvals, N) * sp.mask, N).real.ravel()
    x, info, res, _ = _krylov(op, rhs, M, False, tol, maxiter)
    if res > max(tol, 1e-10) * 10:
        raise CellSolveError("torus solve did not converge", res)
    return x.reshape((m,) + (N,) * d)
