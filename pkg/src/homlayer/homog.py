"""Effective (homogenized) tensors and their structural checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cell import CorrectorSet, _Spectral, corrector_residual, solve_correctors
from .coeffs import DEFAULT_LAMBDA0_CONSTANT, PeriodicCoefficients, TrigField


@dataclass(frozen=True)
class HomogenizedCoefficients:
    """Constant tensors of the limit operator.

    Same index order as the periodic fields: ``A_hat[i, j, a, b]``,
    ``V_hat[i, a, b]``, ``B_hat[i, a, b]``, ``c_hat[a, b]``.
    """

    A_hat: np.ndarray
    V_hat: np.ndarray
    B_hat: np.ndarray
    c_hat: np.ndarray
    lam: float = 0.0
    mu: float = 1.0

    @property
    def d(self) -> int:
        return self.A_hat.shape[0]

    @property
    def m(self) -> int:
        return self.A_hat.shape[2]

    def matrix(self) -> np.ndarray:
        """Leading tensor flattened to a (dm x dm) matrix, index (i, a)."""
        d, m = self.d, self.m
        return self.A_hat.transpose(0, 2, 1, 3).reshape(d * m, d * m)

    def as_coefficients(self, mu=None) -> PeriodicCoefficients:
        """Constant PeriodicCoefficients carrying the effective tensors."""
        return PeriodicCoefficients.constant(self.A_hat, self.V_hat, self.B_hat, self.c_hat,
                                             mu=self.mu if mu is None else mu)

    def lambda_hat(self, constant=DEFAULT_LAMBDA0_CONSTANT) -> float:
        """Coercivity threshold of the limit operator (same formula as lambda0)."""
        nv = np.linalg.norm(self.V_hat)
        nb = np.linalg.norm(self.B_hat)
        nc = np.linalg.norm(self.c_hat)
        return constant / self.mu * (nv**2 + nb**2 + nc)

    def to_dict(self) -> dict:
        return {
            "index_order": {"A_hat": "i,j,alpha,beta", "V_hat": "i,alpha,beta",
                            "B_hat": "i,alpha,beta", "c_hat": "alpha,beta"},
            "layout": "row-major",
            "d": self.d, "m": self.m, "lambda": self.lam, "mu": self.mu,
            "A_hat": self.A_hat.ravel().tolist(),
            "V_hat": self.V_hat.ravel().tolist(),
            "B_hat": self.B_hat.ravel().tolist(),
            "c_hat": self.c_hat.ravel().tolist(),
        }

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, data) -> "HomogenizedCoefficients":
        d, m = data["d"], data["m"]
        return cls(np.reshape(data["A_hat"], (d, d, m, m)), np.reshape(data["V_hat"], (d, m, m)),
                   np.reshape(data["B_hat"], (d, m, m)), np.reshape(data["c_hat"], (m, m)),
                   lam=data.get("lambda", 0.0), mu=data.get("mu", 1.0))

    @classmethod
    def load_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def effective_tensors(coeffs: PeriodicCoefficients, correctors: CorrectorSet, lam: float = 0.0,
                      tol: float = 1e-9) -> HomogenizedCoefficients:
    """Y-averages defining the effective tensors.

    a_hat_ij = <a_ij + a_ik d_k chi_j>,   V_hat_i = <V_i + a_ij d_j chi_0>,
    B_hat_i = <B_i + B_j d_j chi_i>,      c_hat = <c + B_i d_i chi_0>,

    with matrix products in the component indices.  Averages are the zero
    modes of products formed on the padded lattice.

    Raises
    ------
    ValueError
        If the correctors do not belong to ``coeffs`` (residual above ``tol``).
    """
    if correctors.adjoint:
        raise ValueError("pass the correctors of the operator itself, not of its adjoint")
    res = corrector_residual(correctors, coeffs)
    if res > tol:
        raise ValueError(f"corrector residual {res:.3e} exceeds {tol:.1e}; re-solve for these coefficients")
    d, m = coeffs.d, coeffs.m
    sp = _Spectral(correctors.grid, d)
    # gradient of each corrector on the padded lattice: (d+1, d, m, m, M^d)
    grads = np.stack([sp.inv(sp.pad(sp.grad(correctors.chi_hat[k])), sp.M).real for k in range(d + 1)])
    Ag, Vg, Bg, cg = (getattr(coeffs, key).sample(sp.M) for key in ("A", "V", "B", "c"))
    ax = tuple(range(-d, 0))
    mean = lambda f: f.mean(axis=ax)  # noqa: E731
    # grads[k, l, g, b] = d_l chi_k^{gb}
    A_hat = mean(Ag) + mean(np.einsum("ikag...,jkgb...->ijab...", Ag, grads[1:]))
    V_hat = mean(Vg) + mean(np.einsum("ijag...,jgb...->iab...", Ag, grads[0]))
    B_hat = mean(Bg) + mean(np.einsum("jag...,ijgb...->iab...", Bg, grads[1:]))
    c_hat = mean(cg) + mean(np.einsum("iag...,igb...->ab...", Bg, grads[0]))
    return HomogenizedCoefficients(A_hat, V_hat, B_hat, c_hat, lam=float(lam), mu=coeffs.mu)


def homogenize(coeffs: PeriodicCoefficients, grid: int = 64, lam: float = 0.0):
    """Convenience wrapper: correctors then effective tensors."""
    cs = solve_correctors(coeffs, grid)
    return effective_tensors(coeffs, cs, lam=lam), cs


@dataclass
class PropertyReport:
    """Pass/fail per structural property with numeric margins."""

    checks: dict = field(default_factory=dict)

    def add(self, name, passed, **values):
        self.checks[name] = {"pass": bool(passed), **{k: _plain(v) for k, v in values.items()}}

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def __str__(self):
        lines = []
        for name, c in self.checks.items():
            extra = ", ".join(f"{k}={v}" for k, v in c.items() if k != "pass")
            lines.append(f"{'PASS' if c['pass'] else 'FAIL'}  {name}: {extra}")
        return "\n".join(lines)


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def verify_effective_properties(H: HomogenizedCoefficients, coeffs: PeriodicCoefficients,
                                correctors: CorrectorSet | None = None, n_xi: int = 200,
                                bound: float | None = None, rng=0) -> PropertyReport:
    """Check ellipticity, symmetry and boundedness of the effective tensors.

    Ellipticity is tested on ``n_xi`` random directions plus the exact
    extreme eigenvalues of the symmetric part.  ``bound`` defaults to
    ``kappa (1 + 1/mu^2)``, a crude stand-in for C(mu, kappa, d, m).
    """
    rep = PropertyReport()
    mu = coeffs.mu
    M = H.matrix()
    Ms = 0.5 * (M + M.T)
    ev = np.linalg.eigvalsh(Ms)
    rng = np.random.default_rng(rng)
    xi = rng.standard_normal((n_xi, M.shape[0]))
    q = np.einsum("pi,ij,pj->p", xi, M, xi) / np.einsum("pi,pi->p", xi, xi)
    lo, hi = min(ev[0], q.min()), max(ev[-1], q.max())
    rep.add("ellipticity", lo >= mu - 1e-12 and hi <= 1 / mu + 1e-12,
            eigenvalues=ev, lower_margin=lo - mu, upper_margin=1 / mu - hi)
    if coeffs.is_symmetric():
        asym = float(np.abs(M - M.T).max())
        rep.add("symmetry", asym <= 1e-12, asymmetry=asym)
    size = max(np.linalg.norm(H.V_hat), np.linalg.norm(H.B_hat), np.linalg.norm(H.c_hat))
    if bound is None:
        bound = coeffs.kappa * (1 + 1 / mu**2)
    rep.add("lower_order_bounded", size <= bound + 1e-12, size=size, bound=bound)
    if correctors is not None:
        energies = [correctors.grad_l2(k) for k in range(coeffs.d + 1)]
        rep.add("corrector_energy_finite", bool(np.all(np.isfinite(energies))), grad_l2=energies)
        means = max(float(np.abs(correctors.mean(k)).max()) for k in range(coeffs.d + 1))
        rep.add("corrector_mean_zero", means <= 1e-12, max_mean=means)
    return rep
