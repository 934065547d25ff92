"""Periodic trigonometric-polynomial coefficient fields.

Index conventions used throughout the package:

* ``A[i, j, a, b]`` multiplies ``d_j u^b`` in the flux of component ``a``
  along axis ``i``,
* ``V[i, a, b]`` (flux term ``V_i^{ab} u^b``), ``B[i, a, b]`` (drift
  ``B_i^{ab} d_i u^b``) and ``c[a, b]``.

Sampled arrays put the tensor indices first and the lattice axes last.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

#: c(m, d) in the coercivity threshold; only a sufficient constant.
DEFAULT_LAMBDA0_CONSTANT = 4.0

PRESETS = ("identity", "laminate-2sin", "checkerboard-smooth")


@dataclass(frozen=True)
class TrigField:
    """Real trigonometric polynomial with tensor values on the unit torus.

    ``f(y) = const + sum_t cos_t cos(2 pi k_t.y) + sin_t sin(2 pi k_t.y)``

    Attributes
    ----------
    const : ndarray, shape ``shape``
    modes : int ndarray, shape (T, d)
    cos, sin : ndarray, shape (T, *shape)
    """

    const: np.ndarray
    modes: np.ndarray
    cos: np.ndarray
    sin: np.ndarray

    def __post_init__(self):
        const = np.asarray(self.const, dtype=float)
        modes = np.asarray(self.modes, dtype=int)
        if modes.ndim != 2:
            raise ValueError("modes must have shape (T, d)")
        T = modes.shape[0]
        cos = np.asarray(self.cos, dtype=float).reshape((T,) + const.shape)
        sin = np.asarray(self.sin, dtype=float).reshape((T,) + const.shape)
        object.__setattr__(self, "const", const)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "cos", cos)
        object.__setattr__(self, "sin", sin)

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, d: int) -> "TrigField":
        value = np.asarray(value, dtype=float)
        return cls(value, np.zeros((0, d), int), np.zeros((0,) + value.shape),
                   np.zeros((0,) + value.shape))

    @property
    def d(self) -> int:
        return self.modes.shape[1]

    @property
    def shape(self) -> tuple:
        return self.const.shape

    @property
    def bandwidth(self) -> int:
        """Largest absolute wave number over all axes (0 for constants)."""
        active = np.any(self.cos != 0, axis=tuple(range(1, self.cos.ndim))) | np.any(
            self.sin != 0, axis=tuple(range(1, self.sin.ndim)))
        if not np.any(active):
            return 0
        return int(np.abs(self.modes[active]).max())

    @property
    def is_constant(self) -> bool:
        return self.bandwidth == 0

    # evaluation ---------------------------------------------------------
    def __call__(self, y) -> np.ndarray:
        """Evaluate at points ``y`` of shape (..., d); result (..., *shape)."""
        y = np.asarray(y, dtype=float)
        base = y.shape[:-1]
        out = np.broadcast_to(self.const, base + self.shape).copy()
        if len(self.modes):
            ph = 2 * np.pi * (y @ self.modes.T)  # (..., T)
            out += np.tensordot(np.cos(ph), self.cos, axes=1)
            out += np.tensordot(np.sin(ph), self.sin, axes=1)
        return out

    def sample(self, N: int) -> np.ndarray:
        """Values on the N^d lattice ``y = j / N``; shape (*shape, N, ..., N).

        Uses a scatter into the discrete spectrum, so aliasing follows the
        usual FFT rules when ``N <= 2 * bandwidth``.
        """
        d = self.d
        spec = np.zeros(self.shape + (N,) * d, dtype=complex)
        spec[(Ellipsis,) + (0,) * d] += self.const * N**d
        for t, k in enumerate(self.modes):
            # cos = (e+ + e-)/2 ; sin = (e+ - e-)/(2i)
            cp = 0.5 * (self.cos[t] - 1j * self.sin[t]) * N**d
            cm = 0.5 * (self.cos[t] + 1j * self.sin[t]) * N**d
            ip = tuple(int(kk) % N for kk in k)
            im = tuple(int(-kk) % N for kk in k)
            spec[(Ellipsis,) + ip] += cp
            spec[(Ellipsis,) + im] += cm
        axes = tuple(range(-d, 0))
        return np.real(np.fft.ifftn(spec, axes=axes))

    def gradient(self) -> "TrigField":
        """Exact gradient; the new leading index is the derivative axis."""
        d = self.d
        T = len(self.modes)
        shape = (d,) + self.shape
        cos = np.zeros((T,) + shape)
        sin = np.zeros((T,) + shape)
        for t, k in enumerate(self.modes):
            for i in range(d):
                w = 2 * np.pi * k[i]
                cos[t, i] = w * self.sin[t]
                sin[t, i] = -w * self.cos[t]
        return TrigField(np.zeros(shape), self.modes.copy(), cos, sin)

    def transpose(self, axes) -> "TrigField":
        shift = [0] + [a + 1 for a in axes]
        return TrigField(self.const.transpose(axes), self.modes,
                         self.cos.transpose(shift), self.sin.transpose(shift))

    def translate(self, z) -> "TrigField":
        """Field y -> f(y + z)."""
        z = np.asarray(z, dtype=float)
        ph = 2 * np.pi * (self.modes @ z)
        cp = np.cos(ph).reshape((-1,) + (1,) * len(self.shape))
        sp = np.sin(ph).reshape((-1,) + (1,) * len(self.shape))
        cos = self.cos * cp + self.sin * sp
        sin = self.sin * cp - self.cos * sp
        return TrigField(self.const, self.modes, cos, sin)

    def sup_norm(self, lattice: int | None = None) -> float:
        """Max of the pointwise Frobenius norm on a lattice."""
        if self.is_constant:
            return float(np.linalg.norm(self.const))
        n = lattice or 4 * self.bandwidth
        vals = self.sample(n).reshape(int(np.prod(self.shape)) if self.shape else 1, -1)
        return float(np.sqrt((vals**2).sum(axis=0)).max())

    # serialization ------------------------------------------------------
    def to_entries(self) -> list:
        """List of per-entry dictionaries in the file format."""
        entries = []
        for idx in np.ndindex(*self.shape) if self.shape else [()]:
            terms = []
            for t, k in enumerate(self.modes):
                cc, ss = float(self.cos[(t,) + idx]), float(self.sin[(t,) + idx])
                if cc or ss:
                    terms.append({"k": [int(v) for v in k], "cos": cc, "sin": ss})
            cst = float(self.const[idx])
            if cst or terms:
                entries.append({"index": list(idx), "const": cst, "terms": terms})
        return entries

    @classmethod
    def from_entries(cls, entries, shape, d) -> "TrigField":
        const = np.zeros(shape)
        table: dict = {}
        for e in entries:
            idx = tuple(e.get("index", ()))
            const[idx] += float(e.get("const", 0.0))
            for term in e.get("terms", []):
                k = tuple(_pad(term["k"], d))
                cs = table.setdefault(k, (np.zeros(shape), np.zeros(shape)))
                cs[0][idx] += float(term.get("cos", 0.0))
                cs[1][idx] += float(term.get("sin", 0.0))
        keys = sorted(table)
        modes = np.array(keys, dtype=int).reshape(len(keys), d)
        cos = np.array([table[k][0] for k in keys]).reshape((len(keys),) + tuple(shape))
        sin = np.array([table[k][1] for k in keys]).reshape((len(keys),) + tuple(shape))
        return cls(const, modes, cos, sin)


def _pad(k, d):
    k = list(k)
    if len(k) > d and any(k[d:]):
        raise ValueError(f"wave vector {k} does not fit in dimension {d}")
    return (k + [0] * d)[:d]


def _scalar_times_identity(f: TrigField, d: int, m: int) -> TrigField:
    """Embed a scalar field a(y) as a(y) delta_ij delta_ab."""
    eye = np.einsum("ij,ab->ijab", np.eye(d), np.eye(m))
    cos = f.cos[:, None, None, None, None] * eye
    sin = f.sin[:, None, None, None, None] * eye
    return TrigField(float(f.const) * eye, f.modes, cos, sin)


@dataclass(frozen=True)
class PeriodicCoefficients:
    """Coefficients A, V, B, c of the operator on the unit torus.

    Lower-order fields default to zero.  ``mu`` is the declared ellipticity
    constant, ``kappa`` the declared bound on the lower-order terms and
    ``tau`` a nominal Holder exponent (trig polynomials satisfy it for all
    tau < 1).
    """

    A: TrigField
    V: TrigField | None = None
    B: TrigField | None = None
    c: TrigField | None = None
    mu: float = 1.0
    kappa: float | None = None
    tau: float = 0.5
    name: str = ""

    def __post_init__(self):
        d = self.A.d
        shp = self.A.shape
        if len(shp) != 4 or shp[0] != shp[1] or shp[2] != shp[3] or shp[0] != d:
            raise ValueError(f"A must have shape (d, d, m, m), got {shp}")
        m = shp[2]
        defaults = {"V": (d, m, m), "B": (d, m, m), "c": (m, m)}
        for key, s in defaults.items():
            f = getattr(self, key)
            if f is None:
                object.__setattr__(self, key, TrigField.constant(np.zeros(s), d))
            elif f.shape != s or f.d != d:
                raise ValueError(f"{key} must have shape {s} in dimension {d}")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.kappa is None:
            object.__setattr__(self, "kappa", max(self.sup_norms()))

    @property
    def d(self) -> int:
        return self.A.d

    @property
    def m(self) -> int:
        return self.A.shape[2]

    @property
    def bandwidth(self) -> int:
        return max(f.bandwidth for f in (self.A, self.V, self.B, self.c))

    @property
    def lower_order_zero(self) -> bool:
        return all(f.is_constant and not np.any(f.const) for f in (self.V, self.B, self.c))

    def sup_norms(self) -> tuple[float, float, float]:
        """sup norms of V, B, c on the 4x-bandwidth lattice."""
        return tuple(f.sup_norm() for f in (self.V, self.B, self.c))

    def adjoint(self) -> "PeriodicCoefficients":
        """Coefficients of the formal adjoint: A* = a_ji^{ba}, V* = B^t, B* = V^t, c* = c^t."""
        return replace(
            self,
            A=self.A.transpose((1, 0, 3, 2)),
            V=self.B.transpose((0, 2, 1)),
            B=self.V.transpose((0, 2, 1)),
            c=self.c.transpose((1, 0)),
            name=(self.name + "*") if self.name else "",
        )

    def translate(self, z) -> "PeriodicCoefficients":
        return replace(self, A=self.A.translate(z), V=self.V.translate(z),
                       B=self.B.translate(z), c=self.c.translate(z))

    def lower_order_zeroed(self) -> "PeriodicCoefficients":
        return replace(self, V=None, B=None, c=None, kappa=None)

    def is_symmetric(self, tol=1e-14) -> bool:
        At = self.A.transpose((1, 0, 3, 2))
        return (np.allclose(At.const, self.A.const, atol=tol, rtol=0)
                and np.allclose(At.cos, self.A.cos, atol=tol, rtol=0)
                and np.allclose(At.sin, self.A.sin, atol=tol, rtol=0))

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, A, V=None, B=None, c=None, mu=None, **kw):
        A = np.asarray(A, dtype=float)
        if A.ndim == 2:  # scalar problem given as a d x d matrix
            A = A[:, :, None, None]
        d, m = A.shape[0], A.shape[2]
        V = np.zeros((d, m, m)) if V is None else np.asarray(V, float).reshape(d, m, m)
        B = np.zeros((d, m, m)) if B is None else np.asarray(B, float).reshape(d, m, m)
        c = np.zeros((m, m)) if c is None else np.asarray(c, float).reshape(m, m)
        if mu is None:
            lo, hi = _quotient_range(A.reshape(d, d, m, m, 1))
            mu = min(lo, 1.0 / hi)
        return cls(TrigField.constant(A, d), TrigField.constant(V, d),
                   TrigField.constant(B, d), TrigField.constant(c, d), mu=mu, **kw)

    @classmethod
    def laminate(cls, d: int = 2, mean: float = 2.0, amp: float = 1.0, axis: int = 0,
                 m: int = 1, mu=None, **kw):
        """Isotropic laminate a(y) = mean + amp sin(2 pi y_axis)."""
        k = np.zeros((1, d), int)
        k[0, axis] = 1
        a = TrigField(np.array(mean), k, np.zeros(1), np.array([amp]))
        if mu is None:
            mu = min(mean - abs(amp), 1.0 / (mean + abs(amp)))
        return cls(_scalar_times_identity(a, d, m), mu=mu, name="laminate", **kw)

    @classmethod
    def random_symmetric(cls, d: int, m: int = 1, n_modes: int = 3, max_k: int = 2,
                         spread: float = 0.5, base: float = 1.5, lower: float = 0.0,
                         rng=None, **kw):
        """Random symmetric trig tensor with guaranteed ellipticity.

        The (dm x dm) matrix ``base I + sum_t C_t cos + S_t sin`` has every
        perturbation norm bounded by ``spread``, so its spectrum stays in
        ``[base - spread, base + spread]`` and ``mu`` is set accordingly.
        ``lower`` scales random lower-order fields (zero by default).
        """
        rng = np.random.default_rng(rng)
        n = d * m
        modes = rng.integers(-max_k, max_k + 1, size=(n_modes, d))
        modes[np.all(modes == 0, axis=1), 0] = 1
        mats = rng.standard_normal((2 * n_modes, n, n))
        mats = mats + mats.transpose(0, 2, 1)
        norms = np.linalg.norm(mats, ord=2, axis=(1, 2))
        weights = rng.dirichlet(np.ones(2 * n_modes)) * spread
        mats *= (weights / norms)[:, None, None]

        def to4(M):
            return M.reshape(M.shape[:-2] + (d, m, d, m)).swapaxes(-3, -2)

        const = to4(base * np.eye(n))
        A = TrigField(const, modes, to4(mats[:n_modes]), to4(mats[n_modes:]))
        mu = min(base - spread, 1.0 / (base + spread))
        fields = {}
        if lower:
            for key, shp in (("V", (d, m, m)), ("B", (d, m, m)), ("c", (m, m))):
                fields[key] = TrigField(lower * rng.uniform(-1, 1, shp), modes,
                                        lower * rng.uniform(-1, 1, (n_modes,) + shp) / n_modes,
                                        lower * rng.uniform(-1, 1, (n_modes,) + shp) / n_modes)
        return cls(A, mu=mu, name="random-symmetric", **fields, **kw)

    # serialization ------------------------------------------------------
    def to_dict(self, params: "OperatorParams | None" = None) -> dict:
        out = {"name": self.name, "d": self.d, "m": self.m, "mu": self.mu,
               "kappa": self.kappa, "tau": self.tau}
        if params is not None:
            out["lambda"] = params.lam
            out["epsilon"] = params.epsilon
        for key in ("A", "V", "B", "c"):
            out[key] = {"entries": getattr(self, key).to_entries()}
        return out

    def save_json(self, path, params=None):
        Path(path).write_text(json.dumps(self.to_dict(params), indent=1))


def _quotient_range(Avals: np.ndarray) -> tuple[float, float]:
    """Extreme eigenvalues of the symmetric part of A over sampled points.

    ``Avals`` has shape (d, d, m, m, P).
    """
    d, _, m, _, P = Avals.shape
    M = Avals.transpose(4, 0, 2, 1, 3).reshape(P, d * m, d * m)
    M = 0.5 * (M + M.transpose(0, 2, 1))
    ev = np.linalg.eigvalsh(M)
    return float(ev[:, 0].min()), float(ev[:, -1].max())


def check_ellipticity(coeffs: PeriodicCoefficients, n_samples: int = 64) -> tuple[float, float]:
    """Extreme Rayleigh quotients ``a xi xi / |xi|^2`` of the leading tensor.

    The quotient is minimized/maximized exactly over xi (eigenvalues of the
    symmetric part of the (dm x dm) matrix) at the points of the uniform
    ``n_samples^d`` lattice.  The caller compares against (mu, 1/mu).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d, m = coeffs.d, coeffs.m
    vals = coeffs.A.sample(n_samples).reshape(d, d, m, m, -1)
    return _quotient_range(vals)


def compute_lambda0(coeffs: PeriodicCoefficients, constant: float = DEFAULT_LAMBDA0_CONSTANT) -> float:
    """Coercivity threshold ``c(m,d)/mu (|V|^2 + |B|^2 + |c|)`` with sup norms."""
    if not coeffs.mu > 0:
        raise ValueError("mu must be positive")
    nv, nb, nc = coeffs.sup_norms()
    return constant / coeffs.mu * (nv**2 + nb**2 + nc)


@dataclass
class OperatorParams:
    """Shift ``lam``, oscillation scale ``epsilon`` and the threshold ``lambda0``."""

    lam: float = 1.0
    epsilon: float = 1.0
    lambda0: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")

    @classmethod
    def for_coefficients(cls, coeffs, lam=None, epsilon=1.0, constant=DEFAULT_LAMBDA0_CONSTANT):
        lam0 = compute_lambda0(coeffs, constant)
        if lam is None:
            lam = max(lam0, coeffs.mu)
        return cls(lam=lam, epsilon=epsilon, lambda0=lam0)

    def check_solvable(self, mu: float):
        """Raise unless lam >= max(lambda0, mu)."""
        need = max(self.lambda0, mu)
        if self.lam < need - 1e-14:
            raise ValueError(f"lambda = {self.lam:g} below the coercivity threshold {need:g}")


# bilinear form ---------------------------------------------------------

def bilinear_form(coeffs: PeriodicCoefficients, u: TrigField, lam: float, v: TrigField | None = None,
                  N: int | None = None) -> float:
    """Torus bilinear form B[u, v] with the shift ``lam``.

    ``B[u,v] = int (A grad u + V u) . grad v + (B grad u + c u + lam u) . v``
    evaluated by the trapezoid rule on a lattice fine enough to be exact
    for the trigonometric integrands.
    """
    v = u if v is None else v
    band = coeffs.bandwidth + u.bandwidth + v.bandwidth
    N = N or max(8, 2 * band + 2)
    d = coeffs.d
    A, V, B, c = (f.sample(N) for f in (coeffs.A, coeffs.V, coeffs.B, coeffs.c))
    uu, vv = u.sample(N), v.sample(N)
    gu, gv = u.gradient().sample(N), v.gradient().sample(N)
    flux = np.einsum("ijab...,jb...->ia...", A, gu) + np.einsum("iab...,b...->ia...", V, uu)
    zero = np.einsum("iab...,ib...->a...", B, gu) + np.einsum("ab...,b...->a...", c, uu) + lam * uu
    dens = np.einsum("ia...,ia...->...", flux, gv) + np.einsum("a...,a...->...", zero, vv)
    return float(dens.mean())


def l2_norms(u: TrigField, N: int | None = None) -> tuple[float, float]:
    """(||u||, ||grad u||) on the torus."""
    N = N or max(8, 2 * u.bandwidth + 2)
    uu = u.sample(N)
    gu = u.gradient().sample(N)
    return float(np.sqrt((uu**2).sum(axis=0).mean())), float(np.sqrt((gu**2).sum(axis=(0, 1)).mean()))


def random_trig_field(d: int, m: int, max_k: int = 3, n_modes: int = 6, rng=None) -> TrigField:
    """Random m-vector test field with zero mean."""
    rng = np.random.default_rng(rng)
    modes = rng.integers(-max_k, max_k + 1, size=(n_modes, d))
    modes[np.all(modes == 0, axis=1), 0] = 1
    return TrigField(np.zeros(m), modes, rng.standard_normal((n_modes, m)),
                     rng.standard_normal((n_modes, m)))


# file IO ----------------------------------------------------------------

def _field_from_spec(spec: dict | None, shape, d, m) -> TrigField | None:
    if spec is None:
        return None
    if spec.get("isotropic"):
        if len(shape) != 4:
            raise ValueError("isotropic is only meaningful for A")
        scalar = TrigField.from_entries([{"index": [], "const": spec.get("const", 0.0),
                                          "terms": spec.get("terms", [])}], (), d)
        return _scalar_times_identity(scalar, d, m)
    return TrigField.from_entries(spec.get("entries", []), shape, d)


def coefficients_from_dict(data: dict, d: int | None = None) -> tuple[PeriodicCoefficients, OperatorParams]:
    """Parse the coefficient file format (see README) into coefficients and params.

    ``d`` overrides the stored dimension; wave vectors are zero padded,
    which is only sensible for isotropic/diagonal layouts.
    """
    d = int(d or data["d"])
    m = int(data.get("m", 1))
    shapes = {"A": (d, d, m, m), "V": (d, m, m), "B": (d, m, m), "c": (m, m)}
    fields = {k: _field_from_spec(data.get(k), s, d, m) for k, s in shapes.items()}
    if fields["A"] is None:
        raise ValueError("coefficient file lacks A")
    coeffs = PeriodicCoefficients(
        fields["A"], fields["V"], fields["B"], fields["c"],
        mu=float(data["mu"]), kappa=data.get("kappa"), tau=float(data.get("tau", 0.5)),
        name=str(data.get("name", "")),
    )
    params = OperatorParams.for_coefficients(
        coeffs, lam=data.get("lambda"), epsilon=float(data.get("epsilon", 1.0)),
        constant=float(data.get("lambda0_constant", DEFAULT_LAMBDA0_CONSTANT)),
    )
    return coeffs, params


def load_coefficients(path, d=None):
    """Load a TOML or JSON coefficient file, or a preset by name."""
    if str(path) in PRESETS:
        return load_preset(str(path), d=d)
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        data = tomllib.loads(text)
    return coefficients_from_dict(data, d=d)


def load_preset(name: str, d: int | None = None):
    """Load one of the shipped presets (see ``PRESETS``)."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("homlayer").joinpath("data").joinpath("presets").joinpath(f"{name}.toml").read_text()
    return coefficients_from_dict(tomllib.loads(text), d=d)
