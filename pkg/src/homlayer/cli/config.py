"""Experiment configuration and rate reports."""

from __future__ import annotations

import csv
import hashlib
import json
import subprocess
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .. import __version__

EXPERIMENTS = ("sweep", "green")


@dataclass
class ExperimentConfig:
    """One experiment: what to solve, at which scales, where to write.

    ``grid`` counts lattice cells along the longest side of the domain.
    ``eps`` must lie in (0, 1] and is sorted descending.
    """

    experiment: str = "sweep"
    preset: str | None = "laminate-2sin"
    coeffs_file: str | None = None
    d: int | None = None
    eps: list = field(default_factory=lambda: [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64])
    grid: int = 512
    cell_grid: int = 64
    mesh_n: int = 32
    shape: str = "square"
    side: float = 1.0
    lam: float | None = 1.0
    outdir: str = "results"
    seed: int = 0
    aperture: float = 2.0
    interior: float = 0.25
    n_boundary: int = 128
    green_radii: tuple = (0.08, 0.25)
    green_samples: int = 2000
    target_slope: float = 0.85
    target_variation: float = 2.0
    ablation_slope: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        eps = [float(e) for e in self.eps]
        if not eps or any(not 0 < e <= 1 for e in eps):
            raise ValueError("eps values must lie in (0, 1]")
        if eps != sorted(eps, reverse=True):
            raise ValueError("eps must be sorted descending")
        self.eps = eps
        self.green_radii = tuple(float(r) for r in self.green_radii)

    @property
    def h(self) -> float:
        return self.side / self.grid

    def resolved(self, bandwidth: int = 1, cells: float = 8.0):
        """Split eps into (resolved, under-resolved) at ``cells`` lattice cells per period."""
        if bandwidth == 0:  # nothing oscillates
            return list(self.eps), []
        ok = [e for e in self.eps if e / (self.h * bandwidth) >= cells - 1e-12]
        bad = [e for e in self.eps if e not in ok]
        return ok, bad

    def to_dict(self) -> dict:
        out = asdict(self)
        out["green_radii"] = list(self.green_radii)
        return out

    def hash(self) -> str:
        keep = {k: v for k, v in self.to_dict().items() if k not in ("outdir", "workers")}
        blob = json.dumps(keep, sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        data = tomllib.loads(Path(path).read_text())
        data = data.get("experiment", data) if isinstance(data.get("experiment"), dict) else data
        return cls(**data)


def fit_slope(eps, errors, min_points: int = 4):
    """Log-log least-squares slope and the half-width of its 95% interval.

    Returns (slope, width, degenerate).  ``degenerate`` is set when the
    errors sit at round-off (nothing to fit) or fewer than ``min_points``
    usable values remain.
    """
    eps = np.asarray(eps, float)
    err = np.asarray(errors, float)
    ok = np.isfinite(err) & (err > 1e-12)
    if ok.sum() < min_points:
        return None, None, True
    res = stats.linregress(np.log(eps[ok]), np.log(err[ok]))
    n = int(ok.sum())
    width = float(stats.t.ppf(0.975, n - 2) * res.stderr) if n > 2 else float("inf")
    return float(res.slope), width, False


def variation(values) -> float:
    v = np.abs(np.asarray(values, float))
    v = v[np.isfinite(v)]
    if len(v) == 0 or v.min() == 0:
        return float("inf") if len(v) and v.max() > 0 else 1.0
    return float(v.max() / v.min())


def _commit() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except Exception:  # noqa: BLE001 - provenance is best effort
        return "unknown"


@dataclass
class RateReport:
    """Per-eps measurements, fitted slopes and pass/fail against targets."""

    experiment: str
    eps: list
    series: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    labels: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @classmethod
    def start(cls, cfg: ExperimentConfig, eps):
        return cls(cfg.experiment, list(eps),
                   provenance={"config_hash": cfg.hash(), "commit": _commit(), "version": __version__,
                               "seed": cfg.seed})

    def add_series(self, name, values):
        self.series[name] = [float(v) for v in values]

    def slope_target(self, name, minimum=None, maximum=None):
        """Fit the slope of a series and record a lower (or upper) bound target."""
        s, w, degenerate = fit_slope(self.eps, self.series[name])
        self.slopes[name] = {"slope": s, "width": w, "degenerate": degenerate}
        if degenerate:
            self.notes.append(f"{name}: degenerate fit (errors at round-off or < 4 points)")
        if minimum is not None:
            key = f"{name}_slope>={minimum:g}"
            self.targets[key] = minimum
            self.results[key] = (not degenerate) and s >= minimum
        if maximum is not None:
            key = f"{name}_slope<{maximum:g}"
            self.targets[key] = maximum
            self.results[key] = (not degenerate) and s < maximum

    def bounded_target(self, name, max_variation):
        var = variation(self.series[name])
        key = f"{name}_variation<{max_variation:g}"
        self.targets[key] = max_variation
        self.results[key] = var < max_variation
        self.slopes.setdefault(name, {})["variation"] = var

    @property
    def passed(self) -> bool:
        return all(self.results.values())

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "eps": self.eps, "series": self.series,
                "slopes": self.slopes, "targets": self.targets,
                "results": {k: bool(v) for k, v in self.results.items()},
                "passed": self.passed, "labels": self.labels, "notes": self.notes,
                "excluded_eps": self.excluded, "provenance": self.provenance}

    def write(self, outdir, stem=None, svg=True) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.experiment}-{self.provenance.get('config_hash', 'x')}"
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=1))
        with open(out / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            names = list(self.series)
            w.writerow(["eps"] + names)
            for i, e in enumerate(self.eps):
                w.writerow([e] + [self.series[n][i] for n in names])
        if svg:
            try:
                self.plot(out / f"{stem}.svg")
            except ImportError:  # plotting is optional
                warnings.warn("matplotlib unavailable; skipped the SVG plot", stacklevel=2)
        return out / f"{stem}.json"

    def plot(self, path):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        for name, vals in self.series.items():
            v = np.asarray(vals, float)
            if np.all(v > 0):
                ax.loglog(self.eps, v, "o-", label=name)
        ax.set_xlabel("eps")
        ax.legend(fontsize=7)
        ax.set_title(f"{self.experiment} ({', '.join(self.labels) or 'd=3'})", fontsize=9)
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)

    def __str__(self):
        lines = [f"{self.experiment}  eps={self.eps}  {' '.join(self.labels)}"]
        for name, vals in self.series.items():
            sl = self.slopes.get(name, {})
            extra = ""
            if sl.get("slope") is not None:
                extra = f"  slope={sl['slope']:.3f}+-{sl['width']:.3f}"
            if "variation" in sl:
                extra += f"  variation={sl['variation']:.3f}"
            lines.append(f"  {name}: " + " ".join(f"{v:.4e}" for v in vals) + extra)
        for k, ok in self.results.items():
            lines.append(f"  {'PASS' if ok else 'FAIL'} {k}")
        for n in self.notes:
            lines.append(f"  note: {n}")
        return "\n".join(lines)
