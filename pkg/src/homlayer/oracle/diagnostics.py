"""Local energy diagnostics on lattice fields."""

from __future__ import annotations

import numpy as np

from .grid import GridField


def _ball_mask(field: GridField, center, R):
    pts = field.points()
    return np.linalg.norm(pts - np.asarray(center, float), axis=-1) <= R


def caccioppoli_ratio(field: GridField, lam: float, mu: float, center, R: float) -> float:
    """``[mu |grad u|^2_{B_R} + lam |u|^2_{B_R}]^{1/2} R / |u|_{B_2R}``.

    Lattice sums over nodes in the balls, central-difference gradients.
    Returns 0 when u vanishes on the larger ball.

    Raises
    ------
    ValueError
        If B(center, 2R) leaves the domain nodes of ``field``.
    """
    center = np.asarray(center, float)
    big = _ball_mask(field, center, 2 * R)
    lo = np.array([a[0] for a in field.axes])
    hi = np.array([a[-1] for a in field.axes])
    if np.any(center - 2 * R < lo) or np.any(center + 2 * R > hi) or not np.all(field.mask[big]):
        raise ValueError("ball B(center, 2R) is not inside the field's domain")
    if np.any(~np.isfinite(field.values[:, big])):
        raise ValueError("field not finite on the ball")
    small = _ball_mask(field, center, R)
    dv = field.h**field.d
    u = field.values
    g = field.gradient()
    den = np.sqrt((u[:, big] ** 2).sum() * dv)
    if den == 0:
        return 0.0
    num = mu * (g[:, :, small] ** 2).sum() * dv + lam * (u[:, small] ** 2).sum() * dv
    return float(np.sqrt(num) * R / den)


def radial_profile(field: GridField, center, radii, width=None, comp=0):
    """max |u| over lattice nodes in the shells |x - center| in [r - w/2, r + w/2]."""
    pts = field.points()
    dist = np.linalg.norm(pts - np.asarray(center, float), axis=-1)
    w = field.h if width is None else width
    u = np.abs(field.values[comp])
    out = []
    for r in radii:
        sel = (np.abs(dist - r) <= w / 2) & field.mask
        out.append(float(u[sel].max()) if np.any(sel) else np.nan)
    return np.array(out)
