import json
from dataclasses import replace

import numpy as np
import pytest

from homlayer.cell import CellSolveError, corrector_residual, solve_correctors, solve_torus
from homlayer.coeffs import PeriodicCoefficients, TrigField, random_trig_field

SQ3 = np.sqrt(3.0)


def test_constant_coefficients_give_zero_correctors():
    pc = PeriodicCoefficients.constant([[2.0, 0.3], [0.3, 1.0]], V=[0.4, -0.1], mu=0.5)
    cs = solve_correctors(pc, 16)
    assert np.abs(cs.chi_hat).max() == 0.0
    assert corrector_residual(cs, pc) == 0.0


def test_laminate_corrector_slope_at_origin():
    pc = PeriodicCoefficients.laminate(d=2)
    cs = solve_correctors(pc, 256)
    # a (1 + chi') is the harmonic mean sqrt(3), and a(0) = 2
    d1 = cs.evaluate([[0.0, 0.0]], 1, deriv_axis=0)[0, 0, 0]
    assert abs(d1 - (SQ3 / 2 - 1)) < 1e-6
    flux = (2 + np.sin(2 * np.pi * np.arange(64) / 64)) * (1 + cs.evaluate(
        np.c_[np.arange(64) / 64, np.zeros(64)], 1, deriv_axis=0)[:, 0, 0])
    assert np.allclose(flux, SQ3, atol=1e-9)


@pytest.mark.parametrize("adjoint", [False, True])
def test_mean_zero(adjoint):
    pc = PeriodicCoefficients.random_symmetric(2, lower=0.3, rng=2)
    cs = solve_correctors(pc, 32, adjoint=adjoint)
    for k in range(3):
        assert np.abs(cs.mean(k)).max() <= 1e-12


def test_laminate_residual_small():
    pc = PeriodicCoefficients.laminate(d=2)
    cs = solve_correctors(pc, 256)
    assert corrector_residual(cs, pc) <= 1e-10


def test_residual_linear_in_perturbation():
    pc = PeriodicCoefficients.laminate(d=2)
    cs = solve_correctors(pc, 32)
    res = []
    for delta in (1e-3, 2e-3, 4e-3):
        chi = cs.chi_hat.copy()
        chi[1, 0, 0, 1, 0] += delta
        chi[1, 0, 0, -1, 0] += delta
        res.append(corrector_residual(replace(cs, chi_hat=chi), pc))
    assert res[1] / res[0] == pytest.approx(2.0, rel=1e-3)
    assert res[2] / res[1] == pytest.approx(2.0, rel=1e-3)


def test_grid_doubling_converged():
    # correctors are analytic, not band-limited: 1e-10 needs N >= 64 here
    pc = PeriodicCoefficients.random_symmetric(2, max_k=2, lower=0.2, rng=7)
    a = solve_correctors(pc, 64)
    b = solve_correctors(pc, 128)
    pts = np.random.default_rng(0).uniform(0, 1, (50, 2))
    for k in range(3):
        assert np.abs(a.evaluate(pts, k) - b.evaluate(pts, k)).max() < 1e-10


def test_self_adjoint_configuration_matches():
    rng = np.random.default_rng(9)
    pc = PeriodicCoefficients.random_symmetric(2, lower=0.3, rng=rng)
    pc = PeriodicCoefficients(pc.A, pc.V, pc.V.transpose((0, 2, 1)), pc.c, mu=pc.mu)
    direct = solve_correctors(pc, 32)
    adj = solve_correctors(pc, 32, adjoint=True)
    assert np.abs(direct.chi_hat - adj.chi_hat).max() < 1e-10


def test_system_correctors():
    pc = PeriodicCoefficients.random_symmetric(2, m=2, lower=0.2, rng=1)
    cs = solve_correctors(pc, 32)
    assert cs.m == 2
    assert corrector_residual(cs, pc) < 1e-9


def test_bad_grid_rejected():
    pc = PeriodicCoefficients.laminate(d=2)
    with pytest.raises(ValueError):
        solve_correctors(pc, 24)
    with pytest.raises(ValueError):
        solve_correctors(pc, 1)


def test_nonconvergence_reported():
    pc = PeriodicCoefficients.random_symmetric(2, lower=0.3, rng=0)
    with pytest.raises(CellSolveError) as err:
        solve_correctors(pc, 32, maxiter=1)
    assert err.value.residual is not None


def test_torus_solve_constant():
    pc = PeriodicCoefficients.constant(np.eye(2))
    f = TrigField(np.zeros(1), np.array([[1, 0]]), np.array([[1.0]]), np.zeros((1, 1)))
    u = solve_torus(pc, 1.0, f, 16)
    y = np.arange(16) / 16
    exact = np.cos(2 * np.pi * y)[:, None] / (4 * np.pi**2 + 1)
    assert np.allclose(u[0], np.broadcast_to(exact, (16, 16)), atol=1e-13)


def test_torus_solve_residual():
    pc = PeriodicCoefficients.random_symmetric(2, lower=0.3, rng=6)
    f = random_trig_field(2, 1, max_k=2, rng=1)
    u32 = solve_torus(pc, 2.0, f, 32)
    u64 = solve_torus(pc, 2.0, f, 64)
    assert np.abs(u64[:, ::2, ::2] - u32).max() < 1e-10


def test_export(tmp_path):
    pc = PeriodicCoefficients.laminate(d=2)
    cs = solve_correctors(pc, 16)
    path = cs.export(tmp_path / "chi")
    hdr = json.loads(path.read_text())
    assert hdr["grid"] == 16
    raw = np.fromfile(tmp_path / "chi.bin", dtype="<f8").reshape(hdr["shape"])
    assert np.allclose(raw[1], cs.values(1))
    csv_path = cs.export(tmp_path / "chi_csv", fmt="csv")
    assert csv_path.exists()
