import json

import numpy as np
import pytest

from homlayer.cell import solve_correctors
from homlayer.cli.config import ExperimentConfig, RateReport, fit_slope, variation
from homlayer.cli.experiments import (
    expansion_remainder,
    exponential_solution,
    homogenization_sweep,
    make_domain,
    nontangential_max,
    square_function,
)
from homlayer.cli.main import main
from homlayer.coeffs import OperatorParams, PeriodicCoefficients
from homlayer.homog import homogenize
from homlayer.oracle import Box, GridField, direct_solve


def _box_field(values_fn, n=32, m=1):
    ax = np.linspace(0, 1, n + 1)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1)
    vals = np.asarray(values_fn(pts.reshape(-1, 2)), float).reshape(-1, m).T.reshape((m, n + 1, n + 1))
    return GridField(vals, [ax, ax], 1 / n, np.ones((n + 1, n + 1), bool))


def test_nontangential_max_of_constant():
    F = _box_field(lambda x: np.tile([3.0, -4.0], (len(x), 1)), m=2)
    nt = nontangential_max(F, Box([0, 0], [1, 1]), n_boundary=16)
    assert np.allclose(nt.values, 5.0)
    assert nt.l2 == pytest.approx(5.0 * 2.0, rel=1e-12)  # perimeter 4


def test_nontangential_max_dominates_nearby_nodes():
    rng = np.random.default_rng(0)
    F = _box_field(lambda x: rng.normal(size=len(x)))
    box = Box([0, 0], [1, 1])
    nt = nontangential_max(F, box, n_boundary=12)
    pts = F.points().reshape(-1, 2)
    vals = np.abs(F.values[0].ravel())
    dist = box.distance(pts)
    checked = 0
    for P, v in zip(nt.points, nt.values):
        inner = dist > 1e-12
        r = np.linalg.norm(pts - P, axis=1)
        j = np.flatnonzero(inner)[np.argmin(r[inner])]
        if r[j] <= 2 * dist[j]:
            assert v >= vals[j]
            checked += 1
    assert checked > len(nt.points) // 2


def test_aperture_below_two_rejected():
    F = _box_field(lambda x: np.ones(len(x)))
    with pytest.raises(ValueError):
        nontangential_max(F, Box([0, 0], [1, 1]), aperture=1.5)


def test_square_function_zero_and_refinement():
    box = Box([0, 0], [1, 1])
    assert square_function(_box_field(lambda x: np.zeros(len(x))), box) == 0.0
    pc = PeriodicCoefficients.constant(np.diag([1.5, 1.0]), [0.2, 0.0], mu=0.5)
    H, _ = homogenize(pc, 16)
    g, _ = exponential_solution(H, 1.0)
    s = [square_function(direct_solve(pc, OperatorParams(lam=1.0), box, g, n), box) for n in (64, 128)]
    assert s[1] == pytest.approx(s[0], rel=0.05)


def test_exponential_solution_is_exact_for_constant_coefficients():
    pc = PeriodicCoefficients.constant(np.diag([1.5, 1.0]), [0.2, -0.1], [0.1, 0.0], [[0.1]], mu=0.5)
    H, _ = homogenize(pc, 16)
    g, _ = exponential_solution(H, 1.0)
    errs = []
    for n in (32, 64):
        G = direct_solve(pc, OperatorParams(lam=1.0), Box([0, 0], [1, 1]), g, n)
        errs.append(np.abs(G.values[0] - g(G.points().reshape(-1, 2)).reshape(G.shape)).max())
    assert errs[1] < errs[0] / 3.5


def test_expansion_remainder_vanishes_for_constant_coefficients():
    pc = PeriodicCoefficients.constant(np.eye(2))
    H, cs = homogenize(pc, 16)
    g, _ = exponential_solution(H, 1.0)
    box = Box([0, 0], [1, 1])
    ue = direct_solve(pc, OperatorParams(lam=1.0, epsilon=0.125), box, g, 32)
    u0 = direct_solve(H, OperatorParams(lam=1.0), box, g, 32)
    rem = expansion_remainder(ue, u0, cs, 0.125)
    assert rem["l2"] <= 1e-13 and rem["grad_l2"] <= 1e-12


def test_expansion_remainder_needs_matching_lattices():
    pc = PeriodicCoefficients.laminate(d=2)
    cs = solve_correctors(pc, 32)
    a = _box_field(lambda x: np.ones(len(x)), 16)
    b = _box_field(lambda x: np.ones(len(x)), 32)
    with pytest.raises(ValueError):
        expansion_remainder(a, b, cs, 0.25)


def test_constant_coefficient_sweep_is_degenerate(tmp_path):
    cfg = ExperimentConfig(preset="identity", d=2, eps=[1 / 2, 1 / 4, 1 / 8, 1 / 16], grid=32, cell_grid=16,
                           n_boundary=32, outdir=str(tmp_path))
    rep = homogenization_sweep(cfg)
    assert max(rep.series["l2"]) <= 1e-12
    assert rep.slopes["l2"]["degenerate"] and rep.excluded == []
    assert "smoke-test (d=2)" in rep.labels


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(eps=[0.1, 0.2])
    with pytest.raises(ValueError):
        ExperimentConfig(eps=[2.0, 0.5])
    with pytest.raises(ValueError):
        ExperimentConfig(experiment="other")


def test_config_hash_and_toml(tmp_path):
    a = ExperimentConfig(grid=128, outdir="x")
    b = ExperimentConfig(grid=128, outdir="y", workers=3)
    assert a.hash() == b.hash()
    assert a.hash() != ExperimentConfig(grid=64).hash()
    p = tmp_path / "c.toml"
    p.write_text('[experiment]\nexperiment = "green"\neps = [0.5, 0.25]\ngrid = 48\n')
    cfg = ExperimentConfig.from_toml(p)
    assert cfg.experiment == "green" and cfg.eps == [0.5, 0.25] and cfg.grid == 48


def test_resolved_split():
    cfg = ExperimentConfig(eps=[1 / 4, 1 / 8, 1 / 16, 1 / 32], grid=128)
    ok, bad = cfg.resolved(bandwidth=1)
    assert ok == [1 / 4, 1 / 8, 1 / 16] and bad == [1 / 32]
    assert cfg.resolved(bandwidth=0) == (cfg.eps, [])


def test_fit_slope():
    eps = np.array([1 / 4, 1 / 8, 1 / 16, 1 / 32])
    s, w, deg = fit_slope(eps, 3 * eps**1.5)
    assert s == pytest.approx(1.5) and w < 1e-8 and not deg
    assert fit_slope(eps[:3], eps[:3])[2]
    assert fit_slope(eps, np.full(4, 1e-15))[2]
    assert variation([1.0, 2.0, 1.5]) == pytest.approx(2.0)


def test_rate_report_write(tmp_path):
    cfg = ExperimentConfig()
    rep = RateReport.start(cfg, [0.5, 0.25, 0.125, 0.0625])
    rep.add_series("err", [1.0, 0.5, 0.25, 0.125])
    rep.slope_target("err", minimum=0.9)
    rep.add_series("bounded", [1.0, 1.2, 1.1, 1.0])
    rep.bounded_target("bounded", 2.0)
    assert rep.passed
    path = rep.write(tmp_path, svg=False)
    data = json.loads(path.read_text())
    assert data["passed"] and data["provenance"]["config_hash"] == cfg.hash()
    rows = (tmp_path / path.with_suffix(".csv").name).read_text().splitlines()
    assert rows[0] == "eps,err,bounded" and len(rows) == 5
    assert "PASS err_slope>=0.9" in str(rep)


def test_make_domain():
    assert isinstance(make_domain("square", 2), Box)
    with pytest.raises(ValueError):
        make_domain("torus", 3)


# command line -------------------------------------------------------------------

def test_cli_cell_and_homogenize(tmp_path, capsys):
    assert main(["cell", "--preset", "laminate-2sin", "--d", "2", "--grid", "64", "--out", str(tmp_path / "chi")]) == 0
    assert (tmp_path / "chi.json").exists()
    assert main(["homogenize", "--preset", "laminate-2sin", "--d", "2", "--grid", "64",
                 "--out", str(tmp_path / "h.json")]) == 0
    data = json.loads((tmp_path / "h.json").read_text())
    assert "A_hat" in data


def test_cli_kernel(tmp_path):
    assert main(["kernel", "--preset", "identity", "--grid", "16", "--points", "1,0,0;0,0.5,0",
                 "--compare-c", "--csv", str(tmp_path / "k.csv"), "--out", str(tmp_path / "k.json")]) == 0
    data = json.loads((tmp_path / "k.json").read_text())
    assert data["values"][0]["gamma_0_with_c"] == pytest.approx(np.exp(-1) / (4 * np.pi), rel=1e-10)


def test_cli_bie_exit_codes(tmp_path):
    base = ["bie", "solve", "--preset", "identity", "--problem", "dirichlet", "--n", "16", "--grid", "16",
            "--out", str(tmp_path)]
    assert main(base) == 0
    assert main(base + ["--target", "1e-30"]) == 1
    assert json.loads((tmp_path / "dirichlet.json").read_text())["relative_error"] > 0


def test_cli_direct_and_report(tmp_path):
    assert main(["direct", "--preset", "laminate-2sin", "--d", "2", "--eps", "0.25", "--grid", "64",
                 "--out", str(tmp_path / "u"), "--line-cut"]) == 0
    assert GridField.load(tmp_path / "u").values.shape == (1, 65, 65)
    assert (tmp_path / "u.cut.csv").exists()
    good = tmp_path / "good.json"
    bad = tmp_path / "bad.json"
    good.write_text(json.dumps({"results": {"a": True}}))
    bad.write_text(json.dumps({"results": {"a": True, "b": False}}))
    assert main(["report", str(good)]) == 0
    assert main(["report", str(good), str(bad), "--csv", str(tmp_path / "r.csv")]) == 1


def test_cli_sweep_writes_report(tmp_path):
    code = main(["sweep", "--preset", "identity", "--d", "2", "--eps", "0.5,0.25,0.125,0.0625", "--grid", "32",
                 "--outdir", str(tmp_path), "--no-plot"])
    assert code in (0, 1)
    reports = list(tmp_path.glob("sweep-*.json"))
    assert len(reports) == 1
    assert json.loads(reports[0].read_text())["slopes"]["l2"]["degenerate"]


def test_cli_requires_coefficients():
    with pytest.raises(SystemExit):
        main(["cell"])
