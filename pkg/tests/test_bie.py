import numpy as np
import pytest
from scipy import integrate

from homlayer.bie import (
    BIESolveError,
    QuadratureOptions,
    apply_double_layer,
    apply_single_layer,
    apply_trace_K,
    apply_trace_Kstar,
    jump_check,
    jump_coefficient,
    layer_potentials,
    make_boundary_mesh,
    make_shape,
    manufactured_errors,
    point_source_data,
    solve_dirichlet,
    solve_neumann,
    solve_regularity,
)
from homlayer.kernels import KernelContext, gamma_0

LAPLACE = KernelContext(np.eye(3), None, None, 0.0, 1e-12)
YUKAWA = KernelContext(np.eye(3), None, None, 0.0, 1.0)
ANISO = KernelContext([[1.5, 0.2, 0.1], [0.2, 1.0, 0.0], [0.1, 0.0, 0.8]], [0.2, 0, 0.1], [0, 0.1, 0], 0.1, 1.0)
X0 = np.array([1.7, 1.53, 1.19])


@pytest.fixture(scope="module")
def sphere16():
    return make_boundary_mesh("sphere", 16)


@pytest.fixture(scope="module")
def sphere24():
    return make_boundary_mesh("sphere", 24)


def _interior(n=20, radius=0.5, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    return radius * x / np.linalg.norm(x, axis=1, keepdims=True) * rng.uniform(0, 1, (n, 1))


# meshes ----------------------------------------------------------------------

def test_sphere_area_and_normals():
    areas = []
    for n in (8, 16):
        m = make_boundary_mesh("sphere", n)
        areas.append(abs(m.area - 4 * np.pi))
        assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0, atol=1e-14)
        assert np.all((m.normals * m.points).sum(1) > 0)
    assert areas[1] <= 1e-12


@pytest.mark.parametrize("shape", ["sphere", "ellipsoid", "star"])
def test_closedness(shape):
    for n in (8, 16):
        m = make_boundary_mesh(shape, n)
        assert m.closedness() <= 10 * m.h**2
        # outward: normals point away from the inside
        inner = m.points - 1e-3 * m.normals
        assert np.all(m.shape.level(inner) < 0)


def test_ellipsoid_area_against_adaptive_quadrature():
    a, b, c = 2.0, 1.0, 1.0

    def element(t, p):
        st, ct, sp, cp = np.sin(t), np.cos(t), np.sin(p), np.cos(p)
        return st * np.sqrt((b * c * st * cp) ** 2 + (a * c * st * sp) ** 2 + (a * b * ct) ** 2)

    ref = integrate.dblquad(element, 0, 2 * np.pi, 0, np.pi, epsabs=0, epsrel=1e-11)[0]
    m = make_boundary_mesh("ellipsoid", 64, axes=(a, b, c))
    assert abs(m.area - ref) / ref <= 1e-3


def test_unsupported_shape_and_coarse_mesh():
    with pytest.raises(ValueError):
        make_shape("torus")
    with pytest.raises(ValueError):
        make_boundary_mesh("sphere", 2)


# potentials --------------------------------------------------------------------

def test_newtonian_single_layer_on_sphere(sphere16):
    one = np.ones(sphere16.size)
    vals = apply_single_layer(one, np.array([[0.0, 0.0, 0.0], [0.0, 2.0, 0.0]]), LAPLACE, sphere16)
    assert vals == pytest.approx([1.0, 0.5], abs=1e-6)


def test_yukawa_single_layer_at_center(sphere16):
    val = apply_single_layer(np.ones(sphere16.size), np.zeros((1, 3)), YUKAWA, sphere16)[0]
    assert val == pytest.approx(4 * np.pi * gamma_0(np.array([1.0, 0, 0]), YUKAWA), rel=1e-8)
    assert val == pytest.approx(np.exp(-1), rel=1e-8)


def test_single_layer_linear(sphere16):
    rng = np.random.default_rng(0)
    f, g = rng.normal(size=(2, sphere16.size))
    x = _interior(5)
    lhs = apply_single_layer(2.0 * f - 3.0 * g, x, ANISO, sphere16)
    rhs = 2.0 * apply_single_layer(f, x, ANISO, sphere16) - 3.0 * apply_single_layer(g, x, ANISO, sphere16)
    assert np.abs(lhs - rhs).max() <= 1e-13 * np.abs(lhs).max()


def test_gauss_solid_angle(sphere16):
    x = np.array([[0.2, -0.1, 0.3], [0.0, 0.0, 0.0], [0.0, 1.6, 0.0], [3.0, 0.5, 0.0]])
    vals = apply_double_layer(np.ones(sphere16.size), x, LAPLACE, sphere16)
    assert vals == pytest.approx([-1.0, -1.0, 0.0, 0.0], abs=1e-5)


def test_double_layer_converges():
    f = lambda m: 1 + 0.5 * m.omega[:, 0] * m.omega[:, 2]  # noqa: E731
    x = np.array([[0.3, 0.2, -0.1]])
    vals = []
    for n in (8, 12, 16, 24):
        m = make_boundary_mesh("ellipsoid", n)
        vals.append(apply_double_layer(f(m), x, ANISO, m)[0])
    errs = np.abs(np.diff(vals))
    # successive differences shrink at least like h^2
    assert errs[-1] <= errs[0] * (8 / 16) ** 2


def test_trace_of_constant_is_constant(sphere16):
    one = np.ones(sphere16.size)
    for op in (apply_trace_K, apply_trace_Kstar):
        out = op(one, YUKAWA, sphere16)
        assert np.ptp(out) <= 1e-5


def _pairing(mesh, ctx, ctx_dual):
    rng = np.random.default_rng(4)
    w = mesh.omega
    f = np.cos(w[:, 0] + 2 * w[:, 1]) + rng.normal() * w[:, 2]
    g = np.exp(0.5 * w[:, 2]) * w[:, 1]
    lhs = mesh.integrate((layer_potentials(mesh, ctx).Kstar @ f) * g)
    rhs = mesh.integrate(f * (layer_potentials(mesh, ctx_dual).K @ g))
    return abs(lhs - rhs)


def test_duality_without_drift():
    mesh = make_boundary_mesh("ellipsoid", 32)
    ctx = KernelContext(ANISO.A, ANISO.V, ANISO.V, 0.1, 1.0)
    assert _pairing(mesh, ctx, ctx) <= 1e-8


def test_duality_with_drift_pairs_with_adjoint():
    # Gamma_0 is not even once V != B; K* is then dual to K of the adjoint operator
    mesh = make_boundary_mesh("ellipsoid", 32)
    assert _pairing(mesh, ANISO, ANISO.adjoint()) <= 1e-8
    assert _pairing(mesh, ANISO, ANISO) > 1e-3


# jump relations ---------------------------------------------------------------

def test_jump_relations_isotropic(sphere24):
    nodes = np.random.default_rng(0).choice(sphere24.size, 40, replace=False)
    rep = jump_check(np.ones(sphere24.size), YUKAWA, sphere24, nodes=nodes)
    assert rep.max_deviation <= 1e-2
    # interior minus exterior limit of the double layer is -f
    assert np.allclose(rep.D_in - rep.D_out, -1.0, atol=1e-2)


def test_jump_relations_general_operator(sphere24):
    w = sphere24.omega
    f = 1 + 0.3 * w[:, 0] * w[:, 1] + 0.2 * w[:, 2] ** 2
    nodes = np.random.default_rng(1).choice(sphere24.size, 40, replace=False)
    rep = jump_check(f, ANISO, sphere24, nodes=nodes)
    assert rep.max_deviation <= 1e-2


def test_jump_coefficient_axis_nodes(sphere24):
    ctx = KernelContext(np.diag([4.0, 1.0, 1.0]), None, None, 0.0, 1.0)
    H = jump_coefficient(np.ones(sphere24.size), ctx, sphere24, np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
    assert H == pytest.approx([0.25, 0.25], rel=1e-2)


# solvers ------------------------------------------------------------------------

def test_zero_data_gives_zero(sphere16):
    z = np.zeros(sphere16.size)
    x = _interior(4)
    for solve in (solve_dirichlet, solve_neumann, solve_regularity):
        sol = solve(z, sphere16, ANISO)
        assert not np.any(sol.density)
        assert not np.any(sol.evaluate(x))


@pytest.mark.parametrize("kind", ["dirichlet", "neumann", "regularity"])
def test_manufactured_solutions_improve(kind):
    xs = _interior()
    errs = []
    for n in (12, 16, 24):
        e, _ = manufactured_errors(kind, make_boundary_mesh("sphere", n), ANISO, X0, xs)
        errs.append(e)
    assert errs[-1] <= 1e-3
    assert errs[0] > errs[1] > errs[2]


def test_manufactured_ellipsoid_and_star():
    xs = _interior(radius=0.4)
    for shape, x0 in (("ellipsoid", np.array([2.6, 1.2, 0.9])), ("star", X0)):
        m = make_boundary_mesh(shape, 24)
        for kind in ("dirichlet", "neumann"):
            e, _ = manufactured_errors(kind, m, ANISO, x0, xs)
            assert e <= 1e-3, (shape, kind, e)


def test_second_kind_condition_bounded():
    conds = {"dirichlet": [], "neumann": []}
    for n in (8, 12, 16, 24):
        lp = layer_potentials(make_boundary_mesh("sphere", n), ANISO)
        for kind in conds:
            conds[kind].append(lp.system(kind).condition())
    for kind, c in conds.items():
        assert max(c) <= 10 * c[0], (kind, c)


def test_dirichlet_trace_reproduces_data(sphere16):
    g, _, _ = point_source_data(sphere16, ANISO, X0)
    sol = solve_dirichlet(g, sphere16, ANISO)
    assert sphere16.l2(sol.boundary_trace() - g) <= 1e-8 * sphere16.l2(g)


def test_regularity_self_consistency(sphere24):
    g, _, tg = point_source_data(sphere24, ANISO, X0)
    sol = solve_regularity(g, sphere24, ANISO, tangential=tg)
    # residual is relative; the bound is on the absolute discrete L^2 norm
    assert sol.residual * sphere24.l2(g) <= 1e-6
    assert sol.info["tangential_residual"] <= 1e-2 * sphere24.l2(np.linalg.norm(tg, axis=1))


def test_regularity_refuses_ill_conditioning(sphere16):
    g, _, _ = point_source_data(sphere16, ANISO, X0)
    with pytest.raises(BIESolveError):
        solve_regularity(g, sphere16, ANISO, alpha=0.0, max_condition=10.0)


def test_neumann_dirichlet_round_trip(sphere24):
    _, fn, _ = point_source_data(sphere24, ANISO, X0)
    neu = solve_neumann(fn, sphere24, ANISO)
    dir_ = solve_dirichlet(neu.boundary_trace(), sphere24, ANISO)
    x = _interior()
    a, b = neu.evaluate(x), dir_.evaluate(x)
    assert np.abs(a - b).max() <= 1e-3 * np.abs(a).max()
    assert sphere24.l2(neu.conormal_trace() - fn) <= 1e-8 * sphere24.l2(fn)


def test_lambda_below_threshold_refused(sphere16):
    with pytest.raises(ValueError):
        solve_dirichlet(np.ones(sphere16.size), sphere16, YUKAWA, lam_hat=2.0)


def test_square_function_bound():
    # int |grad u|^2 dist dx <= C ||g||^2 for Neumann-represented solutions
    m = make_boundary_mesh("sphere", 16)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, (1500, 3))
    pts = pts[np.linalg.norm(pts, axis=1) < 0.95]
    vol = 8.0 / 1500
    ratios = []
    for x0 in (X0, 0.8 * X0, np.array([0.0, 0.0, 1.4])):
        g, fn, _ = point_source_data(m, ANISO, x0)
        sol = solve_neumann(fn, m, ANISO)
        grad = sol.gradient(pts)
        sq = ((grad**2).sum(1) * (1 - np.linalg.norm(pts, axis=1))).sum() * vol
        ratios.append(sq / m.l2(sol.boundary_trace()) ** 2)
    assert np.all(np.isfinite(ratios)) and max(ratios) < 10.0


def test_options_change_quadrature_only_slightly(sphere16):
    x = _interior(3)
    f = np.ones(sphere16.size)
    a = apply_single_layer(f, x, ANISO, sphere16)
    lp = layer_potentials(sphere16, ANISO, QuadratureOptions(n_radial=32, n_angular=48))
    b = lp.single_layer(f, x)
    assert np.abs(a - b).max() <= 1e-8
