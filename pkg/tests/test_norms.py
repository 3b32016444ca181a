import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from experiments.presets import get_preset
from layer_fem import expr
from layer_fem.errors import ReferenceSolutionError
from layer_fem.fem import FESpace, interpolate, solve
from layer_fem.mesh import s_type_mesh, sun_stynes_mesh, uniform_mesh
from layer_fem.norms import (
    EXACT,
    FINE_MESH,
    STUDY_NORMS,
    ExponentialLayer,
    PowerLayer,
    Reference,
    error_norms,
    fit_order,
    interp_convergence_study,
    interp_error_study,
    log_scale,
    make_reference,
    pairwise_rates,
    plain_scale,
    predicted_orders,
    sun_stynes_scale,
)

STUDY_NS = [64, 128, 256, 512, 1024]


def zero_function(N=4, k=1):
    return interpolate(lambda x: np.zeros_like(x), FESpace(uniform_mesh(N), k))


def bubble(scale=1.0):
    return Reference(
        EXACT,
        lambda x: scale * x * (1.0 - x),
        lambda x: scale * (1.0 - 2.0 * x),
    )


# ---------------------------------------------------------------------------
# Error norms
# ---------------------------------------------------------------------------

def test_energy_norm_of_a_bubble():
    report = error_norms(zero_function(), bubble(), eps=0.01, gamma_tilde=2.0)
    assert report.energy == pytest.approx(math.sqrt(0.07), rel=1e-12)
    assert report.l2 == pytest.approx(math.sqrt(1.0 / 30.0), rel=1e-12)
    assert report.h1 == pytest.approx(math.sqrt(1.0 / 3.0), rel=1e-12)
    assert report.max == pytest.approx(0.25)


def test_error_report_records_its_parameters():
    report = error_norms(zero_function(k=2), bubble(), eps=0.01, gamma_tilde=2.0)
    assert (report.eps, report.gamma_tilde, report.quadrature_points) == (0.01, 2.0, 6)
    assert report.reference == {}

    problem = get_preset("manufactured-linear").build_problem(1.0)
    reference = make_reference(problem, EXACT, 1, exact="sin(pi*x)")
    metadata = error_norms(zero_function(), reference, 1.0, 0.5, quadrature_points=5).metadata()
    assert metadata["quadrature_points"] == 5
    assert metadata["reference"]["strategy"] == EXACT
    assert set(metadata) == {"eps", "gamma_tilde", "quadrature_points", "reference"}


def test_interpolant_of_a_reproducible_function_has_zero_error():
    u = interpolate(lambda x: x * (1.0 - x), FESpace(uniform_mesh(4), 2))
    report = error_norms(u, bubble(), eps=1.0, gamma_tilde=1.0)
    for value in report.as_dict().values():
        assert value == pytest.approx(0.0, abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(-100.0, 100.0, allow_nan=False).filter(lambda s: abs(s) > 1e-3))
def test_norms_are_homogeneous(scale):
    base = error_norms(zero_function(), bubble(), eps=0.1, gamma_tilde=0.5).as_dict()
    scaled = error_norms(zero_function(), bubble(scale), eps=0.1, gamma_tilde=0.5).as_dict()
    for name in base:
        assert scaled[name] == pytest.approx(abs(scale) * base[name], rel=1e-12)


def test_energy_recombines_from_its_parts():
    problem = get_preset("manufactured-linear").build_problem(0.05)
    u = solve(FESpace(uniform_mesh(16), 1), problem)
    report = error_norms(u, Reference.from_expr(expr.parse("sin(pi*x)")), eps=0.05, gamma_tilde=0.5)
    assert report.energy**2 == pytest.approx(0.05 * report.h1**2 + 0.5 * report.l2**2, rel=1e-12)


def test_error_quadrature_needs_enough_points():
    with pytest.raises(ValueError):
        error_norms(zero_function(k=2), bubble(), eps=1.0, gamma_tilde=1.0, quadrature_points=3)


# ---------------------------------------------------------------------------
# Reference solutions
# ---------------------------------------------------------------------------

def test_exact_reference_differentiates_symbolically():
    problem = get_preset("manufactured-linear").build_problem(1.0)
    reference = make_reference(problem, EXACT, 1, exact="sin(pi*x)")
    value, derivative = reference.evaluate(np.array([0.0, 0.5]))
    np.testing.assert_allclose(value, [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(derivative, [math.pi, 0.0], atol=1e-14)
    assert reference.provenance["strategy"] == EXACT


def test_exact_reference_binds_eps():
    problem = get_preset("manufactured-linear").build_problem(0.25)
    reference = make_reference(problem, EXACT, 1, exact="exp(-x/eps)", exact_derivative="-exp(-x/eps)/eps")
    value, derivative = reference.evaluate(np.array([0.25]))
    assert value[0] == pytest.approx(math.exp(-1.0))
    assert derivative[0] == pytest.approx(-4.0 * math.exp(-1.0))


def test_fine_mesh_reference_records_provenance():
    problem = get_preset("manufactured-linear").build_problem(1.0)
    reference = make_reference(problem, FINE_MESH, 1, mesh_factory=uniform_mesh, max_study_N=8)
    assert reference.kind == FINE_MESH
    assert reference.provenance["N"] == 32
    assert reference.provenance["order"] == 2

    coarse = solve(FESpace(uniform_mesh(8), 1), problem)
    exact = Reference.from_expr(expr.parse("sin(pi*x)"))
    fine_error = error_norms(coarse, exact, 1.0, 0.5).energy
    reference_error = error_norms(coarse, reference, 1.0, 0.5).energy
    assert reference_error == pytest.approx(fine_error, rel=0.05)
    assert error_norms(coarse, reference, 1.0, 0.5).reference["N"] == 32


@pytest.mark.parametrize(
    "strategy, options",
    [
        (EXACT, {}),
        (FINE_MESH, {"max_study_N": 8}),
        (FINE_MESH, {"mesh_factory": uniform_mesh}),
        ("richardson", {}),
    ],
)
def test_reference_inputs_are_checked(strategy, options):
    problem = get_preset("manufactured-linear").build_problem(1.0)
    with pytest.raises(ReferenceSolutionError):
        make_reference(problem, strategy, 1, **options)


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------

def test_pairwise_rates_and_fit():
    Ns = [10, 20, 40]
    errors = [1.0, 0.25, 0.0625]
    rates = pairwise_rates(errors, plain_scale(Ns))
    assert math.isnan(rates[0])
    np.testing.assert_allclose(rates[1:], [2.0, 2.0])
    assert fit_order(errors, plain_scale(Ns)) == pytest.approx(2.0)


def test_fit_ignores_failed_entries():
    Ns = [8, 16, 32, 64]
    errors = [1.0, math.nan, 1.0 / 16.0, 1.0 / 64.0]
    assert fit_order(errors, plain_scale(Ns)) == pytest.approx(2.0)
    assert math.isnan(fit_order([1.0, math.nan], plain_scale([8, 16])))


def test_log_scale():
    np.testing.assert_allclose(log_scale([64]), [math.log(64) / 64])


def test_sun_stynes_scale_uses_the_number_of_decades():
    np.testing.assert_allclose(sun_stynes_scale([96], 1e-8, 0.0, 1), [6.0 / 96.0])


# ---------------------------------------------------------------------------
# Interpolation studies
# ---------------------------------------------------------------------------

def region(table, name):
    return table[table["region"] == name].sort_values("N")


@pytest.mark.parametrize("k", [1, 2])
def test_exponential_layer_interpolation_on_shishkin_meshes(k):
    layer = ExponentialLayer(eps_tilde=1e-4, beta=1.0, location=0.0)
    study = interp_convergence_study(
        layer, lambda N: s_type_mesh(1e-4, 1.0, k + 1, N), k, STUDY_NS, scales=log_scale(STUDY_NS)
    )

    assert study.order("fine", "max") == pytest.approx(k + 1, abs=0.2)
    assert study.order("fine", "weighted") == pytest.approx(k, abs=0.2)
    coarse = region(study.errors, "coarse")
    assert fit_order(coarse["max"], plain_scale(STUDY_NS)) == pytest.approx(k + 1, abs=0.2)


def test_weighted_derivative_error_gains_a_factor_of_the_layer_width():
    eps_tilde = 1e-4
    layer = ExponentialLayer(eps_tilde=eps_tilde, beta=1.0, location=0.0)
    table = interp_error_study(layer, s_type_mesh(eps_tilde, 1.0, 2.0, 256), 1)
    fine = table[table["region"] == "fine"].iloc[0]
    assert fine["x2_deriv"] <= 8.0 * eps_tilde * fine["x1_deriv"]


@pytest.mark.parametrize("k", [1, 2])
def test_power_layer_interpolation_on_sun_stynes_meshes(k):
    eps = 1e-8
    layer = PowerLayer(eps=eps, lam=0.0, location=0.0)
    Ns = STUDY_NS[1:]
    study = interp_convergence_study(
        layer, lambda N: sun_stynes_mesh(eps, 0.0, k, N), k, Ns, scales=sun_stynes_scale(Ns, eps, 0.0, k)
    )

    for norm in ("l2", "weighted"):
        row = study.orders[(study.orders["region"] == "all") & (study.orders["norm"] == norm)].iloc[0]
        assert row["predicted"] == predicted_orders(k)[norm]
        assert row["observed"] == pytest.approx(row["predicted"], abs=0.25)


def test_study_reports_every_region():
    layer = ExponentialLayer(eps_tilde=1e-3, beta=2.0, location=1.0)
    table = interp_error_study(layer, s_type_mesh(1e-3, 2.0, 2.0, 64, orientation="right"), 1)
    assert list(table["region"]) == ["coarse", "fine", "all"]
    assert table["max"].iloc[-1] == pytest.approx(table["max"].iloc[:-1].max())


def test_study_orders_cover_every_region_and_norm():
    layer = ExponentialLayer(eps_tilde=1e-3, beta=2.0, location=1.0)

    def factory(N):
        return s_type_mesh(1e-3, 2.0, 2.0, N, orientation="right")

    study = interp_convergence_study(layer, factory, 1, [32, 64])
    assert list(study.orders.columns) == ["region", "norm", "observed", "predicted"]
    assert list(study.orders["region"].unique()) == ["coarse", "fine", "all"]
    assert len(study.orders) == 3 * len(STUDY_NORMS)
    assert study.orders[study.orders["norm"] == "h1"]["predicted"].isna().all()
    assert study.orders[study.orders["norm"] == "l2"]["predicted"].eq(2.0).all()

    with pytest.raises(ValueError):
        interp_convergence_study(layer, factory, 1, [32, 64], scales=[1.0])
