import math

import numpy as np
import pytest

from stirvoter import exact
from stirvoter.cylinder import (
    CylinderFunction,
    RateFamily,
    example_speed_change_gradient,
    pi_two_plus,
)
from stirvoter.fields import (
    FieldParams,
    FieldTrace,
    TestFunction,
    as1_residual,
    cylinder_field,
    drift_eval_gradient_form,
    drift_eval_rate_sum,
    field_eval,
    gamma_n_eval,
    integrated_field,
    local_eval_on_sites,
    sobolev_norm_sq,
    write_trace_csv,
)
from stirvoter.lattice import Configuration, Torus, config_from_int

T6 = Torus(1, 6)
T8 = Torus(1, 8)
SSEP = RateFamily.ssep(1)


def random_config(torus, rng):
    occ = (rng.random(torus.size) < 0.5).astype(np.uint8)
    return Configuration(torus, occ)


# -- test functions ----------------------------------------------------------


def test_fourier_modes_are_orthonormal_on_the_grid():
    t = Torus(1, 16)
    basis = [
        TestFunction.constant(1),
        TestFunction.fourier_cos((1,)),
        TestFunction.fourier_sin((1,)),
        TestFunction.fourier_cos((3,)),
        TestFunction.fourier_sin((5,)),
    ]
    for i, F in enumerate(basis):
        for j, G in enumerate(basis):
            inner = float(F.values_on_grid(t) @ G.values_on_grid(t)) / t.size
            assert inner == pytest.approx(1.0 if i == j else 0.0, abs=1e-12)


def test_fourier_values_by_hand():
    t = Torus(1, 4)
    F = TestFunction.fourier_cos((1,))
    vals = F.values_on_grid(t)
    expect = [math.sqrt(2) * math.cos(2 * math.pi * x / 4) for x in range(4)]
    assert vals == pytest.approx(expect, abs=1e-12)


def test_test_function_validation():
    with pytest.raises(ValueError):
        TestFunction.fourier_sin((0,))
    with pytest.raises(ValueError):
        TestFunction(1, "spline", (1,))
    tab = TestFunction.tabulated(T6, np.arange(6.0))
    with pytest.raises(ValueError):
        tab.values_on_grid(T8)
    with pytest.raises(ValueError):
        TestFunction.fourier_cos((1, 2)).values_on_grid(T6)


def test_field_params_validation():
    with pytest.raises(ValueError):
        FieldParams(0.0, 1.0)
    with pytest.raises(ValueError):
        FieldParams(0.5, 0.0)


def test_field_eval_constant_mode_by_hand():
    fp = FieldParams(0.5, 2.0)
    eta = Configuration.from_bits(T8, "11010010")
    want = (4 - 0.5 * 8) / math.sqrt(8 * 2.0)
    assert field_eval(eta, TestFunction.constant(1), fp) == pytest.approx(want, abs=1e-14)


def test_sobolev_norm():
    vals = {(0,): (1.0, 0.0), (2,): (0.5, -0.5)}
    want = 1.0 + (1 + 4) ** -1.5 * 0.5
    assert sobolev_norm_sq(vals, 1.5) == pytest.approx(want, abs=1e-12)
    with pytest.raises(ValueError):
        sobolev_norm_sq(vals, 0.0)


# -- traces -------------------------------------------------------------------


def test_field_trace_requires_increasing_times():
    with pytest.raises(ValueError):
        FieldTrace(0, [0.0, 0.0, 1.0], {"x": np.zeros(3)})
    with pytest.raises(ValueError):
        FieldTrace(0, [0.0, 1.0], {"x": np.zeros(3)})


def test_integrated_field_trapezoid_on_linear_channel():
    times = np.linspace(0.0, 1.0, 21)
    trace = FieldTrace(0, times, {"lin": 3.0 * times})
    out = integrated_field(trace)
    assert out.metadata["integration"] == "trapezoid"
    # the trapezoid rule is exact on affine integrands
    assert out.integrated["lin"][-1] == pytest.approx(1.5, abs=1e-12)
    assert out.integrated["lin"][0] == 0.0


def test_integrated_field_passes_event_exact_through():
    times = np.array([0.0, 0.5])
    trace = FieldTrace(
        1, times, {"x": np.array([1.0, 2.0])},
        integrated={"x": np.array([0.0, 0.7])},
        metadata={"integration": "event_exact"},
    )
    assert integrated_field(trace) is trace


def test_write_trace_csv(tmp_path):
    times = np.array([0.0, 0.25])
    key = ("fourier_cos", (1,))
    trace = FieldTrace(2, times, {key: np.array([0.5, -0.5])})
    path = tmp_path / "trace.csv"
    write_trace_csv([trace], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "replica,t,mode_kind,m,value,integrated_value"
    assert len(lines) == 3
    assert lines[1].startswith("2,0.0,fourier_cos,1,")


# -- local functions -----------------------------------------------------------


def test_local_eval_matches_translated_evaluate():
    f = CylinderFunction.site((0,)) * CylinderFunction.site((1,)) - 0.25
    eta = Configuration.from_bits(T8, "10110100")
    vals = local_eval_on_sites(eta, f)
    for x in range(8):
        assert vals[x] == pytest.approx(f.evaluate(eta, x), abs=1e-14)


def test_cylinder_field_brute_force():
    fp = FieldParams(0.5, 1.5)
    f = pi_two_plus(CylinderFunction.site((0,)) * CylinderFunction.site((1,)), 0.5)
    G = TestFunction.fourier_cos((1,))
    eta = Configuration.from_bits(T8, "01101001")
    gv = G.values_on_grid(T8)
    want = sum(gv[x] * f.evaluate(eta, x) for x in range(8)) / math.sqrt(8 * 1.5)
    assert cylinder_field(eta, f, G, fp) == pytest.approx(want, abs=1e-13)


# -- drift: two independent routes ---------------------------------------------


def test_drift_routes_agree_on_random_inputs():
    """Rate-sum and summation-by-parts drifts coincide for a gradient family."""
    rates, grad = example_speed_change_gradient()
    rng = np.random.default_rng(123)
    fp = FieldParams(0.5, 1.7)
    for k in range(25):
        eta = random_config(T8, rng)
        m = int(rng.integers(1, 4))
        F = TestFunction.fourier_cos((m,)) if k % 2 else TestFunction.fourier_sin((m,))
        assert as1_residual(eta, F, fp, rates, grad) < 1e-10


def test_drift_routes_agree_for_ssep_d2():
    from stirvoter.cylinder import GradientData

    t = Torus(2, 4)
    rng = np.random.default_rng(5)
    fp = FieldParams(0.5, 1.0)
    for _ in range(5):
        eta = random_config(t, rng)
        F = TestFunction.fourier_cos((1, 1))
        a = drift_eval_rate_sum(eta, F, fp, RateFamily.ssep(2))
        b = drift_eval_gradient_form(eta, F, fp, GradientData.ssep(2))
        assert a == pytest.approx(b, abs=1e-10)


def test_drift_matches_exact_generator():
    """The rate-sum drift is (L X)(eta) for the assembled combined generator."""
    a_n = 1.3
    fp = FieldParams(0.5, a_n)
    gen = exact.build_generator(T6, SSEP, "combined", scaling=(36.0, a_n))
    F = TestFunction.fourier_cos((1,))
    xvec = np.array([
        field_eval(config_from_int(T6, w), F, fp) for w in range(64)
    ])
    lx = gen.entries @ xvec
    for w in (0, 7, 21, 45, 63, 10):
        eta = config_from_int(T6, w)
        assert drift_eval_rate_sum(eta, F, fp, SSEP) == pytest.approx(
            float(lx[w]), abs=1e-10
        )


def test_gamma_matches_exact_generator():
    """gamma_n_eval equals the generator's quadratic jump moment pointwise."""
    a_n = 0.9
    fp = FieldParams(0.5, a_n)
    gen = exact.build_generator(T6, SSEP, "combined", scaling=(36.0, a_n))
    F = TestFunction.fourier_sin((2,))
    xvec = np.array([
        field_eval(config_from_int(T6, w), F, fp) for w in range(64)
    ])
    g2 = exact.gamma_k(xvec, gen, 2)
    for w in (1, 5, 22, 38, 57):
        eta = config_from_int(T6, w)
        assert gamma_n_eval(eta, F, fp, SSEP) == pytest.approx(float(g2[w]), abs=1e-10)


def test_gamma_splits_rate_from_flip_normalization():
    # the flip acceleration cancels in the flip block, so only the exchange
    # block reacts when a_n changes
    eta = Configuration.from_bits(T8, "11001010")
    F = TestFunction.fourier_cos((1,))
    g_small = gamma_n_eval(eta, F, FieldParams(0.5, 1.0), SSEP)
    g_large = gamma_n_eval(eta, F, FieldParams(0.5, 4.0), SSEP)
    flip_part = g_small - (g_small - g_large) * 4.0 / 3.0
    fp = FieldParams(0.5, 2.0)
    assert gamma_n_eval(eta, F, fp, SSEP) == pytest.approx(
        (g_small - flip_part) / 2.0 + flip_part, abs=1e-12
    )
