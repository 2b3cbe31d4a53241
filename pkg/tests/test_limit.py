import math

import numpy as np
import pytest
from expected_values import (
    COV_M1_T025_T025,
    COV_M1_T025_T05,
    COV_M1_T05_T05,
    COV_M2_T025_T025,
    COV_M2_T025_T05,
    COV_M2_T05_T05,
    COV_M3_T025_T025,
    COV_M3_T025_T05,
    COV_M3_T05_T05,
    INT_COV_M0_T05_S03,
    INT_COV_M1_T05_S03,
    LAMBDA_M1_D1,
    LAMBDA_M2_D1,
    MARTINGALE_TARGET_T05,
    OU_STATIONARY_VAR_M1,
    SEMIGROUP_M1_T01,
)

from stirvoter.cylinder import CylinderFunction, GradientData, example_speed_change_gradient
from stirvoter.limit import (
    Mode,
    build_limit_model,
    cov_limit,
    inner_product,
    integrated_cov,
    integrated_cov_quadrature,
    lambda_m,
    martingale_cov,
    mc_cov_check,
    ou_exact_step,
    semigroup_apply,
    stationary_variance,
    target_rows,
    write_target_table,
)

MODEL = build_limit_model(GradientData.ssep(1), 0.5)
M0 = Mode.constant(1)
M1 = Mode((1,))
M2 = Mode((2,))
M3 = Mode((3,))


def test_mode_validation():
    with pytest.raises(ValueError):
        Mode((1,), "tan")
    with pytest.raises(ValueError):
        Mode((1,), "const")
    with pytest.raises(ValueError):
        Mode((0,), "cos")
    assert Mode.constant(2).m == (0, 0)


def test_inner_product_is_orthonormal():
    assert inner_product(M1, M1) == 1.0
    assert inner_product(M1, Mode((1,), "sin")) == 0.0
    assert inner_product(M1, M2) == 0.0
    combo = {M1: 2.0, M2: -1.0}
    assert inner_product(combo, combo) == pytest.approx(5.0)
    assert inner_product(combo, M2) == pytest.approx(-1.0)


def test_ssep_model_quantities():
    assert MODEL.H_matrix == pytest.approx(np.eye(1))
    assert MODEL.chi == 0.25
    assert MODEL.noise_intensity == 1.0


def test_ellipticity_is_enforced():
    bad = GradientData(1, [[CylinderFunction.site((0,)) * (-1.0)]])
    with pytest.raises(ValueError, match="direction"):
        build_limit_model(bad, 0.5)
    with pytest.raises(ValueError):
        build_limit_model(GradientData.ssep(1), 1.0)
    with pytest.raises(ValueError):
        build_limit_model(GradientData.ssep(2), 0.5, d=1)


def test_shipped_family_model_is_elliptic():
    _, grad = example_speed_change_gradient()
    model = build_limit_model(grad, 0.5)
    assert model.H_matrix[0, 0] > 0
    assert lambda_m(model, M1) == pytest.approx(
        4.0 * math.pi**2 * model.H_matrix[0, 0]
    )


def test_relaxation_rates():
    assert lambda_m(MODEL, M1) == pytest.approx(LAMBDA_M1_D1, rel=1e-12)
    assert lambda_m(MODEL, M2) == pytest.approx(LAMBDA_M2_D1, rel=1e-12)
    assert lambda_m(MODEL, M0) == 0.0
    with pytest.raises(ValueError):
        lambda_m(MODEL, (1, 1))


def test_semigroup_multiplier():
    assert semigroup_apply(MODEL, 0.1, M1) == pytest.approx(SEMIGROUP_M1_T01, rel=1e-12)
    assert semigroup_apply(MODEL, 0.0, M2) == 1.0
    with pytest.raises(ValueError):
        semigroup_apply(MODEL, -0.1, M1)


def test_stationary_variance():
    assert stationary_variance(MODEL, M1) == pytest.approx(OU_STATIONARY_VAR_M1, rel=1e-12)
    assert stationary_variance(MODEL, M0) == math.inf


def test_two_time_covariance_frozen_values():
    cases = [
        (M1, 0.5, 0.5, COV_M1_T05_T05),
        (M1, 0.25, 0.25, COV_M1_T025_T025),
        (M1, 0.25, 0.5, COV_M1_T025_T05),
        (M2, 0.5, 0.5, COV_M2_T05_T05),
        (M2, 0.25, 0.25, COV_M2_T025_T025),
        (M2, 0.25, 0.5, COV_M2_T025_T05),
        (M3, 0.5, 0.5, COV_M3_T05_T05),
        (M3, 0.25, 0.25, COV_M3_T025_T025),
        (M3, 0.25, 0.5, COV_M3_T025_T05),
    ]
    for mode, t1, t2, want in cases:
        assert cov_limit(MODEL, t1, t2, mode, mode) == pytest.approx(want, rel=1e-10)


def test_covariance_validation_and_bilinearity():
    with pytest.raises(ValueError):
        cov_limit(MODEL, 0.5, 0.25, M1, M1)
    with pytest.raises(ValueError):
        cov_limit(MODEL, -0.1, 0.25, M1, M1)
    combo = {M1: 2.0, M2: -1.0}
    want = 4.0 * COV_M1_T05_T05 + COV_M2_T05_T05
    assert cov_limit(MODEL, 0.5, 0.5, combo, combo) == pytest.approx(want, rel=1e-10)
    # distinct modes are independent
    assert cov_limit(MODEL, 0.5, 0.5, M1, M2) == 0.0


def test_constant_mode_variance_is_brownian():
    # zero relaxation: variance grows linearly at the noise rate
    assert cov_limit(MODEL, 0.5, 0.5, M0, M0) == pytest.approx(
        MARTINGALE_TARGET_T05, rel=1e-12
    )
    assert martingale_cov(MODEL, 0.5, 0.7, M0, M0) == pytest.approx(
        MARTINGALE_TARGET_T05, rel=1e-12
    )


def test_martingale_cancellation_by_quadrature():
    assert mc_cov_check(MODEL, 0.3, 0.5, M1, M1) < 1e-8
    assert mc_cov_check(MODEL, 0.5, 0.3, M2, M2) < 1e-8
    assert mc_cov_check(MODEL, 0.4, 0.4, M0, M0) < 1e-8
    combo = {M0: 1.0, M1: 0.5}
    assert mc_cov_check(MODEL, 0.2, 0.5, combo, combo) < 1e-8


def test_ou_step_statistics():
    rng = np.random.default_rng(42)
    dt = 0.05
    lam = lambda_m(MODEL, M1)
    decay = math.exp(-lam * dt)
    var = (1.0 - decay * decay) / (2.0 * lam)
    samples = np.array([ou_exact_step(1.0, M1, dt, MODEL, rng) for _ in range(3000)])
    assert abs(samples.mean() - decay) < 4.0 * math.sqrt(var / 3000)
    assert samples.var() == pytest.approx(var, rel=0.15)
    with pytest.raises(ValueError):
        ou_exact_step(0.0, M1, 0.0, MODEL, rng)


def test_integrated_covariance_closed_form_vs_quadrature():
    for mode, t, s in [(M1, 0.5, 0.3), (M2, 0.3, 0.5), (M0, 0.5, 0.3)]:
        closed = integrated_cov(MODEL, t, s, mode, mode)
        quad = integrated_cov_quadrature(MODEL, t, s, mode, mode)
        assert closed == pytest.approx(quad, abs=1e-9)
    assert integrated_cov(MODEL, 0.5, 0.3, M1, M1) == pytest.approx(
        INT_COV_M1_T05_S03, rel=1e-10
    )
    assert integrated_cov(MODEL, 0.5, 0.3, M0, M0) == pytest.approx(
        INT_COV_M0_T05_S03, rel=1e-12
    )
    with pytest.raises(ValueError):
        integrated_cov(MODEL, -0.1, 0.3, M1, M1)


def test_target_table(tmp_path):
    rows = target_rows(MODEL, [M1, M2], [0.25, 0.5])
    assert len(rows) == 4
    by_key = {(r["flavor"], r["m"], r["t"]): r for r in rows}
    assert by_key[("cos", "1", 0.5)]["variance"] == pytest.approx(COV_M1_T05_T05)
    assert by_key[("cos", "2", 0.25)]["lambda"] == pytest.approx(LAMBDA_M2_D1)
    path = tmp_path / "targets.csv"
    write_target_table(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "flavor,m,t,lambda,variance,stationary_variance"
    assert len(lines) == 5
    assert "0.0126651" in lines[2]
