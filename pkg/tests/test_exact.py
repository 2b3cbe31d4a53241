import math

import numpy as np
import pytest

from expected_values import (
    ENTROPY_FULL_N4_RHO05,
    ENTROPY_NU06_N8_RHO05,
)
from stirvoter import exact
from stirvoter.cylinder import RateFamily
from stirvoter.lattice import Configuration, Torus, config_from_int, config_to_int

T6 = Torus(1, 6)
SSEP = RateFamily.ssep(1)
ADDITIVE = RateFamily.example_speed_change()


def popcounts(torus):
    return np.bitwise_count(np.arange(1 << torus.size, dtype=np.int64)).astype(np.int64)


def tilted_product(torus, p, rho):
    """Product Bernoulli(p) probabilities carrying reference density rho."""
    return exact.DistributionVector(torus, exact.product_measure(torus, p).probs, rho)


# -- generator assembly ------------------------------------------------------


@pytest.mark.parametrize("kind", ["exclusion", "voter", "combined"])
def test_generator_rows_sum_to_zero(kind):
    gen = exact.build_generator(T6, SSEP, kind)
    assert gen.row_sum_defect() < 1e-12
    assert gen.min_offdiagonal() >= 0.0
    assert gen.n_states == 64


def test_exclusion_conserves_particles():
    gen = exact.build_generator(T6, ADDITIVE, "exclusion")
    coo = gen.entries.tocoo()
    counts = popcounts(T6)
    off = coo.row != coo.col
    assert np.all(counts[coo.row[off]] == counts[coo.col[off]])


def test_voter_changes_one_particle():
    gen = exact.build_generator(T6, SSEP, "voter")
    coo = gen.entries.tocoo()
    counts = popcounts(T6)
    off = (coo.row != coo.col) & (coo.data != 0)
    assert np.all(np.abs(counts[coo.row[off]] - counts[coo.col[off]]) == 1)


def test_combined_scaling_splits_into_parts():
    n_sq = float(T6.n) ** 2
    a_n = 1.3
    combined = exact.build_generator(T6, SSEP, "combined", scaling=(n_sq, a_n))
    excl = exact.build_generator(T6, SSEP, "exclusion")
    voter = exact.build_generator(T6, SSEP, "voter")
    gap = combined.entries - n_sq * excl.entries - a_n * voter.entries
    assert abs(gap).max() < 1e-12


def test_absorbing_consensus_states():
    gen = exact.build_generator(T6, SSEP, "combined")
    full = (1 << T6.size) - 1
    assert gen.entries[0].toarray().ravel().tolist() == [0.0] * gen.n_states
    assert abs(gen.entries[full]).sum() == 0.0


# -- stationarity and adjoints ----------------------------------------------


@pytest.mark.parametrize("rates", [SSEP, ADDITIVE], ids=["ssep", "speed-change"])
def test_product_measure_reversible_for_exclusion(rates):
    gen = exact.build_generator(T6, rates, "exclusion")
    assert exact.stationarity_defect(gen, 0.35) < 1e-12


def test_product_measure_not_stationary_for_voter():
    gen = exact.build_generator(T6, SSEP, "voter")
    assert exact.stationarity_defect(gen, 0.5) > 0.1


def test_weighted_adjoint_duality():
    """<Lf, g>_nu = <f, L*g>_nu for random f, g."""
    rho = 0.4
    gen = exact.build_generator(T6, SSEP, "combined", scaling=(4.0, 0.7))
    adj = exact.weighted_adjoint(gen, rho)
    nu = exact.product_measure(T6, rho).probs
    rng = np.random.default_rng(3)
    for _ in range(5):
        f = rng.standard_normal(gen.n_states)
        g = rng.standard_normal(gen.n_states)
        lhs = float(nu @ ((gen.entries @ f) * g))
        rhs = float(nu @ (f * (adj @ g)))
        assert abs(lhs - rhs) < 1e-10


def test_voter_adjoint_two_routes_agree():
    gen = exact.build_generator(T6, SSEP, "voter")
    via_transpose = exact.adjoint_voter(gen, 0.3)
    closed = exact.adjoint_voter_closed_form(T6, 0.3)
    assert abs(via_transpose - closed).max() < 1e-12


def test_adjoint_voter_rejects_other_kinds():
    gen = exact.build_generator(T6, SSEP, "exclusion")
    with pytest.raises(ValueError):
        exact.adjoint_voter(gen, 0.5)


# -- alignment functionals ---------------------------------------------------


def test_v_function_definition():
    eta = Configuration.from_bits(T6, "110100")
    rho = 0.5
    om = exact.omega_values(eta, rho)
    direct = 2.0 * sum(om[x] * om[(x + 1) % 6] for x in range(6))
    assert exact.V_function(eta, rho) == pytest.approx(direct, abs=1e-12)
    vec = exact.V_vector(T6, rho)
    assert vec[config_to_int(eta)] == pytest.approx(direct, abs=1e-12)


def test_v_vector_mean_vanishes_under_nu():
    nu = exact.product_measure(T6, 0.35)
    assert abs(float(nu.probs @ exact.V_vector(T6, 0.35))) < 1e-12


def test_v_ell_reduces_to_v_function_at_ell_one():
    t = Torus(1, 8)
    eta = Configuration.from_bits(t, "10110100")
    assert exact.V_ell(eta, 0.5, 1) == pytest.approx(exact.V_function(eta, 0.5), abs=1e-12)
    with pytest.raises(ValueError):
        exact.V_ell(eta, 0.5, 2)  # 4*2 >= 8


def test_omega_avg_is_the_windowed_mean():
    t = Torus(1, 8)
    eta = Configuration.from_bits(t, "10110100")
    om = exact.omega_values(eta, 0.5)
    # ell=2: twice-convolved uniform weights (1/4, 1/2, 1/4) at offsets 0,1,2
    by_hand = 0.25 * om[3] + 0.5 * om[4] + 0.25 * om[5]
    assert exact.omega_avg(eta, 3, 2, 0.5) == pytest.approx(by_hand, abs=1e-12)


# -- Dirichlet forms and jump moments ----------------------------------------


def random_density(torus, rho, seed):
    rng = np.random.default_rng(seed)
    nu = exact.product_measure(torus, rho).probs
    f = rng.uniform(0.2, 2.0, nu.shape[0])
    return f / float(nu @ f)


@pytest.mark.parametrize("rates", [SSEP, ADDITIVE], ids=["ssep", "speed-change"])
def test_dirichlet_form_two_routes(rates):
    rho = 0.45
    f = random_density(T6, rho, 11)
    direct = exact.dirichlet_In(f, T6, rates, rho)
    gen = exact.build_generator(T6, rates, "exclusion")
    via_matrix = exact.dirichlet_via_generator(f, gen, rho)
    assert direct >= 0.0
    assert direct == pytest.approx(via_matrix, abs=1e-12)


def test_dirichlet_vanishes_on_constants():
    assert exact.dirichlet_In(np.ones(64), T6, SSEP, 0.5) == pytest.approx(0.0, abs=1e-14)


def test_carre_du_champ_is_the_mu_weighted_gamma2():
    gen = exact.build_generator(T6, SSEP, "combined", scaling=(36.0, 1.2))
    mu = exact.product_measure(T6, 0.5)
    rng = np.random.default_rng(5)
    h = rng.standard_normal(64)
    gamma2 = exact.gamma_k(h, gen, 2)
    assert exact.carre_du_champ(h, mu, gen) == pytest.approx(
        0.5 * float(mu.probs @ gamma2), abs=1e-10
    )


@pytest.mark.parametrize("k", [2, 3, 4])
def test_gamma_k_binomial_identity(k):
    gen = exact.build_generator(T6, ADDITIVE, "combined", scaling=(36.0, 0.8))
    rng = np.random.default_rng(k)
    h = rng.standard_normal(64)
    gap = np.max(np.abs(exact.gamma_k(h, gen, k) - exact.gamma_k_binomial(h, gen, k)))
    assert gap < 1e-10


def test_compensator_identity():
    gen = exact.build_generator(T6, SSEP, "combined", scaling=(36.0, 1.0))
    rng = np.random.default_rng(17)
    h = rng.standard_normal(64)
    report = exact.compensator_check(h, gen)
    assert report["defect_m2"] < 1e-9
    assert report["defect_m4"] < 1e-7  # fourth powers of ~36 n^2-scaled jumps


# -- forward evolution --------------------------------------------------------


def test_evolve_preserves_mass_and_composes():
    gen = exact.build_generator(T6, SSEP, "combined", scaling=(36.0, 1.5))
    mu0 = exact.point_mass(T6, Configuration.from_bits(T6, "110100"), 0.5)
    one_hop = exact.evolve(mu0, gen, 0.08)
    assert abs(one_hop.probs.sum() - 1.0) < 1e-12
    two_hops = exact.evolve(exact.evolve(mu0, gen, 0.03), gen, 0.05)
    assert np.max(np.abs(one_hop.probs - two_hops.probs)) < 1e-10


def test_product_measure_invariant_under_exclusion():
    gen = exact.build_generator(T6, ADDITIVE, "exclusion")
    nu = exact.product_measure(T6, 0.4)
    moved = exact.evolve(nu, gen, 0.7)
    assert np.max(np.abs(moved.probs - nu.probs)) < 1e-10


# -- relative entropy ----------------------------------------------------------


def test_entropy_of_full_configuration():
    t4 = Torus(1, 4)
    mu = exact.point_mass(t4, Configuration.constant(t4, 1), 0.5)
    assert exact.relative_entropy(mu, 0.5) == pytest.approx(ENTROPY_FULL_N4_RHO05, abs=1e-12)
    assert exact.relative_entropy(mu, 0.5) == pytest.approx(4 * math.log(2), abs=1e-12)


def test_entropy_of_tilted_product_measure():
    t8 = Torus(1, 8)
    mu = exact.product_measure(t8, 0.6)
    assert exact.relative_entropy(mu, 0.5) == pytest.approx(ENTROPY_NU06_N8_RHO05, abs=1e-12)


def test_entropy_nonnegative_and_zero_at_reference():
    nu = exact.product_measure(T6, 0.3)
    assert exact.relative_entropy(nu, 0.3) == pytest.approx(0.0, abs=1e-12)
    assert exact.relative_entropy(exact.product_measure(T6, 0.31), 0.3) > 0.0


def test_entropy_rate_scale_by_dimension():
    assert exact.entropy_rate_scale(9, 1, 4.0) == pytest.approx(2.0)
    assert exact.entropy_rate_scale(9, 2, 4.0) == pytest.approx(4.0 * math.log(9))
    assert exact.entropy_rate_scale(9, 3, 4.0) == pytest.approx(4.0 * 9.0)
    assert exact.entropy_rate_scale(9, 4, 4.0) == pytest.approx(4.0 * 81.0)


# -- entropy production -------------------------------------------------------


def test_entropy_production_inequality_short_grid():
    mu0 = tilted_product(T6, 0.6, 0.5)
    times = np.linspace(0.0, 0.1, 11)
    report = exact.entropy_production_report(mu0, SSEP, 1.0, times)
    assert report.violations == 0
    assert math.isfinite(report.fitted_c0)
    assert len(report.rows) == 11
    first = report.rows[0]
    assert first["t"] == 0.0
    assert first["H"] == pytest.approx(
        exact.relative_entropy(mu0, 0.5), abs=1e-12
    )
    # the envelope starts at H(0) + scale and dominates its own fit points
    assert first["gronwall_envelope"] >= first["H"]


def test_entropy_production_from_point_mass():
    # a point mass has infinite log-density ratio on unvisited states at t=0;
    # H' = -inf there is allowed and never flags a violation
    mu0 = exact.point_mass(T6, Configuration.constant(T6, 1), 0.5)
    report = exact.entropy_production_report(mu0, SSEP, 1.0, [0.0, 0.02, 0.05])
    assert report.violations == 0
    assert report.rows[0]["H"] == pytest.approx(6 * math.log(2), abs=1e-10)


def test_entropy_report_csv(tmp_path):
    mu0 = tilted_product(T6, 0.55, 0.5)
    report = exact.entropy_production_report(mu0, SSEP, 0.5, [0.0, 0.05])
    out = tmp_path / "entropy.csv"
    report.to_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("t,H,Hprime")
    assert len(lines) == 3
