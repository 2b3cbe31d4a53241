#!/usr/bin/env python3
"""Derive the numeric targets used by the test suite, independently.

Every value frozen into ``tests/expected_values.py`` is computed here from
first principles with mpmath/sympy (high-precision quadrature, exact rational
algebra, brute-force enumeration) rather than with the package's own code, so
the tests compare two genuinely different routes.

Run from the repository root:

    python3 tools/make_expected_values.py

and commit the regenerated ``tests/expected_values.py``.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import mpmath as mp
import sympy as sp

mp.mp.dps = 50

OUT = "tests/expected_values.py"


def ou_two_time_cov(noise, lam, t1, t2):
    """Cov(Z_t1, Z_t2) for dZ = -lam Z dt + sqrt(noise) dW, Z_0 = 0.

    Computed by direct high-precision quadrature of the Ito isometry
    integral noise * int_0^min(t1,t2) exp(-lam (t1-s)) exp(-lam (t2-s)) ds.
    """
    lo, hi = mp.mpf(0), mp.mpf(min(t1, t2))
    f = lambda s: mp.e ** (-lam * (t1 - s)) * mp.e ** (-lam * (t2 - s))
    return float(noise * mp.quad(f, [lo, hi]))


def time_integrated_ou_cov(noise, lam, t, s):
    """Cov(int_0^t Z du, int_0^s Z dv) for the same OU process.

    By Fubini and the Ito isometry this is
    noise * int_0^{min(t,s)} g(t-w) g(s-w) dw with g(r) = int_0^r e^{-lam q} dq,
    evaluated with a single high-precision quadrature.
    """
    lam = mp.mpf(lam)
    if lam == 0:
        g = lambda r: r
    else:
        g = lambda r: (1 - mp.e ** (-lam * r)) / lam
    f = lambda w: g(t - w) * g(s - w)
    return float(mp.mpf(noise) * mp.quad(f, [0, mp.mpf(min(t, s))]))


def bernoulli_entropy(n_sites, p_each, rho):
    """H(mu | nu_rho) for mu = product Bernoulli(p_each) on n_sites sites."""
    p, r = mp.mpf(p_each), mp.mpf(rho)
    if p in (0, 1):
        # point mass on full/empty
        return float(-n_sites * (mp.log(r) if p == 1 else mp.log(1 - r)))
    one = p * mp.log(p / r) + (1 - p) * mp.log((1 - p) / (1 - r))
    return float(n_sites * one)


def centered_coefficients(sites, rho):
    """Expand prod_{z in sites} eta_z over the basis prod (eta_z - rho)."""
    rho = sp.Rational(rho)
    coeffs = {}
    for subset_size in range(len(sites) + 1):
        for subset in itertools.combinations(sites, subset_size):
            coeffs[subset] = rho ** (len(sites) - len(subset))
    return {k: float(v) for k, v in coeffs.items()}


def projection_values():
    """Projection split of f = eta_0 eta_1 at rho=1/2, eta_0=1, eta_1=0.

    All three numbers obtained by brute-force substitution in exact
    rational arithmetic.
    """
    rho = Fraction(1, 2)
    eta0, eta1 = 1, 0
    f_val = Fraction(eta0 * eta1)
    f_tilde = rho * rho
    f_tilde_prime = 2 * rho
    pi_full = f_val - f_tilde - f_tilde_prime * (Fraction(eta0) - rho)
    # single-site part: sum over support sites z of (eta_z - eta_0) * sum_{B
    # containing z} c_B rho^{|B|-1}; here the only monomial is {0, e1}.
    pi_one = (Fraction(eta1) - Fraction(eta0)) * 1 * rho
    # remainder: coefficient 1 on (eta_0-rho)(eta_1-rho)
    pi_two = (Fraction(eta0) - rho) * (Fraction(eta1) - rho)
    assert pi_full == pi_one + pi_two
    return float(pi_full), float(pi_one), float(pi_two)


def gradient_h_for_additive_family():
    """Solve tau_1 h - h = (1 + (eta_{-1}+eta_2)/2) (eta_1 - eta_0) exactly.

    Works in the polynomial ring over monomials eta_B, grouping translation
    classes and summing the telescoping series with sympy rationals. Returns
    the coefficient dict of the (finite-support) solution h.
    """
    half = sp.Rational(1, 2)
    # right-hand side monomials: dict mapping sorted site tuple -> coeff
    rhs = {
        (1,): sp.Integer(1),
        (0,): sp.Integer(-1),
        (-1, 1): half,
        (-1, 0): -half,
        (1, 2): half,
        (0, 2): -half,
    }
    # group by translation class (shape = sites - min), solve
    # h_s(k-1) - h_s(k) = w_s(k) with finitely supported h_s
    from collections import defaultdict

    classes = defaultdict(dict)
    for sites, c in rhs.items():
        base = min(sites)
        shape = tuple(s - base for s in sites)
        classes[shape][base] = classes[shape].get(base, sp.Integer(0)) + c
    h = {}
    for shape, w in classes.items():
        total = sum(w.values())
        assert total == 0, f"class {shape} not telescoping: {total}"
        offsets = range(min(w), max(w) + 1)
        run = sp.Integer(0)
        for off in offsets:
            run += w.get(off, sp.Integer(0))
            coeff = -run
            if coeff != 0:
                sites = tuple(s + off for s in shape)
                h[sites] = h.get(sites, sp.Integer(0)) + coeff
    # verify: tau h - h == rhs
    check = defaultdict(lambda: sp.Integer(0))
    for sites, c in h.items():
        check[tuple(s + 1 for s in sites)] += c
        check[sites] -= c
    for sites in set(check) | set(rhs):
        assert check[sites] == rhs.get(sites, 0), sites
    return {k: float(v) for k, v in h.items() if v != 0}


def flow_values():
    """Unique d=1 flow carrying delta_0 to the twice-convolved block measure."""
    ell = 2
    m = [Fraction(1, ell)] * ell
    m2 = [sum(m[i] * m[k - i] for i in range(ell) if 0 <= k - i < ell) for k in range(2 * ell - 1)]
    assert m2 == [Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)]
    src = [Fraction(1), Fraction(0), Fraction(0)]
    flux = []
    run = Fraction(0)
    for x in range(2 * ell - 2):
        run += src[x] - m2[x]
        flux.append(run)
    energy = sum(f * f for f in flux)
    return [float(f) for f in flux], float(energy), [float(v) for v in m2]


def main():
    pi = mp.pi
    lam1 = float(4 * pi**2)
    lam2 = float(16 * pi**2)
    lam3 = float(36 * pi**2)

    # d=1, rho=1/2 noise intensity of the limit field: 4 d chi(rho) = 1
    noise = 1.0

    values = {}
    values["LAMBDA_M1_D1"] = lam1
    values["LAMBDA_M2_D1"] = lam2
    values["SEMIGROUP_M1_T01"] = float(mp.e ** (-4 * pi**2 * mp.mpf("0.1")))
    values["COV_M1_T05_T05"] = ou_two_time_cov(noise, 4 * pi**2, mp.mpf("0.5"), mp.mpf("0.5"))
    values["COV_M1_T025_T025"] = ou_two_time_cov(noise, 4 * pi**2, mp.mpf("0.25"), mp.mpf("0.25"))
    values["COV_M1_T025_T05"] = ou_two_time_cov(noise, 4 * pi**2, mp.mpf("0.25"), mp.mpf("0.5"))
    values["COV_M2_T05_T05"] = ou_two_time_cov(noise, 16 * pi**2, mp.mpf("0.5"), mp.mpf("0.5"))
    values["COV_M2_T025_T025"] = ou_two_time_cov(noise, 16 * pi**2, mp.mpf("0.25"), mp.mpf("0.25"))
    values["COV_M2_T025_T05"] = ou_two_time_cov(noise, 16 * pi**2, mp.mpf("0.25"), mp.mpf("0.5"))
    values["COV_M3_T05_T05"] = ou_two_time_cov(noise, 36 * pi**2, mp.mpf("0.5"), mp.mpf("0.5"))
    values["COV_M3_T025_T025"] = ou_two_time_cov(noise, 36 * pi**2, mp.mpf("0.25"), mp.mpf("0.25"))
    values["COV_M3_T025_T05"] = ou_two_time_cov(noise, 36 * pi**2, mp.mpf("0.25"), mp.mpf("0.5"))
    values["OU_STATIONARY_VAR_M1"] = float(1 / (8 * pi**2))
    values["INT_COV_M1_T05_S03"] = time_integrated_ou_cov(noise, 4 * pi**2, mp.mpf("0.5"), mp.mpf("0.3"))
    values["INT_COV_M0_T05_S03"] = time_integrated_ou_cov(noise, 0, mp.mpf("0.5"), mp.mpf("0.3"))

    values["ENTROPY_FULL_N4_RHO05"] = bernoulli_entropy(4, 1.0, 0.5)
    values["ENTROPY_FULL_N8_RHO05"] = bernoulli_entropy(8, 1.0, 0.5)
    values["ENTROPY_NU06_N8_RHO05"] = bernoulli_entropy(8, 0.6, 0.5)

    values["FIELD_VAR0_N64"] = float(mp.mpf("0.25") / mp.sqrt(mp.log(64)))
    values["FIELD_VAR0_N256"] = float(mp.mpf("0.25") / mp.sqrt(mp.log(256)))
    values["A_N_SQRTLOG_64"] = float(mp.sqrt(mp.log(64)))
    values["A_N_SQRTLOG_256"] = float(mp.sqrt(mp.log(256)))

    values["TILDE_PRIME_EXAMPLE"] = float(1 + 2 * mp.mpf("0.4"))

    cc = centered_coefficients((0, 1), Fraction(1, 2))
    values["CENTERED_COEFFS_PAIR_RHO05"] = {
        "empty": cc[()],
        "site0": cc[(0,)],
        "site1": cc[(1,)],
        "pair": cc[(0, 1)],
    }

    p_full, p_one, p_two = projection_values()
    values["PI_FULL_EXAMPLE"] = p_full
    values["PI_ONE_EXAMPLE"] = p_one
    values["PI_TWO_EXAMPLE"] = p_two

    values["GRADIENT_H_ADDITIVE"] = gradient_h_for_additive_family()

    flux, energy, m2 = flow_values()
    values["FLOW_D1_L2_FLUX"] = flux
    values["FLOW_D1_L2_ENERGY"] = energy
    values["CONV_D1_L2_WEIGHTS"] = m2

    values["ELL_RAW_D1_N100_A4"] = float(100 / mp.sqrt(4))
    values["ELL_D3_N100_A1"] = float(mp.mpf(100 ** 2) ** (sp.Rational(1, 3)))

    values["VOTER_RATE_SUM_N64_RHO05"] = 64 * 2 * 2 * 0.25  # 2d * n * 2chi
    values["MARTINGALE_TARGET_T05"] = 4 * 1 * 0.25 * 0.5  # 4 d chi(rho) t, unit norm

    with open(OUT, "w") as fh:
        fh.write('"""Frozen numeric targets. Generated by tools/make_expected_values.py."""\n\n')
        for key, val in values.items():
            fh.write(f"{key} = {val!r}\n")
    print(f"wrote {OUT} with {len(values)} entries")


if __name__ == "__main__":
    main()
