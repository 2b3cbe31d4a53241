"""Finite-support observables on {0,1}^(Z^d) and their local algebra.

A cylinder function is a finite linear combination of monomials
``prod_{z in B} eta_z`` over finite site sets B in Z^d (the empty product is
the constant 1). Because eta_z^2 = eta_z this multilinear representation is
unique, which the projection and gradient machinery below exploits freely.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .lattice import Configuration, site_coords, site_index

Site = tuple[int, ...]
TermKey = tuple[Site, ...]

COEFF_DROP = 1e-14


def _canon_sites(sites: Iterable[Sequence[int]], d: int) -> TermKey:
    out = []
    for z in sites:
        z = tuple(int(c) for c in z)
        if len(z) != d:
            raise ValueError(f"site {z} does not have {d} coordinates")
        out.append(z)
    key = tuple(sorted(set(out)))
    if len(key) != len(out):
        raise ValueError(f"repeated site in monomial {tuple(out)}")
    return key


def unit_vector(d: int, axis: int, scale: int = 1) -> Site:
    e = [0] * d
    e[axis] = scale
    return tuple(e)


@dataclass
class CylinderFunction:
    """Multilinear combination of occupancy monomials with finite support."""

    d: int
    terms: dict[TermKey, float] = field(default_factory=dict)

    def __post_init__(self):
        clean: dict[TermKey, float] = {}
        for sites, coeff in self.terms.items():
            key = _canon_sites(sites, self.d)
            val = clean.get(key, 0.0) + float(coeff)
            clean[key] = val
        self.terms = {k: v for k, v in clean.items() if abs(v) > COEFF_DROP}

    # -- constructors --------------------------------------------------

    @classmethod
    def constant(cls, d: int, value: float) -> "CylinderFunction":
        return cls(d, {(): float(value)})

    @classmethod
    def site(cls, z: Sequence[int]) -> "CylinderFunction":
        z = tuple(int(c) for c in z)
        return cls(len(z), {(z,): 1.0})

    @classmethod
    def monomial(cls, d: int, sites: Iterable[Sequence[int]], coeff: float = 1.0) -> "CylinderFunction":
        return cls(d, {tuple(tuple(int(c) for c in z) for z in sites): float(coeff)})

    # -- algebra ---------------------------------------------------------

    def __add__(self, other) -> "CylinderFunction":
        other = self._coerce(other)
        terms = dict(self.terms)
        for key, val in other.terms.items():
            terms[key] = terms.get(key, 0.0) + val
        return CylinderFunction(self.d, terms)

    def __sub__(self, other) -> "CylinderFunction":
        return self + (self._coerce(other) * -1.0)

    def __mul__(self, other) -> "CylinderFunction":
        if isinstance(other, (int, float)):
            return CylinderFunction(self.d, {k: v * other for k, v in self.terms.items()})
        other = self._coerce(other)
        terms: dict[TermKey, float] = {}
        for b1, c1 in self.terms.items():
            for b2, c2 in other.terms.items():
                key = tuple(sorted(set(b1) | set(b2)))  # eta_z^2 = eta_z
                terms[key] = terms.get(key, 0.0) + c1 * c2
        return CylinderFunction(self.d, terms)

    __rmul__ = __mul__

    def _coerce(self, other) -> "CylinderFunction":
        if isinstance(other, CylinderFunction):
            if other.d != self.d:
                raise ValueError(f"dimension mismatch: {self.d} vs {other.d}")
            return other
        if isinstance(other, (int, float)):
            return CylinderFunction.constant(self.d, other)
        raise TypeError(f"cannot combine CylinderFunction with {type(other)!r}")

    def translate(self, z: Sequence[int]) -> "CylinderFunction":
        """tau_z f, i.e. (tau_z f)(eta) = f(tau_z eta): sites shift by +z."""
        z = tuple(int(c) for c in z)
        if len(z) != self.d:
            raise ValueError(f"shift needs {self.d} coordinates")
        return CylinderFunction(
            self.d,
            {
                tuple(tuple(s + dz for s, dz in zip(site, z)) for site in key): coeff
                for key, coeff in self.terms.items()
            },
        )

    def support(self) -> tuple[Site, ...]:
        sites = set()
        for key in self.terms:
            sites.update(key)
        return tuple(sorted(sites))

    def degree(self) -> int:
        return max((len(k) for k in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def max_abs_coeff(self) -> float:
        return max((abs(v) for v in self.terms.values()), default=0.0)

    # -- evaluation --------------------------------------------------------

    def evaluate(self, eta: Configuration, x: int = 0) -> float:
        """f(tau_x eta) = sum_B c_B prod_{z in B} eta_{x+z} on a torus.

        Requires the torus side to exceed the per-axis extent of the support
        so translated sites cannot collide mod n.
        """
        torus = eta.torus
        if torus.d != self.d:
            raise ValueError(f"configuration dimension {torus.d} != {self.d}")
        supp = self.support()
        if supp:
            for axis in range(self.d):
                lo = min(z[axis] for z in supp)
                hi = max(z[axis] for z in supp)
                if hi - lo >= torus.n:
                    raise ValueError(
                        f"support extent {hi - lo} along axis {axis} does not fit "
                        f"on a torus of side {torus.n}"
                    )
        base = site_coords(torus, x)
        total = 0.0
        for key, coeff in self.terms.items():
            prod = coeff
            for z in key:
                idx = site_index(torus, [b + c for b, c in zip(base, z)])
                if not eta.occ[idx]:
                    prod = 0.0
                    break
            total += prod
        return total

    # -- density profiles ----------------------------------------------

    def tilde(self, rho: float) -> float:
        """Expectation under the product Bernoulli(rho) measure."""
        return sum(coeff * rho ** len(key) for key, coeff in self.terms.items())

    def tilde_prime(self, rho: float) -> float:
        """d/drho of tilde at rho."""
        return sum(
            coeff * len(key) * rho ** (len(key) - 1)
            for key, coeff in self.terms.items()
            if len(key) >= 1
        )

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "terms": [
                {"sites": [list(z) for z in key], "coeff": coeff}
                for key, coeff in sorted(self.terms.items())
            ],
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "CylinderFunction":
        d = int(payload["d"])
        terms: dict[TermKey, float] = {}
        for item in payload["terms"]:
            key = tuple(tuple(int(c) for c in z) for z in item["sites"])
            terms[key] = terms.get(key, 0.0) + float(item["coeff"])
        return cls(d, terms)


@dataclass
class CenteredRepresentation:
    """Expansion of a cylinder function over prod_{z in D}(eta_z - rho)."""

    d: int
    rho: float
    terms: dict[TermKey, float]

    def expand(self) -> CylinderFunction:
        """Back to the occupancy-monomial basis."""
        rho = self.rho
        out = CylinderFunction(self.d, {})
        for key, coeff in self.terms.items():
            factor = CylinderFunction.constant(self.d, coeff)
            for z in key:
                factor = factor * (CylinderFunction.site(z) - CylinderFunction.constant(self.d, rho))
            out = out + factor
        return out


def to_centered(f: CylinderFunction, rho: float) -> CenteredRepresentation:
    """Coefficients on the centered basis: eta_B = sum_{D<=B} rho^{|B|-|D|} xi_D."""
    terms: dict[TermKey, float] = {}
    for key, coeff in f.terms.items():
        for r in range(len(key) + 1):
            for subset in itertools.combinations(key, r):
                val = coeff * rho ** (len(key) - r)
                terms[subset] = terms.get(subset, 0.0) + val
    terms = {k: v for k, v in terms.items() if abs(v) > COEFF_DROP}
    return CenteredRepresentation(f.d, rho, terms)


def pi_rho(f: CylinderFunction, rho: float) -> CylinderFunction:
    """Remove the constant and the density-gradient part at level rho."""
    const = CylinderFunction.constant(f.d, f.tilde(rho))
    slope = f.tilde_prime(rho)
    origin = CylinderFunction.site((0,) * f.d)
    linear = slope * (origin - CylinderFunction.constant(f.d, rho))
    return f - const - linear


def pi_one(f: CylinderFunction, rho: float) -> CylinderFunction:
    """Single-site difference part: sum_z (eta_z - eta_0) sum_{B niz} c_B rho^{|B|-1}."""
    origin = (0,) * f.d
    out = CylinderFunction(f.d, {})
    weights: dict[Site, float] = {}
    for key, coeff in f.terms.items():
        for z in key:
            weights[z] = weights.get(z, 0.0) + coeff * rho ** (len(key) - 1)
    for z, w in weights.items():
        if z == origin:
            continue
        out = out + w * (CylinderFunction.site(z) - CylinderFunction.site(origin))
    return out


def pi_two_plus(f: CylinderFunction, rho: float) -> CylinderFunction:
    """Part spanned by centered products over two or more sites."""
    centered = to_centered(f, rho)
    trimmed = CenteredRepresentation(
        f.d, rho, {k: v for k, v in centered.terms.items() if len(k) >= 2}
    )
    return trimmed.expand()


def omega_product(sites: Iterable[Sequence[int]], rho: float, d: int | None = None) -> CylinderFunction:
    """Product of normalized centered occupancies (eta_z - rho)/sqrt(rho(1-rho))."""
    sites = [tuple(int(c) for c in z) for z in sites]
    if d is None:
        if not sites:
            raise ValueError("need explicit dimension for an empty product")
        d = len(sites[0])
    chi = rho * (1.0 - rho)
    if chi <= 0.0:
        raise ValueError(f"density {rho} gives a degenerate normalization")
    scale = chi ** (-0.5 * len(sites))
    out = CylinderFunction.constant(d, scale)
    for z in sites:
        out = out * (CylinderFunction.site(z) - CylinderFunction.constant(d, rho))
    return out


# -- rate families and gradient data ------------------------------------


def _min_over_support(f: CylinderFunction) -> float:
    """Minimum of f over all 0/1 assignments of its support sites."""
    supp = f.support()
    if not supp:
        return f.terms.get((), 0.0)
    if len(supp) > 24:
        raise ValueError(f"support of {len(supp)} sites is too large to enumerate")
    best = math.inf
    for bits in itertools.product((0, 1), repeat=len(supp)):
        assign = dict(zip(supp, bits))
        val = 0.0
        for key, coeff in f.terms.items():
            prod = coeff
            for z in key:
                if not assign[z]:
                    prod = 0.0
                    break
            val += prod
        best = min(best, val)
    return best


@dataclass
class RateFamily:
    """Per-axis exchange rates c_j, each blind to the two sites it swaps."""

    d: int
    c: list[CylinderFunction]
    c0: float = field(init=False)

    def __post_init__(self):
        if len(self.c) != self.d:
            raise ValueError(f"need {self.d} rate functions, got {len(self.c)}")
        origin = (0,) * self.d
        for axis, cj in enumerate(self.c):
            if cj.d != self.d:
                raise ValueError(f"rate {axis} has dimension {cj.d}, expected {self.d}")
            banned = {origin, unit_vector(self.d, axis)}
            hit = banned & set(cj.support())
            if hit:
                raise ValueError(
                    f"rate along axis {axis} depends on swapped sites {sorted(hit)}"
                )
        self.c0 = min(_min_over_support(cj) for cj in self.c)
        if self.c0 <= 0.0:
            raise ValueError(f"rates must have a positive lower bound, got {self.c0}")

    def is_constant(self) -> bool:
        return all(set(cj.terms) <= {()} for cj in self.c)

    @classmethod
    def ssep(cls, d: int) -> "RateFamily":
        return cls(d, [CylinderFunction.constant(d, 1.0) for _ in range(d)])

    @classmethod
    def example_speed_change(cls) -> "RateFamily":
        """d=1 family 1 + (eta_{-1} + eta_{+2})/2: nontrivial, elliptic, gradient."""
        c = (
            CylinderFunction.constant(1, 1.0)
            + 0.5 * CylinderFunction.site((-1,))
            + 0.5 * CylinderFunction.site((2,))
        )
        return cls(1, [c])

    def to_json(self) -> dict:
        return {"d": self.d, "c": [cj.to_json() for cj in self.c]}

    @classmethod
    def from_json(cls, payload: Mapping) -> "RateFamily":
        return cls(int(payload["d"]), [CylinderFunction.from_json(p) for p in payload["c"]])


@dataclass
class GradientData:
    """Matrix h[j][k] witnessing the microscopic gradient decomposition."""

    d: int
    h: list[list[CylinderFunction]]

    def __post_init__(self):
        if len(self.h) != self.d or any(len(row) != self.d for row in self.h):
            raise ValueError(f"need a {self.d}x{self.d} matrix of cylinder functions")

    @classmethod
    def ssep(cls, d: int) -> "GradientData":
        rows = []
        for j in range(d):
            row = []
            for k in range(d):
                if j == k:
                    row.append(CylinderFunction.site((0,) * d))
                else:
                    row.append(CylinderFunction(d, {}))
            rows.append(row)
        return cls(d, rows)

    def tilde_matrix(self, rho: float) -> np.ndarray:
        return np.array([[h.tilde(rho) for h in row] for row in self.h])

    def tilde_prime_matrix(self, rho: float) -> np.ndarray:
        return np.array([[h.tilde_prime(rho) for h in row] for row in self.h])


@dataclass
class GradientCheckResult:
    passed: bool
    max_residual: float
    residuals: list[float]


def gradient_check(
    rates: RateFamily, grad: GradientData, tol: float = 1e-12
) -> GradientCheckResult:
    """Verify c_j(eta)(eta_{e_j} - eta_0) = sum_k (tau_{e_k} h_jk - h_jk).

    The residual polynomial is evaluated on every 0/1 assignment of its
    joint support (which must not exceed 24 sites).
    """
    d = rates.d
    if grad.d != d:
        raise ValueError(f"gradient data dimension {grad.d} != rates dimension {d}")
    residuals = []
    for j in range(d):
        e_j = unit_vector(d, j)
        lhs = rates.c[j] * (CylinderFunction.site(e_j) - CylinderFunction.site((0,) * d))
        rhs = CylinderFunction(d, {})
        for k in range(d):
            h_jk = grad.h[j][k]
            rhs = rhs + (h_jk.translate(unit_vector(d, k)) - h_jk)
        residual = lhs - rhs
        supp = residual.support()
        if len(supp) > 24:
            raise ValueError(f"residual support of {len(supp)} sites is too large")
        worst = 0.0
        for bits in itertools.product((0, 1), repeat=len(supp)):
            assign = dict(zip(supp, bits))
            val = 0.0
            for key, coeff in residual.terms.items():
                prod = coeff
                for z in key:
                    if not assign[z]:
                        prod = 0.0
                        break
                val += prod
            worst = max(worst, abs(val))
        residuals.append(worst)
    worst = max(residuals, default=0.0)
    return GradientCheckResult(worst < tol, worst, residuals)


def _geodesic_steps(y: Site) -> list[tuple[Site, int, int]]:
    """ell^1 path 0 -> y, lowest axis first: list of (start, axis, sign)."""
    pos = [0] * len(y)
    steps = []
    for axis, target in enumerate(y):
        sign = 1 if target > 0 else -1
        for _ in range(abs(target)):
            steps.append((tuple(pos), axis, sign))
            pos[axis] += sign
    return steps


def gradient_from_measures(
    g: Sequence[Sequence[CylinderFunction]],
    m: Sequence[Sequence[Mapping[Site, float]]],
    tol: float = 1e-12,
) -> GradientData:
    """Telescope zero-mass measure representations into gradient data.

    For each axis j the caller supplies pairs (g[j][p], m[j][p]) with every
    m[j][p] a finitely supported measure of total mass zero; the represented
    current is sum_p sum_y m[j][p](y) (tau_y g - g). Each translate is routed
    along the ell^1 geodesic from 0 to y (lowest axis first); a step from z to
    z + e_k contributes tau_z g to h[j][k], a step from z to z - e_k
    contributes -tau_{z - e_k} g.
    """
    d = len(g)
    if len(m) != d:
        raise ValueError(f"need measures for {d} axes, got {len(m)}")
    rows = []
    for j in range(d):
        if len(g[j]) != len(m[j]):
            raise ValueError(f"axis {j}: {len(g[j])} functions but {len(m[j])} measures")
        row = [CylinderFunction(d, {}) for _ in range(d)]
        for p, (gp, mp) in enumerate(zip(g[j], m[j])):
            mass = sum(mp.values())
            if abs(mass) > tol:
                raise ValueError(f"axis {j} pair {p}: measure has mass {mass}, not zero")
            for y, weight in mp.items():
                y = tuple(int(c) for c in y)
                if len(y) != d:
                    raise ValueError(f"measure site {y} does not have {d} coordinates")
                if abs(weight) <= tol:
                    continue
                for start, axis, sign in _geodesic_steps(y):
                    if sign > 0:
                        piece = gp.translate(start)
                    else:
                        dest = list(start)
                        dest[axis] -= 1
                        piece = gp.translate(tuple(dest)) * -1.0
                    row[axis] = row[axis] + weight * piece
        rows.append(row)
    return GradientData(d, rows)


def represented_current(
    g: Sequence[CylinderFunction], m: Sequence[Mapping[Site, float]]
) -> CylinderFunction:
    """sum_p sum_y m_p(y) (tau_y g_p - g_p) as a cylinder function."""
    if not g:
        raise ValueError("need at least one pair")
    out = CylinderFunction(g[0].d, {})
    for gp, mp in zip(g, m):
        for y, weight in mp.items():
            y = tuple(int(c) for c in y)
            out = out + weight * (gp.translate(y) - gp)
    return out


def example_speed_change_gradient() -> tuple[RateFamily, GradientData]:
    """The shipped nontrivial d=1 family with machine-generated gradient data."""
    rates = RateFamily.example_speed_change()
    eta0 = CylinderFunction.site((0,))
    pair01 = CylinderFunction.site((0,)) * CylinderFunction.site((1,))
    pair02 = CylinderFunction.site((0,)) * CylinderFunction.site((2,))
    g = [[eta0, pair01, pair02]]
    m = [[
        {(1,): 1.0, (0,): -1.0},
        {(1,): 0.5, (-1,): -0.5},
        {(-1,): 0.5, (0,): -0.5},
    ]]
    grad = gradient_from_measures(g, m)
    return rates, grad
