"""Density fluctuation observables on the discrete torus.

The central object is the centered, (n^d a_n)^(-1/2)-normalized pairing of a
configuration with a test function. Everything else here is bookkeeping
around it: real Fourier test functions on the embedded grid, negative-order
Sobolev norms of mode vectors, time integrals of sampled traces, local-
function fields for the block-replacement experiments, and the two-route
drift and quadratic-variation evaluations that pin the simulator to the
generator algebra.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .cylinder import CylinderFunction, GradientData, RateFamily
from .lattice import Configuration, Torus, neighbor_tables, offset_table


@dataclass
class FieldParams:
    """Reference density and flip acceleration entering the field normalization."""

    rho: float
    a_n: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"density must lie strictly between 0 and 1, got {self.rho}")
        if self.a_n <= 0.0:
            raise ValueError(f"flip acceleration must be positive, got {self.a_n}")


@dataclass
class TestFunction:
    """Smooth test function restricted to the n-grid, with cached values.

    Fourier kinds use the real orthonormal basis: the zero frequency is the
    constant 1, nonzero frequencies are sqrt(2) cos(2 pi m.x) and
    sqrt(2) sin(2 pi m.x). Tabulated kind carries explicit per-site values
    for one fixed grid.
    """

    __test__ = False  # not a pytest case, despite the name

    d: int
    kind: str
    m: tuple[int, ...] | None = None
    table: np.ndarray | None = None
    table_n: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("fourier_cos", "fourier_sin", "tabulated"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.table is None or self.table_n is None:
                raise ValueError("tabulated kind needs table values and their grid side")
        else:
            if self.m is None or len(self.m) != self.d:
                raise ValueError(f"fourier kind needs a frequency vector of length {self.d}")
            if self.kind == "fourier_sin" and not any(self.m):
                raise ValueError("the zero-frequency sine mode vanishes identically")

    @classmethod
    def fourier_cos(cls, m) -> "TestFunction":
        m = tuple(int(k) for k in np.atleast_1d(m))
        return cls(len(m), "fourier_cos", m)

    @classmethod
    def fourier_sin(cls, m) -> "TestFunction":
        m = tuple(int(k) for k in np.atleast_1d(m))
        return cls(len(m), "fourier_sin", m)

    @classmethod
    def constant(cls, d: int) -> "TestFunction":
        return cls(d, "fourier_cos", (0,) * d)

    @classmethod
    def tabulated(cls, torus: Torus, values) -> "TestFunction":
        values = np.asarray(values, dtype=float)
        if values.shape != (torus.size,):
            raise ValueError(f"need {torus.size} values, got shape {values.shape}")
        return cls(torus.d, "tabulated", table=values, table_n=torus.n)

    def values_on_grid(self, torus: Torus) -> np.ndarray:
        """Values F(x/n) indexed like configuration sites; cached per grid."""
        if torus.d != self.d:
            raise ValueError(f"test function is {self.d}-dimensional, grid is {torus.d}")
        if self.kind == "tabulated":
            if torus.n != self.table_n:
                raise ValueError(f"tabulated on n={self.table_n}, asked for n={torus.n}")
            return self.table
        if torus.n not in self._cache:
            idx = np.arange(torus.size)
            phase = np.zeros(torus.size)
            for k in range(torus.d):
                coords = (idx // torus.n**k) % torus.n
                phase = phase + self.m[k] * coords
            phase = 2.0 * math.pi * phase / torus.n
            if self.kind == "fourier_cos":
                vals = np.ones(torus.size) if not any(self.m) else math.sqrt(2.0) * np.cos(phase)
            else:
                vals = math.sqrt(2.0) * np.sin(phase)
            self._cache[torus.n] = vals
        return self._cache[torus.n]


def field_eval(config: Configuration, F: TestFunction, params: FieldParams) -> float:
    """Centered pairing (n^d a_n)^(-1/2) sum_x F(x/n) (eta_x - rho)."""
    torus = config.torus
    vals = F.values_on_grid(torus)
    centered = config.occ.astype(float) - params.rho
    return float(vals @ centered) / math.sqrt(torus.size * params.a_n)


def sobolev_norm_sq(mode_values: dict, r: float) -> float:
    """Negative-order Sobolev norm of a finite mode vector.

    mode_values maps a frequency tuple m to its (cosine, sine) pair of field
    values; the caller enumerates one representative per +-m pair, with the
    zero frequency carrying the constant mode in the cosine slot. Each entry
    is damped by (1 + |m|^2)^(-r).
    """
    if r <= 0:
        raise ValueError(f"smoothing order must be positive, got {r}")
    total = 0.0
    for m, (cos_val, sin_val) in mode_values.items():
        gamma = 1.0 + float(sum(k * k for k in m))
        total += gamma ** (-r) * (cos_val**2 + sin_val**2)
    return total


@dataclass
class FieldTrace:
    """Sampled mode values of one replica along a time grid."""

    replica: int
    times: np.ndarray
    values: dict
    integrated: dict | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        for key, arr in self.values.items():
            if np.asarray(arr).shape != self.times.shape:
                raise ValueError(f"channel {key!r} does not match the time grid")


def integrated_field(trace: FieldTrace) -> FieldTrace:
    """Cumulative time integral of each field channel.

    Traces whose integrated channels were filled event-exactly by the
    simulator pass through untouched. Otherwise the piecewise-constant field
    is approximated by the trapezoid rule on the sample grid and the
    metadata records that downgrade.
    """
    if trace.integrated is not None and trace.metadata.get("integration") == "event_exact":
        return trace
    if trace.times[0] != 0.0:
        raise ValueError("grid integration needs the sample grid to start at time 0")
    integrated = {}
    dt = np.diff(trace.times)
    for key, arr in trace.values.items():
        arr = np.asarray(arr, dtype=float)
        steps = 0.5 * (arr[1:] + arr[:-1]) * dt
        integrated[key] = np.concatenate([[0.0], np.cumsum(steps)])
    metadata = dict(trace.metadata)
    metadata["integration"] = "trapezoid"
    return FieldTrace(trace.replica, trace.times, trace.values, integrated, metadata)


def write_trace_csv(traces, path) -> None:
    """Long-format dump: replica, t, mode_kind, m, value, integrated_value."""
    fields_ = ["replica", "t", "mode_kind", "m", "value", "integrated_value"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(fields_)
        for trace in traces:
            for key, arr in trace.values.items():
                kind, m = key
                m_text = ":".join(str(k) for k in m)
                integ = trace.integrated.get(key) if trace.integrated else None
                for i, t in enumerate(trace.times):
                    writer.writerow([
                        trace.replica,
                        repr(float(t)),
                        kind,
                        m_text,
                        repr(float(arr[i])),
                        repr(float(integ[i])) if integ is not None else "",
                    ])


def local_eval_on_sites(config: Configuration, f: CylinderFunction) -> np.ndarray:
    """(tau_x f)(eta) for every site x, as one vector."""
    torus = config.torus
    occ = config.occ.astype(float)
    out = np.zeros(torus.size)
    for sites, coeff in f.terms.items():
        prod = np.full(torus.size, coeff)
        for z in sites:
            prod = prod * occ[offset_table(torus, z)]
        out += prod
    return out


def cylinder_field(
    config: Configuration, f: CylinderFunction, G: TestFunction, params: FieldParams
) -> float:
    """Field built from a local function: (n^d a_n)^(-1/2) sum_x G(x/n) (tau_x f)(eta)."""
    torus = config.torus
    vals = G.values_on_grid(torus)
    local = local_eval_on_sites(config, f)
    return float(vals @ local) / math.sqrt(torus.size * params.a_n)


def _axis_shifted(torus: Torus, vals: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Grid values at x + step * e_axis, reusing the neighbor tables."""
    plus, minus = neighbor_tables(torus)
    table = plus[axis] if step > 0 else minus[axis]
    return vals[table]


def drift_eval_rate_sum(
    config: Configuration, F: TestFunction, params: FieldParams, rates: RateFamily
) -> float:
    """Generator applied to the field, summed transition by transition.

    Exclusion bonds contribute rate times the field increment of the swap;
    flips contribute their (1 - 2 eta_x) signed rate. No gradient structure
    is used anywhere.
    """
    torus = config.torus
    occ = config.occ.astype(float)
    vals = F.values_on_grid(torus)
    plus, _ = neighbor_tables(torus)
    norm = math.sqrt(torus.size * params.a_n)
    stir = 0.0
    for j in range(torus.d):
        c_vals = local_eval_on_sites(config, rates.c[j])
        stir += float(np.sum(c_vals * (occ - occ[plus[j]]) * (vals[plus[j]] - vals)))
    flip = 0.0
    for j in range(torus.d):
        for table in neighbor_tables(torus):
            diff_sq = (occ - occ[table[j]]) ** 2
            flip += float(np.sum(diff_sq * (1.0 - 2.0 * occ) * vals))
    return (torus.n**2 * stir + params.a_n * flip) / norm


def drift_eval_gradient_form(
    config: Configuration, F: TestFunction, params: FieldParams, grad: GradientData
) -> float:
    """Generator applied to the field via the summed-by-parts identity.

    The exclusion part pairs the centered gradient blocks against mixed
    second differences of F; the flip part pairs the centered configuration
    against the discrete Laplacian, scaled down by a_n / n^2.
    """
    torus = config.torus
    n = torus.n
    occ = config.occ.astype(float)
    rho = params.rho
    norm = math.sqrt(torus.size * params.a_n)
    total = 0.0
    laplacian = np.zeros(torus.size)
    vals = F.values_on_grid(torus)
    for j in range(torus.d):
        up_j = _axis_shifted(torus, vals, j, +1)
        for k in range(torus.d):
            h = grad.h[j][k]
            centered = local_eval_on_sites(config, h) - h.tilde(rho)
            mixed = n**2 * (
                up_j
                - vals
                - _axis_shifted(torus, up_j, k, -1)
                + _axis_shifted(torus, vals, k, -1)
            )
            total += float(centered @ mixed)
            if j == k:
                laplacian += mixed
    total += params.a_n / n**2 * float((occ - rho) @ laplacian)
    return total / norm


def as1_residual(
    config: Configuration,
    F: TestFunction,
    params: FieldParams,
    rates: RateFamily,
    grad: GradientData,
) -> float:
    """Absolute gap between the two independent drift evaluations."""
    a = drift_eval_rate_sum(config, F, params, rates)
    b = drift_eval_gradient_form(config, F, params, grad)
    return abs(a - b)


def gamma_n_eval(
    config: Configuration, F: TestFunction, params: FieldParams, rates: RateFamily
) -> float:
    """Quadratic variation density of the field under the combined dynamics.

    Exclusion bonds enter with squared discrete gradients of F weighted by
    the translated rate; flips enter with F^2 against squared occupation
    differences. The flip acceleration cancels against the field
    normalization, so only the exclusion block carries 1/a_n.
    """
    torus = config.torus
    occ = config.occ.astype(float)
    vals = F.values_on_grid(torus)
    plus, _ = neighbor_tables(torus)
    stir = 0.0
    for j in range(torus.d):
        c_vals = local_eval_on_sites(config, rates.c[j])
        grad_f = torus.n * (vals[plus[j]] - vals)
        stir += float(np.sum(c_vals * (occ[plus[j]] - occ) ** 2 * grad_f**2))
    flip = 0.0
    for j in range(torus.d):
        for table in neighbor_tables(torus):
            flip += float(np.sum(vals**2 * (occ[table[j]] - occ) ** 2))
    return stir / (params.a_n * torus.size) + flip / torus.size
