"""Reference laws for the limiting fluctuation field.

In the diffusive limit the density fluctuation field solves a linear SPDE:
an elliptic operator built from the rate family's gradient data drives the
drift, and the flip dynamics contributes additive space-time white noise.
On the torus every real Fourier mode decouples into a one-dimensional
Ornstein-Uhlenbeck process, so all covariances have closed forms. Those
closed forms are the Monte Carlo targets; the quadrature routines recompute
them independently so the harness never tests a formula against itself.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .cylinder import GradientData

_LEGENDRE_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


@dataclass(frozen=True)
class Mode:
    """One real Fourier mode: the constant, or sqrt(2) cos/sin(2 pi m.x)."""

    m: tuple[int, ...]
    flavor: str = "cos"

    def __post_init__(self):
        if self.flavor not in ("const", "cos", "sin"):
            raise ValueError(f"unknown mode flavor {self.flavor!r}")
        if self.flavor == "const" and any(self.m):
            raise ValueError("constant mode must carry the zero frequency")
        if self.flavor != "const" and not any(self.m):
            raise ValueError("oscillating modes need a nonzero frequency")

    @classmethod
    def constant(cls, d: int) -> "Mode":
        return cls((0,) * d, "const")


def _as_combo(F) -> dict[Mode, float]:
    if isinstance(F, Mode):
        return {F: 1.0}
    return {mode: float(c) for mode, c in dict(F).items() if c != 0.0}


def inner_product(F, G) -> float:
    """L2 pairing of two mode combinations (the basis is orthonormal)."""
    fc = _as_combo(F)
    gc = _as_combo(G)
    return sum(c * gc.get(mode, 0.0) for mode, c in fc.items())


@dataclass
class LimitModel:
    """Diffusion matrix, compressibility and noise strength of the limit SPDE."""

    d: int
    rho: float
    H_matrix: np.ndarray
    chi: float
    noise_intensity: float


def build_limit_model(grad: GradientData, rho: float, d: int | None = None) -> LimitModel:
    """Assemble the limit model from gradient data.

    The diffusion matrix is the symmetrized density-derivative of the
    gradient decomposition at rho; it must be positive definite, and the
    error names a direction where the quadratic form fails otherwise.
    """
    if d is None:
        d = grad.d
    if d != grad.d:
        raise ValueError(f"gradient data is {grad.d}-dimensional, asked for {d}")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"density must lie strictly between 0 and 1, got {rho}")
    raw = grad.tilde_prime_matrix(rho)
    H = 0.5 * (raw + raw.T)
    eigvals, eigvecs = np.linalg.eigh(H)
    if eigvals[0] <= 0.0:
        direction = eigvecs[:, 0]
        raise ValueError(
            f"diffusion matrix is not elliptic: direction {np.round(direction, 6).tolist()} "
            f"has quadratic form {eigvals[0]}"
        )
    chi = rho * (1.0 - rho)
    return LimitModel(d, rho, H, chi, 4.0 * d * chi)


def _freq(m) -> np.ndarray:
    if isinstance(m, Mode):
        m = m.m
    arr = np.atleast_1d(np.asarray(m, dtype=float))
    return arr


def lambda_m(model: LimitModel, m) -> float:
    """Mode relaxation rate 4 pi^2 m^T H m; zero only for the constant mode."""
    freq = _freq(m)
    if freq.shape != (model.d,):
        raise ValueError(f"frequency {m!r} does not match dimension {model.d}")
    return float(4.0 * math.pi**2 * freq @ model.H_matrix @ freq)


def semigroup_apply(model: LimitModel, t: float, m) -> float:
    """Heat-semigroup multiplier e^(-lambda(m) t) of one mode."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    return math.exp(-lambda_m(model, m) * t)


def stationary_variance(model: LimitModel, m) -> float:
    """Long-time variance of one mode: noise / (2 lambda); infinite at m=0."""
    lam = lambda_m(model, m)
    if lam == 0.0:
        return math.inf
    return model.noise_intensity / (2.0 * lam)


def ou_exact_step(x: float, m, dt: float, model: LimitModel, rng) -> float:
    """Sample the exact mode transition over a step of length dt.

    Mean decays by the semigroup multiplier; the innovation variance is
    noise (1 - e^(-2 lambda dt)) / (2 lambda), degenerating to noise * dt
    for the constant mode.
    """
    if dt <= 0:
        raise ValueError(f"step must be positive, got {dt}")
    lam = lambda_m(model, m)
    decay = math.exp(-lam * dt)
    if lam == 0.0:
        var = model.noise_intensity * dt
    else:
        var = model.noise_intensity * (1.0 - decay * decay) / (2.0 * lam)
    return decay * x + math.sqrt(var) * rng.standard_normal()


def _mode_cov(noise: float, lam: float, u, v):
    """Two-time covariance of a mode started from zero, vectorized."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    lo = np.minimum(u, v)
    if lam == 0.0:
        return noise * lo
    gap = np.abs(u - v)
    return noise * np.exp(-lam * gap) * (1.0 - np.exp(-2.0 * lam * lo)) / (2.0 * lam)


def cov_limit(model: LimitModel, t1: float, t2: float, F, G) -> float:
    """Covariance of the limit field at two times against two test combos.

    The field starts from zero, so this is the noise integral
    noise * int_0^t1 <P_(t1-s) F, P_(t2-s) G> ds, summed mode by mode in
    closed form.
    """
    if t1 > t2:
        raise ValueError(f"need t1 <= t2, got {t1} > {t2}")
    if t1 < 0:
        raise ValueError(f"times must be nonnegative, got {t1}")
    fc = _as_combo(F)
    gc = _as_combo(G)
    total = 0.0
    for mode, coeff in fc.items():
        other = gc.get(mode, 0.0)
        if other == 0.0:
            continue
        lam = lambda_m(model, mode)
        total += coeff * other * float(_mode_cov(model.noise_intensity, lam, t1, t2))
    return total


def martingale_cov(model: LimitModel, s: float, t: float, F, G) -> float:
    """Covariance of the limiting dynamical martingale: noise * (s^t) <F,G>."""
    return model.noise_intensity * min(s, t) * inner_product(F, G)


def _gauss_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _LEGENDRE_CACHE:
        _LEGENDRE_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _LEGENDRE_CACHE[n]


def _quad(f, a: float, b: float, lam: float, nodes: int = 32) -> float:
    """Panelled Gauss-Legendre; panel count tracks the decay rate lam."""
    if b <= a:
        return 0.0
    panels = max(2, min(64, math.ceil((b - a) * max(lam, 1.0) / 6.0)))
    xs, ws = _gauss_nodes(nodes)
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        total += half * float(np.sum(ws * f(mid + half * xs)))
    return total


def _double_quad_cov(noise: float, lam: float, t: float, s: float) -> float:
    """int_0^t int_0^s cov(u,v) dv du with both integrals split at the kink."""

    def inner(u_arr):
        out = np.empty_like(u_arr)
        for i, u in enumerate(u_arr):
            cut = min(max(u, 0.0), s)
            out[i] = _quad(lambda v: _mode_cov(noise, lam, u, v), 0.0, cut, lam) + _quad(
                lambda v: _mode_cov(noise, lam, u, v), cut, s, lam
            )
        return out

    cut = min(s, t)
    return _quad(inner, 0.0, cut, lam) + _quad(inner, cut, t, lam)


def mc_cov_check(model: LimitModel, s: float, t: float, F, G) -> float:
    """Residual of the martingale-covariance cancellation, by quadrature.

    Writing the dynamical martingale as field minus drift integral, its
    covariance expands into the two-time covariance plus three correction
    integrals; everything but noise * (s^t) <F,G> must cancel. All integrals
    here are numeric, so the closed forms are being tested, not reused.
    """
    fc = _as_combo(F)
    gc = _as_combo(G)
    total = 0.0
    overlap = 0.0
    for mode, coeff in fc.items():
        weight = coeff * gc.get(mode, 0.0)
        if weight == 0.0:
            continue
        overlap += weight
        lam = lambda_m(model, mode)
        noise = model.noise_intensity
        c_ts = float(_mode_cov(noise, lam, t, s))
        cut_t = min(s, t)
        i_t = _quad(lambda u: _mode_cov(noise, lam, u, s), 0.0, cut_t, lam) + _quad(
            lambda u: _mode_cov(noise, lam, u, s), cut_t, t, lam
        )
        cut_s = min(t, s)
        i_s = _quad(lambda v: _mode_cov(noise, lam, t, v), 0.0, cut_s, lam) + _quad(
            lambda v: _mode_cov(noise, lam, t, v), cut_s, s, lam
        )
        i_ts = _double_quad_cov(noise, lam, t, s)
        total += weight * (c_ts + lam * i_t + lam * i_s + lam * lam * i_ts)
    target = model.noise_intensity * min(s, t) * overlap
    return abs(total - target)


def integrated_cov(model: LimitModel, t: float, s: float, F, G) -> float:
    """Covariance of the time-integrated field over [0,t] and [0,s].

    Closed form per mode, obtained by integrating the noise response
    g(r) = (1 - e^(-lambda r)) / lambda against itself.
    """
    if t < 0 or s < 0:
        raise ValueError("integration horizons must be nonnegative")
    fc = _as_combo(F)
    gc = _as_combo(G)
    total = 0.0
    for mode, coeff in fc.items():
        weight = coeff * gc.get(mode, 0.0)
        if weight == 0.0:
            continue
        lam = lambda_m(model, mode)
        noise = model.noise_intensity
        lo, hi = min(t, s), max(t, s)
        if lam == 0.0:
            # int_0^lo (hi - w)(lo - w) dw, expanded
            piece = hi * lo * lo - (hi + lo) * lo * lo / 2.0 + lo**3 / 3.0
        else:
            e_gap = math.exp(-lam * (hi - lo))
            e_hi = math.exp(-lam * hi)
            e_lo = math.exp(-lam * lo)
            e_sum = math.exp(-lam * (hi + lo))
            piece = (
                lo
                - (e_gap - e_hi) / lam
                - (1.0 - e_lo) / lam
                + (e_gap - e_sum) / (2.0 * lam)
            ) / (lam * lam)
        total += weight * noise * piece
    return total


def integrated_cov_quadrature(model: LimitModel, t: float, s: float, F, G) -> float:
    """Same quantity by double quadrature of the two-time covariance."""
    fc = _as_combo(F)
    gc = _as_combo(G)
    total = 0.0
    for mode, coeff in fc.items():
        weight = coeff * gc.get(mode, 0.0)
        if weight == 0.0:
            continue
        lam = lambda_m(model, mode)
        total += weight * _double_quad_cov(model.noise_intensity, lam, t, s)
    return total


def target_rows(model: LimitModel, modes, times) -> list[dict]:
    """Per-mode prediction table the sampling harness joins against."""
    rows = []
    for mode in modes:
        lam = lambda_m(model, mode)
        for t in times:
            rows.append(
                {
                    "flavor": mode.flavor,
                    "m": ":".join(str(k) for k in mode.m),
                    "t": t,
                    "lambda": lam,
                    "variance": cov_limit(model, t, t, mode, mode),
                    "stationary_variance": stationary_variance(model, mode),
                }
            )
    return rows


def write_target_table(rows: list[dict], path) -> None:
    fields = ["flavor", "m", "t", "lambda", "variance", "stationary_variance"]
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})
