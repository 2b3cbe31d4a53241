"""Ensemble orchestration and statistical verdicts.

Sampling experiments run replica-parallel trajectories through the event
kernel, reduce them in replica order with plain sums, and join the empirical
moments against closed-form targets from the limit module. Every experiment
can emit a CSV table plus a JSON verdict of the shape
``{"experiment": ..., "pass": ..., "details": ...}``.

Acceptance bands are z-scores at three standard errors: the limit theorems
provide Gaussian targets but no finite-n rates, so standard errors are the
only honest desk-scale criterion. Known finite-size biases (the initial
field variance, the mode-gradient part of the quadratic variation) are
reported, never absorbed into the bands.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exact, kmc
from .cylinder import CylinderFunction, RateFamily, pi_two_plus
from .fields import TestFunction
from .lattice import Torus, offset_table
from .limit import LimitModel, Mode, cov_limit

REPORT_COLUMNS = (
    "statistic",
    "observable",
    "t1",
    "t2",
    "estimate",
    "se",
    "target",
    "z",
    "rel_err",
    "passed",
    "degenerate",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class StatReport:
    """Joined empirical/target table for one experiment."""

    experiment: str
    replicas: int
    seed: int
    rows: list[dict]
    degenerate: bool
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.degenerate:
            return False
        return all(r["passed"] for r in self.rows if r.get("passed") is not None)

    def csv_bytes(self) -> bytes:
        lines = [",".join(REPORT_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt(row.get(col)) for col in REPORT_COLUMNS))
        return ("\n".join(lines) + "\n").encode()

    def to_csv(self, path) -> None:
        with open(path, "wb") as handle:
            handle.write(self.csv_bytes())

    def verdict(self) -> dict:
        details = {
            "replicas": self.replicas,
            "seed": self.seed,
            "degenerate": self.degenerate,
            "failed_rows": [
                {k: row.get(k) for k in ("statistic", "observable", "t1", "t2", "z")}
                for row in self.rows
                if row.get("passed") is False
            ],
        }
        details.update(self.metadata)
        return {"experiment": self.experiment, "pass": self.passed, "details": details}


def write_verdict(path, verdict: dict) -> None:
    with open(path, "w") as handle:
        json.dump(verdict, handle, indent=2, sort_keys=True, default=str)
        handle.write("\n")


# ---------------------------------------------------------------------------
# ensemble plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSpec:
    """One sampling campaign: chain parameters plus the observation plan.

    ``replica_indices`` overrides the default ``range(replicas)``; passing a
    repeated index makes two replicas share a stream, which the reduction
    flags as degenerate rather than hiding behind a zero standard error.
    """

    params: kmc.SimParams
    replicas: int
    modes: tuple[TestFunction, ...]
    sample_times: tuple[float, ...]
    seed: int
    start: object = "bernoulli"
    integrals: bool = False
    cylinder: tuple[CylinderFunction, TestFunction] | None = None
    replica_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.replicas < 2:
            raise ValueError(f"need at least 2 replicas for variances, got {self.replicas}")
        if not self.modes and self.cylinder is None:
            raise ValueError("nothing to observe")
        if self.replica_indices is not None and len(self.replica_indices) != self.replicas:
            raise ValueError("replica_indices must list one stream per replica")

    def indices(self) -> tuple[int, ...]:
        if self.replica_indices is not None:
            return self.replica_indices
        return tuple(range(self.replicas))


def _run_one_replica(task):
    params, seed, replica, start, grid, modes, integrals, cylinder = task
    state = kmc.init(params, seed, replica=replica, start=start)
    observers = []
    if modes:
        observers.append(kmc.FieldObserver(grid, modes, integrals=integrals))
    if cylinder is not None:
        observers.append(kmc.CylinderObserver(grid, cylinder[0], cylinder[1]))
    log = kmc.run_until(state, grid[-1], observers)
    out = {"absorbed": log.absorbed}
    pos = 0
    if modes:
        obs = log.observations[pos]
        pos += 1
        out["field"] = np.asarray(obs["field"], dtype=float)
        if integrals:
            out["integrated"] = np.asarray(obs["integrated"], dtype=float)
            out["drift"] = np.asarray(obs["drift_integral"], dtype=float)
            out["gamma"] = np.asarray(obs["gamma_integral"], dtype=float)
    if cylinder is not None:
        cyl = log.observations[pos]
        out["cyl_value"] = np.asarray(cyl["value"], dtype=float)
        out["cyl_integrated"] = np.asarray(cyl["integrated"], dtype=float)
    return out


def _map_replicas(tasks, workers: int) -> list[dict]:
    """Run every task, keeping results in task order; report failures by index."""
    results: list[dict | None] = [None] * len(tasks)
    failures: list[str] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, outcome in enumerate(pool.map(_run_one_replica_safe, tasks)):
                if isinstance(outcome, _ReplicaFailure):
                    failures.append(f"replica {tasks[i][2]}: {outcome.message}")
                else:
                    results[i] = outcome
    else:
        for i, task in enumerate(tasks):
            try:
                results[i] = _run_one_replica(task)
            except Exception as exc:  # noqa: BLE001 - reported per index below
                failures.append(f"replica {task[2]}: {exc}")
    if failures:
        raise RuntimeError("ensemble replicas failed -- " + "; ".join(failures))
    return results  # type: ignore[return-value]


class _ReplicaFailure:
    def __init__(self, message: str):
        self.message = message


def _run_one_replica_safe(task):
    try:
        return _run_one_replica(task)
    except Exception as exc:  # noqa: BLE001 - carried back to the parent
        return _ReplicaFailure(str(exc))


def collect_replicas(spec: EnsembleSpec, workers: int = 1) -> dict:
    """Run the ensemble and return raw stacked arrays instead of a report.

    Keys: ``field`` of shape (replicas, modes, times); with integrals also
    ``integrated``, ``drift`` and ``gamma`` of the same shape; with a
    cylinder observable ``cyl_value`` and ``cyl_integrated`` of shape
    (replicas, times); and ``absorbed``, the per-replica flags. Several
    statistics can then be formed from one set of trajectories.
    """
    grid = tuple(float(t) for t in spec.sample_times)
    tasks = [
        (spec.params, spec.seed, r, spec.start, grid, spec.modes, spec.integrals, spec.cylinder)
        for r in spec.indices()
    ]
    results = _map_replicas(tasks, workers)
    out: dict = {"absorbed": [res["absorbed"] for res in results]}
    keys = ["field", "integrated", "drift", "gamma"] if spec.integrals else ["field"]
    if not spec.modes:
        keys = []
    for key in keys:
        out[key] = np.stack([res[key] for res in results])
    if spec.cylinder is not None:
        out["cyl_value"] = np.stack([res["cyl_value"] for res in results])
        out["cyl_integrated"] = np.stack([res["cyl_integrated"] for res in results])
    return out


def mode_key(F: TestFunction) -> str:
    return f"{F.kind}:" + ":".join(str(k) for k in (F.m if F.m is not None else ()))


def _mode_of(F: TestFunction) -> Mode | None:
    if F.kind == "fourier_cos" and not any(F.m):
        return Mode.constant(F.d)
    if F.kind == "fourier_cos":
        return Mode(F.m, "cos")
    if F.kind == "fourier_sin":
        return Mode(F.m, "sin")
    return None


def limit_targets(
    model: LimitModel, modes: Sequence[TestFunction], times: Sequence[float]
) -> dict:
    """Closed-form mean/variance/covariance targets for a zero-start field."""
    targets: dict = {}
    for F in modes:
        mode = _mode_of(F)
        if mode is None:
            continue
        key = mode_key(F)
        for i, t1 in enumerate(times):
            targets[("mean", key, (t1, t1))] = 0.0
            targets[("variance", key, (t1, t1))] = cov_limit(model, t1, t1, mode, mode)
            for t2 in times[i + 1 :]:
                targets[("covariance", key, (t1, t2))] = cov_limit(model, t1, t2, mode, mode)
    return targets


def initial_variance_target(params: kmc.SimParams, F: TestFunction) -> float:
    """Variance of the field at time zero under the product start.

    Independent site occupations make this an i.i.d. sum: chi(rho) times the
    grid norm of the test function, divided by the flip normalization.
    """
    vals = F.values_on_grid(params.torus)
    norm = float(vals @ vals) / params.torus.size
    chi = params.rho * (1.0 - params.rho)
    return chi * norm / params.field_params().a_n


def _se_mean(samples: np.ndarray) -> float:
    return float(samples.std(ddof=1) / math.sqrt(len(samples)))


def _variance_row(samples: np.ndarray) -> tuple[float, float]:
    """Sample variance and a moment-based standard error for it."""
    r = len(samples)
    s2 = float(samples.var(ddof=1))
    centered = samples - samples.mean()
    m4 = float(np.mean(centered**4))
    var_of_var = (m4 - (r - 3) / (r - 1) * s2 * s2) / r
    return s2, math.sqrt(max(var_of_var, 0.0))


def _cov_row(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    r = len(x)
    c = float(np.cov(x, y, ddof=1)[0, 1])
    se = math.sqrt(max(float(x.var(ddof=1) * y.var(ddof=1)) + c * c, 0.0) / (r - 1))
    return c, se


def _finish_row(row: dict, target, se: float) -> dict:
    row["target"] = target
    if target is None:
        row["z"] = None
        row["passed"] = None
    elif se == 0.0:
        row["z"] = None
        row["passed"] = None
        row["degenerate"] = True
    else:
        z = (row["estimate"] - target) / se
        row["z"] = z
        row["passed"] = abs(z) <= 3.0
    if target is not None and target != 0.0:
        row["rel_err"] = abs(row["estimate"] - target) / abs(target)
    return row


def run_ensemble(
    spec: EnsembleSpec,
    model: LimitModel | None = None,
    targets: dict | None = None,
    workers: int = 1,
) -> StatReport:
    """Estimate field moments over replicas and join them against targets.

    Targets come from ``limit_targets(model, ...)`` when a limit model is
    passed; an explicit ``targets`` dict (same key shape) takes precedence
    row by row. Rows without a target are informational: estimate and
    standard error only.
    """
    joined: dict = {}
    if model is not None:
        joined.update(limit_targets(model, spec.modes, spec.sample_times))
    if targets:
        joined.update(targets)

    grid = tuple(float(t) for t in spec.sample_times)
    collected = collect_replicas(spec, workers=workers)

    rows: list[dict] = []
    degenerate = False
    if spec.modes:
        stack = collected["field"]  # (R, modes, times)
        for i, F in enumerate(spec.modes):
            key = mode_key(F)
            for k, t in enumerate(grid):
                samples = stack[:, i, k]
                se = _se_mean(samples)
                rows.append(
                    _finish_row(
                        {
                            "statistic": "mean",
                            "observable": key,
                            "t1": t,
                            "t2": t,
                            "estimate": float(samples.mean()),
                            "se": se,
                        },
                        joined.get(("mean", key, (t, t))),
                        se,
                    )
                )
                s2, se_v = _variance_row(samples)
                row = _finish_row(
                    {
                        "statistic": "variance",
                        "observable": key,
                        "t1": t,
                        "t2": t,
                        "estimate": s2,
                        "se": se_v,
                    },
                    joined.get(("variance", key, (t, t))),
                    se_v,
                )
                if s2 == 0.0:
                    row["degenerate"] = True
                    degenerate = True
                rows.append(row)
            for k, t1 in enumerate(grid):
                for l in range(k + 1, len(grid)):
                    t2 = grid[l]
                    c, se_c = _cov_row(stack[:, i, k], stack[:, i, l])
                    rows.append(
                        _finish_row(
                            {
                                "statistic": "covariance",
                                "observable": key,
                                "t1": t1,
                                "t2": t2,
                                "estimate": c,
                                "se": se_c,
                            },
                            joined.get(("covariance", key, (t1, t2))),
                            se_c,
                        )
                    )
    if spec.cylinder is not None:
        stack_w = collected["cyl_value"]
        for k, t in enumerate(grid):
            samples = stack_w[:, k]
            se = _se_mean(samples)
            rows.append(
                _finish_row(
                    {
                        "statistic": "cylinder_mean",
                        "observable": "cylinder",
                        "t1": t,
                        "t2": t,
                        "estimate": float(samples.mean()),
                        "se": se,
                    },
                    joined.get(("cylinder_mean", "cylinder", (t, t))),
                    se,
                )
            )

    absorbed = sum(1 for flag in collected["absorbed"] if flag)
    params = spec.params
    return StatReport(
        experiment="ensemble",
        replicas=spec.replicas,
        seed=spec.seed,
        rows=rows,
        degenerate=degenerate,
        metadata={
            "n": params.torus.n,
            "d": params.torus.d,
            "rho": params.rho,
            "a_n": params.a_n,
            "engine": params.resolved_engine(),
            "sample_times": list(grid),
            "absorbed_replicas": absorbed,
        },
    )


# ---------------------------------------------------------------------------
# projected-cylinder decay sweep
# ---------------------------------------------------------------------------


def bg_experiment(
    f: CylinderFunction,
    G: TestFunction,
    sweep: Sequence[kmc.SimParams],
    T: float,
    replicas: int,
    seed: int,
    workers: int = 1,
) -> StatReport:
    """Mean absolute integrated remainder field of f across lattice sizes.

    f is centered through the two-point-and-higher projection at each chain's
    density first, so only the part orthogonal to the density field is
    integrated. The verdict is a monotone trend in n -- the limit statement
    gives no usable finite-n rate, and that restriction is recorded in the
    metadata.
    """
    if T < 0:
        raise ValueError(f"horizon must be nonnegative, got {T}")
    rows: list[dict] = []
    means = []
    for params in sweep:
        centered = pi_two_plus(f, params.rho)
        grid = (T,) if T > 0 else (0.0,)
        tasks = [
            (params, seed, r, "bernoulli", grid, (), False, (centered, G))
            for r in range(replicas)
        ]
        results = _map_replicas(tasks, workers)
        finals = np.array([res["cyl_integrated"][-1] for res in results])
        if T == 0.0 and np.any(finals != 0.0):
            raise AssertionError("zero-horizon integral must vanish identically")
        samples = np.abs(finals)
        est = float(samples.mean())
        means.append(est)
        rows.append(
            {
                "statistic": "bg_mean_abs",
                "observable": f"n={params.torus.n}",
                "t1": T,
                "t2": T,
                "estimate": est,
                "se": _se_mean(samples) if replicas > 1 else 0.0,
                "target": None,
                "z": None,
                "passed": None,
            }
        )
    trivial = all(m <= 1e-14 for m in means)
    decreasing = all(means[i + 1] < means[i] for i in range(len(means) - 1))
    passed = trivial or decreasing
    for row in rows:
        row["passed"] = passed
    return StatReport(
        experiment="bg-decay",
        replicas=replicas,
        seed=seed,
        rows=rows,
        degenerate=False,
        metadata={
            "criterion": "monotone-trend-only",
            "horizon": T,
            "sizes": [p.torus.n for p in sweep],
            "means": means,
            "identically_zero": trivial,
        },
    )


# ---------------------------------------------------------------------------
# martingale decomposition
# ---------------------------------------------------------------------------


def martingale_check(
    params: kmc.SimParams,
    F: TestFunction,
    T: float,
    replicas: int,
    seed: int,
    sample_times: Sequence[float] | None = None,
    workers: int = 1,
) -> StatReport:
    """Decompose the field into martingale plus event-exact drift integral.

    For each sample time t: checks E[M_t] = 0 against its standard error,
    checks E[M_t^2] against the empirical quadratic-variation integral as a
    paired difference, and reports E[M_t^2] against the closed-form noise
    level 4 d chi(rho) t |F|^2 (a limit target: the mode-gradient part of the
    quadratic variation adds a positive finite-n bias that decays like 1/a_n,
    so only gradient-free test functions meet it at simulable sizes).
    """
    if T < 0:
        raise ValueError(f"horizon must be nonnegative, got {T}")
    if sample_times is None:
        grid = (0.0,) if T == 0.0 else (0.0, 0.5 * T, T)
    else:
        grid = tuple(float(t) for t in sample_times)
        if grid[0] != 0.0:
            grid = (0.0,) + grid
        if grid[-1] != T:
            raise ValueError("sample grid must end at the horizon")
    tasks = [
        (params, seed, r, "bernoulli", grid, (F,), True, None) for r in range(replicas)
    ]
    results = _map_replicas(tasks, workers)
    x = np.stack([res["field"][0] for res in results])  # (R, K)
    drift = np.stack([res["drift"][0] for res in results])
    gamma = np.stack([res["gamma"][0] for res in results])
    mart = x - x[:, :1] - drift

    vals = F.values_on_grid(params.torus)
    norm = float(vals @ vals) / params.torus.size
    chi = params.rho * (1.0 - params.rho)
    noise = 4.0 * params.torus.d * chi

    rows: list[dict] = []
    if np.any(mart[:, 0] != 0.0):
        raise AssertionError("martingale must start at zero")
    for k, t in enumerate(grid):
        if k == 0:
            continue
        m_t = mart[:, k]
        se = _se_mean(m_t)
        rows.append(
            _finish_row(
                {
                    "statistic": "martingale_mean",
                    "observable": mode_key(F),
                    "t1": t,
                    "t2": t,
                    "estimate": float(m_t.mean()),
                    "se": se,
                },
                0.0,
                se,
            )
        )
        diff = m_t**2 - gamma[:, k]
        se_d = _se_mean(diff)
        rows.append(
            _finish_row(
                {
                    "statistic": "m2_minus_gamma",
                    "observable": mode_key(F),
                    "t1": t,
                    "t2": t,
                    "estimate": float(diff.mean()),
                    "se": se_d,
                },
                0.0,
                se_d,
            )
        )
        m2 = m_t**2
        row = {
            "statistic": "m2_vs_noise",
            "observable": mode_key(F),
            "t1": t,
            "t2": t,
            "estimate": float(m2.mean()),
            "se": _se_mean(m2),
            "target": noise * t * norm,
            "z": None,
            "passed": None,
        }
        row["rel_err"] = (
            abs(row["estimate"] - row["target"]) / row["target"] if row["target"] else None
        )
        rows.append(row)

    return StatReport(
        experiment="martingale",
        replicas=replicas,
        seed=seed,
        rows=rows,
        degenerate=False,
        metadata={
            "n": params.torus.n,
            "d": params.torus.d,
            "rho": params.rho,
            "a_n": params.a_n,
            "horizon": T,
            "grid_norm_sq": norm,
            "noise_intensity": noise,
        },
    )


# ---------------------------------------------------------------------------
# entropy growth (exact distributions)
# ---------------------------------------------------------------------------


def entropy_growth_experiment(
    sizes: Sequence[int],
    d: int,
    rho: float,
    a_n: float,
    rates: RateFamily,
    times: Sequence[float],
    start_density: float | None = None,
) -> dict:
    """Fit the entropy-production constant across small exact systems.

    For each n the full distribution is evolved and the best constant in
    H' <= C0 a_n (H + R_d(n)) is fitted; the verdict requires no bound
    violations and, with at least two sizes, stability of the fitted
    constant within a factor of two. Flip-free dynamics make the bound
    vacuous (H is constant, the fitted constant is zero): degenerate.
    """
    rows = []
    fitted = []
    for n in sizes:
        torus = Torus(d, n)
        if start_density is None or start_density == rho:
            mu0 = exact.product_measure(torus, rho)
        else:
            tilted = exact.product_measure(torus, start_density)
            mu0 = exact.DistributionVector(torus, tilted.probs, rho)
        report = exact.entropy_production_report(mu0, rates, a_n, times)
        h0 = report.rows[0]["H"]
        envelope_ok = all(
            row["H"] <= (h0 + report.rate_scale) * math.exp(report.fitted_c0 * a_n * row["t"])
            - report.rate_scale
            + 1e-9
            for row in report.rows
        )
        rows.append(
            {
                "n": n,
                "d": d,
                "a_n": a_n,
                "H0": h0,
                "fitted_c0": report.fitted_c0,
                "rate_scale": report.rate_scale,
                "violations": report.violations,
                "envelope_ok": envelope_ok,
            }
        )
        fitted.append(report.fitted_c0)
    degenerate = a_n == 0.0
    details: dict = {"sizes": list(sizes), "fitted_c0": fitted, "degenerate": degenerate}
    if degenerate:
        passed = all(r["violations"] == 0 for r in rows)
        details["reason"] = "no flips: entropy is conserved and the bound is vacuous"
    else:
        positive = [c for c in fitted if c > 0.0]
        stable = (
            len(positive) < 2 or max(positive) / min(positive) <= 2.0
        )
        details["stable_within_2x"] = stable
        passed = (
            all(r["violations"] == 0 and r["envelope_ok"] for r in rows)
            and all(math.isfinite(c) for c in fitted)
            and stable
        )
    return {"experiment": "entropy-growth", "pass": passed, "rows": rows, "details": details}


def write_rows_csv(path, fieldnames: Sequence[str], rows: Sequence[dict]) -> None:
    lines = [",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(name)) for name in fieldnames))
    with open(path, "wb") as handle:
        handle.write(("\n".join(lines) + "\n").encode())


# ---------------------------------------------------------------------------
# static exponential-moment probe
# ---------------------------------------------------------------------------


def _cylinder_values_matrix(occ: np.ndarray, torus: Torus, f: CylinderFunction) -> np.ndarray:
    """Evaluate every translate of f on a batch of configurations.

    Returns a (samples, sites) array whose [s, x] entry is f shifted by x,
    read off configuration s; used for sampling static functionals without
    a per-site python loop.
    """
    out = np.zeros(occ.shape, dtype=float)
    for sites, coeff in f.terms.items():
        term = np.full(occ.shape, coeff)
        for site in sites:
            term = term * occ[:, offset_table(torus, site)]
        out += term
    return out


def subgaussian_moment_check(
    f: CylinderFunction,
    F: TestFunction,
    torus: Torus,
    rho: float,
    a_grid: Sequence[float] | None = None,
    samples: int = 20000,
    seed: int = 0,
) -> dict:
    """Probe the exponential square moment of the static fluctuation sum.

    Draws product-measure configurations, forms
    Z = n^(-d/2) sum_x F(x/n) (tau_x f - tilde f)(eta), and tabulates
    log E[exp(a Z^2)] over the a-grid. Rows that overflow are flagged as
    diverged, not errors. The verdict checks that every a at or below half
    the divergence threshold has a finite log-moment with slope bounded by
    twice the small-a slope estimate (the quadratic regime).
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"density must sit strictly inside (0, 1), got {rho}")
    rng = np.random.default_rng(seed)
    occ = (rng.random((samples, torus.size)) < rho).astype(np.uint8)
    fvals = _cylinder_values_matrix(occ, torus, f)
    weights = F.values_on_grid(torus)
    z = (fvals - f.tilde(rho)) @ weights / math.sqrt(torus.size)
    z2 = z * z

    if a_grid is None:
        var = float(z2.mean())
        top = 0.45 / var if var > 0 else 1.0
        a_grid = tuple(top * k / 8.0 for k in range(1, 9))

    rows = []
    threshold = None
    for a in a_grid:
        expo = a * z2
        if expo.max() > 700.0:
            rows.append({"a": a, "log_moment": None, "slope": None, "diverged": True})
            if threshold is None:
                threshold = a
            continue
        moment = float(np.exp(expo).mean())
        if not math.isfinite(moment):
            rows.append({"a": a, "log_moment": None, "slope": None, "diverged": True})
            if threshold is None:
                threshold = a
            continue
        lm = math.log(moment)
        rows.append({"a": a, "log_moment": lm, "slope": lm / a if a > 0 else None,
                     "diverged": False})
    if threshold is None:
        threshold = max(a_grid)

    finite = [r for r in rows if not r["diverged"]]
    small_a_slope = finite[0]["slope"] if finite else None
    safe = [r for r in rows if r["a"] <= 0.5 * threshold]
    bounded = bool(safe) and all(not r["diverged"] for r in safe)
    if bounded and small_a_slope is not None and small_a_slope > 0:
        bounded = all(r["slope"] <= 2.0 * small_a_slope + 1e-12 for r in safe)
    passed = bounded and small_a_slope is not None
    if small_a_slope == 0.0 and all(r["log_moment"] == 0.0 for r in finite):
        passed = True  # deterministic functional: the moment is identically one
    return {
        "experiment": "subgaussian",
        "pass": passed,
        "rows": rows,
        "details": {
            "samples": samples,
            "seed": seed,
            "empirical_second_moment": float(z2.mean()),
            "small_a_slope": small_a_slope,
            "divergence_threshold": threshold,
        },
    }
