"""Command-line entry point: config parsing, experiment registry, output layout.

Every experiment run creates ``<outdir>/<experiment>/<timestamp>/`` holding
``resolved_config.json``, the CSV tables, and ``verdict.json``. Configs are
JSON documents (nested key-value); any key the registry does not know is
rejected before anything runs. ``--set a.b.c=value`` overrides single keys.

Exit codes: 0 all verdicts pass, 1 an experiment ran and failed, 2 the
configuration or invocation was unusable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import exact, kmc
from .cylinder import (
    CylinderFunction,
    GradientData,
    RateFamily,
    example_speed_change_gradient,
    gradient_check,
    pi_one,
    pi_rho,
    pi_two_plus,
)
from .experiments import (
    EnsembleSpec,
    _fmt,
    bg_experiment,
    entropy_growth_experiment,
    run_ensemble,
    write_verdict,
)
from .fields import (
    FieldParams,
    TestFunction,
    as1_residual,
    drift_eval_rate_sum,
    field_eval,
    gamma_n_eval,
)
from .flows import build_flow, scaling_table, verify_flow
from .lattice import Configuration, Torus, config_from_int
from .limit import Mode, build_limit_model, cov_limit, lambda_m, stationary_variance


class ConfigError(Exception):
    """Anything that makes the invocation unusable before work starts."""


# ---------------------------------------------------------------------------
# configuration document
# ---------------------------------------------------------------------------

_TOP_KEYS = {"experiment", "parameters", "outdir", "seed", "workers"}

_PARAM_KEYS = {
    "simulate": {
        "n", "d", "rho", "a_n", "rates", "effective_rates", "engine", "replicas",
        "modes", "sample_times", "start", "integrals", "join_targets", "resync_every",
    },
    "bg": {"sizes", "d", "rho", "a_n", "rates", "f_sites", "mode", "horizon", "replicas"},
    "entropy": {"sizes", "d", "rho", "a_n", "rates", "start_density", "times"},
}


class ExperimentConfig:
    """Validated configuration document plus the resolved defaults."""

    def __init__(self, doc: dict, source: str = "<inline>"):
        unknown = set(doc) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"{source}: unknown top-level keys {sorted(unknown)}")
        try:
            self.experiment = doc["experiment"]
        except KeyError:
            raise ConfigError(f"{source}: missing required key 'experiment'") from None
        if self.experiment not in _PARAM_KEYS:
            raise ConfigError(
                f"{source}: unknown experiment {self.experiment!r}; "
                f"expected one of {sorted(_PARAM_KEYS)}"
            )
        self.parameters = dict(doc.get("parameters", {}))
        unknown = set(self.parameters) - _PARAM_KEYS[self.experiment]
        if unknown:
            raise ConfigError(
                f"{source}: unknown parameters {sorted(unknown)} for {self.experiment}"
            )
        self.outdir = str(doc.get("outdir", "runs"))
        self.seed = int(doc.get("seed", 0))
        self.workers = doc.get("workers")
        if self.workers is None:
            self.workers = os.cpu_count() or 1
        self.workers = int(self.workers)
        if self.workers < 1:
            raise ConfigError(f"{source}: workers must be >= 1")

    @classmethod
    def from_file(cls, path: str, overrides: list[str] | None = None) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path!r} does not exist")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for item in overrides or []:
            _apply_override(doc, item)
        return cls(doc, source=path)

    def resolved(self) -> dict:
        return {
            "experiment": self.experiment,
            "parameters": self.parameters,
            "outdir": self.outdir,
            "seed": self.seed,
            "workers": self.workers,
        }


def _apply_override(doc: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r} descends into a non-object")
    node[parts[-1]] = value


def _run_dir(cfg_outdir: str, experiment: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    path = Path(cfg_outdir) / experiment / stamp
    path.mkdir(parents=True, exist_ok=False)
    return path


def _emit(run_dir: Path, config: ExperimentConfig, verdict: dict,
          tables: dict[str, bytes]) -> None:
    with open(run_dir / "resolved_config.json", "w") as handle:
        json.dump(config.resolved(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    for name, payload in tables.items():
        (run_dir / name).write_bytes(payload)
    write_verdict(run_dir / "verdict.json", verdict)


# ---------------------------------------------------------------------------
# shared parameter builders
# ---------------------------------------------------------------------------


def _rates_for(name: str, d: int):
    if name == "ssep":
        return RateFamily.ssep(d), GradientData.ssep(d)
    if name == "additive":
        if d != 1:
            raise ConfigError("the shipped speed-change family is one-dimensional")
        return example_speed_change_gradient()
    raise ConfigError(f"unknown rate family {name!r}; expected 'ssep' or 'additive'")


def _a_n_for(value, n: int) -> float:
    if value in (None, "sqrt_log"):
        return kmc.default_a_n(n)
    return float(value)


def _mode_for(doc, d: int) -> TestFunction:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError(f"mode {doc!r} must be an object with a 'kind'")
    kind = doc["kind"]
    if kind == "constant":
        return TestFunction.constant(d)
    m = tuple(int(k) for k in doc.get("m", ()))
    if len(m) != d:
        raise ConfigError(f"mode frequency {m} does not match dimension {d}")
    if kind == "fourier_cos":
        return TestFunction.fourier_cos(m)
    if kind == "fourier_sin":
        return TestFunction.fourier_sin(m)
    raise ConfigError(f"unknown mode kind {kind!r}")


def _cylinder_for(sites_doc, d: int) -> CylinderFunction:
    if not sites_doc:
        raise ConfigError("f_sites must list at least one site offset")
    f = CylinderFunction.constant(d, 1.0)
    for site in sites_doc:
        site = tuple(int(c) for c in site)
        if len(site) != d:
            raise ConfigError(f"site offset {site} does not match dimension {d}")
        f = f * CylinderFunction.site(site)
    return f


def _sim_params(params: dict, d: int, n: int, rho: float, a_n: float,
                rates: RateFamily) -> kmc.SimParams:
    return kmc.SimParams(
        Torus(d, n), rho, rates, a_n,
        effective_rates=bool(params.get("effective_rates", False)),
        engine=params.get("engine", "auto"),
        resync_every=int(params.get("resync_every", 1 << 20)),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    config = ExperimentConfig.from_file(args.config, args.set)
    if config.experiment != "simulate":
        raise ConfigError(f"config names experiment {config.experiment!r}, not 'simulate'")
    p = config.parameters
    d = int(p.get("d", 1))
    n = int(p.get("n", 64))
    rho = float(p.get("rho", 0.5))
    rates, grad = _rates_for(p.get("rates", "ssep"), d)
    a_n = _a_n_for(p.get("a_n"), n)
    params = _sim_params(p, d, n, rho, a_n, rates)
    modes = tuple(_mode_for(doc, d) for doc in p.get("modes", [{"kind": "fourier_cos", "m": [1] + [0] * (d - 1)}]))
    spec = EnsembleSpec(
        params=params,
        replicas=int(p.get("replicas", 100)),
        modes=modes,
        sample_times=tuple(float(t) for t in p.get("sample_times", (0.0, 0.5))),
        seed=config.seed,
        start=p.get("start", "bernoulli"),
        integrals=bool(p.get("integrals", False)),
    )
    model = build_limit_model(grad, rho) if p.get("join_targets", True) else None
    report = run_ensemble(spec, model=model, workers=config.workers)
    run_dir = _run_dir(config.outdir, "simulate")
    _emit(run_dir, config, report.verdict(), {"report.csv": report.csv_bytes()})
    print(f"simulate: {'PASS' if report.passed else 'FAIL'} ({run_dir})")
    return 0 if report.passed else 1


def _cmd_bg(args) -> int:
    config = ExperimentConfig.from_file(args.config, args.set)
    if config.experiment != "bg":
        raise ConfigError(f"config names experiment {config.experiment!r}, not 'bg'")
    p = config.parameters
    d = int(p.get("d", 1))
    rho = float(p.get("rho", 0.5))
    rates, _ = _rates_for(p.get("rates", "ssep"), d)
    sizes = [int(n) for n in p.get("sizes", (64, 128, 256))]
    sweep = [
        _sim_params(p, d, n, rho, _a_n_for(p.get("a_n"), n), rates) for n in sizes
    ]
    f = _cylinder_for(p.get("f_sites", [[0] * d, [1] + [0] * (d - 1)]), d)
    G = _mode_for(p.get("mode", {"kind": "fourier_cos", "m": [1] + [0] * (d - 1)}), d)
    report = bg_experiment(
        f, G, sweep, float(p.get("horizon", 0.5)), int(p.get("replicas", 200)),
        config.seed, workers=config.workers,
    )
    run_dir = _run_dir(config.outdir, "bg")
    _emit(run_dir, config, report.verdict(), {"report.csv": report.csv_bytes()})
    print(f"bg: {'PASS' if report.passed else 'FAIL'} means={report.metadata['means']}")
    return 0 if report.passed else 1


def _cmd_entropy(args) -> int:
    config = ExperimentConfig.from_file(args.config, args.set)
    if config.experiment != "entropy":
        raise ConfigError(f"config names experiment {config.experiment!r}, not 'entropy'")
    p = config.parameters
    d = int(p.get("d", 1))
    rates, _ = _rates_for(p.get("rates", "ssep"), d)
    out = entropy_growth_experiment(
        [int(n) for n in p.get("sizes", (6, 8))],
        d,
        float(p.get("rho", 0.5)),
        float(p.get("a_n", 1.0)),
        rates,
        tuple(float(t) for t in p.get("times", tuple(np.linspace(0.0, 0.1, 6)))),
        start_density=p.get("start_density"),
    )
    rows = out["rows"]
    payload = _rows_csv_bytes(
        ("n", "d", "a_n", "H0", "fitted_c0", "rate_scale", "violations", "envelope_ok"),
        rows,
    )
    run_dir = _run_dir(config.outdir, "entropy")
    _emit(run_dir, config,
          {"experiment": out["experiment"], "pass": out["pass"], "details": out["details"]},
          {"report.csv": payload})
    print(f"entropy: {'PASS' if out['pass'] else 'FAIL'} fitted_c0={out['details']['fitted_c0']}")
    return 0 if out["pass"] else 1


def _rows_csv_bytes(fieldnames, rows) -> bytes:
    lines = [",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(name)) for name in fieldnames))
    return ("\n".join(lines) + "\n").encode()


def _cmd_she_targets(args) -> int:
    d = args.d
    model = build_limit_model(GradientData.ssep(d), args.rho)
    modes = [Mode.constant(d)] + [
        Mode((m,) + (0,) * (d - 1)) for m in _parse_int_list(args.modes)
    ]
    header = f"{'flavor':8s} {'m':6s} {'lambda':>22s} {'variance':>22s} {'stationary':>22s}"
    print(header)
    lines = []
    for mode in modes:
        lam = lambda_m(model, mode)
        var = cov_limit(model, args.t, args.t, mode, mode)
        stat = stationary_variance(model, mode)
        mtxt = ":".join(str(k) for k in mode.m)
        line = f"{mode.flavor:8s} {mtxt:6s} {lam!r:>22s} {var!r:>22s} {stat!r:>22s}"
        print(line)
        lines.append({"flavor": mode.flavor, "m": mtxt, "lambda": lam,
                      "variance": var, "stationary_variance": stat})
    if args.outdir:
        run_dir = _run_dir(args.outdir, "she-targets")
        payload = _rows_csv_bytes(
            ("flavor", "m", "lambda", "variance", "stationary_variance"), lines
        )
        (run_dir / "targets.csv").write_bytes(payload)
        with open(run_dir / "resolved_config.json", "w") as handle:
            json.dump({"experiment": "she-targets", "d": d, "rho": args.rho,
                       "modes": args.modes, "t": args.t}, handle, indent=2, sort_keys=True)
            handle.write("\n")
        write_verdict(run_dir / "verdict.json",
                      {"experiment": "she-targets", "pass": True,
                       "details": {"rows": len(lines)}})
    return 0


def _cmd_flow_scaling(args) -> int:
    ells = _parse_int_list(args.ells)
    rows = scaling_table(ells, args.d, method=args.method)
    print(f"{'ell':>5s} {'energy':>22s} {'g_d':>22s} {'ratio':>22s} {'residual':>12s}")
    ok = True
    for row in rows:
        print(f"{row['ell']:>5d} {row['energy']!r:>22s} {row['g_d']!r:>22s} "
              f"{row['ratio']!r:>22s} {row['residual']:>12.2e}")
        ok = ok and row["residual"] < 1e-12
    if args.outdir:
        run_dir = _run_dir(args.outdir, "flow-scaling")
        payload = _rows_csv_bytes(("ell", "d", "energy", "g_d", "ratio", "residual"), rows)
        (run_dir / "scaling.csv").write_bytes(payload)
        with open(run_dir / "resolved_config.json", "w") as handle:
            json.dump({"experiment": "flow-scaling", "d": args.d, "ells": ells,
                       "method": args.method}, handle, indent=2, sort_keys=True)
            handle.write("\n")
        write_verdict(run_dir / "verdict.json",
                      {"experiment": "flow-scaling", "pass": ok,
                       "details": {"ells": ells, "method": args.method}})
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# identity suites
# ---------------------------------------------------------------------------

_PRESETS = ("ssep-d1", "additive-d1", "ssep-d2")


def _verify_rows(preset: str) -> list[dict]:
    if preset == "ssep-d1":
        d, rates, grad = 1, RateFamily.ssep(1), GradientData.ssep(1)
        torus, exact_torus = Torus(1, 12), Torus(1, 6)
    elif preset == "additive-d1":
        d = 1
        rates, grad = example_speed_change_gradient()
        torus, exact_torus = Torus(1, 12), Torus(1, 8)
    elif preset == "ssep-d2":
        d, rates, grad = 2, RateFamily.ssep(2), GradientData.ssep(2)
        torus, exact_torus = Torus(2, 5), Torus(2, 3)
    else:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {_PRESETS}")

    rng = np.random.default_rng(20260816)
    rho = 0.5
    a_n = 1.3
    fp = FieldParams(rho, a_n)
    rows = []

    def add(check: str, residual: float, tol: float):
        rows.append({"check": check, "preset": preset, "max_residual": residual,
                     "tol": tol, "passed": residual < tol})

    result = gradient_check(rates, grad)
    add("gradient-decomposition", result.max_residual, 1e-12)

    worst = 0.0
    for k in range(25):
        occ = (rng.random(torus.size) < rho).astype(np.uint8)
        eta = Configuration(torus, occ)
        m = (int(rng.integers(1, 4)),) + (0,) * (d - 1)
        F = TestFunction.fourier_cos(m) if k % 2 else TestFunction.fourier_sin(m)
        worst = max(worst, as1_residual(eta, F, fp, rates, grad))
    add("drift-two-routes", worst, 1e-10)

    gen = exact.build_generator(
        exact_torus, rates, "combined", scaling=(float(exact_torus.n) ** 2, a_n)
    )
    F = TestFunction.fourier_cos((1,) + (0,) * (d - 1))
    xvec = np.array([
        field_eval(config_from_int(exact_torus, w), F, fp)
        for w in range(gen.n_states)
    ])
    g2 = exact.gamma_k(xvec, gen, 2)
    lx = gen.entries @ xvec
    worst_g, worst_d = 0.0, 0.0
    for w in range(gen.n_states):
        eta = config_from_int(exact_torus, w)
        worst_g = max(worst_g, abs(gamma_n_eval(eta, F, fp, rates) - float(g2[w])))
        worst_d = max(worst_d, abs(drift_eval_rate_sum(eta, F, fp, rates) - float(lx[w])))
    add("quadratic-variation-identity", worst_g, 1e-10)
    add("drift-vs-generator", worst_d, 1e-10)

    f = (
        CylinderFunction.site((0,) * d) * CylinderFunction.site((1,) + (0,) * (d - 1))
        + CylinderFunction.site((0,) * d) * 0.5
        - 0.125
    )
    lhs = pi_rho(f, rho)
    rhs = pi_one(f, rho) + pi_two_plus(f, rho)
    keys = set(lhs.terms) | set(rhs.terms)
    worst_pi = max(
        (abs(lhs.terms.get(k, 0.0) - rhs.terms.get(k, 0.0)) for k in keys), default=0.0
    )
    worst_pi = max(worst_pi, abs(pi_two_plus(f, rho).tilde(rho)))
    add("projection-decomposition", worst_pi, 1e-12)

    worst_flow = max(verify_flow(build_flow(ell, d)) for ell in (4, 6))
    add("flow-divergence", worst_flow, 1e-13)
    return rows


def _cmd_verify(args) -> int:
    presets = [args.preset] if args.preset else list(_PRESETS)
    all_rows = []
    for preset in presets:
        all_rows.extend(_verify_rows(preset))
    ok = all(row["passed"] for row in all_rows)
    for row in all_rows:
        state = "PASS" if row["passed"] else "FAIL"
        print(f"{row['preset']:12s} {row['check']:30s} "
              f"residual={row['max_residual']:.3e} tol={row['tol']:.0e} {state}")
    if args.outdir:
        run_dir = _run_dir(args.outdir, "verify")
        payload = _rows_csv_bytes(("check", "preset", "max_residual", "tol", "passed"),
                                  all_rows)
        (run_dir / "identities.csv").write_bytes(payload)
        with open(run_dir / "resolved_config.json", "w") as handle:
            json.dump({"experiment": "verify", "presets": presets}, handle,
                      indent=2, sort_keys=True)
            handle.write("\n")
        write_verdict(run_dir / "verdict.json",
                      {"experiment": "verify", "pass": ok,
                       "details": {"presets": presets, "checks": len(all_rows)}})
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parse_int_list(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stirvoter",
        description="Simulation and verification harness for stirred voter dynamics",
    )
    sub = parser.add_subparsers(dest="command")

    p_verify = sub.add_parser("verify", help="run the exact-identity suites")
    p_verify.add_argument("--preset", choices=_PRESETS, default=None,
                          help="restrict to one preset (default: all)")
    p_verify.add_argument("--outdir", default=None)
    p_verify.set_defaults(func=_cmd_verify)

    for name, func in (("simulate", _cmd_simulate), ("bg", _cmd_bg),
                       ("entropy", _cmd_entropy)):
        p = sub.add_parser(name, help=f"run the {name} experiment from a config file")
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", default=[],
                       help="override a config key, e.g. --set parameters.replicas=50")
        p.set_defaults(func=func)

    p_she = sub.add_parser("she-targets", help="print closed-form mode targets")
    p_she.add_argument("--d", type=int, default=1)
    p_she.add_argument("--rho", type=float, default=0.5)
    p_she.add_argument("--modes", default="1..4",
                       help="frequency list, '1..4' or '1,2,3'")
    p_she.add_argument("--t", type=float, default=0.5)
    p_she.add_argument("--outdir", default=None)
    p_she.set_defaults(func=_cmd_she_targets)

    p_flow = sub.add_parser("flow-scaling", help="tabulate flow energies against g_d")
    p_flow.add_argument("--d", type=int, default=1)
    p_flow.add_argument("--ells", default="4,8,16")
    p_flow.add_argument("--method", choices=("minimal", "sequential"), default="minimal")
    p_flow.add_argument("--outdir", default=None)
    p_flow.set_defaults(func=_cmd_flow_scaling)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as the failure exit code
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
