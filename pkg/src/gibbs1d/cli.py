"""
Command-line interface.

    gibbs1d free-energy  sequential window estimate of log Z / n, steps CSV
    gibbs1d sweep        error against the exact density over window radii
    gibbs1d budget       three-term error budget per step
    gibbs1d certify      randomized locality-bound suites
    gibbs1d oracle       exact and transfer-matrix densities
    gibbs1d clustering   connected correlations and a correlation-length fit

Settings come from ``--config FILE`` (flat ``key = value``) and are
overridden by flags. Exit codes: 0 ok, 1 bound violation, 2 config error,
3 dimension cap exceeded, 4 method inapplicable, 5 other numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .bounds import (
    SuiteConfig,
    imag_lr_suite,
    multicomm_suite,
    summarize,
    write_records_csv,
)
from .chain import ChainSpec, build_preset, load_terms
from .config import PARAM_PREFIX, SCHEMA, canonical, defaults, model_params, parse_text, parse_value
from .engine import (
    error_budget,
    estimate_free_energy,
    suggest_window,
    sweep_window,
    write_budget_csv,
    write_steps_csv,
    write_sweep_csv,
)
from .errors import CommutationError, ConfigError, DimensionCapError, GeometryError, Gibbs1DError, ShapeError
from .operators import PAULI_X, PAULI_Y, PAULI_Z, SupportedOperator, Window
from .oracles import (
    ThermalState,
    correlation,
    exact_log_partition,
    fit_correlation_length,
    transfer_matrix_log_partition,
    write_correlation_csv,
)
from .qbp import DysonParams, QbpParams

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_CAP, EXIT_INAPPLICABLE, EXIT_NUMERIC = range(6)
COMMANDS = ("free-energy", "sweep", "budget", "certify", "oracle", "clustering")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gibbs1d", description="Free energy of 1D quantum chains")
    parser.add_argument("--version", action="version", version=f"gibbs1d {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        p.add_argument(
            "--param", action="append", default=[], metavar="NAME=VALUE", help="model parameter"
        )
        for key, spec in SCHEMA.items():
            p.add_argument(_flag(key), dest=key, metavar="VALUE", help=spec.help)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    config = defaults()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
        config.update(parse_text(text, args.config))
    for key in SCHEMA:
        raw = getattr(args, key)
        if raw is not None:
            config[key] = parse_value(key, raw, f"{_flag(key)}: ")
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"--param {item!r}: expected NAME=VALUE")
        name, value = item.split("=", 1)
        key = PARAM_PREFIX + name.strip()
        config[key] = parse_value(key, value.strip(), "--param: ")
    return config


def make_spec(config: dict) -> ChainSpec:
    model = config["model"]
    try:
        if model.startswith("file:"):
            return load_terms(model[len("file:") :])
        return build_preset(model, config["n"], config["d"], config["k"], model_params(config), config["seed"])
    except OSError as exc:
        raise ConfigError(f"cannot read {model}: {exc.strerror}") from None
    except (ValueError, GeometryError, ShapeError) as exc:
        raise ConfigError(str(exc)) from None


def _params(config: dict) -> tuple[QbpParams, DysonParams]:
    try:
        qbp = QbpParams(
            t_max=config["t_max"] or None,
            n_t=config["n_t"],
            m_trotter=config["m_trotter"],
            quadrature=config["quadrature"],
        )
        dyson = DysonParams(n_tau=config["n_tau"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return qbp, dyson


def _out_dir(config: dict) -> Path:
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _g(x: float | None) -> str:
    return "n/a" if x is None else repr(float(x))


def cmd_free_energy(config: dict) -> int:
    spec = make_spec(config)
    qbp, dyson = _params(config)
    report = estimate_free_energy(
        spec,
        config["beta"],
        config["l"],
        config["method"],
        l1=config["l1"] if config["method"] != "window_ratio" else None,
        qbp_params=qbp,
        dyson_params=dyson,
        pad=config["pad"],
        threads=config["threads"],
    )
    path = _out_dir(config) / "steps.csv"
    write_steps_csv(report, path, timings=config["timings"])
    print(f"model            {spec.name} n={spec.n} d={spec.d} k={spec.k}")
    print(f"beta             {config['beta']!r}")
    print(f"method           {config['method']} l={config['l']}")
    print(f"density          {_g(report.free_energy_density)}")
    print(f"exact            {_g(report.exact_reference)}")
    print(f"abs_error        {_g(report.abs_error)}")
    print(f"clipped steps    {sum(s.clipped for s in report.steps)}/{len(report.steps)}")
    print(f"time             {report.total_time:.3f} s")
    print(f"steps csv        {path}")
    return EXIT_OK


def cmd_sweep(config: dict) -> int:
    spec = make_spec(config)
    qbp, dyson = _params(config)
    kwargs = {"threads": config["threads"]}
    if config["method"] != "window_ratio":
        kwargs.update(qbp_params=qbp, dyson_params=dyson, pad=config["pad"])
    result = sweep_window(spec, config["beta"], list(config["l_list"]), config["method"], **kwargs)
    path = _out_dir(config) / "sweep.csv"
    write_sweep_csv(result, path)
    for r in result.records:
        print(f"l={r['l']:<3d} density={r['density']!r} abs_error={r['abs_error']:.3e}")
    if result.note:
        print(f"fit              skipped ({result.note})")
    else:
        print(f"decay rate       {result.decay_rate:.6g} per site (r2={result.r2:.4f})")
    if config["target_eps"] > 0:
        suggestion = suggest_window(result, config["target_eps"])
        if suggestion is None:
            print("suggested l      n/a (no decaying fit)")
        else:
            print(f"suggested l      {suggestion} for eps={config['target_eps']:.3g}")
    print(f"sweep csv        {path}")
    return EXIT_OK


def cmd_budget(config: dict) -> int:
    spec = make_spec(config)
    qbp, dyson = _params(config)
    indices = [config["term"]] if config["term"] else range(1, spec.num_terms + 1)
    budgets = [
        error_budget(
            spec, i, config["l"], config["l1"], config["l2"], config["beta"], config["grid"],
            "exact", qbp, dyson, refine=False,
        )
        for i in indices
    ]
    path = _out_dir(config) / "budget.csv"
    write_budget_csv(budgets, path)
    worst = 0
    for b in budgets:
        holds = b.lhs <= 1.05 * b.bound
        worst += not holds
        print(f"i={b.i:<3d} lhs={b.lhs:.3e} bound={b.bound:.3e} {'ok' if holds else 'EXCEEDED'}")
    print(f"budget csv       {path}")
    return EXIT_VIOLATION if worst else EXIT_OK


def cmd_certify(config: dict) -> int:
    seeds = range(config["seed"], config["seed"] + config["seeds"])
    cfg = SuiteConfig(
        seeds=seeds,
        tau_min=config["tau_min"],
        tau_max=config["tau_max"],
        l2_max=config["l2_max"],
        m_max=config["m_max"],
        n_max=min(10, config["n"]),
        bound_scale=config["bound_scale"],
        workers=config["threads"],
    )
    if not 0 < cfg.tau_min <= cfg.tau_max:
        raise ConfigError("need 0 < tau_min <= tau_max")
    records = imag_lr_suite(cfg) + multicomm_suite(cfg)
    path = _out_dir(config) / "certify.csv"
    write_records_csv(records, path)
    summary = summarize(records)
    imag = [r for r in records if r.kind == "imag_lr"]
    applicable = sum(r.applicable for r in imag)
    print(f"records          {summary.total} ({summary.applicable} applicable)")
    print(f"imag_lr          {len(imag)} records, {applicable} applicable")
    if imag and applicable == 0:
        print("warning: no imaginary-time record was applicable (zeta >= 1 everywhere)")
    print(f"violations       {len(summary.violations)}")
    print(f"records csv      {path}")
    if summary.violations:
        w = summary.worst
        params = ", ".join(f"{k}={v}" for k, v in w.params)
        print(f"worst            {w.kind} {params} measured={w.measured:.6g} bound={w.bound:.6g}")
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_oracle(config: dict) -> int:
    spec = make_spec(config)
    beta = config["beta"]
    exact = exact_log_partition(spec, beta) / spec.n
    rows = [("exact", exact)]
    print(f"exact density    {exact!r}")
    if config["transfer"] != "no":
        try:
            tm = transfer_matrix_log_partition(spec, beta) / spec.n
        except CommutationError:
            if config["transfer"] == "yes":
                raise
            print("transfer matrix  skipped (terms do not commute)")
        else:
            rows.append(("transfer_matrix", tm))
            print(f"transfer density {tm!r}")
            print(f"difference       {abs(tm - exact):.3e}")
    path = _out_dir(config) / "oracle.csv"
    with open(path, "w") as fh:
        fh.write("method,density\n")
        for name, value in rows:
            fh.write(f"{name},{value:.17g}\n")
    print(f"oracle csv       {path}")
    return EXIT_OK


def cmd_clustering(config: dict) -> int:
    spec = make_spec(config)
    if spec.d != 2:
        raise ConfigError("clustering uses Pauli observables and needs d = 2")
    pauli = {"x": PAULI_X, "y": PAULI_Y, "z": PAULI_Z}[config["op"]]
    site = config["site"]
    if not 1 <= site < spec.n:
        raise ConfigError(f"site must lie in 1..{spec.n - 1}")
    state = ThermalState(spec, config["beta"])
    fixed = SupportedOperator(pauli, Window(site, site))
    records = [
        correlation(spec, config["beta"], SupportedOperator(pauli, Window(j, j)), fixed, state)
        for j in range(site + 1, spec.n + 1)
    ]
    path = _out_dir(config) / "correlations.csv"
    write_correlation_csv(records, path)
    for r in records:
        print(f"distance={r.distance:<3d} cor={r.value:.6e}")
    try:
        xi, r2 = fit_correlation_length(records)
        print(f"correlation length {xi:.6g} (r2={r2:.4f})")
    except ValueError as exc:
        print(f"fit skipped: {exc}")
    print(f"correlations csv {path}")
    return EXIT_OK


HANDLERS = {
    "free-energy": cmd_free_energy,
    "sweep": cmd_sweep,
    "budget": cmd_budget,
    "certify": cmd_certify,
    "oracle": cmd_oracle,
    "clustering": cmd_clustering,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    saved_cap = os.environ.get("GIBBS1D_CAP")
    try:
        config = resolve_config(args)
        if args.print_config:
            sys.stdout.write(canonical(config))
            return EXIT_OK
        if config["cap"]:
            os.environ["GIBBS1D_CAP"] = str(config["cap"])
        if config["threads"] < 1:
            raise ConfigError("threads must be at least 1")
        return HANDLERS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DimensionCapError as exc:
        print(f"dimension cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except CommutationError as exc:
        print(f"inapplicable: {exc}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    except Gibbs1DError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if saved_cap is None:
            os.environ.pop("GIBBS1D_CAP", None)
        else:
            os.environ["GIBBS1D_CAP"] = saved_cap


if __name__ == "__main__":
    sys.exit(main())
