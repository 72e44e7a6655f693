"""Command-line entry point: ``jointlti <subcommand> [flags]``.

Exit codes: 0 on success, 1 on usage errors, 2 on numerical or runtime
failures. Every run prints its resolved configuration as JSON first.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import _io
from .errors import ArgumentError, JointLTIError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def _float_list(text):
    try:
        return [float(p) for p in str(text).split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --- handlers ---------------------------------------------------------------

def _out(args, default):
    return Path(args.out or default)


def _cmd_generate(args):
    from .ensemble import generate_ensemble, save_ensemble

    regime = None if args.regime == "none" else args.regime
    misspec = None if args.misspec_a is None else (args.misspec_a, args.misspec_fro)
    ens = generate_ensemble(args.d, args.k, args.M, args.seed, regime=regime,
                            radius_lo=args.radius_lo, radius_hi=args.radius_hi,
                            T_nominal=args.T, rho_slack=args.rho, misspec=misspec)
    return [save_ensemble(ens, _out(args, "ensemble.json"))]


def _cmd_simulate(args):
    from .dynamics import NoiseModel, save_bundle, simulate_bundle
    from .ensemble import load_ensemble

    ens = load_ensemble(args.ensemble)
    noise = NoiseModel.isotropic(ens.d, args.noise_var)
    bundle = simulate_bundle(ens, args.T, noise, seed=args.seed)
    return [save_bundle(bundle, _out(args, "bundle.csv"))]


def _cmd_fit(args):
    from .dynamics import load_bundle
    from .estimators import FitConfig, joint_fit, ols_fit, save_fit

    bundle = load_bundle(args.bundle)
    if args.optimizer == "ols":
        fit = ols_fit(bundle, ridge=args.ridge or 0.0)
    else:
        if args.k is None:
            raise ArgumentError("--k is required for the joint estimator")
        cfg = FitConfig(optimizer=args.optimizer, max_iters=args.max_iters, tol=args.tol,
                        restarts=args.restarts, ridge=args.ridge, init_seed=args.seed)
        fit = joint_fit(bundle, args.k, cfg)
    return [save_fit(fit, _out(args, "fit.json"), bundle)]


def _cmd_diagnose(args):
    from .diagnostics import covariance_report, save_report
    from .dynamics import NoiseModel, load_bundle
    from .ensemble import load_ensemble

    ens = load_ensemble(args.ensemble)
    bundle = load_bundle(args.bundle)
    noise = None if args.noise_var is None else NoiseModel.isotropic(bundle.d, args.noise_var)
    report = covariance_report(bundle, ens, noise, args.delta, args.rho)
    return [save_report(report, _out(args, "report.json"))]


def _sweep_config(args, misspec=None):
    from .estimators import FitConfig
    from .experiments import SweepConfig

    return SweepConfig(d=args.d, k_true=args.k, k_fit=args.k_fit, T=args.T, M_list=tuple(args.M),
                       regime=args.regime, radius_lo=args.radius_lo, radius_hi=args.radius_hi,
                       noise_variance=args.noise_var, misspec=misspec, replicates=args.replicates,
                       seed=args.seed, fit=FitConfig(max_iters=args.max_iters, tol=args.tol))


def _write_sweep(result, out):
    from .experiments import export, render_plots, write_manifest

    csv_path = export(result, out, "csv")
    svg = render_plots(result, out.with_suffix(".svg"))
    man = write_manifest(out.with_suffix(".manifest.json"), result.config, [csv_path, svg])
    return [csv_path, svg, man]


def _cmd_sweep(args):
    from .experiments import run_sweep

    misspec = None if args.misspec_a is None else (args.misspec_a, args.misspec_fro)
    result = run_sweep(_sweep_config(args, misspec), jobs=args.jobs)
    return _write_sweep(result, _out(args, "sweep.csv"))


def _cmd_misspec_grid(args):
    from .experiments import run_misspec_grid

    result = run_misspec_grid(_sweep_config(args), args.a_list, args.misspec_fro, jobs=args.jobs)
    return _write_sweep(result, _out(args, "misspec.csv"))


def _cmd_growth(args):
    from .dynamics import NoiseModel
    from .ensemble import JordanSpec
    from .experiments import growth_csv, render_plots, state_growth_profile, write_manifest

    noise = None if args.noise_var == 0 else NoiseModel.isotropic(args.d, args.noise_var)
    transform = "identity" if args.conditioning == 1.0 else None
    profiles = [
        state_growth_profile(JordanSpec.uniform(args.d, l, args.eigenvalue, args.conditioning),
                             args.T, noise, args.seed, transform=transform)
        for l in args.l
    ]
    out = _out(args, "growth.csv")
    out.write_text(growth_csv(profiles))
    svg = render_plots(profiles, out.with_suffix(".svg"))
    return [out, svg, write_manifest(out.with_suffix(".manifest.json"), _plain(args), [out, svg])]


def _cmd_select_k(args):
    from .experiments import render_plots, run_selection_experiment, selection_csv, write_manifest

    runs = run_selection_experiment(args.d, args.k, args.T, args.M[0], args.k_grid, args.replicates,
                                    args.seed, noise_variance=args.noise_var,
                                    validation=args.validation, split=args.split)
    out = _out(args, "selection.csv")
    out.write_text(selection_csv(runs))
    svg = render_plots(runs, out.with_suffix(".svg"))
    return [out, svg, write_manifest(out.with_suffix(".manifest.json"), _plain(args), [out, svg])]


def _cmd_export(args):
    from .experiments import export, import_result, render_plots

    result = import_result(args.input)
    written = []
    if args.out:
        written.append(export(result, args.out, args.format))
    if args.plot:
        written.append(render_plots(result, args.plot))
    if not written:
        raise ArgumentError("nothing to do: pass --out and/or --plot")
    return written


# --- parser -----------------------------------------------------------------

def _add_common(p, jobs=False):
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--out", help="output path")
    p.add_argument("--dry-run", action="store_true", help="print the resolved plan and stop")
    p.add_argument("--config", help="JSON file of flag values; explicit flags take precedence")
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="worker processes")


def _add_sweep_flags(p):
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--k", type=int, default=3, help="true basis count")
    p.add_argument("--k-fit", type=int, default=None, help="fitted basis count (default: --k)")
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--M", type=_int_list, default=[1, 5, 25, 50], help="comma list, e.g. 1,10,50")
    p.add_argument("--regime", choices=("stable", "unit_root"), default="stable")
    p.add_argument("--radius-lo", type=float, default=0.7)
    p.add_argument("--radius-hi", type=float, default=0.9)
    p.add_argument("--noise-var", type=float, default=1.0)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)


def build_parser():
    parser = _Parser(prog="jointlti", description="Joint estimation of related linear systems.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="draw a system ensemble")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--regime", choices=("stable", "unit_root", "none"), default="stable")
    p.add_argument("--radius-lo", type=float, default=0.7)
    p.add_argument("--radius-hi", type=float, default=0.9)
    p.add_argument("--T", type=int, default=None, help="nominal horizon for the radius budget")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--misspec-a", type=float, default=None)
    p.add_argument("--misspec-fro", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("simulate", help="simulate trajectories of an ensemble")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--noise-var", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit the joint or individual estimator")
    p.add_argument("--bundle", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--optimizer", choices=("als", "gd", "ols"), default="als")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--ridge", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("diagnose", help="covariance envelopes for a simulated bundle")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--noise-var", type=float, default=None, help="override the bundle's noise model")
    _add_common(p)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("sweep", help="estimation error versus number of systems")
    _add_sweep_flags(p)
    p.add_argument("--misspec-a", type=float, default=None)
    p.add_argument("--misspec-fro", type=float, default=1.0)
    _add_common(p, jobs=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("misspec-grid", help="sweeps over misspecification exponents")
    _add_sweep_flags(p)
    p.add_argument("--a-list", type=_float_list, default=[0.0, 0.25, 0.5])
    p.add_argument("--misspec-fro", type=float, default=1.0)
    _add_common(p, jobs=True)
    p.set_defaults(func=_cmd_misspec_grid)

    p = sub.add_parser("growth", help="state magnitude profiles of Jordan systems")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--l", type=_int_list, default=[2, 4], help="block sizes, comma list")
    p.add_argument("--eigenvalue", type=float, default=1.0)
    p.add_argument("--conditioning", type=float, default=1.0)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--noise-var", type=float, default=0.0)
    _add_common(p)
    p.set_defaults(func=_cmd_growth)

    p = sub.add_parser("select-k", help="validation curves for the basis count")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--k", type=int, default=3, help="true basis count")
    p.add_argument("--T", type=int, default=120)
    p.add_argument("--M", type=_int_list, default=[30])
    p.add_argument("--k-grid", type=_int_list, default=list(range(1, 9)), help="e.g. 1..8")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--noise-var", type=float, default=1.0)
    p.add_argument("--validation", type=float, default=0.2)
    p.add_argument("--split", choices=("steps", "systems"), default="steps")
    _add_common(p)
    p.set_defaults(func=_cmd_select_k)

    p = sub.add_parser("export", help="convert or plot a saved sweep result")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--plot", default=None, help="SVG path")
    _add_common(p)
    p.set_defaults(func=_cmd_export)
    return parser


def _plain(args):
    return {k: v for k, v in vars(args).items() if k not in ("func", "config", "dry_run")}


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _parse(parser, argv):
    path = _config_path(argv)
    if path is not None and argv and argv[0] in _subparsers(parser):
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read --config {path}: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError("--config must hold a JSON object")
        sub = _subparsers(parser)[argv[0]]
        actions = {a.dest: a for a in sub._actions}
        values = {k.replace("-", "_"): v for k, v in values.items()}
        unknown = sorted(set(values) - set(actions) - {"help"})
        if unknown:
            raise UsageError(f"unknown keys in --config: {', '.join(unknown)}")
        for key in values:
            # a value from the file satisfies a required flag
            actions[key].required = False
        sub.set_defaults(**values)
    return parser.parse_args(argv)


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def main(argv=None):
    parser = build_parser()
    try:
        args = _parse(parser, sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    print(_io.dumps({"command": args.command, **{k: v for k, v in _plain(args).items() if k != "command"}}),
          end="")
    if args.dry_run:
        print("dry run: nothing computed")
        return EXIT_OK
    try:
        written = args.func(args)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (JointLTIError, OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
