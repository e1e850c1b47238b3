"""Command-line entry point: ``confspec <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError, ConfSpecError
from .runner import COMMANDS, I_K_LABEL, ExperimentConfig, emit_report, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

_CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    # every default is None so that only explicit flags override the config file
    p.add_argument("--config", help="JSON config file; explicit flags take precedence")
    p.add_argument("--surface", choices=["torus", "klein", "sphere", "rp2"])
    p.add_argument("--a", type=float, help="torus shear parameter")
    p.add_argument("--b", type=float, help="torus/Klein modulus")
    p.add_argument("--res", type=int, help="grid resolution (flat) or subdivision level (round)")
    p.add_argument("--k", type=int, help="eigenvalue index")
    p.add_argument("--tol", type=float, help="relative residual tolerance of the eigensolver")
    p.add_argument("--iters", type=int, help="optimizer iteration cap")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes for sweeps")
    p.add_argument("--starts", nargs="+", help="starting densities for maximization")
    p.add_argument("--cluster-tol", dest="cluster_tol", type=float)
    p.add_argument("--family", choices=["torus-pinch", "klein-to-sphere", "klein-to-rp2"])
    p.add_argument("--schedule", type=float, nargs="*", help="b values of a sweep")
    p.add_argument("--no-scale-resolution", dest="scale_resolution", action="store_const", const=False)
    p.add_argument("--count", type=int, help="number of distinct oracle eigenvalues")
    p.add_argument("--deltas", type=float, nargs="+")
    p.add_argument("--radii", type=float, nargs="+")
    p.add_argument("--centers", type=json.loads, help='JSON list of 3-vectors, e.g. "[[0,0,1]]"')
    p.add_argument("--length", type=float, help="collar geodesic length")
    p.add_argument("--sidedness", type=int, choices=[1, 2])
    p.add_argument("--offset", type=float, help="splitting offset of the collar-to-sphere map")
    p.add_argument("--spec", help="limiting space: preset family name or JSON file")
    p.add_argument("--table", help="extra LambdaTable JSON merged over the built-in table")
    p.add_argument("--no-figures", dest="figures", action="store_const", const=False)


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit code 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="confspec", description="Conformal spectral geometry experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        _add_experiment_flags(sub.add_parser(name))
    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    v.add_argument("--out", help="directory for verify.json")
    v.add_argument("--jobs", type=int)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the config file, then explicit flags."""
    values: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}", "config") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object", "config")
        unknown = sorted(set(doc) - _CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config fields {unknown}", unknown[0])
        values.update(doc)
    for key, val in vars(args).items():
        if key in _CONFIG_FIELDS and val is not None:
            values[key] = val
    values["command"] = args.command
    return ExperimentConfig(**values)


def _summary_line(report) -> str:
    r, s = report.results, report.summary
    if report.command == "sweep":
        est = ", ".join(f"b={b:g}: {e:.6g}" for b, e in s["estimates"])
        return f"{est}\n{I_K_LABEL}: {s[I_K_LABEL]}; limit {s['limit']['value']['exact']}"
    if report.command == "maximize":
        notes = f" [{'; '.join(r['annotations'])}]" if r["annotations"] else ""
        return f"estimate {r['estimate']:.8g} ({r['status']}, start {r['start']}){notes}"
    if report.command == "limit":
        return "; ".join(f"k={row['k']}: {row['exact']} = {row['decimal']:.10g}" for row in report.rows)
    if report.command == "spectrum":
        return "; ".join(f"{row['lambda_bar']:.6g} (exact {row['oracle']:.6g})" for row in report.rows)
    return f"{len(report.rows)} rows"


def _run_verify(args) -> int:
    from .verify import run_criteria

    results = run_criteria(args.only, jobs=args.jobs, echo=print)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {failed}" if failed else ""))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"criteria": [r.to_json() for r in results], "failed": failed}
        (out / "verify.json").write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return EXIT_VERIFY if failed else EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        if args.command == "verify":
            return _run_verify(args)
        config = config_from_args(args)
        report = run_experiment(config)
        written = emit_report(report, report.config["out"], figures=report.config["figures"])
    except ConfigError as exc:
        print(f"config error [{exc.field}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfSpecError, ArithmeticError, ValueError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(_summary_line(report))
    for path in written:
        print(f"wrote {path}")
    if report.errors:
        print(f"{len(report.errors)} member error(s) recorded in the report", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
