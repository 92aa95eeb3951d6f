"""Command-line entry point: ``qoeweb {simulate,qos,usability,regress,pipeline}``.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numerical
failure. Nothing is written unless the whole command succeeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .core import (load_config, load_ratings, load_sessions, load_trace, ratings_from_sessions,
                   validate_study)
from .errors import DataError, NumericalError
from .report import (figure_tables, manifest, qos_files, qos_stage, read_csv, regress_stage,
                     regression_files, to_csv, to_json, usability_csv, usability_stage)
from .simulator import Mode, bundle_files, run_study, write_files

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qoeweb", description="Relate web-browsing usability to TCP-level QoS metrics.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=False, out_help="output path"):
        p.add_argument("--config", help="study config JSON (defaults to the five-environment study)")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if seed:
            p.add_argument("--seed", type=_seed, default=0)

    p = sub.add_parser("simulate", help="synthesize traces, sessions and ratings")
    common(p, seed=True, out_help="output directory")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.STOCHASTIC.value)

    p = sub.add_parser("qos", help="QoS metrics per trace")
    common(p, out_help="output table")
    p.add_argument("traces", nargs="+", help="trace CSVs named <service>__<environment>.csv")

    p = sub.add_parser("usability", help="effectiveness, workload, efficiency and satisfaction per cell")
    common(p, out_help="output table")
    p.add_argument("--sessions", required=True)
    p.add_argument("--ratings", help="ratings CSV (default: ratings carried by the sessions)")

    p = sub.add_parser("regress", help="best-subset regression of usability on QoS")
    common(p, out_help="output directory")
    p.add_argument("--qos", required=True, help="QoS table from 'qos'")
    p.add_argument("--usability", required=True, help="table from 'usability'")
    p.add_argument("--regressors", help="comma-separated candidate subset (default: every metric plus X)")

    p = sub.add_parser("pipeline", help="simulate, measure, score, regress and tabulate")
    common(p, seed=True, out_help="output directory")
    p.add_argument("--regressors", help="comma-separated candidate subset")
    return parser


def _candidates(text: str | None):
    return None if not text else [c.strip() for c in text.split(",") if c.strip()]


def _check_config(config):
    diags = validate_study(config, check_cells=False)
    if diags:
        raise DataError("invalid config: " + "; ".join(diags))


def _write_single(path: str, text: str) -> None:
    out = Path(path)
    write_files({out.name: text}, out.parent if str(out.parent) else ".")


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    _check_config(config)
    bundle = run_study(config, seed=args.seed, mode=Mode(args.mode))
    files = bundle_files(bundle)
    write_files(files, args.out)
    print(files["manifest.json"], end="")
    return EXIT_OK


def cmd_qos(args) -> int:
    traces = [load_trace(p) for p in args.traces]
    files = qos_files(qos_stage(traces))
    _write_single(args.out, files["qos.csv" if args.format == "csv" else "qos.json"])
    return EXIT_OK


def cmd_usability(args) -> int:
    config = load_config(args.config)
    _check_config(config)
    sessions = load_sessions(args.sessions)
    diags = validate_study(config, sessions)
    if diags:
        raise DataError("; ".join(diags))
    ratings = load_ratings(args.ratings) if args.ratings else ratings_from_sessions(sessions)
    scores, scale = usability_stage(sessions, ratings, config)
    text = usability_csv(scores) if args.format == "csv" else to_json(
        {"scores": [s.row() for s in scores], "scale": scale})
    _write_single(args.out, text)
    return EXIT_OK


def _read_table(path: str) -> list[dict]:
    text = Path(path).read_text()
    if path.endswith(".json"):
        doc = json.loads(text)
        rows = doc["scores"] if isinstance(doc, dict) else [
            {"service": d["service_id"], "environment": d["environment_id"],
             **{k: (v["mean"] if isinstance(v, dict) else v) for k, v in d.items()}} for d in doc]
        return rows
    return read_csv(text, path)


def cmd_regress(args) -> int:
    config = load_config(args.config)
    _check_config(config)
    models = regress_stage(_read_table(args.qos), _read_table(args.usability), config,
                           _candidates(args.regressors))
    files = regression_files(models)
    if args.format == "csv":
        rows = [{"response": m.response, "term": term, "coef": c, "se": se, "t": t, "p": p,
                 "adj_r2": m.adj_r2} for m in models
                for term, c, se, t, p in zip(m.terms, m.coefficients, m.se, m.t, m.p)]
        files["regression/coefficients.csv"] = to_csv(rows)
    files = {k.removeprefix("regression/"): v for k, v in files.items()}
    write_files(files, args.out)
    print("".join(files["equations.txt"]), end="")
    return EXIT_OK


def pipeline_files(config, seed: int, candidates=None) -> dict[str, str]:
    bundle = run_study(config, seed=seed)
    files = {f"data/{k}": v for k, v in bundle_files(bundle).items()}
    summaries = qos_stage(bundle.traces)
    files.update(qos_files(summaries))
    sessions = bundle.sessions
    scores, scale = usability_stage(sessions, ratings_from_sessions(sessions), config)
    files["usability.csv"] = usability_csv(scores)
    files["scale.json"] = to_json(scale)
    qos_rows = [s.row() for s in summaries]
    models = regress_stage(qos_rows, [s.row() for s in scores], config, candidates)
    files.update(regression_files(models))
    files.update(figure_tables(summaries, sessions, scores, models, config))
    files["manifest.json"] = manifest(files, config, seed)
    return files


def cmd_pipeline(args) -> int:
    config = load_config(args.config)
    _check_config(config)
    files = pipeline_files(config, args.seed, _candidates(args.regressors))
    write_files(files, args.out)
    print(files["regression/equations.txt"], end="")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "qos": cmd_qos, "usability": cmd_usability,
            "regress": cmd_regress, "pipeline": cmd_pipeline}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"qoeweb {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, KeyError, ValueError) as exc:
        print(f"qoeweb {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
