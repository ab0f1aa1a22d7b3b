"""Command-line entry point: ``stochgronwall {verify,constants,list-models,self-test}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import constants, harness, models
from .errors import ConfigError, InvalidParameter

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_verify(args) -> int:
    path = harness.default_suite_path() if args.default_suite else Path(args.config)
    try:
        text = Path(path).read_text()
        specs = harness.parse_config(text, str(path))
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    reports = harness.run_suite(specs, jobs=args.jobs)
    if args.format == "json":
        _write(harness.reports_to_json(reports, include_wall_time=not args.no_wall_time), args.out)
    else:
        _write(harness.reports_to_csv(reports), args.out)
    for r in reports:
        if r.verdict != harness.PASS:
            print(f"{r.verdict}: {r.experiment_id} {r.message}".rstrip(), file=sys.stderr)
    n_pass = sum(r.verdict == harness.PASS for r in reports)
    print(f"{n_pass}/{len(reports)} experiments passed", file=sys.stderr)
    return harness.exit_code(reports)


def cmd_constants(args) -> int:
    try:
        rows = constants.constants_table([args.p], [args.q3], args.variant)
    except InvalidParameter as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.format == "json":
        print(json.dumps(rows, indent=2))
    else:
        print("p,q3,variant,value,abs_error_bound")
        for row in rows:
            print(f"{row['p']!r},{row['q3']!r},{row['variant']},{row['value']!r},"
                  f"{row['abs_error_bound']!r}")
    return EXIT_OK


def cmd_list_models(args) -> int:
    for name in models.CATALOG:
        model = models.catalog_get(name)
        params = ", ".join(f"{k}={v:g}" for k, v in model.params.items())
        print(f"{name:18s} {model.description} [{params}]")
    return EXIT_OK


def cmd_self_test(args) -> int:
    results = models.self_test(models.StateSampler(n=args.points))
    failed = 0
    for name, kind, res in results:
        status = "ok" if res.ok else "VIOLATED"
        failed += not res.ok
        print(f"{name:18s} {kind:22s} {status:8s} worst slack {res.worst_violation:+.3e}")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochgronwall",
                                     description="Numerical verification of stochastic "
                                                 "Gronwall-type moment bounds.")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run a verification suite")
    src = v.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="suite file (JSON)")
    src.add_argument("--default-suite", action="store_true", help="run the bundled suite")
    v.add_argument("--out", help="write the report here instead of stdout")
    v.add_argument("--format", choices=("csv", "json"), default="csv")
    v.add_argument("--jobs", type=int, default=1, help="experiments run in parallel")
    v.add_argument("--no-wall-time", action="store_true",
                   help="omit wall-clock fields from JSON output")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("constants", help="print running-supremum constants")
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--q3", type=float, required=True)
    c.add_argument("--variant", choices=("half", "full"), nargs="+", default=["half", "full"])
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.set_defaults(func=cmd_constants)

    lm = sub.add_parser("list-models", help="list the model catalog")
    lm.set_defaults(func=cmd_list_models)

    st = sub.add_parser("self-test", help="check every catalog certificate")
    st.add_argument("--points", type=int, default=10_000)
    st.set_defaults(func=cmd_self_test)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
