"""Command-line entry point ``ortho-cate``.

Subcommands: ``simulate`` (Monte Carlo study from a JSON config), ``analyze``
(train/test CATE estimates on a CSV dataset) and ``diagnose`` (bound terms
and orthogonality probes as JSON).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .bench import SimConfig, analyze, run_diagnosis, run_simulation, summarize
from .errors import OrthoCateError

log = logging.getLogger("ortho_cate")


def _split(text: str | None):
    if text is None:
        return None
    return [part.strip() for part in text.split(",") if part.strip()]


def _cmd_simulate(args) -> int:
    config = SimConfig.from_json(args.config)
    changes = {}
    if args.two_fold:
        changes["K"] = 2
    if args.output:
        changes["output"] = args.output
    if args.replications:
        changes["replications"] = args.replications
    if changes:
        config = config.with_(**changes)
    rows = run_simulation(config, workers=args.workers, dump_dir=args.dump_dir)
    for (learner, metric), stats in summarize(rows).items():
        print(f"{learner:>12s} {metric:>12s} mean={stats['mean']:.6g} sd={stats['sd']:.4g} "
              f"ok={stats['n_ok']} errors={stats['n_error']}")
    if config.output:
        log.info("wrote %d rows to %s", len(rows), config.output)
    return 0


def _cmd_analyze(args) -> int:
    out = analyze(args.data, _split(args.v), _split(args.learners), K=args.K, seed=args.seed,
                  output_dir=args.out)
    print(json.dumps(out.summary, indent=2, sort_keys=True))
    return 0


def _cmd_diagnose(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        raw = json.load(fh)
    report = run_diagnosis(raw)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ortho-cate", description="Weighted orthogonal CATE learners: simulation, analysis and diagnostics.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    sim.add_argument("--config", required=True, help="JSON file with SimConfig fields")
    sim.add_argument("--two-fold", "--paper-protocol", dest="two_fold", action="store_true",
                     help="two-fold cross-fitting (K=2), training halves swap roles")
    sim.add_argument("--workers", type=int, default=None, help="worker processes (overrides config)")
    sim.add_argument("--output", default=None, help="result CSV path (overrides config)")
    sim.add_argument("--replications", type=int, default=None, help="override the replication count")
    sim.add_argument("--dump-dir", default=None, help="also write each replication's data and folds here")
    sim.set_defaults(func=_cmd_simulate)

    ana = sub.add_parser("analyze", help="fit learners on a CSV dataset")
    ana.add_argument("--data", required=True, help="CSV with columns y, a and features")
    ana.add_argument("--v", default=None, help="comma-separated feature names forming V (default: all)")
    ana.add_argument("--learners", default="dr,r", help="comma-separated learner names")
    ana.add_argument("--K", type=int, default=5, help="cross-fitting folds")
    ana.add_argument("--seed", type=int, default=0)
    ana.add_argument("--out", required=True, help="output directory")
    ana.set_defaults(func=_cmd_analyze)

    dia = sub.add_parser("diagnose", help="bound terms and orthogonality probes on synthetic data")
    dia.add_argument("--config", required=True, help="JSON diagnose config")
    dia.add_argument("--out", default=None, help="also write the JSON report here")
    dia.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OrthoCateError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
