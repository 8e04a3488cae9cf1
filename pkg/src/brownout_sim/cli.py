"""Command-line entry point: run, sweep, compare, gen-traces."""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .engine import SimulationError
from .experiment import ConfigError, dispatch, load_spec, write_artifacts
from .placement import PlacementError
from .stats import PairedComparison, paired_ttest
from .workload import TraceError, synth_traces, write_trace_dir

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("brownout_sim")

COMPARE_FIELDS = ("name_a", "name_b", "n", "mean_a", "mean_b", "diff", "ci_lo", "ci_hi", "t_stat", "p_value")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="JSON experiment config")
    p.add_argument("--policies", nargs="+", metavar="P", help="override policies (PCO UBP HUPRFCS BMDP)")
    p.add_argument("--seeds", nargs="+", type=int, metavar="S", help="override the seed list")
    p.add_argument("--lambda", dest="lam", type=float, help="override the discount weight")
    p.add_argument("--threshold", type=float, help="override the overload threshold")
    p.add_argument("--horizon", type=int, help="override the number of intervals")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--paper-faithful", action="store_true", default=None, help="unweighted utilization sums and the literal UBP formula")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brownout-sim", description="Brownout datacenter simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("run", help="simulate every (policy, seed) pair"))
    _add_run_flags(sub.add_parser("sweep", help="simulate across a sweep axis"))

    cmp_ = sub.add_parser("compare", help="paired t-tests between summaries or policies")
    cmp_.add_argument("summaries", nargs="+", help="summary.json files")
    cmp_.add_argument("--metric", default="energy_kwh", help="run total to compare (default energy_kwh)")
    cmp_.add_argument("--pairs", nargs="+", metavar="A:B", help="policy pairs; default every pair")
    cmp_.add_argument("--out", help="write the comparison CSV here")

    gen = sub.add_parser("gen-traces", help="write synthetic traces in PlanetLab format")
    gen.add_argument("out_dir")
    gen.add_argument("--n-vms", type=int, default=100)
    gen.add_argument("--horizon", type=int, default=288)
    gen.add_argument("--base-level", type=float, default=0.7)
    gen.add_argument("--spike-prob", type=float, default=0.3)
    gen.add_argument("--spike-level", type=float, default=0.95)
    gen.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args) -> dict:
    return {
        "policies": args.policies,
        "seeds": args.seeds,
        "lambda": args.lam,
        "threshold": args.threshold,
        "horizon": args.horizon,
        "output": args.out,
        "workers": args.workers,
        "paper_faithful": args.paper_faithful,
    }


def cmd_run(args, sweep: bool = False) -> int:
    spec = load_spec(args.config, _overrides(args))
    if sweep and spec.axis is None:
        raise ConfigError("sweep: config has no sweep.axis")
    if not sweep and spec.axis is not None:
        raise ConfigError("run: config sets sweep.axis; use the sweep command")
    results = dispatch(spec)
    paths = write_artifacts(spec, results)
    for res in results:
        t = res.ledger.totals()
        print(f"{res.key.label(spec.axis)}: energy {t['energy_kwh']:.4f} kWh, discount {t['discount_pct']:.3f}%")
    print(f"summary: {paths['summary']}")
    if "sweep" in paths:
        print(f"sweep table: {paths['sweep']}")
    return EXIT_OK


def _runs_by_group(summary: dict, metric: str) -> dict[str, dict[int, float]]:
    out = {}
    for e in summary["results"]:
        name = e["policy"] if e.get("axis_value") is None else f"{e['policy']}@{e['axis_value']!r}"
        try:
            out[name] = {r["seed"]: float(r[metric]) for r in e["runs"]}
        except KeyError:
            raise ConfigError(f"summary has no run metric {metric!r}") from None
    return out


def compare_summaries(summaries: Sequence[dict], labels: Sequence[str], metric: str = "energy_kwh", pairs: Optional[Sequence[str]] = None) -> list[PairedComparison]:
    """Paired comparisons within one summary, or of matching groups across two."""
    if len(summaries) == 1:
        groups = _runs_by_group(summaries[0], metric)
        if pairs:
            wanted = [tuple(p.split(":", 1)) for p in pairs]
        else:
            wanted = list(itertools.combinations(groups, 2))
    elif len(summaries) == 2:
        a, b = (_runs_by_group(s, metric) for s in summaries)
        groups = {f"{labels[0]}:{k}": v for k, v in a.items()}
        groups.update({f"{labels[1]}:{k}": v for k, v in b.items()})
        wanted = [(f"{labels[0]}:{k}", f"{labels[1]}:{k}") for k in a if k in b]
        if not wanted:
            raise ConfigError("summaries share no policy to compare")
    else:
        raise ConfigError("compare takes one or two summaries")
    rows = []
    for na, nb in wanted:
        if na not in groups or nb not in groups:
            raise ConfigError(f"unknown group in pair {na}:{nb}; have {sorted(groups)}")
        sa, sb = groups[na], groups[nb]
        if sorted(sa) != sorted(sb):
            raise ConfigError(f"{na} and {nb} have different repeats")
        seeds = sorted(sa)
        if len(seeds) < 2:
            raise ConfigError(f"{na} vs {nb}: a paired t-test needs at least 2 repeats")
        rows.append(paired_ttest([sa[s] for s in seeds], [sb[s] for s in seeds], na, nb))
    return rows


def comparison_csv(rows: Sequence[PairedComparison]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_FIELDS)
    for r in rows:
        w.writerow([getattr(r, f) if isinstance(getattr(r, f), (str, int)) else repr(getattr(r, f)) for f in COMPARE_FIELDS])
    return buf.getvalue()


def comparison_table(rows: Sequence[PairedComparison], metric: str) -> str:
    head = f"{'A':<22} {'B':<22} {'mean A':>12} {'mean B':>12} {'diff':>12} {'95% CI':>27} {'p':>8}"
    lines = [f"paired t-tests on {metric}", head, "-" * len(head)]
    for r in rows:
        ci = f"[{r.ci_lo:.4g}, {r.ci_hi:.4g}]"
        lines.append(f"{r.name_a:<22} {r.name_b:<22} {r.mean_a:>12.4f} {r.mean_b:>12.4f} {r.diff:>12.4f} {ci:>27} {r.p_value:>8.4f}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    summaries, labels = [], []
    for p in args.summaries:
        try:
            summaries.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read summary {p}: {e}") from None
        labels.append(Path(p).parent.name or Path(p).stem)
    if len(labels) == 2 and labels[0] == labels[1]:
        labels = ["a", "b"]
    rows = compare_summaries(summaries, labels, args.metric, args.pairs)
    text = comparison_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(comparison_table(rows, args.metric))
    return EXIT_OK


def cmd_gen_traces(args) -> int:
    try:
        traces = synth_traces(args.n_vms, args.horizon, args.base_level, args.spike_prob, args.spike_level, args.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    written = write_trace_dir(traces, args.out_dir)
    print(f"wrote {len(written)} trace files to {args.out_dir}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_run(args, sweep=True)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_gen_traces(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, TraceError, PlacementError, OSError, ArithmeticError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
