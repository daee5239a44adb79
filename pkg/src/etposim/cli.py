"""Command-line experiment runner.

    etposim run CONFIG            per_round.csv + summary.csv
    etposim sweep CONFIG --nodes 7,85 | --p 0,0.5,1
    etposim analyze CONFIG --p 0.25,0.5
    etposim schedule CONFIG --round 0 --scheduler etpo
    etposim dump-config CONFIG

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .analytics import IdleSemantics, expected_idle
from .config import BadValue, ConfigError, ExperimentConfig, dump_config, load_config, parse_schedulers
from .scheduling import Discipline, dump_schedule, plan_schedule
from .simkernel import RunSummary, run_experiment
from .topology import BalancedSpec, NotBalanced, TopologyError, Tree
from .traffic import TrafficError, generate_pattern

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

PER_ROUND_HEADER = ("run_id,scheduler,round,alive,generated,delivered,idle_events,"
                    "e_tx_j,e_rx_j,e_idle_j,e_sleep_j,e_agg_j,data_slots")
SUMMARY_HEADER = ("run_id,scheduler,nodes,p,seed,rounds_run,first_death_round,"
                  "all_dead_round,total_delivered,total_energy_j")
SWEEP_HEADER = ("axis,axis_value,scheduler,mean_energy_per_delivered_j,total_delivered,"
                "first_death_round,mean_idle_events")
ANALYSIS_HEADER = "tree,p,semantics,expected_idle"


def fmt_energy(x: float) -> str:
    return f"{x:.9g}"


def _opt(x: Optional[int]) -> str:
    return "" if x is None else str(x)


def _p_text(cfg: ExperimentConfig) -> str:
    return repr(cfg.p) if cfg.traffic_model == "bernoulli" else ""


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# run

def simulate(cfg: ExperimentConfig, discipline: Discipline, tree: Optional[Tree] = None) -> RunSummary:
    tree = cfg.build_tree() if tree is None else tree
    return run_experiment(tree, cfg.traffic(), discipline, cfg.energy, cfg.rounds,
                          cfg.seed, cfg.stop_policy)


def per_round_rows(run_id: int, discipline: Discipline, summary: RunSummary) -> list[str]:
    rows = []
    for m in summary.per_round:
        e = m.energy_used
        rows.append(",".join([
            str(run_id), discipline.value, str(m.round), str(m.alive_count), str(m.generated),
            str(m.delivered_to_sink), str(m.idle_events),
            *(fmt_energy(e[c]) for c in ("tx", "rx", "idle", "sleep", "agg")),
            str(m.data_slots),
        ]))
    return rows


def cmd_run(cfg: ExperimentConfig) -> dict[str, str]:
    """Run every configured discipline; returns {filename: path}."""
    tree = cfg.build_tree()
    per_round = [PER_ROUND_HEADER]
    summary_rows = [SUMMARY_HEADER]
    for run_id, disc in enumerate(cfg.schedulers):
        s = simulate(cfg, disc, tree)
        per_round.extend(per_round_rows(run_id, disc, s))
        summary_rows.append(",".join([
            str(run_id), disc.value, str(tree.node_count), _p_text(cfg), str(cfg.seed),
            str(s.rounds_run), _opt(s.first_death_round), _opt(s.all_dead_round),
            str(s.cumulative_delivered), fmt_energy(s.cumulative_energy),
        ]))
    os.makedirs(cfg.out_dir, exist_ok=True)
    paths = {
        "per_round.csv": os.path.join(cfg.out_dir, "per_round.csv"),
        "summary.csv": os.path.join(cfg.out_dir, "summary.csv"),
    }
    _write(paths["per_round.csv"], "\n".join(per_round) + "\n")
    _write(paths["summary.csv"], "\n".join(summary_rows) + "\n")
    return paths


# ---------------------------------------------------------------------------
# sweep

def balanced_for_count(n: int, prefer_r: Optional[int] = None) -> BalancedSpec:
    """A balanced (R, L) with exactly ``n`` nodes, preferring ``prefer_r``, else the smallest R >= 2."""
    if n < 1:
        raise BadValue("nodes", "node count must be >= 1")
    if n == 1:
        return BalancedSpec(1, 0)
    if n == 2:
        return BalancedSpec(1, 1)
    candidates = ([prefer_r] if prefer_r and prefer_r >= 2 else []) + list(range(2, n))
    for r in candidates:
        total, width, l = 1, 1, 0
        while total < n:
            width *= r
            total += width
            l += 1
        if total == n:
            return BalancedSpec(r, l)
    raise AssertionError("a star always matches")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    axis_value: str
    scheduler: Discipline
    mean_energy_per_delivered_j: float
    total_delivered: int
    first_death_round: Optional[int]
    mean_idle_events: float
    idle_energy_j: float

    def csv(self) -> str:
        return ",".join([
            self.axis, self.axis_value, self.scheduler.value,
            fmt_energy(self.mean_energy_per_delivered_j), str(self.total_delivered),
            _opt(self.first_death_round), fmt_energy(self.mean_idle_events),
        ])


def _sweep_config(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    if axis == "p":
        try:
            p = float(value)
        except ValueError:
            raise BadValue("p", f"{value!r} is not a number") from None
        if not 0.0 <= p <= 1.0:
            raise BadValue("p", f"{value} outside [0, 1]")
        return cfg.with_overrides(p=p)
    try:
        n = int(value)
    except ValueError:
        raise BadValue("nodes", f"{value!r} is not an integer") from None
    if cfg.topology_kind == "balanced":
        spec = balanced_for_count(n, cfg.r)
        return cfg.with_overrides(r=spec.r, l=spec.l)
    if cfg.topology_kind == "random":
        if n < 1:
            raise BadValue("nodes", "node count must be >= 1")
        return cfg.with_overrides(n=n)
    raise BadValue("nodes", "a nodes sweep needs a balanced or random topology")


def _sweep_one(job) -> SweepRow:
    cfg, axis, value, disc = job
    s = simulate(cfg, disc)
    energy = s.cumulative_energy
    rounds = s.rounds_run
    return SweepRow(
        axis=axis,
        axis_value=value,
        scheduler=disc,
        mean_energy_per_delivered_j=energy / s.cumulative_delivered if s.cumulative_delivered else math.nan,
        total_delivered=s.cumulative_delivered,
        first_death_round=s.first_death_round,
        mean_idle_events=sum(m.idle_events for m in s.per_round) / rounds if rounds else math.nan,
        idle_energy_j=math.fsum(m.idle_listen_energy for m in s.per_round),
    )


def sweep_rows(cfg: ExperimentConfig, axis: str, values: Sequence[str],
               disciplines: Optional[Sequence[Discipline]] = None, jobs: int = 1) -> list[SweepRow]:
    if axis not in ("nodes", "p"):
        raise BadValue("axis", "expected 'nodes' or 'p'")
    if not values:
        raise BadValue(axis, "axis list is empty")
    disciplines = tuple(disciplines or cfg.schedulers)
    work = []
    for value in values:
        sub = _sweep_config(cfg, axis, str(value).strip())
        for disc in disciplines:
            work.append((sub, axis, str(value).strip(), disc))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, work))
    return [_sweep_one(w) for w in work]


def cmd_sweep(cfg: ExperimentConfig, axis: str, values: Sequence[str],
              disciplines: Optional[Sequence[Discipline]] = None, jobs: int = 1) -> str:
    rows = sweep_rows(cfg, axis, values, disciplines, jobs)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "sweep.csv")
    _write(path, "\n".join([SWEEP_HEADER, *(r.csv() for r in rows)]) + "\n")
    return path


# ---------------------------------------------------------------------------
# analyze

def analysis_rows(tree: Tree, label: str, ps: Sequence[str]) -> list[str]:
    rows = []
    for p_text in ps:
        p_text = p_text.strip()
        try:
            p = float(p_text)
        except ValueError:
            raise BadValue("p", f"{p_text!r} is not a number") from None
        if not 0.0 <= p <= 1.0:
            raise BadValue("p", f"{p_text} outside [0, 1]")
        for sem in IdleSemantics:
            try:
                value = expected_idle(tree, p, sem)
            except NotBalanced:
                log.warning("%s: %s skipped, tree is not balanced", label, sem.value)
                continue
            rows.append(f"{label},{p_text},{sem.value},{value!r}")
    return rows


def cmd_analyze(cfg: ExperimentConfig, ps: Sequence[str], tree: Optional[Tree] = None) -> str:
    tree = cfg.build_tree() if tree is None else tree
    rows = analysis_rows(tree, cfg.tree_label(), ps)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "analysis.csv")
    _write(path, "\n".join([ANALYSIS_HEADER, *rows]) + "\n")
    return path


# ---------------------------------------------------------------------------

def _read_config(path: str, overrides: Sequence[str]) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if overrides:
        text += "\n" + "\n".join(overrides) + "\n"
    return load_config(text)


def _split(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="etposim", description="TDMA convergecast scheduling simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="key=value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")

    common(sub.add_parser("run", help="simulate and write per_round.csv and summary.csv"))
    sw = sub.add_parser("sweep", help="sweep node count or traffic probability")
    common(sw)
    axis = sw.add_mutually_exclusive_group(required=True)
    axis.add_argument("--nodes", help="comma-separated node counts")
    axis.add_argument("--p", help="comma-separated probabilities")
    sw.add_argument("--schedulers", help="comma-separated disciplines (default: config)")
    sw.add_argument("--jobs", type=int, default=1)
    an = sub.add_parser("analyze", help="closed-form expected idle listening")
    common(an)
    an.add_argument("--p", required=True, help="comma-separated probabilities")
    sc = sub.add_parser("schedule", help="print one round's slot schedule")
    common(sc)
    sc.add_argument("--round", type=int, default=0)
    sc.add_argument("--scheduler", default="etpo")
    common(sub.add_parser("dump-config", help="print the canonical configuration"))
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _read_config(args.config, args.set)
        if args.command == "run":
            for path in cmd_run(cfg).values():
                print(path)
        elif args.command == "sweep":
            discs = parse_schedulers("--schedulers", args.schedulers) if args.schedulers else None
            if args.nodes is not None:
                print(cmd_sweep(cfg, "nodes", _split(args.nodes), discs, args.jobs))
            else:
                print(cmd_sweep(cfg, "p", _split(args.p), discs, args.jobs))
        elif args.command == "analyze":
            print(cmd_analyze(cfg, _split(args.p)))
        elif args.command == "schedule":
            tree = cfg.build_tree()
            pattern = generate_pattern(cfg.traffic(), tree, args.round, cfg.seed)
            disc = Discipline.parse(args.scheduler)
            sys.stdout.write(dump_schedule(plan_schedule(tree, disc, pattern)))
        else:
            sys.stdout.write(dump_config(cfg))
    except (ConfigError, TopologyError, TrafficError, ValueError) as exc:
        print(f"etposim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"etposim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
