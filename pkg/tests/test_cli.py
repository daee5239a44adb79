import csv
import io
from pathlib import Path

import pytest

from etposim import cli
from etposim.config import (
    BadValue,
    MissingTopology,
    UnknownKey,
    dump_config,
    load_config,
)
from etposim.scheduling import ALL_DISCIPLINES, Discipline
from etposim.topology import build_tree, serialize_topology

from conftest import WORKED_PARENTS

GOLDEN = Path(__file__).parent / "golden"
MINIMAL = "topology.kind=balanced\ntopology.r=2\ntopology.l=2\nscheduler=tpo\n"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def header(path):
    return Path(path).read_text().split("\n", 1)[0]


# config -------------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = load_config(MINIMAL)
    assert cfg.schedulers == (Discipline.TPO,)
    assert cfg.energy.initial_energy == 5.0 and cfg.energy.packet_bits == 1024
    assert cfg.energy.e_tx_per_bit == cfg.energy.e_agg_per_bit == 25.0
    assert cfg.p == 0.5 and cfg.rounds == 1000
    assert cfg.build_tree().node_count == 7


def test_dump_matches_golden_and_is_stable():
    text = dump_config(load_config(MINIMAL))
    assert text == (GOLDEN / "defaults.cfg").read_text()
    assert dump_config(load_config(text)) == text


def test_comments_and_blank_lines():
    cfg = load_config("# experiment\n\ntopology.kind = random  # trailing\ntopology.n=9\n")
    assert cfg.topology_kind == "random" and cfg.n == 9


@pytest.mark.parametrize("text, exc", [
    (MINIMAL + "traffic.p=1.5\n", BadValue),
    (MINIMAL + "traffic.p=abc\n", BadValue),
    (MINIMAL + "colour=blue\n", UnknownKey),
    ("scheduler=tpo\n", MissingTopology),
    (MINIMAL + "topology.n=5\n", BadValue),
    ("topology.kind=file\n", BadValue),
    (MINIMAL + "scheduler=csma\n", BadValue),
    (MINIMAL + "sim.stop=never\n", BadValue),
    (MINIMAL + "sim.seed=-1\n", BadValue),
    (MINIMAL + "packet.bits=0\n", BadValue),
    (MINIMAL + "traffic.model=file\n", BadValue),
    (MINIMAL + "just words\n", BadValue),
])
def test_config_errors(text, exc):
    with pytest.raises(exc):
        load_config(text)


def test_unknown_key_names_it():
    with pytest.raises(UnknownKey) as err:
        load_config(MINIMAL + "sim.speed=3\n")
    assert err.value.name == "sim.speed"


# run ----------------------------------------------------------------------

def _cfg(tmp_path, extra=""):
    return load_config(MINIMAL.replace("scheduler=tpo\n", "") + f"out.dir={tmp_path}\n" + extra)


def test_run_headers_and_rows(tmp_path):
    cfg = _cfg(tmp_path, "sim.rounds=20\nscheduler=all\n")
    paths = cli.cmd_run(cfg)
    assert header(paths["per_round.csv"]) == cli.PER_ROUND_HEADER
    assert header(paths["summary.csv"]) == cli.SUMMARY_HEADER
    rows = read_csv(paths["per_round.csv"])
    assert len(rows) == 60
    assert [r["scheduler"] for r in read_csv(paths["summary.csv"])] == ["tpo", "mtpo", "etpo"]


def test_run_singleton(tmp_path):
    topo = tmp_path / "one.csv"
    topo.write_text("node_id,parent_id\n0,-1\n")
    cfg = load_config(f"topology.kind=file\ntopology.path={topo}\nsim.rounds=5\nout.dir={tmp_path}\n")
    summary = read_csv(cli.cmd_run(cfg)["summary.csv"])
    assert all(r["total_delivered"] == "0" for r in summary)


def test_run_chain_full_traffic(tmp_path):
    topo = tmp_path / "chain.csv"
    topo.write_text(serialize_topology(build_tree([None, 0, 1])))
    cfg = load_config(
        f"topology.kind=file\ntopology.path={topo}\nscheduler=tpo\ntraffic.p=1\n"
        f"sim.rounds=10\nout.dir={tmp_path}\n"
    )
    rows = read_csv(cli.cmd_run(cfg)["per_round.csv"])
    assert len(rows) == 10
    assert all(r["delivered"] == "2" and r["idle_events"] == "0" for r in rows)
    # B: tx 25.6 uJ; A: rx 25.6 + tx 51.2 = 76.8 uJ of radio; agg 25.6 + 51.2
    assert rows[0]["e_tx_j"] == "7.68e-05" and rows[0]["e_agg_j"] == "7.68e-05"
    assert rows[0]["e_rx_j"] == "2.56e-05" and rows[0]["data_slots"] == "3"


def test_run_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        cli.cmd_run(load_config(MINIMAL + f"sim.rounds=50\nscheduler=all\nout.dir={d}\n"))
    for name in ("per_round.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_burst_and_file_traffic(tmp_path):
    pats = tmp_path / "pats.csv"
    pats.write_text("round,node_id\n0,3\n0,4\n1,5\n")
    cfg = _cfg(tmp_path, f"traffic.model=file\ntraffic.path={pats}\nsim.rounds=4\nscheduler=etpo\n")
    rows = read_csv(cli.cmd_run(cfg)["per_round.csv"])
    assert [r["generated"] for r in rows] == ["2", "1", "2", "1"]
    assert read_csv(Path(tmp_path) / "summary.csv")[0]["p"] == ""
    cfg = _cfg(tmp_path, "traffic.model=burst\ntraffic.p_on=0.3\ntraffic.p_off=0.3\nsim.rounds=30\n")
    assert len(read_csv(cli.cmd_run(cfg)["per_round.csv"])) == 90


def test_stop_policy_delivered(tmp_path):
    cfg = _cfg(tmp_path, "sim.stop=delivered:150\nsim.rounds=100000\nscheduler=etpo\n")
    s = read_csv(cli.cmd_run(cfg)["summary.csv"])[0]
    assert int(s["total_delivered"]) >= 150


# sweep --------------------------------------------------------------------

def test_balanced_for_count():
    assert cli.balanced_for_count(7).node_count == 7
    assert cli.balanced_for_count(85) == cli.balanced_for_count(85, 4)
    assert cli.balanced_for_count(85).node_count == 85
    assert cli.balanced_for_count(32).node_count == 32  # star fallback
    assert cli.balanced_for_count(1).node_count == 1


def test_sweep_nodes_rows(tmp_path):
    cfg = _cfg(tmp_path, "sim.rounds=30\n")
    path = cli.cmd_sweep(cfg, "nodes", ["7", "85"])
    assert header(path) == cli.SWEEP_HEADER
    rows = read_csv(path)
    assert len(rows) == 6
    assert [(r["axis_value"], r["scheduler"]) for r in rows] == [
        (n, d.value) for n in ("7", "85") for d in ALL_DISCIPLINES
    ]


def test_sweep_p_endpoints_equal_idle(tmp_path):
    cfg = _cfg(tmp_path, "sim.rounds=40\n")
    rows = read_csv(cli.cmd_sweep(cfg, "p", ["0", "1"]))
    for value in ("0", "1"):
        idle = {r["mean_idle_events"] for r in rows if r["axis_value"] == value}
        assert len(idle) == 1
    assert {r["mean_idle_events"] for r in rows if r["axis_value"] == "0"} == {"6"}


def test_sweep_idle_energy_etpo_below_tpo(tmp_path):
    cfg = _cfg(tmp_path, "sim.rounds=200\n")
    rows = cli.sweep_rows(cfg, "nodes", ["7", "21", "85", "341"])
    by = {(r.axis_value, r.scheduler): r for r in rows}
    for n in ("7", "21", "85", "341"):
        assert by[n, Discipline.ETPO].idle_energy_j < by[n, Discipline.TPO].idle_energy_j
        assert by[n, Discipline.ETPO].mean_idle_events < by[n, Discipline.TPO].mean_idle_events


def test_sweep_star_idle_energy_ties(tmp_path):
    # every uplink of a star carries one node, so both rules listen on the same links
    cfg = _cfg(tmp_path, "sim.rounds=100\n")
    rows = cli.sweep_rows(cfg, "nodes", ["6"], [Discipline.TPO, Discipline.ETPO])
    assert rows[0].idle_energy_j == rows[1].idle_energy_j > 0


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = _cfg(tmp_path, "sim.rounds=30\n")
    serial = cli.sweep_rows(cfg, "nodes", ["7", "15", "21"])
    parallel = cli.sweep_rows(cfg, "nodes", ["7", "15", "21"], jobs=2)
    assert serial == parallel


def test_sweep_errors(tmp_path):
    cfg = _cfg(tmp_path)
    with pytest.raises(BadValue):
        cli.sweep_rows(cfg, "nodes", [])
    with pytest.raises(BadValue):
        cli.sweep_rows(cfg, "p", ["2"])
    with pytest.raises(BadValue):
        cli.sweep_rows(cfg, "seeds", ["1"])


# analyze ------------------------------------------------------------------

def _worked_cfg(tmp_path):
    topo = tmp_path / "worked.csv"
    topo.write_text(serialize_topology(build_tree(WORKED_PARENTS)))
    return load_config(f"topology.kind=file\ntopology.path={topo}\nout.dir={tmp_path}\n")


def test_analyze_worked_example(tmp_path):
    rows = read_csv(cli.cmd_analyze(_worked_cfg(tmp_path), ["0.5"]))
    got = {r["semantics"]: float(r["expected_idle"]) for r in rows}
    assert got == {"tpo_per_link": 8.0859375, "subtree_empty_per_link": 3.9140625}
    assert header(Path(tmp_path) / "analysis.csv") == cli.ANALYSIS_HEADER


def test_analyze_p1_all_zero(tmp_path):
    rows = read_csv(cli.cmd_analyze(_cfg(tmp_path), ["1"]))
    assert len(rows) == 4
    assert all(float(r["expected_idle"]) == 0.0 for r in rows)


def test_analyze_balanced_closed_forms(tmp_path):
    rows = read_csv(cli.cmd_analyze(_cfg(tmp_path), ["0.5"]))
    got = {r["semantics"]: float(r["expected_idle"]) for r in rows}
    assert got["paper_eq2_balanced"] == 3.5 and got["paper_eq3_balanced"] == 2.0


# main / exit codes ----------------------------------------------------------

def test_main_run(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(MINIMAL + f"sim.rounds=5\nout.dir={tmp_path / 'out'}\n")
    assert cli.main(["run", str(cfg)]) == 0
    assert (tmp_path / "out" / "summary.csv").exists()


def test_main_overrides_and_dump(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(MINIMAL)
    assert cli.main(["dump-config", str(cfg), "--set", "traffic.p=0.25"]) == 0
    assert "traffic.p=0.25" in capsys.readouterr().out


def test_main_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(MINIMAL + "traffic.p=1.5\n")
    assert cli.main(["run", str(cfg)]) == 2
    assert "traffic.p" in capsys.readouterr().err


def test_main_io_error(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(MINIMAL + f"sim.rounds=2\nout.dir={blocker}/sub\n")
    assert cli.main(["run", str(cfg)]) == 3


def test_main_sweep_analyze_schedule(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(MINIMAL + f"sim.rounds=5\nout.dir={tmp_path}\n")
    assert cli.main(["sweep", str(cfg), "--nodes", "7,15", "--schedulers", "tpo,etpo"]) == 0
    assert len(read_csv(tmp_path / "sweep.csv")) == 4
    assert cli.main(["analyze", str(cfg), "--p", "0,0.5"]) == 0
    assert len(read_csv(tmp_path / "analysis.csv")) == 8
    capsys.readouterr()
    assert cli.main(["schedule", str(cfg), "--scheduler", "tpo"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("slot,child,parent,kind\n")
