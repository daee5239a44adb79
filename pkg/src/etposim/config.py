"""Flat ``key=value`` experiment configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Unknown keys are rejected and every value is validated before anything runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .scheduling import ALL_DISCIPLINES, Discipline
from .simkernel import EnergyParams, StopPolicy, parse_stop_policy
from .topology import BalancedSpec, Tree, gen_balanced, gen_random, load_topology
from .traffic import BERNOULLI, EXPLICIT, MARKOV_BURST, TrafficModel, parse_explicit_patterns


class ConfigError(ValueError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown key {name!r}")


class BadValue(ConfigError):
    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"bad value for {key}: {reason}")


class MissingTopology(ConfigError):
    def __init__(self):
        super().__init__("topology.kind is required")


TOPOLOGY_KINDS = ("balanced", "random", "file")
TRAFFIC_MODELS = {"bernoulli": BERNOULLI, "burst": MARKOV_BURST, "file": EXPLICIT}

# key -> default (as text); None means "no default"
DEFAULTS = {
    "topology.kind": None,
    "topology.r": "2",
    "topology.l": "2",
    "topology.n": "32",
    "topology.max_children": "3",
    "topology.path": None,
    "scheduler": "all",
    "traffic.model": "bernoulli",
    "traffic.p": "0.5",
    "traffic.p_on": "0.1",
    "traffic.p_off": "0.1",
    "traffic.path": None,
    "sim.rounds": "1000",
    "sim.stop": "rounds",
    "sim.seed": "0",
    "energy.e_tx_nj": "25",
    "energy.e_rx_nj": "25",
    "energy.e_agg_nj": "25",
    "energy.e_sleep_nj": "0",
    "energy.initial_j": "5",
    "packet.bits": "1024",
    "packet.control_bits": "16",
    "out.dir": "out",
}

_TOPOLOGY_KEYS = {
    "balanced": ("topology.r", "topology.l"),
    "random": ("topology.n", "topology.max_children"),
    "file": ("topology.path",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    topology_kind: str
    r: int = 2
    l: int = 2
    n: int = 32
    max_children: int = 3
    topology_path: Optional[str] = None
    schedulers: tuple = ALL_DISCIPLINES
    scheduler_text: str = "all"
    traffic_model: str = "bernoulli"
    p: float = 0.5
    p_on: float = 0.1
    p_off: float = 0.1
    traffic_path: Optional[str] = None
    rounds: int = 1000
    stop_text: str = "rounds"
    seed: int = 0
    energy: EnergyParams = field(default_factory=EnergyParams)
    out_dir: str = "out"

    @property
    def stop_policy(self) -> StopPolicy:
        return parse_stop_policy(self.stop_text)

    def build_tree(self) -> Tree:
        if self.topology_kind == "balanced":
            return gen_balanced(BalancedSpec(self.r, self.l))
        if self.topology_kind == "random":
            return gen_random(self.n, self.max_children, self.seed)
        return load_topology(self.topology_path)

    def traffic(self) -> TrafficModel:
        kind = TRAFFIC_MODELS[self.traffic_model]
        if kind == EXPLICIT:
            with open(self.traffic_path, encoding="utf-8") as fh:
                rounds = parse_explicit_patterns(fh.read())
            return TrafficModel(EXPLICIT, explicit_rounds=rounds)
        return TrafficModel(kind, p=self.p, p_on=self.p_on, p_off=self.p_off)

    def tree_label(self) -> str:
        if self.topology_kind == "balanced":
            return f"balanced:r={self.r}:l={self.l}"
        if self.topology_kind == "random":
            return f"random:n={self.n}:max_children={self.max_children}:seed={self.seed}"
        return f"file:{self.topology_path}"

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _parse_lines(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadValue(f"line {lineno}", "expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise UnknownKey(key)
        values[key] = value
    return values


def _int(key: str, text: str, lo: int = 0) -> int:
    try:
        val = int(text)
    except ValueError:
        raise BadValue(key, f"{text!r} is not an integer") from None
    if val < lo:
        raise BadValue(key, f"must be >= {lo}")
    return val


def _float(key: str, text: str, lo: float = 0.0, hi: Optional[float] = None) -> float:
    try:
        val = float(text)
    except ValueError:
        raise BadValue(key, f"{text!r} is not a number") from None
    if val != val or val < lo or (hi is not None and val > hi):
        rng = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
        raise BadValue(key, f"{text} outside {rng}")
    return val


def parse_schedulers(key: str, text: str) -> tuple:
    if text.strip().lower() == "all":
        return ALL_DISCIPLINES
    try:
        return tuple(Discipline.parse(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise BadValue(key, str(exc)) from None


def load_config(text: str) -> ExperimentConfig:
    given = _parse_lines(text)
    kind = given.get("topology.kind")
    if kind is None:
        raise MissingTopology()
    if kind not in TOPOLOGY_KINDS:
        raise BadValue("topology.kind", f"expected one of {TOPOLOGY_KINDS}")
    for other, keys in _TOPOLOGY_KEYS.items():
        if other != kind:
            for key in keys:
                if key in given:
                    raise BadValue(key, f"not used by topology.kind={kind}")
    vals = {k: given.get(k, d) for k, d in DEFAULTS.items()}

    if kind == "file" and not vals["topology.path"]:
        raise BadValue("topology.path", "required for topology.kind=file")
    model = vals["traffic.model"]
    if model not in TRAFFIC_MODELS:
        raise BadValue("traffic.model", f"expected one of {tuple(TRAFFIC_MODELS)}")
    if model == "file" and not vals["traffic.path"]:
        raise BadValue("traffic.path", "required for traffic.model=file")
    try:
        parse_stop_policy(vals["sim.stop"])
    except ValueError as exc:
        raise BadValue("sim.stop", str(exc)) from None
    schedulers = parse_schedulers("scheduler", vals["scheduler"])
    if not schedulers:
        raise BadValue("scheduler", "no scheduler named")

    try:
        energy = EnergyParams(
            e_tx_per_bit=_float("energy.e_tx_nj", vals["energy.e_tx_nj"]),
            e_rx_per_bit=_float("energy.e_rx_nj", vals["energy.e_rx_nj"]),
            e_agg_per_bit=_float("energy.e_agg_nj", vals["energy.e_agg_nj"]),
            e_sleep_per_slot=_float("energy.e_sleep_nj", vals["energy.e_sleep_nj"]),
            initial_energy=_float("energy.initial_j", vals["energy.initial_j"]),
            packet_bits=_int("packet.bits", vals["packet.bits"], lo=1),
            control_bits=_int("packet.control_bits", vals["packet.control_bits"]),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise BadValue("energy", str(exc)) from None

    return ExperimentConfig(
        topology_kind=kind,
        r=_int("topology.r", vals["topology.r"], lo=1),
        l=_int("topology.l", vals["topology.l"]),
        n=_int("topology.n", vals["topology.n"], lo=1),
        max_children=_int("topology.max_children", vals["topology.max_children"], lo=1),
        topology_path=vals["topology.path"],
        schedulers=schedulers,
        scheduler_text=vals["scheduler"].strip().lower(),
        traffic_model=model,
        p=_float("traffic.p", vals["traffic.p"], 0.0, 1.0),
        p_on=_float("traffic.p_on", vals["traffic.p_on"], 0.0, 1.0),
        p_off=_float("traffic.p_off", vals["traffic.p_off"], 0.0, 1.0),
        traffic_path=vals["traffic.path"],
        rounds=_int("sim.rounds", vals["sim.rounds"]),
        stop_text=vals["sim.stop"].strip(),
        seed=_int("sim.seed", vals["sim.seed"]),
        energy=energy,
        out_dir=vals["out.dir"],
    )


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: every applicable key, sorted, defaults filled in."""
    e = cfg.energy
    items = {
        "topology.kind": cfg.topology_kind,
        "scheduler": cfg.scheduler_text,
        "traffic.model": cfg.traffic_model,
        "traffic.p": _num(cfg.p),
        "traffic.p_on": _num(cfg.p_on),
        "traffic.p_off": _num(cfg.p_off),
        "sim.rounds": str(cfg.rounds),
        "sim.stop": cfg.stop_text,
        "sim.seed": str(cfg.seed),
        "energy.e_tx_nj": _num(e.e_tx_per_bit),
        "energy.e_rx_nj": _num(e.e_rx_per_bit),
        "energy.e_agg_nj": _num(e.e_agg_per_bit),
        "energy.e_sleep_nj": _num(e.e_sleep_per_slot),
        "energy.initial_j": _num(e.initial_energy),
        "packet.bits": str(e.packet_bits),
        "packet.control_bits": str(e.control_bits),
        "out.dir": cfg.out_dir,
    }
    if cfg.topology_kind == "balanced":
        items.update({"topology.r": str(cfg.r), "topology.l": str(cfg.l)})
    elif cfg.topology_kind == "random":
        items.update({"topology.n": str(cfg.n), "topology.max_children": str(cfg.max_children)})
    else:
        items["topology.path"] = cfg.topology_path
    if cfg.traffic_path:
        items["traffic.path"] = cfg.traffic_path
    return "".join(f"{k}={v}\n" for k, v in sorted(items.items()))
