"""Round-by-round convergecast simulation with a per-bit radio energy ledger.

A round builds the alive subtree, plans the discipline's windows, assigns
slots and charges every node for what its radio did: transmitting,
receiving, idle listening, sleeping and aggregating. The sink collects but
is never charged and never dies. Nodes whose residual energy reaches zero
die at the end of the round, taking their subtree off the air with them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .scheduling import (
    Discipline,
    greedy_starts,
    idle_is_full_slot,
    idle_listens,
    window_lengths,
)
from .topology import Tree
from .traffic import TrafficModel, TrafficPattern, iter_masks

log = logging.getLogger(__name__)

NJ = 1e-9
CATEGORIES = ("tx", "rx", "idle", "sleep", "agg")


class SinkDeadImpossible(RuntimeError):
    pass


@dataclass(frozen=True)
class EnergyParams:
    e_tx_per_bit: float = 25.0  # nJ/bit
    e_rx_per_bit: float = 25.0  # nJ/bit
    e_agg_per_bit: float = 25.0  # nJ/bit
    e_sleep_per_slot: float = 0.0  # nJ per slot asleep
    initial_energy: float = 5.0  # J
    packet_bits: int = 1024
    control_bits: int = 16
    extra_bit: int = 1  # MTPO "more data follows" flag

    def __post_init__(self):
        for name in ("e_tx_per_bit", "e_rx_per_bit", "e_agg_per_bit", "e_sleep_per_slot",
                     "initial_energy", "control_bits", "extra_bit"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.packet_bits < 1:
            raise ValueError("packet_bits must be >= 1")


@dataclass
class NodeStates:
    residual_energy: np.ndarray  # J
    alive: np.ndarray

    @classmethod
    def fresh(cls, tree: Tree, params: EnergyParams) -> "NodeStates":
        return cls(
            np.full(tree.node_count, float(params.initial_energy)),
            np.ones(tree.node_count, dtype=bool),
        )

    def copy(self) -> "NodeStates":
        return NodeStates(self.residual_energy.copy(), self.alive.copy())


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    alive_count: int
    generated: int
    delivered_to_sink: int
    idle_events: int
    energy_used: dict  # J per category in CATEGORIES
    data_slots: int
    # idle-listen cost of every receiver, the uncharged sink included
    idle_listen_energy: float = 0.0

    @property
    def total_energy(self) -> float:
        return sum(self.energy_used[c] for c in CATEGORIES)


@dataclass
class RunSummary:
    per_round: list = field(default_factory=list)
    first_death_round: Optional[int] = None
    all_dead_round: Optional[int] = None
    cumulative_delivered: int = 0
    cumulative_energy: float = 0.0

    @property
    def rounds_run(self) -> int:
        return len(self.per_round)


# stop policies -------------------------------------------------------------

@dataclass(frozen=True)
class FixedRounds:
    pass


@dataclass(frozen=True)
class UntilAllDead:
    pass


@dataclass(frozen=True)
class UntilKDelivered:
    k: int


StopPolicy = Union[FixedRounds, UntilAllDead, UntilKDelivered]


def parse_stop_policy(text: str) -> StopPolicy:
    text = text.strip()
    if text == "rounds":
        return FixedRounds()
    if text == "all_dead":
        return UntilAllDead()
    if text.startswith("delivered:"):
        k = int(text.split(":", 1)[1])
        if k < 0:
            raise ValueError("delivered:<k> needs k >= 0")
        return UntilKDelivered(k)
    raise ValueError(f"unknown stop policy {text!r}")


# ---------------------------------------------------------------------------

def prune_alive(tree: Tree, states: NodeStates) -> set[int]:
    """Nodes that are alive and reach the sink through alive ancestors only."""
    return set(int(v) for v in np.flatnonzero(_connected_mask(tree, states.alive)))


def _connected_mask(tree: Tree, alive: np.ndarray) -> np.ndarray:
    alive = alive.copy()
    alive[tree.sink] = True
    dead = ~alive
    if not dead.any():
        return alive
    # cut off iff inside the subtree of some dead node: mark preorder ranges
    cut = np.zeros(tree.node_count + 1, dtype=np.int64)
    start = tree.preorder_index[dead]
    stop = start + np.asarray(tree.subtree_size_of)[dead]
    np.add.at(cut, start, 1)
    np.add.at(cut, stop, -1)
    covered = np.cumsum(cut[:-1]) > 0
    mask = np.empty(tree.node_count, dtype=bool)
    mask[tree.preorder] = ~covered
    return mask


class _RoundEngine:
    """Vectorised per-round charging for one (tree, discipline, params) triple.

    TPO and MTPO windows depend only on the alive set, so their slot
    assignment is cached until a node dies.
    """

    def __init__(self, tree: Tree, discipline: Discipline, params: EnergyParams):
        self.tree = tree
        self.discipline = Discipline(discipline)
        self.params = params
        self.parent = tree.parent_array
        self.sink = tree.sink
        self._cache_key: Optional[bytes] = None
        self._cache_slots = 0

    def _data_slots(self, conn: np.ndarray, lengths: np.ndarray) -> int:
        static = self.discipline is not Discipline.ETPO
        if static:
            key = conn.tobytes()
            if key == self._cache_key:
                return self._cache_slots
        order = [v for v in self.tree.bottom_up_order if conn[v]]
        lens = lengths.tolist()
        starts = greedy_starts(order, self.tree.parent_of, lens, self.tree.node_count)
        total = max((starts[v] + lens[v] for v in order), default=0)
        if static:
            self._cache_key, self._cache_slots = key, total
        return total

    def step(self, states: NodeStates, gen_mask: np.ndarray, round_index: int):
        """Charge one round in place; returns (RoundMetrics, newly dead mask)."""
        tree, p, disc = self.tree, self.params, self.discipline
        n, sink = tree.node_count, self.sink
        if not states.alive[sink]:
            raise SinkDeadImpossible("sink marked dead")
        conn = _connected_mask(tree, states.alive)
        gen = gen_mask & states.alive
        gen[sink] = False
        generated = int(gen.sum())

        capacity = tree.subtree_sums(conn.astype(np.int64))
        m = tree.subtree_sums((gen & conn).astype(np.int64))
        leaf = capacity == 1
        link = conn.copy()
        link[sink] = False
        delivered = int(m[sink])

        lengths = np.where(link, window_lengths(disc, m, capacity, leaf), 0)
        data_slots = self._data_slots(conn, lengths) if link.any() else 0

        b_pkt = p.packet_bits + (p.extra_bit if disc is Discipline.MTPO else 0)
        m_link = np.where(link, m, 0)
        ctrl = link & (m > 0) & (~leaf) if disc is Discipline.ETPO else np.zeros(n, dtype=bool)
        idle = link & idle_listens(disc, m, capacity, leaf)
        full_idle = idle & idle_is_full_slot(disc, leaf)
        mini_idle = idle & ~full_idle

        tx_bits = m_link * b_pkt + ctrl * p.control_bits
        rx_bits_link = m_link * b_pkt + ctrl * p.control_bits
        idle_bits_link = full_idle * p.packet_bits + mini_idle * p.control_bits

        rx_bits = np.bincount(self.parent, weights=rx_bits_link, minlength=n)
        idle_bits = np.bincount(self.parent, weights=idle_bits_link, minlength=n)

        e_tx = tx_bits * (p.e_tx_per_bit * NJ)
        e_rx = rx_bits * (p.e_rx_per_bit * NJ)
        e_idle = idle_bits * (p.e_rx_per_bit * NJ)
        idle_listen_energy = float(e_idle.sum())
        e_agg = m_link * (p.packet_bits * p.e_agg_per_bit * NJ)
        if p.e_sleep_per_slot > 0:
            rx_slots = np.bincount(self.parent, weights=m_link, minlength=n)
            idle_slots = np.bincount(self.parent, weights=full_idle.astype(np.int64), minlength=n)
            active = m_link + rx_slots + idle_slots
            e_sleep = np.where(link, (data_slots - active) * (p.e_sleep_per_slot * NJ), 0.0)
        else:
            e_sleep = np.zeros(n)
        charges = (e_tx, e_rx, e_idle, e_sleep, e_agg)
        for arr in charges:
            arr[sink] = 0.0
            arr[~conn] = 0.0

        total = e_tx + e_rx + e_idle + e_sleep + e_agg
        states.residual_energy -= total
        newly_dead = conn & (states.residual_energy <= 0.0)
        newly_dead[sink] = False
        states.alive &= ~newly_dead

        metrics = RoundMetrics(
            round=round_index,
            alive_count=int(conn.sum()),
            generated=generated,
            delivered_to_sink=delivered,
            idle_events=int(idle.sum()),
            energy_used={c: float(a.sum()) for c, a in zip(CATEGORIES, charges)},
            data_slots=int(data_slots),
            idle_listen_energy=idle_listen_energy,
        )
        return metrics, newly_dead


def run_round(tree: Tree, states: NodeStates, pattern: TrafficPattern,
              discipline: Discipline, params: EnergyParams):
    """Simulate one collection round; returns ``(RoundMetrics, new NodeStates)``."""
    new = states.copy()
    gen = np.zeros(tree.node_count, dtype=bool)
    gen[list(pattern.generators)] = True
    metrics, _ = _RoundEngine(tree, discipline, params).step(new, gen, pattern.round_index)
    return metrics, new


def _only_sink_left(tree: Tree, states: NodeStates) -> bool:
    return int(_connected_mask(tree, states.alive).sum()) <= 1


def run_experiment(tree: Tree, model: TrafficModel, discipline: Discipline,
                   params: EnergyParams, rounds: int, seed: int,
                   stop_policy: StopPolicy = FixedRounds(),
                   states: Optional[NodeStates] = None) -> RunSummary:
    """Run rounds until the stop policy fires.

    ``rounds`` is the budget for :class:`FixedRounds` and a safety cap for the
    other policies. ``all_dead_round`` is the round after which no non-sink
    node can reach the sink any more.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    engine = _RoundEngine(tree, discipline, params)
    states = NodeStates.fresh(tree, params) if states is None else states.copy()
    summary = RunSummary()
    if tree.node_count == 1 and isinstance(stop_policy, UntilAllDead):
        return summary
    masks = iter_masks(model, tree, seed)
    for r in range(rounds):
        if isinstance(stop_policy, UntilKDelivered) and summary.cumulative_delivered >= stop_policy.k:
            break
        if isinstance(stop_policy, UntilAllDead) and summary.all_dead_round is not None:
            break
        metrics, newly_dead = engine.step(states, next(masks), r)
        summary.per_round.append(metrics)
        summary.cumulative_delivered += metrics.delivered_to_sink
        summary.cumulative_energy += metrics.total_energy
        if newly_dead.any():
            if summary.first_death_round is None:
                summary.first_death_round = r
            log.debug("round %d: nodes died %s", r, np.flatnonzero(newly_dead).tolist())
            if summary.all_dead_round is None and _only_sink_left(tree, states):
                summary.all_dead_round = r
    return summary


def idle_events_for_masks(tree: Tree, discipline: Discipline, gen_masks: np.ndarray) -> np.ndarray:
    """Per-pattern idle-listen counts on the full tree, for many patterns at once.

    Uses the same counting rule as the round engine, without energy.
    """
    gen_masks = np.asarray(gen_masks, dtype=bool).copy()
    gen_masks[..., tree.sink] = False
    capacity = np.asarray(tree.subtree_size_of)
    leaf = capacity == 1
    link = np.ones(tree.node_count, dtype=bool)
    link[tree.sink] = False
    m = tree.subtree_sums(gen_masks.astype(np.int64))
    idle = idle_listens(discipline, m, capacity, leaf) & link
    return idle.sum(axis=-1)
