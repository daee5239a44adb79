"""Per-round TDMA convergecast schedules for the TPO, MTPO and ETPO disciplines.

Each alive non-sink node ``v`` gets one window of consecutive slots on its
uplink ``v -> parent``. How long the window is, and when the parent ends up
listening to an empty slot, depends on the discipline:

* TPO reserves the worst case ``K`` (alive subtree size). The parent stops at
  the first silent slot, so it idles once whenever ``m < K``.
* MTPO reserves ``K`` as well, but every packet carries a "more follows" bit;
  the parent idles only when the child has nothing at all (``m == 0``).
* ETPO keeps a single probed slot for leaf uplinks and sizes every other
  window to the exact count ``m`` reported upward beforehand. An empty
  non-leaf subtree costs one control mini-slot of listening.

Slots are assigned greedily bottom-up, earliest feasible start, under the
node-exclusive conflict model (two links conflict iff they share a node).
"""
from __future__ import annotations

import bisect
import enum
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .topology import Tree
from .traffic import TrafficPattern


class Discipline(str, enum.Enum):
    TPO = "tpo"
    MTPO = "mtpo"
    ETPO = "etpo"

    @classmethod
    def parse(cls, text: str) -> "Discipline":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown discipline {text!r}") from None


ALL_DISCIPLINES = (Discipline.TPO, Discipline.MTPO, Discipline.ETPO)


class DisconnectedAliveSet(ValueError):
    pass


@dataclass(frozen=True)
class LinkWindow:
    child: int
    parent: int
    length_slots: int
    expected_packets: int
    capacity: int
    child_is_leaf: bool
    has_control_exchange: bool = False
    start_slot: Optional[int] = None

    @property
    def end_slot(self) -> int:
        return self.start_slot + self.length_slots


@dataclass
class Schedule:
    discipline: Discipline
    windows: list
    total_data_slots: int
    # slot -> [(transmitter, receiver, kind)], kind is "data" (reserved) or "control"
    activity: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# discipline rules, vectorised over links

def window_lengths(discipline: Discipline, m, capacity, leaf) -> np.ndarray:
    m = np.asarray(m)
    capacity = np.asarray(capacity)
    if discipline is Discipline.ETPO:
        return np.where(leaf, 1, m)
    return capacity.copy()


def idle_listens(discipline: Discipline, m, capacity, leaf) -> np.ndarray:
    """True where the parent of a link listens to one empty slot this round."""
    m = np.asarray(m)
    if discipline is Discipline.TPO:
        return m < np.asarray(capacity)
    return m == 0


def idle_is_full_slot(discipline: Discipline, leaf) -> np.ndarray:
    """Whether an idle listen lasts a whole data slot (vs an ETPO control mini-slot)."""
    leaf = np.asarray(leaf, dtype=bool)
    if discipline is Discipline.ETPO:
        return leaf
    return np.ones(leaf.shape, dtype=bool)


def idle_probe_offset(discipline: Discipline, m: int) -> int:
    """Slot offset inside the window at which the idle listen happens."""
    return m if discipline is Discipline.TPO else 0


# ---------------------------------------------------------------------------

def alive_counts(tree: Tree, alive_mask: np.ndarray, gen_mask: np.ndarray):
    """(K, m, leaf) per node on the alive subtree; only meaningful where alive."""
    alive_i = alive_mask.astype(np.int64)
    capacity = tree.subtree_sums(alive_i)
    m = tree.subtree_sums((gen_mask & alive_mask).astype(np.int64))
    leaf = capacity == 1
    return capacity, m, leaf


def _check_alive(tree: Tree, alive: Iterable[int]) -> np.ndarray:
    mask = np.zeros(tree.node_count, dtype=bool)
    mask[list(alive)] = True
    if not mask[tree.sink]:
        raise DisconnectedAliveSet("sink is not in the alive set")
    for v in np.flatnonzero(mask):
        p = tree.parent_of[v]
        if p is not None and not mask[p]:
            raise DisconnectedAliveSet(f"alive node {v} hangs off non-alive parent {p}")
    return mask


def window_plan(tree: Tree, discipline: Discipline, pattern: TrafficPattern,
                alive: Optional[Iterable[int]] = None) -> list[LinkWindow]:
    """Unslotted windows, one per alive non-sink node, in bottom-up order."""
    alive_mask = _check_alive(tree, range(tree.node_count) if alive is None else alive)
    gen_mask = np.zeros(tree.node_count, dtype=bool)
    gen_mask[list(pattern.generators)] = True
    gen_mask[tree.sink] = False
    capacity, m, leaf = alive_counts(tree, alive_mask, gen_mask)
    lengths = window_lengths(discipline, m, capacity, leaf)
    etpo = discipline is Discipline.ETPO
    return [
        LinkWindow(
            child=v,
            parent=tree.parent_of[v],
            length_slots=int(lengths[v]),
            expected_packets=int(m[v]),
            capacity=int(capacity[v]),
            child_is_leaf=bool(leaf[v]),
            has_control_exchange=etpo and not leaf[v],
        )
        for v in tree.bottom_up_order
        if alive_mask[v]
    ]


class _Timeline:
    """Disjoint, coalesced busy intervals [start, end) of one node."""

    __slots__ = ("starts", "ends")

    def __init__(self):
        self.starts: list[int] = []
        self.ends: list[int] = []

    def next_overlap_end(self, t: int, length: int) -> Optional[int]:
        j = bisect.bisect_right(self.ends, t)
        if j < len(self.starts) and self.starts[j] < t + length:
            return self.ends[j]
        return None

    def add(self, s: int, e: int) -> None:
        j = bisect.bisect_left(self.starts, s)
        if j > 0 and self.ends[j - 1] == s:
            j -= 1
            s = self.starts[j]
            del self.starts[j], self.ends[j]
        if j < len(self.starts) and self.starts[j] == e:
            e = self.ends[j]
            del self.starts[j], self.ends[j]
        self.starts.insert(j, s)
        self.ends.insert(j, e)


def greedy_starts(order: Sequence[int], parent: Sequence[int], length: Sequence[int],
                  node_count: int) -> dict[int, int]:
    """Earliest feasible start for each uplink, processed in ``order``.

    ``order`` must list children before their parents. A window may start
    only once every window into its child has ended, and must not overlap a
    placed window that shares either endpoint.
    """
    busy: dict[int, _Timeline] = {}
    ready = [0] * node_count
    starts = {}
    for v in order:
        p = parent[v]
        L = length[v]
        t = ready[v]
        if L > 0:
            tv = busy.get(v)
            tp = busy.get(p)
            moved = True
            while moved:
                moved = False
                for tl in (tv, tp):
                    if tl is None:
                        continue
                    e = tl.next_overlap_end(t, L)
                    if e is not None:
                        t = e
                        moved = True
            for node in (v, p):
                tl = busy.get(node)
                if tl is None:
                    tl = busy[node] = _Timeline()
                tl.add(t, t + L)
        starts[v] = t
        if t + L > ready[p]:
            ready[p] = t + L
    return starts


def _activity(windows: Sequence[LinkWindow]) -> dict:
    act: dict[int, list] = {}
    for w in windows:
        if w.has_control_exchange:
            act.setdefault(w.start_slot, []).append((w.child, w.parent, "control"))
        for s in range(w.start_slot, w.start_slot + w.length_slots):
            act.setdefault(s, []).append((w.child, w.parent, "data"))
    return dict(sorted(act.items()))


def make_schedule(discipline: Discipline, windows: Sequence[LinkWindow]) -> Schedule:
    """Wrap already-slotted windows into a :class:`Schedule`."""
    windows = list(windows)
    total = max((w.start_slot + w.length_slots for w in windows), default=0)
    return Schedule(discipline, windows, total, _activity(windows))


def assign_slots(windows: Sequence[LinkWindow], tree: Tree,
                 discipline: Optional[Discipline] = None) -> Schedule:
    """Greedy slot assignment: bottom-up by (level desc, id asc), earliest feasible start."""
    if discipline is None:
        discipline = _infer_discipline(windows)
    by_child = {w.child: w for w in windows}
    order = [v for v in tree.bottom_up_order if v in by_child]
    parent = {v: by_child[v].parent for v in order}
    length = {v: by_child[v].length_slots for v in order}
    starts = greedy_starts(order, parent, length, tree.node_count)
    placed = [replace(by_child[v], start_slot=starts[v]) for v in order]
    return make_schedule(discipline, placed)


def _infer_discipline(windows: Sequence[LinkWindow]) -> Discipline:
    if any(w.has_control_exchange or (w.child_is_leaf and w.length_slots != w.capacity)
           for w in windows):
        return Discipline.ETPO
    return Discipline.TPO


def plan_schedule(tree: Tree, discipline: Discipline, pattern: TrafficPattern,
                  alive: Optional[Iterable[int]] = None) -> Schedule:
    return assign_slots(window_plan(tree, discipline, pattern, alive), tree, discipline)


# ---------------------------------------------------------------------------
# verification, derived from the windows alone

@dataclass(frozen=True)
class Violation:
    kind: str  # conflict | half-duplex | precedence | length | structure
    slot: Optional[int]
    nodes: tuple
    detail: str = ""


def verify_schedule(schedule: Schedule, tree: Tree) -> list[Violation]:
    """Every rule the schedule breaks; an empty list means it is valid."""
    out: list[Violation] = []
    disc = schedule.discipline
    wins: dict[int, LinkWindow] = {}
    for w in schedule.windows:
        if w.child in wins:
            out.append(Violation("structure", None, (w.child,), "duplicate window"))
        wins[w.child] = w
        if not 0 <= w.child < tree.node_count or w.child == tree.sink:
            out.append(Violation("structure", None, (w.child,), "window from sink or unknown node"))
            continue
        if w.parent != tree.parent_of[w.child]:
            out.append(Violation("structure", None, (w.child, w.parent), "parent is not the tree parent"))
        if w.start_slot is None or w.start_slot < 0 or w.length_slots < 0:
            out.append(Violation("structure", w.start_slot, (w.child,), "unplaced or negative window"))
    if out:
        return out

    kids: dict[int, list[LinkWindow]] = {}
    for w in wins.values():
        kids.setdefault(w.parent, []).append(w)
        if w.parent != tree.sink and w.parent not in wins:
            out.append(Violation("structure", None, (w.child, w.parent), "parent has no uplink window"))

    # capacity, packet counts, leaf flags and per-discipline lengths
    for v, w in wins.items():
        below = kids.get(v, [])
        cap = 1 + sum(c.capacity for c in below)
        if w.capacity != cap:
            out.append(Violation("length", None, (v,), f"capacity {w.capacity} != alive subtree {cap}"))
        own = w.expected_packets - sum(c.expected_packets for c in below)
        if own not in (0, 1) or w.expected_packets > w.capacity:
            out.append(Violation("length", None, (v,), f"packet count {w.expected_packets} inconsistent"))
        leaf = not below
        if w.child_is_leaf != leaf:
            out.append(Violation("length", None, (v,), "leaf flag wrong"))
        if disc is Discipline.ETPO:
            want = 1 if leaf else w.expected_packets
            ctrl = not leaf
        else:
            want, ctrl = w.capacity, False
        if w.length_slots != want:
            out.append(Violation("length", w.start_slot, (v,), f"{disc.value} length {w.length_slots} != {want}"))
        if w.has_control_exchange != ctrl:
            out.append(Violation("length", w.start_slot, (v,), "control-exchange flag wrong"))

    # occupancy per slot
    tx: dict[int, dict[int, int]] = {}
    rx: dict[int, dict[int, int]] = {}
    for w in wins.values():
        for s in range(w.start_slot, w.start_slot + w.length_slots):
            tx.setdefault(s, {}).setdefault(w.child, 0)
            tx[s][w.child] += 1
            rx.setdefault(s, {}).setdefault(w.parent, 0)
            rx[s][w.parent] += 1
    for s in sorted(set(tx) | set(rx)):
        ts, rs = tx.get(s, {}), rx.get(s, {})
        for node in sorted(set(ts) & set(rs)):
            out.append(Violation("half-duplex", s, (node,), "transmits and receives in one slot"))
        for role, table in (("transmitter", ts), ("receiver", rs)):
            for node, cnt in sorted(table.items()):
                if cnt > 1:
                    out.append(Violation("conflict", s, (node,), f"{cnt} links share {role}"))

    for v, w in wins.items():
        for c in kids.get(v, []):
            if w.start_slot < c.start_slot + c.length_slots:
                out.append(Violation("precedence", w.start_slot, (c.child, v),
                                     f"uplink of {v} starts before window {c.child}->{v} ends"))

    total = max((w.start_slot + w.length_slots for w in wins.values()), default=0)
    if schedule.total_data_slots != total:
        out.append(Violation("structure", None, (), f"total_data_slots {schedule.total_data_slots} != {total}"))
    if _activity(schedule.windows) != schedule.activity:
        out.append(Violation("structure", None, (), "activity map disagrees with windows"))
    return out


# ---------------------------------------------------------------------------

DUMP_HEADER = "slot,child,parent,kind"


def dump_schedule(schedule: Schedule) -> str:
    """Radio activity as CSV rows ``slot,child,parent,kind``."""
    rows = []
    disc = schedule.discipline
    for w in schedule.windows:
        if w.has_control_exchange:
            rows.append((w.start_slot, 0, w.child, w.parent, "control"))
        for s in range(w.start_slot, w.start_slot + w.expected_packets):
            if s < w.start_slot + w.length_slots:
                rows.append((s, 1, w.child, w.parent, "data"))
        idle = bool(idle_listens(disc, w.expected_packets, w.capacity, w.child_is_leaf))
        full = bool(idle_is_full_slot(disc, w.child_is_leaf))
        if idle and full:
            rows.append((w.start_slot + idle_probe_offset(disc, w.expected_packets), 2,
                         w.child, w.parent, "idle-probe"))
    rows.sort()
    buf = io.StringIO()
    buf.write(DUMP_HEADER + "\n")
    for s, _, c, p, kind in rows:
        buf.write(f"{s},{c},{p},{kind}\n")
    return buf.getvalue()
