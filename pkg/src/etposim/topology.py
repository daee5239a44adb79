"""Rooted tree networks: construction, validation, generators and CSV I/O.

A tree is described by its parent mapping. The sink is the single node whose
parent is ``None`` (``-1`` in files). Everything else (children, levels,
subtree sizes, a DFS preorder used for fast subtree sums) is derived once and
frozen.
"""
from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .traffic import prng_draw

DEFAULT_MAX_NODES = 2**20
AREA_SIDE_M = 50.0
CSV_HEADER = "node_id,parent_id"


class TopologyError(ValueError):
    pass


class ZeroOrMultipleSinks(TopologyError):
    def __init__(self, sinks: Sequence[int]):
        self.sinks = list(sinks)
        super().__init__(f"expected exactly one sink, found {len(self.sinks)}: {self.sinks}")


class CycleDetected(TopologyError):
    def __init__(self, nodes: Sequence[int]):
        self.nodes = sorted(nodes)
        super().__init__(f"cycle detected through nodes {self.nodes}")


class DanglingParentId(TopologyError):
    def __init__(self, node: int, parent: object):
        self.node = node
        self.parent = parent
        super().__init__(f"node {node} has out-of-range parent {parent!r}")


class SizeOverflow(TopologyError):
    pass


class InfeasibleFanout(TopologyError):
    pass


class NotBalanced(TopologyError):
    pass


class MalformedLine(TopologyError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"malformed line {line}" + (f": {reason}" if reason else ""))


class DuplicateNodeId(TopologyError):
    def __init__(self, node: int, line: int):
        self.node = node
        self.line = line
        super().__init__(f"duplicate node id {node} on line {line}")


@dataclass(frozen=True)
class BalancedSpec:
    r: int
    l: int

    @property
    def node_count(self) -> int:
        if self.r == 1:
            return self.l + 1
        return (self.r ** (self.l + 1) - 1) // (self.r - 1)


@dataclass(frozen=True)
class Tree:
    """Immutable rooted tree. Use :func:`build_tree` rather than the constructor."""

    node_count: int
    parent_of: tuple
    children_of: tuple
    level_of: tuple
    subtree_size_of: tuple
    positions: Optional[tuple] = field(default=None, compare=False, repr=False)

    @property
    def sink(self) -> int:
        return self._sink

    @cached_property
    def _sink(self) -> int:
        return self.parent_of.index(None)

    @property
    def height(self) -> int:
        return max(self.level_of)

    def is_leaf(self, v: int) -> bool:
        return not self.children_of[v]

    @cached_property
    def parent_array(self) -> np.ndarray:
        """Parent ids as an int array; the sink maps to itself."""
        return np.array(
            [self.sink if p is None else p for p in self.parent_of], dtype=np.int64
        )

    @cached_property
    def preorder(self) -> np.ndarray:
        """Node ids in DFS preorder (children visited in ascending id order)."""
        order = []
        stack = [self.sink]
        while stack:
            v = stack.pop()
            order.append(v)
            stack.extend(reversed(self.children_of[v]))
        return np.array(order, dtype=np.int64)

    @cached_property
    def preorder_index(self) -> np.ndarray:
        idx = np.empty(self.node_count, dtype=np.int64)
        idx[self.preorder] = np.arange(self.node_count)
        return idx

    @cached_property
    def bottom_up_order(self) -> tuple:
        """Non-sink nodes sorted by (level descending, id ascending)."""
        return tuple(
            sorted(
                (v for v in range(self.node_count) if v != self.sink),
                key=lambda v: (-self.level_of[v], v),
            )
        )

    def subtree_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum ``values`` over every node's subtree (node included).

        ``values`` may carry extra leading axes; the node axis is the last one.
        """
        values = np.asarray(values)
        ordered = values[..., self.preorder]
        csum = np.zeros(values.shape[:-1] + (self.node_count + 1,), dtype=np.result_type(values, np.int64))
        np.cumsum(ordered, axis=-1, out=csum[..., 1:])
        start = self.preorder_index
        stop = start + np.asarray(self.subtree_size_of)
        return csum[..., stop] - csum[..., start]


def build_tree(parents: Sequence[Optional[int]], positions=None) -> Tree:
    """Build a validated :class:`Tree` from a parent list (``None`` marks the sink)."""
    n = len(parents)
    if n == 0:
        raise ZeroOrMultipleSinks([])
    parent_of = []
    for v, p in enumerate(parents):
        if p is None:
            parent_of.append(None)
            continue
        if isinstance(p, bool) or not isinstance(p, (int, np.integer)) or not 0 <= p < n or p == v:
            if isinstance(p, (int, np.integer)) and p == v:
                raise CycleDetected([v])
            raise DanglingParentId(v, p)
        parent_of.append(int(p))
    sinks = [v for v, p in enumerate(parent_of) if p is None]
    if len(sinks) != 1:
        raise ZeroOrMultipleSinks(sinks)
    sink = sinks[0]

    children: list[list[int]] = [[] for _ in range(n)]
    for v, p in enumerate(parent_of):
        if p is not None:
            children[p].append(v)

    # BFS from the sink; anything unreached sits on a cycle or hangs off one.
    level = [-1] * n
    level[sink] = 0
    queue = [sink]
    for v in queue:
        for c in children[v]:
            level[c] = level[v] + 1
            queue.append(c)
    if len(queue) != n:
        raise CycleDetected(_find_cycle(parent_of, level))

    size = [1] * n
    for v in reversed(queue):
        p = parent_of[v]
        if p is not None:
            size[p] += size[v]

    if positions is not None:
        positions = tuple((float(x), float(y)) for x, y in positions)
        if len(positions) != n:
            raise TopologyError("positions must have one entry per node")
    return Tree(
        node_count=n,
        parent_of=tuple(parent_of),
        children_of=tuple(tuple(c) for c in children),
        level_of=tuple(level),
        subtree_size_of=tuple(size),
        positions=positions,
    )


def _find_cycle(parent_of, level) -> list[int]:
    start = next(v for v, lv in enumerate(level) if lv < 0)
    seen: dict[int, int] = {}
    v = start
    while v not in seen:
        seen[v] = len(seen)
        v = parent_of[v]
    cycle = [v]
    u = parent_of[v]
    while u != v:
        cycle.append(u)
        u = parent_of[u]
    return cycle


def validate(tree: Tree) -> list[str]:
    """Check every Tree invariant from scratch; returns a list of problems."""
    problems = []
    n = tree.node_count
    if n < 1:
        return ["node_count must be positive"]
    if len(tree.parent_of) != n:
        problems.append("parent_of length mismatch")
    sinks = [v for v, p in enumerate(tree.parent_of) if p is None]
    if len(sinks) != 1:
        problems.append(f"sinks: {sinks}")
        return problems
    sink = sinks[0]
    for v in range(n):
        u, steps = v, 0
        while u != sink and steps < n:
            u = tree.parent_of[u]
            if u is None or not 0 <= u < n:
                problems.append(f"node {v}: broken parent chain")
                break
            steps += 1
        if u != sink:
            problems.append(f"node {v}: does not reach sink in < {n} steps")
    if problems:
        return problems
    if tree.level_of[sink] != 0:
        problems.append("sink level != 0")
    for v, p in enumerate(tree.parent_of):
        if p is None:
            continue
        if tree.level_of[v] != tree.level_of[p] + 1:
            problems.append(f"node {v}: level {tree.level_of[v]} vs parent {tree.level_of[p]}")
        if v not in tree.children_of[p]:
            problems.append(f"node {v} missing from children_of[{p}]")
    for v in range(n):
        for c in tree.children_of[v]:
            if tree.parent_of[c] != v:
                problems.append(f"children_of[{v}] lists {c} with parent {tree.parent_of[c]}")
        expect = 1 + sum(tree.subtree_size_of[c] for c in tree.children_of[v])
        if tree.subtree_size_of[v] != expect:
            problems.append(f"node {v}: subtree size {tree.subtree_size_of[v]} != {expect}")
    if tree.subtree_size_of[sink] != n:
        problems.append("sink subtree size != node_count")
    return problems


def gen_balanced(spec: BalancedSpec, max_nodes: int = DEFAULT_MAX_NODES) -> Tree:
    """Complete R-ary tree with leaves at level L, ids assigned breadth-first."""
    if spec.r < 1 or spec.l < 0:
        raise ValueError(f"need r >= 1 and l >= 0, got r={spec.r} l={spec.l}")
    n = spec.node_count
    if n > max_nodes:
        raise SizeOverflow(f"balanced tree r={spec.r} l={spec.l} has {n} nodes > {max_nodes}")
    parents: list[Optional[int]] = [None] + [(v - 1) // spec.r for v in range(1, n)]
    return build_tree(parents)


def balanced_shape(tree: Tree) -> Optional[BalancedSpec]:
    """Return (R, L) if every internal node has R children and all leaves sit at level L."""
    if tree.node_count == 1:
        return BalancedSpec(1, 0)
    fanouts = {len(c) for c in tree.children_of if c}
    leaf_levels = {tree.level_of[v] for v in range(tree.node_count) if not tree.children_of[v]}
    if len(fanouts) != 1 or len(leaf_levels) != 1:
        return None
    return BalancedSpec(fanouts.pop(), leaf_levels.pop())


def gen_random(node_count: int, max_children: int, seed: int) -> Tree:
    """Random recursive tree: node i attaches to a uniformly drawn earlier node with spare fanout.

    Draw i is ``prng_draw(seed, i, 0)`` mapped onto the eligible list by a
    64-bit multiply-shift.
    """
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    if max_children < 1 and node_count > 1:
        raise InfeasibleFanout(f"max_children={max_children} cannot absorb {node_count - 1} nodes")
    parents: list[Optional[int]] = [None]
    nchild = [0] * node_count
    eligible = [0]
    for i in range(1, node_count):
        k = (prng_draw(seed, i, 0) * len(eligible)) >> 64
        p = eligible[k]
        parents.append(p)
        nchild[p] += 1
        if nchild[p] >= max_children:
            eligible.remove(p)
        eligible.append(i)
    return build_tree(parents)


def with_positions(tree: Tree, seed: int, side: float = AREA_SIDE_M) -> Tree:
    """Copy of ``tree`` with cosmetic coordinates drawn uniformly in a side x side square."""
    pos = [
        (prng_draw(seed, 1, 2 * v) / 2**64 * side, prng_draw(seed, 1, 2 * v + 1) / 2**64 * side)
        for v in range(tree.node_count)
    ]
    return build_tree(tree.parent_of, positions=pos)


def subtree_histogram(tree: Tree) -> dict[int, int]:
    """Map subtree size -> number of non-sink nodes rooting a subtree of that size."""
    return dict(sorted(Counter(
        tree.subtree_size_of[v] for v in range(tree.node_count) if v != tree.sink
    ).items()))


def serialize_topology(tree: Tree) -> str:
    lines = [CSV_HEADER]
    for v, p in enumerate(tree.parent_of):
        lines.append(f"{v},{-1 if p is None else p}")
    return "\n".join(lines) + "\n"


def parse_topology(text: str) -> Tree:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise MalformedLine(1, f"header must be {CSV_HEADER!r}")
    entries: dict[int, Optional[int]] = {}
    linenos: dict[int, int] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        parts = raw.strip().split(",")
        if len(parts) != 2:
            raise MalformedLine(lineno, "expected two fields")
        try:
            node, parent = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedLine(lineno, "non-integer field") from None
        if node < 0 or parent < -1:
            raise MalformedLine(lineno, "negative id")
        if node in entries:
            raise DuplicateNodeId(node, lineno)
        entries[node] = None if parent == -1 else parent
        linenos[node] = lineno
    n = len(entries)
    if n == 0:
        raise MalformedLine(2, "no rows")
    out_of_range = [v for v in entries if v >= n]
    if out_of_range:
        raise MalformedLine(linenos[min(out_of_range)], f"node ids must be 0..{n - 1}")
    return build_tree([entries[v] for v in range(n)])


def load_topology(path) -> Tree:
    with io.open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_topology(fh.read())


def save_topology(tree: Tree, path) -> None:
    with io.open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_topology(tree))
