"""Seeded per-round traffic: which nodes produce a packet in a given round.

All randomness flows from :func:`prng_draw`, a stateless splitmix64-style
hash of ``(seed, round, node)``. Any round of any node can be drawn
independently, which keeps runs reproducible regardless of evaluation order.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, FrozenSet, Iterator, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .topology import Tree

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

BERNOULLI = "bernoulli"
MARKOV_BURST = "markov_burst"
EXPLICIT = "explicit"


class TrafficError(ValueError):
    pass


class RoundOutOfRange(TrafficError):
    pass


def splitmix64_finalizer(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def prng_draw(seed: int, round: int, node: int) -> int:
    """64-bit draw for ``(seed, round, node)``."""
    key = (seed & MASK64) ^ ((round * GOLDEN_GAMMA) & MASK64) ^ ((node * MIX1) & MASK64)
    return splitmix64_finalizer(key)


def prng_draw_array(seed: int, rounds, nodes) -> np.ndarray:
    """Vectorised :func:`prng_draw` over a rounds x nodes grid (uint64, wrapping arithmetic)."""
    r = np.asarray(rounds, dtype=np.uint64).reshape(-1, 1)
    v = np.asarray(nodes, dtype=np.uint64).reshape(1, -1)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) ^ (r * np.uint64(GOLDEN_GAMMA)) ^ (v * np.uint64(MIX1))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        z = z ^ (z >> np.uint64(31))
    return z


def threshold(p: float) -> int:
    """floor(p * 2**64), computed exactly."""
    return int(Fraction(p) * 2**64)


@dataclass(frozen=True)
class TrafficModel:
    kind: str = BERNOULLI
    p: float = 0.5
    p_on: float = 0.1
    p_off: float = 0.1
    explicit_rounds: Optional[tuple] = None
    cyclic: bool = True

    def __post_init__(self):
        if self.kind not in (BERNOULLI, MARKOV_BURST, EXPLICIT):
            raise TrafficError(f"unknown traffic kind {self.kind!r}")
        for name in ("p", "p_on", "p_off"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise TrafficError(f"{name}={val} outside [0, 1]")
        if self.kind == EXPLICIT:
            if not self.explicit_rounds:
                raise TrafficError("explicit traffic needs at least one round")
            object.__setattr__(
                self, "explicit_rounds", tuple(frozenset(r) for r in self.explicit_rounds)
            )

    @classmethod
    def bernoulli(cls, p: float) -> "TrafficModel":
        return cls(BERNOULLI, p=p)


@dataclass(frozen=True)
class TrafficPattern:
    round_index: int
    generators: FrozenSet[int]


def _bernoulli_mask(p: float, tree: "Tree", rounds: Sequence[int], seed: int) -> np.ndarray:
    n = tree.node_count
    if p >= 1.0:
        mask = np.ones((len(rounds), n), dtype=bool)
    elif p <= 0.0:
        mask = np.zeros((len(rounds), n), dtype=bool)
    else:
        mask = prng_draw_array(seed, rounds, np.arange(n)) < np.uint64(threshold(p))
    mask[:, tree.sink] = False
    return mask


def _burst_states(model: TrafficModel, n: int, seed: int, upto: int) -> Iterator[np.ndarray]:
    """Yield the ON/OFF vector for rounds 0..upto-1."""
    total = model.p_on + model.p_off
    stationary = 0.5 if total == 0 else model.p_on / total
    nodes = np.arange(n)
    state = None
    for r in range(upto):
        draws = prng_draw_array(seed, [r], nodes)[0]
        if state is None:
            state = _below(draws, stationary)
        else:
            turn_on = _below(draws, model.p_on)
            turn_off = _below(draws, model.p_off)
            state = np.where(state, ~turn_off, turn_on)
        yield state


def _below(draws: np.ndarray, p: float) -> np.ndarray:
    if p >= 1.0:
        return np.ones(draws.shape, dtype=bool)
    return draws < np.uint64(threshold(p))


def _explicit_set(model: TrafficModel, round: int) -> FrozenSet[int]:
    rounds = model.explicit_rounds
    if not model.cyclic and round >= len(rounds):
        raise RoundOutOfRange(f"round {round} beyond {len(rounds)} explicit rounds")
    return rounds[round % len(rounds)]


def generate_pattern(model: TrafficModel, tree: "Tree", round: int, seed: int) -> TrafficPattern:
    """Generators for one round; a pure function of its arguments."""
    if model.kind == BERNOULLI:
        mask = _bernoulli_mask(model.p, tree, [round], seed)[0]
        gens = frozenset(int(v) for v in np.flatnonzero(mask))
    elif model.kind == MARKOV_BURST:
        state = None
        for state in _burst_states(model, tree.node_count, seed, round + 1):
            pass
        state = state.copy()
        state[tree.sink] = False
        gens = frozenset(int(v) for v in np.flatnonzero(state))
    else:
        gens = _check_ids(_explicit_set(model, round), tree)
    return TrafficPattern(round, gens)


def _check_ids(gens: FrozenSet[int], tree: "Tree") -> FrozenSet[int]:
    bad = [v for v in gens if not 0 <= v < tree.node_count]
    if bad:
        raise TrafficError(f"explicit pattern names unknown nodes {sorted(bad)}")
    return frozenset(v for v in gens if v != tree.sink)


def iter_masks(model: TrafficModel, tree: "Tree", seed: int, chunk: int = 256) -> Iterator[np.ndarray]:
    """Boolean generator masks for rounds 0, 1, 2, ... (same values as generate_pattern)."""
    n = tree.node_count
    if model.kind == BERNOULLI:
        start = 0
        while True:
            block = _bernoulli_mask(model.p, tree, range(start, start + chunk), seed)
            yield from block
            start += chunk
    elif model.kind == MARKOV_BURST:
        for state in _burst_states(model, n, seed, 2**62):
            out = state.copy()
            out[tree.sink] = False
            yield out
    else:
        r = 0
        while True:
            mask = np.zeros(n, dtype=bool)
            mask[list(_check_ids(_explicit_set(model, r), tree))] = True
            yield mask
            r += 1


def pattern_weight(pattern: TrafficPattern, tree: "Tree", p: float) -> float:
    k = len(pattern.generators)
    return p**k * (1.0 - p) ** (tree.node_count - 1 - k)


def parse_explicit_patterns(text: str) -> tuple:
    """Parse a ``round,node_id`` CSV into a tuple of generator sets indexed by round."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["round", "node_id"]:
        raise TrafficError("explicit patterns file must start with header 'round,node_id'")
    by_round: dict[int, set] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            r, v = int(row[0]), int(row[1])
        except (ValueError, IndexError):
            raise TrafficError(f"bad row on line {lineno}: {row}") from None
        if r < 0 or v < 0:
            raise TrafficError(f"negative value on line {lineno}")
        by_round.setdefault(r, set()).add(v)
    if not by_round:
        raise TrafficError("explicit patterns file has no rows")
    return tuple(frozenset(by_round.get(r, ())) for r in range(max(by_round) + 1))
