"""Expected idle-listening counts: closed forms, exact enumeration, Monte Carlo.

Per-link closed forms, with ``K`` the subtree size behind each uplink:

* ``tpo_per_link``: sum over links of ``1 - p**K`` (idle unless the whole
  subtree has data);
* ``subtree_empty_per_link``: sum over links of ``(1 - p)**K`` (idle only
  when the whole subtree is silent), which is what MTPO and ETPO achieve.

The two balanced-tree formulas ``(R**(L+1) - 1)(1 - p)`` and ``R**L (1 - p)``
are kept verbatim for comparison; they are not the per-link expectations.
"""
from __future__ import annotations

import enum
import math

import numpy as np

from .scheduling import Discipline
from .simkernel import idle_events_for_masks
from .topology import NotBalanced, Tree, balanced_shape, subtree_histogram
from .traffic import _bernoulli_mask

MAX_ENUMERATION_NODES = 21
_CHUNK = 1 << 16


class IdleSemantics(str, enum.Enum):
    TPO_PER_LINK = "tpo_per_link"
    SUBTREE_EMPTY_PER_LINK = "subtree_empty_per_link"
    PAPER_EQ2_BALANCED = "paper_eq2_balanced"
    PAPER_EQ3_BALANCED = "paper_eq3_balanced"


MATCHING_SEMANTICS = {
    Discipline.TPO: IdleSemantics.TPO_PER_LINK,
    Discipline.MTPO: IdleSemantics.SUBTREE_EMPTY_PER_LINK,
    Discipline.ETPO: IdleSemantics.SUBTREE_EMPTY_PER_LINK,
}


class TooLargeForEnumeration(ValueError):
    pass


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")


def expected_idle(tree: Tree, p: float, semantics: IdleSemantics) -> float:
    _check_p(p)
    semantics = IdleSemantics(semantics)
    if semantics is IdleSemantics.TPO_PER_LINK:
        return math.fsum(c * (1.0 - p**k) for k, c in subtree_histogram(tree).items())
    if semantics is IdleSemantics.SUBTREE_EMPTY_PER_LINK:
        return math.fsum(c * (1.0 - p) ** k for k, c in subtree_histogram(tree).items())
    shape = balanced_shape(tree)
    if shape is None:
        raise NotBalanced("formula only defined for balanced trees")
    if semantics is IdleSemantics.PAPER_EQ2_BALANCED:
        return (shape.r ** (shape.l + 1) - 1) * (1.0 - p)
    return shape.r**shape.l * (1.0 - p)


def _all_patterns(n_links: int, lo: int, hi: int) -> np.ndarray:
    codes = np.arange(lo, hi, dtype=np.int64)[:, None]
    return ((codes >> np.arange(n_links, dtype=np.int64)) & 1).astype(bool)


def idle_by_generator_count(tree: Tree, discipline: Discipline) -> np.ndarray:
    """``out[k]`` = total idle events summed over every pattern with k generators."""
    n = tree.node_count
    if n > MAX_ENUMERATION_NODES:
        raise TooLargeForEnumeration(f"{n} nodes > {MAX_ENUMERATION_NODES}")
    others = [v for v in range(n) if v != tree.sink]
    n_links = len(others)
    out = np.zeros(n_links + 1, dtype=np.int64)
    total = 1 << n_links
    for lo in range(0, total, _CHUNK):
        bits = _all_patterns(n_links, lo, min(total, lo + _CHUNK))
        masks = np.zeros((len(bits), n), dtype=bool)
        masks[:, others] = bits
        idle = idle_events_for_masks(tree, discipline, masks)
        np.add.at(out, bits.sum(axis=1), idle)
    return out


def exact_idle_by_enumeration(tree: Tree, p: float, discipline: Discipline) -> float:
    """Expected idle events per round, summed exactly over all 2**(n-1) patterns."""
    _check_p(p)
    per_k = idle_by_generator_count(tree, Discipline(discipline))
    n_links = len(per_k) - 1
    return math.fsum(
        float(per_k[k]) * p**k * (1.0 - p) ** (n_links - k) for k in range(n_links + 1)
    )


def monte_carlo_idle(tree: Tree, p: float, discipline: Discipline, rounds: int,
                     seed: int) -> tuple[float, float]:
    """Sample mean and standard error of idle events over ``rounds`` Bernoulli rounds."""
    _check_p(p)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    counts = []
    for lo in range(0, rounds, _CHUNK):
        masks = _bernoulli_mask(p, tree, range(lo, min(rounds, lo + _CHUNK)), seed)
        counts.append(idle_events_for_masks(tree, Discipline(discipline), masks))
    x = np.concatenate(counts).astype(float)
    mean = float(x.mean())
    if rounds < 2:
        return mean, 0.0
    return mean, float(x.std(ddof=1) / math.sqrt(rounds))
