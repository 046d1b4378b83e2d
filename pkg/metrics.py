#!/usr/bin/env python3
"""
RoomScout Metrics
Success rate, success weighted by path length, and Kendall Tau over discovery order
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)


def spl_term(success: bool, shortest: float, actual: float) -> Tuple[float, bool]:
    """One episode's S*l/max(p, l) and whether the clamp was degenerate (p == 0)"""
    if shortest <= 0:
        raise ValueError(f"Shortest path length must be positive, got {shortest}")
    if actual < 0:
        raise ValueError(f"Actual path length must be non-negative, got {actual}")
    if not success:
        return 0.0, False
    return shortest / max(actual, shortest), actual == 0


def spl(successes: Sequence[bool], shortest: Sequence[float], actual: Sequence[float]) -> float:
    """Mean of S_i * l_i / max(p_i, l_i)"""
    if not (len(successes) == len(shortest) == len(actual)):
        raise ValueError("successes, shortest and actual must have the same length")
    if not successes:
        raise ValueError("SPL needs at least one episode")
    total = 0.0
    for s, l, p in zip(successes, shortest, actual):
        value, degenerate = spl_term(s, l, p)
        if degenerate:
            logger.warning(f"Degenerate SPL term: success with zero path length (shortest {l})")
        total += value
    return total / len(successes)


def kendall_tau(found_order: Sequence[str], optimal_order: Sequence[str]) -> float:
    """Rank correlation from the discordant-pair count; exact for small n"""
    if len(found_order) != len(optimal_order) or sorted(found_order) != sorted(optimal_order):
        raise ValueError(f"{list(found_order)} is not a permutation of {list(optimal_order)}")
    if len(set(optimal_order)) != len(optimal_order):
        raise ValueError("Orders must not contain repeated items")
    n = len(optimal_order)
    if n < 2:
        return 1.0
    rank = {item: i for i, item in enumerate(optimal_order)}
    positions = [rank[item] for item in found_order]
    discordant = sum(1 for a, b in combinations(positions, 2) if a > b)
    pairs = n * (n - 1) // 2
    return (pairs - 2 * discordant) / pairs


@dataclass(frozen=True)
class MetricsSummary:
    method: str
    scene_graph: str
    low_level: str
    sr: float
    spl: float
    kendall_tau: Optional[float]
    n_episodes: int
    n_success: int
    degenerate: int = 0

    def to_row(self) -> dict:
        return {
            'Method': self.method,
            'Scene Graph': self.scene_graph,
            'LL Planner': self.low_level,
            'SR (%)': f"{100.0 * self.sr:.2f}",
            'SPL': f"{self.spl:.4f}",
            'Kendall Tau': 'N/A' if self.kendall_tau is None else f"{self.kendall_tau:.4f}",
            'Episodes': str(self.n_episodes),
            'Successes': str(self.n_success),
        }


def summarize(results: Iterable, method: str, scene_graph: str, low_level: str,
              with_tau: bool = True) -> MetricsSummary:
    """Fold EpisodeResults into one table row; tau is averaged over successes only"""
    results = sorted(results, key=lambda r: r.episode_id)
    if not results:
        raise ValueError("Cannot summarize an empty result set")
    successes = [r.success for r in results]
    degenerate = 0
    total = 0.0
    for r in results:
        value, flagged = spl_term(r.success, r.shortest_path_length, r.path_length)
        total += value
        degenerate += int(flagged)
    taus: List[float] = []
    if with_tau:
        taus = [kendall_tau(r.found_order, r.optimal_order) for r in results if r.success]
    n_success = sum(successes)
    return MetricsSummary(
        method=method,
        scene_graph=scene_graph,
        low_level=low_level,
        sr=n_success / len(results),
        spl=total / len(results),
        kendall_tau=sum(taus) / len(taus) if taus else None,
        n_episodes=len(results),
        n_success=n_success,
        degenerate=degenerate,
    )
