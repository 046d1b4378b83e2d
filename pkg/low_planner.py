#!/usr/bin/env python3
"""
RoomScout Low-Level Planner
Point-goal navigation: an exact A* oracle and a stochastic surrogate calibrated to learned-policy statistics
"""

import heapq
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from house_sim import HEADING_VECTORS, AgentState, Cell, OccupancyGrid, Simulator

logger = logging.getLogger(__name__)


class NoPath(Exception):
    """Raised when the goal cell is not reachable from the start cell"""


@dataclass(frozen=True)
class PointGoal:
    target: Tuple[float, float]
    success_radius: float = Config.SUCCESS_RADIUS
    max_steps: int = Config.MAX_NAV_STEPS

    def __post_init__(self):
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class NavResult:
    success: bool
    steps_taken: int
    path_length: float
    actions: Tuple[str, ...]
    terminal_pose: AgentState

    def to_dict(self) -> dict:
        return {
            'success': self.success,
            'steps_taken': self.steps_taken,
            'path_length': self.path_length,
            'terminal_position': list(self.terminal_pose.position),
            'terminal_heading': self.terminal_pose.heading,
        }


@dataclass(frozen=True)
class SurrogateParams:
    sr_same_room: float = Config.SR_SAME_ROOM
    spl_same_room: float = Config.SPL_SAME_ROOM
    sr_global: float = Config.SR_GLOBAL
    spl_global: float = Config.SPL_GLOBAL
    rng_seed: int = 0

    def __post_init__(self):
        for name in ('sr_same_room', 'spl_same_room', 'sr_global', 'spl_global'):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.spl_same_room > self.sr_same_room or self.spl_global > self.sr_global:
            raise ValueError("SPL targets cannot exceed their success rates")

    @classmethod
    def from_config(cls, cfg=Config, rng_seed: int = 0) -> 'SurrogateParams':
        return cls(cfg.SR_SAME_ROOM, cfg.SPL_SAME_ROOM, cfg.SR_GLOBAL, cfg.SPL_GLOBAL, rng_seed)


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def astar_path(grid: OccupancyGrid, start: Cell, goal: Cell) -> List[Cell]:
    """Minimum-length 4-connected path, ties broken toward the lower cell index"""
    if not grid.is_passable(start) or not grid.is_passable(goal):
        raise NoPath(f"No path from {start} to {goal}")
    mask = grid.passable_mask
    width, height = grid.width, grid.height
    start_idx = grid.index_of(start)
    goal_idx = grid.index_of(goal)
    g_score = {start_idx: 0}
    came_from = {}
    closed = set()
    heap = [(manhattan(start, goal), start_idx)]
    while heap:
        _, idx = heapq.heappop(heap)
        if idx in closed:
            continue
        if idx == goal_idx:
            path = [idx]
            while path[-1] in came_from:
                path.append(came_from[path[-1]])
            return [(i % width, i // width) for i in reversed(path)]
        closed.add(idx)
        x, y = idx % width, idx // width
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if not (0 <= nx < width and 0 <= ny < height) or not mask[ny, nx]:
                continue
            n_idx = ny * width + nx
            if n_idx in closed:
                continue
            tentative = g_score[idx] + 1
            if tentative < g_score.get(n_idx, math.inf):
                g_score[n_idx] = tentative
                came_from[n_idx] = idx
                heapq.heappush(heap, (tentative + manhattan((nx, ny), goal), n_idx))
    raise NoPath(f"No path from {start} to {goal}")


def path_length_m(path: Sequence[Cell], cell_size: float = Config.CELL_SIZE) -> float:
    return max(len(path) - 1, 0) * cell_size


def resolve_goal_cell(grid: OccupancyGrid, target: Tuple[float, float]) -> Cell:
    """Nearest passable cell to a metric target, ties by lowest cell index"""
    cell = grid.cell_of(*target)
    if grid.is_passable(cell):
        return cell
    ys, xs = np.nonzero(grid.passable_mask)
    if len(xs) == 0:
        raise NoPath("Grid has no passable cells")
    centers_x = (xs + 0.5) * grid.cell_size
    centers_y = (ys + 0.5) * grid.cell_size
    distances = np.hypot(centers_x - target[0], centers_y - target[1])
    best = int(np.argmin(distances))
    return (int(xs[best]), int(ys[best]))


def astar_distance(grid: OccupancyGrid, start: Tuple[float, float], target: Tuple[float, float]) -> float:
    """Shortest 4-connected path length in meters between two metric points, inf when disconnected"""
    try:
        path = astar_path(grid, resolve_goal_cell(grid, start), resolve_goal_cell(grid, target))
    except NoPath:
        return math.inf
    return path_length_m(path, grid.cell_size)


def _heading_between(a: Cell, b: Cell) -> int:
    delta = (b[0] - a[0], b[1] - a[1])
    for heading, vector in HEADING_VECTORS.items():
        if vector == delta:
            return heading
    raise ValueError(f"Cells {a} and {b} are not 4-neighbors")


def path_to_actions(path: Sequence[Cell], heading: int) -> List[str]:
    """Turn/move primitives that follow a cell path from the given heading"""
    actions = []
    for current, following in zip(path, path[1:]):
        wanted = _heading_between(current, following)
        turn = (wanted - heading) % 360
        if turn == 90:
            actions.append('turn_left')
        elif turn == 270:
            actions.append('turn_right')
        elif turn == 180:
            actions.extend(['turn_left', 'turn_left'])
        heading = wanted
        actions.append('move_forward')
    return actions


def _distance(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _execute(sim: Simulator, actions: Sequence[str], max_steps: int) -> List[str]:
    executed = []
    for action in actions[:max_steps]:
        sim.step(action)
        executed.append(action)
    return executed


def _result(sim: Simulator, goal: PointGoal, start: AgentState, executed: Sequence[str],
            success: Optional[bool] = None) -> NavResult:
    if success is None:
        success = _distance(sim.state.position, goal.target) <= goal.success_radius
    return NavResult(bool(success), len(executed), sim.state.path_length - start.path_length,
                     tuple(executed), sim.state)


def _plan_path(sim: Simulator, goal: PointGoal) -> List[Cell]:
    goal_cell = resolve_goal_cell(sim.house.grid, goal.target)
    return astar_path(sim.house.grid, sim.state.cell, goal_cell)


def navigate_ornav(sim: Simulator, goal: PointGoal) -> NavResult:
    """Follow the A* path to the goal cell, capped at max_steps"""
    start = sim.state
    if _distance(start.position, goal.target) <= goal.success_radius:
        return _result(sim, goal, start, [], True)
    try:
        path = _plan_path(sim, goal)
    except NoPath:
        logger.debug(f"OrNav: no path to {goal.target}")
        return _result(sim, goal, start, [], False)
    executed = _execute(sim, path_to_actions(path, start.heading), goal.max_steps)
    return _result(sim, goal, start, executed)


def detour_pairs(path_edges: int, ratio: float, rng) -> int:
    """Out-and-back pair count whose expected path ratio equals `ratio` exactly"""
    if path_edges <= 0 or ratio >= 1.0:
        return 0
    base = int(math.floor(path_edges * (1.0 - ratio) / (2.0 * ratio)))
    r0 = path_edges / (path_edges + 2.0 * base)
    r1 = path_edges / (path_edges + 2.0 * (base + 1))
    extra_probability = (r0 - ratio) / (r0 - r1) if r0 > r1 else 0.0
    return base + (1 if rng.random() < extra_probability else 0)


def _insert_detours(path: List[Cell], pairs: int, rng) -> List[Cell]:
    if pairs == 0:
        return list(path)
    spots = sorted(int(i) for i in rng.integers(0, len(path) - 1, size=pairs))
    cells = []
    spot_iter = iter(spots)
    next_spot = next(spot_iter, None)
    for index, cell in enumerate(path):
        cells.append(cell)
        while next_spot == index:
            cells.extend([path[index + 1], cell])
            next_spot = next(spot_iter, None)
    return cells


def _random_walk(rng, length: int) -> List[str]:
    choices = rng.choice(3, size=length, p=[0.6, 0.2, 0.2])
    return [('move_forward', 'turn_left', 'turn_right')[int(c)] for c in choices]


def navigate_pnav_surrogate(sim: Simulator, goal: PointGoal, params: SurrogateParams,
                            invocation_index: int = 0) -> NavResult:
    """Bernoulli success draw, then a detoured A* path or a bounded random walk"""
    start = sim.state
    if _distance(start.position, goal.target) <= goal.success_radius:
        return _result(sim, goal, start, [], True)
    try:
        path = _plan_path(sim, goal)
    except NoPath:
        return _result(sim, goal, start, [], False)

    rng = np.random.default_rng([params.rng_seed, invocation_index])
    start_room = sim.house.room_at(*start.position)
    goal_room = sim.house.room_at(*goal.target)
    if start_room is not None and goal_room is not None and start_room.id == goal_room.id:
        sr, spl = params.sr_same_room, params.spl_same_room
    else:
        sr, spl = params.sr_global, params.spl_global

    if rng.random() < sr:
        pairs = detour_pairs(len(path) - 1, spl / sr, rng)
        cells = _insert_detours(path, pairs, rng)
        executed = _execute(sim, path_to_actions(cells, start.heading), goal.max_steps)
        return _result(sim, goal, start, executed)

    walk = _random_walk(rng, int(rng.integers(20, 101)))
    executed = _execute(sim, walk, goal.max_steps)
    return _result(sim, goal, start, executed, False)


class OracleNavigator:
    """A* oracle (OrNav)"""

    name = 'OrNav'

    def navigate(self, sim: Simulator, goal: PointGoal) -> NavResult:
        return navigate_ornav(sim, goal)


class SurrogateNavigator:
    """Calibrated surrogate (PNavS); the invocation counter seeds each call"""

    name = 'PNavS'

    def __init__(self, params: SurrogateParams):
        self.params = params
        self.invocations = 0

    def navigate(self, sim: Simulator, goal: PointGoal) -> NavResult:
        index = self.invocations
        self.invocations += 1
        return navigate_pnav_surrogate(sim, goal, self.params, index)


def make_navigator(low_level: str, params: SurrogateParams = None):
    if low_level == OracleNavigator.name:
        return OracleNavigator()
    if low_level == SurrogateNavigator.name:
        return SurrogateNavigator(params or SurrogateParams())
    raise ValueError(f"Unknown low-level planner '{low_level}'")
