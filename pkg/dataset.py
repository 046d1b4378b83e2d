#!/usr/bin/env python3
"""
RoomScout Dataset
Seeded episode generation, JSON-lines episode files and load-time verification
"""

import itertools
import json
import logging
import os
import threading
from dataclasses import dataclass
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from config import Config
from house_sim import (FREE, HEADINGS, House, HouseGenerationError, HouseSpec, ObjectInstance, OccupancyGrid,
                       generate_house, load_house, reachable_cells, save_house)
from knowledge_base import KnowledgeBase, load_knowledge_base
from low_planner import NoPath, astar_path, resolve_goal_cell

logger = logging.getLogger(__name__)

EPISODE_SCHEMA_VERSION = 1
EPISODES_FILE = 'episodes.jsonl'
HOUSES_DIR = 'houses'
DATA_TYPES = ('val', 'test')


class DatasetError(Exception):
    """Raised for invalid generation requests and corrupt episode files"""


@dataclass(frozen=True)
class Target:
    category: str
    position: Tuple[float, float, float]


@dataclass(frozen=True)
class Episode:
    """One multi-object search task; field names follow the published episode layout"""

    data_type: str
    house_idx: int
    num_rooms: int
    num_targets: int
    targets: Tuple[Target, ...]
    start_position: Tuple[float, float]
    start_heading: int
    shortest_path_targets_order: Tuple[str, ...]
    shortest_path_length: float
    house_seed: int = 0
    schema_version: int = EPISODE_SCHEMA_VERSION

    @property
    def episode_id(self) -> str:
        return f"{self.data_type}_{self.house_idx:04d}"

    @property
    def house_id(self) -> str:
        return house_id_for(self.house_idx)

    @property
    def categories(self) -> List[str]:
        return [t.category for t in self.targets]

    def target_position(self, category: str) -> Tuple[float, float, float]:
        for target in self.targets:
            if target.category == category:
                return target.position
        raise KeyError(category)

    def to_dict(self) -> dict:
        return {
            'schema_version': self.schema_version,
            'data_type': self.data_type,
            'house_idx': self.house_idx,
            'house_seed': self.house_seed,
            'num_rooms': self.num_rooms,
            'num_targets': self.num_targets,
            'targets': [{'category': t.category, 'position': list(t.position)} for t in self.targets],
            'start_position': list(self.start_position),
            'start_heading': self.start_heading,
            'shortest_path_targets_order': list(self.shortest_path_targets_order),
            'shortest_path_length': self.shortest_path_length,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Episode':
        version = data.get('schema_version')
        if version != EPISODE_SCHEMA_VERSION:
            raise DatasetError(f"Unsupported episode schema_version {version!r}")
        try:
            episode = cls(
                data_type=data['data_type'],
                house_idx=int(data['house_idx']),
                num_rooms=int(data['num_rooms']),
                num_targets=int(data['num_targets']),
                targets=tuple(Target(t['category'], tuple(t['position'])) for t in data['targets']),
                start_position=tuple(data['start_position']),
                start_heading=int(data['start_heading']),
                shortest_path_targets_order=tuple(data['shortest_path_targets_order']),
                shortest_path_length=float(data['shortest_path_length']),
                house_seed=int(data.get('house_seed', 0)),
                schema_version=version,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"Malformed episode record: {e}") from e
        episode.check()
        return episode

    def check(self):
        categories = self.categories
        if len(set(categories)) != len(categories):
            raise DatasetError(f"{self.episode_id}: target categories are not distinct")
        if len(categories) != self.num_targets:
            raise DatasetError(f"{self.episode_id}: num_targets does not match targets")
        if sorted(self.shortest_path_targets_order) != sorted(categories):
            raise DatasetError(f"{self.episode_id}: optimal order is not a permutation of the targets")
        if self.start_heading not in HEADINGS:
            raise DatasetError(f"{self.episode_id}: invalid start heading {self.start_heading}")


def house_id_for(house_idx: int) -> str:
    return f"house_{house_idx:04d}"


def _leg_edges(grid: OccupancyGrid, a, b, cache: Dict) -> int:
    key = (a, b)
    if key not in cache:
        cache[key] = len(astar_path(grid, a, b)) - 1
    return cache[key]


def route_length(grid: OccupancyGrid, start: Tuple[float, float], points: Sequence[Tuple[float, ...]]) -> float:
    """A* length from start through the points in order, meters"""
    cache: Dict = {}
    cells = [grid.cell_of(*start)] + [resolve_goal_cell(grid, (p[0], p[1])) for p in points]
    edges = sum(_leg_edges(grid, a, b, cache) for a, b in zip(cells, cells[1:]))
    return edges * grid.cell_size


def shortest_target_order(grid: OccupancyGrid, start: Tuple[float, float],
                          candidates: Dict[str, Sequence[Tuple[float, float, float]]]
                          ) -> Tuple[Tuple[str, ...], Tuple[Tuple[float, float, float], ...], float]:
    """Best category order and instance choice over every permutation, by A* length"""
    grid_start = grid.cell_of(*start)
    cells = {pos: resolve_goal_cell(grid, (pos[0], pos[1])) for options in candidates.values() for pos in options}
    cache: Dict = {}
    best = None
    for order in itertools.permutations(sorted(candidates)):
        for choice in itertools.product(*(candidates[c] for c in order)):
            route = [grid_start] + [cells[p] for p in choice]
            try:
                edges = sum(_leg_edges(grid, a, b, cache) for a, b in zip(route, route[1:]))
            except NoPath:
                continue
            if best is None or edges < best[0]:
                best = (edges, order, tuple(tuple(p) for p in choice))
    if best is None:
        raise DatasetError("No reachable ordering of the targets")
    return best[1], best[2], best[0] * grid.cell_size


def _start_cells(house: House) -> List[Tuple[int, int]]:
    free = (house.grid.cells == FREE) & (house.region_map >= 0)
    ys, xs = np.nonzero(free)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def _reachable_instances(house: House, reachable, small: Sequence[str]) -> Dict[str, List[ObjectInstance]]:
    found: Dict[str, List[ObjectInstance]] = {}
    for category in small:
        for obj in sorted(house.objects_of(category), key=lambda o: o.id):
            if resolve_goal_cell(house.grid, (obj.position[0], obj.position[1])) in reachable:
                found.setdefault(category, []).append(obj)
    return found


def make_episode(house_idx: int, seed: int, num_rooms: Tuple[int, int] = (3, 10),
                 objects_per_room: Tuple[int, int] = (2, 5), data_type: str = 'val', num_targets: int = 3,
                 kb: KnowledgeBase = None, cfg=Config, max_attempts: int = 10) -> Tuple[Episode, House]:
    """Generate one house and a solvable episode in it, retrying with the next sub-seed"""
    kb = kb or load_knowledge_base()
    small = kb.small_categories(cfg.LARGE_DIMENSION_THRESHOLD)
    last_error = None
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, house_idx, attempt])
        rooms = int(rng.integers(num_rooms[0], num_rooms[1] + 1))
        house_seed = int(rng.integers(0, 2 ** 31 - 1))
        spec = HouseSpec(rooms, (), tuple(objects_per_room), house_seed)
        try:
            house = generate_house(spec, kb, cfg, house_id=house_id_for(house_idx))
        except HouseGenerationError as e:
            last_error = e
            continue

        starts = _start_cells(house)
        start_cell = starts[int(rng.integers(0, len(starts)))]
        reachable = reachable_cells(house, start_cell)
        instances = _reachable_instances(house, reachable, small)
        if len(instances) < num_targets:
            last_error = DatasetError(f"only {len(instances)} distinct reachable small categories")
            logger.debug(f"{house.house_id} attempt {attempt}: {last_error}")
            continue

        chosen = [str(c) for c in rng.choice(sorted(instances), size=num_targets, replace=False)]
        heading = int(rng.choice(HEADINGS))
        start = house.grid.cell_center(start_cell)
        candidates = {c: [obj.position for obj in instances[c]] for c in chosen}
        order, positions, length = shortest_target_order(house.grid, start, candidates)
        targets = tuple(Target(category, position) for category, position in zip(order, positions))
        targets = tuple(sorted(targets, key=lambda t: chosen.index(t.category)))
        episode = Episode(data_type, house_idx, len(house.rooms), num_targets, targets, start, heading,
                          order, length, house_seed)
        return episode, house
    raise DatasetError(f"Could not build episode {house_idx} after {max_attempts} attempts: {last_error}")


def generate_dataset(n: int, out_dir: str, seed: int = 0, num_rooms: Tuple[int, int] = (3, 10),
                     objects_per_room: Tuple[int, int] = (2, 5), data_type: str = 'val',
                     kb: KnowledgeBase = None, cfg=Config) -> List[Episode]:
    """Write n episodes over n distinct houses to out_dir"""
    if n < 1:
        raise DatasetError(f"n must be at least 1, got {n}")
    if data_type not in DATA_TYPES:
        raise DatasetError(f"data_type must be one of {DATA_TYPES}, got '{data_type}'")
    if num_rooms[0] < 1 or num_rooms[1] < num_rooms[0]:
        raise DatasetError(f"Invalid room range {num_rooms}")
    kb = kb or load_knowledge_base()
    os.makedirs(os.path.join(out_dir, HOUSES_DIR), exist_ok=True)

    episodes = []
    for house_idx in range(n):
        episode, house = make_episode(house_idx, seed, num_rooms, objects_per_room, data_type, kb=kb, cfg=cfg)
        save_house(house, os.path.join(out_dir, HOUSES_DIR, f"{house.house_id}.json"))
        episodes.append(episode)
        if (house_idx + 1) % 10 == 0 or house_idx + 1 == n:
            logger.info(f"Generated {house_idx + 1}/{n} episodes")

    with open(os.path.join(out_dir, EPISODES_FILE), 'w', encoding='utf-8') as f:
        for episode in episodes:
            f.write(json.dumps(episode.to_dict(), sort_keys=True) + "\n")
    logger.info(f"✅ Dataset written to {out_dir}")
    return episodes


class Dataset:
    """Loaded episodes with lazily loaded houses"""

    def __init__(self, root: str, episodes: List[Episode]):
        self.root = root
        self.episodes = episodes
        self._houses: Dict[int, House] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes)

    def episode(self, episode_id: str) -> Episode:
        for episode in self.episodes:
            if episode.episode_id == episode_id:
                return episode
        raise DatasetError(f"Unknown episode '{episode_id}'")

    def house_path(self, house_idx: int) -> str:
        return os.path.join(self.root, HOUSES_DIR, f"{house_id_for(house_idx)}.json")

    def house(self, house_idx: int) -> House:
        with self._lock:
            if house_idx not in self._houses:
                path = self.house_path(house_idx)
                if not os.path.exists(path):
                    raise DatasetError(f"Missing house file {path}")
                self._houses[house_idx] = load_house(path)
            return self._houses[house_idx]


def verify_episode(episode: Episode, house: House, tolerance: float = 1e-6):
    if house.house_id != episode.house_id:
        raise DatasetError(f"{episode.episode_id}: house id {house.house_id} does not match {episode.house_id}")
    if not house.grid.is_passable(house.grid.cell_of(*episode.start_position)):
        raise DatasetError(f"{episode.episode_id}: start position is not passable")
    points = [episode.target_position(c) for c in episode.shortest_path_targets_order]
    try:
        length = route_length(house.grid, episode.start_position, points)
    except NoPath as e:
        raise DatasetError(f"{episode.episode_id}: target unreachable: {e}") from e
    if abs(length - episode.shortest_path_length) > tolerance:
        raise DatasetError(f"{episode.episode_id}: shortest_path_length {episode.shortest_path_length} "
                           f"does not match A* length {length}")


def load_dataset(path: str, verify: bool = True) -> Dataset:
    """Read episodes.jsonl from a dataset directory; corrupt files raise DatasetError"""
    episodes_path = os.path.join(path, EPISODES_FILE)
    if not os.path.exists(episodes_path):
        raise DatasetError(f"No {EPISODES_FILE} in {path}")
    episodes = []
    with open(episodes_path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{episodes_path}:{line_no}: {e}") from e
            episodes.append(Episode.from_dict(record))
    if not episodes:
        raise DatasetError(f"{episodes_path} holds no episodes")
    dataset = Dataset(path, episodes)
    if verify:
        for episode in episodes:
            verify_episode(episode, dataset.house(episode.house_idx))
    logger.info(f"Loaded {len(episodes)} episodes from {path}")
    return dataset
