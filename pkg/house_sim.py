#!/usr/bin/env python3
"""
RoomScout House Simulator
Procedural floor plans on a 0.25 m occupancy grid, primitive actions and raycast perception
"""

import json
import logging
import math
import zlib
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from config import Config
from knowledge_base import KnowledgeBase, load_knowledge_base

logger = logging.getLogger(__name__)

# Cell markers
FREE = 0
WALL = 1
DOOR_OPEN = 2
DOOR_CLOSED = 3

HOUSE_SCHEMA_VERSION = 1

HEADINGS = (0, 90, 180, 270)
HEADING_VECTORS = {0: (1, 0), 90: (0, 1), 180: (-1, 0), 270: (0, -1)}
ACTIONS = ('move_forward', 'turn_left', 'turn_right', 'stop')

Cell = Tuple[int, int]


class HouseGenerationError(Exception):
    """Raised when a HouseSpec cannot be realized"""


class SchemaVersionError(Exception):
    """Raised when a serialized house carries an unknown schema version"""


@dataclass(frozen=True)
class HouseSpec:
    """Generator input: room count, room-type mix and object density"""

    num_rooms: int
    room_type_mix: Tuple[Tuple[str, int], ...] = ()
    objects_per_room: Tuple[int, int] = (2, 5)
    rng_seed: int = 0
    footprint: Optional[Tuple[float, float]] = None

    def validate(self, kb: KnowledgeBase):
        if self.num_rooms < 1:
            raise HouseGenerationError(f"num_rooms must be at least 1, got {self.num_rooms}")
        if self.rng_seed < 0:
            raise HouseGenerationError("rng_seed must be non-negative")
        lo, hi = self.objects_per_room
        if lo < 0 or hi < lo:
            raise HouseGenerationError(f"Invalid objects_per_room range {self.objects_per_room}")
        requested = 0
        for room_type, count in self.room_type_mix:
            if room_type not in kb.room_types:
                raise HouseGenerationError(f"Unknown room type '{room_type}'")
            requested += count
        if requested > self.num_rooms:
            raise HouseGenerationError(f"room_type_mix asks for {requested} rooms but num_rooms is {self.num_rooms}")


@dataclass(frozen=True)
class Room:
    id: str
    bounds: Tuple[float, float, float, float]
    room_type: str
    cell_box: Tuple[int, int, int, int]  # interior cells, inclusive

    def contains(self, x: float, y: float, tolerance: float = 0.0) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 - tolerance <= x <= x1 + tolerance and y0 - tolerance <= y <= y1 + tolerance

    @property
    def center(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass(frozen=True)
class Door:
    id: str
    position: Tuple[float, float]
    connects: Tuple[str, str]
    open: bool
    cell: Cell


@dataclass(frozen=True)
class ObjectInstance:
    id: str
    category: str
    position: Tuple[float, float, float]
    max_dimension: float
    room_id: str


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Row-major grid indexed cells[y, x]"""

    cells: np.ndarray
    cell_size: float = Config.CELL_SIZE

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int8)
        cells.setflags(write=False)
        object.__setattr__(self, 'cells', cells)

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @cached_property
    def passable_mask(self) -> np.ndarray:
        mask = (self.cells == FREE) | (self.cells == DOOR_OPEN)
        mask.setflags(write=False)
        return mask

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def value(self, cell: Cell) -> int:
        return int(self.cells[cell[1], cell[0]])

    def is_passable(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and bool(self.passable_mask[cell[1], cell[0]])

    def cell_of(self, x: float, y: float) -> Cell:
        return (int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size)))

    def cell_center(self, cell: Cell) -> Tuple[float, float]:
        return ((cell[0] + 0.5) * self.cell_size, (cell[1] + 0.5) * self.cell_size)

    def index_of(self, cell: Cell) -> int:
        return cell[1] * self.width + cell[0]


@dataclass(frozen=True, eq=False)
class House:
    """Immutable ground-truth world"""

    house_id: str
    rooms: Tuple[Room, ...]
    doors: Tuple[Door, ...]
    objects: Tuple[ObjectInstance, ...]
    grid: OccupancyGrid
    seed: int = 0

    @cached_property
    def region_map(self) -> np.ndarray:
        """Room index per cell, -1 outside every room interior"""
        regions = np.full(self.grid.cells.shape, -1, dtype=np.int16)
        for index, room in enumerate(self.rooms):
            x0, y0, x1, y1 = room.cell_box
            regions[y0:y1 + 1, x0:x1 + 1] = index
        regions.setflags(write=False)
        return regions

    @cached_property
    def _rooms_by_id(self) -> Dict[str, Room]:
        return {room.id: room for room in self.rooms}

    def room_by_id(self, room_id: str) -> Room:
        return self._rooms_by_id[room_id]

    def room_of_cell(self, cell: Cell) -> Optional[Room]:
        if not self.grid.in_bounds(cell):
            return None
        index = int(self.region_map[cell[1], cell[0]])
        return self.rooms[index] if index >= 0 else None

    def room_at(self, x: float, y: float) -> Optional[Room]:
        return self.room_of_cell(self.grid.cell_of(x, y))

    def region_token(self, cell: Cell) -> Optional[str]:
        if not self.grid.in_bounds(cell):
            return None
        index = int(self.region_map[cell[1], cell[0]])
        return f"seg{index}" if index >= 0 else None

    def doors_of(self, room_id: str) -> List[Door]:
        return [door for door in self.doors if room_id in door.connects]

    def doors_at(self, cell: Cell) -> List[Door]:
        return [door for door in self.doors if door.cell == cell]

    def objects_in(self, room_id: str) -> List[ObjectInstance]:
        return [obj for obj in self.objects if obj.room_id == room_id]

    def objects_of(self, category: str) -> List[ObjectInstance]:
        return [obj for obj in self.objects if obj.category == category]


@dataclass(frozen=True)
class AgentState:
    cell: Cell
    position: Tuple[float, float]
    heading: int
    step_count: int = 0
    path_length: float = 0.0


@dataclass(frozen=True)
class Percept:
    category: str
    estimated_position: Tuple[float, float, float]
    entity_kind: str  # object | door | wall
    door_open_estimate: Optional[bool] = None
    estimated_dimension: Optional[float] = None
    entity_id: str = ''


@dataclass(frozen=True)
class Observation:
    pose: AgentState
    percepts: Tuple[Percept, ...]
    region_id: Optional[str] = None


@dataclass(frozen=True)
class PerceptionConfig:
    fov_degrees: float = 90.0
    max_range: float = 5.0
    min_angular_size: float = 0.02
    position_noise_sigma: float = 0.05
    gt_mode: bool = False
    noise_seed: int = 0

    def __post_init__(self):
        if not 0 < self.fov_degrees <= 360:
            raise ValueError(f"fov_degrees must be in (0, 360], got {self.fov_degrees}")
        if self.position_noise_sigma < 0:
            raise ValueError("position_noise_sigma must be non-negative")

    @classmethod
    def from_config(cls, cfg=Config, gt_mode: bool = False, noise_seed: int = 0) -> 'PerceptionConfig':
        return cls(
            fov_degrees=cfg.FOV_DEGREES,
            max_range=cfg.MAX_RANGE,
            min_angular_size=cfg.MIN_ANGULAR_SIZE,
            position_noise_sigma=0.0 if gt_mode else cfg.POSITION_NOISE_SIGMA,
            gt_mode=gt_mode,
            noise_seed=noise_seed,
        )

    @property
    def effective_sigma(self) -> float:
        return 0.0 if self.gt_mode else self.position_noise_sigma


# ---------------------------------------------------------------------------
# House construction
# ---------------------------------------------------------------------------

def room_bounds(cell_box: Tuple[int, int, int, int], cell_size: float) -> Tuple[float, float, float, float]:
    x0, y0, x1, y1 = cell_box
    return (x0 * cell_size, y0 * cell_size, (x1 + 1) * cell_size, (y1 + 1) * cell_size)


def house_from_ascii(rows: Sequence[str], room_types: Sequence[str] = (),
                     objects: Iterable[Tuple[str, float, float, float]] = (),
                     house_id: str = 'ascii', cell_size: float = Config.CELL_SIZE,
                     kb: KnowledgeBase = None) -> House:
    """Build a house from a text map: '#' wall, '.' floor, 'D' open door, 'C' closed door.

    Row 0 is y = 0. Rooms are the rectangular floor components in row-major discovery
    order; room_types are assigned in the same order (default 'unknown').
    """
    legend = {'#': WALL, '.': FREE, 'D': DOOR_OPEN, 'C': DOOR_CLOSED}
    width = max(len(row) for row in rows)
    cells = np.full((len(rows), width), WALL, dtype=np.int8)
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch not in legend:
                raise HouseGenerationError(f"Unknown map symbol {ch!r} at ({x}, {y})")
            cells[y, x] = legend[ch]
    grid = OccupancyGrid(cells, cell_size)

    seen = np.zeros(cells.shape, dtype=bool)
    rooms = []
    for y in range(grid.height):
        for x in range(grid.width):
            if cells[y, x] != FREE or seen[y, x]:
                continue
            component = _flood(cells, (x, y), seen)
            xs = [c[0] for c in component]
            ys = [c[1] for c in component]
            box = (min(xs), min(ys), max(xs), max(ys))
            index = len(rooms)
            room_type = room_types[index] if index < len(room_types) else 'unknown'
            rooms.append(Room(f"room_{index}", room_bounds(box, cell_size), room_type, box))

    partial = House(house_id, tuple(rooms), (), (), grid)
    doors = []
    for y in range(grid.height):
        for x in range(grid.width):
            if cells[y, x] not in (DOOR_OPEN, DOOR_CLOSED):
                continue
            sides = []
            for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
                room = partial.room_of_cell((nx, ny))
                if room is not None and room.id not in sides:
                    sides.append(room.id)
            if len(sides) != 2:
                raise HouseGenerationError(f"Door at ({x}, {y}) does not join two rooms")
            doors.append(Door(f"door_{len(doors)}", grid.cell_center((x, y)), (sides[0], sides[1]),
                              bool(cells[y, x] == DOOR_OPEN), (x, y)))

    instances = []
    for category, ox, oy, oz in objects:
        room = partial.room_at(ox, oy)
        if room is None:
            raise HouseGenerationError(f"Object '{category}' at ({ox}, {oy}) is not inside a room")
        if kb is not None:
            dimension = kb.max_dimension(category)
        else:
            dimension = load_knowledge_base().dimensions.get(category, 0.3)
        instances.append(ObjectInstance(f"obj_{len(instances)}", category, (ox, oy, oz), dimension, room.id))
    return House(house_id, tuple(rooms), tuple(doors), tuple(instances), grid)


def _flood(cells: np.ndarray, start: Cell, seen: np.ndarray) -> List[Cell]:
    height, width = cells.shape
    queue = deque([start])
    seen[start[1], start[0]] = True
    component = []
    while queue:
        x, y = queue.popleft()
        component.append((x, y))
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nx < width and 0 <= ny < height and not seen[ny, nx] and cells[ny, nx] == FREE:
                seen[ny, nx] = True
                queue.append((nx, ny))
    return component


def _capacity(lo_edge: int, hi_edge: int, min_span: int) -> int:
    return max(0, (hi_edge - lo_edge) // min_span)


def _split_regions(box, count, rng, min_span) -> List[Tuple[int, int, int, int]]:
    """Recursive binary split of a wall-inclusive box into `count` leaves.

    A box holds at most cols * rows rooms, where cols and rows count whole min_span
    strips along each axis; every split keeps both halves within that capacity.
    """
    x0, y0, x1, y1 = box
    cols, rows = _capacity(x0, x1, min_span), _capacity(y0, y1, min_span)
    if cols * rows < count:
        raise HouseGenerationError(f"Region {box} is too small for {count} rooms")
    if count == 1:
        return [box]
    axes = ['x', 'y'] if x1 - x0 >= y1 - y0 else ['y', 'x']
    for axis in axes:
        strips, across = (cols, rows) if axis == 'x' else (rows, cols)
        if strips < 2:
            continue
        lo_edge, hi_edge = (x0, x1) if axis == 'x' else (y0, y1)
        first_strips = strips // 2
        left = int(round(count * first_strips / strips))
        left = min(max(left, 1, count - (strips - first_strips) * across), first_strips * across, count - 1)
        low = lo_edge + first_strips * min_span
        high = hi_edge - (strips - first_strips) * min_span
        target = lo_edge + int(round((hi_edge - lo_edge) * left / count)) + int(rng.integers(-1, 2))
        cut = min(max(target, low), high)
        if axis == 'x':
            first, second = (x0, y0, cut, y1), (cut, y0, x1, y1)
        else:
            first, second = (x0, y0, x1, cut), (x0, cut, x1, y1)
        return _split_regions(first, left, rng, min_span) + _split_regions(second, count - left, rng, min_span)
    raise HouseGenerationError(f"Region {box} is too small for {count} rooms")


def _shared_wall(a, b):
    """Door cell candidates on the wall shared by two wall-inclusive boxes"""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    if ax1 == bx0 or bx1 == ax0:
        wall_x = ax1 if ax1 == bx0 else ax0
        lo, hi = max(ay0, by0) + 1, min(ay1, by1) - 1
        if hi - lo + 1 >= 2:
            return (wall_x, (lo + hi) // 2)
    if ay1 == by0 or by1 == ay0:
        wall_y = ay1 if ay1 == by0 else ay0
        lo, hi = max(ax0, bx0) + 1, min(ax1, bx1) - 1
        if hi - lo + 1 >= 2:
            return ((lo + hi) // 2, wall_y)
    return None


def _assign_room_types(spec: HouseSpec, kb: KnowledgeBase, rng) -> List[str]:
    types = []
    for room_type, count in spec.room_type_mix:
        types.extend([room_type] * count)
    preferred = ['bedroom', 'kitchen', 'living room', 'bathroom', 'office',
                 'dining room', 'laundry room', 'hallway']
    for room_type in preferred:
        if len(types) >= spec.num_rooms:
            break
        if room_type not in types and room_type in kb.room_types:
            types.append(room_type)
    filler = [t for t in ('bedroom', 'bathroom', 'office', 'living room') if t in kb.room_types]
    while len(types) < spec.num_rooms:
        types.append(filler[int(rng.integers(len(filler)))])
    order = rng.permutation(len(types))
    return [types[i] for i in order]


def _place_objects(rooms: List[Room], spec: HouseSpec, kb: KnowledgeBase, rng,
                   cell_size: float) -> List[ObjectInstance]:
    placed: List[ObjectInstance] = []

    def far_from_same_category(category, x, y, min_gap=1.0):
        return all(math.hypot(o.position[0] - x, o.position[1] - y) >= min_gap
                   for o in placed if o.category == category)

    def add(category, x, y, room):
        obj = ObjectInstance(f"obj_{len(placed)}", category, (round(x, 4), round(y, 4), kb.height(category)),
                             kb.max_dimension(category), room.id)
        placed.append(obj)
        return obj

    lo, hi = spec.objects_per_room
    for room in rooms:
        x0, y0, x1, y1 = room.cell_box
        landmarks: List[ObjectInstance] = []
        wanted = list(kb.required_landmarks(room.room_type))
        for name, probability in kb.optional_landmarks(room.room_type):
            if rng.random() < probability:
                wanted.append(name)
        for index, name in enumerate(wanted):
            required = index < len(kb.required_landmarks(room.room_type))
            for attempt in range(40):
                cx = int(rng.integers(x0 + 1, x1)) if x1 - x0 >= 2 else x0
                cy = int(rng.integers(y0 + 1, y1)) if y1 - y0 >= 2 else y0
                px, py = (cx + 0.5) * cell_size, (cy + 0.5) * cell_size
                spaced = all(math.hypot(l.position[0] - px, l.position[1] - py) >= 0.75 for l in landmarks)
                if (spaced or (required and attempt >= 20)) and far_from_same_category(name, px, py):
                    landmarks.append(add(name, px, py, room))
                    break

        candidates = []
        for category in kb.small_categories():
            if kb.room_score(category, room.room_type) < 0.4:
                continue
            best = max((kb.landmark_score(category, l.category) for l in landmarks), default=0.0)
            if best >= 0.5:
                candidates.append((category, kb.room_score(category, room.room_type) * best))
        if not candidates:
            continue
        count = min(int(rng.integers(lo, hi + 1)), len(candidates))
        if count == 0:
            continue
        weights = np.array([w for _, w in candidates], dtype=float)
        chosen = rng.choice(len(candidates), size=count, replace=False, p=weights / weights.sum())
        for choice in sorted(int(c) for c in chosen):
            category = candidates[choice][0]
            anchor = max(landmarks, key=lambda l: (kb.landmark_score(category, l.category), -int(l.id[4:])))
            ax, ay = anchor.position[0], anchor.position[1]
            acx, acy = int(ax // cell_size), int(ay // cell_size)
            for _ in range(30):
                dx, dy = int(rng.integers(-3, 4)), int(rng.integers(-3, 4))
                if dx == 0 and dy == 0:
                    continue
                cx, cy = acx + dx, acy + dy
                if not (x0 <= cx <= x1 and y0 <= cy <= y1):
                    continue
                jitter = rng.uniform(-0.1, 0.1, size=2)
                px = (cx + 0.5) * cell_size + float(jitter[0])
                py = (cy + 0.5) * cell_size + float(jitter[1])
                if far_from_same_category(category, px, py):
                    add(category, px, py, room)
                    break
    return placed


def _layout(spec: HouseSpec, kb: KnowledgeBase, rng, cfg) -> Tuple[List[Tuple[int, int, int, int]], int, int]:
    min_span = cfg.MIN_ROOM_SPAN
    if spec.footprint is not None:
        width = int(round(spec.footprint[0] / cfg.CELL_SIZE))
        height = int(round(spec.footprint[1] / cfg.CELL_SIZE))
    else:
        cols = math.ceil(math.sqrt(spec.num_rooms))
        rows = math.ceil(spec.num_rooms / cols)
        width = cols * int(rng.integers(13, 18))
        height = rows * int(rng.integers(13, 18))
    if width < min_span or height < min_span:
        raise HouseGenerationError(f"Footprint {width}x{height} cells is smaller than one room")
    boxes = _split_regions((0, 0, width, height), spec.num_rooms, rng, min_span)
    return boxes, width, height


def generate_house(spec: HouseSpec, kb: KnowledgeBase = None, cfg=Config, house_id: str = None,
                   max_attempts: int = 10) -> House:
    """Generate a house satisfying every House invariant, deterministic in spec.rng_seed"""
    kb = kb or load_knowledge_base(cfg.KB_PATH)
    spec.validate(kb)
    last_error = None
    for attempt in range(max_attempts):
        rng = np.random.default_rng([spec.rng_seed, attempt])
        try:
            house = _build(spec, kb, rng, cfg, house_id or f"house-{spec.rng_seed}")
            logger.debug(f"Generated {house.house_id}: {len(house.rooms)} rooms, {len(house.doors)} doors, "
                         f"{len(house.objects)} objects (attempt {attempt + 1})")
            return house
        except HouseGenerationError as e:
            last_error = e
            if spec.footprint is not None:
                break
    raise HouseGenerationError(f"Could not generate house for seed {spec.rng_seed}: {last_error}")


def _build(spec: HouseSpec, kb: KnowledgeBase, rng, cfg, house_id: str) -> House:
    cell_size = cfg.CELL_SIZE
    boxes, width, height = _layout(spec, kb, rng, cfg)
    cells = np.full((height + 1, width + 1), WALL, dtype=np.int8)
    for x0, y0, x1, y1 in boxes:
        cells[y0 + 1:y1, x0 + 1:x1] = FREE

    types = _assign_room_types(spec, kb, rng)
    rooms = []
    for index, (x0, y0, x1, y1) in enumerate(boxes):
        box = (x0 + 1, y0 + 1, x1 - 1, y1 - 1)
        rooms.append(Room(f"room_{index}", room_bounds(box, cell_size), types[index], box))

    adjacency: Dict[int, Dict[int, Cell]] = {i: {} for i in range(len(boxes))}
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            cell = _shared_wall(boxes[i], boxes[j])
            if cell is not None:
                adjacency[i][j] = cell
                adjacency[j][i] = cell

    tree = set()
    visited = {0}
    queue = deque([0])
    while queue:
        current = queue.popleft()
        for neighbor in sorted(adjacency[current]):
            if neighbor not in visited:
                visited.add(neighbor)
                tree.add((min(current, neighbor), max(current, neighbor)))
                queue.append(neighbor)
    if len(visited) != len(boxes):
        raise HouseGenerationError("Room adjacency graph is not connected")

    door_specs = []
    for i in range(len(boxes)):
        for j in sorted(k for k in adjacency[i] if k > i):
            if (i, j) in tree:
                door_specs.append((i, j, True))
            elif rng.random() < cfg.EXTRA_DOOR_PROBABILITY:
                door_specs.append((i, j, bool(rng.random() < cfg.DOOR_OPEN_PROBABILITY)))
    doors = []
    for i, j, is_open in door_specs:
        cell = adjacency[i][j]
        cells[cell[1], cell[0]] = DOOR_OPEN if is_open else DOOR_CLOSED
        doors.append(Door(f"door_{len(doors)}", ((cell[0] + 0.5) * cell_size, (cell[1] + 0.5) * cell_size),
                          (rooms[i].id, rooms[j].id), is_open, cell))

    objects = _place_objects(rooms, spec, kb, rng, cell_size)
    return House(house_id, tuple(rooms), tuple(doors), tuple(objects),
                 OccupancyGrid(cells, cell_size), spec.rng_seed)


# ---------------------------------------------------------------------------
# Agent dynamics
# ---------------------------------------------------------------------------

def spawn_state(house: House, position: Tuple[float, float], heading: int) -> AgentState:
    if heading not in HEADINGS:
        raise ValueError(f"Heading must be one of {HEADINGS}, got {heading}")
    cell = house.grid.cell_of(*position)
    if not house.grid.is_passable(cell):
        raise ValueError(f"Spawn position {position} is not on a free cell")
    return AgentState(cell, house.grid.cell_center(cell), heading)


def step(house: House, state: AgentState, action: str) -> Tuple[AgentState, bool]:
    """Apply one primitive action; blocked moves report collided instead of failing"""
    if action not in ACTIONS:
        raise ValueError(f"Unknown action '{action}'")
    count = state.step_count + 1
    if action == 'turn_left':
        return replace(state, heading=(state.heading + 90) % 360, step_count=count), False
    if action == 'turn_right':
        return replace(state, heading=(state.heading - 90) % 360, step_count=count), False
    if action == 'stop':
        return replace(state, step_count=count), False
    dx, dy = HEADING_VECTORS[state.heading]
    target = (state.cell[0] + dx, state.cell[1] + dy)
    if not house.grid.is_passable(target):
        return replace(state, step_count=count), True
    return AgentState(target, house.grid.cell_center(target), state.heading, count,
                      state.path_length + house.grid.cell_size), False


def reachable_cells(house: House, start: Cell) -> Set[Cell]:
    """Flood fill over free and open-door cells"""
    grid = house.grid
    if not grid.is_passable(start):
        raise ValueError(f"Cell {start} is not passable")
    mask = grid.passable_mask
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if (nx, ny) not in seen and 0 <= nx < grid.width and 0 <= ny < grid.height and mask[ny, nx]:
                seen.add((nx, ny))
                queue.append((nx, ny))
    return seen


# ---------------------------------------------------------------------------
# Perception
# ---------------------------------------------------------------------------

def _noise(cfg: PerceptionConfig, step_count: int, entity_id: str) -> np.ndarray:
    sigma = cfg.effective_sigma
    if sigma == 0:
        return np.zeros(3)
    rng = np.random.default_rng([cfg.noise_seed, step_count, zlib.crc32(entity_id.encode('utf-8'))])
    return np.clip(rng.normal(0.0, sigma, size=3), -3 * sigma, 3 * sigma)


def _line_of_sight(grid: OccupancyGrid, origin: Tuple[float, float], targets: np.ndarray,
                   skip_target_cell: np.ndarray) -> np.ndarray:
    """Vectorized sampled-ray visibility; walls and closed doors block"""
    if len(targets) == 0:
        return np.zeros(0, dtype=bool)
    origin_arr = np.asarray(origin, dtype=float)
    deltas = targets - origin_arr
    distances = np.hypot(deltas[:, 0], deltas[:, 1])
    samples = max(2, int(math.ceil(distances.max() / (grid.cell_size / 4.0))) + 1)
    t = np.linspace(0.0, 1.0, samples)
    points = origin_arr[None, None, :] + t[None, :, None] * deltas[:, None, :]
    cx = np.floor(points[..., 0] / grid.cell_size).astype(int)
    cy = np.floor(points[..., 1] / grid.cell_size).astype(int)
    inside = (cx >= 0) & (cx < grid.width) & (cy >= 0) & (cy < grid.height)
    values = np.full(cx.shape, WALL, dtype=np.int8)
    values[inside] = grid.cells[cy[inside], cx[inside]]
    blocking = (values == WALL) | (values == DOOR_CLOSED)
    tx = np.floor(targets[:, 0] / grid.cell_size).astype(int)
    ty = np.floor(targets[:, 1] / grid.cell_size).astype(int)
    at_target = (cx == tx[:, None]) & (cy == ty[:, None])
    blocking &= ~(at_target & skip_target_cell[:, None])
    ox, oy = grid.cell_of(*origin)
    blocking &= ~((cx == ox) & (cy == oy))
    return ~blocking.any(axis=1)


def _in_capture(bearing: float, facing: int, fov: float) -> bool:
    diff = (bearing - facing + 180.0) % 360.0 - 180.0
    return abs(diff) <= fov / 2.0 + 1e-9


def _wall_feet(room: Room, x: float, y: float) -> List[Tuple[str, float, float]]:
    x0, y0, x1, y1 = room.bounds
    return [('west', x0, y), ('east', x1, y), ('south', x, y0), ('north', x, y1)]


def _ground_truth_percepts(house: House, state: AgentState) -> List[Percept]:
    room = house.room_of_cell(state.cell)
    if room is not None:
        room_ids = [room.id]
    else:
        room_ids = sorted({rid for door in house.doors_at(state.cell) for rid in door.connects})
    percepts = []
    if room is not None:
        for side, wx, wy in _wall_feet(room, *state.position):
            percepts.append(Percept('wall', (wx, wy, 0.0), 'wall', entity_id=f"wall:{room.id}:{side}"))
    doors = {door.id: door for rid in room_ids for door in house.doors_of(rid)}
    for door_id in sorted(doors):
        door = doors[door_id]
        percepts.append(Percept('door', (door.position[0], door.position[1], 0.0), 'door',
                                door_open_estimate=door.open, entity_id=door.id))
    for rid in room_ids:
        for obj in house.objects_in(rid):
            percepts.append(Percept(obj.category, obj.position, 'object',
                                    estimated_dimension=obj.max_dimension, entity_id=obj.id))
    return percepts


def _visual_percepts(house: House, state: AgentState, cfg: PerceptionConfig) -> List[Percept]:
    px, py = state.position
    entities = []
    for obj in house.objects:
        entities.append(('object', obj.id, obj.category, obj.position, obj.max_dimension, None))
    for door in house.doors:
        entities.append(('door', door.id, 'door', (door.position[0], door.position[1], 0.0), None, door.open))

    candidates = []
    for entity in entities:
        kind, _, _, position, dimension, _ = entity
        distance = math.hypot(position[0] - px, position[1] - py)
        if distance > cfg.max_range:
            continue
        if kind == 'object' and distance > 0 and dimension / distance < cfg.min_angular_size:
            continue
        candidates.append((entity, distance))

    targets = np.array([[e[3][0], e[3][1]] for e, _ in candidates], dtype=float).reshape(-1, 2)
    skip = np.array([e[0] == 'door' for e, _ in candidates], dtype=bool)
    visible = _line_of_sight(house.grid, state.position, targets, skip)

    seen: Dict[str, Percept] = {}
    for facing_offset in (0, 90, 180, 270):
        facing = (state.heading + facing_offset) % 360
        for (entity, distance), is_visible in zip(candidates, visible):
            kind, entity_id, category, position, dimension, is_open = entity
            if not is_visible or entity_id in seen:
                continue
            bearing = math.degrees(math.atan2(position[1] - py, position[0] - px)) if distance > 0 else facing
            if not _in_capture(bearing, facing, cfg.fov_degrees):
                continue
            offset = _noise(cfg, state.step_count, entity_id)
            estimate = (position[0] + float(offset[0]), position[1] + float(offset[1]), position[2] + float(offset[2]))
            seen[entity_id] = Percept(category, estimate, kind, door_open_estimate=is_open,
                                      estimated_dimension=dimension, entity_id=entity_id)

    percepts = list(seen.values())
    room = house.room_of_cell(state.cell)
    if room is not None:
        for side, wx, wy in _wall_feet(room, px, py):
            if math.hypot(wx - px, wy - py) > cfg.max_range:
                continue
            wall_id = f"wall:{room.id}:{side}"
            offset = _noise(cfg, state.step_count, wall_id)
            percepts.append(Percept('wall', (wx + float(offset[0]), wy + float(offset[1]), 0.0), 'wall',
                                    entity_id=wall_id))
    return percepts


def look_around(house: House, state: AgentState, cfg: PerceptionConfig,
                cost: int = Config.LOOK_AROUND_COST) -> Observation:
    """Four 90-degree captures at the current pose; the returned pose carries the step cost"""
    if cfg.gt_mode:
        percepts = _ground_truth_percepts(house, state)
    else:
        percepts = _visual_percepts(house, state, cfg)
    percepts.sort(key=lambda p: (p.entity_kind, p.entity_id))
    pose = replace(state, step_count=state.step_count + cost)
    return Observation(pose, tuple(percepts), house.region_token(state.cell))


class Simulator:
    """Single-episode session: spawn, step, look_around with trajectory recording"""

    def __init__(self, house: House, perception: PerceptionConfig,
                 trace_hook: Callable[[str, dict], None] = None, look_cost: int = Config.LOOK_AROUND_COST):
        self.house = house
        self.perception = perception
        self.trace_hook = trace_hook
        self.look_cost = look_cost
        self.state: Optional[AgentState] = None
        self.trajectory: List[Tuple[float, float]] = []

    def spawn(self, position: Tuple[float, float], heading: int) -> AgentState:
        self.state = spawn_state(self.house, position, heading)
        self.trajectory = [self.state.position]
        return self.state

    def step(self, action: str) -> bool:
        if self.state is None:
            raise RuntimeError("Agent has not been spawned")
        self.state, collided = step(self.house, self.state, action)
        self.trajectory.append(self.state.position)
        if self.trace_hook:
            self.trace_hook('pose', {'action': action, 'collided': collided,
                                     'position': list(self.state.position), 'heading': self.state.heading})
        return collided

    def look_around(self) -> Observation:
        if self.state is None:
            raise RuntimeError("Agent has not been spawned")
        observation = look_around(self.house, self.state, self.perception, self.look_cost)
        self.state = observation.pose
        return observation


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _rle_encode(cells: np.ndarray) -> List[List[int]]:
    flat = cells.ravel()
    runs = []
    start = 0
    for index in range(1, len(flat) + 1):
        if index == len(flat) or flat[index] != flat[start]:
            runs.append([int(flat[start]), index - start])
            start = index
    return runs


def _rle_decode(runs, width: int, height: int) -> np.ndarray:
    flat = np.concatenate([np.full(count, value, dtype=np.int8) for value, count in runs]) \
        if runs else np.zeros(0, dtype=np.int8)
    if flat.size != width * height:
        raise ValueError(f"Grid run lengths cover {flat.size} cells, expected {width * height}")
    return flat.reshape(height, width)


def house_to_json(house: House) -> dict:
    return {
        'schema_version': HOUSE_SCHEMA_VERSION,
        'house_id': house.house_id,
        'seed': house.seed,
        'cell_size': house.grid.cell_size,
        'width': house.grid.width,
        'height': house.grid.height,
        'grid': _rle_encode(house.grid.cells),
        'rooms': [{'id': r.id, 'bounds': list(r.bounds), 'room_type': r.room_type, 'cell_box': list(r.cell_box)}
                  for r in house.rooms],
        'doors': [{'id': d.id, 'position': list(d.position), 'connects': list(d.connects), 'open': d.open,
                   'cell': list(d.cell)} for d in house.doors],
        'objects': [{'id': o.id, 'category': o.category, 'position': list(o.position),
                     'max_dimension': o.max_dimension, 'room_id': o.room_id} for o in house.objects],
    }


def house_from_json(data: dict) -> House:
    version = data.get('schema_version')
    if version != HOUSE_SCHEMA_VERSION:
        raise SchemaVersionError(f"Unsupported house schema_version {version!r}")
    grid = OccupancyGrid(_rle_decode(data['grid'], data['width'], data['height']), data['cell_size'])
    rooms = tuple(Room(r['id'], tuple(r['bounds']), r['room_type'], tuple(r['cell_box'])) for r in data['rooms'])
    doors = tuple(Door(d['id'], tuple(d['position']), tuple(d['connects']), bool(d['open']), tuple(d['cell']))
                  for d in data['doors'])
    objects = tuple(ObjectInstance(o['id'], o['category'], tuple(o['position']), float(o['max_dimension']),
                                   o['room_id']) for o in data['objects'])
    return House(data['house_id'], rooms, doors, objects, grid, data.get('seed', 0))


def save_house(house: House, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(house_to_json(house), f, sort_keys=True)


def load_house(path: str) -> House:
    with open(path, 'r', encoding='utf-8') as f:
        return house_from_json(json.load(f))
