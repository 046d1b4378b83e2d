#!/usr/bin/env python3
"""
RoomScout Scene Graph
Incrementally built four-level graph: small objects, large objects, rooms and the house root
"""

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple

from config import Config
from house_sim import Observation, Percept
from knowledge_base import KnowledgeBase, load_knowledge_base

logger = logging.getLogger(__name__)

LARGE = 'Large'
SMALL = 'Small'
HOUSE_NODE = 'H'
NO_OBJECTS_SENTINEL = 'no objects observed'


class GraphError(Exception):
    """Raised for unknown nodes or invalid graph queries"""


def node_sort_key(node_id: str):
    """Order ids by their numeric suffix, then by the full id"""
    match = re.search(r'(\d+)$', node_id)
    return (int(match.group(1)) if match else -1, node_id)


def classify_size(category: str, max_dimension: Optional[float] = None, kb: KnowledgeBase = None,
                  threshold: float = Config.LARGE_DIMENSION_THRESHOLD) -> str:
    """Large iff the category is a landmark or the object is at least `threshold` meters"""
    kb = kb or load_knowledge_base()
    if max_dimension is None:
        if category not in kb.dimensions:
            raise GraphError(f"Unknown category '{category}' with no dimension")
        max_dimension = kb.dimensions[category]
    if not max_dimension > 0:
        raise GraphError(f"Dimension of '{category}' must be positive, got {max_dimension}")
    return LARGE if kb.is_landmark(category) or max_dimension >= threshold else SMALL


@dataclass(frozen=True)
class GraphConfig:
    association_radius: float = Config.ASSOCIATION_RADIUS
    near_radius: float = Config.NEAR_RADIUS
    large_threshold: float = Config.LARGE_DIMENSION_THRESHOLD
    bounds_tolerance: float = Config.BOUNDS_TOLERANCE
    stub_bind_radius: float = Config.STUB_BIND_RADIUS

    @classmethod
    def from_config(cls, cfg=Config) -> 'GraphConfig':
        return cls(cfg.ASSOCIATION_RADIUS, cfg.NEAR_RADIUS, cfg.LARGE_DIMENSION_THRESHOLD,
                   cfg.BOUNDS_TOLERANCE, cfg.STUB_BIND_RADIUS)


@dataclass
class RoomNode:
    id: str
    bounds: Optional[List[float]] = None
    room_type: Optional[str] = None
    investigated: bool = False
    skipped_for: Set[str] = field(default_factory=set)
    door_ids: List[str] = field(default_factory=list)
    provisional: bool = False
    merged_into: Optional[str] = None
    region_id: Optional[str] = None

    def expand(self, x: float, y: float):
        if self.bounds is None:
            self.bounds = [x, y, x, y]
        else:
            self.bounds = [min(self.bounds[0], x), min(self.bounds[1], y),
                           max(self.bounds[2], x), max(self.bounds[3], y)]

    def contains(self, x: float, y: float, tolerance: float = 0.0) -> bool:
        if self.bounds is None:
            return False
        x0, y0, x1, y1 = self.bounds
        return x0 - tolerance <= x <= x1 + tolerance and y0 - tolerance <= y <= y1 + tolerance

    @property
    def center(self) -> Optional[Tuple[float, float]]:
        if self.bounds is None:
            return None
        return ((self.bounds[0] + self.bounds[2]) / 2.0, (self.bounds[1] + self.bounds[3]) / 2.0)


@dataclass
class ObjectNode:
    id: str
    category: str
    position: List[float]
    room_id: str
    observation_count: int = 1

    def absorb(self, position: Tuple[float, float, float]):
        n = self.observation_count
        self.position = [(p * n + q) / (n + 1) for p, q in zip(self.position, position)]
        self.observation_count = n + 1

    def distance_to(self, x: float, y: float) -> float:
        return math.hypot(self.position[0] - x, self.position[1] - y)


@dataclass
class LargeObjectNode(ObjectNode):
    size_class: str = LARGE


@dataclass
class SmallObjectNode(ObjectNode):
    size_class: str = SMALL
    relation: str = 'in'  # 'near' a large node or 'in' a room
    parent: str = ''


@dataclass
class DoorEdge:
    id: str
    position: List[float]
    rooms: List[str]
    open_estimate: bool = True
    traversed: bool = False
    abandoned: bool = False
    observation_count: int = 1


@dataclass
class GraphDelta:
    created: List[str] = field(default_factory=list)
    updated: List[str] = field(default_factory=list)
    traversed: List[str] = field(default_factory=list)
    rejected: int = 0

    @property
    def is_empty(self) -> bool:
        return not (self.created or self.updated or self.traversed)

    @property
    def node_ids(self) -> List[str]:
        return sorted(set(self.created) | set(self.updated), key=node_sort_key)


@dataclass
class Subgraph:
    room: RoomNode
    large: List[LargeObjectNode]
    small: List[SmallObjectNode]
    doors: List[DoorEdge]

    @property
    def node_count(self) -> int:
        return 1 + len(self.large) + len(self.small)

    @property
    def edge_count(self) -> int:
        return len(self.large) + len(self.small) + len(self.doors)

    @property
    def categories(self) -> List[str]:
        return sorted({node.category for node in self.large} | {node.category for node in self.small})

    def node_ids(self) -> Set[str]:
        return {n.id for n in self.large} | {n.id for n in self.small} | {d.id for d in self.doors}

    def large_by_id(self, node_id: str) -> Optional[LargeObjectNode]:
        for node in self.large:
            if node.id == node_id:
                return node
        return None


def _fingerprint(obs: Observation) -> str:
    payload = {
        'pose': [list(obs.pose.cell), obs.pose.heading, obs.pose.step_count],
        'region': obs.region_id,
        'percepts': sorted([p.entity_kind, p.category, p.entity_id, [round(v, 9) for v in p.estimated_position],
                            p.door_open_estimate, p.estimated_dimension] for p in obs.percepts),
    }
    return hashlib.sha1(json.dumps(payload, sort_keys=True, default=str).encode('utf-8')).hexdigest()


def _finite(percept: Percept) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in percept.estimated_position)


class SceneGraph:
    """Single-writer belief graph built from Observations"""

    def __init__(self, kb: KnowledgeBase = None, config: GraphConfig = None):
        self.kb = kb or load_knowledge_base()
        self.config = config or GraphConfig()
        self.rooms: Dict[str, RoomNode] = {}
        self.large: Dict[str, LargeObjectNode] = {}
        self.small: Dict[str, SmallObjectNode] = {}
        self.doors: Dict[str, DoorEdge] = {}
        self.current_room_id: Optional[str] = None
        self._region_rooms: Dict[str, str] = {}
        self._fingerprints: Set[str] = set()
        self._node_counter = 0
        self._room_counter = 0

    # -- ids and lookups ---------------------------------------------------

    def _next_id(self, category: str) -> str:
        self._node_counter += 1
        slug = re.sub(r'[^a-z0-9]+', '_', category.lower()).strip('_')
        return f"{slug}_{self._node_counter}"

    def _new_room(self, provisional: bool = False) -> RoomNode:
        self._room_counter += 1
        room = RoomNode(f"r{self._room_counter}", provisional=provisional)
        self.rooms[room.id] = room
        return room

    def resolve_room(self, room_id: str) -> str:
        seen = set()
        while room_id in self.rooms and self.rooms[room_id].merged_into and room_id not in seen:
            seen.add(room_id)
            room_id = self.rooms[room_id].merged_into
        return room_id

    def room(self, room_id: str) -> RoomNode:
        resolved = self.resolve_room(room_id)
        if resolved not in self.rooms:
            raise GraphError(f"Unknown room '{room_id}'")
        return self.rooms[resolved]

    def active_rooms(self) -> List[RoomNode]:
        return [room for room in self.rooms.values() if room.merged_into is None]

    def node_count(self) -> int:
        return 1 + len(self.rooms) + len(self.large) + len(self.small)

    def objects_in_room(self, room_id: str) -> List[ObjectNode]:
        room_id = self.resolve_room(room_id)
        nodes = [n for n in self.large.values() if n.room_id == room_id]
        nodes += [n for n in self.small.values() if n.room_id == room_id]
        return sorted(nodes, key=lambda n: node_sort_key(n.id))

    def doors_of(self, room_id: str) -> List[DoorEdge]:
        room_id = self.resolve_room(room_id)
        return sorted((d for d in self.doors.values() if room_id in d.rooms), key=lambda d: node_sort_key(d.id))

    def other_side(self, door: DoorEdge, room_id: str) -> str:
        room_id = self.resolve_room(room_id)
        a, b = door.rooms
        return b if a == room_id else a

    # -- integration -------------------------------------------------------

    def integrate_observation(self, obs: Observation) -> GraphDelta:
        """Associate every percept with the graph; returns created/updated node ids"""
        delta = GraphDelta()
        fingerprint = _fingerprint(obs)
        if fingerprint in self._fingerprints:
            return delta
        self._fingerprints.add(fingerprint)

        percepts = []
        for percept in obs.percepts:
            if _finite(percept):
                percepts.append(percept)
            else:
                delta.rejected += 1
                logger.warning(f"Rejected percept '{percept.category}' with non-finite position "
                               f"{percept.estimated_position}")

        previous_room = self.current_room_id
        room = self._resolve_current_room(obs, delta)

        def ordered(kind):
            group = [p for p in percepts if p.entity_kind == kind]
            return sorted(group, key=lambda p: (p.category, p.estimated_position[0], p.estimated_position[1]))

        if obs.region_id is not None:
            for percept in ordered('wall'):
                room.expand(percept.estimated_position[0], percept.estimated_position[1])
        for percept in ordered('door'):
            self._integrate_door(percept, room, delta)

        objects = ordered('object')
        large, small = [], []
        for percept in objects:
            size = classify_size(percept.category, percept.estimated_dimension, self.kb, self.config.large_threshold)
            (large if size == LARGE else small).append(percept)
        new_large = [self._integrate_object(p, room, delta, LARGE) for p in large]
        self._reparent_small([n for n in new_large if n is not None])
        for percept in small:
            self._integrate_object(percept, room, delta, SMALL)

        current = self.resolve_room(room.id)
        if previous_room is not None and obs.region_id is not None:
            previous = self.resolve_room(previous_room)
            if previous != current:
                self._mark_traversal(previous, current, obs, delta)
        return delta

    def _resolve_current_room(self, obs: Observation, delta: GraphDelta) -> RoomNode:
        region = obs.region_id
        if region is None:
            if self.current_room_id is None:
                room = self._new_room()
                self.current_room_id = room.id
                delta.created.append(room.id)
            return self.room(self.current_room_id)
        if region in self._region_rooms:
            room = self.room(self._region_rooms[region])
        else:
            room = self._bind_region(obs, delta)
            room.region_id = region
            self._region_rooms[region] = room.id
        self.current_room_id = room.id
        return room

    def _bind_region(self, obs: Observation, delta: GraphDelta) -> RoomNode:
        px, py = obs.pose.position
        best = None
        for door in sorted(self.doors.values(), key=lambda d: node_sort_key(d.id)):
            stubs = [r for r in door.rooms if self.rooms[r].provisional]
            if not stubs:
                continue
            distance = math.hypot(door.position[0] - px, door.position[1] - py)
            if distance <= self.config.stub_bind_radius and (best is None or distance < best[0]):
                best = (distance, stubs[0])
        if best is not None:
            room = self.rooms[best[1]]
            room.provisional = False
            delta.updated.append(room.id)
            logger.debug(f"Region {obs.region_id} bound to stub {room.id}")
            return room
        room = self._new_room()
        delta.created.append(room.id)
        return room

    def _integrate_door(self, percept: Percept, room: RoomNode, delta: GraphDelta):
        x, y, z = percept.estimated_position
        if room.bounds is not None and not room.contains(x, y, self.config.bounds_tolerance):
            return
        existing = self._nearest(self.doors.values(), x, y)
        open_estimate = bool(percept.door_open_estimate) if percept.door_open_estimate is not None else True
        if existing is not None:
            existing.position = [(p * existing.observation_count + q) / (existing.observation_count + 1)
                                 for p, q in zip(existing.position, (x, y, z))]
            existing.observation_count += 1
            existing.open_estimate = open_estimate and not existing.abandoned
            if room.id not in existing.rooms:
                stubs = [r for r in existing.rooms if self.rooms[r].provisional]
                if stubs:
                    self._merge_rooms(stubs[0], room.id, delta)
                else:
                    logger.debug(f"Door {existing.id} seen from {room.id} but joins {existing.rooms}")
            delta.updated.append(existing.id)
            return
        stub = self._new_room(provisional=True)
        door = DoorEdge(self._next_id('door'), [x, y, z], [room.id, stub.id], open_estimate)
        self.doors[door.id] = door
        room.door_ids.append(door.id)
        stub.door_ids.append(door.id)
        delta.created.extend([door.id, stub.id])

    def _merge_rooms(self, stub_id: str, target_id: str, delta: GraphDelta):
        stub = self.rooms[stub_id]
        target = self.rooms[target_id]
        stub.merged_into = target_id
        stub.provisional = False
        for door in self.doors.values():
            door.rooms = [target_id if r == stub_id else r for r in door.rooms]
            if door.id in stub.door_ids and door.id not in target.door_ids:
                target.door_ids.append(door.id)
        for node in list(self.large.values()) + list(self.small.values()):
            if node.room_id == stub_id:
                node.room_id = target_id
                if isinstance(node, SmallObjectNode) and node.relation == 'in':
                    node.parent = target_id
        delta.updated.append(target_id)
        logger.debug(f"Merged stub {stub_id} into {target_id}")

    def _nearest(self, nodes: Iterable, x: float, y: float, category: str = None):
        best, best_distance = None, self.config.association_radius
        for node in sorted(nodes, key=lambda n: node_sort_key(n.id)):
            if category is not None and node.category != category:
                continue
            distance = math.hypot(node.position[0] - x, node.position[1] - y)
            if distance <= best_distance:
                best, best_distance = node, distance
        return best

    def _membership(self, x: float, y: float, room: RoomNode) -> str:
        tolerance = self.config.bounds_tolerance
        if room.bounds is None or room.contains(x, y, tolerance):
            return room.id
        for other in sorted(self.active_rooms(), key=lambda r: node_sort_key(r.id)):
            if other.id != room.id and other.contains(x, y, tolerance):
                return other.id
        doors = self.doors_of(room.id)
        if not doors:
            return room.id
        nearest = min(doors, key=lambda d: (math.hypot(d.position[0] - x, d.position[1] - y), node_sort_key(d.id)))
        return self.other_side(nearest, room.id)

    def _integrate_object(self, percept: Percept, room: RoomNode, delta: GraphDelta, size: str):
        x, y, z = percept.estimated_position
        pool = self.large if size == LARGE else self.small
        existing = self._nearest(pool.values(), x, y, percept.category)
        if existing is not None:
            existing.absorb((x, y, z))
            delta.updated.append(existing.id)
            return None
        room_id = self._membership(x, y, room)
        node_id = self._next_id(percept.category)
        if size == LARGE:
            node = LargeObjectNode(node_id, percept.category, [x, y, z], room_id)
            self.large[node_id] = node
        else:
            node = SmallObjectNode(node_id, percept.category, [x, y, z], room_id)
            anchor = self._nearest_landmark(room_id, x, y)
            node.relation, node.parent = ('near', anchor.id) if anchor else ('in', room_id)
            self.small[node_id] = node
        delta.created.append(node_id)
        return node

    def _nearest_landmark(self, room_id: str, x: float, y: float) -> Optional[LargeObjectNode]:
        best, best_distance = None, self.config.near_radius
        for node in sorted(self.large.values(), key=lambda n: node_sort_key(n.id)):
            if node.room_id != room_id:
                continue
            distance = node.distance_to(x, y)
            if distance <= best_distance:
                best, best_distance = node, distance
        return best

    def _reparent_small(self, new_large: List[LargeObjectNode]):
        if not new_large:
            return
        for node in sorted(self.small.values(), key=lambda n: node_sort_key(n.id)):
            if node.relation != 'in':
                continue
            anchor = self._nearest_landmark(node.room_id, node.position[0], node.position[1])
            if anchor is not None:
                node.relation, node.parent = 'near', anchor.id

    def _mark_traversal(self, previous: str, current: str, obs: Observation, delta: GraphDelta):
        px, py = obs.pose.position
        joining = [d for d in self.doors.values() if set(d.rooms) == {previous, current}]
        if not joining:
            return
        door = min(joining, key=lambda d: (math.hypot(d.position[0] - px, d.position[1] - py), node_sort_key(d.id)))
        if not door.traversed:
            door.traversed = True
            delta.traversed.append(door.id)
            logger.debug(f"Door {door.id} traversed ({previous} -> {current})")

    # -- annotations -------------------------------------------------------

    def set_room_type(self, room_id: str, room_type: str):
        self.room(room_id).room_type = room_type

    def mark_investigated(self, room_id: str):
        self.room(room_id).investigated = True

    def mark_skipped(self, room_id: str, categories: Iterable[str]):
        self.room(room_id).skipped_for.update(categories)

    def mark_traversed(self, door_id: str):
        if door_id not in self.doors:
            raise GraphError(f"Unknown door '{door_id}'")
        self.doors[door_id].traversed = True

    def abandon_door(self, door_id: str):
        if door_id not in self.doors:
            raise GraphError(f"Unknown door '{door_id}'")
        door = self.doors[door_id]
        door.abandoned = True
        door.open_estimate = False
        logger.warning(f"Abandoned door {door_id} after repeated failed traversals")

    # -- queries -----------------------------------------------------------

    def extract_subgraph(self, room_id: str) -> Subgraph:
        """The room, its landmarks, their small objects and its doors"""
        room = self.room(room_id)
        large = sorted((n for n in self.large.values() if n.room_id == room.id), key=lambda n: node_sort_key(n.id))
        small = sorted((n for n in self.small.values() if n.room_id == room.id), key=lambda n: node_sort_key(n.id))
        return Subgraph(room, large, small, self.doors_of(room.id))

    def triplets(self) -> List[Tuple[str, str, str]]:
        edges = [(room.id, 'in', HOUSE_NODE) for room in self.rooms.values()]
        edges += [(node.id, 'in', node.room_id) for node in self.large.values()]
        edges += [(node.id, node.relation, node.parent) for node in self.small.values()]
        edges += [(door.rooms[0], door.id, door.rooms[1]) for door in self.doors.values()]
        return sorted(edges, key=lambda e: (node_sort_key(e[0]), e[1], e[2]))

    def to_dict(self) -> dict:
        """Snapshot of nodes, edges and flags"""
        return {
            'house': HOUSE_NODE,
            'current_room': self.current_room_id,
            'rooms': [{'id': r.id, 'bounds': r.bounds, 'room_type': r.room_type, 'investigated': r.investigated,
                       'skipped_for': sorted(r.skipped_for), 'provisional': r.provisional,
                       'merged_into': r.merged_into, 'doors': list(r.door_ids)}
                      for r in sorted(self.rooms.values(), key=lambda r: node_sort_key(r.id))],
            'large': [{'id': n.id, 'category': n.category, 'position': n.position, 'room': n.room_id,
                       'observations': n.observation_count}
                      for n in sorted(self.large.values(), key=lambda n: node_sort_key(n.id))],
            'small': [{'id': n.id, 'category': n.category, 'position': n.position, 'room': n.room_id,
                       'relation': n.relation, 'parent': n.parent, 'observations': n.observation_count}
                      for n in sorted(self.small.values(), key=lambda n: node_sort_key(n.id))],
            'doors': [{'id': d.id, 'position': d.position, 'rooms': list(d.rooms), 'open': d.open_estimate,
                       'traversed': d.traversed}
                      for d in sorted(self.doors.values(), key=lambda d: node_sort_key(d.id))],
            'edges': [list(e) for e in self.triplets()],
        }


def subgraph_to_text(sub: Subgraph) -> str:
    """Canonical listing used in planner prompts"""
    room_type = sub.room.room_type or 'unknown'
    lines = [f"room {sub.room.id}: {room_type}"]
    if not sub.large and not sub.small:
        lines.append(NO_OBJECTS_SENTINEL)
    for node in sub.large:
        near = [s for s in sub.small if s.relation == 'near' and s.parent == node.id]
        line = f"{node.id}: {node.category} at ({node.position[0]:.1f}, {node.position[1]:.1f})"
        if near:
            line += " near " + ", ".join(f"{s.id} ({s.category})" for s in near)
        lines.append(line)
    loose = [s for s in sub.small if s.relation == 'in']
    if loose:
        lines.append("in room: " + ", ".join(f"{s.id} ({s.category})" for s in loose))
    for door in sub.doors:
        state = 'open' if door.open_estimate else 'closed'
        if door.traversed:
            state += ', explored'
        lines.append(f"{door.id}: door {state}")
    return "\n".join(lines) + "\n"


def all_doors_explored(graph: SceneGraph) -> bool:
    return not any(d.open_estimate and not d.traversed for d in graph.doors.values())


def euclidean_distance(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def find_next_unexplored_door(graph: SceneGraph, pose: Tuple[float, float],
                              distance_fn: Callable[[Tuple[float, float], Tuple[float, float]], float] = None
                              ) -> DoorEdge:
    """Open, untraversed door closest to the pose under distance_fn; ties by lowest id.

    Callers navigating a grid pass a path-length distance; the default is straight-line.
    """
    candidates = [d for d in graph.doors.values() if d.open_estimate and not d.traversed]
    if not candidates:
        raise GraphError("All doors are explored")
    distance_fn = distance_fn or euclidean_distance
    return min(candidates, key=lambda d: (distance_fn(pose, (d.position[0], d.position[1])), node_sort_key(d.id)))
