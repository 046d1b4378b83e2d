#!/usr/bin/env python3
"""
RoomScout Agent Loop
Episode orchestration: perceive, type and gate rooms, plan, search, explore doors, revisit skipped rooms
"""

import json
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional, Set, Tuple

import numpy as np

from config import Config
from dataset import Episode
from high_planner import (LOOK, NAVIGATE, Exhausted, GoToDoor, Plan, PlannerConfig, RefineWander, Replan, RoomEvent,
                          make_backend, make_memory, on_plan_exhausted, render_plan)
from house_sim import DOOR_CLOSED, DOOR_OPEN, House, PerceptionConfig, Simulator
from knowledge_base import KnowledgeBase, load_knowledge_base
from llm_client import ChatClient, PromptLibrary, TranscribingChat, Transcript
from low_planner import NavResult, PointGoal, SurrogateParams, astar_distance, make_navigator
from scene_graph import (DoorEdge, GraphConfig, GraphError, RoomNode, SceneGraph, all_doors_explored,
                         find_next_unexplored_door, node_sort_key)

logger = logging.getLogger(__name__)

SCENE_GRAPH_MODES = ('GT', 'VO')
LOW_LEVEL_PLANNERS = ('OrNav', 'PNavS')
BACKENDS = ('heuristic', 'llm')
MEMORY_MODES = ('graph_annotation', 'llm_tracker')
FAILURE_REASONS = ('none', 'doors_exhausted', 'step_budget', 'nav_error')


@dataclass(frozen=True)
class RunConfig:
    """One point of the experiment matrix"""

    scene_graph_mode: str = 'GT'
    low_level: str = 'OrNav'
    backend: str = 'heuristic'
    memory: str = 'graph_annotation'
    step_budget: int = Config.STEP_BUDGET
    seed: int = 0

    def __post_init__(self):
        for name, allowed in (('scene_graph_mode', SCENE_GRAPH_MODES), ('low_level', LOW_LEVEL_PLANNERS),
                              ('backend', BACKENDS), ('memory', MEMORY_MODES)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got '{getattr(self, name)}'")
        if self.step_budget <= 0:
            raise ValueError("step_budget must be positive")

    @property
    def label(self) -> str:
        return f"{self.scene_graph_mode}+{self.low_level}"

    @property
    def needs_llm(self) -> bool:
        return self.backend == 'llm' or self.memory == 'llm_tracker'

    @classmethod
    def from_config(cls, cfg=Config, **overrides) -> 'RunConfig':
        values = {'step_budget': cfg.STEP_BUDGET}
        values.update(overrides)
        return cls(**values)

    def to_dict(self) -> dict:
        return {'scene_graph_mode': self.scene_graph_mode, 'low_level': self.low_level, 'backend': self.backend,
                'memory': self.memory, 'step_budget': self.step_budget, 'seed': self.seed}


@dataclass(frozen=True)
class FoundTarget:
    category: str
    step: int
    position: Tuple[float, float, float]
    order: int


@dataclass
class EpisodeResult:
    episode_id: str
    house_id: str
    method: str
    config: RunConfig
    success: bool
    found: List[FoundTarget]
    path_length: float
    steps: int
    failure_reason: str
    shortest_path_length: float
    optimal_order: List[str]
    trace: List[dict] = field(default_factory=list)
    transcript: Optional[Transcript] = None

    @property
    def found_order(self) -> List[str]:
        return [f.category for f in self.found]

    def to_dict(self, include_trace: bool = True) -> dict:
        data = {
            'episode_id': self.episode_id,
            'house_id': self.house_id,
            'method': self.method,
            'config': self.config.to_dict(),
            'label': self.config.label,
            'success': self.success,
            'found': [{'category': f.category, 'step': f.step, 'position': list(f.position), 'order': f.order}
                      for f in self.found],
            'path_length': self.path_length,
            'steps': self.steps,
            'failure_reason': self.failure_reason,
            'shortest_path_length': self.shortest_path_length,
            'optimal_order': list(self.optimal_order),
        }
        if include_trace:
            data['trace'] = self.trace
        return data

    def to_json(self, include_trace: bool = True) -> str:
        return json.dumps(self.to_dict(include_trace), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> 'EpisodeResult':
        return cls(
            episode_id=data['episode_id'],
            house_id=data['house_id'],
            method=data['method'],
            config=RunConfig(**data['config']),
            success=bool(data['success']),
            found=[FoundTarget(f['category'], f['step'], tuple(f['position']), f['order']) for f in data['found']],
            path_length=float(data['path_length']),
            steps=int(data['steps']),
            failure_reason=data['failure_reason'],
            shortest_path_length=float(data['shortest_path_length']),
            optimal_order=list(data['optimal_order']),
            trace=list(data.get('trace', [])),
        )


class Trace:
    """Ordered event log; every event carries its index and the primitive step count"""

    def __init__(self):
        self.events: List[dict] = []

    def emit(self, event: str, step: int, **payload) -> int:
        index = len(self.events)
        record = {'index': index, 'event': event, 'step': step}
        record.update(payload)
        self.events.append(record)
        return index

    def of(self, event: str) -> List[dict]:
        return [e for e in self.events if e['event'] == event]

    def write(self, path: str):
        with open(path, 'w', encoding='utf-8') as f:
            for event in self.events:
                f.write(json.dumps(event, sort_keys=True) + "\n")


class EpisodeOver(Exception):
    """Internal signal carrying the terminal failure_reason"""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _round(values) -> List[float]:
    return [round(float(v), 6) for v in values]


class EpisodeRunner:
    """Single-episode state: simulator, scene graph, planner backend and room memory"""

    def __init__(self, house: House, episode: Episode, cfg: RunConfig, llm_client: ChatClient = None,
                 kb: KnowledgeBase = None, app_config=Config):
        self.house = house
        self.episode = episode
        self.cfg = cfg
        self.app_config = app_config
        self.kb = kb or load_knowledge_base(app_config.KB_PATH)
        self.trace = Trace()

        perception = PerceptionConfig.from_config(app_config, gt_mode=cfg.scene_graph_mode == 'GT',
                                                  noise_seed=derive_seed(cfg.seed, episode.house_idx, 0))
        self.sim = Simulator(house, perception, trace_hook=self._on_pose, look_cost=app_config.LOOK_AROUND_COST)
        self.graph = SceneGraph(self.kb, GraphConfig.from_config(app_config))
        self.planner_config = PlannerConfig.from_config(app_config)

        self.transcript = None
        chat = None
        if cfg.needs_llm:
            if llm_client is None:
                raise ValueError(f"Run config {cfg.backend}/{cfg.memory} needs an LLM client")
            self.transcript = Transcript(episode.episode_id)
            chat = TranscribingChat(llm_client, self.transcript)
        prompts = PromptLibrary(app_config.PROMPTS_DIR)
        self.backend = make_backend(cfg.backend, self.kb, self.planner_config, chat, prompts)
        self.memory = make_memory(cfg.memory, self.graph, chat, prompts, self.planner_config)
        self.navigator = make_navigator(
            cfg.low_level, SurrogateParams.from_config(app_config, derive_seed(cfg.seed, episode.house_idx, 1)))
        self.wander_rng = np.random.default_rng(derive_seed(cfg.seed, episode.house_idx, 2))
        self.path_distance = partial(astar_distance, house.grid)

        self.unfound: Set[str] = set(episode.categories)
        self.found: List[FoundTarget] = []
        self.pending_door: Optional[DoorEdge] = None
        self.revisited: Set[str] = set()
        self.swept: Set[str] = set()

    # -- bookkeeping -------------------------------------------------------

    @property
    def steps(self) -> int:
        return self.sim.state.step_count if self.sim.state else 0

    @property
    def remaining(self) -> int:
        return self.cfg.step_budget - self.steps

    def _on_pose(self, kind: str, payload: dict):
        self.trace.emit(kind, self.steps, **payload)

    def _check_budget(self, needed: int = 1):
        if self.remaining < needed:
            raise EpisodeOver('step_budget')

    # -- primitives --------------------------------------------------------

    def look(self):
        self._check_budget(self.sim.look_cost)
        observation = self.sim.look_around()
        self.trace.emit('look_around', self.steps, cost=self.sim.look_cost,
                        position=_round(observation.pose.position), region=observation.region_id)
        delta = self.graph.integrate_observation(observation)
        if delta.is_empty:
            return
        self.trace.emit('graph_delta', self.steps, created=sorted(delta.created, key=node_sort_key),
                        updated=sorted(set(delta.updated), key=node_sort_key), traversed=list(delta.traversed),
                        rejected=delta.rejected)
        for node_id in sorted(delta.created, key=node_sort_key):
            node = self.graph.large.get(node_id) or self.graph.small.get(node_id)
            if node is None or node.category not in self.unfound:
                continue
            self.unfound.discard(node.category)
            position = tuple(round(float(v), 6) for v in node.position)
            order = self.trace.emit('found', self.steps, category=node.category, node=node.id,
                                    position=list(position))
            self.found.append(FoundTarget(node.category, self.steps, position, order))
            logger.debug(f"[{self.episode.episode_id}] Found {node.category} at step {self.steps}")
        if not self.unfound:
            raise EpisodeOver('none')

    def navigate(self, target: Tuple[float, float], radius: float, purpose: str, **payload) -> NavResult:
        self._check_budget()
        goal = PointGoal((float(target[0]), float(target[1])), radius,
                         min(self.app_config.MAX_NAV_STEPS, self.remaining))
        result = self.navigator.navigate(self.sim, goal)
        self.trace.emit('nav', self.steps, purpose=purpose, goal=_round(goal.target), success=result.success,
                        steps_taken=result.steps_taken, path_length=round(result.path_length, 6), **payload)
        return result

    def navigate_twice(self, target: Tuple[float, float], radius: float, purpose: str, **payload) -> NavResult:
        result = self.navigate(target, radius, purpose, **payload)
        if not result.success:
            result = self.navigate(target, radius, purpose, reissued=True, **payload)
        return result

    # -- episode -----------------------------------------------------------

    def run(self) -> EpisodeResult:
        reason = 'nav_error'
        try:
            self._run()
        except EpisodeOver as e:
            reason = e.reason
        except Exception:
            logger.exception(f"[{self.episode.episode_id}] Episode crashed under {self.cfg.label}")
            reason = 'nav_error'
        success = not self.unfound
        if success:
            reason = 'none'
        self.trace.emit('end', self.steps, success=success, failure_reason=reason)
        state = self.sim.state
        return EpisodeResult(
            episode_id=self.episode.episode_id,
            house_id=self.house.house_id,
            method='RoomScout',
            config=self.cfg,
            success=success,
            found=list(self.found),
            path_length=round(state.path_length, 6) if state else 0.0,
            steps=self.steps,
            failure_reason=reason,
            shortest_path_length=self.episode.shortest_path_length,
            optimal_order=list(self.episode.shortest_path_targets_order),
            trace=self.trace.events,
            transcript=self.transcript,
        )

    def _run(self):
        if self.house.house_id != self.episode.house_id:
            raise ValueError(f"Episode {self.episode.episode_id} belongs to {self.episode.house_id}, "
                             f"not {self.house.house_id}")
        state = self.sim.spawn(self.episode.start_position, self.episode.start_heading)
        self.trace.emit('spawn', 0, house_id=self.house.house_id, position=_round(state.position),
                        heading=state.heading, targets=sorted(self.unfound), config=self.cfg.label)
        self.look()
        while True:
            self.process_room(self.graph.current_room_id)
            door = self.next_door()
            if door is None:
                if self.revisit_skipped() or self.sweep_for_doors():
                    continue
                raise EpisodeOver('doors_exhausted')
            self.go_through_door(door)

    def process_room(self, room_id: str):
        room_id = self.graph.resolve_room(room_id)
        if self.memory.query(room_id):
            self.trace.emit('memory', self.steps, room=room_id, visited=True, mode=self.memory.mode)
            return
        subgraph = self.graph.extract_subgraph(room_id)
        room_type = self.backend.identify_room_type(subgraph)
        self.graph.set_room_type(room_id, room_type)
        self.trace.emit('room_type', self.steps, room=room_id, room_type=room_type)

        wanted = sorted(self.unfound)
        feasible = self.backend.assess_feasibility(room_type, wanted)
        self.trace.emit('feasibility', self.steps, room=room_id, room_type=room_type,
                        verdicts={c: feasible[c] for c in wanted})
        skipped = [c for c in wanted if not feasible[c]]
        if skipped:
            self.graph.mark_skipped(room_id, skipped)
        targets = [c for c in wanted if feasible[c]]
        if not targets:
            self.memory.update(RoomEvent(room_id, room_type, 'skipped'))
            self.trace.emit('memory', self.steps, room=room_id, outcome='skipped', mode=self.memory.mode)
            return
        self.search_room(room_id, targets, revisit=False)
        self.memory.update(RoomEvent(room_id, room_type, 'investigated'))
        self.trace.emit('memory', self.steps, room=room_id, outcome='investigated', mode=self.memory.mode)

    def _plan(self, room_id: str, wanted: List[str], visited: Set[str], revisit: bool, event: str) -> Plan:
        subgraph = self.graph.extract_subgraph(room_id)
        cutoff = 0.0 if revisit else None
        plan = self.backend.generate_plan(subgraph, wanted, exclude=sorted(visited), cutoff=cutoff)
        self.trace.emit(event, self.steps, room=room_id, unfound=list(wanted), source=plan.source,
                        plan=render_plan(plan), revisit=revisit)
        logger.debug(f"[{self.episode.episode_id}] {event} for {room_id} ({plan.source}): "
                     f"{len(plan.steps)} steps")
        return plan

    def search_room(self, room_id: str, wanted: List[str], revisit: bool):
        """Execute a plan, then follow on_plan_exhausted until the room is done"""
        visited: Set[str] = set()
        seen = {n.id for n in self.graph.objects_in_room(room_id)}
        plan = self._plan(room_id, wanted, visited, revisit, 'generate_plan')
        wander_used = 0
        while True:
            self.execute_plan(plan, room_id, visited)
            wanted = [c for c in wanted if c in self.unfound]
            if not wanted:
                return
            room_id = self.graph.resolve_room(room_id)
            action = on_plan_exhausted(self.graph, wanted, self.sim.state.position, room_id, seen, wander_used,
                                       self.planner_config.wander_budget, self.path_distance)
            if isinstance(action, Replan):
                seen = {n.id for n in self.graph.objects_in_room(room_id)}
                plan = self._plan(room_id, wanted, visited, revisit, 'replan')
            elif isinstance(action, GoToDoor):
                self.pending_door = action.door
                return
            elif isinstance(action, RefineWander):
                self.wander(room_id, wander_used)
                wander_used += 1
                plan = None
            elif isinstance(action, Exhausted):
                return

    def execute_plan(self, plan: Optional[Plan], room_id: str, visited: Set[str]):
        if plan is None:
            return
        for step in plan.steps:
            if step.kind == NAVIGATE:
                position = self._target_position(step.target)
                if position is None:
                    logger.debug(f"[{self.episode.episode_id}] Plan target {step.target} no longer exists")
                    continue
                self.navigate_twice(position, self.app_config.SUCCESS_RADIUS, 'plan', node=step.target,
                                    room=room_id)
                visited.add(step.target)
            elif step.kind == LOOK:
                self.look()

    def _target_position(self, node_id: str) -> Optional[Tuple[float, float]]:
        node = self.graph.large.get(node_id) or self.graph.small.get(node_id) or self.graph.doors.get(node_id)
        if node is None:
            return None
        return (node.position[0], node.position[1])

    def wander(self, room_id: str, index: int):
        """First wander goes to the room center, later ones to a random point inside the room bounds"""
        room = self.graph.room(room_id)
        if index == 0:
            target = room.center
        else:
            x0, y0, x1, y1 = room.bounds
            target = (float(self.wander_rng.uniform(x0, x1)), float(self.wander_rng.uniform(y0, y1)))
        self.trace.emit('wander', self.steps, room=room_id, attempt=index, goal=_round(target))
        self.navigate(target, self.app_config.DOOR_SUCCESS_RADIUS, 'wander', room=room_id)
        self.look()

    # -- doors -------------------------------------------------------------

    def next_door(self) -> Optional[DoorEdge]:
        door = self.pending_door
        self.pending_door = None
        if door is not None and door.open_estimate and not door.traversed:
            return door
        try:
            return find_next_unexplored_door(self.graph, self.sim.state.position, self.path_distance)
        except GraphError:
            return None

    def _door_cell(self, door: DoorEdge) -> Tuple[int, int]:
        """Grid cell of a perceived door; estimates may land on a neighbouring cell"""
        grid = self.house.grid
        cx, cy = grid.cell_of(door.position[0], door.position[1])
        nearby = [(x, y) for y in range(cy - 1, cy + 2) for x in range(cx - 1, cx + 2)
                  if grid.in_bounds((x, y)) and grid.value((x, y)) in (DOOR_OPEN, DOOR_CLOSED)]
        if not nearby:
            return (cx, cy)
        return min(nearby, key=lambda c: (math.hypot(grid.cell_center(c)[0] - door.position[0],
                                                     grid.cell_center(c)[1] - door.position[1]), grid.index_of(c)))

    def door_sides(self, door: DoorEdge) -> Tuple[Tuple[float, float], Optional[str]]:
        """Point past the far side of a door and the floor region it lies in.

        The near side is the one the agent stands in, else the one its path reaches first.
        """
        grid = self.house.grid
        cell = self._door_cell(door)
        center = grid.cell_center(cell)
        for dx, dy in ((1, 0), (0, 1)):
            sides = [(cell[0] - dx, cell[1] - dy), (cell[0] + dx, cell[1] + dy)]
            if all(grid.is_passable(s) for s in sides):
                break
        else:
            px, py = self.sim.state.position
            dx, dy = (1, 0) if abs(center[0] - px) >= abs(center[1] - py) else (0, 1)
            sides = [(cell[0] - dx, cell[1] - dy), (cell[0] + dx, cell[1] + dy)]
        overshoot = self.app_config.DOOR_OVERSHOOT
        options = []
        for side in sides:
            sign = 1 if side > cell else -1
            point = (center[0] + sign * dx * overshoot, center[1] + sign * dy * overshoot)
            options.append((point, self.house.region_token(side)))
        here = self.house.region_token(self.sim.state.cell)
        regions = [region for _, region in options]
        if here is not None and here in regions:
            return options[1 - regions.index(here)]
        near = min(range(2), key=lambda i: (self.path_distance(self.sim.state.position, options[i][0]), i))
        return options[1 - near]

    def go_through_door(self, door: DoorEdge):
        target, far_region = self.door_sides(door)
        self.trace.emit('door', self.steps, door=door.id, rooms=list(door.rooms), goal=_round(target))
        logger.debug(f"[{self.episode.episode_id}] Heading through {door.id}")
        for attempt in range(2):
            self.navigate(target, self.app_config.DOOR_SUCCESS_RADIUS, 'door', door=door.id,
                          reissued=attempt > 0)
            crossed = far_region is not None and self.house.region_token(self.sim.state.cell) == far_region
            self.look()
            if crossed and not door.traversed:
                self.graph.mark_traversed(door.id)
            if door.traversed:
                return
        if not door.traversed:
            self.graph.abandon_door(door.id)
            self.trace.emit('door', self.steps, door=door.id, abandoned=True)

    # -- revisits and sweeps -----------------------------------------------

    def _closest_first(self, rooms: List[RoomNode]) -> RoomNode:
        position = self.sim.state.position
        return min(rooms, key=lambda r: (self.path_distance(position, r.center), node_sort_key(r.id)))

    def revisit_skipped(self) -> bool:
        """Search each room skipped for a still-unfound target once more; False when none is left"""
        revisited = False
        while True:
            rooms = [r for r in self.graph.active_rooms()
                     if r.id not in self.revisited and r.skipped_for & self.unfound and r.bounds is not None]
            if not rooms:
                return revisited
            room = self._closest_first(rooms)
            self.revisited.add(room.id)
            revisited = True
            wanted = sorted(room.skipped_for & self.unfound)
            self.trace.emit('revisit', self.steps, room=room.id, unfound=wanted)
            self.navigate(room.center, self.app_config.SUCCESS_RADIUS, 'revisit', room=room.id)
            self.look()
            wanted = sorted(set(wanted) & self.unfound)
            if wanted:
                self.search_room(room.id, wanted, revisit=True)
            self.memory.update(RoomEvent(room.id, room.room_type, 'revisited'))
            if self.pending_door is not None:
                return True

    def sweep_for_doors(self) -> bool:
        """Look again from the center of each known room until an unexplored door turns up"""
        while True:
            rooms = [r for r in self.graph.active_rooms()
                     if r.id not in self.swept and not r.provisional and r.bounds is not None]
            if not rooms:
                return False
            room = self._closest_first(rooms)
            self.swept.add(room.id)
            self.trace.emit('sweep', self.steps, room=room.id, goal=_round(room.center))
            self.navigate(room.center, self.app_config.DOOR_SUCCESS_RADIUS, 'sweep', room=room.id)
            self.look()
            if not all_doors_explored(self.graph):
                return True


def run_episode(house: House, episode: Episode, cfg: RunConfig, llm_client: ChatClient = None,
                kb: KnowledgeBase = None,
                app_config=Config) -> EpisodeResult:
    """Run one episode to completion; never raises for in-episode failures"""
    try:
        runner = EpisodeRunner(house, episode, cfg, llm_client, kb, app_config)
    except Exception:
        logger.exception(f"[{episode.episode_id}] Could not set up episode under {cfg.label}")
        return EpisodeResult(episode.episode_id, house.house_id, 'RoomScout', cfg, False, [], 0.0, 0,
                             'nav_error', episode.shortest_path_length, list(episode.shortest_path_targets_order),
                             [{'index': 0, 'event': 'end', 'step': 0, 'success': False,
                               'failure_reason': 'nav_error'}])
    return runner.run()
