#!/usr/bin/env python3
"""
RoomScout High-Level Planner
Room typing, feasibility gating, search-plan generation and parsing, fallback selection and room memory
"""

import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

from config import Config
from knowledge_base import KnowledgeBase
from llm_client import LLMError, PromptLibrary, ask
from scene_graph import (DoorEdge, GraphError, SceneGraph, Subgraph, find_next_unexplored_door, node_sort_key,
                         subgraph_to_text)

logger = logging.getLogger(__name__)

NAVIGATE = 'navigate'
LOOK = 'look'
UNKNOWN_ROOM = 'unknown'

SOURCE_LLM = 'llm'
SOURCE_HEURISTIC = 'heuristic'


class ParseError(Exception):
    """Plan text that does not follow the navigate/look grammar"""

    def __init__(self, line_no: int, text: str, reason: str = 'malformed step'):
        self.line_no = line_no
        self.text = text
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}: {text!r}")


class PlanValidationError(Exception):
    """A parsed plan that references nodes outside its subgraph"""


@dataclass(frozen=True)
class PlanStep:
    kind: str
    target: Optional[str] = None
    comment: str = ''

    @property
    def signature(self) -> Tuple[str, Optional[str]]:
        return (self.kind, self.target)


@dataclass(frozen=True)
class Plan:
    steps: Tuple[PlanStep, ...]
    source: str
    raw_text: str = ''

    def __post_init__(self):
        if not self.steps:
            raise ValueError("A plan needs at least one step")
        for previous, step in zip(self.steps, self.steps[1:]):
            if previous.signature == step.signature:
                raise ValueError(f"Consecutive duplicate step {step.kind}({step.target or ''})")

    def navigate_targets(self) -> List[str]:
        return [s.target for s in self.steps if s.kind == NAVIGATE]


@dataclass(frozen=True)
class PlannerConfig:
    feasibility_threshold: float = Config.FEASIBILITY_THRESHOLD
    landmark_cutoff: float = Config.LANDMARK_CUTOFF
    wander_budget: int = Config.WANDER_BUDGET
    llm_retries: int = Config.LLM_RETRIES
    tracker_context_budget: int = Config.TRACKER_CONTEXT_BUDGET

    @classmethod
    def from_config(cls, cfg=Config) -> 'PlannerConfig':
        return cls(cfg.FEASIBILITY_THRESHOLD, cfg.LANDMARK_CUTOFF, cfg.WANDER_BUDGET, cfg.LLM_RETRIES,
                   cfg.TRACKER_CONTEXT_BUDGET)


# ---------------------------------------------------------------------------
# Plan language
# ---------------------------------------------------------------------------

_STEP_RE = re.compile(r'^(?P<fn>[A-Za-z_][A-Za-z0-9_]*)\s*\((?P<args>[^()]*)\)\s*;?\s*(?:#\s?(?P<comment>.*))?$')
_ID_RE = re.compile(r'^[A-Za-z0-9_\-]+$')


def parse_plan(text: str, source: str = SOURCE_LLM) -> Plan:
    """Parse one call per line; fences, blank lines and comment-only lines are skipped"""
    if not isinstance(text, str):
        raise ParseError(0, repr(text), 'plan text is not a string')
    steps: List[PlanStep] = []
    lines = text.splitlines()
    for line_no, raw in enumerate(lines, start=1):
        line = raw.lstrip()
        if not line.strip() or line.startswith('```') or line.startswith('#'):
            continue
        match = _STEP_RE.match(line)
        if not match:
            raise ParseError(line_no, raw, 'malformed step')
        fn = match.group('fn').lower()
        args = match.group('args').strip()
        comment = match.group('comment') or ''
        if fn == NAVIGATE:
            target = args.strip('\'"').strip()
            if not target or not _ID_RE.match(target) or (args[:1] in '\'"' and args[:1] != args[-1:]):
                raise ParseError(line_no, raw, 'malformed arguments')
            step = PlanStep(NAVIGATE, target, comment)
        elif fn == LOOK:
            if args:
                raise ParseError(line_no, raw, 'malformed arguments')
            step = PlanStep(LOOK, None, comment)
        else:
            raise ParseError(line_no, raw, 'unknown function')
        if steps and steps[-1].signature == step.signature:
            continue
        steps.append(step)
    if not steps:
        raise ParseError(len(lines), text[:80], 'no plan steps')
    return Plan(tuple(steps), source, text)


def render_plan(plan: Plan) -> str:
    lines = []
    for step in plan.steps:
        call = f"navigate({step.target})" if step.kind == NAVIGATE else "look()"
        lines.append(f"{call}  # {step.comment}" if step.comment else call)
    return "\n".join(lines) + "\n"


def validate_plan(plan: Plan, subgraph: Subgraph, exclude: Iterable[str] = ()):
    allowed = {n.id for n in subgraph.large} | {d.id for d in subgraph.doors}
    excluded = set(exclude)
    for step in plan.steps:
        if step.kind != NAVIGATE:
            continue
        if step.target not in allowed:
            raise PlanValidationError(f"Navigate target '{step.target}' is not in room {subgraph.room.id}")
        if step.target in excluded:
            raise PlanValidationError(f"Navigate target '{step.target}' was already visited")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class HeuristicBackend:
    """Offline backend driven by the knowledge-base table"""

    name = SOURCE_HEURISTIC

    def __init__(self, kb: KnowledgeBase, config: PlannerConfig = None):
        self.kb = kb
        self.config = config or PlannerConfig()

    def identify_room_type(self, subgraph: Subgraph) -> str:
        votes: Dict[str, int] = {}
        for category in subgraph.categories:
            for room_type, count in self.kb.signature_votes(category).items():
                votes[room_type] = votes.get(room_type, 0) + count
        if not votes:
            return UNKNOWN_ROOM
        ranked = sorted(votes.items(), key=lambda item: (-item[1], item[0]))
        if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
            return UNKNOWN_ROOM
        return ranked[0][0]

    def assess_feasibility(self, room_type: str, unfound: Iterable[str]) -> Dict[str, bool]:
        if room_type != UNKNOWN_ROOM and room_type not in self.kb.room_types:
            raise ValueError(f"Unknown room type '{room_type}'")
        return {category: room_type == UNKNOWN_ROOM
                or self.kb.room_score(category, room_type) >= self.config.feasibility_threshold
                for category in sorted(unfound)}

    def generate_plan(self, subgraph: Subgraph, unfound: Iterable[str], exclude: Iterable[str] = (),
                      cutoff: float = None) -> Plan:
        cutoff = self.config.landmark_cutoff if cutoff is None else cutoff
        unfound = sorted(unfound)
        excluded = set(exclude)
        scored = []
        for node in subgraph.large:
            if node.id in excluded:
                continue
            scores = {c: self.kb.landmark_score(c, node.category) for c in unfound}
            score = max(scores.values(), default=0.0)
            if score >= cutoff:
                likely = [c for c in unfound if scores[c] == score] if score > 0 else unfound
                scored.append((score, node, likely))
        scored.sort(key=lambda item: (-item[0], node_sort_key(item[1].id)))
        wanted = ', '.join(unfound)
        steps = []
        for score, node, likely in scored:
            steps.append(PlanStep(NAVIGATE, node.id, f"check the {node.category} for {', '.join(likely)}"))
            steps.append(PlanStep(LOOK, None, f"scan around the {node.category}"))
        if not steps:
            steps.append(PlanStep(LOOK, None, f"scan the room for {wanted}"))
        plan = Plan(tuple(steps), SOURCE_HEURISTIC)
        return Plan(plan.steps, SOURCE_HEURISTIC, render_plan(plan))


class LLMBackend:
    """Prompted backend; every failure path ends in the heuristic backend"""

    name = SOURCE_LLM

    def __init__(self, chat, kb: KnowledgeBase, prompts: PromptLibrary = None, config: PlannerConfig = None,
                 fallback: HeuristicBackend = None):
        self.chat = chat
        self.kb = kb
        self.prompts = prompts or PromptLibrary()
        self.config = config or PlannerConfig()
        self.fallback = fallback or HeuristicBackend(kb, self.config)

    def _ask(self, prompt: str, role: str) -> str:
        return ask(self.chat, [{'role': 'user', 'content': prompt}], role)

    def identify_room_type(self, subgraph: Subgraph) -> str:
        if not subgraph.categories:
            return UNKNOWN_ROOM
        prompt = self.prompts.render('room_type', OBJECTS=', '.join(subgraph.categories),
                                     VOCABULARY=', '.join(self.kb.room_types))
        try:
            answer = self._ask(prompt, 'room_type')
        except LLMError as e:
            logger.warning(f"Room typing fell back to the knowledge base: {e}")
            return self.fallback.identify_room_type(subgraph)
        label = answer.strip().strip('."\'`').strip().lower()
        if label in self.kb.room_types or label == UNKNOWN_ROOM:
            return label
        logger.warning(f"Room type answer {answer!r} is outside the vocabulary; using the knowledge base")
        return self.fallback.identify_room_type(subgraph)

    def assess_feasibility(self, room_type: str, unfound: Iterable[str]) -> Dict[str, bool]:
        unfound = sorted(unfound)
        heuristic = self.fallback.assess_feasibility(room_type, unfound)
        if room_type == UNKNOWN_ROOM or not unfound:
            return heuristic
        prompt = self.prompts.render('feasibility', ROOM_TYPE=room_type, OBJECTS=', '.join(unfound))
        try:
            answer = self._ask(prompt, 'feasibility')
        except LLMError as e:
            logger.warning(f"Feasibility check fell back to the knowledge base: {e}")
            return heuristic
        parsed = {}
        for line in answer.splitlines():
            if ':' not in line:
                continue
            name, verdict = line.rsplit(':', 1)
            name = name.strip().strip('-*').strip().lower()
            verdict = verdict.strip().strip('.').lower()
            if verdict in ('yes', 'no'):
                parsed[name] = verdict == 'yes'
        result = {}
        for category in unfound:
            if category in parsed:
                result[category] = parsed[category]
            else:
                logger.warning(f"Feasibility answer for '{category}' unparsable; using the knowledge base")
                result[category] = heuristic[category]
        return result

    def generate_plan(self, subgraph: Subgraph, unfound: Iterable[str], exclude: Iterable[str] = (),
                      cutoff: float = None) -> Plan:
        unfound = sorted(unfound)
        excluded = set(exclude)
        prompt = self.prompts.render('search_plan', SUBGRAPH=subgraph_to_text(subgraph).rstrip(),
                                     UNFOUND=', '.join(unfound))
        for attempt in range(self.config.llm_retries + 1):
            try:
                answer = self._ask(prompt, 'planner')
            except LLMError as e:
                logger.warning(f"Plan generation fell back to the knowledge base: {e}")
                break
            try:
                plan = parse_plan(answer, SOURCE_LLM)
                validate_plan(plan, subgraph, excluded)
                return plan
            except (ParseError, PlanValidationError) as e:
                logger.warning(f"LLM plan rejected (attempt {attempt + 1}): {e}")
        return self.fallback.generate_plan(subgraph, unfound, excluded, cutoff)


def make_backend(name: str, kb: KnowledgeBase, config: PlannerConfig = None, chat=None,
                 prompts: PromptLibrary = None):
    if name == SOURCE_HEURISTIC:
        return HeuristicBackend(kb, config)
    if name == SOURCE_LLM:
        if chat is None:
            raise ValueError("The llm backend needs a chat client")
        return LLMBackend(chat, kb, prompts, config)
    raise ValueError(f"Unknown planner backend '{name}'")


# ---------------------------------------------------------------------------
# Fallback selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Replan:
    room_id: str


@dataclass(frozen=True)
class GoToDoor:
    door: DoorEdge


@dataclass(frozen=True)
class RefineWander:
    room_id: str


@dataclass(frozen=True)
class Exhausted:
    room_id: str


NextAction = Union[Replan, GoToDoor, RefineWander, Exhausted]


def on_plan_exhausted(graph: SceneGraph, unfound: Iterable[str], pose: Tuple[float, float], room_id: str,
                      seen_node_ids: Iterable[str], wander_used: int, wander_budget: int = Config.WANDER_BUDGET,
                      distance_fn: Callable[[Tuple[float, float], Tuple[float, float]], float] = None
                      ) -> NextAction:
    """Replan on new information, else the nearest unexplored door, else wander, else exhausted"""
    room_id = graph.resolve_room(room_id)
    current = {n.id for n in graph.objects_in_room(room_id)}
    if current - set(seen_node_ids):
        return Replan(room_id)
    try:
        return GoToDoor(find_next_unexplored_door(graph, pose, distance_fn))
    except GraphError:
        pass
    if wander_used < wander_budget and graph.room(room_id).bounds is not None:
        return RefineWander(room_id)
    return Exhausted(room_id)


# ---------------------------------------------------------------------------
# Room memory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoomEvent:
    room_id: str
    room_type: str
    outcome: str  # investigated | skipped | revisited

    def digest(self) -> str:
        return f"{self.room_id} | {self.room_type or UNKNOWN_ROOM} | {self.outcome}"


class GraphAnnotationMemory:
    """Visited rooms read from RoomNode.investigated"""

    mode = 'graph_annotation'

    def __init__(self, graph: SceneGraph):
        self.graph = graph

    def update(self, event: RoomEvent):
        if event.outcome in ('investigated', 'revisited'):
            self.graph.mark_investigated(event.room_id)

    def query(self, room_id: str) -> bool:
        return self.graph.room(room_id).investigated


class LLMTrackerMemory:
    """Visited rooms tracked by a second model instance from one-line digests"""

    mode = 'llm_tracker'

    def __init__(self, chat, graph: SceneGraph, prompts: PromptLibrary = None,
                 context_budget: int = Config.TRACKER_CONTEXT_BUDGET):
        self.chat = chat
        self.graph = graph
        self.prompts = prompts or PromptLibrary()
        self.context_budget = context_budget
        self.history: List[str] = []
        self.failed = chat is None
        self._annotation = GraphAnnotationMemory(graph)
        if self.failed:
            logger.warning("Room tracker has no chat client; using graph annotation")

    def history_text(self) -> str:
        return "\n".join(self.history)

    def update(self, event: RoomEvent):
        self._annotation.update(event)
        self.history.append(event.digest())
        while len(self.history_text().encode('utf-8')) > self.context_budget and len(self.history) > 1:
            self.history.pop(0)

    def query(self, room_id: str) -> bool:
        if self.failed:
            return self._annotation.query(room_id)
        room_id = self.graph.resolve_room(room_id)
        prompt = self.prompts.render('room_tracker', HISTORY=self.history_text() or '(empty)', ROOM=room_id)
        try:
            answer = ask(self.chat, [{'role': 'user', 'content': prompt}], 'tracker')
        except LLMError as e:
            return self._fail(f"transport error: {e}", room_id)
        word = answer.strip().strip('."\'`').lower()
        if word == 'visited':
            return True
        if word == 'unvisited':
            return False
        return self._fail(f"unparsable answer {answer!r}", room_id)

    def _fail(self, reason: str, room_id: str) -> bool:
        logger.warning(f"Room tracker failed ({reason}); using graph annotation for the rest of the episode")
        self.failed = True
        return self._annotation.query(room_id)


def make_memory(mode: str, graph: SceneGraph, chat=None, prompts: PromptLibrary = None,
                config: PlannerConfig = None):
    if mode == GraphAnnotationMemory.mode:
        return GraphAnnotationMemory(graph)
    if mode == LLMTrackerMemory.mode:
        budget = (config or PlannerConfig()).tracker_context_budget
        return LLMTrackerMemory(chat, graph, prompts, budget)
    raise ValueError(f"Unknown memory mode '{mode}'")
