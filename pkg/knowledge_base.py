#!/usr/bin/env python3
"""
RoomScout Knowledge Base
Common-sense placement priors shared by the house generator and the heuristic planner
"""

import json
import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, List, Mapping, Tuple

from config import Config

logger = logging.getLogger(__name__)

KB_SCHEMA_VERSION = 1


class KnowledgeBaseError(Exception):
    """Raised when the knowledge-base table is missing or inconsistent"""


@dataclass(frozen=True, eq=False)
class KnowledgeBase:
    """Room, landmark and room-signature priors for every object category"""

    room_types: Tuple[str, ...]
    landmarks: FrozenSet[str]
    dimensions: Mapping[str, float]
    heights: Mapping[str, float]
    room_prior: Mapping[str, Mapping[str, float]]
    landmark_prior: Mapping[str, Mapping[str, float]]
    room_signature: Mapping[str, Mapping[str, int]]
    placement: Mapping[str, Mapping[str, object]]

    @classmethod
    def from_dict(cls, data: dict) -> 'KnowledgeBase':
        version = data.get('schema_version')
        if version != KB_SCHEMA_VERSION:
            raise KnowledgeBaseError(f"Unsupported knowledge base schema_version {version!r}")
        categories = data.get('categories', {})
        kb = cls(
            room_types=tuple(data['room_types']),
            landmarks=frozenset(data['landmarks']),
            dimensions={name: float(entry['max_dimension']) for name, entry in categories.items()},
            heights={name: float(entry.get('z', 0.0)) for name, entry in categories.items()},
            room_prior=data['room_prior'],
            landmark_prior=data['landmark_prior'],
            room_signature=data['room_signature'],
            placement=data['placement'],
        )
        kb.validate()
        return kb

    def validate(self):
        """Check score ranges and vocabulary coverage"""
        vocabulary = set(self.room_types)
        for category in self.dimensions:
            if not self.room_prior.get(category):
                raise KnowledgeBaseError(f"Category '{category}' has no room_prior entry")
        for category, scores in self.room_prior.items():
            for room_type, score in scores.items():
                if room_type not in vocabulary:
                    raise KnowledgeBaseError(f"room_prior[{category}] names unknown room type '{room_type}'")
                if not 0.0 <= score <= 1.0:
                    raise KnowledgeBaseError(f"room_prior[{category}][{room_type}] = {score} is outside [0, 1]")
        for category, scores in self.landmark_prior.items():
            for landmark, score in scores.items():
                if landmark not in self.dimensions:
                    raise KnowledgeBaseError(f"landmark_prior[{category}] names unknown category '{landmark}'")
                if not 0.0 <= score <= 1.0:
                    raise KnowledgeBaseError(f"landmark_prior[{category}][{landmark}] = {score} is outside [0, 1]")
        for landmark in self.landmarks:
            if landmark not in self.dimensions:
                raise KnowledgeBaseError(f"Landmark '{landmark}' has no category entry")
        for room_type, table in self.placement.items():
            if room_type not in vocabulary:
                raise KnowledgeBaseError(f"placement names unknown room type '{room_type}'")
            for name in list(table.get('required', [])) + list(table.get('optional', {})):
                if name not in self.dimensions:
                    raise KnowledgeBaseError(f"placement[{room_type}] names unknown category '{name}'")

    @property
    def categories(self) -> List[str]:
        return sorted(self.dimensions)

    def max_dimension(self, category: str) -> float:
        if category not in self.dimensions:
            raise KeyError(f"Unknown object category '{category}'")
        return self.dimensions[category]

    def height(self, category: str) -> float:
        return self.heights.get(category, 0.0)

    def is_landmark(self, category: str) -> bool:
        return category in self.landmarks

    def room_score(self, category: str, room_type: str) -> float:
        return float(self.room_prior.get(category, {}).get(room_type, 0.0))

    def landmark_score(self, category: str, landmark: str) -> float:
        return float(self.landmark_prior.get(category, {}).get(landmark, 0.0))

    def signature_votes(self, category: str) -> Dict[str, int]:
        return dict(self.room_signature.get(category, {}))

    def small_categories(self, threshold: float = Config.LARGE_DIMENSION_THRESHOLD) -> List[str]:
        """Categories that classify as Small objects"""
        return [c for c in self.categories if c not in self.landmarks and self.dimensions[c] < threshold]

    def required_landmarks(self, room_type: str) -> List[str]:
        return list(self.placement.get(room_type, {}).get('required', []))

    def optional_landmarks(self, room_type: str) -> List[Tuple[str, float]]:
        optional = self.placement.get(room_type, {}).get('optional', {})
        return sorted((name, float(p)) for name, p in optional.items())


@lru_cache(maxsize=8)
def _load_cached(path: str) -> KnowledgeBase:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise KnowledgeBaseError(f"Knowledge base not found at {path}")
    except json.JSONDecodeError as e:
        raise KnowledgeBaseError(f"Knowledge base at {path} is not valid JSON: {e}")
    kb = KnowledgeBase.from_dict(data)
    logger.debug(f"Loaded knowledge base from {path}: {len(kb.dimensions)} categories, "
                 f"{len(kb.room_types)} room types")
    return kb


def load_knowledge_base(path: str = None) -> KnowledgeBase:
    """Load (and cache) the knowledge base table"""
    return _load_cached(os.path.abspath(path or Config.KB_PATH))
