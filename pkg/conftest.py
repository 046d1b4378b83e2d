import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import TestingConfig
from dataset import Episode, Target, route_length
from house_sim import house_from_ascii
from knowledge_base import load_knowledge_base

GOLDEN_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'testdata', 'golden')


def box_rows(width, height):
    """Single walled room with a width x height interior"""
    return ['#' * (width + 2)] + ['#' + '.' * width + '#'] * height + ['#' * (width + 2)]


def two_room_rows(door='D'):
    """Two 8x8 rooms side by side, joined by one door cell at (9, 5)"""
    top = '#' * 19
    body = '#' + '.' * 8 + '#' + '.' * 8 + '#'
    door_row = '#' + '.' * 8 + door + '.' * 8 + '#'
    return [top] + [body] * 4 + [door_row] + [body] * 3 + [top]


def make_episode(house, targets, start, heading=0, house_idx=0):
    """Episode over hand-placed targets; the stored order is the given order"""
    order = tuple(category for category, _ in targets)
    length = route_length(house.grid, start, [position for _, position in targets])
    return Episode('val', house_idx, len(house.rooms), len(targets),
                   tuple(Target(c, tuple(p)) for c, p in targets), tuple(start), heading, order, length)


@pytest.fixture
def kb():
    return load_knowledge_base()


@pytest.fixture
def app_config():
    return TestingConfig


@pytest.fixture
def bedroom_house(kb):
    """One 10x10-cell bedroom holding a bed, a nightstand and three small objects"""
    objects = [
        ('bed', 1.0, 1.0, 0.5),
        ('nightstand', 2.2, 2.2, 0.3),
        ('pillow', 1.2, 1.4, 0.6),
        ('alarm clock', 2.3, 2.0, 0.6),
        ('book', 2.0, 2.4, 0.9),
    ]
    return house_from_ascii(box_rows(10, 10), ['bedroom'], objects, house_id='house_0000', kb=kb)


@pytest.fixture
def two_room_house(kb):
    """Bedroom on the left, kitchen on the right"""
    objects = [
        ('bed', 1.0, 1.0, 0.5),
        ('pillow', 1.2, 1.4, 0.6),
        ('fridge', 4.2, 2.0, 0.9),
        ('counter', 3.4, 0.6, 0.45),
        ('spoon', 3.6, 0.7, 0.95),
        ('mug', 3.2, 0.8, 0.95),
    ]
    return house_from_ascii(two_room_rows(), ['bedroom', 'kitchen'], objects, house_id='house_0000', kb=kb)


@pytest.fixture
def golden_dir():
    return GOLDEN_DIR
