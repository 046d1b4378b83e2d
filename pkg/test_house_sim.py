#!/usr/bin/env python3
"""
House simulator tests: generation invariants, dynamics, perception and serialization
"""

import json

import numpy as np
import pytest

from conftest import box_rows, two_room_rows
from house_sim import (DOOR_CLOSED, DOOR_OPEN, WALL, HouseGenerationError, HouseSpec, PerceptionConfig,
                       SchemaVersionError, Simulator, generate_house, house_from_ascii, house_from_json,
                       house_to_json, look_around, reachable_cells, spawn_state, step)


@pytest.fixture
def generated(kb):
    return generate_house(HouseSpec(num_rooms=6, rng_seed=7), kb)


def test_generation_is_deterministic(kb):
    a = generate_house(HouseSpec(num_rooms=5, rng_seed=11), kb)
    b = generate_house(HouseSpec(num_rooms=5, rng_seed=11), kb)
    assert json.dumps(house_to_json(a), sort_keys=True) == json.dumps(house_to_json(b), sort_keys=True)


def test_generated_house_invariants(generated):
    house = generated
    assert len(house.rooms) == 6
    assert house.house_id == 'house-7'

    start = house.grid.cell_of(*house.rooms[0].center)
    reachable = reachable_cells(house, start)
    for room in house.rooms:
        assert house.grid.cell_of(*room.center) in reachable

    for door in house.doors:
        assert house.grid.value(door.cell) in (DOOR_OPEN, DOOR_CLOSED)
        assert len(set(door.connects)) == 2

    for obj in house.objects:
        room = house.room_by_id(obj.room_id)
        assert room.contains(obj.position[0], obj.position[1])


def test_same_category_instances_are_spaced(generated):
    by_category = {}
    for obj in generated.objects:
        by_category.setdefault(obj.category, []).append(obj.position)
    for positions in by_category.values():
        for i, a in enumerate(positions):
            for b in positions[i + 1:]:
                assert np.hypot(a[0] - b[0], a[1] - b[1]) >= 1.0 - 1e-9


@pytest.mark.parametrize('num_rooms', range(3, 11))
def test_every_room_count_generates(kb, num_rooms):
    for seed in range(5):
        house = generate_house(HouseSpec(num_rooms=num_rooms, rng_seed=seed), kb)
        assert len(house.rooms) == num_rooms
        reachable = reachable_cells(house, house.grid.cell_of(*house.rooms[0].center))
        for room in house.rooms:
            x0, y0, x1, y1 = room.cell_box
            assert x1 - x0 + 2 >= 10 and y1 - y0 + 2 >= 10
            assert house.grid.cell_of(*room.center) in reachable


def test_room_capacity_bounds_the_footprint(kb):
    with pytest.raises(HouseGenerationError):
        generate_house(HouseSpec(num_rooms=5, rng_seed=1, footprint=(5.0, 5.0)), kb)
    house = generate_house(HouseSpec(num_rooms=4, rng_seed=1, footprint=(5.0, 5.0)), kb)
    assert len(house.rooms) == 4


def test_footprint_too_small_is_rejected(kb):
    with pytest.raises(HouseGenerationError):
        generate_house(HouseSpec(num_rooms=4, rng_seed=1, footprint=(2.0, 2.0)), kb)


def test_house_spec_validation(kb):
    with pytest.raises(HouseGenerationError):
        HouseSpec(num_rooms=0).validate(kb)
    with pytest.raises(HouseGenerationError):
        HouseSpec(num_rooms=2, room_type_mix=(('throne room', 1),)).validate(kb)
    with pytest.raises(HouseGenerationError):
        HouseSpec(num_rooms=1, room_type_mix=(('bedroom', 2),)).validate(kb)


def test_ascii_rooms_and_doors(two_room_house):
    house = two_room_house
    assert [r.id for r in house.rooms] == ['room_0', 'room_1']
    assert [r.room_type for r in house.rooms] == ['bedroom', 'kitchen']
    assert len(house.doors) == 1
    door = house.doors[0]
    assert door.cell == (9, 5)
    assert door.connects == ('room_0', 'room_1')
    assert door.open
    assert house.room_at(4.2, 2.0).id == 'room_1'


def test_ascii_rejects_unknown_symbols():
    with pytest.raises(HouseGenerationError):
        house_from_ascii(['###', '#x#', '###'])


class TestDynamics:
    def test_move_into_wall_collides(self, bedroom_house):
        state = spawn_state(bedroom_house, (0.375, 0.375), 180)
        moved, collided = step(bedroom_house, state, 'move_forward')
        assert collided
        assert moved.cell == state.cell
        assert moved.step_count == 1
        assert moved.path_length == 0.0

    def test_move_forward_advances_one_cell(self, bedroom_house):
        state = spawn_state(bedroom_house, (0.375, 0.375), 0)
        moved, collided = step(bedroom_house, state, 'move_forward')
        assert not collided
        assert moved.cell == (2, 1)
        assert moved.path_length == pytest.approx(0.25)

    def test_turns(self, bedroom_house):
        state = spawn_state(bedroom_house, (1.0, 1.0), 0)
        left, _ = step(bedroom_house, state, 'turn_left')
        right, _ = step(bedroom_house, state, 'turn_right')
        assert left.heading == 90
        assert right.heading == 270
        assert left.cell == state.cell

    def test_unknown_action(self, bedroom_house):
        state = spawn_state(bedroom_house, (1.0, 1.0), 0)
        with pytest.raises(ValueError):
            step(bedroom_house, state, 'jump')

    def test_spawn_on_wall(self, bedroom_house):
        with pytest.raises(ValueError):
            spawn_state(bedroom_house, (0.1, 0.1), 0)
        with pytest.raises(ValueError):
            reachable_cells(bedroom_house, (0, 0))

    def test_closed_door_blocks_motion(self, kb):
        house = house_from_ascii(two_room_rows('C'), ['bedroom', 'kitchen'], kb=kb)
        start = house.grid.cell_of(0.375, 1.375)
        assert house.grid.cell_of(4.0, 1.375) not in reachable_cells(house, start)


class TestPerception:
    def test_ground_truth_look_reports_room_contents(self, bedroom_house):
        state = spawn_state(bedroom_house, (1.5, 1.5), 90)
        obs = look_around(bedroom_house, state, PerceptionConfig(gt_mode=True))
        objects = [p for p in obs.percepts if p.entity_kind == 'object']
        walls = [p for p in obs.percepts if p.entity_kind == 'wall']
        assert sorted(p.category for p in objects) == sorted(o.category for o in bedroom_house.objects)
        assert len(walls) == 4
        assert obs.pose.step_count == 4
        assert obs.region_id == 'seg0'
        for percept, obj in zip(sorted(objects, key=lambda p: p.entity_id),
                                sorted(bedroom_house.objects, key=lambda o: o.id)):
            assert percept.estimated_position == obj.position

    def test_closed_door_blocks_view(self, kb):
        objects = [('bed', 1.0, 1.0, 0.5), ('fridge', 4.2, 1.4, 0.9)]
        house = house_from_ascii(two_room_rows('C'), ['bedroom', 'kitchen'], objects, kb=kb)
        state = spawn_state(house, (1.875, 1.375), 0)
        obs = look_around(house, state, PerceptionConfig(noise_seed=3))
        categories = {p.category for p in obs.percepts if p.entity_kind == 'object'}
        assert 'bed' in categories
        assert 'fridge' not in categories

    def test_visual_noise_is_bounded_and_seeded(self, bedroom_house):
        state = spawn_state(bedroom_house, (1.5, 1.5), 0)
        cfg = PerceptionConfig(position_noise_sigma=0.05, noise_seed=5)
        first = look_around(bedroom_house, state, cfg)
        second = look_around(bedroom_house, state, cfg)
        assert first == second
        truth = {o.id: o.position for o in bedroom_house.objects}
        for percept in first.percepts:
            if percept.entity_kind != 'object':
                continue
            expected = truth[percept.entity_id]
            assert all(abs(a - b) <= 0.15 + 1e-9 for a, b in zip(percept.estimated_position, expected))

    def test_small_far_objects_fail_angular_gate(self, kb):
        objects = [('watch', 2.6, 2.6, 0.7)]
        house = house_from_ascii(box_rows(10, 10), ['bedroom'], objects, kb=kb)
        state = spawn_state(house, (0.375, 0.375), 0)
        obs = look_around(house, state, PerceptionConfig(position_noise_sigma=0.0))
        assert not [p for p in obs.percepts if p.entity_kind == 'object']

    def test_simulator_records_pose_events(self, bedroom_house):
        events = []
        sim = Simulator(bedroom_house, PerceptionConfig(gt_mode=True),
                        trace_hook=lambda kind, payload: events.append((kind, payload)))
        sim.spawn((0.375, 0.375), 0)
        sim.step('move_forward')
        sim.step('turn_left')
        assert [kind for kind, _ in events] == ['pose', 'pose']
        assert events[0][1]['position'] == [0.625, 0.375]
        assert len(sim.trajectory) == 3
        obs = sim.look_around()
        assert sim.state.step_count == obs.pose.step_count == 6


class TestSerialization:
    def test_round_trip(self, generated):
        data = house_to_json(generated)
        restored = house_from_json(json.loads(json.dumps(data)))
        assert house_to_json(restored) == data
        assert np.array_equal(restored.grid.cells, generated.grid.cells)

    def test_unknown_schema_version(self, generated):
        data = house_to_json(generated)
        data['schema_version'] = 99
        with pytest.raises(SchemaVersionError):
            house_from_json(data)

    def test_grid_is_run_length_encoded(self, bedroom_house):
        data = house_to_json(bedroom_house)
        assert sum(count for _, count in data['grid']) == bedroom_house.grid.width * bedroom_house.grid.height
        assert data['grid'][0] == [WALL, bedroom_house.grid.width + 1]
