#!/usr/bin/env python3
"""
Dataset tests: generation, determinism, verification on load and optimal ordering
"""

import hashlib
import json
import os

import pytest

from conftest import box_rows
from dataset import (EPISODES_FILE, HOUSES_DIR, DatasetError, Episode, Target, generate_dataset, load_dataset,
                     route_length, shortest_target_order)
from house_sim import house_from_ascii


def digest(directory):
    sha = hashlib.sha256()
    for root, _, files in sorted(os.walk(directory)):
        for name in sorted(files):
            with open(os.path.join(root, name), 'rb') as f:
                sha.update(name.encode('utf-8'))
                sha.update(f.read())
    return sha.hexdigest()


@pytest.fixture
def small_dataset(tmp_path, kb):
    out = str(tmp_path / 'dataset')
    episodes = generate_dataset(3, out, seed=0, num_rooms=(3, 4), kb=kb)
    return out, episodes


def test_generation_writes_houses_and_episodes(small_dataset, kb):
    out, episodes = small_dataset
    assert [e.episode_id for e in episodes] == ['val_0000', 'val_0001', 'val_0002']
    assert sorted(os.listdir(os.path.join(out, HOUSES_DIR))) == ['house_0000.json', 'house_0001.json',
                                                                 'house_0002.json']
    small = set(kb.small_categories())
    for episode in episodes:
        assert episode.num_targets == 3
        assert len(set(episode.categories)) == 3
        assert set(episode.categories) <= small
        assert sorted(episode.shortest_path_targets_order) == sorted(episode.categories)
        assert episode.shortest_path_length > 0


def test_load_verifies_every_episode(small_dataset):
    out, episodes = small_dataset
    dataset = load_dataset(out)
    assert len(dataset) == 3
    assert [e.to_dict() for e in dataset] == [e.to_dict() for e in episodes]
    episode = dataset.episode('val_0001')
    assert dataset.house(episode.house_idx).house_id == 'house_0001'
    assert dataset.house(1) is dataset.house(1)
    with pytest.raises(DatasetError):
        dataset.episode('val_0099')


def test_generation_is_deterministic(tmp_path, kb):
    first = str(tmp_path / 'a')
    second = str(tmp_path / 'b')
    generate_dataset(2, first, seed=5, num_rooms=(3, 5), kb=kb)
    generate_dataset(2, second, seed=5, num_rooms=(3, 5), kb=kb)
    assert digest(first) == digest(second)


def test_corrupt_length_is_rejected(small_dataset):
    out, _ = small_dataset
    path = os.path.join(out, EPISODES_FILE)
    with open(path, 'r', encoding='utf-8') as f:
        records = [json.loads(line) for line in f]
    records[0]['shortest_path_length'] += 1.0
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    with pytest.raises(DatasetError):
        load_dataset(out)
    assert len(load_dataset(out, verify=False)) == 3


def test_bad_files(tmp_path, small_dataset):
    with pytest.raises(DatasetError):
        load_dataset(str(tmp_path / 'missing'))
    out, _ = small_dataset
    with open(os.path.join(out, EPISODES_FILE), 'a', encoding='utf-8') as f:
        f.write("{not json\n")
    with pytest.raises(DatasetError):
        load_dataset(out, verify=False)


def test_invalid_requests(tmp_path, kb):
    with pytest.raises(DatasetError):
        generate_dataset(0, str(tmp_path), kb=kb)
    with pytest.raises(DatasetError):
        generate_dataset(1, str(tmp_path), data_type='train', kb=kb)
    with pytest.raises(DatasetError):
        generate_dataset(1, str(tmp_path), num_rooms=(4, 2), kb=kb)


def test_episode_record_checks():
    targets = (Target('mug', (1.0, 1.0, 0.9)), Target('mug', (2.0, 1.0, 0.9)))
    episode = Episode('val', 0, 1, 2, targets, (0.375, 0.375), 0, ('mug', 'mug'), 1.0)
    with pytest.raises(DatasetError):
        episode.check()
    data = Episode('val', 0, 1, 1, targets[:1], (0.375, 0.375), 0, ('mug',), 1.0).to_dict()
    data['schema_version'] = 7
    with pytest.raises(DatasetError):
        Episode.from_dict(data)
    data['schema_version'] = 1
    data['start_heading'] = 45
    with pytest.raises(DatasetError):
        Episode.from_dict(data)


class TestOrdering:
    @pytest.fixture
    def corridor(self, kb):
        return house_from_ascii(box_rows(20, 1), ['hallway'], kb=kb)

    def test_collinear_targets_are_visited_by_distance(self, corridor):
        candidates = {
            'mug': [(2.5, 0.375, 0.9)],
            'book': [(1.0, 0.375, 0.9)],
            'pen': [(4.5, 0.375, 0.8)],
        }
        order, positions, length = shortest_target_order(corridor.grid, (0.375, 0.375), candidates)
        assert order == ('book', 'mug', 'pen')
        assert positions[0] == (1.0, 0.375, 0.9)
        assert length == pytest.approx(17 * 0.25)
        assert route_length(corridor.grid, (0.375, 0.375), positions) == pytest.approx(length)

    def test_nearest_instance_is_chosen(self, corridor):
        candidates = {'mug': [(4.5, 0.375, 0.9), (1.0, 0.375, 0.9)], 'pen': [(2.5, 0.375, 0.8)]}
        order, positions, _ = shortest_target_order(corridor.grid, (0.375, 0.375), candidates)
        assert order == ('mug', 'pen')
        assert positions == ((1.0, 0.375, 0.9), (2.5, 0.375, 0.8))
