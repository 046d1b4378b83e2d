#!/usr/bin/env python3
"""
Benchmark harness tests: the privileged baseline, the experiment matrix and report files
"""

import csv
import os
import threading

import pytest

import bench
from agent_loop import RunConfig
from bench import (BASELINE, REPORT_COLUMNS, RESULTS_FILE, EpisodeTaskManager, baseline_agent, format_markdown,
                   load_results, run_matrix, write_report, write_results)
from conftest import make_episode, two_room_rows
from dataset import Episode, Target, generate_dataset, load_dataset
from house_sim import house_from_ascii

CONFIGS = [RunConfig(sg, ll) for sg in ('GT', 'VO') for ll in ('OrNav', 'PNavS')]


@pytest.fixture(scope='module')
def dataset(tmp_path_factory):
    out = str(tmp_path_factory.mktemp('bench') / 'dataset')
    generate_dataset(2, out, seed=3, num_rooms=(2, 3))
    return load_dataset(out)


def test_baseline_follows_the_optimal_order(two_room_house):
    episode = make_episode(two_room_house, [('spoon', (3.6, 0.7)), ('mug', (3.2, 0.8))], (0.375, 0.375))
    result = baseline_agent(two_room_house, episode, low_level='OrNav')
    assert result.method == BASELINE
    assert result.success
    assert result.failure_reason == 'none'
    assert result.found_order == ['spoon', 'mug']
    assert result.trace[0]['event'] == 'spawn'
    assert result.trace[-1]['event'] == 'end'


def test_baseline_unreachable_target(kb):
    house = house_from_ascii(two_room_rows('C'), ['bedroom', 'kitchen'], [('fridge', 4.2, 2.0, 0.9)],
                             house_id='house_0000', kb=kb)
    episode = Episode('val', 0, 2, 1, (Target('fridge', (4.2, 2.0, 0.9)),), (0.375, 0.375), 0, ('fridge',), 4.0)
    result = baseline_agent(house, episode, low_level='OrNav')
    assert not result.success
    assert result.failure_reason == 'nav_error'
    assert result.found == []


def test_matrix_rows(dataset):
    matrix = run_matrix(dataset, CONFIGS, workers=2)
    labels = [(r.method, r.scene_graph, r.low_level) for r in matrix.rows]
    assert labels == [(BASELINE, '-', 'PNavS'), ('RoomScout', 'GT', 'OrNav'), ('RoomScout', 'GT', 'PNavS'),
                      ('RoomScout', 'VO', 'OrNav'), ('RoomScout', 'VO', 'PNavS')]
    assert matrix.rows[0].kendall_tau is None
    for results in matrix.results.values():
        assert [r.episode_id for r in results] == ['val_0000', 'val_0001']


def test_matrix_rejects_empty_configs(dataset):
    with pytest.raises(ValueError):
        run_matrix(dataset, [])


def test_reports_round_trip(dataset, tmp_path):
    matrix = run_matrix(dataset, CONFIGS[:1], baseline_low_level='OrNav', workers=1)
    out = str(tmp_path / 'results')
    write_results(matrix, out)
    csv_path, md_path = write_report(matrix.rows, out)

    assert os.path.exists(os.path.join(out, RESULTS_FILE))
    assert os.path.exists(os.path.join(out, 'traces', 'GT_OrNav_heuristic_graph_annotation', 'val_0000.jsonl'))
    assert os.path.exists(os.path.join(out, 'traces', 'Baseline_OrNav', 'val_0001.jsonl'))
    with open(csv_path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    assert tuple(rows[0].keys()) == REPORT_COLUMNS
    assert rows[0]['Kendall Tau'] == 'N/A'
    with open(md_path, 'r', encoding='utf-8') as f:
        assert f.read() == format_markdown(matrix.rows)

    reloaded = load_results(out)
    assert [r.to_row() for r in reloaded] == [r.to_row() for r in matrix.rows]


def test_load_results_needs_a_results_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_results(str(tmp_path))


class TestTaskManager:
    def test_duplicate_ids_are_refused(self):
        manager = EpisodeTaskManager(max_workers=1)
        release = threading.Event()
        try:
            first = manager.submit_task('val_0000', release.wait, 5)
            assert first is not None
            assert manager.submit_task('val_0000', release.wait, 5) is None
            assert 'val_0000' in manager.active_tasks
        finally:
            release.set()
            manager.shutdown()
        assert first.result() is True
        assert 'val_0000' not in manager.active_tasks

    def test_cancel_unknown_task(self):
        manager = EpisodeTaskManager(max_workers=1)
        assert not manager.cancel_task('missing')
        manager.shutdown()

    def test_cancel_pending_spares_the_running_task(self):
        manager = EpisodeTaskManager(max_workers=1)
        started = threading.Event()
        release = threading.Event()

        def blocker():
            started.set()
            return release.wait(5)

        try:
            running = manager.submit_task('val_0000', blocker)
            assert started.wait(5)
            queued = [manager.submit_task(f"val_000{i}", release.wait, 5) for i in range(1, 4)]
            assert manager.cancel_pending() == 3
            assert all(f.cancelled() for f in queued)
            assert list(manager.active_tasks) == ['val_0000']
        finally:
            release.set()
            manager.shutdown()
        assert running.result() is True


def test_interrupted_matrix_cancels_pending_episodes(dataset, monkeypatch):
    cancelled = []
    original = EpisodeTaskManager.cancel_pending

    def recording(self):
        count = original(self)
        cancelled.append(count)
        return count

    def interrupted(futures, method, cfg):
        raise KeyboardInterrupt

    monkeypatch.setattr(EpisodeTaskManager, 'cancel_pending', recording)
    monkeypatch.setattr(bench, '_collect', interrupted)
    with pytest.raises(KeyboardInterrupt):
        run_matrix(dataset, CONFIGS[:1], baseline=False, workers=1)
    assert len(cancelled) == 1
