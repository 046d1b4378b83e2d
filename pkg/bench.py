#!/usr/bin/env python3
"""
RoomScout Benchmark Harness
Privileged baseline, parallel experiment matrix and comparison reports
"""

import csv
import json
import logging
import os
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from agent_loop import EpisodeResult, FoundTarget, RunConfig, Trace, derive_seed, run_episode
from config import Config
from dataset import Dataset, Episode
from house_sim import House, PerceptionConfig, Simulator
from knowledge_base import KnowledgeBase, load_knowledge_base
from low_planner import PointGoal, SurrogateParams, make_navigator
from metrics import MetricsSummary, summarize

logger = logging.getLogger(__name__)

BASELINE = 'Baseline'
AGENT = 'RoomScout'
REPORT_COLUMNS = ('Method', 'Scene Graph', 'LL Planner', 'SR (%)', 'SPL', 'Kendall Tau', 'Episodes', 'Successes')
RESULTS_FILE = 'results.jsonl'


def baseline_agent(house: House, episode: Episode, low_level: str = 'PNavS', seed: int = 0,
                   app_config=Config) -> EpisodeResult:
    """Three PointNav goals at the ground-truth targets in the optimal order; no scene graph, no LLM"""
    cfg = RunConfig(scene_graph_mode='GT', low_level=low_level, step_budget=app_config.STEP_BUDGET, seed=seed)
    trace = Trace()
    sim = Simulator(house, PerceptionConfig.from_config(app_config, gt_mode=True),
                    trace_hook=lambda kind, payload: trace.emit(kind, sim.state.step_count, **payload))
    navigator = make_navigator(low_level, SurrogateParams.from_config(
        app_config, derive_seed(seed, episode.house_idx, 1)))
    state = sim.spawn(episode.start_position, episode.start_heading)
    trace.emit('spawn', 0, house_id=house.house_id, position=list(state.position), heading=state.heading,
               targets=list(episode.shortest_path_targets_order), config=f"{BASELINE}+{low_level}")

    found: List[FoundTarget] = []
    reason = 'none'
    for category in episode.shortest_path_targets_order:
        remaining = cfg.step_budget - sim.state.step_count
        if remaining <= 0:
            reason = 'step_budget'
            break
        x, y, _ = episode.target_position(category)
        goal = PointGoal((x, y), app_config.SUCCESS_RADIUS, min(app_config.MAX_NAV_STEPS, remaining))
        result = navigator.navigate(sim, goal)
        trace.emit('nav', sim.state.step_count, purpose='baseline', target=category, success=result.success,
                   steps_taken=result.steps_taken, path_length=round(result.path_length, 6))
        if not result.success:
            reason = 'nav_error'
            break
        position = tuple(float(v) for v in episode.target_position(category))
        order = trace.emit('found', sim.state.step_count, category=category, position=list(position))
        found.append(FoundTarget(category, sim.state.step_count, position, order))

    success = len(found) == len(episode.targets)
    trace.emit('end', sim.state.step_count, success=success, failure_reason=reason)
    return EpisodeResult(episode.episode_id, house.house_id, BASELINE, cfg, success, found,
                         round(sim.state.path_length, 6), sim.state.step_count, reason,
                         episode.shortest_path_length, list(episode.shortest_path_targets_order), trace.events)


class EpisodeTaskManager:
    """Bounded worker pool for independent episodes"""

    def __init__(self, max_workers: int = Config.MAX_WORKERS):
        self.executor = ThreadPoolExecutor(max_workers=max(1, max_workers))
        self.active_tasks: Dict[str, Future] = {}
        self._lock = threading.Lock()

    def submit_task(self, task_id: str, task_func, *args, **kwargs) -> Optional[Future]:
        """Submit an episode task; None if the id is already running"""
        with self._lock:
            if task_id in self.active_tasks:
                return None
            future = self.executor.submit(task_func, *args, **kwargs)
            self.active_tasks[task_id] = future
        future.add_done_callback(lambda f: self.cleanup_task(task_id))
        return future

    def cancel_task(self, task_id: str) -> bool:
        with self._lock:
            future = self.active_tasks.get(task_id)
        if future is None:
            return False
        cancelled = future.cancel()
        if cancelled:
            self.cleanup_task(task_id)
        return cancelled

    def cleanup_task(self, task_id: str):
        with self._lock:
            self.active_tasks.pop(task_id, None)

    def cancel_pending(self) -> int:
        """Cancel every task that has not started; running tasks finish"""
        with self._lock:
            task_ids = sorted(self.active_tasks)
        return sum(1 for task_id in task_ids if self.cancel_task(task_id))

    def shutdown(self, wait: bool = True):
        self.executor.shutdown(wait=wait)


def _crashed(episode: Episode, method: str, cfg: RunConfig) -> EpisodeResult:
    return EpisodeResult(episode.episode_id, episode.house_id, method, cfg, False, [], 0.0, 0, 'nav_error',
                         episode.shortest_path_length, list(episode.shortest_path_targets_order),
                         [{'index': 0, 'event': 'end', 'step': 0, 'success': False, 'failure_reason': 'nav_error'}])


def _run_agent(dataset: Dataset, episode: Episode, cfg: RunConfig, llm_client, kb, app_config) -> EpisodeResult:
    try:
        house = dataset.house(episode.house_idx)
    except Exception:
        logger.exception(f"[{episode.episode_id}] Could not load house")
        return _crashed(episode, AGENT, cfg)
    return run_episode(house, episode, cfg, llm_client, kb, app_config)


def _run_baseline(dataset: Dataset, episode: Episode, low_level: str, seed: int, app_config) -> EpisodeResult:
    try:
        return baseline_agent(dataset.house(episode.house_idx), episode, low_level, seed, app_config)
    except Exception:
        logger.exception(f"[{episode.episode_id}] Baseline crashed")
        return _crashed(episode, BASELINE, RunConfig(low_level=low_level, seed=seed))


@dataclass
class MatrixResult:
    rows: List[MetricsSummary]
    results: Dict[str, List[EpisodeResult]] = field(default_factory=dict)


def _collect(futures: Sequence[Tuple[Episode, Future]], method: str, cfg: RunConfig) -> List[EpisodeResult]:
    results = []
    for episode, future in futures:
        try:
            results.append(future.result())
        except Exception:
            logger.exception(f"[{episode.episode_id}] Episode task failed")
            results.append(_crashed(episode, method, cfg))
    return sorted(results, key=lambda r: r.episode_id)


def run_matrix(dataset: Dataset, configs: Sequence[RunConfig], baseline: bool = True,
               baseline_low_level: str = 'PNavS', workers: int = None, llm_client=None,
               kb: KnowledgeBase = None, app_config=Config) -> MatrixResult:
    """Every episode under every config plus the baseline row; episodes run in parallel"""
    if not configs:
        raise ValueError("run_matrix needs at least one run config")
    if len(dataset) == 0:
        raise ValueError("run_matrix needs a non-empty dataset")
    kb = kb or load_knowledge_base(app_config.KB_PATH)
    manager = EpisodeTaskManager(workers or app_config.MAX_WORKERS)
    matrix = MatrixResult(rows=[])
    try:
        if baseline:
            seed = configs[0].seed
            cfg = RunConfig(low_level=baseline_low_level, seed=seed)
            futures = [(e, manager.submit_task(f"{BASELINE}:{e.episode_id}", _run_baseline, dataset, e,
                                               baseline_low_level, seed, app_config)) for e in dataset]
            results = _collect(futures, BASELINE, cfg)
            key = f"{BASELINE}+{baseline_low_level}"
            matrix.results[key] = results
            matrix.rows.append(summarize(results, BASELINE, '-', baseline_low_level, with_tau=False))
            logger.info(f"Finished {key}: {matrix.rows[-1].n_success}/{len(results)} successes")

        for cfg in configs:
            key = f"{cfg.label}:{cfg.backend}:{cfg.memory}"
            if key in matrix.results:
                continue
            futures = [(e, manager.submit_task(f"{key}:{e.episode_id}", _run_agent, dataset, e, cfg, llm_client,
                                               kb, app_config)) for e in dataset]
            results = _collect(futures, AGENT, cfg)
            matrix.results[key] = results
            matrix.rows.append(summarize(results, AGENT, cfg.scene_graph_mode, cfg.low_level))
            logger.info(f"Finished {key}: {matrix.rows[-1].n_success}/{len(results)} successes")
    except KeyboardInterrupt:
        cancelled = manager.cancel_pending()
        logger.warning(f"Matrix run interrupted; cancelled {cancelled} pending episodes")
        raise
    finally:
        manager.shutdown()
    return matrix


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def format_markdown(rows: Sequence[MetricsSummary]) -> str:
    lines = ['| ' + ' | '.join(REPORT_COLUMNS) + ' |', '|' + '---|' * len(REPORT_COLUMNS)]
    for row in rows:
        values = row.to_row()
        lines.append('| ' + ' | '.join(values[c] for c in REPORT_COLUMNS) + ' |')
    return "\n".join(lines) + "\n"


def write_report(rows: Sequence[MetricsSummary], out_dir: str) -> Tuple[str, str]:
    """report.csv and report.md in the comparison-table layout"""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, 'report.csv')
    with open(csv_path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_row())
    md_path = os.path.join(out_dir, 'report.md')
    with open(md_path, 'w', encoding='utf-8') as f:
        f.write(format_markdown(rows))
    logger.info(f"✅ Report written to {csv_path} and {md_path}")
    return csv_path, md_path


def _slug(key: str) -> str:
    return key.replace('+', '_').replace(':', '_')


def write_results(matrix: MatrixResult, out_dir: str):
    """results.jsonl plus one trace file per episode and any LLM transcripts"""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, RESULTS_FILE), 'w', encoding='utf-8') as f:
        for key in matrix.results:
            for result in matrix.results[key]:
                record = result.to_dict(include_trace=False)
                record['run'] = key
                f.write(json.dumps(record, sort_keys=True) + "\n")
    for key, results in matrix.results.items():
        trace_dir = os.path.join(out_dir, 'traces', _slug(key))
        os.makedirs(trace_dir, exist_ok=True)
        for result in results:
            with open(os.path.join(trace_dir, f"{result.episode_id}.jsonl"), 'w', encoding='utf-8') as f:
                for event in result.trace:
                    f.write(json.dumps(event, sort_keys=True) + "\n")
            if result.transcript is not None and len(result.transcript):
                transcript_dir = os.path.join(out_dir, 'transcripts', _slug(key))
                os.makedirs(transcript_dir, exist_ok=True)
                result.transcript.write(os.path.join(transcript_dir, f"{result.episode_id}.jsonl"))


def load_results(out_dir: str) -> List[MetricsSummary]:
    """Recompute report rows from a results.jsonl written by write_results"""
    path = os.path.join(out_dir, RESULTS_FILE)
    if not os.path.exists(path):
        raise FileNotFoundError(f"No {RESULTS_FILE} in {out_dir}")
    grouped: Dict[str, List[EpisodeResult]] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                grouped.setdefault(record['run'], []).append(EpisodeResult.from_dict(record))
    rows = []
    for key, results in grouped.items():
        first = results[0]
        if first.method == BASELINE:
            rows.append(summarize(results, BASELINE, '-', first.config.low_level, with_tau=False))
        else:
            rows.append(summarize(results, AGENT, first.config.scene_graph_mode, first.config.low_level))
    return rows
