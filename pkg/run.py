#!/usr/bin/env python3
"""
RoomScout Command Line
Entry point for dataset generation, experiment runs, reports, rendering and LLM checks
"""

import importlib
import logging
import os
import sys

import click
from dotenv import load_dotenv

# Add the project directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import config as config_module

logger = logging.getLogger(__name__)

SCENE_GRAPH_CHOICES = {'gt': 'GT', 'vo': 'VO'}
LOW_LEVEL_CHOICES = {'ornav': 'OrNav', 'pnavs': 'PNavS'}
MEMORY_CHOICES = {'graph': 'graph_annotation', 'llm': 'llm_tracker'}


def configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def _load_env_file(ctx, param, value):
    if value:
        load_dotenv(value, override=True)
        importlib.reload(config_module)
    return value


@click.group()
@click.option('--env-file', type=click.Path(exists=True, dir_okay=False), callback=_load_env_file,
              is_eager=True, expose_value=False, help='Load settings from this .env file')
@click.option('--config-name', default=None, help='development, benchmark or testing')
@click.option('--log-level', default=None, help='Overrides the configured LOG_LEVEL')
@click.pass_context
def cli(ctx, config_name, log_level):
    """RoomScout multi-object navigation benchmark"""
    try:
        app_config = config_module.get_config(config_name)
    except KeyError as e:
        raise click.ClickException(str(e))
    configure_logging(log_level or app_config.LOG_LEVEL)
    ctx.obj = {'config': app_config}


@cli.command('gen-dataset')
@click.option('--n', 'count', type=int, default=132, show_default=True, help='Number of episodes/houses')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Dataset directory')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--min-rooms', type=int, default=3, show_default=True)
@click.option('--max-rooms', type=int, default=10, show_default=True)
@click.option('--data-type', type=click.Choice(['val', 'test']), default='val', show_default=True)
@click.pass_context
def gen_dataset(ctx, count, out_dir, seed, min_rooms, max_rooms, data_type):
    """Generate seeded houses and episodes"""
    from dataset import DatasetError, generate_dataset

    app_config = ctx.obj['config']
    try:
        episodes = generate_dataset(count, out_dir, seed=seed, num_rooms=(min_rooms, max_rooms),
                                    data_type=data_type, cfg=app_config)
    except DatasetError as e:
        raise click.ClickException(str(e))
    click.echo(f"✅ Wrote {len(episodes)} episodes to {out_dir}")


@cli.command('run')
@click.option('--dataset', 'dataset_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--scene-graph', 'scene_graphs', multiple=True, type=click.Choice(sorted(SCENE_GRAPH_CHOICES)),
              default=('gt', 'vo'), show_default=True)
@click.option('--low-level', 'low_levels', multiple=True, type=click.Choice(sorted(LOW_LEVEL_CHOICES)),
              default=('ornav', 'pnavs'), show_default=True)
@click.option('--backend', type=click.Choice(['heuristic', 'llm']), default='heuristic', show_default=True)
@click.option('--memory', type=click.Choice(sorted(MEMORY_CHOICES)), default='graph', show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--baseline/--no-baseline', default=True, show_default=True)
@click.option('--baseline-low-level', type=click.Choice(sorted(LOW_LEVEL_CHOICES)), default='pnavs',
              show_default=True)
@click.option('--workers', type=int, default=None, help='Defaults to the configured MAX_WORKERS')
@click.option('--step-budget', type=int, default=None, help='Defaults to the configured STEP_BUDGET')
@click.pass_context
def run_command(ctx, dataset_dir, scene_graphs, low_levels, backend, memory, seed, out_dir, baseline,
                baseline_low_level, workers, step_budget):
    """Run the experiment matrix and write results and reports"""
    from agent_loop import RunConfig
    from bench import run_matrix, write_report, write_results
    from dataset import DatasetError, load_dataset
    from llm_client import LLMClient, LLMConfig

    app_config = ctx.obj['config']
    try:
        dataset = load_dataset(dataset_dir)
    except DatasetError as e:
        raise click.ClickException(str(e))

    configs = [RunConfig(scene_graph_mode=SCENE_GRAPH_CHOICES[sg], low_level=LOW_LEVEL_CHOICES[ll],
                         backend=backend, memory=MEMORY_CHOICES[memory],
                         step_budget=step_budget or app_config.STEP_BUDGET, seed=seed)
               for sg in scene_graphs for ll in low_levels]
    llm_client = None
    if any(c.needs_llm for c in configs):
        llm_client = LLMClient(LLMConfig.from_config(app_config), api_key_env=app_config.LLM_API_KEY_ENV)
        if not llm_client.is_configured():
            raise click.ClickException(f"LLM credentials not configured (set {app_config.LLM_API_KEY_ENV})")

    try:
        matrix = run_matrix(dataset, configs, baseline=baseline,
                            baseline_low_level=LOW_LEVEL_CHOICES[baseline_low_level], workers=workers,
                            llm_client=llm_client, app_config=app_config)
    except ValueError as e:
        raise click.ClickException(str(e))
    write_results(matrix, out_dir)
    csv_path, md_path = write_report(matrix.rows, out_dir)
    for row in matrix.rows:
        values = row.to_row()
        click.echo(f"{values['Method']:<10} {values['Scene Graph']:<3} {values['LL Planner']:<6} "
                   f"SR {values['SR (%)']:>6}%  SPL {values['SPL']}  Tau {values['Kendall Tau']}")
    click.echo(f"✅ Report: {csv_path}, {md_path}")


@cli.command('report')
@click.option('--results', 'results_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--out', 'out_dir', default=None, type=click.Path(file_okay=False), help='Defaults to --results')
def report(results_dir, out_dir):
    """Rebuild report.csv and report.md from results.jsonl"""
    from bench import format_markdown, load_results, write_report

    try:
        rows = load_results(results_dir)
    except (FileNotFoundError, ValueError, KeyError) as e:
        raise click.ClickException(str(e))
    write_report(rows, out_dir or results_dir)
    click.echo(format_markdown(rows), nl=False)


@cli.command('render')
@click.option('--dataset', 'dataset_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--episode', 'episode_id', required=True, help='Episode id, e.g. val_0003')
@click.option('--trace', 'trace_path', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False), help='.svg or .png')
def render(dataset_dir, episode_id, trace_path, out_path):
    """Draw a top-down map with the episode trajectory"""
    from dataset import DatasetError, load_dataset
    from renderer import RenderError, load_trace, render_topdown, render_topdown_png

    try:
        dataset = load_dataset(dataset_dir, verify=False)
        episode = dataset.episode(episode_id)
        house = dataset.house(episode.house_idx)
        trace = load_trace(trace_path) if trace_path else []
        if out_path.lower().endswith('.png'):
            render_topdown_png(house, trace, out_path)
        else:
            render_topdown(house, trace, out_path)
    except (DatasetError, RenderError) as e:
        raise click.ClickException(str(e))
    click.echo(f"✅ Rendered {episode_id} to {out_path}")


@cli.command('check-llm')
@click.pass_context
def check_llm(ctx):
    """Check the configured chat-completion endpoint"""
    from llm_client import LLMClient, LLMConfig

    app_config = ctx.obj['config']
    client = LLMClient(LLMConfig.from_config(app_config), api_key_env=app_config.LLM_API_KEY_ENV)
    ok, message = client.test_connection()
    if not ok:
        raise click.ClickException(f"❌ {message}")
    click.echo(f"✅ {message}")


def main():
    cli(obj={})


if __name__ == '__main__':
    main()
