#!/usr/bin/env python3
"""
Renderer tests: SVG structure, found markers, house checks and PNG output
"""

import re

import pytest
from PIL import Image

from renderer import RenderError, TrajectoryRenderer, load_trace, render_topdown, render_topdown_png


def spawn(house_id='house_0000'):
    return {'index': 0, 'event': 'spawn', 'step': 0, 'house_id': house_id, 'position': [0.375, 0.375],
            'heading': 0}


def poses(count):
    events = []
    for i in range(count):
        x = 0.375 + 0.25 * (i % 10)
        y = 0.375 + 0.25 * (i // 10)
        events.append({'index': i + 1, 'event': 'pose', 'step': i + 1, 'position': [x, y], 'heading': 0})
    return events


def test_empty_trace_has_no_trajectory(bedroom_house):
    svg = TrajectoryRenderer().render_svg(bedroom_house, [])
    assert svg.startswith('<svg')
    assert 'class="trajectory"' not in svg
    assert svg.count('class="object"') == len(bedroom_house.objects)
    assert svg.count('class="room"') == 1


def test_polyline_has_one_vertex_per_pose(bedroom_house):
    svg = TrajectoryRenderer().render_svg(bedroom_house, [spawn()] + poses(100))
    points = re.search(r'class="trajectory" points="([^"]*)"', svg).group(1)
    assert len(points.split(' ')) == 100
    assert 'class="start"' in svg


def test_found_markers(bedroom_house):
    found = [{'index': 10 + i, 'event': 'found', 'step': 4, 'category': c, 'position': [x, y, 0.6]}
             for i, (c, x, y) in enumerate([('pillow', 1.2, 1.4), ('alarm clock', 2.3, 2.0), ('book', 2.0, 2.4)])]
    svg = render_topdown(bedroom_house, [spawn()] + found)
    assert svg.count('class="found"') == 3
    assert 'alarm clock @ 4' in svg


def test_trace_from_another_house(bedroom_house):
    with pytest.raises(RenderError):
        TrajectoryRenderer().render_svg(bedroom_house, [spawn('house_0042')])


def test_files(bedroom_house, tmp_path):
    trace_path = tmp_path / 'trace.jsonl'
    trace_path.write_text('\n'.join(
        '{"event": "pose", "index": %d, "position": [%s, 0.375], "step": %d}' % (i, 0.375 + 0.25 * i, i)
        for i in range(5)) + '\n', encoding='utf-8')
    trace = load_trace(str(trace_path))
    assert len(trace) == 5

    svg_path = str(tmp_path / 'map.svg')
    render_topdown(bedroom_house, trace, svg_path)
    with open(svg_path, 'r', encoding='utf-8') as f:
        assert 'class="trajectory"' in f.read()

    png_path = str(tmp_path / 'map.png')
    render_topdown_png(bedroom_house, trace, png_path, scale=20.0)
    with Image.open(png_path) as image:
        assert image.format == 'PNG'
        assert image.size == (int(round(12 * 0.25 * 20 + 20)), int(round(12 * 0.25 * 20 + 20)))
