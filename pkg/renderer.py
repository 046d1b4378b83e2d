#!/usr/bin/env python3
"""
RoomScout Renderer
Top-down maps of a house with the agent trajectory and target-found markers
"""

import json
import logging
from typing import List, Sequence, Tuple
from xml.sax.saxutils import escape

from PIL import Image, ImageDraw, ImageFont

from house_sim import DOOR_CLOSED, WALL, House

logger = logging.getLogger(__name__)


class RenderError(Exception):
    """Raised when a trace does not belong to the house being drawn"""


def load_trace(path: str) -> List[dict]:
    events = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                events.append(json.loads(line))
    return events


class TrajectoryRenderer:
    """Draws rooms, doors, objects, the pose polyline and found markers"""

    def __init__(self, scale: float = 40.0, margin: float = 10.0):
        self.scale = scale  # pixels per meter
        self.margin = margin
        self.colors = {
            'background': '#ffffff',
            'wall': '#3a3a3a',
            'room': '#f4f1ea',
            'door_open': '#3fa34d',
            'door_closed': '#c0392b',
            'object': '#7f8c8d',
            'path': '#2c6fbb',
            'found': '#e67e22',
            'start': '#8e44ad',
        }

    def _check(self, house: House, trace: Sequence[dict]):
        for event in trace:
            if event.get('event') == 'spawn' and event.get('house_id') != house.house_id:
                raise RenderError(f"Trace belongs to {event.get('house_id')}, not {house.house_id}")

    def _size(self, house: House) -> Tuple[int, int]:
        width = house.grid.width * house.grid.cell_size * self.scale + 2 * self.margin
        height = house.grid.height * house.grid.cell_size * self.scale + 2 * self.margin
        return int(round(width)), int(round(height))

    def _px(self, house: House, x: float, y: float) -> Tuple[float, float]:
        _, height = self._size(house)
        return (round(self.margin + x * self.scale, 2), round(height - self.margin - y * self.scale, 2))

    @staticmethod
    def _poses(trace: Sequence[dict]) -> List[Tuple[float, float]]:
        return [tuple(e['position'][:2]) for e in trace if e.get('event') == 'pose']

    @staticmethod
    def _start(trace: Sequence[dict]):
        for event in trace:
            if event.get('event') == 'spawn':
                return tuple(event['position'][:2])
        return None

    @staticmethod
    def _found(trace: Sequence[dict]) -> List[dict]:
        return [e for e in trace if e.get('event') == 'found']

    def render_svg(self, house: House, trace: Sequence[dict] = ()) -> str:
        self._check(house, trace)
        width, height = self._size(house)
        cell = house.grid.cell_size * self.scale
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
                 f'viewBox="0 0 {width} {height}">',
                 f'<rect width="{width}" height="{height}" fill="{self.colors["background"]}"/>',
                 f'<title>{escape(house.house_id)}</title>']

        for room in house.rooms:
            x0, y1 = self._px(house, room.bounds[0], room.bounds[3])
            w = (room.bounds[2] - room.bounds[0]) * self.scale
            h = (room.bounds[3] - room.bounds[1]) * self.scale
            parts.append(f'<rect class="room" x="{x0}" y="{y1}" width="{w:.2f}" height="{h:.2f}" '
                         f'fill="{self.colors["room"]}"/>')
            cx, cy = self._px(house, *room.center)
            parts.append(f'<text class="room-label" x="{cx}" y="{cy}" font-size="12" text-anchor="middle">'
                         f'{escape(room.id)}: {escape(room.room_type)}</text>')

        for gy in range(house.grid.height):
            for gx in range(house.grid.width):
                if house.grid.value((gx, gy)) == WALL:
                    px, py = self._px(house, gx * house.grid.cell_size, (gy + 1) * house.grid.cell_size)
                    parts.append(f'<rect class="wall" x="{px}" y="{py}" width="{cell:.2f}" height="{cell:.2f}" '
                                 f'fill="{self.colors["wall"]}"/>')

        for door in house.doors:
            px, py = self._px(house, door.position[0] - house.grid.cell_size / 2,
                              door.position[1] + house.grid.cell_size / 2)
            color = self.colors['door_open'] if door.open else self.colors['door_closed']
            parts.append(f'<rect class="door" x="{px}" y="{py}" width="{cell:.2f}" height="{cell:.2f}" '
                         f'fill="{color}"/>')

        for obj in house.objects:
            px, py = self._px(house, obj.position[0], obj.position[1])
            parts.append(f'<circle class="object" cx="{px}" cy="{py}" r="3" fill="{self.colors["object"]}">'
                         f'<title>{escape(obj.id)} {escape(obj.category)}</title></circle>')

        start = self._start(trace)
        if start is not None:
            px, py = self._px(house, *start)
            parts.append(f'<circle class="start" cx="{px}" cy="{py}" r="5" fill="{self.colors["start"]}"/>')

        poses = self._poses(trace)
        if poses:
            points = ' '.join('{},{}'.format(*self._px(house, x, y)) for x, y in poses)
            parts.append(f'<polyline class="trajectory" points="{points}" fill="none" '
                         f'stroke="{self.colors["path"]}" stroke-width="2"/>')

        for event in self._found(trace):
            px, py = self._px(house, *event['position'][:2])
            parts.append(f'<circle class="found" cx="{px}" cy="{py}" r="7" fill="none" '
                         f'stroke="{self.colors["found"]}" stroke-width="3"/>')
            parts.append(f'<text class="found-label" x="{px + 9}" y="{py - 9}" font-size="11">'
                         f'{escape(event["category"])} @ {event["step"]}</text>')

        parts.append('</svg>')
        return "\n".join(parts) + "\n"

    def render_png(self, house: House, trace: Sequence[dict] = ()) -> Image.Image:
        self._check(house, trace)
        frame = Image.new('RGB', self._size(house), color=self.colors['background'])
        draw = ImageDraw.Draw(frame)
        cell = house.grid.cell_size * self.scale
        try:
            font = ImageFont.load_default()
        except OSError:
            font = None

        for room in house.rooms:
            x0, y1 = self._px(house, room.bounds[0], room.bounds[3])
            x1, y0 = self._px(house, room.bounds[2], room.bounds[1])
            draw.rectangle([x0, y1, x1, y0], fill=self.colors['room'])
        for gy in range(house.grid.height):
            for gx in range(house.grid.width):
                value = house.grid.value((gx, gy))
                if value not in (WALL, DOOR_CLOSED):
                    continue
                px, py = self._px(house, gx * house.grid.cell_size, (gy + 1) * house.grid.cell_size)
                color = self.colors['wall'] if value == WALL else self.colors['door_closed']
                draw.rectangle([px, py, px + cell, py + cell], fill=color)
        for door in house.doors:
            if door.open:
                px, py = self._px(house, door.position[0] - house.grid.cell_size / 2,
                                  door.position[1] + house.grid.cell_size / 2)
                draw.rectangle([px, py, px + cell, py + cell], fill=self.colors['door_open'])
        for obj in house.objects:
            px, py = self._px(house, obj.position[0], obj.position[1])
            draw.ellipse([px - 3, py - 3, px + 3, py + 3], fill=self.colors['object'])

        poses = self._poses(trace)
        if len(poses) > 1:
            draw.line([self._px(house, x, y) for x, y in poses], fill=self.colors['path'], width=2)
        start = self._start(trace)
        if start is not None:
            px, py = self._px(house, *start)
            draw.ellipse([px - 5, py - 5, px + 5, py + 5], fill=self.colors['start'])
        for event in self._found(trace):
            px, py = self._px(house, *event['position'][:2])
            draw.ellipse([px - 7, py - 7, px + 7, py + 7], outline=self.colors['found'], width=3)
            draw.text((px + 9, py - 15), f"{event['category']} @ {event['step']}", fill='black', font=font)
        return frame


def render_topdown(house: House, trace: Sequence[dict] = (), path: str = None, scale: float = 40.0) -> str:
    """SVG top-down map; written to path when given"""
    svg = TrajectoryRenderer(scale=scale).render_svg(house, trace)
    if path:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(svg)
        logger.info(f"Rendered {house.house_id} to {path}")
    return svg


def render_topdown_png(house: House, trace: Sequence[dict], path: str, scale: float = 40.0) -> str:
    image = TrajectoryRenderer(scale=scale).render_png(house, trace)
    image.save(path, format='PNG')
    logger.info(f"Rendered {house.house_id} to {path}")
    return path
