"""Flat-shaded deterministic rasterization of the world for both cameras.

Projection formulas (documented, and relied on by tests):

Static camera (cam1), an oblique top-down view.  World point (x, y, z) maps
to continuous pixel coordinates

    u = (x - CAM1_X0) / (CAM1_X1 - CAM1_X0) * (W - 1)
    v = (1 - (y + CAM1_OBLIQUE * z - CAM1_Y0) / (CAM1_Y1 - CAM1_Y0)) * (H - 1)

so height shifts a footprint up-image by CAM1_OBLIQUE meters per meter.

Wrist camera (cam2), orthographic and hand-centered with a FOV-sized square
window:

    u = ((x - hand.x) / CAM2_FOV + 0.5) * (W - 1)
    v = ((hand.y - y) / CAM2_FOV + 0.5) * (H - 1)

Rasterization samples pixel centers against continuous shape bounds, so a
render is a pure function of (world, camera, resolution).
"""

from __future__ import annotations

from enum import Enum
from functools import lru_cache

import numpy as np

from ..config import OBJECT_SPECS
from ..core import Image, PlateColor
from .world import WorldState

__all__ = ["Camera", "render", "cam1_project", "cam2_project"]

CAM1_X0, CAM1_X1 = -0.55, 0.55
CAM1_Y0, CAM1_Y1 = -0.15, 0.85
CAM1_OBLIQUE = 0.6
CAM2_FOV = 0.36

FLOOR_COLOR = (42, 42, 48)
TABLE_COLOR = (181, 144, 96)
PLATE_COLORS = {PlateColor.YELLOW: (233, 201, 44), PlateColor.PURPLE: (148, 62, 188)}
HAND_COLOR = (238, 238, 244)
HAND_GRIP_COLOR = (96, 200, 120)


class Camera(Enum):
    CAM1_STATIC = "cam1"
    CAM2_WRIST = "cam2"


def cam1_project(x: float, y: float, z: float, width: int, height: int):
    u = (x - CAM1_X0) / (CAM1_X1 - CAM1_X0) * (width - 1)
    v = (1.0 - (y + CAM1_OBLIQUE * z - CAM1_Y0) / (CAM1_Y1 - CAM1_Y0)) * (height - 1)
    return u, v


def cam2_project(x: float, y: float, hand_x: float, hand_y: float,
                 width: int, height: int):
    u = ((x - hand_x) / CAM2_FOV + 0.5) * (width - 1)
    v = ((hand_y - y) / CAM2_FOV + 0.5) * (height - 1)
    return u, v


@lru_cache(maxsize=8)
def _pixel_grid(width: int, height: int):
    us = np.arange(width, dtype=np.float64)
    vs = np.arange(height, dtype=np.float64)
    return np.meshgrid(us, vs)


def _paint(buf: np.ndarray, mask: np.ndarray, color) -> None:
    buf[mask] = color


def _render_cam1(world: WorldState, width: int, height: int) -> np.ndarray:
    uu, vv = _pixel_grid(width, height)
    buf = np.empty((height, width, 3), dtype=np.uint8)
    buf[:, :] = FLOOR_COLOR
    scene = world.scene

    def rect(cx, cy, z, w, d, color):
        u0, v0 = cam1_project(cx - w / 2, cy + d / 2, z, width, height)
        u1, v1 = cam1_project(cx + w / 2, cy - d / 2, z, width, height)
        _paint(buf, (uu >= u0) & (uu <= u1) & (vv >= v0) & (vv <= v1), color)

    def disc(cx, cy, z, r, color):
        u, v = cam1_project(cx, cy, z, width, height)
        ru = r / (CAM1_X1 - CAM1_X0) * (width - 1)
        rv = r / (CAM1_Y1 - CAM1_Y0) * (height - 1)
        _paint(buf, ((uu - u) / ru) ** 2 + ((vv - v) / rv) ** 2 <= 1.0, color)

    tx = scene.table_x
    rect((tx[0] + tx[1]) / 2, scene.table_y_back / 2, 0.0,
         tx[1] - tx[0], scene.table_y_back, TABLE_COLOR)
    for color, (px, py) in sorted(scene.plate_centers.items(), key=lambda kv: kv[0].value):
        disc(px, py, 0.0, scene.plate_radius, PLATE_COLORS[color])
    for obj in sorted(world.objects, key=lambda o: o.name):
        if obj.fallen:
            continue
        w, d = obj.spec.footprint
        rect(obj.x, obj.y, obj.top, w, d, obj.spec.color)
    hand = world.hand
    disc(hand.x, hand.y, hand.z, 0.035, HAND_COLOR)
    disc(hand.x, hand.y, hand.z, 0.012 + 0.018 * world.synergy, HAND_GRIP_COLOR)
    return buf


def _render_cam2(world: WorldState, width: int, height: int) -> np.ndarray:
    uu, vv = _pixel_grid(width, height)
    buf = np.empty((height, width, 3), dtype=np.uint8)
    hand = world.hand
    scene = world.scene

    # Ground layer as seen from above the hand: floor beyond the edge or the
    # table bounds, table elsewhere.
    wx = hand.x + (uu / (width - 1) - 0.5) * CAM2_FOV
    wy = hand.y - (vv / (height - 1) - 0.5) * CAM2_FOV
    on_table = (wy >= 0.0) & (wy <= scene.table_y_back) & \
               (wx >= scene.table_x[0]) & (wx <= scene.table_x[1])
    buf[:, :] = FLOOR_COLOR
    buf[on_table] = TABLE_COLOR

    def rect(cx, cy, w, d, color):
        u0, v0 = cam2_project(cx - w / 2, cy + d / 2, hand.x, hand.y, width, height)
        u1, v1 = cam2_project(cx + w / 2, cy - d / 2, hand.x, hand.y, width, height)
        _paint(buf, (uu >= u0) & (uu <= u1) & (vv >= v0) & (vv <= v1), color)

    def disc(cx, cy, r, color):
        u, v = cam2_project(cx, cy, hand.x, hand.y, width, height)
        rpix = r / CAM2_FOV * (width - 1)
        _paint(buf, (uu - u) ** 2 + (vv - v) ** 2 <= rpix ** 2, color)

    for color, (px, py) in sorted(scene.plate_centers.items(), key=lambda kv: kv[0].value):
        disc(px, py, scene.plate_radius, PLATE_COLORS[color])
    for obj in sorted(world.objects, key=lambda o: o.name):
        if obj.fallen:
            continue
        w, d = obj.spec.footprint
        rect(obj.x, obj.y, w, d, obj.spec.color)

    # Center reticle plus a synergy ring.
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    _paint(buf, (np.abs(uu - cx) <= 0.6) & (np.abs(vv - cy) <= height * 0.08), HAND_COLOR)
    _paint(buf, (np.abs(vv - cy) <= 0.6) & (np.abs(uu - cx) <= width * 0.08), HAND_COLOR)
    ring = (uu - cx) ** 2 + (vv - cy) ** 2
    r_in = (2.0 + 4.0 * world.synergy) ** 2
    _paint(buf, (ring >= r_in - 4.0) & (ring <= r_in + 4.0), HAND_GRIP_COLOR)
    return buf


def render(world: WorldState, camera: Camera, width=None, height=None) -> Image:
    """Rasterize one camera; defaults to the scene's configured resolution."""
    width = world.scene.camera_width if width is None else width
    height = world.scene.camera_height if height is None else height
    if width <= 0 or height <= 0:
        raise ValueError("resolution must be positive")
    if camera is Camera.CAM1_STATIC:
        buf = _render_cam1(world, width, height)
    else:
        buf = _render_cam2(world, width, height)
    return Image.from_array(buf)
