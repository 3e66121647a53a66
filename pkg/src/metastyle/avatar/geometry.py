"""Camera conventions shared by the avatar renderer and the face generator.

Orthographic camera looking down -z; the image plane spans [-1, 1]^2 with
+y up. A view rotates the object by ``Rx(pitch) @ Ry(yaw)``.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..tensorcore import UsageError

YAW_LIMIT = math.pi / 2
PITCH_LIMIT = math.pi / 6


@dataclass(frozen=True)
class ViewSpec:
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if not abs(self.yaw) <= YAW_LIMIT or not abs(self.pitch) <= PITCH_LIMIT:
            raise UsageError(f"view out of bounds: yaw={self.yaw}, pitch={self.pitch}")


def rotation(yaw, pitch=0.0):
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return rx @ ry


def pixel_centers(n):
    """Pixel-centre coordinates in [-1, 1]; exactly antisymmetric."""
    return (2.0 * np.arange(n) + 1.0 - n) / n
