import numpy as np
import pytest

import config
from scene_sim import AgentPose, Scene, TargetInstance


def build_scene(classes, targets=(), starts=((0.5, 0.5, 0.0),), resolution=0.25, n_classes=6, scene_id="hand"):
    """Scene from a class grid given as rows (iy) of cells (ix)."""
    classes = np.asarray(classes, dtype=np.int64)
    heights = np.full(classes.shape, config.OBJECT_HEIGHT_M)
    heights[classes == config.FLOOR_CLASS] = config.FLOOR_HEIGHT_M
    heights[classes == config.WALL_CLASS] = config.WALL_HEIGHT_M
    return Scene(
        scene_id=scene_id,
        resolution=resolution,
        n_classes=n_classes,
        classes=classes,
        heights=heights,
        targets=[TargetInstance(c, tuple(b)) for c, b in targets],
        start_poses=[AgentPose(*p) for p in starts],
        seed=None,
    )


def boxed_room(width, height, objects=(), n_classes=6, start_cell=(1, 1), resolution=0.25):
    """Walled room with objects given as (class_id, (x0, y0, x1, y1))."""
    classes = np.zeros((height, width), dtype=np.int64)
    classes[0, :] = classes[-1, :] = config.WALL_CLASS
    classes[:, 0] = classes[:, -1] = config.WALL_CLASS
    for class_id, (x0, y0, x1, y1) in objects:
        classes[y0:y1 + 1, x0:x1 + 1] = class_id
    start = ((start_cell[0] + 0.5) * resolution, (start_cell[1] + 0.5) * resolution, 0.0)
    return build_scene(classes, targets=objects, starts=(start,), resolution=resolution, n_classes=n_classes)


@pytest.fixture
def room():
    """10x8 walled room with a single 1x1 object of class 2 at (7, 4)."""
    return boxed_room(10, 8, objects=[(2, (7, 4, 7, 4))], start_cell=(1, 1))
