import math

import numpy as np
import pytest

from keygrasp.geometry import (
    CameraModel,
    Pose,
    pose_apply,
    project_many,
    random_rotation,
    unproject,
)


@pytest.fixture(scope="session")
def cam():
    return CameraModel(600.0, 600.0, 320.0, 240.0, 640, 480)


def random_visible_pose(rng, cam, template, depth_range=(0.4, 2.0)):
    """Random pose whose template keypoints all project inside the image."""
    while True:
        rotation = random_rotation(rng)
        z = rng.uniform(*depth_range)
        u = rng.uniform(0.15 * cam.width, 0.85 * cam.width)
        v = rng.uniform(0.15 * cam.height, 0.85 * cam.height)
        pose = Pose(rotation, unproject(cam, (u, v), z))
        pts = pose_apply(pose, template.points)
        if np.all(pts[:, 2] > 1e-3):
            px = project_many(cam, pts)
            if np.all((px[:, 0] >= 0) & (px[:, 0] < cam.width)
                      & (px[:, 1] >= 0) & (px[:, 1] < cam.height)):
                return pose
