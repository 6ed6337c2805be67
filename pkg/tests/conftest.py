"""Shared fixtures and synthetic data builders for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from viewalign.geometry import (
    CameraIntrinsics,
    CameraPose,
    Correspondence,
    PixelPoint,
    ScenePoint,
    back_project,
    invert,
    rotation_from_axis_angle,
    rotation_angle,
)


@pytest.fixture
def intr() -> CameraIntrinsics:
    return CameraIntrinsics(fx=525.0, fy=525.0, cx=320.0, cy=240.0, width=640, height=480)


def random_pose(seed: int, max_angle: float = 0.4, max_translation: float = 0.5) -> CameraPose:
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.1, 1.0) * max_angle
    t = rng.normal(size=3)
    t = t / np.linalg.norm(t) * rng.uniform(0.2, 1.0) * max_translation
    return CameraPose(rotation_from_axis_angle(axis * angle), t)


def synthesize_correspondences(
    seed: int,
    intr: CameraIntrinsics,
    n: int = 10,
    pose: CameraPose | None = None,
    planar: bool = False,
    pixel_noise: float = 0.0,
    margin: float = 40.0,
) -> tuple[CameraPose, list[Correspondence]]:
    """Ground-truth pose plus consistent correspondences.

    Points are sampled as pixels in the target (reference) view and
    back-projected through the inverse pose into the current-camera frame,
    so every reference pixel is in frame by construction.
    """
    rng = np.random.default_rng(seed)
    if pose is None:
        pose = random_pose(seed + 10_007)
    inv = invert(pose)
    corrs = []
    while len(corrs) < n:
        u = rng.uniform(margin, intr.width - margin)
        v = rng.uniform(margin, intr.height - margin)
        depth = 3.0 if planar else rng.uniform(1.5, 4.0)
        target_pt = back_project(intr, PixelPoint(u, v), depth)
        scene = inv.rotation @ np.asarray(target_pt) + inv.translation
        if scene[2] <= 0.05:
            continue
        obs_u = u + (rng.normal(scale=pixel_noise) if pixel_noise else 0.0)
        obs_v = v + (rng.normal(scale=pixel_noise) if pixel_noise else 0.0)
        corrs.append(
            Correspondence(
                reference_pixel=PixelPoint(obs_u, obs_v),
                scene_point=ScenePoint(*scene),
                descriptor_pair=(np.zeros(2), np.zeros(2)),
                saliency=float(rng.uniform(0.2, 1.0)),
            )
        )
    return pose, corrs


def rotation_error_deg(a: CameraPose, b: CameraPose) -> float:
    return math.degrees(rotation_angle(a.rotation.T @ b.rotation))


def translation_error(a: CameraPose, b: CameraPose) -> float:
    return float(np.linalg.norm(a.translation - b.translation))
