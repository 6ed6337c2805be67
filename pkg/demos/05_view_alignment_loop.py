"""The full iterative view-adjustment loop on a simulated scene.

A camera starts offset from the goal pose, repeatedly matches its view
against the reference render, solves robust PnP, and moves until the mean
correspondence distance stops improving.
"""

import math

import numpy as np

from viewalign.alignment import AlignmentConfig, run_alignment
from viewalign.correspondence import SelectionConfig
from viewalign.geometry import rotation_angle
from viewalign.simulate import (
    DEFAULT_INTRINSICS,
    CorruptionConfig,
    SimCamera,
    make_reference,
    make_scene,
    perturbed_start,
)

scene = make_scene(seed=5, n_landmarks=40)
start = perturbed_start(scene, seed=2, max_translation=0.25, max_rotation_deg=8.0)
print(f"start offset: {math.degrees(rotation_angle(start.rotation)):.1f} deg, "
      f"{np.linalg.norm(start.translation)*100:.1f} cm from goal\n")

camera = SimCamera(
    scene,
    DEFAULT_INTRINSICS,
    start_pose=start,
    corruption=CorruptionConfig(pixel_noise_sigma=0.5, seed=0),
)
reference = make_reference(scene, DEFAULT_INTRINSICS)
config = AlignmentConfig(
    estimator="magsac",
    selection=SelectionConfig(k=30),
    workspace=scene.workspace,
    max_steps=8,
)

report = run_alignment(camera, reference.grid, DEFAULT_INTRINSICS, config)

print("step | mean px dist | inliers | action | pose error vs goal")
for s in report.steps:
    rot = math.degrees(rotation_angle(s.pose_at_capture.rotation))
    trans = np.linalg.norm(s.pose_at_capture.translation) * 100
    print(f"  {s.step}  | {s.mean_px_dist:12.2f} | {s.inliers:7d} | {s.action:6s} "
          f"| {rot:5.2f} deg, {trans:5.1f} cm")

final_rot = math.degrees(rotation_angle(report.final_pose.rotation))
final_trans = np.linalg.norm(report.final_pose.translation) * 100
print(f"\nterminated after {len(report.steps)} steps "
      f"(two non-improving steps or budget)")
print(f"final pose error: {final_rot:.2f} deg, {final_trans:.1f} cm")
print(f"crop rectangle for the final photo: x={report.crop.x}, y={report.crop.y}, "
      f"{report.crop.width}x{report.crop.height}")
