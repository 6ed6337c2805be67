"""Iterative camera view adjustment toward a reference image.

Each step matches descriptor grids between the current view and the
(pre-fitted) reference, selects k salient well-spread pairs, attaches depth,
solves a robust PnP problem, and either moves the camera by the resulting
delta or holds in place.  The loop terminates when the mean pixel distance
between the selected correspondences fails to improve on the best value seen
so far for two consecutive steps, or when the step budget runs out.

A pose delta here is the transform returned by PnP: it maps current-camera
coordinates into goal-camera coordinates, so the camera's new world pose is
``compose(current_world_pose, invert(delta))``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Protocol

import numpy as np

from .correspondence import (
    DescriptorGrid,
    InsufficientCorrespondences,
    SelectionConfig,
    attach_depth,
    mutual_nearest_matches,
    select_correspondences,
)
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    PixelPoint,
    axis_angle_from_rotation,
    compose,
    invert,
    rotation_from_axis_angle,
)
from .pnp import (
    DegenerateConfiguration,
    TooFewCorrespondences,
    refine_weighted,
    solve_epnp,
)
from .robust import MagsacConfig, NoSolution, RansacConfig, RobustResult, magsac_pnp, ransac_pnp


class CameraUnavailable(Exception):
    """The camera interface could not produce a view or execute a move."""


# --- reference fitting --------------------------------------------------------


@dataclass(frozen=True)
class ReferenceSpec:
    """How a reference image is scaled and padded into the capture frame."""

    ref_width: int
    ref_height: int
    scale: float
    scaled_width: int
    scaled_height: int
    pad_left: int
    pad_right: int
    pad_top: int
    pad_bottom: int

    def transform_pixel(self, p: PixelPoint) -> PixelPoint:
        """Map a reference-image pixel into the padded capture frame."""
        return PixelPoint(p.u * self.scale + self.pad_left, p.v * self.scale + self.pad_top)


def fit_reference(ref_dims: tuple[int, int], capture_dims: tuple[int, int]) -> ReferenceSpec:
    """Scale the reference as large as possible without changing aspect ratio.

    The scaled image never exceeds the capture in either dimension and the
    leftover border is padded, split centered (floor on the left/top side).
    """
    ref_w, ref_h = ref_dims
    cap_w, cap_h = capture_dims
    if min(ref_w, ref_h, cap_w, cap_h) < 1:
        raise ValueError("dimensions must be at least 1 pixel")
    scale = min(cap_w / ref_w, cap_h / ref_h)
    scaled_w = min(cap_w, int(round(ref_w * scale)))
    scaled_h = min(cap_h, int(round(ref_h * scale)))
    pad_w = cap_w - scaled_w
    pad_h = cap_h - scaled_h
    return ReferenceSpec(
        ref_width=ref_w,
        ref_height=ref_h,
        scale=scale,
        scaled_width=scaled_w,
        scaled_height=scaled_h,
        pad_left=pad_w // 2,
        pad_right=pad_w - pad_w // 2,
        pad_top=pad_h // 2,
        pad_bottom=pad_h - pad_h // 2,
    )


@dataclass(frozen=True)
class CropRect:
    """Axis-aligned crop rectangle: x, y of the top-left corner plus size."""

    x: int
    y: int
    width: int
    height: int


def crop_captured(capture_dims: tuple[int, int], spec: ReferenceSpec) -> CropRect:
    """Rectangle of the captured image that excludes all reference padding."""
    cap_w, cap_h = capture_dims
    if spec.scaled_width + spec.pad_left + spec.pad_right != cap_w:
        raise ValueError("reference spec is inconsistent with the capture width")
    if spec.scaled_height + spec.pad_top + spec.pad_bottom != cap_h:
        raise ValueError("reference spec is inconsistent with the capture height")
    return CropRect(
        x=spec.pad_left, y=spec.pad_top, width=spec.scaled_width, height=spec.scaled_height
    )


# --- workspace and state --------------------------------------------------------


@dataclass(frozen=True)
class WorkspaceLimits:
    """Reachable camera positions (axis-aligned box) and per-step rotation cap."""

    min_corner: np.ndarray
    max_corner: np.ndarray
    max_rotation_step: float = math.radians(25.0)

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float).reshape(3)
        hi = np.asarray(self.max_corner, dtype=float).reshape(3)
        if not np.all(lo < hi):
            raise ValueError("workspace min corner must be strictly below max corner")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def contains(self, position: np.ndarray) -> bool:
        p = np.asarray(position, dtype=float).reshape(3)
        return bool(np.all(p >= self.min_corner) and np.all(p <= self.max_corner))


@dataclass
class AlignmentState:
    step_index: int = 0
    mean_distance_history: list[float] = field(default_factory=list)
    camera_pose_world: CameraPose = field(default_factory=CameraPose.identity)

    @property
    def best_so_far(self) -> float:
        return min(self.mean_distance_history) if self.mean_distance_history else math.inf


def should_terminate(state: AlignmentState, max_steps: int) -> bool:
    """True when the error plateaued for two steps or the budget is exhausted.

    The plateau test asks whether the two most recent history entries both
    failed to beat the best value achieved before them.
    """
    if state.step_index >= max_steps:
        return True
    h = state.mean_distance_history
    if len(h) < 3:
        return False
    best_before = min(h[:-2])
    return h[-2] >= best_before and h[-1] >= best_before


# --- per-step pipeline ----------------------------------------------------------

HoldReason = Literal["pnp_failure", "outside_workspace", "too_few_correspondences"]
PNP_FAILURE: HoldReason = "pnp_failure"
OUTSIDE_WORKSPACE: HoldReason = "outside_workspace"
TOO_FEW_CORRESPONDENCES: HoldReason = "too_few_correspondences"


@dataclass(frozen=True)
class StepDiagnostics:
    correspondence_count: int
    selected_count: int
    inlier_count: int
    mean_pixel_distance: float


@dataclass(frozen=True)
class StepOutcome:
    action: Literal["move", "hold"]
    delta: CameraPose | None
    hold_reason: HoldReason | None
    diagnostics: StepDiagnostics


@dataclass(frozen=True)
class View:
    """What an RGB-D camera hands to one alignment step."""

    grid: DescriptorGrid
    depth: np.ndarray
    pose: CameraPose


class RgbdCamera(Protocol):
    def capture(self) -> View: ...

    def move(self, delta: CameraPose) -> None: ...


@dataclass(frozen=True)
class AlignmentConfig:
    estimator: Literal["magsac", "ransac", "none"] = "magsac"
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    ransac: RansacConfig = field(default_factory=lambda: RansacConfig(inlier_threshold=10.0))
    magsac: MagsacConfig = field(default_factory=MagsacConfig)
    workspace: WorkspaceLimits | None = None
    max_steps: int = 8
    reference_fit: ReferenceSpec | None = None
    terminate_early: bool = True


def _hold(reason: HoldReason, n_pairs: int, n_selected: int, mean_px: float) -> StepOutcome:
    return StepOutcome(
        action="hold",
        delta=None,
        hold_reason=reason,
        diagnostics=StepDiagnostics(
            correspondence_count=n_pairs,
            selected_count=n_selected,
            inlier_count=0,
            mean_pixel_distance=mean_px,
        ),
    )


def _solve(corrs, intr, config: AlignmentConfig) -> RobustResult:
    if config.estimator == "ransac":
        return ransac_pnp(corrs, intr, config.ransac)
    if config.estimator == "magsac":
        return magsac_pnp(corrs, intr, config.magsac)
    if config.estimator == "none":
        initial = solve_epnp(corrs, intr)
        refined = refine_weighted(initial.pose, corrs, np.ones(len(corrs)), intr)
        return RobustResult(
            solution=refined,
            inlier_mask=np.ones(len(corrs), dtype=bool),
            weights=None,
            iterations_run=1,
            hypothesis_count=1,
        )
    raise ValueError(f"unknown estimator {config.estimator!r}")


def _inlier_count(result: RobustResult) -> int:
    if result.inlier_mask is not None:
        return int(np.count_nonzero(result.inlier_mask))
    return int(np.count_nonzero(result.weights > 0))


def alignment_step(
    view: View,
    reference: DescriptorGrid,
    intr: CameraIntrinsics,
    config: AlignmentConfig,
) -> StepOutcome:
    """Match, select, attach depth, solve robust PnP, and gate by workspace.

    The reference grid's pixels are mapped through ``config.reference_fit``
    (when set) so PnP sees reference coordinates in the padded capture frame.
    Failures never raise; they map to a hold outcome with a reason.
    """
    pairs = mutual_nearest_matches(view.grid, reference)
    if not pairs:
        return _hold(TOO_FEW_CORRESPONDENCES, 0, 0, math.inf)

    selected = select_correspondences(pairs, config.selection)
    if config.reference_fit is not None:
        selected = [
            replace(p, pixel_b=config.reference_fit.transform_pixel(p.pixel_b))
            for p in selected
        ]
    mean_px = float(
        np.mean([math.hypot(p.pixel_a.u - p.pixel_b.u, p.pixel_a.v - p.pixel_b.v) for p in selected])
    )

    try:
        corrs = attach_depth(selected, view.depth, intr)
    except InsufficientCorrespondences:
        return _hold(TOO_FEW_CORRESPONDENCES, len(pairs), len(selected), mean_px)

    try:
        result = _solve(corrs, intr, config)
    except (NoSolution, DegenerateConfiguration, TooFewCorrespondences):
        return _hold(PNP_FAILURE, len(pairs), len(selected), mean_px)

    delta = result.solution.pose
    if config.workspace is not None:
        angle_vec = axis_angle_from_rotation(delta.rotation)
        angle = float(np.linalg.norm(angle_vec))
        if angle > config.workspace.max_rotation_step:
            clamped = rotation_from_axis_angle(
                angle_vec / angle * config.workspace.max_rotation_step
            )
            delta = CameraPose(clamped, delta.translation)
        candidate = compose(view.pose, invert(delta))
        if not config.workspace.contains(candidate.translation):
            return _hold(OUTSIDE_WORKSPACE, len(pairs), len(selected), mean_px)

    return StepOutcome(
        action="move",
        delta=delta,
        hold_reason=None,
        diagnostics=StepDiagnostics(
            correspondence_count=len(pairs),
            selected_count=len(selected),
            inlier_count=_inlier_count(result),
            mean_pixel_distance=mean_px,
        ),
    )


# --- full runs -------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    step: int
    mean_px_dist: float
    correspondence_count: int
    inliers: int
    action: str
    reason: str | None
    pose_at_capture: CameraPose


@dataclass(frozen=True)
class AlignmentReport:
    steps: tuple[StepRecord, ...]
    final_pose: CameraPose
    crop: CropRect
    reference_spec: ReferenceSpec

    @property
    def history(self) -> list[float]:
        return [s.mean_px_dist for s in self.steps]

    def write_csv(self, path: str | Path, metadata: dict | None = None) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "mean_px_dist", "inliers", "action", "reason"])
            for s in self.steps:
                writer.writerow(
                    [s.step, f"{s.mean_px_dist:.6f}", s.inliers, s.action, s.reason or ""]
                )
            f.write(f"# config: {json.dumps(metadata or {}, sort_keys=True)}\n")

    def write_records(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for s in self.steps:
                record = {
                    "step": s.step,
                    "mean_px_dist": s.mean_px_dist,
                    "correspondences": s.correspondence_count,
                    "inliers": s.inliers,
                    "action": s.action,
                    "reason": s.reason,
                    "pose": {
                        "rotation": s.pose_at_capture.rotation.tolist(),
                        "translation": s.pose_at_capture.translation.tolist(),
                    },
                }
                f.write(json.dumps(record) + "\n")
            f.write(
                json.dumps(
                    {
                        "crop": [self.crop.x, self.crop.y, self.crop.width, self.crop.height],
                        "final_pose": {
                            "rotation": self.final_pose.rotation.tolist(),
                            "translation": self.final_pose.translation.tolist(),
                        },
                    }
                )
                + "\n"
            )


def run_alignment(
    camera: RgbdCamera,
    reference: DescriptorGrid,
    intr: CameraIntrinsics,
    config: AlignmentConfig,
) -> AlignmentReport:
    """Drive alignment steps until the termination rule fires.

    The camera is invoked strictly sequentially; a hold step leaves it where
    it is.  The report carries the full step history and the crop rectangle
    that removes the reference padding from the final capture.
    """
    spec = config.reference_fit
    if spec is None:
        spec = fit_reference((intr.width, intr.height), (intr.width, intr.height))

    state = AlignmentState()
    records: list[StepRecord] = []
    pose = CameraPose.identity()
    for step in range(config.max_steps):
        view = camera.capture()
        pose = view.pose
        state.camera_pose_world = view.pose
        outcome = alignment_step(view, reference, intr, config)
        state.mean_distance_history.append(outcome.diagnostics.mean_pixel_distance)
        state.step_index = step + 1
        if outcome.action == "move":
            camera.move(outcome.delta)
            pose = compose(view.pose, invert(outcome.delta))
        records.append(
            StepRecord(
                step=step,
                mean_px_dist=outcome.diagnostics.mean_pixel_distance,
                correspondence_count=outcome.diagnostics.correspondence_count,
                inliers=outcome.diagnostics.inlier_count,
                action=outcome.action,
                reason=outcome.hold_reason,
                pose_at_capture=view.pose,
            )
        )
        if config.terminate_early and should_terminate(state, config.max_steps):
            break

    crop = crop_captured((intr.width, intr.height), spec)
    return AlignmentReport(
        steps=tuple(records), final_pose=pose, crop=crop, reference_spec=spec
    )
