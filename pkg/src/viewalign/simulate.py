"""Deterministic synthetic RGB-D world for exercising the alignment pipeline.

A scene is a set of 3D landmarks, each carrying a distinctive unit descriptor
and a saliency value, placed inside the viewing frustum of a canonical goal
camera (the world frame coincides with the goal camera frame, so ground-truth
pose error of any estimate is directly readable off the camera pose).
Rendering projects the landmarks into a descriptor grid plus a depth map from
an arbitrary pose and can inject pixel noise and planted outliers.

Landmark descriptors live in one coordinate subspace and background cells in
an orthogonal one, with the background polarity flipped between current-view
and reference renders.  Background-to-background similarity is therefore
negative while background-to-landmark similarity is exactly zero, so clean
renders can never produce an accidental mutual pair between background cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .alignment import CameraUnavailable, View, WorkspaceLimits
from .correspondence import DescriptorGrid, grid_rows, nearest_cell
from .geometry import CameraIntrinsics, CameraPose, compose, invert, rotation_from_axis_angle

DESCRIPTOR_DIM = 32
_LANDMARK_DIMS = 24  # leading coordinates; the rest belong to the background

DEFAULT_INTRINSICS = CameraIntrinsics(fx=525.0, fy=525.0, cx=320.0, cy=240.0, width=640, height=480)
DEFAULT_PATCH = 16
DEFAULT_STRIDE = 16

_MIN_LANDMARK_ANGLE_DEG = 5.0
_DISTRACTOR_ANGLE_RANGE_DEG = (0.2, 0.9)


@dataclass(frozen=True)
class Landmark:
    position: np.ndarray  # world frame, meters
    descriptor: np.ndarray  # unit vector
    saliency: float
    source: int | None = None  # landmark index a distractor was cloned from


@dataclass(frozen=True)
class SyntheticScene:
    landmarks: tuple[Landmark, ...]
    seed: int
    workspace: WorkspaceLimits


@dataclass(frozen=True)
class CorruptionConfig:
    pixel_noise_sigma: float = 0.0
    outlier_rate: float = 0.0
    distractor_count: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.pixel_noise_sigma < 0:
            raise ValueError("pixel noise sigma must be non-negative")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier rate must lie in [0, 1)")
        if self.distractor_count < 0:
            raise ValueError("distractor count must be non-negative")


@dataclass(frozen=True)
class Placement:
    """Where one landmark ended up in a rendered grid."""

    landmark: int
    cell: tuple[int, int]
    depth: float
    displaced: bool
    true_pixel: tuple[float, float]


@dataclass(frozen=True)
class SimView(View):
    placements: tuple[Placement, ...] = ()


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _rotate_towards(vec: np.ndarray, rng: np.random.Generator, angle_rad: float) -> np.ndarray:
    """Rotate a unit vector by the exact angle toward a random orthogonal direction."""
    u = rng.normal(size=len(vec))
    u -= u @ vec * vec
    u /= np.linalg.norm(u)
    return math.cos(angle_rad) * vec + math.sin(angle_rad) * u


def make_scene(seed: int, n_landmarks: int = 40, distractor_count: int = 0) -> SyntheticScene:
    """Seeded scene with landmarks in a 1-3 m depth band of the goal frustum.

    Landmark descriptors are pairwise more than 5 degrees apart; each
    distractor clones one distinct landmark's descriptor within 2 degrees and
    sits at a displaced position.
    """
    if n_landmarks < 8:
        raise ValueError("need at least 8 landmarks")
    rng = np.random.default_rng(seed)
    min_cos = math.cos(math.radians(_MIN_LANDMARK_ANGLE_DEG))

    descriptors: list[np.ndarray] = []
    while len(descriptors) < n_landmarks:
        cand = np.zeros(DESCRIPTOR_DIM)
        cand[:_LANDMARK_DIMS] = _random_unit(rng, _LANDMARK_DIMS)
        if all(abs(cand @ d) < min_cos for d in descriptors):
            descriptors.append(cand)

    def _sample_position() -> np.ndarray:
        z = rng.uniform(1.2, 2.8)
        x = rng.uniform(-0.28, 0.28) * z
        y = rng.uniform(-0.20, 0.20) * z
        return np.array([x, y, z])

    landmarks = [
        Landmark(
            position=_sample_position(),
            descriptor=d,
            saliency=float(rng.uniform(0.3, 1.0)),
        )
        for d in descriptors
    ]

    sources = rng.choice(n_landmarks, size=distractor_count, replace=False)
    lo, hi = (math.radians(a) for a in _DISTRACTOR_ANGLE_RANGE_DEG)
    for src in sources:
        base = landmarks[int(src)]
        desc = np.zeros(DESCRIPTOR_DIM)
        desc[:_LANDMARK_DIMS] = _rotate_towards(
            base.descriptor[:_LANDMARK_DIMS], rng, rng.uniform(lo, hi)
        )
        while True:
            pos = _sample_position()
            if np.linalg.norm(pos - base.position) >= 0.3:
                break
        landmarks.append(
            Landmark(
                position=pos,
                descriptor=desc,
                saliency=float(rng.uniform(0.3, 1.0)),
                source=int(src),
            )
        )

    workspace = WorkspaceLimits(
        min_corner=np.array([-0.8, -0.8, -0.8]),
        max_corner=np.array([0.8, 0.8, 0.8]),
        max_rotation_step=math.radians(25.0),
    )
    return SyntheticScene(landmarks=tuple(landmarks), seed=seed, workspace=workspace)


def _background(
    scene: SyntheticScene,
    rows: int,
    cols: int,
    as_reference: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Background descriptor field and saliency, orthogonal to all landmarks."""
    rng = np.random.default_rng(scene.seed * 2 + (1 if as_reference else 0) + 52_916_017)
    anchor_rng = np.random.default_rng(scene.seed + 77_003_117)
    anchor = _random_unit(anchor_rng, DESCRIPTOR_DIM - _LANDMARK_DIMS)
    polarity = -1.0 if as_reference else 1.0

    bg = np.zeros((rows, cols, DESCRIPTOR_DIM))
    noise = rng.normal(scale=0.05, size=(rows, cols, DESCRIPTOR_DIM - _LANDMARK_DIMS))
    field = polarity * anchor[None, None, :] + noise
    field /= np.linalg.norm(field, axis=2, keepdims=True)
    bg[:, :, _LANDMARK_DIMS:] = field
    saliency = rng.uniform(0.0, 0.08, size=(rows, cols))
    return bg, saliency


def render(
    scene: SyntheticScene,
    pose: CameraPose,
    intr: CameraIntrinsics = DEFAULT_INTRINSICS,
    corruption: CorruptionConfig | None = None,
    *,
    patch_size: int = DEFAULT_PATCH,
    stride: int = DEFAULT_STRIDE,
    as_reference: bool = False,
    descriptor_noise_deg: float = 0.0,
) -> SimView:
    """Render the scene from a camera pose into a grid view.

    ``pose`` is the camera pose in the world frame (camera-to-world).  Each
    visible landmark claims the grid cell nearest its (optionally noisy)
    projection, nearer landmarks winning collisions; the depth map holds the
    landmark's true camera-frame depth over the claimed patch and zero
    elsewhere.
    """
    rows = grid_rows(intr.height, patch_size, stride)
    cols = grid_rows(intr.width, patch_size, stride)
    descriptors, saliency = _background(scene, rows, cols, as_reference)
    depth = np.zeros((intr.height, intr.width), dtype=np.float32)

    world_to_cam = invert(pose)
    positions = np.stack([lm.position for lm in scene.landmarks])
    cam_pts = world_to_cam.transform(positions)

    rng = np.random.default_rng(corruption.seed if corruption else 0)
    jitter_rng = np.random.default_rng(
        (corruption.seed if corruption else 0) * 3 + scene.seed + 11)

    visible: list[tuple[int, float, float, float, float, float]] = []
    for i, cam in enumerate(cam_pts):
        if cam[2] <= 0:
            continue
        u = intr.fx * cam[0] / cam[2] + intr.cx
        v = intr.fy * cam[1] / cam[2] + intr.cy
        true_u, true_v = u, v
        if corruption and corruption.pixel_noise_sigma > 0:
            u += rng.normal(scale=corruption.pixel_noise_sigma)
            v += rng.normal(scale=corruption.pixel_noise_sigma)
        if not (0 <= u < intr.width and 0 <= v < intr.height):
            continue
        visible.append((i, u, v, cam[2], true_u, true_v))

    n_outliers = 0
    if corruption and corruption.outlier_rate > 0:
        n_outliers = int(round(corruption.outlier_rate * len(visible)))
    outlier_set = set()
    if n_outliers:
        chosen = rng.choice(len(visible), size=n_outliers, replace=False)
        outlier_set = {int(c) for c in chosen}

    # Nearer landmarks win cell collisions.
    claims: dict[tuple[int, int], tuple[float, int, bool, tuple[float, float]]] = {}
    for slot, (i, u, v, z, tu, tv) in enumerate(visible):
        displaced = slot in outlier_set
        if displaced:
            cell = (int(rng.integers(rows)), int(rng.integers(cols)))
        else:
            cell = nearest_cell(u, v, patch_size, stride, rows, cols)
        if cell not in claims or z < claims[cell][0]:
            claims[cell] = (z, i, displaced, (tu, tv))

    placements = []
    for (r, c), (z, i, displaced, true_px) in sorted(claims.items()):
        desc = scene.landmarks[i].descriptor
        if descriptor_noise_deg > 0:
            lm_part = _rotate_towards(
                desc[:_LANDMARK_DIMS],
                jitter_rng,
                math.radians(descriptor_noise_deg) * jitter_rng.uniform(),
            )
            desc = np.zeros(DESCRIPTOR_DIM)
            desc[:_LANDMARK_DIMS] = lm_part
        descriptors[r, c] = desc
        saliency[r, c] = scene.landmarks[i].saliency
        v0, u0 = r * stride, c * stride
        depth[v0 : v0 + patch_size, u0 : u0 + patch_size] = z
        placements.append(
            Placement(landmark=i, cell=(r, c), depth=float(z), displaced=displaced, true_pixel=true_px)
        )

    grid = DescriptorGrid(
        rows=rows,
        cols=cols,
        dim=DESCRIPTOR_DIM,
        descriptors=descriptors,
        saliency=np.clip(saliency, 0.0, 1.0),
        patch_size=patch_size,
        stride=stride,
        image_width=intr.width,
        image_height=intr.height,
    )
    return SimView(grid=grid, depth=depth, pose=pose, placements=tuple(placements))


def make_reference(
    scene: SyntheticScene,
    intr: CameraIntrinsics = DEFAULT_INTRINSICS,
    *,
    patch_size: int = DEFAULT_PATCH,
    stride: int = DEFAULT_STRIDE,
) -> SimView:
    """Clean render from the goal pose (identity), marked as the reference."""
    return render(
        scene,
        CameraPose.identity(),
        intr,
        None,
        patch_size=patch_size,
        stride=stride,
        as_reference=True,
    )


def perturbed_start(
    scene: SyntheticScene,
    seed: int,
    max_translation: float = 0.25,
    max_rotation_deg: float = 8.0,
) -> CameraPose:
    """Seeded start pose offset from the goal by a bounded rigid motion."""
    rng = np.random.default_rng(seed + scene.seed * 919)
    axis = _random_unit(rng, 3)
    angle = math.radians(rng.uniform(0.4, 1.0) * max_rotation_deg)
    direction = _random_unit(rng, 3)
    translation = direction * rng.uniform(0.4, 1.0) * max_translation
    return CameraPose(rotation_from_axis_angle(axis * angle), translation)


class SimCamera:
    """Simulated RGB-D camera driving :func:`viewalign.alignment.run_alignment`.

    Corruption (when set) is re-seeded per captured frame so every step sees
    fresh noise while the whole trajectory stays a deterministic function of
    the base seed.
    """

    def __init__(
        self,
        scene: SyntheticScene,
        intr: CameraIntrinsics = DEFAULT_INTRINSICS,
        start_pose: CameraPose | None = None,
        corruption: CorruptionConfig | None = None,
        *,
        patch_size: int = DEFAULT_PATCH,
        stride: int = DEFAULT_STRIDE,
        descriptor_noise_deg: float = 0.0,
    ):
        self.scene = scene
        self.intr = intr
        self.pose = start_pose if start_pose is not None else CameraPose.identity()
        self.corruption = corruption
        self.patch_size = patch_size
        self.stride = stride
        self.descriptor_noise_deg = descriptor_noise_deg
        self._frame = 0

    def capture(self) -> SimView:
        corruption = None
        if self.corruption is not None:
            corruption = replace(
                self.corruption, seed=self.corruption.seed + 1_000_003 * self._frame
            )
        self._frame += 1
        return render(
            self.scene,
            self.pose,
            self.intr,
            corruption,
            patch_size=self.patch_size,
            stride=self.stride,
            descriptor_noise_deg=self.descriptor_noise_deg,
        )

    def move(self, delta: CameraPose) -> None:
        candidate = compose(self.pose, invert(delta))
        if not self.scene.workspace.contains(candidate.translation):
            raise CameraUnavailable("requested move leaves the workspace")
        self.pose = candidate
