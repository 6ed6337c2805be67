"""Dense descriptor grids and semantic correspondence selection.

A :class:`DescriptorGrid` is a per-patch field of unit-normalized descriptor
vectors plus a saliency channel, extracted from an image on a regular grid of
``patch_size`` x ``patch_size`` windows spaced ``stride`` pixels apart.
Matching finds mutual nearest neighbours (best-buddies pairs) under cosine
similarity; selection thins them to at most k well-spread, salient pairs via
k-means on the concatenated descriptors; depth attachment back-projects the
current-view pixel of each surviving pair into a 3D correspondence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    CameraIntrinsics,
    Correspondence,
    InvalidDepth,
    PixelPoint,
    back_project,
)


class DimensionMismatch(Exception):
    """Descriptor dimensions of the two grids differ."""


class EmptyInput(Exception):
    """An operation that needs at least one match pair received none."""


class InsufficientCorrespondences(Exception):
    """Fewer than the PnP minimum of 4 correspondences survived."""


def grid_rows(image_extent: int, patch_size: int, stride: int) -> int:
    """Number of patches along one image dimension."""
    return 1 + (image_extent - patch_size) // stride


@dataclass(frozen=True)
class DescriptorGrid:
    """Dense per-patch descriptors with saliency.

    ``descriptors`` has shape (rows, cols, dim) with unit-normalized vectors;
    ``saliency`` has shape (rows, cols) with values in [0, 1].
    """

    rows: int
    cols: int
    dim: int
    descriptors: np.ndarray
    saliency: np.ndarray
    patch_size: int
    stride: int
    image_width: int
    image_height: int

    def __post_init__(self):
        d = np.asarray(self.descriptors)
        s = np.asarray(self.saliency)
        if d.shape != (self.rows, self.cols, self.dim):
            raise ValueError(f"descriptor shape {d.shape} does not match header")
        if s.shape != (self.rows, self.cols):
            raise ValueError(f"saliency shape {s.shape} does not match header")
        if self.rows != grid_rows(self.image_height, self.patch_size, self.stride):
            raise ValueError("rows inconsistent with image height / patch / stride")
        if self.cols != grid_rows(self.image_width, self.patch_size, self.stride):
            raise ValueError("cols inconsistent with image width / patch / stride")
        norms = np.linalg.norm(d.astype(np.float64), axis=2)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("descriptors must be unit-normalized within 1e-6")
        if s.min() < 0.0 or s.max() > 1.0:
            raise ValueError("saliency must lie in [0, 1]")

    def patch_center(self, row: int, col: int) -> PixelPoint:
        """Pixel at the center of the patch anchored at (row, col)."""
        return PixelPoint(
            col * self.stride + self.patch_size / 2.0,
            row * self.stride + self.patch_size / 2.0,
        )

    def flat_descriptors(self) -> np.ndarray:
        return np.asarray(self.descriptors, dtype=np.float64).reshape(-1, self.dim)


def nearest_cell(
    u: float, v: float, patch_size: int, stride: int, rows: int, cols: int
) -> tuple[int, int]:
    """Grid cell whose patch center is nearest to pixel (u, v), clamped in range."""
    col = int(round((u - patch_size / 2.0) / stride))
    row = int(round((v - patch_size / 2.0) / stride))
    return min(max(row, 0), rows - 1), min(max(col, 0), cols - 1)


@dataclass(frozen=True)
class MatchPair:
    """A mutual-nearest-neighbour pair between two grids (a=current, b=reference).

    The two descriptor vectors ride along so that downstream clustering and
    correspondence construction need not re-index the grids.
    """

    cell_a: tuple[int, int]
    cell_b: tuple[int, int]
    pixel_a: PixelPoint
    pixel_b: PixelPoint
    similarity: float
    joint_saliency: float
    descriptor_a: np.ndarray
    descriptor_b: np.ndarray


@dataclass(frozen=True)
class SelectionConfig:
    k: int = 30
    kmeans_max_iters: int = 100
    kmeans_seed: int = 0

    def __post_init__(self):
        if self.k < 4:
            raise ValueError(f"k must be at least 4 (PnP minimum), got {self.k}")


def mutual_nearest_matches(a: DescriptorGrid, b: DescriptorGrid) -> list[MatchPair]:
    """Best-buddies pairs under cosine similarity.

    A pair (i, j) is emitted iff j is i's most-similar cell in ``b`` and i is
    j's most-similar cell in ``a``.  Output is sorted by row-major cell index
    in ``a``.  Argmax ties resolve to the lowest row-major index, which keeps
    the relation symmetric under swapping the grids.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"descriptor dims differ: {a.dim} vs {b.dim}")
    da = a.flat_descriptors()
    db = b.flat_descriptors()
    sim = da @ db.T
    nn_ab = np.argmax(sim, axis=1)
    nn_ba = np.argmax(sim, axis=0)
    idx_a = np.arange(len(da))
    mutual = nn_ba[nn_ab] == idx_a

    sal_a = np.asarray(a.saliency, dtype=float).ravel()
    sal_b = np.asarray(b.saliency, dtype=float).ravel()
    pairs = []
    for i in idx_a[mutual]:
        j = int(nn_ab[i])
        ra, ca = divmod(int(i), a.cols)
        rb, cb = divmod(j, b.cols)
        pairs.append(
            MatchPair(
                cell_a=(ra, ca),
                cell_b=(rb, cb),
                pixel_a=a.patch_center(ra, ca),
                pixel_b=b.patch_center(rb, cb),
                similarity=float(sim[i, j]),
                joint_saliency=float((sal_a[i] + sal_b[j]) / 2.0),
                descriptor_a=da[i],
                descriptor_b=db[j],
            )
        )
    return pairs


def _kmeans_labels(points: np.ndarray, k: int, seed: int, max_iters: int) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters keep their previous center and simply end up unused; the
    caller sees fewer than k occupied clusters rather than a re-seed.
    """
    n = len(points)
    rng = np.random.default_rng(seed)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = points[rng.integers(n)]
            continue
        centers[c] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))

    labels = np.full(n, -1)
    for _ in range(max_iters):
        dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dists, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels


def select_correspondences(pairs: list[MatchPair], cfg: SelectionConfig) -> list[MatchPair]:
    """Thin matches to at most k pairs, one per descriptor cluster.

    Clusters are k-means over the concatenated descriptor of each pair; the
    most salient member represents each occupied cluster, ties going to the
    lower row-major current-view cell.  Returns fewer than k pairs when some
    clusters come out empty.
    """
    if not pairs:
        raise EmptyInput("no match pairs to select from")
    if len(pairs) <= cfg.k:
        return list(pairs)

    feats = np.stack([np.concatenate([p.descriptor_a, p.descriptor_b]) for p in pairs])
    labels = _kmeans_labels(feats, cfg.k, cfg.kmeans_seed, cfg.kmeans_max_iters)

    def _row_major(p: MatchPair, ncols: int) -> int:
        return p.cell_a[0] * ncols + p.cell_a[1]

    ncols = max(p.cell_a[1] for p in pairs) + 1
    selected = []
    for c in range(cfg.k):
        members = [p for p, lab in zip(pairs, labels) if lab == c]
        if not members:
            continue
        members.sort(key=lambda p: (-p.joint_saliency, _row_major(p, ncols)))
        selected.append(members[0])
    selected.sort(key=lambda p: _row_major(p, ncols))
    return selected


def attach_depth(
    pairs: list[MatchPair], depth_map: np.ndarray, intr: CameraIntrinsics
) -> list[Correspondence]:
    """Back-project each pair's current-view patch center at the sampled depth.

    Depth is a nearest-pixel lookup; pairs over missing depth (zero or
    non-finite) are dropped.  Raises when fewer than 4 correspondences remain.
    """
    depth_map = np.asarray(depth_map)
    if depth_map.shape != (intr.height, intr.width):
        raise ValueError(
            f"depth map shape {depth_map.shape} does not match image "
            f"({intr.height}, {intr.width})"
        )
    out = []
    for p in pairs:
        vi = min(max(int(round(p.pixel_a.v)), 0), intr.height - 1)
        ui = min(max(int(round(p.pixel_a.u)), 0), intr.width - 1)
        d = float(depth_map[vi, ui])
        try:
            point = back_project(intr, p.pixel_a, d)
        except InvalidDepth:
            continue
        out.append(
            Correspondence(
                reference_pixel=p.pixel_b,
                scene_point=point,
                descriptor_pair=(p.descriptor_a, p.descriptor_b),
                saliency=p.joint_saliency,
            )
        )
    if len(out) < 4:
        raise InsufficientCorrespondences(
            f"only {len(out)} correspondences have valid depth (need 4)"
        )
    return out


# --- binary file formats -----------------------------------------------------
#
# DescriptorGrid file ("DGRD") layout, little-endian:
#   magic   4 bytes  b"DGRD"
#   version u32      currently 1
#   rows, cols, dim, patch_size, stride, image_w, image_h   7 x u32
#   rows*cols*dim float32 descriptors, row-major
#   rows*cols float32 saliency, row-major
#
# Depth file ("DPTH") reuses the same header with rows=image_h, cols=image_w,
# dim=1, patch_size=1, stride=1, followed by image_h*image_w float32 meters.

_HEADER = struct.Struct("<4s8I")
GRID_MAGIC = b"DGRD"
DEPTH_MAGIC = b"DPTH"
FORMAT_VERSION = 1


def save_grid(grid: DescriptorGrid, path: str | Path) -> None:
    header = _HEADER.pack(
        GRID_MAGIC,
        FORMAT_VERSION,
        grid.rows,
        grid.cols,
        grid.dim,
        grid.patch_size,
        grid.stride,
        grid.image_width,
        grid.image_height,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid.descriptors, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(grid.saliency, dtype="<f4").tobytes())


def load_grid(path: str | Path) -> DescriptorGrid:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, rows, cols, dim, patch, stride, w, h = _HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {GRID_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    n_desc = rows * cols * dim
    n_sal = rows * cols
    expected = _HEADER.size + 4 * (n_desc + n_sal)
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    desc = np.frombuffer(raw, dtype="<f4", count=n_desc, offset=_HEADER.size)
    sal = np.frombuffer(raw, dtype="<f4", count=n_sal, offset=_HEADER.size + 4 * n_desc)
    return DescriptorGrid(
        rows=rows,
        cols=cols,
        dim=dim,
        descriptors=desc.reshape(rows, cols, dim).copy(),
        saliency=sal.reshape(rows, cols).copy(),
        patch_size=patch,
        stride=stride,
        image_width=w,
        image_height=h,
    )


def save_depth(depth: np.ndarray, path: str | Path) -> None:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError("depth map must be 2D")
    h, w = depth.shape
    header = _HEADER.pack(DEPTH_MAGIC, FORMAT_VERSION, h, w, 1, 1, 1, w, h)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def load_depth(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, rows, cols, dim, patch, stride, w, h = _HEADER.unpack_from(raw)
    if magic != DEPTH_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {DEPTH_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if (rows, cols, dim) != (h, w, 1):
        raise ValueError(f"{path}: inconsistent depth header")
    expected = _HEADER.size + 4 * h * w
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(h, w).copy()
