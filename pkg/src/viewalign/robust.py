"""Outlier-tolerant PnP: fixed-threshold RANSAC and MAGSAC++.

RANSAC draws minimal samples of four correspondences, scores hypotheses by
the count of points whose reprojection error stays below a fixed threshold,
and refines the best hypothesis on its inliers.  MAGSAC++ replaces the hard
threshold with a per-point weight: the likelihood of the point being an
inlier, marginalized over threshold levels up to a maximum, followed by
iterated re-weighted least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Correspondence,
    axis_angle_from_rotation,
    reprojection_errors,
)
from .pnp import (
    DegenerateConfiguration,
    InsufficientSupport,
    PnPSolution,
    TooFewCorrespondences,
    _epnp_arrays,
    _finite_mean,
    correspondence_arrays,
    refine_weighted,
)


class NoSolution(Exception):
    """No hypothesis gathered enough support."""


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float
    confidence: float = 0.99
    max_iters: int = 10_000
    sample_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.sample_size < 4:
            raise ValueError("sample size must be at least 4 for EPnP")


@dataclass(frozen=True)
class MagsacConfig:
    max_threshold: float = 50.0
    partitions: int = 10
    iters_irls: int = 10
    seed: int = 0
    confidence: float = 0.99
    max_iters: int = 10_000

    def __post_init__(self):
        if self.max_threshold <= 0:
            raise ValueError("max threshold must be positive")
        if self.partitions < 2:
            raise ValueError("at least 2 threshold partitions required")


@dataclass(frozen=True)
class RobustResult:
    solution: PnPSolution
    inlier_mask: np.ndarray | None
    weights: np.ndarray | None
    iterations_run: int
    hypothesis_count: int


_MIN_ADAPTIVE_ITERS = 50


def _adaptive_iteration_cap(
    inlier_ratio: float, confidence: float, sample_size: int, max_iters: int
) -> int:
    """Standard stopping rule: iterations needed to hit one clean sample."""
    if inlier_ratio <= 0.0:
        return max_iters
    p_good = inlier_ratio**sample_size
    if p_good >= 1.0:
        return _MIN_ADAPTIVE_ITERS
    needed = math.log(1.0 - confidence) / math.log(1.0 - p_good)
    return int(min(max(needed, _MIN_ADAPTIVE_ITERS), max_iters))


def _hypothesis_loop(pts, px, intr, rng, sample_size, confidence, max_iters, score_fn):
    """Shared seeded sampling loop.

    ``score_fn(errors) -> (score, support)`` evaluates a hypothesis on all
    correspondences.  Degenerate minimal samples are skipped without consuming
    an iteration, bounded by a hard cap of 10x max_iters draws.  The best
    hypothesis is the highest score; ties keep the earliest draw.
    """
    n = len(pts)
    best = None  # (score, support, pose)
    iterations = 0
    draws = 0
    cap = max_iters
    while iterations < cap and draws < 10 * max_iters:
        draws += 1
        idx = rng.choice(n, size=sample_size, replace=False)
        try:
            sol = _epnp_arrays(pts[idx], px[idx], intr)
        except (DegenerateConfiguration, TooFewCorrespondences):
            continue
        iterations += 1
        errs = reprojection_errors(intr, sol.pose, px, pts)
        score, support = score_fn(errs)
        if best is None or score > best[0]:
            best = (score, support, sol.pose)
            # The cap tracks the best support ratio seen so far; it only
            # shrinks as better hypotheses raise the ratio.
            cap = _adaptive_iteration_cap(support / n, confidence, sample_size, max_iters)
    return best, iterations, draws


def ransac_pnp(
    corrs: list[Correspondence], intr: CameraIntrinsics, cfg: RansacConfig
) -> RobustResult:
    """Fixed-threshold RANSAC over EPnP hypotheses, refined on the inlier set."""
    if len(corrs) < cfg.sample_size:
        raise TooFewCorrespondences(
            f"need at least {cfg.sample_size} correspondences, got {len(corrs)}"
        )
    pts, px = correspondence_arrays(corrs)
    rng = np.random.default_rng(cfg.seed)
    tau = cfg.inlier_threshold

    def score(errs):
        count = int(np.count_nonzero(errs <= tau))
        return count, count

    best, iterations, draws = _hypothesis_loop(
        pts, px, intr, rng, cfg.sample_size, cfg.confidence, cfg.max_iters, score
    )
    if best is None or best[0] < 4:
        raise NoSolution("no hypothesis reached 4 inliers")

    # Refine on the inlier set, re-classify, and repeat until the set is
    # stable: a minimal-sample hypothesis often captures only part of the
    # true support, and each refinement round widens the mask.
    _, _, pose = best
    errs = reprojection_errors(intr, pose, px, pts)
    mask = errs <= tau
    refined = PnPSolution(pose=pose, per_point_error=errs, mean_error=_finite_mean(errs))
    final_mask = mask.copy()
    current_pose, current_mask = pose, mask
    for _ in range(10):
        if int(current_mask.sum()) < 4:
            break
        sol = refine_weighted(current_pose, corrs, current_mask.astype(float), intr)
        new_mask = sol.per_point_error <= tau
        # keep the best-supported iterate; the returned pose never supports
        # fewer points than the winning hypothesis did
        if int(new_mask.sum()) >= int(final_mask.sum()):
            refined, final_mask = sol, new_mask
        if np.array_equal(new_mask, current_mask):
            break
        current_pose, current_mask = sol.pose, new_mask
    return RobustResult(
        solution=refined,
        inlier_mask=final_mask,
        weights=None,
        iterations_run=draws,
        hypothesis_count=iterations,
    )


def marginalized_weights(residuals: np.ndarray, cfg: MagsacConfig) -> np.ndarray:
    """Inlier likelihood marginalized over threshold levels.

    At a threshold level tau the residual of an inlier follows a 2-DoF chi
    (Rayleigh) model with scale tau, so its likelihood relative to a zero
    residual is exp(-r^2 / (2 tau^2)).  The weight averages that likelihood
    over ``partitions`` uniform levels spanning (0, max_threshold], taking
    each level's contribution as its exact band integral; the telescoped sum
    makes the average independent of the partition count up to rounding.
    Weights are 1 at zero residual and clamp to 0 at or beyond the maximum
    threshold.
    """
    r = np.asarray(residuals, dtype=float)
    w = np.zeros(r.shape)
    ok = np.isfinite(r) & (r < cfg.max_threshold)
    if not np.any(ok):
        return w
    rr = r[ok][:, None]
    edges = np.linspace(0.0, cfg.max_threshold, cfg.partitions + 1)[None, :]

    # Antiderivative of exp(-r^2 / (2 tau^2)) in tau, zero at tau -> 0+.
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = rr / (math.sqrt(2.0) * edges)
        anti = edges * np.exp(-(scaled**2)) - rr * math.sqrt(math.pi / 2.0) * erfc(scaled)
    anti[:, 0] = 0.0
    band_sums = np.diff(anti, axis=1)
    w[ok] = band_sums.sum(axis=1) / cfg.max_threshold
    return np.clip(w, 0.0, 1.0)


def magsac_weights(
    pose: CameraPose,
    corrs: list[Correspondence],
    intr: CameraIntrinsics,
    cfg: MagsacConfig,
) -> np.ndarray:
    """Per-correspondence marginalized inlier weights under the given pose."""
    pts, px = correspondence_arrays(corrs)
    return marginalized_weights(reprojection_errors(intr, pose, px, pts), cfg)


def _pose_change(a: CameraPose, b: CameraPose) -> float:
    angle = np.linalg.norm(axis_angle_from_rotation(a.rotation.T @ b.rotation))
    return float(angle + np.linalg.norm(a.translation - b.translation))


def magsac_pnp(
    corrs: list[Correspondence], intr: CameraIntrinsics, cfg: MagsacConfig
) -> RobustResult:
    """MAGSAC++: hypotheses scored by total marginalized weight, then IRLS."""
    if len(corrs) < 4:
        raise TooFewCorrespondences(f"need at least 4 correspondences, got {len(corrs)}")
    pts, px = correspondence_arrays(corrs)
    rng = np.random.default_rng(cfg.seed)

    def score(errs):
        w = marginalized_weights(errs, cfg)
        return float(w.sum()), int(np.count_nonzero(w > 0))

    best, iterations, draws = _hypothesis_loop(
        pts, px, intr, rng, 4, cfg.confidence, cfg.max_iters, score
    )
    if best is None or best[0] < 4.0:
        raise NoSolution("every hypothesis has total weight below 4")

    pose = best[2]
    for _ in range(cfg.iters_irls):
        w = marginalized_weights(reprojection_errors(intr, pose, px, pts), cfg)
        if np.count_nonzero(w > 0) < 4:
            break
        try:
            sol = refine_weighted(pose, corrs, w, intr)
        except InsufficientSupport:
            break
        change = _pose_change(pose, sol.pose)
        pose = sol.pose
        if change < 1e-8:
            break

    errs = reprojection_errors(intr, pose, px, pts)
    final_weights = marginalized_weights(errs, cfg)
    solution = PnPSolution(pose=pose, per_point_error=errs, mean_error=_finite_mean(errs))
    return RobustResult(
        solution=solution,
        inlier_mask=None,
        weights=final_weights,
        iterations_run=draws,
        hypothesis_count=iterations,
    )
