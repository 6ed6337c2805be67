"""Perspective-n-point solvers.

``solve_epnp`` is a closed-form control-point solver: the scene points are
expressed as barycentric combinations of four control points (three for
near-planar point sets), the control points' camera-frame coordinates are
recovered from the null space of the projection constraint matrix, candidate
null-space mixing coefficients are estimated from inter-control-point
distances and polished by Gauss-Newton, and the candidate with the lowest
summed squared reprojection error wins.

``refine_weighted`` is a damped least-squares minimizer of the weighted sum
of squared reprojection errors over a 6-parameter pose perturbation
(axis-angle increment left-composed onto the rotation, additive translation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Correspondence,
    orthonormalize_rotation,
    project_points,
    reprojection_errors,
    rotation_from_axis_angle,
)


class TooFewCorrespondences(Exception):
    """EPnP needs at least four correspondences."""


class DegenerateConfiguration(Exception):
    """Scene points are collinear or otherwise rank-deficient."""


class InsufficientSupport(Exception):
    """Weighted refinement needs at least four strictly positive weights."""


@dataclass(frozen=True)
class PnPSolution:
    pose: CameraPose
    per_point_error: np.ndarray
    mean_error: float


def _finite_mean(errors: np.ndarray) -> float:
    finite = errors[np.isfinite(errors)]
    return float(finite.mean()) if len(finite) else math.inf


def solution_for_pose(
    pose: CameraPose, corrs: list[Correspondence], intr: CameraIntrinsics
) -> PnPSolution:
    """Package a pose with its per-correspondence reprojection errors."""
    pts, px = correspondence_arrays(corrs)
    errs = reprojection_errors(intr, pose, px, pts)
    return PnPSolution(pose=pose, per_point_error=errs, mean_error=_finite_mean(errs))


def correspondence_arrays(corrs: list[Correspondence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack correspondences into (n, 3) scene points and (n, 2) reference pixels."""
    pts = np.array([c.scene_point for c in corrs], dtype=float).reshape(-1, 3)
    px = np.array([c.reference_pixel for c in corrs], dtype=float).reshape(-1, 2)
    return pts, px


_COLLINEAR_RATIO = 1e-8
_PLANAR_RATIO = 1e-3


def solve_epnp(corrs: list[Correspondence], intr: CameraIntrinsics) -> PnPSolution:
    if len(corrs) < 4:
        raise TooFewCorrespondences(f"need at least 4 correspondences, got {len(corrs)}")
    pts, px = correspondence_arrays(corrs)
    return _epnp_arrays(pts, px, intr)


def _epnp_arrays(pts, px, intr) -> PnPSolution:
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    if sv[0] <= 0 or sv[1] <= _COLLINEAR_RATIO * sv[0]:
        raise DegenerateConfiguration("scene points are (near-)collinear")
    planar = sv[2] <= _PLANAR_RATIO * sv[0]

    n = len(pts)
    n_ctrl = 3 if planar else 4
    ctrl_world = np.empty((n_ctrl, 3))
    ctrl_world[0] = centroid
    for i in range(n_ctrl - 1):
        ctrl_world[i + 1] = centroid + (sv[i] / math.sqrt(n)) * vt[i]

    # Barycentric coordinates: exact solve for 4 control points, least squares
    # (exact on in-plane points) for the planar 3-point basis.
    a_mat = np.vstack([ctrl_world.T, np.ones(n_ctrl)])
    rhs = np.vstack([pts.T, np.ones(n)])
    if n_ctrl == 4:
        alphas = np.linalg.solve(a_mat, rhs).T
    else:
        alphas = np.linalg.lstsq(a_mat, rhs, rcond=None)[0].T

    m = np.zeros((2 * n, 3 * n_ctrl))
    u, v = px[:, 0], px[:, 1]
    for j in range(n_ctrl):
        m[0::2, 3 * j] = alphas[:, j] * intr.fx
        m[0::2, 3 * j + 2] = alphas[:, j] * (intr.cx - u)
        m[1::2, 3 * j + 1] = alphas[:, j] * intr.fy
        m[1::2, 3 * j + 2] = alphas[:, j] * (intr.cy - v)

    _, kernel = np.linalg.eigh(m.T @ m)
    basis = [kernel[:, k].reshape(n_ctrl, 3) for k in range(4 if n_ctrl == 4 else 3)]

    pair_idx = list(combinations(range(n_ctrl), 2))
    dist_sq = np.array(
        [np.sum((ctrl_world[i] - ctrl_world[j]) ** 2) for i, j in pair_idx]
    )

    max_order = 3 if n_ctrl == 4 else 2
    best: tuple[float, CameraPose, np.ndarray] | None = None
    for order in range(1, max_order + 1):
        betas = _estimate_betas(basis[:order], pair_idx, dist_sq)
        if betas is None:
            continue
        betas = _gauss_newton_betas(betas, basis[:order], pair_idx, dist_sq)
        ctrl_cam = sum(b * vec for b, vec in zip(betas, basis[:order]))
        for sign in (1.0, -1.0):
            cam_pts = alphas @ (sign * ctrl_cam)
            if cam_pts[:, 2].mean() <= 0:
                continue
            try:
                pose = _procrustes(pts, cam_pts)
            except np.linalg.LinAlgError:
                continue
            errs = reprojection_errors(intr, pose, px, pts)
            score = float(np.sum(np.minimum(errs, 1e9) ** 2))
            if best is None or score < best[0]:
                best = (score, pose, errs)

    if best is None:
        raise DegenerateConfiguration("no EPnP candidate produced a valid pose")
    _, pose, errs = best
    return PnPSolution(pose=pose, per_point_error=errs, mean_error=_finite_mean(errs))


def _solve_small_ls(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Least squares for the tiny beta systems via normal equations."""
    a = lhs.T @ lhs
    b = lhs.T @ rhs
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


def _estimate_betas(basis, pair_idx, dist_sq) -> np.ndarray | None:
    """Initial mixing coefficients from the inter-control-point distances."""
    order = len(basis)
    diffs = [np.stack([vec[i] - vec[j] for i, j in pair_idx]) for vec in basis]
    if order == 1:
        dv = diffs[0]
        denom = np.sum(np.sum(dv**2, axis=1))
        if denom <= 0:
            return None
        beta = np.sum(np.linalg.norm(dv, axis=1) * np.sqrt(dist_sq)) / denom
        return np.array([beta])
    if order == 2:
        dv0, dv1 = diffs
        lhs = np.column_stack(
            [
                np.sum(dv0**2, axis=1),
                2 * np.sum(dv0 * dv1, axis=1),
                np.sum(dv1**2, axis=1),
            ]
        )
        b11, b12, b22 = _solve_small_ls(lhs, dist_sq)
        beta1 = math.sqrt(abs(b11))
        beta2 = math.sqrt(abs(b22))
        if b12 < 0:
            beta2 = -beta2
        return np.array([beta1, beta2])
    dv0, dv1, dv2 = diffs
    lhs = np.column_stack(
        [
            np.sum(dv0**2, axis=1),
            2 * np.sum(dv0 * dv1, axis=1),
            2 * np.sum(dv0 * dv2, axis=1),
            np.sum(dv1**2, axis=1),
            2 * np.sum(dv1 * dv2, axis=1),
            np.sum(dv2**2, axis=1),
        ]
    )
    b11, b12, b13, b22, _, b33 = _solve_small_ls(lhs, dist_sq)
    beta1 = math.sqrt(abs(b11))
    beta2 = math.copysign(math.sqrt(abs(b22)), b12)
    beta3 = math.copysign(math.sqrt(abs(b33)), b13)
    return np.array([beta1, beta2, beta3])


def _gauss_newton_betas(betas, basis, pair_idx, dist_sq, iters: int = 10) -> np.ndarray:
    """Polish betas so camera-frame control-point distances match the world ones."""
    diffs = np.stack([[vec[i] - vec[j] for i, j in pair_idx] for vec in basis])
    betas = betas.astype(float).copy()
    for _ in range(iters):
        combo = np.tensordot(betas, diffs, axes=1)  # (n_pairs, 3)
        resid = np.sum(combo**2, axis=1) - dist_sq
        jac = 2.0 * np.einsum("pk,opk->po", combo, diffs)
        try:
            step = _solve_small_ls(jac, -resid)
        except np.linalg.LinAlgError:
            break
        betas += step
        if np.linalg.norm(step) < 1e-12:
            break
    return betas


def _procrustes(world_pts: np.ndarray, cam_pts: np.ndarray) -> CameraPose:
    """Rigid transform (det +1) mapping world points onto camera points."""
    wc = world_pts.mean(axis=0)
    cc = cam_pts.mean(axis=0)
    h = (world_pts - wc).T @ (cam_pts - cc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    r = orthonormalize_rotation(r)
    return CameraPose(r, cc - r @ wc)


# --- weighted iterative refinement -------------------------------------------


def reprojection_jacobian(
    intr: CameraIntrinsics, pose: CameraPose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projections and their Jacobian w.r.t. the 6 pose perturbation parameters.

    The perturbation x = (omega, dt) acts as R <- exp([omega]x) R, t <- t + dt.
    Returns ``(uv, jac, valid)`` where ``jac`` has shape (n, 2, 6) with columns
    ordered (omega_x, omega_y, omega_z, dt_x, dt_y, dt_z); rows with the point
    behind the camera are flagged invalid and hold zeros.
    """
    pts = np.asarray(points, dtype=float)
    rotated = pts @ pose.rotation.T  # R @ X per point
    cam = rotated + pose.translation
    z = cam[:, 2]
    valid = z > 0

    n = len(pts)
    uv = np.full((n, 2), np.nan)
    jac = np.zeros((n, 2, 6))
    zc = np.where(valid, z, 1.0)
    uv[valid, 0] = intr.fx * cam[valid, 0] / z[valid] + intr.cx
    uv[valid, 1] = intr.fy * cam[valid, 1] / z[valid] + intr.cy

    # d(projection)/d(camera point)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = intr.fx / zc
    dproj[:, 0, 2] = -intr.fx * cam[:, 0] / zc**2
    dproj[:, 1, 1] = intr.fy / zc
    dproj[:, 1, 2] = -intr.fy * cam[:, 1] / zc**2

    # d(camera point)/d(omega) = -[R @ X]x ; d(camera point)/d(dt) = I
    dcam = np.zeros((n, 3, 6))
    rx, ry, rz = rotated[:, 0], rotated[:, 1], rotated[:, 2]
    dcam[:, 0, 1] = rz
    dcam[:, 0, 2] = -ry
    dcam[:, 1, 0] = -rz
    dcam[:, 1, 2] = rx
    dcam[:, 2, 0] = ry
    dcam[:, 2, 1] = -rx
    dcam[:, :, 3:] = np.eye(3)

    jac = np.einsum("nij,njk->nik", dproj, dcam)
    jac[~valid] = 0.0
    return uv, jac, valid


def _weighted_cost(
    intr: CameraIntrinsics, pose: CameraPose, pts, px, weights
) -> tuple[float, np.ndarray]:
    """Weighted squared-error cost; behind-camera points get weight zero."""
    uv, z = project_points(intr, pose, pts)
    eff = np.where(z > 0, weights, 0.0)
    diff = np.where(np.isfinite(uv), px - uv, 0.0)
    return float(np.sum(eff * np.sum(diff**2, axis=1))), eff


def refine_weighted(
    init: CameraPose,
    corrs: list[Correspondence],
    weights: np.ndarray,
    intr: CameraIntrinsics,
    max_iters: int = 50,
    step_tol: float = 1e-10,
) -> PnPSolution:
    """Levenberg-Marquardt minimization of the weighted squared reprojection error.

    Only cost-decreasing steps are accepted, so the returned pose never has a
    higher weighted cost than ``init``.
    """
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(corrs):
        raise ValueError("one weight per correspondence required")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    if np.count_nonzero(weights > 0) < 4:
        raise InsufficientSupport("need at least 4 strictly positive weights")
    pts, px = correspondence_arrays(corrs)

    pose = init
    cost, _ = _weighted_cost(intr, pose, pts, px, weights)
    lam = 1e-3
    for _ in range(max_iters):
        uv, jac, valid = reprojection_jacobian(intr, pose, pts)
        eff = np.where(valid, weights, 0.0)
        resid = np.where(valid[:, None], px - uv, 0.0)

        jw = jac * eff[:, None, None]
        a = np.einsum("nia,nib->ab", jw, jac)
        g = np.einsum("nia,ni->a", jw, resid)

        accepted = False
        for _ in range(20):
            damped = a + lam * np.diag(np.maximum(np.diag(a), 1e-12))
            try:
                step = np.linalg.solve(damped, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if np.linalg.norm(step) < step_tol:
                final = solution_for_pose(pose, corrs, intr)
                return final
            candidate = CameraPose(
                orthonormalize_rotation(rotation_from_axis_angle(step[:3]) @ pose.rotation),
                pose.translation + step[3:],
            )
            new_cost, _ = _weighted_cost(intr, candidate, pts, px, weights)
            if new_cost <= cost:
                pose, cost = candidate, new_cost
                lam = max(lam * 0.1, 1e-12)
                accepted = True
                break
            lam *= 10.0
            if lam > 1e12:
                break
        if not accepted:
            break
    return solution_for_pose(pose, corrs, intr)
