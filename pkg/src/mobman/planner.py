"""Direct-transcription whole-body trajectory optimization.

Decision variables are the waypoint configurations x[0..T-1] with x[0] pinned
to the start configuration. The cost couples a terminal end-effector pose
error, first-difference smoothness, a soft base-yaw constraint, and a hinge
collision penalty; joint limits are enforced by projection, never by penalty.
Solved with projected gradient descent and Armijo backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mobman import robot as rb
from mobman import se3
from mobman.robot import RobotModel
from mobman.se3 import Pose

PLAN_MODES = ("whole-body", "base-only", "arm-only")

TERMINAL_POS_TOL = 5e-3  # meters
TERMINAL_ROT_TOL = 0.02  # radians

_ARMIJO_C = 1e-4
_ARMIJO_SHRINK = 0.5
_MAX_ITERS = 500
_COST_TOL = 1e-8


@dataclass(frozen=True)
class CostWeights:
    w_pos: float = 100.0
    w_rot: float = 10.0
    w_smooth: np.ndarray | float = 0.1  # per-joint vector or scalar
    w_yaw: float = 1.0
    w_col: float = 200.0
    d_safe: float = 0.05
    yaw_ref: float | None = None  # None: use the start configuration's yaw

    def __post_init__(self):
        if np.any(np.asarray(self.w_smooth) < 0) or min(self.w_pos, self.w_rot, self.w_yaw, self.w_col) < 0:
            raise ValueError("weights must be non-negative")
        if self.d_safe <= 0:
            raise ValueError("d_safe must be positive")

    def smooth_vector(self, dof: int) -> np.ndarray:
        w = np.asarray(self.w_smooth, dtype=np.float64)
        if w.ndim == 0:
            # Base translation is in meters; weight it 4x the arm default so
            # meter-scale and radian-scale steps trade off sensibly.
            out = np.full(dof, float(w))
            out[:2] *= 4.0
            return out
        if w.shape[0] != dof:
            raise ValueError("w_smooth length must match joint count")
        return w.copy()


@dataclass(frozen=True)
class PlanRequest:
    model: RobotModel
    x_init: np.ndarray
    goal: Pose
    T: int = 20
    weights: CostWeights = field(default_factory=CostWeights)
    obstacles: tuple[tuple[np.ndarray, float], ...] = ()  # (center, radius) spheres
    mode: str = "whole-body"

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if self.mode not in PLAN_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        x = self.model.check_config(self.x_init)
        if np.any(x < self.model.lower_limits - 1e-9) or np.any(x > self.model.upper_limits + 1e-9):
            raise ValueError("x_init outside joint limits")
        object.__setattr__(self, "x_init", x)
        obs = tuple((np.array(c, dtype=np.float64).reshape(3), float(r)) for c, r in self.obstacles)
        object.__setattr__(self, "obstacles", obs)

    def frozen_mask(self) -> np.ndarray:
        mask = np.zeros(self.model.dof, dtype=bool)
        if self.mode == "base-only":
            mask[3:] = True
        elif self.mode == "arm-only":
            mask[:3] = True
        return mask


@dataclass
class WholeBodyTrajectory:
    waypoints: np.ndarray  # T x dof
    converged: bool
    final_cost: float
    iters: int = 0
    gripper: list[str] | None = None


def _terminal_error(model: RobotModel, q, goal: Pose):
    m = rb.fk_matrix(model, q)
    r = m[:3, :3]
    e_rot = se3.rotation_log(r.T @ goal.rotation_matrix())
    return m[:3, 3] - goal.trans, e_rot, r


def total_cost(traj: np.ndarray, request: PlanRequest) -> float:
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != request.model.dof:
        raise rb.DimensionMismatchError("trajectory shape mismatch")
    w = request.weights
    e_pos, e_rot, _ = _terminal_error(request.model, traj[-1], request.goal)
    cost = w.w_pos * float(e_pos @ e_pos) + w.w_rot * float(e_rot @ e_rot)

    ws = w.smooth_vector(request.model.dof)
    diffs = np.diff(traj, axis=0)
    cost += float(np.sum(diffs * diffs * ws))

    yaw_ref = w.yaw_ref if w.yaw_ref is not None else float(request.x_init[2])
    cost += w.w_yaw * float(np.sum((traj[:, 2] - yaw_ref) ** 2))

    if request.obstacles and request.model.collision_spheres:
        for q in traj:
            for center, radius, _ in rb.collision_sphere_centers(request.model, q):
                for oc, orad in request.obstacles:
                    dist = np.linalg.norm(center - oc) - radius - orad
                    if dist < w.d_safe:
                        cost += w.w_col * (w.d_safe - dist) ** 2
    return cost


def cost_gradient(traj: np.ndarray, request: PlanRequest) -> np.ndarray:
    """Analytic gradient of total_cost w.r.t. every waypoint (T x dof)."""
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != request.model.dof:
        raise rb.DimensionMismatchError("trajectory shape mismatch")
    model, w = request.model, request.weights
    grad = np.zeros_like(traj)

    e_pos, e_rot, r = _terminal_error(model, traj[-1], request.goal)
    jac = rb.jacobian(model, traj[-1])
    grad[-1] += 2.0 * w.w_pos * (jac[:3].T @ e_pos)
    # d(rot_angle^2)/dq = -2 e^T R^T Jw with e the body-frame log error.
    grad[-1] += -2.0 * w.w_rot * (jac[3:].T @ (r @ e_rot))

    ws = w.smooth_vector(model.dof)
    diffs = np.diff(traj, axis=0)
    grad[:-1] -= 2.0 * ws * diffs
    grad[1:] += 2.0 * ws * diffs

    yaw_ref = w.yaw_ref if w.yaw_ref is not None else float(request.x_init[2])
    grad[:, 2] += 2.0 * w.w_yaw * (traj[:, 2] - yaw_ref)

    if request.obstacles and model.collision_spheres:
        for t, q in enumerate(traj):
            for center, radius, link in rb.collision_sphere_centers(model, q):
                for oc, orad in request.obstacles:
                    delta = center - oc
                    norm = np.linalg.norm(delta)
                    dist = norm - radius - orad
                    if dist < w.d_safe and norm > 1e-12:
                        jp = rb.point_jacobian(model, q, center, link)
                        grad[t] += -2.0 * w.w_col * (w.d_safe - dist) * (jp.T @ (delta / norm))
    return grad


def _initial_trajectory(request: PlanRequest) -> np.ndarray:
    frozen = request.frozen_mask()
    ik = rb.ik_damped_least_squares(
        request.model, request.goal, request.x_init, max_iters=200, tol=1e-4,
        locked=frozen if frozen.any() else None,
    )
    if ik.success:
        alphas = np.linspace(0.0, 1.0, request.T)[:, None]
        traj = (1 - alphas) * request.x_init[None, :] + alphas * ik.q[None, :]
    else:
        traj = np.tile(request.x_init, (request.T, 1))
    traj[:, frozen] = request.x_init[frozen]
    traj[0] = request.x_init
    return traj


def plan(request: PlanRequest) -> WholeBodyTrajectory:
    """Optimize a whole-body trajectory to the goal end-effector pose.

    converged=True guarantees terminal pose error within
    (TERMINAL_POS_TOL, TERMINAL_ROT_TOL) and every waypoint inside the joint
    limits; a False flag returns the best trajectory found, which callers
    must treat as a failed demonstration.
    """
    model = request.model
    lo, hi = model.lower_limits, model.upper_limits
    frozen = request.frozen_mask()

    traj = np.clip(_initial_trajectory(request), lo, hi)
    traj[0] = request.x_init
    traj[:, frozen] = request.x_init[frozen]

    cost = total_cost(traj, request)
    alpha = 1e-2
    iters = 0
    for iters in range(1, _MAX_ITERS + 1):
        grad = cost_gradient(traj, request)
        grad[0] = 0.0
        grad[:, frozen] = 0.0
        gnorm2 = float(np.sum(grad * grad))
        if gnorm2 < 1e-18:
            break
        alpha = min(alpha * 2.0, 1.0)
        improved = False
        while alpha > 1e-12:
            cand = np.clip(traj - alpha * grad, lo, hi)
            cand[0] = request.x_init
            cand[:, frozen] = request.x_init[frozen]
            cand_cost = total_cost(cand, request)
            decrease = float(np.sum(grad * (traj - cand)))
            if cand_cost <= cost - _ARMIJO_C * decrease:
                improved = True
                break
            alpha *= _ARMIJO_SHRINK
        if not improved:
            break
        gain = cost - cand_cost
        traj, cost = cand, cand_cost
        if gain < _COST_TOL:
            break

    pos_err, rot_err = se3.pose_error(rb.forward_kinematics(model, traj[-1]), request.goal)
    within = pos_err <= TERMINAL_POS_TOL and rot_err <= TERMINAL_ROT_TOL
    return WholeBodyTrajectory(traj, bool(within), cost, iters)


def track_eef_waypoints(
    model: RobotModel,
    x_init,
    waypoints,
    weights: CostWeights = CostWeights(),
    segment_T: int = 5,
    mode: str = "whole-body",
    obstacles=(),
) -> WholeBodyTrajectory:
    """Chain plan() calls so the end-effector visits each pose in order.

    Each segment is seeded with the previous solution's terminal
    configuration; any failed segment poisons the converged flag.
    """
    x = np.asarray(x_init, dtype=np.float64)
    all_wps = [x.copy()]
    converged = True
    cost = 0.0
    iters = 0
    for goal in waypoints:
        req = PlanRequest(model=model, x_init=x, goal=goal, T=segment_T,
                          weights=weights, obstacles=tuple(obstacles), mode=mode)
        seg = plan(req)
        converged = converged and seg.converged
        cost += seg.final_cost
        iters += seg.iters
        all_wps.extend(seg.waypoints[1:])
        x = seg.waypoints[-1]
    return WholeBodyTrajectory(np.array(all_wps), converged, cost, iters)
