"""End-effector action synthesis.

Three generators feed the motion planner: virtual-kinematic-chain sweeps for
articulated objects, functional-axis alignment for pick-and-place, and
primitive composition into validated waypoint plans.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from mobman import se3
from mobman.scene import ArticulatedObject, RigidObject, SceneState, link_pose, world_grasp
from mobman.se3 import Pose

GRIPPER_COMMANDS = ("open", "close", "hold")
PHASES = ("approach", "grasp", "manipulate", "retreat")
PLAN_MODES = ("whole-body", "base-only", "arm-only")

DEFAULT_VKC_STEPS = 20
APPROACH_OFFSET = 0.08  # meters retreated along the grasp frame's -z
GRASP_REACH = 0.05  # meters; gripper-close must have a grasp this close


class TaskScriptError(ValueError):
    """Malformed or unexecutable primitive sequence."""


@dataclass(frozen=True)
class Waypoint:
    pose: Pose
    gripper: str = "hold"
    phase: str = "approach"
    mode: str = "whole-body"

    def __post_init__(self):
        if self.gripper not in GRIPPER_COMMANDS:
            raise ValueError(f"unknown gripper command {self.gripper!r}")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.mode not in PLAN_MODES:
            raise ValueError(f"unknown planning mode {self.mode!r}")


@dataclass
class EefWaypointPlan:
    waypoints: list[Waypoint] = field(default_factory=list)

    def __post_init__(self):
        if not self.waypoints:
            raise TaskScriptError("waypoint plan must be non-empty")
        if self.waypoints[0].phase != "approach":
            raise TaskScriptError("first waypoint phase must be approach")

    def phases(self) -> list[str]:
        out = []
        for w in self.waypoints:
            if not out or out[-1] != w.phase:
                out.append(w.phase)
        return out


def vkc_eef_trajectory(
    obj: ArticulatedObject,
    eef_init: Pose,
    theta_init: float,
    theta_goal: float,
    steps: int = DEFAULT_VKC_STEPS,
) -> list[Pose]:
    """End-effector poses that keep a rigid grasp while the joint sweeps.

    With the gripper rigidly attached at eef_init (joint at theta_init), each
    pose is link_pose(theta) o link_pose(theta_init)^-1 o eef_init for theta
    linearly interpolated from theta_init to theta_goal. The first pose is
    eef_init exactly.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    lo, hi = obj.joint.limits
    for theta in (theta_init, theta_goal):
        if not lo - 1e-9 <= theta <= hi + 1e-9:
            raise ValueError(f"theta {theta} outside joint limits {obj.joint.limits}")
    ref_inv = se3.inverse(link_pose(obj, theta_init))
    poses = [eef_init]
    for theta in np.linspace(theta_init, theta_goal, steps)[1:]:
        poses.append(se3.compose(se3.compose(link_pose(obj, float(theta)), ref_inv), eef_init))
    return poses


def align_functional_axes(
    held: RigidObject,
    held_pose: Pose,
    target: RigidObject,
    target_pose: Pose,
    standoff: float = 0.0,
) -> Pose:
    """Held-object world pose that mates the two functional axes.

    Placement convention: the axis directions end up anti-parallel, with the
    axis points coincident up to `standoff` along the target's axis. Of the
    one-parameter family of valid rotations, the minimal one (rotation axis
    perpendicular to both directions) is applied.
    """
    if held.functional_axis is None or target.functional_axis is None:
        raise ValueError("both objects must carry a functional axis")
    h_point, h_dir = held.functional_axis
    t_point, t_dir = target.functional_axis

    d_held = held_pose.rotate(h_dir)
    d_target = target_pose.rotate(t_dir)
    desired = -d_target

    dot = float(np.clip(np.dot(d_held, desired), -1.0, 1.0))
    if dot > 1.0 - 1e-12:
        rot = Pose.identity()
    else:
        if dot < -1.0 + 1e-12:
            # Antipodal: any axis perpendicular to d_held gives the pi flip.
            helper = np.array([1.0, 0.0, 0.0])
            if abs(np.dot(helper, d_held)) > 0.9:
                helper = np.array([0.0, 1.0, 0.0])
            axis = np.cross(d_held, helper)
        else:
            axis = np.cross(d_held, desired)
        axis = axis / np.linalg.norm(axis)
        rot = Pose.from_axis_angle(axis, float(np.arccos(dot)))

    new_quat = se3.compose(rot, Pose(held_pose.quat)).quat
    # Solve translation so the held axis point lands standoff along the target axis.
    p_target = target_pose.apply(t_point) + standoff * d_target
    rotated_local = Pose(new_quat).apply(h_point)
    return Pose(new_quat, p_target - rotated_local)


@dataclass(frozen=True)
class Primitive:
    """One step of a task script; `params` depend on the kind."""

    kind: str  # move-base | move-arm | move-whole-body | gripper-open | gripper-close
    target: Pose | None = None
    waypoints: tuple[Pose, ...] = ()
    phase: str | None = None


_KIND_TO_MODE = {"move-base": "base-only", "move-arm": "arm-only", "move-whole-body": "whole-body"}


def _nearest_grasp_distance(pose: Pose, scene: SceneState | None) -> float:
    if scene is None:
        return 0.0
    candidates = []
    if scene.articulated is not None:
        candidates.append(world_grasp(scene.articulated, scene.articulated.joint_value))
    if scene.rigid is not None:
        candidates.append(se3.compose(scene.rigid.pose, scene.rigid.grasp))
    if not candidates:
        return float("inf")
    return min(float(np.linalg.norm(pose.trans - g.trans)) for g in candidates)


def compose_primitives(primitives, scene: SceneState | None = None) -> EefWaypointPlan:
    """Expand a primitive sequence into a validated waypoint plan.

    Phases are inferred from gripper state: approach until the first close,
    grasp at the close, manipulate while closed, retreat after the open.
    An explicit per-primitive phase overrides the inference. gripper-close is
    rejected when no annotated grasp lies within GRASP_REACH of the current
    end-effector waypoint.
    """
    primitives = list(primitives)
    if not primitives:
        raise TaskScriptError("empty primitive sequence")

    waypoints: list[Waypoint] = []
    closed = False
    opened_after_close = False
    for prim in primitives:
        if prim.kind in ("gripper-open", "gripper-close"):
            if not waypoints:
                if prim.kind == "gripper-close":
                    raise TaskScriptError("gripper-close before any motion")
                waypoints.append(Waypoint(Pose.identity(), "open", "approach"))
                continue
            last = waypoints[-1]
            if prim.kind == "gripper-close":
                d = _nearest_grasp_distance(last.pose, scene)
                if d > GRASP_REACH:
                    raise TaskScriptError(f"gripper-close with no graspable object within {GRASP_REACH} m (nearest {d:.3f} m)")
                closed = True
                phase = prim.phase or "grasp"
                waypoints.append(Waypoint(last.pose, "close", phase, last.mode))
            else:
                if closed:
                    opened_after_close = True
                closed = False
                phase = prim.phase or ("retreat" if opened_after_close else "approach")
                waypoints.append(Waypoint(last.pose, "open", phase, last.mode))
            continue

        if prim.kind not in _KIND_TO_MODE:
            raise TaskScriptError(f"unknown primitive kind {prim.kind!r}")
        mode = _KIND_TO_MODE[prim.kind]
        default_phase = "manipulate" if closed else ("retreat" if opened_after_close else "approach")
        phase = prim.phase or default_phase
        poses = list(prim.waypoints) if prim.waypoints else []
        if prim.target is not None:
            poses.append(prim.target)
        if not poses:
            raise TaskScriptError(f"{prim.kind} primitive with no target or waypoints")
        cmd = "close" if closed else "hold"
        for pose in poses:
            waypoints.append(Waypoint(pose, cmd, phase, mode))
    return EefWaypointPlan(waypoints)


def approach_pose(grasp: Pose, offset: float = APPROACH_OFFSET) -> Pose:
    """Pre-grasp pose retreated along the grasp frame's -z axis."""
    return se3.compose(grasp, Pose(trans=(0.0, 0.0, -offset)))


def load_task_script(path: str | Path) -> list[Primitive]:
    """Parse a task script file into primitives (schema in docs/formats.md)."""
    from mobman.robot import _origin_from_dict

    data = yaml.safe_load(Path(path).read_text())
    prims = []
    for entry in data.get("primitives", []):
        target = _origin_from_dict(entry["target"]) if "target" in entry else None
        wps = tuple(_origin_from_dict(w) for w in entry.get("waypoints", []))
        prims.append(Primitive(kind=entry["kind"], target=target, waypoints=wps, phase=entry.get("phase")))
    return prims
