"""Articulated and rigid objects, randomized episode resets, success checks."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from mobman import rng, se3
from mobman.robot import JointSpec
from mobman.se3 import Pose

DEFAULT_DISTANCE_THRESHOLD = 0.02  # meters; configurable, not a published value
DEFAULT_JOINT_THRESHOLD = 0.05  # radians (or meters for prismatic joints)


@dataclass
class ArticulatedObject:
    """Door / drawer / dishwasher: one moving link on a single joint.

    `handle_grasp` is the annotated 6-DoF grasp, rigidly attached to the
    moving link; `link_origin` is the moving link's pose at joint value 0,
    relative to the object base.
    """

    base_pose: Pose
    joint: JointSpec
    link_origin: Pose
    handle_grasp: Pose
    joint_value: float = 0.0
    name: str = "articulated"

    def __post_init__(self):
        lo, hi = self.joint.limits
        if not lo - 1e-12 <= self.joint_value <= hi + 1e-12:
            raise ValueError("joint_value outside joint limits")


@dataclass
class RigidObject:
    pose: Pose
    grasp: Pose
    functional_axis: tuple[np.ndarray, np.ndarray] | None = None  # (point, unit direction)
    extent: float = 0.05
    name: str = "rigid"

    def __post_init__(self):
        if self.functional_axis is not None:
            point = np.asarray(self.functional_axis[0], dtype=np.float64).reshape(3)
            direction = np.asarray(self.functional_axis[1], dtype=np.float64).reshape(3)
            if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
                raise ValueError("functional axis direction must be unit norm")
            self.functional_axis = (point, direction)


@dataclass(frozen=True)
class ResetSpec:
    """Uniform randomization ranges applied at every episode reset."""

    position_min: np.ndarray
    position_max: np.ndarray
    yaw_range: tuple[float, float]
    scale_range: tuple[float, float]
    arm_init_min: np.ndarray
    arm_init_max: np.ndarray
    seed: int = 0

    def __post_init__(self):
        pmin = np.array(self.position_min, dtype=np.float64).reshape(3)
        pmax = np.array(self.position_max, dtype=np.float64).reshape(3)
        amin = np.array(self.arm_init_min, dtype=np.float64).reshape(-1)
        amax = np.array(self.arm_init_max, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "position_min", pmin)
        object.__setattr__(self, "position_max", pmax)
        object.__setattr__(self, "arm_init_min", amin)
        object.__setattr__(self, "arm_init_max", amax)
        if np.any(pmin > pmax) or np.any(amin > amax):
            raise ValueError("range minimum exceeds maximum")
        if self.yaw_range[0] > self.yaw_range[1]:
            raise ValueError("yaw range minimum exceeds maximum")
        if self.scale_range[0] <= 0 or self.scale_range[0] > self.scale_range[1]:
            raise ValueError("scale range must be positive and ordered")


@dataclass(frozen=True)
class SuccessPredicate:
    kind: str  # "distance" or "joint-angle"
    threshold: float
    target_joint_value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("distance", "joint-angle"):
            raise ValueError(f"unknown predicate kind {self.kind!r}")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


@dataclass
class SceneState:
    """Everything an episode starts from; robot base at the world origin."""

    articulated: ArticulatedObject | None
    rigid: RigidObject | None
    target: RigidObject | None
    arm_init: np.ndarray
    scale: float
    episode: int
    seed: int
    metadata: dict = field(default_factory=dict)


def joint_motion(joint: JointSpec, value: float) -> Pose:
    if joint.is_prismatic:
        return Pose(trans=joint.axis * value)
    return Pose.from_axis_angle(joint.axis, value)


def link_pose(obj: ArticulatedObject, theta: float) -> Pose:
    """World pose of the moving link at joint value theta."""
    lo, hi = obj.joint.limits
    if not lo - 1e-9 <= theta <= hi + 1e-9:
        raise ValueError(f"theta {theta} outside joint limits {obj.joint.limits}")
    return se3.compose(se3.compose(obj.base_pose, joint_motion(obj.joint, theta)), obj.link_origin)


def world_grasp(obj: ArticulatedObject, theta: float) -> Pose:
    """World pose of the annotated handle grasp at joint value theta."""
    return se3.compose(link_pose(obj, theta), obj.handle_grasp)


def scaled_object(obj: ArticulatedObject, scale: float) -> ArticulatedObject:
    """Uniformly scale the object geometry; joint limits are unchanged."""
    return replace(
        obj,
        link_origin=Pose(obj.link_origin.quat, obj.link_origin.trans * scale),
        handle_grasp=Pose(obj.handle_grasp.quat, obj.handle_grasp.trans * scale),
    )


def reset_episode(
    spec: ResetSpec,
    episode_index: int,
    articulated: ArticulatedObject | None = None,
    rigid: RigidObject | None = None,
    target: RigidObject | None = None,
) -> SceneState:
    """Deterministic randomized reset for (spec.seed, episode_index).

    Object templates are copied, never mutated; the returned scene depends
    only on the seed and episode index, not on other episodes.
    """
    gen = rng.stream(spec.seed, episode_index, rng.STREAM_RESET)
    position = gen.uniform(spec.position_min, spec.position_max)
    yaw = gen.uniform(spec.yaw_range[0], spec.yaw_range[1])
    scale = gen.uniform(spec.scale_range[0], spec.scale_range[1])
    arm_init = gen.uniform(spec.arm_init_min, spec.arm_init_max)

    placement = Pose.planar(position[0], position[1], yaw)
    placement = Pose(placement.quat, position)

    art = None
    if articulated is not None:
        art = scaled_object(copy.deepcopy(articulated), scale)
        art.base_pose = se3.compose(placement, art.base_pose)
    rig = None
    if rigid is not None:
        rig = copy.deepcopy(rigid)
        rig.pose = se3.compose(placement, rig.pose)
        rig.extent *= scale
    tgt = copy.deepcopy(target) if target is not None else None

    return SceneState(
        articulated=art,
        rigid=rig,
        target=tgt,
        arm_init=arm_init,
        scale=scale,
        episode=episode_index,
        seed=spec.seed,
        metadata={
            "position": position.tolist(),
            "yaw": float(yaw),
            "scale": float(scale),
            "arm_init": arm_init.tolist(),
        },
    )


def check_success(state: SceneState, pred: SuccessPredicate) -> bool:
    if pred.kind == "distance":
        if state.rigid is None or state.target is None:
            raise ValueError("distance predicate needs a held object and a target")
        d = np.linalg.norm(state.rigid.pose.trans - state.target.pose.trans)
        return bool(d < pred.threshold)
    if state.articulated is None:
        raise ValueError("joint-angle predicate needs an articulated object")
    return bool(abs(state.articulated.joint_value - pred.target_joint_value) < pred.threshold)


def _pose_from_dict(d: dict) -> Pose:
    from mobman.robot import _origin_from_dict

    return _origin_from_dict(d or {})


def load_scene(path: str | Path) -> dict:
    """Load a scene description file into its object templates and reset spec.

    Returns a dict with keys: articulated, rigid, target, reset, predicate
    (absent entries are None). Schema documented in docs/formats.md.
    """
    data = yaml.safe_load(Path(path).read_text())
    out: dict = {"articulated": None, "rigid": None, "target": None, "reset": None, "predicate": None}
    if "articulated" in data:
        a = data["articulated"]
        joint = JointSpec(
            kind=a["joint"]["kind"],
            axis=np.array(a["joint"].get("axis", [0, 0, 1]), dtype=np.float64),
            origin=_pose_from_dict(a["joint"].get("origin", {})),
            limits=(float(a["joint"]["limits"][0]), float(a["joint"]["limits"][1])),
            v_max=float(a["joint"].get("v_max", 1.0)),
            a_max=float(a["joint"].get("a_max", 1.0)),
        )
        out["articulated"] = ArticulatedObject(
            base_pose=_pose_from_dict(a.get("base_pose", {})),
            joint=joint,
            link_origin=_pose_from_dict(a.get("link_origin", {})),
            handle_grasp=_pose_from_dict(a.get("handle_grasp", {})),
            joint_value=float(a.get("joint_value", 0.0)),
            name=a.get("name", "articulated"),
        )
    for key in ("rigid", "target"):
        if key in data:
            r = data[key]
            axis = None
            if "functional_axis" in r:
                fa = r["functional_axis"]
                direction = np.array(fa["direction"], dtype=np.float64)
                direction = direction / np.linalg.norm(direction)
                axis = (np.array(fa.get("point", [0, 0, 0]), dtype=np.float64), direction)
            out[key] = RigidObject(
                pose=_pose_from_dict(r.get("pose", {})),
                grasp=_pose_from_dict(r.get("grasp", {})),
                functional_axis=axis,
                extent=float(r.get("extent", 0.05)),
                name=r.get("name", key),
            )
    if "reset" in data:
        r = data["reset"]
        out["reset"] = ResetSpec(
            position_min=np.array(r["position_min"], dtype=np.float64),
            position_max=np.array(r["position_max"], dtype=np.float64),
            yaw_range=(float(r["yaw_range"][0]), float(r["yaw_range"][1])),
            scale_range=(float(r.get("scale_range", [1.0, 1.0])[0]), float(r.get("scale_range", [1.0, 1.0])[1])),
            arm_init_min=np.array(r["arm_init_min"], dtype=np.float64),
            arm_init_max=np.array(r["arm_init_max"], dtype=np.float64),
            seed=int(r.get("seed", 0)),
        )
    if "predicate" in data:
        p = data["predicate"]
        out["predicate"] = SuccessPredicate(
            kind=p["kind"],
            threshold=float(p.get("threshold", DEFAULT_JOINT_THRESHOLD if p["kind"] == "joint-angle" else DEFAULT_DISTANCE_THRESHOLD)),
            target_joint_value=float(p.get("target_joint_value", 0.0)),
        )
    return out
