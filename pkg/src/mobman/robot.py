"""Kinematics of the mobile manipulator.

The mobile base is modeled as three virtual planar joints (x, y, yaw)
prepended to the arm chain, so whole-body planning is a single joint-space
problem. Configurations are plain float64 arrays, one value per joint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from mobman import se3
from mobman.se3 import Pose

JOINT_KINDS = ("revolute", "prismatic", "planar-x", "planar-y", "planar-yaw")
BASE_KINDS = ("planar-x", "planar-y", "planar-yaw")

_DLS_LAMBDA = 0.05
_EYE3 = np.eye(3)


class DimensionMismatchError(ValueError):
    """Configuration length does not match the robot's joint count."""


@dataclass(frozen=True)
class JointSpec:
    kind: str
    axis: np.ndarray
    origin: Pose
    limits: tuple[float, float]
    v_max: float
    a_max: float
    name: str = ""

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis = np.array(self.axis, dtype=np.float64).reshape(3)
        n = np.linalg.norm(axis)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("joint axis must be unit norm")
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError("joint limits must satisfy min < max")
        if self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("velocity and acceleration limits must be positive")

    @property
    def is_prismatic(self) -> bool:
        return self.kind in ("prismatic", "planar-x", "planar-y")


@dataclass(frozen=True)
class CollisionSphere:
    link: int
    offset: np.ndarray
    radius: float

    def __post_init__(self):
        off = np.array(self.offset, dtype=np.float64).reshape(3)
        off.setflags(write=False)
        object.__setattr__(self, "offset", off)
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class RobotModel:
    joints: tuple[JointSpec, ...]
    eef_offset: Pose = field(default_factory=Pose.identity)
    collision_spheres: tuple[CollisionSphere, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "collision_spheres", tuple(self.collision_spheres))
        kinds = [j.kind for j in self.joints[:3]]
        if kinds != ["planar-x", "planar-y", "planar-yaw"]:
            raise ValueError("first three joints must be planar-x, planar-y, planar-yaw")
        for s in self.collision_spheres:
            if not 0 <= s.link < len(self.joints):
                raise ValueError(f"collision sphere references invalid link {s.link}")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    @property
    def v_max(self) -> np.ndarray:
        return np.array([j.v_max for j in self.joints])

    @property
    def a_max(self) -> np.ndarray:
        return np.array([j.a_max for j in self.joints])

    def check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dof:
            raise DimensionMismatchError(f"expected {self.dof} joint values, got {q.shape[0]}")
        return q

    def clamp(self, q) -> np.ndarray:
        return np.clip(self.check_config(q), self.lower_limits, self.upper_limits)


def _model_cache(model: RobotModel) -> dict:
    """Per-model precomputed matrices (4x4 joint origins, eef offset)."""
    cache = model.__dict__.get("_cache")
    if cache is None:
        skews = []
        for j in model.joints:
            k = np.array(
                [[0, -j.axis[2], j.axis[1]], [j.axis[2], 0, -j.axis[0]], [-j.axis[1], j.axis[0], 0]]
            )
            skews.append((k, k @ k))
        cache = {
            "origins": [j.origin.matrix() for j in model.joints],
            "prismatic": [j.is_prismatic for j in model.joints],
            "axes": [j.axis for j in model.joints],
            "skews": skews,
            "eef": model.eef_offset.matrix(),
        }
        object.__setattr__(model, "_cache", cache)
    return cache


def _chain_mats(
    model: RobotModel, q, max_link: int | None = None
) -> tuple[list[np.ndarray], list[tuple[np.ndarray, np.ndarray]]]:
    """World 4x4 frame after each joint plus (world axis, joint origin) pairs.

    `max_link` truncates the walk after that joint index; callers that only
    need a shallow link (collision spheres on the chassis) skip the arm.
    """
    q = model.check_config(q)
    if max_link is not None:
        q = q[: max_link + 1]
    cache = _model_cache(model)
    mats = []
    axes = []
    cur = np.eye(4)
    for i, value in enumerate(q):
        cur = cur @ cache["origins"][i]
        axis_world = cur[:3, :3] @ cache["axes"][i]
        axes.append((axis_world, cur[:3, 3].copy()))
        if cache["prismatic"][i]:
            cur = cur.copy()
            cur[:3, 3] += axis_world * value
        else:
            k, k2 = cache["skews"][i]
            rot = _EYE3 + np.sin(value) * k + (1.0 - np.cos(value)) * k2
            cur = cur.copy()
            cur[:3, :3] = cur[:3, :3] @ rot
        mats.append(cur)
    return mats, axes


def link_frames(model: RobotModel, q) -> list[Pose]:
    """World frame after each joint, in chain order."""
    return [Pose.from_matrix(m) for m in _chain_mats(model, q)[0]]


def fk_matrix(model: RobotModel, q) -> np.ndarray:
    mats, _ = _chain_mats(model, q)
    return mats[-1] @ _model_cache(model)["eef"]


def forward_kinematics(model: RobotModel, q) -> Pose:
    """World pose of the end-effector frame."""
    return Pose.from_matrix(fk_matrix(model, q))


def point_jacobian(model: RobotModel, q, point_world: np.ndarray, link: int) -> np.ndarray:
    """3 x n Jacobian of a point rigidly attached to the given link."""
    _, axes = _chain_mats(model, q, max_link=link)
    jac = np.zeros((3, model.dof))
    for i, (axis, origin) in enumerate(axes):
        if model.joints[i].is_prismatic:
            jac[:, i] = axis
        else:
            jac[:, i] = np.cross(axis, point_world - origin)
    return jac


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Geometric Jacobian of the end-effector in the world frame.

    Rows 0:3 are the linear part, rows 3:6 the angular part.
    """
    mats, axes = _chain_mats(model, q)
    eef_pos = (mats[-1] @ _model_cache(model)["eef"])[:3, 3]
    jac = np.zeros((6, model.dof))
    for i, (axis, origin) in enumerate(axes):
        if model.joints[i].is_prismatic:
            jac[:3, i] = axis
        else:
            jac[:3, i] = np.cross(axis, eef_pos - origin)
            jac[3:, i] = axis
    return jac


def collision_sphere_centers(model: RobotModel, q) -> list[tuple[np.ndarray, float, int]]:
    """World (center, radius, link) for every collision sphere."""
    if not model.collision_spheres:
        return []
    deepest = max(s.link for s in model.collision_spheres)
    mats, _ = _chain_mats(model, q, max_link=deepest)
    return [
        (mats[s.link][:3, :3] @ s.offset + mats[s.link][:3, 3], s.radius, s.link)
        for s in model.collision_spheres
    ]


@dataclass
class IkResult:
    success: bool
    q: np.ndarray
    pos_err: float
    rot_err: float
    iters: int


def ik_damped_least_squares(
    model: RobotModel,
    target: Pose,
    seed_q,
    max_iters: int = 100,
    tol: float = 1e-4,
    locked: np.ndarray | None = None,
) -> IkResult:
    """Damped least-squares IK, clamped to joint limits every iteration.

    `locked` is an optional boolean mask of joints held at their seed value
    (used for arm-only / base-only planning). Non-convergence returns
    success=False with the best iterate, never a wrong answer.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = model.clamp(seed_q)
    best = None
    for it in range(max_iters + 1):
        m = fk_matrix(model, q)
        pos_err = target.trans - m[:3, 3]
        r = m[:3, :3]
        try:
            w_err = r @ se3.rotation_log(r.T @ target.rotation_matrix())
        except se3.NearSingularRotationError:
            # Nudge off the antipodal rotation and keep iterating.
            w_err = r @ np.array([np.pi - 1e-3, 0.0, 0.0])
        pn, rn = np.linalg.norm(pos_err), np.linalg.norm(w_err)
        if best is None or (pn + rn) < (best.pos_err + best.rot_err):
            best = IkResult(False, q.copy(), pn, rn, it)
        if pn <= tol and rn <= tol:
            return IkResult(True, q.copy(), pn, rn, it)
        if it == max_iters:
            break
        jac = jacobian(model, q)
        if locked is not None:
            jac = jac.copy()
            jac[:, locked] = 0.0
        err = np.concatenate([pos_err, w_err])
        dq = jac.T @ np.linalg.solve(jac @ jac.T + _DLS_LAMBDA**2 * np.eye(6), err)
        # Step cap keeps DLS from overshooting on near-singular configs.
        step = np.linalg.norm(dq)
        if step > 0.5:
            dq *= 0.5 / step
        q = model.clamp(q + dq)
        if locked is not None:
            q[locked] = model.clamp(seed_q)[locked]
    return best


def _origin_from_dict(d: dict) -> Pose:
    xyz = d.get("xyz", [0.0, 0.0, 0.0])
    rpy = d.get("rpy", [0.0, 0.0, 0.0])
    rx = Pose.from_axis_angle((1, 0, 0), rpy[0])
    ry = Pose.from_axis_angle((0, 1, 0), rpy[1])
    rz = Pose.from_axis_angle((0, 0, 1), rpy[2])
    rot = se3.compose(rz, se3.compose(ry, rx))
    return Pose(rot.quat, xyz)


def load_robot(path: str | Path) -> RobotModel:
    """Load a robot description file (see docs/formats.md for the schema)."""
    data = yaml.safe_load(Path(path).read_text())
    joints = []
    for jd in data["joints"]:
        joints.append(
            JointSpec(
                kind=jd["kind"],
                axis=np.array(jd.get("axis", [0, 0, 1]), dtype=np.float64),
                origin=_origin_from_dict(jd.get("origin", {})),
                limits=(float(jd["limits"][0]), float(jd["limits"][1])),
                v_max=float(jd.get("v_max", 1.0)),
                a_max=float(jd.get("a_max", 2.0)),
                name=jd.get("name", ""),
            )
        )
    spheres = tuple(
        CollisionSphere(int(s["link"]), np.array(s.get("offset", [0, 0, 0]), dtype=np.float64), float(s["radius"]))
        for s in data.get("collision_spheres", [])
    )
    eef = _origin_from_dict(data.get("eef_offset", {}))
    return RobotModel(tuple(joints), eef, spheres)
