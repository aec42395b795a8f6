"""Toy tasks: scene templates, kinematic execution, demonstration generation.

Everything here is desk-scale: a planar base with a 3-DoF planar arm whose
end-effector frame has its z axis pointing along the heading, so annotated
grasps with horizontal approach directions stay reachable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mobman import actions as act
from mobman import planner, retime, scene as sc, se3
from mobman.datasets import Demonstration
from mobman.robot import CollisionSphere, JointSpec, RobotModel
from mobman.scene import ArticulatedObject, ResetSpec, RigidObject, SceneState, SuccessPredicate
from mobman.se3 import Pose

CONTROL_DT = 0.1  # seconds per demonstration sample
ATTACH_RADIUS = 0.06  # gripper-to-grasp distance that establishes attachment

TASKS = ("drawer", "place")

_ARM_Z = 0.5  # arm plane height
_EEF_ROT = Pose.from_axis_angle((0, 1, 0), np.pi / 2)  # eef z along heading


def toy_robot() -> RobotModel:
    """Planar base + 3-DoF planar arm (link lengths 0.4 / 0.3 / 0.15 m)."""
    j = [
        JointSpec("planar-x", (1, 0, 0), Pose.identity(), (-3.0, 3.0), 0.6, 1.0, "base_x"),
        JointSpec("planar-y", (0, 1, 0), Pose.identity(), (-3.0, 3.0), 0.6, 1.0, "base_y"),
        JointSpec("planar-yaw", (0, 0, 1), Pose.identity(), (-np.pi, np.pi), 1.0, 2.0, "base_yaw"),
        JointSpec("revolute", (0, 0, 1), Pose(trans=(0.2, 0.0, _ARM_Z)), (-2.6, 2.6), 1.5, 3.0, "shoulder"),
        JointSpec("revolute", (0, 0, 1), Pose(trans=(0.4, 0.0, 0.0)), (-2.6, 2.6), 1.5, 3.0, "elbow"),
        JointSpec("revolute", (0, 0, 1), Pose(trans=(0.3, 0.0, 0.0)), (-2.6, 2.6), 1.5, 3.0, "wrist"),
    ]
    eef = se3.compose(Pose(trans=(0.15, 0.0, 0.0)), _EEF_ROT)
    spheres = (CollisionSphere(2, (0.0, 0.0, 0.2), 0.25),)  # chassis
    return RobotModel(tuple(j), eef, spheres)


def _horizontal_grasp(offset: np.ndarray) -> Pose:
    """Grasp frame at `offset` whose z axis is the local +x (approach) direction."""
    return se3.compose(Pose(trans=offset), _EEF_ROT)


def drawer_template() -> ArticulatedObject:
    joint = JointSpec("prismatic", (-1, 0, 0), Pose.identity(), (0.0, 0.2001), 0.5, 1.0, "slide")
    return ArticulatedObject(
        base_pose=Pose.identity(),
        joint=joint,
        link_origin=Pose.identity(),
        handle_grasp=_horizontal_grasp(np.array([-0.28, 0.0, _ARM_Z])),
        joint_value=0.0,
        name="drawer",
    )


def container_template() -> RigidObject:
    return RigidObject(
        pose=Pose.identity(),
        grasp=_horizontal_grasp(np.array([-0.05, 0.0, _ARM_Z])),
        functional_axis=(np.array([0.0, 0.0, _ARM_Z]), np.array([1.0, 0.0, 0.0])),
        extent=0.06,
        name="container",
    )


def plate_template() -> RigidObject:
    return RigidObject(
        pose=Pose.planar(0.0, 0.0, np.pi),  # slot axis faces back toward the robot
        grasp=Pose.identity(),
        functional_axis=(np.array([0.0, 0.0, _ARM_Z]), np.array([1.0, 0.0, 0.0])),
        extent=0.10,
        name="plate",
    )


@dataclass
class TaskSpec:
    name: str
    reset: ResetSpec
    predicate: SuccessPredicate
    drawer_goal: float = 0.2  # target joint value for the drawer task
    place_target_xy: tuple[float, float] = (1.9, 0.6)  # plate center, world


def task_spec(name: str, seed: int = 0) -> TaskSpec:
    if name == "drawer":
        reset = ResetSpec(
            position_min=np.array([1.25, -0.25, 0.0]),
            position_max=np.array([1.55, 0.25, 0.0]),
            yaw_range=(-0.25, 0.25),
            scale_range=(1.0, 1.0),  # planar robot: handle height must stay in the arm plane
            arm_init_min=np.array([-0.4, 0.3, 0.1]),
            arm_init_max=np.array([0.4, 0.9, 0.5]),
            seed=seed,
        )
        pred = SuccessPredicate("joint-angle", threshold=0.02, target_joint_value=0.2)
        return TaskSpec("drawer", reset, pred)
    if name == "place":
        reset = ResetSpec(
            position_min=np.array([0.85, -0.25, 0.0]),
            position_max=np.array([1.1, 0.25, 0.0]),
            yaw_range=(-0.2, 0.2),
            scale_range=(1.0, 1.0),
            arm_init_min=np.array([-0.4, 0.3, 0.1]),
            arm_init_max=np.array([0.4, 0.9, 0.5]),
            seed=seed,
        )
        pred = SuccessPredicate("distance", threshold=0.06)
        return TaskSpec("place", reset, pred)
    raise ValueError(f"unknown task {name!r}; available: {TASKS}")


def reset_task(spec: TaskSpec, episode: int) -> SceneState:
    if spec.name == "drawer":
        return sc.reset_episode(spec.reset, episode, articulated=drawer_template())
    state = sc.reset_episode(spec.reset, episode, rigid=container_template(), target=plate_template())
    tx, ty = spec.place_target_xy
    state.target.pose = se3.compose(Pose.planar(tx, ty, 0.0), plate_template().pose)
    return state


class KinematicEnv:
    """No-physics execution: position-controlled joints with velocity rate
    limits, geometric grasp attachment, and per-task success predicates.

    Action layout: [q_target (dof), gripper] with gripper > 0.5 meaning close.
    Observations: [q, gripper, task scalar (drawer joint value or held-object
    distance), object x, y, yaw].
    """

    def __init__(self, spec: TaskSpec, episode: int):
        self.spec = spec
        self.episode = episode
        self.model = toy_robot()
        self.state = reset_task(spec, episode)
        self.q = np.concatenate([np.zeros(3), self.state.arm_init])
        self.gripper_closed = False
        self.attached = False
        self._handle0 = None
        self._held_offset = None

    # -- observation ------------------------------------------------------

    def _object_pose(self) -> Pose:
        if self.spec.name == "drawer":
            return self.state.articulated.base_pose
        return self.state.rigid.pose

    def _task_scalar(self) -> float:
        if self.spec.name == "drawer":
            return self.state.articulated.joint_value
        return float(np.linalg.norm(self.state.rigid.pose.trans - self.state.target.pose.trans))

    def observe(self) -> np.ndarray:
        pose = self._object_pose()
        yaw = np.arctan2(
            2.0 * (pose.quat[0] * pose.quat[3] + pose.quat[1] * pose.quat[2]),
            1.0 - 2.0 * (pose.quat[2] ** 2 + pose.quat[3] ** 2),
        )
        return np.concatenate([
            self.q,
            [1.0 if self.gripper_closed else 0.0, self._task_scalar()],
            [pose.trans[0], pose.trans[1], yaw],
        ]).astype(np.float64)

    @property
    def obs_dim(self) -> int:
        return self.model.dof + 5

    @property
    def act_dim(self) -> int:
        return self.model.dof + 1

    # -- dynamics ---------------------------------------------------------

    def reset(self) -> np.ndarray:
        return self.observe()

    def eef_pose(self) -> Pose:
        from mobman.robot import forward_kinematics

        return forward_kinematics(self.model, self.q)

    def step(self, action: np.ndarray) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        target = self.model.clamp(action[: self.model.dof])
        dq = np.clip(target - self.q, -self.model.v_max * CONTROL_DT, self.model.v_max * CONTROL_DT)
        self.q = self.model.clamp(self.q + dq)
        want_closed = action[self.model.dof] > 0.5
        eef = self.eef_pose()

        if want_closed and not self.gripper_closed:
            self._try_attach(eef)
        if not want_closed:
            self.attached = False
            self._held_offset = None
        self.gripper_closed = want_closed

        if self.attached:
            if self.spec.name == "drawer":
                obj = self.state.articulated
                axis_w = obj.base_pose.rotate(obj.joint.axis)
                theta = float(np.dot(axis_w, eef.trans - self._handle0))
                lo, hi = obj.joint.limits
                obj.joint_value = float(np.clip(theta, lo, hi))
            else:
                self.state.rigid.pose = se3.compose(eef, self._held_offset)
        return self.observe()

    def _try_attach(self, eef: Pose) -> None:
        if self.spec.name == "drawer":
            obj = self.state.articulated
            grasp = sc.world_grasp(obj, obj.joint_value)
            if np.linalg.norm(eef.trans - grasp.trans) < ATTACH_RADIUS:
                self.attached = True
                # Reference point such that axis . (eef - ref) recovers theta.
                self._handle0 = eef.trans - obj.base_pose.rotate(obj.joint.axis) * obj.joint_value
        else:
            grasp = se3.compose(self.state.rigid.pose, self.state.rigid.grasp)
            if np.linalg.norm(eef.trans - grasp.trans) < ATTACH_RADIUS:
                self.attached = True
                self._held_offset = se3.compose(se3.inverse(eef), self.state.rigid.pose)

    def succeeded(self) -> bool:
        return sc.check_success(self.state, self.spec.predicate)


# -- demonstration generation ---------------------------------------------


def _plan_waypoints(model, q0, poses, weights, segment_T=5):
    return planner.track_eef_waypoints(model, q0, poses, weights, segment_T=segment_T)


def _retime_segment(model, waypoints: np.ndarray):
    # Collapse numerically identical consecutive waypoints before retiming.
    keep = [0]
    for i in range(1, waypoints.shape[0]):
        if np.linalg.norm(waypoints[i] - waypoints[keep[-1]]) > 1e-10:
            keep.append(i)
    wp = waypoints[keep]
    if wp.shape[0] < 2:
        return None
    path = retime.path_from_waypoints(wp)
    timed = retime.retime(path, model.v_max, model.a_max)
    _, qs, _ = retime.sample_timed(timed, CONTROL_DT)
    return qs


def generate_episode(spec: TaskSpec, episode: int, vkc_steps: int = 10) -> Demonstration:
    """Reset, synthesize, plan, retime, play back, and validate one episode."""
    env = KinematicEnv(spec, episode)
    model = env.model
    q0 = env.q.copy()
    weights = planner.CostWeights()
    state = env.state

    if spec.name == "drawer":
        obj = state.articulated
        grasp = sc.world_grasp(obj, obj.joint_value)
        approach = act.approach_pose(grasp)
        pre = _plan_waypoints(model, q0, [approach, grasp], weights)
        vkc = act.vkc_eef_trajectory(obj, grasp, obj.joint_value, spec.drawer_goal, vkc_steps)
        manip = _plan_waypoints(model, pre.waypoints[-1], vkc[1:], weights, segment_T=3)
        converged = pre.converged and manip.converged
        segments = [(pre.waypoints, 0.0), (manip.waypoints, 1.0)]
    else:
        held = state.rigid
        grasp = se3.compose(held.pose, held.grasp)
        approach = act.approach_pose(grasp)
        pre = _plan_waypoints(model, q0, [approach, grasp], weights)
        placed = act.align_functional_axes(held, held.pose, state.target, state.target.pose, standoff=0.0)
        eef_goal = se3.compose(placed, held.grasp)
        move = _plan_waypoints(model, pre.waypoints[-1], [eef_goal], weights)
        converged = pre.converged and move.converged
        segments = [(pre.waypoints, 0.0), (move.waypoints, 1.0)]

    obs_rec, act_rec = [], []
    obs = env.reset()
    for waypoints, grip in segments:
        try:
            qs = _retime_segment(model, waypoints)
        except retime.InfeasiblePathError:
            converged = False
            break
        if qs is None:
            continue
        for q_target in qs:
            a = np.concatenate([q_target, [grip]])
            obs_rec.append(obs)
            act_rec.append(a)
            obs = env.step(a)
    # Settling steps: hold the final target so attachment effects land.
    if act_rec:
        for _ in range(3):
            obs_rec.append(obs)
            act_rec.append(act_rec[-1])
            obs = env.step(act_rec[-1])

    success = bool(converged) and env.succeeded() and len(obs_rec) > 0
    if not obs_rec:
        obs_rec = [env.observe()]
        act_rec = [np.concatenate([env.q, [0.0]])]
    return Demonstration(
        task_id=spec.name,
        seed=spec.reset.seed,
        episode=episode,
        success=success,
        observations=np.array(obs_rec, dtype=np.float32),
        actions=np.array(act_rec, dtype=np.float32),
        metadata=dict(state.metadata, converged=bool(converged)),
    )
