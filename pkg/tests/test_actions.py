import numpy as np
import pytest

from mobman import actions as ac
from mobman import se3
from mobman.actions import (
    EefWaypointPlan,
    Primitive,
    TaskScriptError,
    Waypoint,
    align_functional_axes,
    approach_pose,
    compose_primitives,
    vkc_eef_trajectory,
)
from mobman.robot import JointSpec
from mobman.scene import ArticulatedObject, RigidObject, SceneState, link_pose, world_grasp
from mobman.se3 import Pose


def hinge(limits=(-2.0, 2.0)):
    joint = JointSpec("revolute", (0, 0, 1), Pose.identity(), limits, 1.0, 1.0)
    return ArticulatedObject(
        base_pose=Pose.planar(1.5, 0.2, 0.4),
        joint=joint,
        link_origin=Pose(trans=(0.6, 0.0, 0.3)),
        handle_grasp=Pose.from_axis_angle((0, 1, 0), 0.5, (0.0, -0.08, 0.0)),
    )


def slider():
    joint = JointSpec("prismatic", (-1, 0, 0), Pose.identity(), (0.0, 0.4), 0.5, 1.0)
    return ArticulatedObject(
        base_pose=Pose.planar(1.0, 0.0, 0.0),
        joint=joint,
        link_origin=Pose.identity(),
        handle_grasp=Pose(trans=(-0.25, 0.0, 0.5)),
    )


def test_vkc_first_pose_is_exact():
    obj = slider()
    eef = world_grasp(obj, 0.0)
    poses = vkc_eef_trajectory(obj, eef, 0.0, 0.3, steps=10)
    assert len(poses) == 10
    assert poses[0] is eef


def test_vkc_prismatic_pure_translation():
    obj = slider()
    eef = world_grasp(obj, 0.0)
    poses = vkc_eef_trajectory(obj, eef, 0.0, 0.4, steps=5)
    for i, pose in enumerate(poses):
        theta = 0.4 * i / 4
        np.testing.assert_allclose(
            pose.trans, eef.trans + theta * np.array([-1.0, 0.0, 0.0]), atol=1e-12)
        _, rot = se3.pose_error(pose, eef)
        assert rot < 1e-12


def test_vkc_rigid_grasp_invariant():
    # The grasp expressed in the moving-link frame must stay constant.
    gen = np.random.default_rng(0)
    for obj in (hinge(), slider()):
        lo, hi = obj.joint.limits
        theta0 = gen.uniform(lo, hi)
        theta1 = gen.uniform(lo, hi)
        eef = se3.compose(world_grasp(obj, theta0), Pose.from_axis_angle((1, 0, 0), 0.3, (0.01, 0, 0.02)))
        poses = vkc_eef_trajectory(obj, eef, theta0, theta1, steps=20)
        ref = se3.compose(se3.inverse(link_pose(obj, theta0)), eef)
        for i, pose in enumerate(poses):
            theta = theta0 + (theta1 - theta0) * i / 19
            rel = se3.compose(se3.inverse(link_pose(obj, theta)), pose)
            pos, rot = se3.pose_error(rel, ref)
            assert pos < 1e-9 and rot < 1e-9


def test_vkc_rejects_bad_args():
    obj = slider()
    eef = world_grasp(obj, 0.0)
    with pytest.raises(ValueError):
        vkc_eef_trajectory(obj, eef, 0.0, 0.2, steps=1)
    with pytest.raises(ValueError):
        vkc_eef_trajectory(obj, eef, 0.0, 0.9)


def axis_obj(point, direction, pose=Pose.identity()):
    direction = np.asarray(direction, dtype=np.float64)
    return RigidObject(pose=pose, grasp=Pose.identity(),
                       functional_axis=(np.asarray(point, dtype=np.float64),
                                        direction / np.linalg.norm(direction)))


def test_align_functional_axes_antiparallel_and_coincident():
    held = axis_obj((0.02, 0.0, 0.1), (0, 0, 1))
    target = axis_obj((0.0, 0.0, 0.05), (1, 0, 0), pose=Pose.planar(1.0, 0.5, 0.7))
    gen = np.random.default_rng(1)
    for _ in range(50):
        held_pose = Pose.from_axis_angle(gen.normal(size=3), gen.uniform(-2, 2), gen.uniform(-1, 1, 3))
        placed = align_functional_axes(held, held_pose, target, target.pose)
        d_held = placed.rotate(held.functional_axis[1])
        d_target = target.pose.rotate(target.functional_axis[1])
        assert np.dot(d_held, d_target) < -1.0 + 1e-9
        p_held = placed.apply(held.functional_axis[0])
        p_target = target.pose.apply(target.functional_axis[0])
        assert np.linalg.norm(p_held - p_target) < 1e-9


def test_align_functional_axes_standoff():
    held = axis_obj((0, 0, 0), (0, 0, 1))
    target = axis_obj((0, 0, 0), (1, 0, 0), pose=Pose(trans=(2.0, 0.0, 0.0)))
    placed = align_functional_axes(held, Pose.identity(), target, target.pose, standoff=0.1)
    np.testing.assert_allclose(placed.apply(np.zeros(3)), [2.1, 0.0, 0.0], atol=1e-12)


def test_align_minimal_rotation():
    # A small misalignment should be fixed by a correspondingly small rotation.
    held = axis_obj((0, 0, 0), (0, 0, 1))
    target = axis_obj((0, 0, 0), (0, 0, -1))
    tilt = Pose.from_axis_angle((1, 0, 0), 0.05)
    placed = align_functional_axes(held, tilt, target, Pose.identity())
    _, rot = se3.pose_error(placed, tilt)
    assert rot < 0.05 + 1e-9


def test_align_requires_axes():
    plain = RigidObject(pose=Pose.identity(), grasp=Pose.identity())
    with pytest.raises(ValueError):
        align_functional_axes(plain, Pose.identity(), plain, Pose.identity())


def grasp_scene():
    obj = slider()
    return SceneState(obj, None, None, np.zeros(3), 1.0, 0, 0)


def test_compose_primitives_phase_inference():
    scene = grasp_scene()
    grasp = world_grasp(scene.articulated, 0.0)
    plan = compose_primitives(
        [
            Primitive("move-whole-body", target=approach_pose(grasp)),
            Primitive("move-whole-body", target=grasp),
            Primitive("gripper-close"),
            Primitive("move-whole-body", target=Pose(grasp.quat, grasp.trans + np.array([-0.3, 0, 0]))),
            Primitive("gripper-open"),
            Primitive("move-whole-body", target=approach_pose(grasp)),
        ],
        scene,
    )
    assert plan.phases() == ["approach", "grasp", "manipulate", "retreat"]
    grippers = [w.gripper for w in plan.waypoints]
    assert grippers == ["hold", "hold", "close", "close", "open", "hold"]


def test_gripper_close_needs_nearby_grasp():
    scene = grasp_scene()
    far = Pose(trans=(5.0, 5.0, 0.0))
    with pytest.raises(TaskScriptError):
        compose_primitives(
            [Primitive("move-whole-body", target=far), Primitive("gripper-close")], scene)


def test_compose_rejects_bad_scripts():
    with pytest.raises(TaskScriptError):
        compose_primitives([])
    with pytest.raises(TaskScriptError):
        compose_primitives([Primitive("gripper-close")])
    with pytest.raises(TaskScriptError):
        compose_primitives([Primitive("levitate", target=Pose.identity())])
    with pytest.raises(TaskScriptError):
        compose_primitives([Primitive("move-base")])


def test_waypoint_validation():
    with pytest.raises(ValueError):
        Waypoint(Pose.identity(), gripper="clench")
    with pytest.raises(ValueError):
        Waypoint(Pose.identity(), phase="loiter")
    with pytest.raises(TaskScriptError):
        EefWaypointPlan([])


def test_primitive_modes_pass_through():
    plan = compose_primitives(
        [
            Primitive("move-base", target=Pose.planar(1.0, 0.0, 0.0)),
            Primitive("move-arm", target=Pose(trans=(1.2, 0.0, 0.5))),
        ]
    )
    assert [w.mode for w in plan.waypoints] == ["base-only", "arm-only"]


def test_approach_pose_offsets_along_minus_z():
    grasp = Pose.from_axis_angle((0, 1, 0), np.pi / 2, (1.0, 0.0, 0.5))
    pre = approach_pose(grasp, offset=0.08)
    # Grasp z axis points along world -x after Ry(90), so -z offset is +x... check via frame math.
    expected = grasp.apply(np.array([0.0, 0.0, -0.08]))
    np.testing.assert_allclose(pre.trans, expected, atol=1e-12)
    np.testing.assert_allclose(pre.quat, grasp.quat, atol=1e-12)


def test_load_task_script(tmp_path):
    text = """
primitives:
  - kind: move-whole-body
    target: {xyz: [1.0, 0.0, 0.5]}
  - kind: gripper-close
    phase: grasp
  - kind: move-whole-body
    waypoints:
      - {xyz: [0.9, 0.0, 0.5]}
      - {xyz: [0.8, 0.0, 0.5]}
"""
    path = tmp_path / "script.yaml"
    path.write_text(text)
    prims = ac.load_task_script(path)
    assert len(prims) == 3
    assert prims[0].kind == "move-whole-body"
    assert prims[1].phase == "grasp"
    assert len(prims[2].waypoints) == 2
