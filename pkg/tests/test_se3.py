import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobman import se3
from mobman.se3 import Pose, Twist


def random_pose(gen):
    axis = gen.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = gen.uniform(-3.0, 3.0)
    return Pose.from_axis_angle(axis, angle, gen.uniform(-2, 2, size=3))


def test_identity_compose():
    p = Pose.from_axis_angle((0, 0, 1), 0.7, (1.0, -0.5, 2.0))
    for result in (se3.compose(Pose.identity(), p), se3.compose(p, Pose.identity())):
        assert se3.pose_error(result, p) == (0.0, 0.0)


def test_compose_with_inverse_is_identity():
    gen = np.random.default_rng(0)
    for _ in range(50):
        p = random_pose(gen)
        pos, rot = se3.pose_error(se3.compose(p, se3.inverse(p)), Pose.identity())
        assert pos < 1e-9 and rot < 1e-9


def test_compose_rotates_translation():
    a = Pose.from_axis_angle((0, 0, 1), np.pi / 2, (1.0, 0.0, 0.0))
    b = Pose(trans=(1.0, 0.0, 0.0))
    c = se3.compose(a, b)
    # Rz(90) applied to (1,0,0) lands at (0,1,0), offset by a's translation.
    np.testing.assert_allclose(c.trans, [1.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(c.quat, a.quat, atol=1e-12)


def test_associativity():
    gen = np.random.default_rng(1)
    for _ in range(100):
        a, b, c = (random_pose(gen) for _ in range(3))
        lhs = se3.compose(se3.compose(a, b), c)
        rhs = se3.compose(a, se3.compose(b, c))
        pos, rot = se3.pose_error(lhs, rhs)
        assert pos < 1e-9 and rot < 1e-9


def test_log_of_identity_is_zero():
    t = se3.log_map(Pose.identity())
    assert np.allclose(t.angular, 0) and np.allclose(t.linear, 0)


def test_exp_pure_rotation():
    p = se3.exp_map(Twist((0.0, 0.0, np.pi / 2), (0.0, 0.0, 0.0)))
    expected = Pose.from_axis_angle((0, 0, 1), np.pi / 2)
    pos, rot = se3.pose_error(p, expected)
    assert pos < 1e-12 and rot < 1e-12


def test_exp_log_round_trip_sweep():
    gen = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        p = random_pose(gen)
        q = se3.exp_map(se3.log_map(p))
        pos, rot = se3.pose_error(p, q)
        worst = max(worst, pos, rot)
    assert worst < 1e-9


def test_log_near_pi_raises():
    p = Pose.from_axis_angle((1, 0, 0), np.pi - 1e-9)
    with pytest.raises(se3.NearSingularRotationError):
        se3.log_map(p)


def test_small_angle_round_trip():
    p = Pose.from_axis_angle((0, 1, 0), 1e-7, (0.1, 0.0, 0.0))
    pos, rot = se3.pose_error(se3.exp_map(se3.log_map(p)), p)
    assert pos < 1e-12 and rot < 1e-12


def test_pose_error_trivial():
    p = Pose.from_axis_angle((0, 1, 0), 0.4, (1, 2, 3))
    assert se3.pose_error(p, p) == (0.0, 0.0)
    q = Pose(p.quat, p.trans + np.array([0.0, 0.0, 0.3]))
    pos, rot = se3.pose_error(p, q)
    assert abs(pos - 0.3) < 1e-12 and rot < 1e-12


def test_pose_error_vs_quaternion_angle_oracle():
    gen = np.random.default_rng(3)
    for _ in range(100):
        a, b = random_pose(gen), random_pose(gen)
        _, rot = se3.pose_error(a, b)
        oracle = 2.0 * np.arccos(min(1.0, abs(float(np.dot(a.quat, b.quat)))))
        assert abs(rot - oracle) < 1e-7


def test_quaternion_canonical_sign_and_norm():
    p = Pose(quat=(-0.5, 0.5, 0.5, 0.5))
    assert p.quat[0] >= 0
    assert abs(np.linalg.norm(p.quat) - 1.0) < 1e-9
    gen = np.random.default_rng(4)
    for _ in range(100):
        c = se3.compose(random_pose(gen), random_pose(gen))
        assert abs(np.linalg.norm(c.quat) - 1.0) < 1e-9


def test_array_round_trip_layout():
    p = Pose.from_axis_angle((0, 0, 1), 1.0, (0.1, 0.2, 0.3))
    a = p.as_array()
    assert a.shape == (7,)
    np.testing.assert_allclose(a[4:], [0.1, 0.2, 0.3])
    pos, rot = se3.pose_error(Pose.from_array(a), p)
    assert pos < 1e-12 and rot < 1e-12


finite = st.floats(-2.0, 2.0, allow_nan=False)
angles = st.floats(-3.0, 3.0, allow_nan=False)


@st.composite
def poses(draw):
    axis = np.array([draw(finite), draw(finite), draw(finite)])
    if np.linalg.norm(axis) < 1e-6:
        axis = np.array([0.0, 0.0, 1.0])
    trans = (draw(finite), draw(finite), draw(finite))
    return Pose.from_axis_angle(axis, draw(angles), trans)


@settings(max_examples=50, deadline=None)
@given(poses())
def test_inverse_is_involution(p):
    pos, rot = se3.pose_error(se3.inverse(se3.inverse(p)), p)
    assert pos < 1e-9 and rot < 1e-9


@settings(max_examples=50, deadline=None)
@given(poses(), st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=5))
def test_apply_matches_compose_on_points(p, points):
    pts = np.array(points)
    direct = p.apply(pts)
    via_compose = np.array([se3.compose(p, Pose(trans=x)).trans for x in pts])
    assert np.abs(direct - via_compose).max() < 1e-9


def test_interpolate_pose_endpoints_and_midpoint():
    a = Pose.planar(0.0, 0.0, 0.0)
    b = Pose.planar(1.0, 0.0, np.pi / 2)
    for alpha, ref in ((0.0, a), (1.0, b)):
        pos, rot = se3.pose_error(se3.interpolate_pose(a, b, alpha), ref)
        assert pos < 1e-9 and rot < 1e-9
    mid = se3.interpolate_pose(a, b, 0.5)
    _, rot = se3.pose_error(a, mid)
    assert abs(rot - np.pi / 4) < 1e-9
