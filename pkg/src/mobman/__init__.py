"""Whole-body demonstration synthesis and imitation learning for mobile manipulators.

The package covers the full pipeline: SE(3) pose algebra, kinematics of a
planar-base mobile manipulator, articulated/rigid scene models with randomized
resets, end-effector action synthesis, whole-body trajectory optimization,
time-optimal retiming, point-cloud preprocessing, a flow-matching policy, and
bit-exact dataset serialization.
"""

from mobman.se3 import Pose, Twist

__all__ = ["Pose", "Twist"]
__version__ = "0.1.0"
