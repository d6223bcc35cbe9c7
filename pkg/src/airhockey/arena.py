"""Placement of the arm relative to the table and its home pose.

Table frame: origin at the table centre, x along the long side towards the
opponent, z up with the mallet plane at z = 0. The arm stands behind the home
goal.
"""
from __future__ import annotations

import numpy as np

from .hit_optimizer import damped_ik
from .kinematics import RigidTransform, default_chain, fk_position

ROBOT_BASE = np.array([-1.51, 0.0, -0.1645])
# seed pose for the home IK: elbow up, mallet in front of the home goal
HOME_SEED = np.array([0.0, -0.1961, 0.0, -1.8436, 0.0, 0.9704, 0.0])
HOME_XY = np.array([-0.95, 0.0])


def table_arm(base=ROBOT_BASE, side="home"):
    """Default arm with its base placed in the table frame.

    The ``away`` arm is the mirror placement (rotated by pi about z).
    """
    base = np.asarray(base, dtype=float)
    if side == "home":
        return default_chain().with_base(RigidTransform(np.eye(3), base))
    rot = np.diag([-1.0, -1.0, 1.0])
    return default_chain().with_base(RigidTransform(rot, rot @ base))


def home_configuration(chain, home_xy=HOME_XY, side="home"):
    """Joint vector placing the mallet at ``home_xy`` on the table plane.

    ``home_xy`` is given for the home side; the away arm uses the mirrored point.
    """
    seed = HOME_SEED.copy()
    target = np.array([home_xy[0], home_xy[1], 0.0])
    if side == "away":
        target[:2] = -target[:2]
    q = damped_ik(chain, target, seed, tol=1e-13, max_iter=500)
    if q is None or np.linalg.norm(fk_position(chain, q) - target) > 1e-9:
        raise RuntimeError("home position is not reachable with this arm placement")
    return q
