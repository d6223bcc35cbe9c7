"""Serial-chain kinematics for a 7-DoF revolute arm.

A chain is a base transform, seven revolute joints (each preceded by a fixed
link transform) and a tool offset after the last joint. Everything here is a
pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .config import KeyValueFile, format_kv, parse_kv, read_kv
from .errors import ConfigError, SingularConfiguration

N_JOINTS = 7
SINGULAR_TOL = 1e-8


def _cross(a, b):
    # np.cross has a large fixed overhead; this is the hot path of every solver
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def rpy_matrix(rpy):
    """Rotation matrix from roll-pitch-yaw (extrinsic x, y, z)."""
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def axis_angle_matrix(axis, angle):
    k = np.asarray(axis, dtype=float)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def matrix_to_quaternion(R):
    """Unit quaternion (w, x, y, z) with w >= 0."""
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quaternion_to_matrix(quat):
    w, x, y, z = quat
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __matmul__(self, other):
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def quaternion(self):
        return matrix_to_quaternion(self.rotation)


@dataclass(frozen=True)
class Joint:
    """Revolute joint: fixed link transform, then rotation about ``axis`` (local frame)."""

    axis: np.ndarray
    link: RigidTransform = field(default_factory=RigidTransform)


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple
    q_min: np.ndarray
    q_max: np.ndarray
    qdot_max: np.ndarray
    base: RigidTransform = field(default_factory=RigidTransform)
    ee_offset: RigidTransform = field(default_factory=RigidTransform)
    name: str = "chain"

    def __post_init__(self):
        n = len(self.joints)
        if n != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} joints, got {n}")
        for k, joint in enumerate(self.joints):
            if abs(np.linalg.norm(joint.axis) - 1.0) > 1e-12:
                raise ValueError(f"joint {k + 1} axis is not unit length")
        for arr in (self.q_min, self.q_max, self.qdot_max):
            if np.shape(arr) != (n,):
                raise ValueError("limit vectors must have one entry per joint")
        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be strictly below q_max")
        if not np.all(self.qdot_max > 0):
            raise ValueError("qdot_max must be positive")
        # Precomputed per-joint Rodrigues terms: R(q) = I + sin(q) K + (1 - cos(q)) K^2.
        ks = []
        for joint in self.joints:
            a = joint.axis
            K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
            ks.append((K, K @ K))
        object.__setattr__(self, "_K", np.array([k[0] for k in ks]))
        object.__setattr__(self, "_K2", np.array([k[1] for k in ks]))
        link_R = np.array([j.link.rotation for j in self.joints])
        object.__setattr__(self, "_link_R", link_R)
        object.__setattr__(self, "_link_t", np.array([j.link.translation for j in self.joints]))
        object.__setattr__(self, "_link_axis", np.einsum("nij,nj->ni", link_R, [j.axis for j in self.joints]))

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def qdot_min(self):
        return -self.qdot_max

    def with_base(self, base):
        return replace(self, base=base)

    def within_limits(self, q, tol=0.0):
        q = np.asarray(q)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))


@dataclass
class JointState:
    q: np.ndarray
    qdot: np.ndarray


def _frames(chain, q):
    """World-frame joint origins, joint axes and the tool-tip transform."""
    s = np.sin(q)[:, None, None]
    c = 1.0 - np.cos(q)[:, None, None]
    step = chain._link_R @ (np.eye(3) + s * chain._K + c * chain._K2)
    R = chain.base.rotation
    p = chain.base.translation
    origins = np.empty((chain.n_joints, 3))
    axes = np.empty((chain.n_joints, 3))
    for i in range(chain.n_joints):
        p = p + R @ chain._link_t[i]
        origins[i] = p
        axes[i] = R @ chain._link_axis[i]
        R = R @ step[i]
    tip_p = p + R @ chain.ee_offset.translation
    tip_R = R @ chain.ee_offset.rotation
    return origins, axes, tip_p, tip_R


def forward_kinematics(chain, q):
    """Tool-tip pose for configuration ``q``. Limits are not checked here."""
    _, _, p, R = _frames(chain, np.asarray(q, dtype=float))
    return RigidTransform(R, p)


def fk_position(chain, q):
    return _frames(chain, np.asarray(q, dtype=float))[2]


def position_jacobian(chain, q):
    """3x7 Jacobian of the tool-tip position; column i is ``z_i x (p - o_i)``."""
    origins, axes, p, _ = _frames(chain, np.asarray(q, dtype=float))
    return _cross(axes, p - origins).T


def fk_and_jacobian(chain, q):
    origins, axes, p, _ = _frames(chain, np.asarray(q, dtype=float))
    return p, _cross(axes, p - origins).T


def spatial_jacobian(chain, q):
    """6x7 geometric Jacobian (linear rows first, then angular)."""
    origins, axes, p, _ = _frames(chain, np.asarray(q, dtype=float))
    return np.vstack([_cross(axes, p - origins).T, axes.T])


def position_jacobian_derivative(chain, q):
    """Return (p, J, dJ) with ``dJ[:, i, j] = d J[:, i] / d q_j``.

    For revolute joints ``dJ_i/dq_j = z_min(i,j) x J_max(i,j)``.
    """
    origins, Z, p, _ = _frames(chain, np.asarray(q, dtype=float))
    J = _cross(Z, p - origins)  # (n, 3), row i = column i of the Jacobian
    n = len(Z)
    upper = _cross(Z[:, None, :], J[None, :, :])  # [i, j] = z_i x J_j
    mask = np.arange(n)[None, :] >= np.arange(n)[:, None]
    dJ = np.where(mask[:, :, None], upper, np.transpose(upper, (1, 0, 2)))
    return p, J.T, np.transpose(dJ, (2, 0, 1))


def directional_jacobian_gradient(chain, q, v):
    """Return (p, J, vJ, G) with ``G[i, j] = d (v^T J)_i / d q_j``."""
    origins, Z, p, _ = _frames(chain, np.asarray(q, dtype=float))
    J = _cross(Z, p - origins)
    M = _cross(v, Z) @ J.T  # M[a, b] = v . (z_a x J_b)
    G = np.triu(M) + np.tril(M.T, -1)
    return p, J.T, J @ v, G


def _checked_svd(J):
    J = np.asarray(J, dtype=float)
    U, s, Vt = np.linalg.svd(J, full_matrices=True)
    if s.size < J.shape[0] or s[-1] < SINGULAR_TOL:
        smallest = 0.0 if s.size < J.shape[0] else s[-1]
        raise SingularConfiguration(f"smallest singular value {smallest:.3e} below {SINGULAR_TOL:g}")
    return U, s, Vt


def pseudoinverse(J):
    """Minimum-norm right inverse ``J^T (J J^T)^-1`` of a full-row-rank matrix."""
    U, s, Vt = _checked_svd(J)
    m = s.size
    return (Vt[:m].T / s) @ U.T


def null_space_basis(J):
    """Orthonormal basis (columns) of the null space of a full-row-rank ``J``.

    Sign and ordering of the columns are not unique; consumers must not depend on them.
    """
    _, s, Vt = _checked_svd(J)
    return Vt[s.size:].T.copy()


def pinv_and_null(J):
    U, s, Vt = _checked_svd(J)
    m = s.size
    return (Vt[:m].T / s) @ U.T, Vt[m:].T.copy()


def manipulability(J):
    """Yoshikawa measure ``sqrt(det(J J^T))``; 0 at singular configurations."""
    J = np.asarray(J, dtype=float)
    d = np.linalg.det(J @ J.T)
    return float(np.sqrt(d)) if d > 0 else 0.0


# -- chain files --------------------------------------------------------------

def chain_from_kv(kv: KeyValueFile):
    joints = []
    for k in range(1, N_JOINTS + 1):
        axis = kv.floats(f"joint{k}.axis", 3)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise kv._error(f"joint{k}.axis", f"joint{k}.axis is zero")
        link = RigidTransform(rpy_matrix(kv.floats(f"joint{k}.rpy", 3, default=np.zeros(3))),
                              kv.floats(f"joint{k}.xyz", 3, default=np.zeros(3)))
        joints.append(Joint(axis / norm, link))
    deg = kv.str_value("units.angle", "rad") == "deg"
    scale = np.pi / 180.0 if deg else 1.0
    q_min = kv.floats("q_min", N_JOINTS) * scale
    q_max = kv.floats("q_max", N_JOINTS) * scale
    qdot_max = kv.floats("qdot_max", N_JOINTS) * scale
    base = RigidTransform(rpy_matrix(kv.floats("base.rpy", 3, default=np.zeros(3))),
                          kv.floats("base.xyz", 3, default=np.zeros(3)))
    ee = RigidTransform(rpy_matrix(kv.floats("ee.rpy", 3, default=np.zeros(3))),
                        kv.floats("ee.xyz", 3, default=np.zeros(3)))
    try:
        return KinematicChain(tuple(joints), q_min, q_max, qdot_max, base, ee,
                              name=kv.str_value("name", "chain"))
    except ValueError as exc:
        raise ConfigError(str(exc), kv.path) from None


def load_chain(path):
    return chain_from_kv(read_kv(path))


def default_chain():
    """7-DoF arm with the public LBR iiwa 14 R820 dimensions and a 515 mm tool."""
    text = resources.files("airhockey.data").joinpath("iiwa14.chain").read_text()
    return chain_from_kv(parse_kv(text, "iiwa14.chain"))


def chain_to_kv(chain):
    """Serialize a chain (angles in radians) to the key-value format."""
    def rpy(R):
        pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
        return [np.arctan2(R[2, 1], R[2, 2]), pitch, np.arctan2(R[1, 0], R[0, 0])]

    items = [("name", chain.name), ("units.angle", "rad"),
             ("base.xyz", chain.base.translation), ("base.rpy", rpy(chain.base.rotation))]
    for k, joint in enumerate(chain.joints, start=1):
        items += [(f"joint{k}.axis", joint.axis), (f"joint{k}.xyz", joint.link.translation),
                  (f"joint{k}.rpy", rpy(joint.link.rotation))]
    items += [("ee.xyz", chain.ee_offset.translation), ("ee.rpy", rpy(chain.ee_offset.rotation)),
              ("q_min", chain.q_min), ("q_max", chain.q_max), ("qdot_max", chain.qdot_max)]
    return format_kv(items)
