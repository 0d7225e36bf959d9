"""Differentiable forward kinematics for a serial arm on a mobile base.

The base configuration is (x, y, z, omega): a 3D position plus a yaw
rotation about the world z-axis. The end-effector world position is

    p_world = Rz(omega) @ p_arm(q) + (x, y, z)

where p_arm chains the mount transform, per-joint origin and motion
transforms, and the end-effector offset. Because the base enters only
through a rigid motion, the derivative of p_world w.r.t. (x, y, z) is the
identity and w.r.t. omega is dRz/domega @ p_arm, which this module
computes in closed form.

Chains load from a small line-based text format::

    chain <name>
    mount <x> <y> <z> <roll> <pitch> <yaw>
    link <name>
    joint <name> revolute|prismatic <parent> <child> axis <ax> <ay> <az> \
          origin <x> <y> <z> <roll> <pitch> <yaw> limits <lo> <hi>
    ee <parent-link> <x> <y> <z> <roll> <pitch> <yaw>

Branching (a link with two child joints) is rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigurationError, LimitError, ParseError, ShapeError


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def drot_z(a):
    """Derivative of rot_z with respect to the angle."""
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0], [c, -s, 0], [0, 0, 0]])


def rpy_matrix(roll, pitch, yaw):
    """Fixed-axis roll-pitch-yaw convention: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def axis_rotation_batch(axis, angles):
    """Rodrigues rotation about a unit axis for a batch of angles -> (n,3,3)."""
    angles = np.asarray(angles, dtype=float)
    c = np.cos(angles)[:, None, None]
    s = np.sin(angles)[:, None, None]
    a = np.asarray(axis, dtype=float)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    aa = np.outer(a, a)
    return c * np.eye(3) + s * K + (1 - c) * aa


def _rotate_batch_about_axis(R, axis, angles):
    """Right-multiply each (3,3) in R by a rotation about ``axis``.

    Canonical axes reduce to two-column recombinations, which is several
    times cheaper than batched matrix products in the FK hot loop.
    """
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    out = np.empty_like(R)
    if axis[0] == 0.0 and axis[1] == 0.0 and abs(axis[2]) == 1.0:
        if axis[2] < 0:
            s = -s
        out[:, :, 0] = c * R[:, :, 0] + s * R[:, :, 1]
        out[:, :, 1] = c * R[:, :, 1] - s * R[:, :, 0]
        out[:, :, 2] = R[:, :, 2]
        return out
    if axis[0] == 0.0 and abs(axis[1]) == 1.0 and axis[2] == 0.0:
        if axis[1] < 0:
            s = -s
        out[:, :, 0] = c * R[:, :, 0] - s * R[:, :, 2]
        out[:, :, 1] = R[:, :, 1]
        out[:, :, 2] = c * R[:, :, 2] + s * R[:, :, 0]
        return out
    if abs(axis[0]) == 1.0 and axis[1] == 0.0 and axis[2] == 0.0:
        if axis[0] < 0:
            s = -s
        out[:, :, 0] = R[:, :, 0]
        out[:, :, 1] = c * R[:, :, 1] + s * R[:, :, 2]
        out[:, :, 2] = c * R[:, :, 2] - s * R[:, :, 1]
        return out
    return R @ axis_rotation_batch(axis, angles)


@dataclass(eq=False)
class JointSpec:
    name: str
    kind: str  # revolute | prismatic
    axis: np.ndarray
    origin_rotation: np.ndarray
    origin_translation: np.ndarray
    lower: float
    upper: float

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(self.axis)
        if abs(norm - 1.0) > 1e-9:
            if norm < 1e-12:
                raise ConfigurationError(f"joint {self.name}: zero axis")
            self.axis = self.axis / norm
        if self.kind not in ("revolute", "prismatic"):
            raise ConfigurationError(f"joint {self.name}: unknown kind {self.kind!r}")
        if self.lower > self.upper:
            raise ConfigurationError(f"joint {self.name}: lower limit exceeds upper")
        self.origin_rotation = np.asarray(self.origin_rotation, dtype=float).reshape(3, 3)
        self.origin_translation = np.asarray(self.origin_translation, dtype=float).reshape(3)
        self._origin_identity = bool(np.array_equal(self.origin_rotation, np.eye(3)))


@dataclass(eq=False)
class KinematicChain:
    joints: list
    mount_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    mount_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ee_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    ee_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = "chain"

    def __post_init__(self):
        if not self.joints:
            raise ConfigurationError("chain needs at least one joint")

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def lower(self):
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self):
        return np.array([j.upper for j in self.joints])


@dataclass
class BaseConfig:
    """Mobile base state: position plus yaw.

    omega is stored unwrapped so box clamping stays meaningful; the pose
    only depends on it modulo 2*pi.
    """

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    omega: float = 0.0

    def as_array(self):
        return np.array([self.x, self.y, self.z, self.omega], dtype=float)

    @classmethod
    def from_array(cls, arr):
        x, y, z, omega = (float(v) for v in arr)
        return cls(x, y, z, omega)


def _check_joints(chain, Q):
    Q = np.asarray(Q, dtype=float)
    single = Q.ndim == 1
    Q2 = np.atleast_2d(Q)
    if Q2.shape[1] != chain.n_joints:
        raise ShapeError(f"expected {chain.n_joints} joint values, got {Q2.shape[1]}")
    lo, hi = chain.lower, chain.upper
    tol = 1e-9
    if (Q2 < lo - tol).any() or (Q2 > hi + tol).any():
        bad = np.argwhere((Q2 < lo - tol) | (Q2 > hi + tol))[0]
        raise LimitError(
            f"joint {chain.joints[bad[1]].name} value {Q2[bad[0], bad[1]]:.6g} outside "
            f"[{lo[bad[1]]:.6g}, {hi[bad[1]]:.6g}]")
    return Q2, single


def chain_pose_batch(chain: KinematicChain, Q) -> tuple[np.ndarray, np.ndarray]:
    """Arm-frame end-effector poses for a batch of joint vectors.

    Returns (R, t) with shapes (n, 3, 3) and (n, 3): the pose of the
    end-effector relative to the base, before the world transform.
    """
    Q, _ = _check_joints(chain, Q)
    n = len(Q)
    R = np.broadcast_to(chain.mount_rotation, (n, 3, 3)).copy()
    t = np.broadcast_to(chain.mount_translation, (n, 3)).copy()
    for j, joint in enumerate(chain.joints):
        # fixed origin transform
        t = R @ joint.origin_translation + t
        if not joint._origin_identity:
            R = R @ joint.origin_rotation
        # joint motion
        if joint.kind == "revolute":
            R = _rotate_batch_about_axis(R, joint.axis, Q[:, j])
        else:
            t = t + (R @ joint.axis) * Q[:, j][:, None]
    t = np.einsum("nij,j->ni", R, chain.ee_translation) + t
    R = R @ chain.ee_rotation
    return R, t


def base_pose(base: BaseConfig) -> tuple[np.ndarray, np.ndarray]:
    return rot_z(base.omega), np.array([base.x, base.y, base.z])


def forward_batch(chain: KinematicChain, Q, base: BaseConfig | None = None) -> np.ndarray:
    """End-effector world positions (n, 3); arm-frame when base is None."""
    _, t = chain_pose_batch(chain, Q)
    if base is None:
        return t
    Rw, tw = base_pose(base)
    return t @ Rw.T + tw


def forward(chain: KinematicChain, q, base: BaseConfig | None = None) -> np.ndarray:
    """End-effector world position for one joint vector."""
    return forward_batch(chain, np.atleast_2d(q), base)[0]


def forward_pose(chain: KinematicChain, q, base: BaseConfig | None = None):
    """Full end-effector pose (rotation, position)."""
    R, t = chain_pose_batch(chain, np.atleast_2d(q))
    if base is None:
        return R[0], t[0]
    Rw, tw = base_pose(base)
    return Rw @ R[0], Rw @ t[0] + tw


def base_jacobian(chain: KinematicChain, q, base: BaseConfig) -> np.ndarray:
    """3x4 derivative of the end-effector position w.r.t. (x, y, z, omega)."""
    p_arm = forward(chain, q)
    J = np.zeros((3, 4))
    J[:, :3] = np.eye(3)
    J[:, 3] = drot_z(base.omega) @ p_arm
    return J


def sample_joints(chain: KinematicChain, count: int, seed) -> np.ndarray:
    """Independent uniform joint samples within the limits, (count, n_joints)."""
    if count <= 0:
        raise ConfigurationError("sample count must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(chain.lower, chain.upper, (count, chain.n_joints))


def reach(chain: KinematicChain, samples: int = 100_000, seed: int = 0) -> float:
    """Max arm-frame end-effector distance over uniform joint samples."""
    Q = sample_joints(chain, samples, seed)
    return float(np.linalg.norm(forward_batch(chain, Q), axis=1).max())


def joint_world_frames(chain: KinematicChain, q, base: BaseConfig):
    """Per-joint world axis directions and origins (for IK Jacobians).

    Returns (axes, origins, p_ee): axes and origins are (n_joints, 3); the
    axis is the joint's motion axis in world coordinates and the origin is
    the position of the joint after its own motion.
    """
    q, _ = _check_joints(chain, q)
    q = q[0]
    Rw, tw = base_pose(base)
    R = Rw @ chain.mount_rotation
    t = Rw @ chain.mount_translation + tw
    axes = np.zeros((chain.n_joints, 3))
    origins = np.zeros((chain.n_joints, 3))
    for j, joint in enumerate(chain.joints):
        t = R @ joint.origin_translation + t
        R = R @ joint.origin_rotation
        axes[j] = R @ joint.axis
        origins[j] = t
        if joint.kind == "revolute":
            R = R @ axis_rotation_batch(joint.axis, np.array([q[j]]))[0]
        else:
            t = t + axes[j] * q[j]
    p_ee = R @ chain.ee_translation + t
    return axes, origins, p_ee


def joint_jacobian(chain: KinematicChain, q, base: BaseConfig) -> np.ndarray:
    """3 x n_joints position Jacobian w.r.t. joint values."""
    axes, origins, p_ee = joint_world_frames(chain, q, base)
    J = np.zeros((3, chain.n_joints))
    for j, joint in enumerate(chain.joints):
        if joint.kind == "revolute":
            J[:, j] = np.cross(axes[j], p_ee - origins[j])
        else:
            J[:, j] = axes[j]
    return J


def _floats(tokens, count, path, lineno, what):
    if len(tokens) < count:
        raise ParseError(f"expected {count} numbers for {what}", path, lineno)
    try:
        return [float(v) for v in tokens[:count]], tokens[count:]
    except ValueError as exc:
        raise ParseError(f"bad number in {what}: {exc}", path, lineno)


def load_chain(path) -> KinematicChain:
    """Parse the serial-chain description format documented above."""
    with open(path) as fh:
        lines = fh.readlines()

    name = "chain"
    links: set[str] = set()
    mount = None
    ee = None  # (parent, R, t)
    raw_joints = []  # (lineno, name, kind, parent, child, spec)

    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()
        head, rest = tokens[0], tokens[1:]
        if head == "chain":
            if not rest:
                raise ParseError("chain declaration needs a name", path, lineno)
            name = rest[0]
        elif head == "link":
            if not rest:
                raise ParseError("link declaration needs a name", path, lineno)
            links.add(rest[0])
        elif head == "mount":
            vals, _ = _floats(rest, 6, path, lineno, "mount")
            mount = (rpy_matrix(*vals[3:]), np.array(vals[:3]))
        elif head == "ee":
            if not rest:
                raise ParseError("ee declaration needs a parent link", path, lineno)
            vals, _ = _floats(rest[1:], 6, path, lineno, "ee")
            ee = (rest[0], rpy_matrix(*vals[3:]), np.array(vals[:3]))
        elif head == "joint":
            if len(rest) < 4:
                raise ParseError("joint needs: name kind parent child ...", path, lineno)
            jname, kind, parent, child = rest[:4]
            fields = rest[4:]
            spec = {}
            while fields:
                key = fields[0]
                if key == "axis":
                    spec["axis"], fields = _floats(fields[1:], 3, path, lineno, "axis")
                elif key == "origin":
                    spec["origin"], fields = _floats(fields[1:], 6, path, lineno, "origin")
                elif key == "limits":
                    spec["limits"], fields = _floats(fields[1:], 2, path, lineno, "limits")
                else:
                    raise ParseError(f"unknown joint field {key!r}", path, lineno)
            for req in ("axis", "origin", "limits"):
                if req not in spec:
                    raise ParseError(f"joint {jname} missing {req}", path, lineno)
            raw_joints.append((lineno, jname, kind, parent, child, spec))
        else:
            raise ParseError(f"unknown directive {head!r}", path, lineno)

    if not raw_joints:
        raise ParseError("no joints declared", path)

    by_parent: dict[str, list] = {}
    children = set()
    for entry in raw_joints:
        lineno, jname, kind, parent, child, spec = entry
        for link, role in ((parent, "parent"), (child, "child")):
            if link not in links:
                raise ParseError(f"joint {jname} references undeclared {role} link {link!r}",
                                 path, lineno)
        if parent in by_parent:
            raise ParseError(
                f"branching unsupported: link {parent!r} has multiple child joints",
                path, lineno)
        by_parent[parent] = entry
        children.add(child)

    roots = [entry for parent, entry in by_parent.items() if parent not in children]
    if len(roots) != 1:
        raise ParseError(f"chain must have exactly one root, found {len(roots)}", path)

    ordered = []
    entry = roots[0]
    while entry is not None:
        ordered.append(entry)
        entry = by_parent.get(entry[4])  # follow child link
    if len(ordered) != len(raw_joints):
        raise ParseError("disconnected joints in chain description", path)

    joints = []
    for lineno, jname, kind, parent, child, spec in ordered:
        o = spec["origin"]
        try:
            joints.append(JointSpec(
                name=jname, kind=kind, axis=np.array(spec["axis"]),
                origin_rotation=rpy_matrix(*o[3:]), origin_translation=np.array(o[:3]),
                lower=spec["limits"][0], upper=spec["limits"][1]))
        except ConfigurationError as exc:
            raise ParseError(str(exc), path, lineno)

    if ee is not None and ee[0] != ordered[-1][4]:
        raise ParseError(f"ee parent {ee[0]!r} is not the chain tip {ordered[-1][4]!r}", path)

    kwargs = {"name": name}
    if mount is not None:
        kwargs["mount_rotation"], kwargs["mount_translation"] = mount
    if ee is not None:
        kwargs["ee_rotation"], kwargs["ee_translation"] = ee[1], ee[2]
    return KinematicChain(joints, **kwargs)


def bundled_chain_path(name: str = "arm6") -> str:
    """Filesystem path of a chain description shipped with the package."""
    return str(resources.files("sketchplace") / "assets" / f"{name}.chain")


def load_bundled_chain(name: str = "arm6") -> KinematicChain:
    return load_chain(bundled_chain_path(name))
