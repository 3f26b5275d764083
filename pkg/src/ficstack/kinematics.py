"""Serial-chain model, forward kinematics and geometric Jacobians.

Frames: joint ``i`` sits at ``parent @ origin_i``; link ``i`` is the joint
frame after the joint motion.  Jacobian rows are ordered (linear; angular),
both expressed in the world frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SCHEMA_VERSION = 1
_TOL = 1e-9


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation for a unit ``axis``."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis roll-pitch-yaw (Rz @ Ry @ Rx)."""
    return (rotation_about((0.0, 0.0, 1.0), yaw) @ rotation_about((0.0, 1.0, 0.0), pitch)
            @ rotation_about((1.0, 0.0, 0.0), roll))


@dataclass(frozen=True)
class Transform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_translation(cls, xyz) -> "Transform":
        return cls(np.eye(3), xyz)

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Transform":
        Rt = self.rotation.T
        return Transform(Rt, -Rt @ self.translation)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def is_valid(self, tol: float = _TOL) -> bool:
        R = self.rotation
        return (np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0)
                and abs(np.linalg.det(R) - 1.0) <= tol
                and bool(np.all(np.isfinite(self.translation))))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "Transform":
        if d is None:
            return cls()
        if "rpy" in d and "rotation" not in d:
            R = rpy_matrix(*d["rpy"])
        else:
            R = d.get("rotation", np.eye(3))
        return cls(R, d.get("translation", [0.0, 0.0, 0.0]))


@dataclass(frozen=True)
class JointSpec:
    kind: str
    axis: np.ndarray
    origin: Transform = field(default_factory=Transform)
    limits: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > _TOL:
            raise ValueError(f"joint axis must be unit length, got {axis}")
        object.__setattr__(self, "axis", axis)
        if not self.origin.is_valid():
            raise ValueError("joint origin rotation is not a proper rotation")
        if self.limits is not None:
            lo, hi = self.limits
            if not lo < hi:
                raise ValueError(f"bad joint limits {self.limits}")

    def motion(self, q: float) -> Transform:
        if self.kind == "revolute":
            return Transform(rotation_about(self.axis, q), np.zeros(3))
        return Transform(np.eye(3), self.axis * q)


@dataclass(frozen=True)
class LinkInertia:
    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        if self.mass <= 0.0:
            raise ValueError("link mass must be positive")
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        if not np.allclose(inertia, inertia.T, atol=_TOL):
            raise ValueError("inertia matrix must be symmetric")
        if np.linalg.eigvalsh(inertia).min() <= 0.0:
            raise ValueError("inertia matrix must be positive definite")
        object.__setattr__(self, "inertia", inertia)


@dataclass(frozen=True)
class ChainModel:
    joints: tuple[JointSpec, ...]
    links: tuple[LinkInertia, ...]
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    named_frames: dict = field(default_factory=dict)
    name: str = "chain"

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        if len(self.joints) < 1:
            raise ValueError("a chain needs at least one joint")
        if len(self.links) != len(self.joints):
            raise ValueError("one link inertia per joint is required")
        frames = {}
        for name, (link, offset) in self.named_frames.items():
            if not 0 <= int(link) < len(self.joints):
                raise ValueError(f"frame {name!r} references missing link {link}")
            frames[name] = (int(link), offset if isinstance(offset, Transform)
                            else Transform.from_dict(offset))
        object.__setattr__(self, "named_frames", frames)

    @property
    def n(self) -> int:
        return len(self.joints)

    def frame_link(self, frame: str) -> int:
        try:
            return self.named_frames[frame][0]
        except KeyError:
            raise KeyError(f"unknown frame {frame!r}; known: {sorted(self.named_frames)}") from None

    def with_gravity(self, gravity) -> "ChainModel":
        return ChainModel(self.joints, self.links, np.asarray(gravity, dtype=float),
                          self.named_frames, self.name)

    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] if j.limits else -np.inf for j in self.joints])

    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] if j.limits else np.inf for j in self.joints])

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "gravity": self.gravity.tolist(),
            "joints": [
                {"kind": j.kind, "axis": j.axis.tolist(), "origin": j.origin.to_dict(),
                 **({"limits": list(j.limits)} if j.limits else {})}
                for j in self.joints
            ],
            "links": [
                {"mass": l.mass, "com": l.com.tolist(), "inertia": l.inertia.tolist()}
                for l in self.links
            ],
            "named_frames": {
                k: {"link": link, "offset": off.to_dict()}
                for k, (link, off) in self.named_frames.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainModel":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported robot schema {d.get('schema')!r}")
        joints = [JointSpec(j["kind"], j["axis"], Transform.from_dict(j.get("origin")),
                            tuple(j["limits"]) if j.get("limits") else None)
                  for j in d["joints"]]
        links = [LinkInertia(l["mass"], l["com"], l["inertia"]) for l in d["links"]]
        frames = {k: (v["link"], Transform.from_dict(v.get("offset")))
                  for k, v in d.get("named_frames", {}).items()}
        return cls(joints, links, d.get("gravity", [0.0, 0.0, -9.81]), frames,
                   d.get("name", "chain"))


def load_model(path) -> ChainModel:
    with open(path) as f:
        return ChainModel.from_dict(json.load(f))


_ROBOT_DIR = Path(__file__).parent / "presets" / "robots"


def builtin_model(name: str) -> ChainModel:
    """Robot descriptions shipped with the package (``presets/robots``)."""
    path = _ROBOT_DIR / f"{name}.json"
    if not path.exists():
        known = sorted(p.stem for p in _ROBOT_DIR.glob("*.json"))
        raise KeyError(f"no built-in robot {name!r}; known: {known}")
    return load_model(path)


@dataclass
class FkResult:
    """World poses after one forward-kinematics pass."""

    links: list
    frames: dict
    joint_axes: np.ndarray     # (n, 3) world-frame joint axes
    joint_origins: np.ndarray  # (n, 3) world-frame joint positions

    def __getitem__(self, frame: str) -> Transform:
        return self.frames[frame]


def _check_q(model: ChainModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise ValueError(f"expected {model.n} joint positions, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint positions must be finite")
    return q


def forward_kinematics(model: ChainModel, q) -> FkResult:
    q = _check_q(model, q)
    n = model.n
    R = np.eye(3)
    p = np.zeros(3)
    links = []
    axes = np.empty((n, 3))
    origins = np.empty((n, 3))
    for i, joint in enumerate(model.joints):
        p = R @ joint.origin.translation + p
        R = R @ joint.origin.rotation
        axes[i] = R @ joint.axis
        origins[i] = p
        if joint.kind == "revolute":
            R = R @ rotation_about(joint.axis, q[i])
        else:
            p = p + axes[i] * q[i]
        links.append(Transform(R, p))
    frames = {name: links[link] @ off for name, (link, off) in model.named_frames.items()}
    return FkResult(links, frames, axes, origins)


def point_jacobian(model: ChainModel, fk: FkResult, link: int, point) -> np.ndarray:
    """6×n geometric Jacobian of a world-frame point rigidly attached to ``link``."""
    n = model.n
    J = np.zeros((6, n))
    k = link + 1
    z = fk.joint_axes[:k]
    rev = np.array([j.kind == "revolute" for j in model.joints[:k]])
    lin = np.cross(z, np.asarray(point) - fk.joint_origins[:k])
    J[:3, :k] = np.where(rev[:, None], lin, z).T
    J[3:, :k] = np.where(rev[:, None], z, 0.0).T
    return J


def geometric_jacobian(model: ChainModel, q, frame: str, fk: Optional[FkResult] = None) -> np.ndarray:
    link = model.frame_link(frame)
    if fk is None:
        fk = forward_kinematics(model, q)
    return point_jacobian(model, fk, link, fk.frames[frame].translation)


def wrench_to_torque(J: np.ndarray, h, dof_mask: Optional[Sequence[bool]] = None) -> np.ndarray:
    """Joint torques ``J^T h`` for the masked wrench components."""
    J = np.asarray(J, dtype=float)
    h = np.asarray(h, dtype=float).reshape(6)
    if J.shape[0] != 6:
        raise ValueError(f"Jacobian must have 6 rows, got {J.shape}")
    if dof_mask is not None:
        mask = np.asarray(dof_mask, dtype=bool).reshape(6)
        h = np.where(mask, h, 0.0)
    return J.T @ h
