"""Task-space controller attachments and their superimposition into joint
torques.

Each attachment runs one fractal impedance axis per controlled component of
its pose error and maps the resulting wrench through its own Jacobian
transpose.  Attachments are simply summed; there is no inversion or
projection anywhere in this module.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fic_core import FicParams, fic_init, fic_step
from .kinematics import (ChainModel, FkResult, Transform, forward_kinematics,
                         geometric_jacobian, wrench_to_torque)

AXIS_NAMES = ("x", "y", "z", "rx", "ry", "rz")


def _vee(A: np.ndarray) -> np.ndarray:
    return np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])


def rotation_vector(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, angle in [0, pi]."""
    cos_t = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    theta = np.arccos(cos_t)
    v = _vee(R)
    if theta < 1e-6:
        # theta / (2 sin theta) -> 1/2 + theta^2/12
        return (0.5 + theta * theta / 12.0) * v
    if theta < 0.5 * np.pi:
        return theta / (2.0 * np.sin(theta)) * v
    # near pi: axis from the symmetric part, largest diagonal (first on ties)
    S = 0.5 * (R + R.T)
    B = (S - cos_t * np.eye(3)) / (1.0 - cos_t)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(B[k, k])
    axis /= np.linalg.norm(axis)
    if axis @ v < 0.0:
        axis = -axis
    return theta * axis


def pose_error(target: Transform, current: Transform) -> np.ndarray:
    """(translation; rotation vector) error, world frame, ``target - current``."""
    e = np.empty(6)
    e[:3] = target.translation - current.translation
    e[3:] = rotation_vector(target.rotation @ current.rotation.T)
    return e


@dataclass
class TaskAttachment:
    frame: str
    dof_mask: np.ndarray
    pos_params: FicParams
    rot_params: Optional[FicParams] = None
    target: Transform = field(default_factory=Transform)
    axis_states: list = field(default_factory=list)

    def __post_init__(self):
        self.dof_mask = np.asarray(self.dof_mask, dtype=bool).reshape(6)
        if self.dof_mask[3:].any() and self.rot_params is None:
            raise ValueError(f"attachment {self.frame!r}: rotational axes need rot_params")
        if not self.axis_states:
            self.axis_states = [fic_init() for _ in self.active_axes]
        if len(self.axis_states) != len(self.active_axes):
            raise ValueError("one axis state per active axis is required")

    @property
    def active_axes(self) -> list:
        return [int(i) for i in np.flatnonzero(self.dof_mask)]

    def params_for(self, axis: int) -> FicParams:
        return self.pos_params if axis < 3 else self.rot_params

    def force_ceiling(self) -> np.ndarray:
        """Per-component bound on this attachment's wrench (2 * f_max)."""
        c = np.zeros(6)
        for i in self.active_axes:
            c[i] = 2.0 * self.params_for(i).f_max
        return c

    def reset(self) -> None:
        self.axis_states = [fic_init() for _ in self.active_axes]


@dataclass
class ControllerStack:
    attachments: list

    def __post_init__(self):
        if not self.attachments:
            raise ValueError("a stack needs at least one attachment")
        frames = [a.frame for a in self.attachments]
        if len(set(frames)) != len(frames):
            raise ValueError(f"attachment frames must be distinct: {frames}")

    def copy(self) -> "ControllerStack":
        return copy.deepcopy(self)

    def frames(self) -> list:
        return [a.frame for a in self.attachments]

    def __getitem__(self, frame: str) -> TaskAttachment:
        for a in self.attachments:
            if a.frame == frame:
                return a
        raise KeyError(frame)


@dataclass
class StackOutput:
    tau: np.ndarray
    wrenches: dict
    errors: dict
    torques: dict


def stack_step(stack: ControllerStack, model: ChainModel, q,
               targets: Optional[dict] = None, fk: Optional[FkResult] = None) -> StackOutput:
    """One control tick: ``tau = sum_i J_i^T h_i``.

    ``targets`` maps frame name to a desired pose; attachments keep their
    previous target when omitted.  Axis states are advanced in place.
    """
    if fk is None:
        fk = forward_kinematics(model, q)
    tau = np.zeros(model.n)
    wrenches, errors, torques = {}, {}, {}
    for att in stack.attachments:
        if targets is not None and att.frame in targets:
            att.target = targets[att.frame]
        err = pose_error(att.target, fk.frames[att.frame])
        h = np.zeros(6)
        for k, axis in enumerate(att.active_axes):
            h[axis], att.axis_states[k] = fic_step(att.params_for(axis), att.axis_states[k],
                                                   float(err[axis]))
        J = geometric_jacobian(model, q, att.frame, fk=fk)
        t_i = wrench_to_torque(J, h, att.dof_mask)
        tau = tau + t_i
        wrenches[att.frame] = h
        errors[att.frame] = err
        torques[att.frame] = t_i
    if not np.all(np.isfinite(tau)):
        raise FloatingPointError(f"non-finite stack torque {tau}")
    return StackOutput(tau, wrenches, errors, torques)


def saturation_bound(stack: ControllerStack, model: ChainModel, q,
                     fk: Optional[FkResult] = None) -> np.ndarray:
    """Certified per-joint ceiling ``sum_i |J_i^T| (2 f_max)`` on ``|tau|``."""
    if fk is None:
        fk = forward_kinematics(model, q)
    bound = np.zeros(model.n)
    for att in stack.attachments:
        J = geometric_jacobian(model, q, att.frame, fk=fk)
        bound += np.abs(J.T) @ att.force_ceiling()
    return bound


def attachment_from_dict(d: dict, resolve=None) -> TaskAttachment:
    """Build an attachment from its JSON form.  ``resolve`` maps a string
    parameter reference (e.g. ``"sim/ee_pos"``) to a parameter dict."""
    def params(v):
        if v is None:
            return None
        if isinstance(v, str):
            if resolve is None:
                raise ValueError(f"cannot resolve parameter reference {v!r}")
            v = resolve(v)
        return FicParams.from_dict(v)

    mask = d.get("dof_mask", [1, 1, 1, 0, 0, 0])
    return TaskAttachment(d["frame"], [bool(m) for m in mask], params(d["pos_params"]),
                          params(d.get("rot_params")))


def stack_from_list(items: Sequence[dict], resolve=None) -> ControllerStack:
    return ControllerStack([attachment_from_dict(d, resolve) for d in items])
