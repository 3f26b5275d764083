"""Task-space reference trajectories and the one-step postural IK that turns
an end-effector reference into targets for every attachment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .kinematics import ChainModel, Transform, forward_kinematics, geometric_jacobian
from .task_stack import pose_error

KINDS = ("lemniscate", "line", "hold")


@dataclass(frozen=True)
class TrajectorySpec:
    """Periodic end-effector reference.

    ``lemniscate``: ``(0, A_y sin(wt), A_z sin(2wt))`` about the centre, a
    figure-8 whose vertical lobe runs at twice the transverse frequency.
    ``line``: ``amplitudes * sin(wt)``, a back-and-forth stroke along the
    amplitude vector.  ``hold``: the centre pose.  ``w = 2 pi / period``.
    """

    kind: str = "hold"
    center: Transform = field(default_factory=Transform)
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(3))
    period: float = 4.0
    orientation_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {KINDS}")
        if not self.period > 0.0:
            raise ValueError("period must be positive")
        amp = np.asarray(self.amplitudes, dtype=float).reshape(3)
        if np.any(amp < 0.0):
            raise ValueError("amplitudes must be non-negative")
        object.__setattr__(self, "amplitudes", amp)
        if self.orientation_ref is None:
            object.__setattr__(self, "orientation_ref", self.center.rotation.copy())
        else:
            object.__setattr__(self, "orientation_ref",
                               np.asarray(self.orientation_ref, dtype=float).reshape(3, 3))

    def offset(self, t: float) -> np.ndarray:
        w = 2.0 * np.pi / self.period
        if self.kind == "lemniscate":
            A = self.amplitudes
            return np.array([0.0, A[1] * np.sin(w * t), A[2] * np.sin(2.0 * w * t)])
        if self.kind == "line":
            return self.amplitudes * np.sin(w * t)
        return np.zeros(3)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": self.center.to_dict(),
                "amplitudes": self.amplitudes.tolist(), "period": self.period,
                "orientation_ref": self.orientation_ref.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        period = d.get("period")
        if period is None and "peak_speed" in d:
            # line stroke: peak speed = 2 pi |A| / T
            period = 2.0 * np.pi * float(np.linalg.norm(d["amplitudes"])) / float(d["peak_speed"])
        return cls(d.get("kind", "hold"), Transform.from_dict(d.get("center")),
                   d.get("amplitudes", [0.0, 0.0, 0.0]), float(period if period is not None else 4.0),
                   d.get("orientation_ref"))


def sample(spec: TrajectorySpec, t: float) -> Transform:
    """Desired end-effector pose at time ``t``."""
    return Transform(spec.orientation_ref, spec.center.translation + spec.offset(t))


@dataclass(frozen=True)
class IkWeights:
    """Weights of the regularised IK step.

    ``damping`` is the Levenberg-Marquardt lambda (floored at 1e-6),
    ``posture`` pulls toward the prior, ``rotation`` scales the orientation
    residual (0 for position-only references), ``max_step`` bounds each joint
    update in rad.
    """

    damping: float = 1e-2
    posture: float = 1e-3
    rotation: float = 1.0
    max_step: float = 0.2
    backtracks: int = 8

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "IkWeights":
        return cls(**(d or {}))


def postural_ik(model: ChainModel, q_seed, ee_target: Transform, posture_prior=None,
                weights: IkWeights = IkWeights(), frame: str = "ee") -> np.ndarray:
    """One damped least-squares step toward ``ee_target`` with a posture term.

    Solves ``(J^T W J + (lambda^2 + w_p) I) dq = J^T W e + w_p (prior - q)``,
    clamps each joint update to ``max_step`` and halves the step until the
    objective does not increase, then clamps to joint limits.  With zero
    posture weight the objective is the pose error alone, so the returned
    configuration never has a larger end-effector error than the seed.
    """
    q = np.asarray(q_seed, dtype=float).copy()
    prior = q.copy() if posture_prior is None else np.asarray(posture_prior, dtype=float)
    lam = max(weights.damping, 1e-6)
    wp = max(weights.posture, 0.0)
    w_rot = weights.rotation

    def objective(qq):
        fk = forward_kinematics(model, qq)
        e = pose_error(ee_target, fk.frames[frame])
        e[3:] *= w_rot
        return e @ e + wp * float((qq - prior) @ (qq - prior)), e, fk

    f0, e, fk = objective(q)
    J = geometric_jacobian(model, q, frame, fk=fk).copy()
    J[3:] *= w_rot
    A = J.T @ J + (lam * lam + wp) * np.eye(model.n)
    dq = np.linalg.solve(A, J.T @ e + wp * (prior - q))
    peak = np.max(np.abs(dq))
    if peak > weights.max_step:
        dq *= weights.max_step / peak
    lo, hi = model.lower_limits(), model.upper_limits()
    for _ in range(weights.backtracks + 1):
        cand = np.clip(q + dq, lo, hi)
        if objective(cand)[0] <= f0:
            return cand
        dq *= 0.5
    return q


def solve_ik(model: ChainModel, q_seed, ee_target: Transform, posture_prior=None,
             weights: IkWeights = IkWeights(), iterations: int = 200, tol: float = 1e-10,
             frame: str = "ee") -> np.ndarray:
    """Repeat :func:`postural_ik` until the step stalls; used to build start poses."""
    q = np.asarray(q_seed, dtype=float).copy()
    for _ in range(iterations):
        q_new = postural_ik(model, q, ee_target, posture_prior, weights, frame)
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    return q


def attachment_targets(model: ChainModel, q_ref, frames: Iterable[str]) -> dict:
    """World pose of each attachment frame at ``q_ref``."""
    fk = forward_kinematics(model, q_ref)
    return {f: fk.frames[f] for f in frames}
