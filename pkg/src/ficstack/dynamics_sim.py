"""Rigid-body plant for the serial chain: dynamics terms, scripted
disturbances, penalty-contact obstacles and a fixed-step integrator.

Two independent formulations are kept on purpose: ``inverse_dynamics`` is a
recursive Newton-Euler pass, while ``mass_matrix`` / ``bias_forces`` project
each link's Newton-Euler equations through its centre-of-mass Jacobian.  The
integrator uses the projected form; the tests cross-check the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kinematics import ChainModel, FkResult, forward_kinematics, point_jacobian

STANDARD_GRAVITY = np.array([0.0, 0.0, -9.81])


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Disturbance:
    """World-frame wrench (force; torque) applied at a named frame during
    ``[t_start, t_end)``."""

    frame: str
    wrench: np.ndarray
    t_start: float
    t_end: float

    def __post_init__(self):
        object.__setattr__(self, "wrench", np.asarray(self.wrench, dtype=float).reshape(6))
        if not self.t_start < self.t_end:
            raise ValueError("disturbance window needs t_start < t_end")

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end

    def to_dict(self) -> dict:
        return {"frame": self.frame, "wrench": self.wrench.tolist(),
                "window": [self.t_start, self.t_end]}

    @classmethod
    def from_dict(cls, d: dict) -> "Disturbance":
        t0, t1 = d["window"]
        return cls(d["frame"], d["wrench"], float(t0), float(t1))


@dataclass(frozen=True)
class Obstacle:
    """Sphere or half-space probed at named frame origins.

    For a half-space, ``normal`` points out of the solid into free space.
    """

    shape: str
    attach_points: tuple
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.0
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    stiffness: float = 1e4
    damping: float = 1e2

    def __post_init__(self):
        object.__setattr__(self, "attach_points", tuple(self.attach_points))
        for name in ("center", "point", "normal"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if self.shape == "sphere":
            if self.radius <= 0.0:
                raise ValueError("sphere radius must be positive")
        elif self.shape == "halfspace":
            if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
                raise ValueError("half-space normal must be unit length")
        else:
            raise ValueError(f"unknown obstacle shape {self.shape!r}")
        if self.stiffness <= 0.0 or self.damping < 0.0:
            raise ValueError("need stiffness > 0 and damping >= 0")

    def penetration(self, p: np.ndarray) -> tuple[float, np.ndarray]:
        """Penetration depth (positive inside) and outward surface normal."""
        if self.shape == "sphere":
            d = p - self.center
            dist = np.linalg.norm(d)
            n = d / dist if dist > 0.0 else np.array([0.0, 0.0, 1.0])
            return self.radius - dist, n
        return -float(np.dot(p - self.point, self.normal)), self.normal

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "attach_points": list(self.attach_points),
             "stiffness": self.stiffness, "damping": self.damping}
        if self.shape == "sphere":
            d.update(center=self.center.tolist(), radius=self.radius)
        else:
            d.update(point=self.point.tolist(), normal=self.normal.tolist())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        kw = {k: d[k] for k in ("center", "radius", "point", "normal", "stiffness", "damping")
              if k in d}
        return cls(d["shape"], tuple(d["attach_points"]), **kw)


@dataclass
class Contact:
    obstacle: int
    frame: str
    point: np.ndarray
    normal: np.ndarray
    penetration: float
    force: float


@dataclass
class SimState:
    t: float
    q: np.ndarray
    qd: np.ndarray
    last_tau: np.ndarray
    tau_ext: np.ndarray
    contact_registry: list = field(default_factory=list)

    @classmethod
    def at_rest(cls, q, t: float = 0.0) -> "SimState":
        q = np.array(q, dtype=float)
        z = np.zeros_like(q)
        return cls(t, q, z.copy(), z.copy(), z.copy(), [])

    def contact_force(self) -> float:
        return float(sum(c.force for c in self.contact_registry))


def gravity_mode(model: ChainModel, on: bool, gravity=None) -> ChainModel:
    """Copy of ``model`` with plant gravity switched on or off.

    ``on`` restores ``gravity`` if given, else the model's own vector when it
    is non-zero, else standard gravity along -z.
    """
    if not on:
        return model.with_gravity(np.zeros(3))
    if gravity is None:
        gravity = model.gravity if np.any(model.gravity) else STANDARD_GRAVITY
    return model.with_gravity(gravity)


def _com_terms(model: ChainModel, fk: FkResult, qd=None):
    """Per-link COM Jacobians (and their time derivatives when ``qd`` is
    given).  Shapes: Jv, Jw, dJv, dJw -> (links, 3, joints)."""
    n = model.n
    R = np.array([l.rotation for l in fk.links])
    P = np.array([l.translation for l in fk.links])
    com = np.array([li.com for li in model.links])
    C = P + np.einsum("ijk,ik->ij", R, com)
    z = fk.joint_axes
    o = fk.joint_origins
    rev = np.array([j.kind == "revolute" for j in model.joints])
    tril = np.tril(np.ones((n, n), dtype=bool))  # [link, joint]: joint <= link

    r = C[:, None, :] - o[None, :, :]
    zb = np.broadcast_to(z[None, :, :], (n, n, 3))
    Jv = np.where(rev[None, :, None], np.cross(zb, r), zb) * tril[:, :, None]
    Jw = np.where(rev[None, :, None], zb, 0.0) * tril[:, :, None]
    Jv = Jv.transpose(0, 2, 1)
    Jw = Jw.transpose(0, 2, 1)
    if qd is None:
        return R, C, Jv, Jw, None, None, None

    qd = np.asarray(qd, dtype=float)
    wz = np.where(rev[:, None], z * qd[:, None], 0.0)
    omega = np.cumsum(wz, axis=0)                       # link angular velocities
    omega_parent = np.vstack([np.zeros(3), omega[:-1]])
    zdot = np.cross(omega_parent, z)
    # joint-origin velocities: o_j moves with link j-1
    ro = o[:, None, :] - o[None, :, :]
    strict = np.tril(np.ones((n, n), dtype=bool), -1)
    col_o = np.where(rev[None, :, None], np.cross(zb, ro), zb) * strict[:, :, None]
    odot = np.einsum("jkx,k->jx", col_o, qd)
    cdot = np.einsum("ixk,k->ix", Jv, qd)
    rel_v = cdot[:, None, :] - odot[None, :, :]
    zdb = np.broadcast_to(zdot[None, :, :], (n, n, 3))
    dJv = np.where(rev[None, :, None], np.cross(zdb, r) + np.cross(zb, rel_v), zdb)
    dJv = (dJv * tril[:, :, None]).transpose(0, 2, 1)
    dJw = (np.where(rev[None, :, None], zdb, 0.0) * tril[:, :, None]).transpose(0, 2, 1)
    return R, C, Jv, Jw, dJv, dJw, omega


def _world_inertias(model: ChainModel, R: np.ndarray) -> np.ndarray:
    I = np.array([li.inertia for li in model.links])
    return R @ I @ R.transpose(0, 2, 1)


def _mass_matrix(model, Jv, Jw, Iw):
    m = np.array([li.mass for li in model.links])
    M = np.einsum("i,ixa,ixb->ab", m, Jv, Jv) + np.einsum("ixa,ixy,iyb->ab", Jw, Iw, Jw)
    return 0.5 * (M + M.T)


def mass_matrix(model: ChainModel, q) -> np.ndarray:
    fk = forward_kinematics(model, q)
    R, _, Jv, Jw, *_ = _com_terms(model, fk)
    return _mass_matrix(model, Jv, Jw, _world_inertias(model, R))


def dynamics_terms(model: ChainModel, q, qd, fk: Optional[FkResult] = None):
    """``(M, bias, fk)`` with ``M qdd + bias = tau``; bias holds gravity,
    Coriolis and centrifugal terms."""
    if fk is None:
        fk = forward_kinematics(model, q)
    qd = np.asarray(qd, dtype=float)
    R, _, Jv, Jw, dJv, dJw, omega = _com_terms(model, fk, qd)
    Iw = _world_inertias(model, R)
    M = _mass_matrix(model, Jv, Jw, Iw)
    m = np.array([li.mass for li in model.links])
    acc = np.einsum("ixk,k->ix", dJv, qd) - model.gravity[None, :]
    alpha = np.einsum("ixk,k->ix", dJw, qd)
    Iomega = np.einsum("ixy,iy->ix", Iw, omega)
    moment = np.einsum("ixy,iy->ix", Iw, alpha) + np.cross(omega, Iomega)
    bias = np.einsum("ixa,ix->a", Jv, m[:, None] * acc) + np.einsum("ixa,ix->a", Jw, moment)
    return M, bias, fk


def bias_forces(model: ChainModel, q, qd) -> np.ndarray:
    return dynamics_terms(model, q, qd)[1]


def inverse_dynamics(model: ChainModel, q, qd, qdd) -> np.ndarray:
    """Recursive Newton-Euler in the world frame."""
    fk = forward_kinematics(model, q)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    n = model.n
    w = np.zeros(3)
    dw = np.zeros(3)
    a_prev = -model.gravity
    p_prev = np.zeros(3)
    F = np.empty((n, 3))
    N = np.empty((n, 3))
    P = np.empty((n, 3))
    C = np.empty((n, 3))
    for i, joint in enumerate(model.joints):
        z = fk.joint_axes[i]
        p = fk.links[i].translation
        d = p - p_prev
        a = a_prev + np.cross(dw, d) + np.cross(w, np.cross(w, d))
        if joint.kind == "revolute":
            dw = dw + z * qdd[i] + np.cross(w, z * qd[i])
            w = w + z * qd[i]
        else:
            a = a + z * qdd[i] + 2.0 * np.cross(w, z * qd[i])
        R = fk.links[i].rotation
        c = p + R @ model.links[i].com
        rc = c - p
        ac = a + np.cross(dw, rc) + np.cross(w, np.cross(w, rc))
        Iw = R @ model.links[i].inertia @ R.T
        F[i] = model.links[i].mass * ac
        N[i] = Iw @ dw + np.cross(w, Iw @ w)
        P[i], C[i] = p, c
        a_prev, p_prev = a, p

    tau = np.empty(n)
    f = np.zeros(3)
    nm = np.zeros(3)
    p_next = None
    for i in reversed(range(n)):
        arm = np.cross(P[i + 1] - P[i], f) if p_next is not None else np.zeros(3)
        nm = N[i] + nm + np.cross(C[i] - P[i], F[i]) + arm
        f = F[i] + f
        p_next = P[i]
        z = fk.joint_axes[i]
        tau[i] = z @ nm if model.joints[i].kind == "revolute" else z @ f
    return tau


def potential_energy(model: ChainModel, q) -> float:
    fk = forward_kinematics(model, q)
    total = 0.0
    for link, li in zip(fk.links, model.links):
        total -= li.mass * float(model.gravity @ link.apply(li.com))
    return total


def kinetic_energy(model: ChainModel, q, qd) -> float:
    qd = np.asarray(qd, dtype=float)
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)


def external_torques(model: ChainModel, fk: FkResult, qd, t: float,
                     disturbances: Sequence[Disturbance] = (),
                     obstacles: Sequence[Obstacle] = ()):
    """Joint torques from active disturbances and contacts, plus the contacts."""
    tau = np.zeros(model.n)
    contacts = []
    for dist in disturbances:
        if dist.active(t):
            link = model.frame_link(dist.frame)
            J = point_jacobian(model, fk, link, fk.frames[dist.frame].translation)
            tau += J.T @ dist.wrench
    for k, obs in enumerate(obstacles):
        for name in obs.attach_points:
            p = fk.frames[name].translation
            depth, normal = obs.penetration(p)
            if depth <= 0.0:
                continue
            Jl = point_jacobian(model, fk, model.frame_link(name), p)[:3]
            depth_rate = -float(normal @ (Jl @ qd))
            f = max(0.0, obs.stiffness * depth + obs.damping * depth_rate)
            tau += Jl.T @ (f * normal)
            contacts.append(Contact(k, name, p.copy(), normal.copy(), depth, f))
    return tau, contacts


_MODEL_ARRAYS: dict = {}


def _model_arrays(model: ChainModel):
    hit = _MODEL_ARRAYS.get(id(model))
    if hit is not None and hit[0] is model:
        return hit[1]
    arrays = (
        np.array([j.axis for j in model.joints]),
        np.array([j.origin.rotation for j in model.joints]),
        np.array([j.origin.translation for j in model.joints]),
        np.array([j.kind == "revolute" for j in model.joints]),
        np.array([li.mass for li in model.links]),
        np.array([li.com for li in model.links]),
        np.array([li.inertia for li in model.links]),
        model.gravity.copy(),
    )
    if len(_MODEL_ARRAYS) > 64:
        _MODEL_ARRAYS.clear()
    _MODEL_ARRAYS[id(model)] = (model, arrays)
    return arrays


def _scene_arrays(model: ChainModel, disturbances, obstacles):
    nd = len(disturbances)
    d_link = np.zeros(nd, dtype=np.int64)
    d_off = np.zeros((nd, 3))
    d_wrench = np.zeros((nd, 6))
    d_win = np.zeros((nd, 2))
    for i, d in enumerate(disturbances):
        model.frame_link(d.frame)  # raises on unknown names
        link, off = model.named_frames[d.frame]
        d_link[i] = link
        d_off[i] = off.translation
        d_wrench[i] = d.wrench
        d_win[i] = (d.t_start, d.t_end)
    no = len(obstacles)
    o_kind = np.zeros(no, dtype=np.int64)
    o_geom = np.zeros((no, 4))
    o_normal = np.zeros((no, 3))
    o_kd = np.zeros((no, 2))
    probes = []
    for k, ob in enumerate(obstacles):
        if ob.shape == "sphere":
            o_geom[k, :3] = ob.center
            o_geom[k, 3] = ob.radius
        else:
            o_kind[k] = 1
            o_geom[k, :3] = ob.point
            o_normal[k] = ob.normal
        o_kd[k] = (ob.stiffness, ob.damping)
        for name in ob.attach_points:
            link = model.frame_link(name)
            probes.append((k, link, model.named_frames[name][1].translation, name))
    p_obs = np.array([p[0] for p in probes], dtype=np.int64)
    p_link = np.array([p[1] for p in probes], dtype=np.int64)
    p_off = np.array([p[2] for p in probes], dtype=float).reshape(-1, 3)
    names = [p[3] for p in probes]
    return (d_link, d_off, d_wrench, d_win, o_kind, o_geom, o_normal, o_kd,
            p_obs, p_link, p_off), names


def step(model: ChainModel, state: SimState, tau_cmd, disturbances: Sequence[Disturbance] = (),
         obstacles: Sequence[Obstacle] = (), dt: float = 1e-3, substeps: int = 10,
         joint_damping: float = 0.0) -> SimState:
    """Advance the plant by ``dt`` holding ``tau_cmd``, using ``substeps``
    semi-implicit Euler sub-steps.

    The dynamics equation is ``M qdd = tau_cmd + tau_ext - bias - d qd`` where
    ``tau_ext`` collects disturbance wrenches and one-sided penalty contacts
    (``k * depth + c * depth_rate`` along the surface normal, never pulling).
    """
    from . import _kernels

    tau_cmd = np.asarray(tau_cmd, dtype=float)
    if tau_cmd.shape != (model.n,) or not np.all(np.isfinite(tau_cmd)):
        raise SimulationError(f"invalid torque command at t={state.t:.6f}: {tau_cmd}")
    scene, names = _scene_arrays(model, disturbances, obstacles)
    q, qd, _, tau_ext, depth, force = _kernels.integrate(
        *_model_arrays(model), state.q, state.qd, state.t, tau_cmd, dt / substeps,
        substeps, float(joint_damping), *scene)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise SimulationError(f"non-finite state at t={state.t + dt:.6f}")
    contacts = []
    if names and np.any(depth > 0.0):
        fk = forward_kinematics(model, q)
        for k, name in enumerate(names):
            if depth[k] > 0.0:
                ob = int(scene[8][k])
                p = fk.frames[name].translation
                _, normal = obstacles[ob].penetration(p)
                contacts.append(Contact(ob, name, p.copy(), normal.copy(),
                                        float(depth[k]), float(force[k])))
    return SimState(state.t + dt, q, qd, tau_cmd.copy(), tau_ext, contacts)


def step_reference(model: ChainModel, state: SimState, tau_cmd,
                   disturbances: Sequence[Disturbance] = (), obstacles: Sequence[Obstacle] = (),
                   dt: float = 1e-3, substeps: int = 10, joint_damping: float = 0.0) -> SimState:
    """Pure-numpy twin of :func:`step` (slow; used to check the compiled loop)."""
    tau_cmd = np.asarray(tau_cmd, dtype=float)
    if tau_cmd.shape != (model.n,) or not np.all(np.isfinite(tau_cmd)):
        raise SimulationError(f"invalid torque command at t={state.t:.6f}: {tau_cmd}")
    h = dt / substeps
    q = state.q.copy()
    qd = state.qd.copy()
    t = state.t
    tau_ext = np.zeros(model.n)
    contacts: list = []
    for _ in range(substeps):
        fk = forward_kinematics(model, q)
        M, bias, _ = dynamics_terms(model, q, qd, fk)
        tau_ext, contacts = external_torques(model, fk, qd, t, disturbances, obstacles)
        rhs = tau_cmd + tau_ext - bias - joint_damping * qd
        qdd = np.linalg.solve(M, rhs)
        qd = qd + h * qdd
        q = q + h * qd
        t += h
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise SimulationError(f"non-finite state at t={t:.6f}")
    return SimState(state.t + dt, q, qd, tau_cmd.copy(), tau_ext, contacts)
