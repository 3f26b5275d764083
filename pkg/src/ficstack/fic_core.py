"""Mono-dimensional fractal impedance controller.

The controller is a nonlinear spring with a sigmoidal force profile while the
error grows (divergence) and a midpoint-centred linear spring while it shrinks
(convergence).  The convergence spring is sized from the energy stored at the
peak of the episode so that an unforced mass released at the peak arrives at
the target with zero velocity.

Error convention: ``err = x_desired - x_current``; a positive force pushes the
controlled coordinate in the positive direction, so ``profile_force(err)`` is
restoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DIVERGENCE = "divergence"
CONVERGENCE = "convergence"

# latch hysteresis on the error magnitude, and the smallest latchable peak
EPS_HYSTERESIS = 1e-6
EPS_XMAX = 1e-9


@dataclass(frozen=True)
class FicParams:
    """Constants of one controlled axis (units: m/N or rad/N·m)."""

    x0: float
    xb: float
    f_max: float
    k0: float
    s: float = 20.0

    def __post_init__(self):
        if not (0.0 < self.x0 < self.xb):
            raise ValueError(f"need 0 < x0 < xb, got x0={self.x0}, xb={self.xb}")
        if self.k0 <= 0.0:
            raise ValueError(f"k0 must be positive, got {self.k0}")
        if self.s <= 0.0:
            raise ValueError(f"s must be positive, got {self.s}")
        # f_max == k0*x0 is allowed: the sigmoid collapses to a flat saturation
        if self.f_max < self.k0 * self.x0 * (1.0 - 1e-12):
            raise ValueError(
                f"f_max={self.f_max} must not be below k0*x0={self.k0 * self.x0}")

    @property
    def b(self) -> float:
        """Characteristic length of the sigmoid."""
        return (self.xb - self.x0) / self.s

    @property
    def delta_f(self) -> float:
        return self.f_max - self.k0 * self.x0

    def to_dict(self) -> dict:
        return {"x0": self.x0, "xb": self.xb, "f_max": self.f_max,
                "k0": self.k0, "s": self.s}

    @classmethod
    def from_dict(cls, d: dict) -> "FicParams":
        return cls(x0=float(d["x0"]), xb=float(d["xb"]), f_max=float(d["f_max"]),
                   k0=float(d["k0"]), s=float(d.get("s", 20.0)))


@dataclass
class FicAxisState:
    phase: str = DIVERGENCE
    x_max: float = 0.0
    prev_err: float = 0.0
    kc: float = 0.0
    # side of the target the current episode lives on (+1, -1, or 0 at rest)
    side: int = 0
    # convergence spring rest point (magnitude, on ``side``) and the energy
    # offset that keeps the stored energy continuous across the latch
    center: float = 0.0
    offset: float = 0.0

    def copy(self) -> "FicAxisState":
        return FicAxisState(self.phase, self.x_max, self.prev_err, self.kc,
                            self.side, self.center, self.offset)


def fic_init(err: float = 0.0) -> FicAxisState:
    """Fresh divergence state, optionally seeded with a non-zero error."""
    return FicAxisState(phase=DIVERGENCE, x_max=abs(err), prev_err=err,
                        side=_sign(err))


def _sign(v: float) -> int:
    return int(v > 0.0) - int(v < 0.0)


def profile_force(p: FicParams, err: float) -> float:
    a = abs(err)
    if a < p.x0:
        return p.k0 * err
    sgn = math.copysign(1.0, err)
    if a < p.xb:
        return sgn * (p.delta_f * -math.expm1(-(a - p.x0) / p.b) + p.k0 * p.x0)
    return sgn * p.f_max


def profile_energy(p: FicParams, err: float) -> float:
    """Energy stored by the divergence spring; the antiderivative of
    :func:`profile_force` with zero energy at zero error."""
    a = abs(err)
    if a < p.x0:
        return 0.5 * p.k0 * a * a
    e0 = 0.5 * p.k0 * p.x0 * p.x0
    b = p.b
    if a < p.xb:
        return e0 + p.f_max * (a - p.x0) + b * p.delta_f * math.expm1(-(a - p.x0) / b)
    eb = e0 + p.f_max * (p.xb - p.x0) + b * p.delta_f * math.expm1(-(p.xb - p.x0) / b)
    return eb + p.f_max * (a - p.xb)


def convergence_stiffness(p: FicParams, x_max: float) -> float:
    return 4.0 * profile_energy(p, x_max) / (x_max * x_max)


def convergence_center(p: FicParams, x_max: float, a_latch: float) -> float:
    """Rest point (error magnitude) of the convergence spring.

    Latching at the peak gives the midpoint ``x_max / 2``.  When the latch
    fires a little after the peak, the energy already released by the
    divergence spring, ``E(x_max) - E(a)``, is moving the axis; the rest point
    is shifted so that this energy plus the spring energy brings the axis to
    the target at zero velocity.  Mass-independent.  Clamped so that the
    spring never pulls away from the target at the latch and its force stays
    within twice the saturation force.
    """
    kc = convergence_stiffness(p, x_max)
    released = profile_energy(p, x_max) - profile_energy(p, a_latch)
    c = 0.5 * a_latch + released / (kc * a_latch)
    return min(max(c, 0.5 * a_latch), a_latch, 2.0 * p.f_max / kc)


def fic_step(p: FicParams, st: FicAxisState, err: float,
             eps_h: float = EPS_HYSTERESIS) -> tuple[float, FicAxisState]:
    """Advance one control tick.  Returns the axis force and the new state;
    the input state is left untouched."""
    err = float(err)
    if not math.isfinite(err):
        raise ValueError(f"non-finite error {err!r}")
    st = st.copy()
    a = abs(err)
    sgn = _sign(err)
    prev_a = abs(st.prev_err)
    st.prev_err = err

    if st.phase == CONVERGENCE:
        if sgn != st.side:
            # crossed (or hit) the target: fresh episode on the far side
            _restart(st, a, sgn)
        elif a > st.x_max:
            # pushed past the latched peak
            _restart(st, a, sgn)
        elif a > prev_a and a < st.center:
            # turned back in the decelerating part; the attractor has arrived
            _restart(st, a, sgn)
        else:
            return _spring(p, st, err), st
        return profile_force(p, err), st

    if sgn != st.side:
        _restart(st, a, sgn)
    elif a > st.x_max:
        st.x_max = a
    if a < st.x_max - eps_h and st.x_max >= EPS_XMAX:
        st.phase = CONVERGENCE
        st.kc = convergence_stiffness(p, st.x_max)
        st.center = convergence_center(p, st.x_max, a)
        d = a - st.center
        st.offset = profile_energy(p, a) - 0.5 * st.kc * d * d
        return _spring(p, st, err), st
    return profile_force(p, err), st


def _spring(p: FicParams, st: FicAxisState, err: float) -> float:
    h = st.kc * (err - st.side * st.center)
    # only reachable after a latch far past the peak; keeps |h| <= 2 f_max
    return min(max(h, -2.0 * p.f_max), 2.0 * p.f_max)


def _restart(st: FicAxisState, a: float, sgn: int) -> None:
    st.phase = DIVERGENCE
    st.x_max = a
    st.side = sgn
    st.kc = 0.0
    st.center = 0.0
    st.offset = 0.0


def phase_potential(p: FicParams, st: FicAxisState, err: float) -> float:
    """Energy held by the controller in the state's phase.

    Divergence: the profile energy.  Convergence: the spring energy about the
    rest point plus the offset fixed at the latch, so the value is continuous
    when the phase switches from divergence to convergence.
    """
    if st.phase == CONVERGENCE:
        d = err - st.side * st.center
        return 0.5 * st.kc * d * d + st.offset
    return profile_energy(p, err)


@dataclass
class MassTrajectory:
    """Samples of a 1-D autonomous-mass run; arrays share one time index.

    ``x_dot`` is the mass velocity held over the step that follows the sample
    (semi-implicit Euler), ``v_prev`` the one that led into it.
    """

    t: np.ndarray
    x_err: np.ndarray
    x_dot: np.ndarray
    v_prev: np.ndarray
    force: np.ndarray
    push: np.ndarray
    phase: np.ndarray
    V: np.ndarray
    potential: np.ndarray
    mass: float
    dt: float
    extra: dict = field(default_factory=dict)

    def injected_energy(self) -> float:
        """Work done by the controller on the mass, using the step-averaged
        velocity so that controller + push work equals the kinetic-energy change."""
        v_avg = 0.5 * (self.v_prev + self.x_dot)
        return float(np.sum(self.force * v_avg) * self.dt)

    def push_work(self) -> float:
        v_avg = 0.5 * (self.v_prev + self.x_dot)
        return float(np.sum(self.push * v_avg) * self.dt)


def autonomous_mass_sim(p: FicParams, mass: float, err0: float = 0.0, eps_h: float = EPS_HYSTERESIS,
                        push: Optional[Callable[[float], float]] = None,
                        duration: float = 0.2, dt: float = 1e-4,
                        v0: float = 0.0) -> MassTrajectory:
    """Point mass on a line driven by one controller axis (target at 0).

    ``push(t)`` is an external force on the mass.  Semi-implicit Euler; the
    controller runs every integration step.
    """
    if mass <= 0.0:
        raise ValueError("mass must be positive")
    if dt > 1e-4:
        raise ValueError("testbed step must not exceed 1e-4 s")
    n = int(round(duration / dt)) + 1
    x = -err0
    v = v0
    st = fic_init(err0)
    out = {k: np.empty(n) for k in ("t", "x_err", "x_dot", "v_prev", "force",
                                    "push", "V", "potential")}
    phases = np.empty(n, dtype=object)
    for i in range(n):
        t = i * dt
        err = -x
        h, st = fic_step(p, st, err, eps_h)
        f_ext = push(t) if push is not None else 0.0
        v_prev = v
        v = v + (h + f_ext) / mass * dt
        out["t"][i] = t
        out["x_err"][i] = err
        out["x_dot"][i] = v
        out["v_prev"][i] = v_prev
        out["force"][i] = h
        out["push"][i] = f_ext
        out["potential"][i] = phase_potential(p, st, err)
        # kinetic part from the staggered velocities (exact for linear springs)
        out["V"][i] = 0.5 * mass * v_prev * v + out["potential"][i]
        phases[i] = st.phase
        x = x + v * dt
    return MassTrajectory(phase=phases, mass=mass, dt=dt, **out)


def phase_portrait(p: FicParams, mass: float, initial_states, duration: float = 0.2,
                   dt: float = 1e-5) -> list[MassTrajectory]:
    """One unforced run per initial ``(x_err, x_dot)`` pair."""
    return [autonomous_mass_sim(p, mass, err0=float(e0), v0=float(v0),
                                duration=duration, dt=dt)
            for e0, v0 in initial_states]
