"""Experiment runner, tracking metrics, CSV logging and the ``ficstack``
command line.

One run: for each control tick sample the end-effector reference, take one
postural IK step, read every attachment target off the IK configuration,
evaluate the controller stack on the measured joint positions and advance the
plant with the torque held over the tick.
"""

from __future__ import annotations

import argparse
import copy
import contextlib
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics_sim import (Disturbance, Obstacle, SimState, SimulationError, gravity_mode, step)
from .fic_core import FicParams, phase_portrait, profile_energy, profile_force
from .kinematics import ChainModel, builtin_model, forward_kinematics
from .reference_gen import (IkWeights, TrajectorySpec, attachment_targets, postural_ik, sample,
                            solve_ik)
from .task_stack import ControllerStack, saturation_bound, stack_from_list, stack_step

CONFIG_SCHEMA = 1
OUT_ENV = "FICSTACK_OUT_DIR"
PRESET_DIR = Path(__file__).parent / "presets"
AXES = ("x", "y", "z")


class RunAborted(RuntimeError):
    """A non-finite value appeared; carries the tick and the quantity."""

    def __init__(self, tick: int, quantity: str, detail: str = ""):
        super().__init__(f"run aborted at tick {tick}: non-finite {quantity} {detail}".rstrip())
        self.tick = tick
        self.quantity = quantity


# ---------------------------------------------------------------- presets

def parameter_presets() -> dict:
    with open(PRESET_DIR / "params.json") as f:
        return json.load(f)


def resolve_params(ref: str) -> dict:
    """``"sim/ee_pos"`` -> parameter dict from the bundled controller sets."""
    group, _, name = ref.partition("/")
    table = parameter_presets()
    try:
        return dict(table[group][name])
    except KeyError:
        known = [f"{g}/{n}" for g in table for n in table[g]]
        raise KeyError(f"unknown parameter preset {ref!r}; known: {known}") from None


def experiment_presets() -> list:
    return sorted(p.stem for p in (PRESET_DIR / "experiments").glob("*.json"))


def experiment_preset_path(name: str) -> Path:
    path = PRESET_DIR / "experiments" / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no experiment preset {name!r}; known: {experiment_presets()}")
    return path


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    name: str
    robot: object
    stack: list
    trajectory: dict
    gravity_mode: str = "on"
    posture: Optional[list] = None
    ik: dict = field(default_factory=dict)
    disturbances: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    random_pushes: Optional[dict] = None
    duration: float = 8.0
    control_rate: float = 333.3
    physics_dt: float = 1e-4
    joint_damping: float = 0.0
    eval_start: Optional[float] = None
    ee_frame: str = "ee"
    seed: int = 0

    def __post_init__(self):
        if not self.control_rate > 0.0:
            raise ValueError("control_rate must be positive")
        if not self.duration > 0.0:
            raise ValueError("duration must be positive")
        if self.gravity_mode not in ("on", "off"):
            raise ValueError(f"gravity_mode must be 'on' or 'off', got {self.gravity_mode!r}")
        if not 0.0 < self.physics_dt <= self.control_dt:
            raise ValueError("physics_dt must be positive and no larger than the control period")

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.control_dt / self.physics_dt)))

    def to_dict(self) -> dict:
        d = {"schema": CONFIG_SCHEMA}
        d.update({k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__})
        if isinstance(self.robot, ChainModel):
            d["robot"] = self.robot.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = resolve_references(d)
        if d.pop("schema", None) != CONFIG_SCHEMA:
            raise ValueError(f"unsupported experiment schema; expected {CONFIG_SCHEMA}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    def build_model(self) -> ChainModel:
        if isinstance(self.robot, ChainModel):
            model = self.robot
        elif isinstance(self.robot, str):
            model = builtin_model(self.robot)
        else:
            model = ChainModel.from_dict(self.robot)
        return gravity_mode(model, self.gravity_mode == "on")

    def build_stack(self) -> ControllerStack:
        return stack_from_list(self.stack, resolve_params)

    def build_disturbances(self) -> list:
        out = [Disturbance.from_dict(d) for d in self.disturbances]
        if self.random_pushes:
            out += random_pushes(self.seed, **self.random_pushes)
        return out


def resolve_references(d: dict) -> dict:
    """Copy of a raw config with parameter-preset strings expanded to dicts."""
    d = copy.deepcopy(d)
    for att in d.get("stack", []):
        for key in ("pos_params", "rot_params"):
            if isinstance(att.get(key), str):
                att[key] = resolve_params(att[key])
    return d


def load_config(path_or_name) -> ExperimentConfig:
    """Load an experiment from a JSON file, or a bundled preset by name."""
    path = Path(path_or_name)
    if not path.exists() and not path.suffix:
        path = experiment_preset_path(str(path_or_name))
    with open(path) as f:
        return ExperimentConfig.from_dict(json.load(f))


def set_path(d: dict, dotted: str, value) -> dict:
    """Return a copy of ``d`` with ``a.b.0.c`` set to ``value``."""
    d = copy.deepcopy(d)
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node[k]
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        if last not in node:
            raise KeyError(f"{dotted!r}: no key {last!r}")
        node[last] = value
    return d


def random_pushes(seed: int, frame: str, count: int, magnitude: float, width: float,
                  t_start: float, t_end: float) -> list:
    """Seeded pulse train at ``frame``: random horizontal directions, evenly
    spread start times with jitter."""
    rng = np.random.default_rng(seed)
    slots = np.linspace(t_start, t_end, count + 1)
    pushes = []
    for i in range(count):
        t0 = slots[i] + rng.uniform(0.0, max(slots[i + 1] - slots[i] - width, 0.0))
        ang = rng.uniform(0.0, 2.0 * np.pi)
        f = magnitude * np.array([np.cos(ang), np.sin(ang), 0.0])
        pushes.append(Disturbance(frame, np.r_[f, 0.0, 0.0, 0.0], t0, t0 + width))
    return pushes


# ---------------------------------------------------------------- run

@dataclass
class RunLog:
    """Per-tick arrays of one run; written to CSV by :func:`write_log`."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tau_cmd: np.ndarray
    tau_ext: np.ndarray
    contact_force: np.ndarray
    contact_names: list
    ee_ref: np.ndarray
    ee_pos: np.ndarray
    errors: dict             # frame -> (ticks, 6) pose error
    bound: np.ndarray        # saturation bound per tick and joint
    period: float

    def columns(self) -> list:
        n = self.q.shape[1]
        cols = ["t"]
        for name in ("q", "qd", "tau_cmd", "tau_ext"):
            cols += [f"{name}{i}" for i in range(n)]
        cols += [f"contact_force_{c}" for c in self.contact_names]
        cols += [f"ee_ref_{a}" for a in AXES] + [f"ee_{a}" for a in AXES]
        for frame in self.errors:
            cols += [f"{frame}_err_{a}" for a in ("x", "y", "z", "rx", "ry", "rz")]
        return cols

    def table(self) -> np.ndarray:
        parts = [self.t[:, None], self.q, self.qd, self.tau_cmd, self.tau_ext,
                 self.contact_force, self.ee_ref, self.ee_pos]
        parts += [self.errors[f] for f in self.errors]
        return np.hstack(parts)


@dataclass
class RunReport:
    rmse: list
    max_error: list
    torque_peak: list
    energy_ledger: float
    log_path: Optional[str]
    window: list
    attachment_rmse: dict = field(default_factory=dict)
    bound_margin: float = 0.0
    ticks: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def write_log(log: RunLog, path) -> None:
    """CSV with a header row; values written with 17 significant digits."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(log.columns())
        for row in log.table():
            w.writerow([format(v, ".17g") for v in row])


def read_log(path) -> dict:
    with open(path) as f:
        rows = list(csv.reader(f))
    data = np.array(rows[1:], dtype=float)
    return {c: data[:, i] for i, c in enumerate(rows[0])}


def report_metrics(log, window_start: float = 0.0, log_path: Optional[str] = None) -> RunReport:
    """Per-axis end-effector RMSE and peaks over ``t >= window_start``.

    ``log`` is a :class:`RunLog` or a dict of columns as returned by
    :func:`read_log`.
    """
    if isinstance(log, RunLog):
        t = log.t
        err = log.ee_ref - log.ee_pos
        tau = log.tau_cmd
        q = log.q
        att = {f: e[:, :3] for f, e in log.errors.items()}
    else:
        t = np.asarray(log["t"])
        err = np.column_stack([log[f"ee_ref_{a}"] - log[f"ee_{a}"] for a in AXES])
        tau = np.column_stack([log[k] for k in sorted((k for k in log if k.startswith("tau_cmd")),
                                                      key=lambda s: int(s[7:]))])
        q = np.column_stack([log[k] for k in sorted((k for k in log if k.startswith("q")
                                                      and k[1:].isdigit()), key=lambda s: int(s[1:]))])
        frames = sorted({k[:-6] for k in log if k.endswith("_err_x")})
        att = {f: np.column_stack([log[f"{f}_err_{a}"] for a in AXES]) for f in frames}
    sel = t >= window_start - 1e-12
    if not np.any(sel):
        raise ValueError("evaluation window is empty")
    e = err[sel]
    rmse = np.sqrt(np.mean(e * e, axis=0))
    # work of the held torque over each tick
    energy = float(np.sum(tau[:-1] * np.diff(q, axis=0))) if len(q) > 1 else 0.0
    margin = 0.0
    if isinstance(log, RunLog):
        margin = float(np.min(log.bound - np.abs(log.tau_cmd)))
    return RunReport(
        rmse=rmse.tolist(),
        max_error=np.max(np.abs(e), axis=0).tolist(),
        torque_peak=np.max(np.abs(tau), axis=0).tolist(),
        energy_ledger=energy,
        log_path=log_path,
        window=[float(t[sel][0]), float(t[sel][-1])],
        attachment_rmse={f: np.sqrt(np.mean(a[sel] ** 2, axis=0)).tolist() for f, a in att.items()},
        bound_margin=margin,
        ticks=int(len(t)),
    )


def _finite(tick: int, name: str, value) -> None:
    v = np.asarray(value)
    if not np.all(np.isfinite(v)):
        raise RunAborted(tick, name, str(v))


def simulate(config: ExperimentConfig) -> RunLog:
    model = config.build_model()
    stack = config.build_stack()
    spec = TrajectorySpec.from_dict(config.trajectory)
    disturbances = config.build_disturbances()
    obstacles = [Obstacle.from_dict(o) for o in config.obstacles]
    weights = IkWeights.from_dict(config.ik)
    ee = config.ee_frame
    if ee not in stack.frames():
        raise ValueError(f"the stack has no attachment at {ee!r}")

    seed = np.zeros(model.n) if config.posture is None else np.asarray(config.posture, dtype=float)
    q0 = solve_ik(model, seed, sample(spec, 0.0), seed,
                  IkWeights(weights.damping, 0.0, weights.rotation, weights.max_step))
    # the start configuration is the posture the IK regularises toward, so a
    # held reference keeps every attachment target fixed
    prior = q0.copy()
    state = SimState.at_rest(q0)
    q_ref = q0.copy()
    dt = config.control_dt
    ticks = int(round(config.duration * config.control_rate))
    n = model.n
    probes = [f"{k}_{p}" for k, o in enumerate(obstacles) for p in o.attach_points]

    t_log = np.empty(ticks)
    qs, qds, taus, exts = (np.empty((ticks, n)) for _ in range(4))
    bounds = np.empty((ticks, n))
    cforce = np.zeros((ticks, len(probes)))
    ee_ref = np.empty((ticks, 3))
    ee_pos = np.empty((ticks, 3))
    errs = {f: np.empty((ticks, 6)) for f in stack.frames()}
    for k in range(ticks):
        t = k * dt
        target = sample(spec, t)
        q_ref = postural_ik(model, q_ref, target, prior, weights, ee)
        _finite(k, "q_ref", q_ref)
        targets = attachment_targets(model, q_ref, stack.frames())
        targets[ee] = target
        fk = forward_kinematics(model, state.q)
        out = stack_step(stack, model, state.q, targets, fk=fk)
        _finite(k, "tau_cmd", out.tau)
        t_log[k] = t
        qs[k], qds[k], taus[k], exts[k] = state.q, state.qd, out.tau, state.tau_ext
        bounds[k] = saturation_bound(stack, model, state.q, fk=fk)
        ee_ref[k] = target.translation
        ee_pos[k] = fk.frames[ee].translation
        for f in errs:
            errs[f][k] = out.errors[f]
        for c in state.contact_registry:
            cforce[k, probes.index(f"{c.obstacle}_{c.frame}")] = c.force
        try:
            state = step(model, state, out.tau, disturbances, obstacles, dt=dt,
                         substeps=config.substeps, joint_damping=config.joint_damping)
        except SimulationError as exc:
            raise RunAborted(k, "plant state", str(exc)) from exc
        _finite(k, "q", state.q)
        _finite(k, "qd", state.qd)
    return RunLog(t_log, qs, qds, taus, exts, cforce, probes, ee_ref, ee_pos, errs, bounds,
                  spec.period)


def run(config: ExperimentConfig, out_dir=None, plots: bool = True) -> RunReport:
    """Simulate, then write ``log.csv``, ``report.json`` and figures to ``out_dir``.

    The evaluation window starts after the first trajectory period unless
    ``eval_start`` is set.  With ``out_dir=None`` nothing is written.
    """
    log = simulate(config)
    start = config.eval_start if config.eval_start is not None else log.period
    if start >= config.duration:
        start = 0.0
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = str(out_dir / "log.csv")
        write_log(log, log_path)
    report = report_metrics(log, start, log_path)
    if out_dir is not None:
        with open(out_dir / "report.json", "w") as f:
            json.dump(report.to_dict(), f, indent=2)
        with open(out_dir / "config.json", "w") as f:
            json.dump(config.to_dict(), f, indent=2)
        if plots:
            from .plotting import plot_run
            plot_run(log, out_dir, start)
    return report


# ---------------------------------------------------------------- exports

def profile_table(p: FicParams, n: int = 401, span: float = 3.0) -> np.ndarray:
    """(x_err, force, energy) rows over ``[-span*xb, span*xb]``."""
    x = np.linspace(-span * p.xb, span * p.xb, n)
    return np.column_stack([x, [profile_force(p, v) for v in x], [profile_energy(p, v) for v in x]])


def ring_states(p: FicParams, count: int = 8, radius: float = 2.0, mass: float = 1.0) -> list:
    """Initial (x_err, x_dot) pairs on an ellipse scaled by ``xb`` and the
    speed that stores the same energy."""
    a = radius * p.xb
    v = np.sqrt(2.0 * profile_energy(p, a) / mass)
    ang = np.arange(count) * 2.0 * np.pi / count
    return list(zip(a * np.cos(ang), v * np.sin(ang)))


def write_csv(rows, header, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, (int, np.integer)) else format(float(v), ".12g") for v in r])


# ---------------------------------------------------------------- CLI

def _out_dir(arg: Optional[str], name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUT_ENV, "runs")) / name


def _open_out(path: Optional[str]):
    return open(path, "w", newline="") if path else contextlib.nullcontext(sys.stdout)


def _cmd_run(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args.out, config.name)
    report = run(config, out, plots=not args.no_plots)
    print(json.dumps({"rmse_mm": [1000 * v for v in report.rmse], "log": report.log_path}))
    return 0


def _cmd_profile(args) -> int:
    p = FicParams.from_dict(resolve_params(args.preset))
    table = profile_table(p, args.points, args.span)
    cols = {"force": [0, 1], "energy": [0, 2], "both": [0, 1, 2]}[args.emit]
    header = ["x_err", "force", "energy"]
    with _open_out(args.out) as f:
        write_csv(table[:, cols], [header[i] for i in cols], f)
    if args.figure:
        from .plotting import plot_profile
        plot_profile(table, args.figure)
    return 0


def _cmd_phase(args) -> int:
    p = FicParams.from_dict(resolve_params(args.preset))
    trajs = phase_portrait(p, args.mass, ring_states(p, args.count, args.radius, args.mass),
                           duration=args.duration, dt=args.dt)
    every = max(1, args.every)
    rows = []
    for i, tr in enumerate(trajs):
        for j in range(0, len(tr.t), every):
            # error rate is minus the mass velocity (target fixed at zero)
            rows.append((i, tr.t[j], tr.x_err[j], -tr.x_dot[j]))
    with _open_out(args.out) as f:
        write_csv(rows, ["traj_id", "t", "x_err", "x_dot"], f)
    if args.figure:
        from .plotting import plot_phase_portrait
        plot_phase_portrait(trajs, args.figure)
    return 0


def _sweep_one(job):
    raw, out, plots = job
    report = run(ExperimentConfig.from_dict(raw), out, plots=plots)
    return report.to_dict()


def _cmd_sweep(args) -> int:
    path = Path(args.config)
    if not path.exists() and not path.suffix:
        path = experiment_preset_path(args.config)
    with open(path) as f:
        raw = resolve_references(json.load(f))
    values = [json.loads(v) for v in args.values.split(",")]
    base = _out_dir(args.out, f"{raw.get('name', 'sweep')}_sweep")
    jobs = [(set_path(raw, args.param, v), base / f"{args.param}={v}", args.plots) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            reports = list(ex.map(_sweep_one, jobs))
    else:
        reports = [_sweep_one(j) for j in jobs]
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "summary.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([args.param, "rmse_x", "rmse_y", "rmse_z", "torque_peak_max"])
        for v, r in zip(values, reports):
            w.writerow([v, *(format(e, ".6g") for e in r["rmse"]),
                        format(max(r["torque_peak"]), ".6g")])
    print((base / "summary.csv").read_text(), end="")
    return 0


def _cmd_presets(args) -> int:
    table = parameter_presets()
    print("parameter sets:")
    for g in table:
        for n, p in table[g].items():
            print(f"  {g}/{n}: " + ", ".join(f"{k}={v}" for k, v in p.items()))
    print("experiments:")
    for name in experiment_presets():
        print(f"  {name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ficstack", description="Run and report superimposed impedance-control experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True, help="experiment JSON file or preset name")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<name> or runs/<name>)")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(fn=_cmd_run)

    p = sub.add_parser("profile", help="export the force/energy profile of a parameter set")
    p.add_argument("--preset", required=True, help="e.g. sim/ee_pos")
    p.add_argument("--emit", choices=("force", "energy", "both"), default="both")
    p.add_argument("--points", type=int, default=401)
    p.add_argument("--span", type=float, default=3.0, help="range in multiples of xb")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--figure", help="also render a PNG here")
    p.set_defaults(fn=_cmd_profile)

    pp = sub.add_parser("phase-portrait", help="export unforced 1-D trajectories")
    pp.add_argument("--preset", required=True)
    pp.add_argument("--mass", type=float, default=1.0)
    pp.add_argument("--count", type=int, default=8)
    pp.add_argument("--radius", type=float, default=2.0, help="initial ring radius in multiples of xb")
    pp.add_argument("--duration", type=float, default=0.1)
    pp.add_argument("--dt", type=float, default=1e-5)
    pp.add_argument("--every", type=int, default=10, help="keep every n-th sample")
    pp.add_argument("--out")
    pp.add_argument("--figure")
    pp.set_defaults(fn=_cmd_phase)

    s = sub.add_parser("sweep", help="re-run an experiment over values of one config entry")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, help="dotted path, e.g. stack.0.pos_params.f_max")
    s.add_argument("--values", required=True, help="comma-separated JSON values")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--plots", action="store_true")
    s.set_defaults(fn=_cmd_sweep)

    pr = sub.add_parser("presets", help="list bundled presets")
    pr.add_argument("action", choices=("list",))
    pr.set_defaults(fn=_cmd_presets)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except RunAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, KeyError, ValueError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
