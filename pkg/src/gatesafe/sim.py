"""Closed-loop gate-track simulation with noisy perception and a safety filter.

World model: a single-integrator robot x' = x + (u + w) dt flies a straight
"unrolled" track of square gates spaced along +x. Gate lateral offsets are
drawn per difficulty level; each lap repeats the same gate row shifted one
track length further along +x (so lap closure never invents turn geometry).

Perception: the policy sees each gate through a noisy pose estimate whose
position error is drawn uniformly per axis once per gate approach and held
until the gate is passed (a persistent miscalibration, the failure mode a
worst-case-inflated filter is built to absorb; redrawing per step would
average the error away and hide it).

Modes:
- "baseline": the nominal proportional policy acts unfiltered;
- "filtered": actions are projected through the barrier constraint sampled
  from the nominal distance field at the *estimated* gate pose;
- "filtered_uncertainty": same, but on the field inflated by the observation
  error bound, so the certificate covers every pose consistent with the
  estimate.

Far from the current gate the robot may leave the gate-local grid; those
steps pass the nominal action through unchanged (clearance there is several
meters) and are logged with their own status code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .barrier import SafetyParams, assemble_constraint, eval_barrier_world
from .field import DistanceField, InsideObstacleError, OutOfBoundsError
from .geometry import GateGeometry, Pose, exact_distance, segment_hits_frame, world_to_gate
from .qp import FILTER_STATUS_ORDER, FilterStatus, filter_action

MODES = ("baseline", "filtered", "filtered_uncertainty")

# Per-step status codes: 0..3 mirror FILTER_STATUS_ORDER, then the two
# pass-through conditions where the filter could not run.
STEP_UNCHANGED = 0
STEP_PROJECTED = 1
STEP_FALLBACK = 2
STEP_DEGENERATE = 3
STEP_OFF_MAP = 4
STEP_IN_OBSTACLE = 5
STEP_LABELS = (
    "unchanged",
    "projected",
    "infeasible_fallback",
    "degenerate_safe",
    "off_map",
    "in_obstacle",
)

PASS_MARGIN = 0.01  # [m] crossing must clear the opening edge by this much


class SetupError(RuntimeError):
    """Trial precondition violated (bad spawn state)."""


@dataclass
class TrackSpec:
    """One lap of gates; laps repeat the row shifted a track length along +x.

    Consecutive-gate offsets satisfy |dy| <= difficulty and |dz| <= difficulty
    within the lap (the lap seam may exceed it: the next lap's first gate
    returns to the original lateral position).
    """

    num_gates: int
    spacing: float
    difficulty: float
    laps: int
    seed: int
    gate_poses: list[Pose]

    @property
    def total_gates(self) -> int:
        return self.laps * self.num_gates

    @property
    def lap_length(self) -> float:
        return self.num_gates * self.spacing


@dataclass
class SimState:
    """Mutable loop state: position, clock, and gate progress."""

    x: np.ndarray
    t: float = 0.0
    gate_index: int = 0
    gates_passed: int = 0


@dataclass
class StepLog:
    """Column arrays, one row per executed step (values at step start)."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    d_true: np.ndarray
    h: np.ndarray
    status: np.ndarray
    deviation: np.ndarray


@dataclass
class TrialResult:
    """Outcome of one trial: safety, task success, and the step log.

    min_distance is the smallest true clearance to the current gate over the
    trajectory, exactly 0.0 when the trial ended in a collision. clean means
    the filter never fell back and never sampled inside an obstacle, so the
    invariance guarantee applied on every filtered step.
    """

    mode: str
    safe: bool
    success_rate: float
    min_distance: float
    gates_passed: int
    total_gates: int
    steps: int
    timed_out: bool
    clean: bool
    fallback_steps: int
    off_map_steps: int
    in_obstacle_steps: int
    log: StepLog


@dataclass
class SimEnv:
    """Everything a trial needs besides the track: geometry, fields, knobs."""

    gate: GateGeometry
    nominal_field: DistanceField
    inflated_field: DistanceField | None
    params: SafetyParams
    dt: float = 0.02
    max_steps: int = 12000
    gain: float = 2.0
    pass_offset: float = 3.0

    def __post_init__(self) -> None:
        if not (0.0 < self.dt < 1.0):
            raise ValueError(f"dt must lie in (0, 1), got {self.dt}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be positive, got {self.max_steps}")
        if self.gain <= 0.0:
            raise ValueError(f"gain must be positive, got {self.gain}")


def generate_track(
    num_gates: int = 8,
    spacing: float = 6.25,
    difficulty: float = 0.0,
    laps: int = 3,
    seed: int = 0,
) -> TrackSpec:
    """Random gate row: gate k at x = k*spacing, lateral offsets accumulated.

    Gate 0 sits at the origin facing +x; every later gate offsets from its
    predecessor by uniform draws in [-difficulty, difficulty] on y and z and
    yaws to face the incoming segment.
    """
    if num_gates < 1:
        raise ValueError(f"num_gates must be positive, got {num_gates}")
    if spacing <= 0.0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if difficulty < 0.0:
        raise ValueError(f"difficulty must be non-negative, got {difficulty}")
    if laps < 1:
        raise ValueError(f"laps must be positive, got {laps}")
    rng = np.random.default_rng(seed)
    poses = [Pose(position=np.zeros(3), yaw=0.0)]
    y = z = 0.0
    for k in range(1, num_gates):
        dy, dz = rng.uniform(-difficulty, difficulty, size=2)
        y += dy
        z += dz
        yaw = math.atan2(dy, spacing)
        poses.append(Pose(position=np.array([k * spacing, y, z]), yaw=yaw))
    return TrackSpec(
        num_gates=num_gates,
        spacing=spacing,
        difficulty=difficulty,
        laps=laps,
        seed=seed,
        gate_poses=poses,
    )


def virtual_gate_pose(track: TrackSpec, index: int) -> Pose:
    """Pose of the index-th gate of the unrolled multi-lap sequence."""
    if not (0 <= index < track.total_gates):
        raise IndexError(f"gate index {index} outside [0, {track.total_gates})")
    lap, k = divmod(index, track.num_gates)
    base = track.gate_poses[k]
    shift = np.array([lap * track.lap_length, 0.0, 0.0])
    return Pose(position=base.position + shift, yaw=base.yaw)


def observe_gate(state: SimState, track: TrackSpec, dv: np.ndarray, rng: np.random.Generator) -> Pose:
    """Noisy estimate of the current gate pose: per-axis uniform position error."""
    true = virtual_gate_pose(track, state.gate_index)
    err = rng.uniform(-1.0, 1.0, size=3) * np.asarray(dv, dtype=float)
    return Pose(position=true.position + err, yaw=true.yaw)


def nominal_policy(
    state: SimState, estimate: Pose, gain: float, alpha: float, pass_offset: float = 3.0
) -> np.ndarray:
    """Proportional pursuit of a point pass_offset beyond the estimated gate.

    Aiming past the plane (rather than at the center) keeps the commanded
    speed up through the crossing; the action is clipped to the norm bound.
    """
    c, s = math.cos(estimate.yaw), math.sin(estimate.yaw)
    target = estimate.position + pass_offset * np.array([c, s, 0.0])
    u = gain * (target - state.x)
    n = float(np.linalg.norm(u))
    if n > alpha:
        u *= alpha / n
    return u


def step_dynamics(x: np.ndarray, u: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
    """Single-integrator Euler step under action u and disturbance w."""
    return x + (u + w) * dt


def _validate_spawn(x: np.ndarray, env: SimEnv, track: TrackSpec) -> None:
    for m in range(track.total_gates):
        pose = virtual_gate_pose(track, m)
        if exact_distance(world_to_gate(x, pose), env.gate) < 0.0:
            raise SetupError(f"spawn {x} lies inside the gate-{m} frame")
    q0 = world_to_gate(x, track.gate_poses[0])
    if q0[0] >= -env.gate.half_depth:
        raise SetupError(f"spawn {x} must lie before gate 0 (local x = {q0[0]:.3f})")
    if exact_distance(q0, env.gate) < env.params.R:
        raise SetupError(
            f"spawn {x} starts unsafe: clearance {exact_distance(q0, env.gate):.3f} < R = {env.params.R}"
        )


def run_trial(
    env: SimEnv,
    track: TrackSpec,
    mode: str,
    seed: int,
    spawn: np.ndarray | None = None,
) -> TrialResult:
    """Fly one trial of the full unrolled track and record every step.

    The per-trial random stream is consumed in a fixed order (gate estimate
    error at start and after each gate advance; process noise each step), so
    results are bitwise reproducible given (track, mode, seed).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "filtered":
        fld = env.nominal_field
    elif mode == "filtered_uncertainty":
        if env.inflated_field is None:
            raise ValueError("filtered_uncertainty mode requires an inflated field")
        fld = env.inflated_field
    else:
        fld = None

    params = env.params
    if spawn is None:
        spawn = track.gate_poses[0].position - np.array([track.spacing, 0.0, 0.0])
    x = np.asarray(spawn, dtype=float).copy()
    _validate_spawn(x, env, track)

    rng = np.random.default_rng(seed)
    state = SimState(x=x)
    total = track.total_gates
    cap = env.max_steps

    t_log = np.empty(cap)
    x_log = np.empty((cap, 3))
    u_log = np.empty((cap, 3))
    d_log = np.empty(cap)
    h_log = np.full(cap, np.nan)
    st_log = np.zeros(cap, dtype=np.int8)
    dev_log = np.zeros(cap)

    estimate = observe_gate(state, track, params.dv, rng)
    prev_pose: Pose | None = None  # last passed gate, checked during slab exit
    exit_window = env.gate.half_depth + (params.alpha + float(np.max(params.dw))) * env.dt * 2.0

    safe = True
    timed_out = True
    fallback = off_map = in_obstacle = 0
    min_d = math.inf
    steps = 0

    for k in range(cap):
        true_pose = virtual_gate_pose(track, state.gate_index)
        q_true = world_to_gate(state.x, true_pose)
        d_true = exact_distance(q_true, env.gate)
        min_d = min(min_d, d_true)

        u_nom = nominal_policy(state, estimate, env.gain, params.alpha, env.pass_offset)
        u = u_nom
        status = STEP_UNCHANGED
        h_val = math.nan
        dev = 0.0
        if fld is not None:
            try:
                ev = eval_barrier_world(fld, state.x, estimate, params)
            except OutOfBoundsError:
                status = STEP_OFF_MAP
                off_map += 1
            except InsideObstacleError:
                status = STEP_IN_OBSTACLE
                in_obstacle += 1
            else:
                h_val = ev.h
                con = assemble_constraint(ev, params)
                dec = filter_action(u_nom, con, params)
                u = dec.u_star
                dev = dec.deviation
                status = FILTER_STATUS_ORDER.index(dec.status)
                if dec.status is FilterStatus.INFEASIBLE_FALLBACK:
                    fallback += 1

        w = rng.uniform(-1.0, 1.0, size=3) * params.dw
        x_new = step_dynamics(state.x, u, w, env.dt)

        t_log[k] = state.t
        x_log[k] = state.x
        u_log[k] = u
        d_log[k] = d_true
        h_log[k] = h_val
        st_log[k] = status
        dev_log[k] = dev
        steps = k + 1

        q_new = world_to_gate(x_new, true_pose)
        if d_true < 0.0 or segment_hits_frame(q_true, q_new, env.gate):
            safe = False
            timed_out = False
            state.x = x_new
            break
        if prev_pose is not None:
            qp0 = world_to_gate(state.x, prev_pose)
            if qp0[0] <= exit_window:
                if segment_hits_frame(qp0, world_to_gate(x_new, prev_pose), env.gate):
                    safe = False
                    timed_out = False
                    state.x = x_new
                    break
            else:
                prev_pose = None

        if q_true[0] < 0.0 <= q_new[0]:
            frac = -q_true[0] / (q_new[0] - q_true[0])
            cross = q_true + frac * (q_new - q_true)
            if max(abs(cross[1]), abs(cross[2])) < env.gate.inner_half - PASS_MARGIN:
                state.gates_passed += 1
            prev_pose = true_pose
            state.gate_index += 1
            if state.gate_index >= total:
                state.x = x_new
                state.t += env.dt
                timed_out = False
                break
            estimate = observe_gate(state, track, params.dv, rng)

        state.x = x_new
        state.t += env.dt

    if safe:
        last_gate = min(state.gate_index, total - 1)
        q_final = world_to_gate(state.x, virtual_gate_pose(track, last_gate))
        min_d = min(min_d, exact_distance(q_final, env.gate))
        min_distance = float(min_d)
    else:
        min_distance = 0.0

    sl = slice(0, steps)
    return TrialResult(
        mode=mode,
        safe=safe,
        success_rate=state.gates_passed / total,
        min_distance=min_distance,
        gates_passed=state.gates_passed,
        total_gates=total,
        steps=steps,
        timed_out=timed_out,
        clean=fallback == 0 and in_obstacle == 0,
        fallback_steps=fallback,
        off_map_steps=off_map,
        in_obstacle_steps=in_obstacle,
        log=StepLog(
            t=t_log[sl].copy(),
            x=x_log[sl].copy(),
            u=u_log[sl].copy(),
            d_true=d_log[sl].copy(),
            h=h_log[sl].copy(),
            status=st_log[sl].copy(),
            deviation=dev_log[sl].copy(),
        ),
    )


@dataclass
class TrialRecord:
    """One grid cell of an experiment: which trial, and its result."""

    level: float
    track_index: int
    mode: str
    seed: int
    result: TrialResult


def run_experiment(
    env: SimEnv,
    levels: tuple[float, ...] = (0.0, 0.5, 1.0, 1.5),
    tracks_per_level: int = 10,
    modes: tuple[str, ...] = MODES,
    num_gates: int = 8,
    spacing: float = 6.25,
    laps: int = 3,
    seed_base: int = 1000,
) -> list[TrialRecord]:
    """Seeded grid of trials: every mode flies the same tracks per level.

    Track seeds are seed_base + 1000*level_index + track_index; the per-trial
    noise stream is seeded from the track seed, so the whole grid is
    reproducible from seed_base alone.
    """
    records: list[TrialRecord] = []
    for li, level in enumerate(levels):
        for ti in range(tracks_per_level):
            track_seed = seed_base + 1000 * li + ti
            track = generate_track(
                num_gates=num_gates,
                spacing=spacing,
                difficulty=level,
                laps=laps,
                seed=track_seed,
            )
            for mode in modes:
                result = run_trial(env, track, mode, seed=track_seed + 500_000)
                records.append(
                    TrialRecord(level=level, track_index=ti, mode=mode, seed=track_seed, result=result)
                )
    return records
