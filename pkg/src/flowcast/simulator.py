"""Deterministic ego-motion simulator producing synthetic sensorimotor logs.

A differential-drive robot moves inside a rectangular walled room.  Commands
are issued once per frame; they take effect ``actuation_delay`` frames later
and the base velocity then relaxes toward the commanded value with a
first-order lag (motor inertia).  A forward-looking, downward-tilted pinhole
camera samples ground-truth optical flow on a fixed cell grid using the
rigid-motion flow equations with depth obtained by ray-casting against the
floor and the four walls.  Gaussian noise is added to flow and odometry after
the (noise-free) kinematic pass, so a scenario and seed fix the log exactly.

Conventions: world z is up, image v grows downward, a positive angular
command turns the robot left (counter-clockwise from above).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .core import (
    ActionCommand,
    ActionKind,
    FlowGrid,
    LogHeader,
    Proprioception,
    SensorimotorFrame,
    StreamFormatError,
    StreamLog,
    atomic_write_text,
    fmt_float,
)

__all__ = [
    "Scenario",
    "SimState",
    "approach_scenario",
    "read_scenario",
    "render_flow",
    "rotate_scenario",
    "run",
    "step",
    "wander_scenario",
    "write_scenario",
]

SCENARIO_FORMAT = "flowscenario"
SCENARIO_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    """Complete description of one simulated run."""

    name: str = "custom"
    seed: int = 0
    duration_s: float = 120.0
    frame_rate_hz: float = 15.0
    # room (meters); x spans [0, room_width], y spans [0, room_depth]
    room_width: float = 10.0
    room_depth: float = 8.0
    # robot
    start_x: float = 5.0
    start_y: float = 4.0
    start_heading: float = 0.0
    robot_radius: float = 0.35
    linear_speed: float = 0.3
    angular_speed: float = 0.6
    actuation_delay: int = 6
    velocity_tau_s: float = 0.25
    # camera
    image_width: int = 320
    image_height: int = 240
    focal_px: float = 280.0
    camera_height: float = 1.0
    camera_tilt_deg: float = 25.0
    grid_rows: int = 5
    grid_cols: int = 4
    # noise
    flow_noise_rel: float = 0.05
    flow_noise_std: Optional[float] = None
    proprio_noise_std: float = 0.01
    # behaviour: a timed action script, or a named reactive policy
    script: tuple = ()
    policy: Optional[str] = None
    policy_params: tuple = ()

    def __post_init__(self) -> None:
        if self.actuation_delay < 0:
            raise ValueError("actuation_delay must be >= 0")
        if self.velocity_tau_s < 0:
            raise ValueError("velocity_tau_s must be >= 0")
        if self.frame_rate_hz <= 0 or self.duration_s <= 0:
            raise ValueError("frame rate and duration must be positive")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid must be at least 1x1")
        r = self.robot_radius
        if not (r < self.start_x < self.room_width - r and r < self.start_y < self.room_depth - r):
            raise ValueError("start position must lie inside the room")
        if self.script and self.policy is not None:
            raise ValueError("script and policy are mutually exclusive")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate_hz

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.frame_rate_hz))

    def command(self, kind: ActionKind) -> ActionCommand:
        return ActionCommand.of(kind, self.linear_speed, self.angular_speed)


@dataclass(frozen=True)
class SimState:
    """Robot state between frames: pose, realized velocities, command queue."""

    x: float
    y: float
    theta: float
    v_lin: float = 0.0
    v_ang: float = 0.0
    pending: tuple = ()
    bump: bool = False


def step(scenario: Scenario, state: SimState, issued: ActionKind) -> SimState:
    """Advance one frame: queue the command, relax velocity, integrate, clamp.

    The executed command is the one issued ``actuation_delay`` frames ago
    (stop before the queue fills).  On wall contact while moving into the
    wall, the pose is clamped, the bump flag raised and the linear velocity
    zeroed; rotation is never blocked.
    """
    sc = scenario
    pending = (state.pending + (issued,))[-(sc.actuation_delay + 1):]
    executed = pending[0] if len(pending) == sc.actuation_delay + 1 else ActionKind.STOP
    cmd = sc.command(executed)

    if sc.velocity_tau_s > 0:
        alpha = math.exp(-sc.dt / sc.velocity_tau_s)
    else:
        alpha = 0.0
    v_lin = cmd.linear + (state.v_lin - cmd.linear) * alpha
    v_ang = cmd.angular + (state.v_ang - cmd.angular) * alpha

    theta = state.theta + v_ang * sc.dt
    if abs(v_ang) > 1e-12:
        x = state.x + v_lin / v_ang * (math.sin(theta) - math.sin(state.theta))
        y = state.y + v_lin / v_ang * (math.cos(state.theta) - math.cos(theta))
    else:
        x = state.x + v_lin * math.cos(state.theta) * sc.dt
        y = state.y + v_lin * math.sin(state.theta) * sc.dt

    r = sc.robot_radius
    cx = min(max(x, r), sc.room_width - r)
    cy = min(max(y, r), sc.room_depth - r)
    bump = abs(cx - x) > 1e-12 or abs(cy - y) > 1e-12
    if bump:
        v_lin = 0.0
    return SimState(cx, cy, theta, v_lin, v_ang, pending, bump)


class _Camera:
    """Precomputed grid rays and frame-wise rigid-motion flow evaluation."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        n, m = sc.grid_rows, sc.grid_cols
        u_px = (np.arange(m) + 0.5) * sc.image_width / m
        v_px = (np.arange(n) + 0.5) * sc.image_height / n
        x_n = (u_px - sc.image_width / 2.0) / sc.focal_px
        y_n = (v_px - sc.image_height / 2.0) / sc.focal_px
        xx, yy = np.meshgrid(x_n, y_n)  # (n, m), row-major = image order
        self.d_cam = np.column_stack([xx.ravel(), yy.ravel(), np.ones(n * m)])
        tau = math.radians(sc.camera_tilt_deg)
        # Columns: camera right, camera down, optical axis (robot heading +x).
        self.r0 = np.array(
            [
                [0.0, -math.sin(tau), math.cos(tau)],
                [-1.0, 0.0, 0.0],
                [0.0, -math.cos(tau), -math.sin(tau)],
            ]
        )

    def rotation(self, theta: float) -> np.ndarray:
        c, s = math.cos(theta), math.sin(theta)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return rz @ self.r0

    def depths(self, x: float, y: float, theta: float) -> np.ndarray:
        """Ray-cast depth along the optical axis for every grid cell."""
        sc = self.sc
        rot = self.rotation(theta)
        dirs = self.d_cam @ rot.T  # (NM, 3) world directions, unit optical-axis depth
        origin = np.array([x, y, sc.camera_height])
        eps = 1e-9
        best = np.full(len(dirs), np.inf)

        def consider(s: np.ndarray, ok: np.ndarray) -> None:
            s = np.where(ok & (s > eps), s, np.inf)
            np.minimum(best, s, out=best)

        with np.errstate(divide="ignore", invalid="ignore"):
            # floor z = 0
            s = -origin[2] / dirs[:, 2]
            px = origin[0] + s * dirs[:, 0]
            py = origin[1] + s * dirs[:, 1]
            consider(
                s,
                (dirs[:, 2] < 0)
                & (px >= -eps)
                & (px <= sc.room_width + eps)
                & (py >= -eps)
                & (py <= sc.room_depth + eps),
            )
            # walls x = 0 and x = room_width
            for wall_x in (0.0, sc.room_width):
                s = (wall_x - origin[0]) / dirs[:, 0]
                py = origin[1] + s * dirs[:, 1]
                pz = origin[2] + s * dirs[:, 2]
                consider(s, (py >= -eps) & (py <= sc.room_depth + eps) & (pz >= -eps))
            # walls y = 0 and y = room_depth
            for wall_y in (0.0, sc.room_depth):
                s = (wall_y - origin[1]) / dirs[:, 1]
                px = origin[0] + s * dirs[:, 0]
                pz = origin[2] + s * dirs[:, 2]
                consider(s, (px >= -eps) & (px <= sc.room_width + eps) & (pz >= -eps))

        if not np.isfinite(best).all():
            raise ValueError("a grid ray escapes the room; check camera tilt and geometry")
        return best

    def flow(self, x: float, y: float, theta: float, v_lin: float, v_ang: float) -> np.ndarray:
        """(rows, cols, 2) noiseless flow in pixels/second at the given state."""
        sc = self.sc
        depth = self.depths(x, y, theta)
        rot = self.rotation(theta)
        p_cam = self.d_cam * depth[:, None]
        v_world = np.array([v_lin * math.cos(theta), v_lin * math.sin(theta), 0.0])
        w_world = np.array([0.0, 0.0, v_ang])
        v_cam = rot.T @ v_world
        w_cam = rot.T @ w_world
        # Scene points move at -V - W x P relative to the camera.
        p_dot = -v_cam[None, :] - np.cross(np.broadcast_to(w_cam, p_cam.shape), p_cam)
        du = sc.focal_px * (p_dot[:, 0] - self.d_cam[:, 0] * p_dot[:, 2]) / depth
        dv = sc.focal_px * (p_dot[:, 1] - self.d_cam[:, 1] * p_dot[:, 2]) / depth
        return np.stack([du, dv], axis=1).reshape(sc.grid_rows, sc.grid_cols, 2)


def render_flow(
    scenario: Scenario, x: float, y: float, theta: float, v_lin: float, v_ang: float
) -> np.ndarray:
    """Ground-truth flow grid for an arbitrary state (no noise)."""
    return _Camera(scenario).flow(x, y, theta, v_lin, v_ang)


# ----------------------------------------------------------------- behaviours


class _ScriptSource:
    def __init__(self, sc: Scenario):
        kinds: list = []
        for duration, kind in sc.script:
            kinds.extend([ActionKind(kind)] * int(round(duration * sc.frame_rate_hz)))
        self.kinds = kinds

    def issue(self, t: int, bump_prev: bool) -> ActionKind:
        return self.kinds[t] if t < len(self.kinds) else ActionKind.STOP


class _ApproachPolicy:
    """Drive at the wall, bump, optionally push again while touching, back off.

    Counts an episode per bump seen while in the approach state; once
    ``episodes`` have happened the robot stops for good.
    """

    def __init__(self, frame_rate: float, episodes: int, back_s: float = 2.5,
                 pause_s: float = 0.0, push_s: float = 0.0):
        self.episodes = int(episodes)
        self.back_frames = int(round(back_s * frame_rate))
        self.pause_frames = int(round(pause_s * frame_rate))
        self.push_frames = int(round(push_s * frame_rate))
        self.done = 0
        self.state = "forward"
        self.count = 0

    def issue(self, t: int, bump_prev: bool) -> ActionKind:
        if self.done >= self.episodes:
            return ActionKind.STOP
        if self.state == "forward":
            if bump_prev:
                self.done += 1
                if self.done >= self.episodes:
                    return ActionKind.STOP
                if self.pause_frames > 0:
                    self.state, self.count = "pause", self.pause_frames
                else:
                    self.state, self.count = "back", self.back_frames
            else:
                return ActionKind.FORWARD
        if self.state == "pause":
            self.count -= 1
            if self.count <= 0:
                self.state, self.count = "push", self.push_frames
            return ActionKind.STOP
        if self.state == "push":
            self.count -= 1
            if self.count <= 0:
                self.state, self.count = "back", self.back_frames
            return ActionKind.FORWARD
        # back
        self.count -= 1
        if self.count <= 0:
            self.state = "forward"
        return ActionKind.BACKWARD


def _make_source(sc: Scenario):
    if sc.policy is None:
        return _ScriptSource(sc)
    params = dict(sc.policy_params)
    if sc.policy == "approach":
        return _ApproachPolicy(
            sc.frame_rate_hz,
            episodes=int(params.get("episodes", 20)),
            back_s=float(params.get("back_s", 2.5)),
            pause_s=float(params.get("pause_s", 0.0)),
            push_s=float(params.get("push_s", 0.0)),
        )
    raise ValueError(f"unknown policy {sc.policy!r}")


# ------------------------------------------------------------------------ run


def run(scenario: Scenario) -> StreamLog:
    """Simulate the scenario into a stream log, exactly reproducible by seed."""
    sc = scenario
    cam = _Camera(sc)
    source = _make_source(sc)
    n = sc.n_frames

    state = SimState(sc.start_x, sc.start_y, sc.start_heading)
    kinds: list = []
    realized = np.zeros((n, 2))
    bumps = np.zeros(n, dtype=bool)
    flows = np.zeros((n, sc.grid_rows, sc.grid_cols, 2))
    for t in range(n):
        kind = source.issue(t, state.bump)
        state = step(sc, state, kind)
        kinds.append(kind)
        realized[t] = (state.v_lin, state.v_ang)
        bumps[t] = state.bump
        flows[t] = cam.flow(state.x, state.y, state.theta, state.v_lin, state.v_ang)

    # Noise is drawn after the kinematic pass in a fixed order (proprio block,
    # then flow block) so logs are byte-reproducible from the seed.
    rng = np.random.default_rng(sc.seed)
    measured = realized + rng.normal(0.0, sc.proprio_noise_std, size=realized.shape)
    if sc.flow_noise_std is not None:
        flow_std = float(sc.flow_noise_std)
    else:
        magnitudes = np.linalg.norm(flows, axis=3).ravel()
        flow_std = float(np.percentile(magnitudes, 90.0) * sc.flow_noise_rel)
    if flow_std > 0:
        flows = flows + rng.normal(0.0, flow_std, size=flows.shape)

    header = LogHeader(
        rows=sc.grid_rows,
        cols=sc.grid_cols,
        frame_rate_hz=sc.frame_rate_hz,
        linear_speed=sc.linear_speed,
        angular_speed=sc.angular_speed,
        metadata={
            "scenario": sc.name,
            "seed": str(sc.seed),
            "injected_delay": str(sc.actuation_delay),
            "flow_noise_std": fmt_float(flow_std),
        },
    )
    frames = tuple(
        SensorimotorFrame(
            t=t,
            flow=FlowGrid(flows[t]),
            action=sc.command(kinds[t]),
            proprio=Proprioception(float(measured[t, 0]), float(measured[t, 1])),
            bump=bool(bumps[t]),
        )
        for t in range(n)
    )
    return StreamLog(header, frames)


# ----------------------------------------------------------------- scenarios


def wander_scenario(seed: int = 0, duration_s: float = 120.0, delay: int = 6,
                    include_turns: bool = True, **overrides) -> Scenario:
    """Mid-room wandering: stop/forward/stop/backward cycles with a short turn
    after every cycle.  Forward and backward legs of a cycle share one
    duration, so the robot oscillates around its start point and never nears a
    wall.  Long drive legs make the flow sweep through a wide, smoothly
    varying range (strong depth gradients near the far wall), and the turns
    alternate left/right deterministically so both rotation directions appear
    early no matter where a train/eval split cuts the log."""
    rng = np.random.default_rng(seed)
    segments: list = []
    total = 0.0
    next_left = True
    while total < duration_s + 5.0:
        drive = float(rng.uniform(4.5, 6.5))
        rest_a = float(rng.uniform(1.2, 2.0))
        rest_b = float(rng.uniform(1.2, 2.0))
        segments += [
            (rest_a, ActionKind.STOP.value),
            (drive, ActionKind.FORWARD.value),
            (rest_b, ActionKind.STOP.value),
            (drive, ActionKind.BACKWARD.value),
        ]
        total += rest_a + rest_b + 2 * drive
        if include_turns:
            turn = float(rng.uniform(1.6, 2.2))
            kind = ActionKind.TURN_LEFT if next_left else ActionKind.TURN_RIGHT
            next_left = not next_left
            segments.append((turn, kind.value))
            total += turn
    params = dict(
        linear_speed=0.45,
        angular_speed=0.35,
        flow_noise_rel=0.02,
    )
    params.update(overrides)
    return Scenario(
        name="wander",
        seed=seed,
        duration_s=duration_s,
        actuation_delay=delay,
        script=tuple(segments),
        **params,
    )


def approach_scenario(seed: int = 0, episodes: int = 20, delay: int = 6,
                      back_s: float = 2.5, pause_s: float = 0.0, push_s: float = 0.0,
                      **overrides) -> Scenario:
    """Repeated drive-into-the-wall episodes (one bump each), backing off in
    between.  ``pause_s``/``push_s`` add a stop-then-push-again phase that
    raises a second, static-flow bump while already touching the wall."""
    params = [("episodes", float(episodes)), ("back_s", float(back_s))]
    extra_s = 0.0
    if pause_s or push_s:
        params += [("pause_s", float(pause_s)), ("push_s", float(push_s))]
        extra_s = pause_s + push_s
    duration = 20.0 + episodes * (back_s + 4.5 + extra_s)
    return Scenario(
        name="approach",
        seed=seed,
        duration_s=duration,
        actuation_delay=delay,
        start_x=overrides.pop("start_x", 7.5),
        policy="approach",
        policy_params=tuple(params),
        **overrides,
    )


def rotate_scenario(seed: int = 0, duration_s: float = 20.0, delay: int = 0,
                    left: bool = True, **overrides) -> Scenario:
    kind = ActionKind.TURN_LEFT if left else ActionKind.TURN_RIGHT
    return Scenario(
        name="rotate",
        seed=seed,
        duration_s=duration_s,
        actuation_delay=delay,
        script=((duration_s, kind.value),),
        **overrides,
    )


# --------------------------------------------------------------- scenario IO

_SCALAR_FIELDS = [
    f.name for f in fields(Scenario) if f.name not in ("script", "policy_params")
]


def write_scenario(sc: Scenario, path: str) -> None:
    lines = [f"format={SCENARIO_FORMAT}", f"version={SCENARIO_VERSION}"]
    for name in _SCALAR_FIELDS:
        value = getattr(sc, name)
        if value is None:
            text = "none"
        elif isinstance(value, float):
            text = fmt_float(value)
        else:
            text = str(value)
        lines.append(f"{name}={text}")
    for key, value in sc.policy_params:
        lines.append(f"policy_param.{key}={fmt_float(value)}")
    lines.append("script:")
    for duration, kind in sc.script:
        lines.append(f"{fmt_float(duration)} {ActionKind(kind).value}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_scenario(path: str) -> Scenario:
    with open(path) as fh:
        raw = fh.read().splitlines()
    kv = {}
    policy_params: list = []
    script: list = []
    in_script = False
    for line in raw:
        if not line.strip():
            continue
        if line.strip() == "script:":
            in_script = True
            continue
        if in_script:
            tokens = line.split()
            if len(tokens) != 2:
                raise StreamFormatError(f"bad script line: {line!r}")
            script.append((float(tokens[0]), tokens[1]))
        else:
            key, sep, value = line.partition("=")
            if not sep:
                raise StreamFormatError(f"bad scenario line: {line!r}")
            if key.startswith("policy_param."):
                policy_params.append((key[len("policy_param."):], float(value)))
            else:
                kv[key] = value
    if kv.get("format") != SCENARIO_FORMAT:
        raise StreamFormatError("not a scenario file")
    if kv.get("version") != str(SCENARIO_VERSION):
        raise StreamFormatError(f"unsupported scenario version {kv.get('version')!r}")

    kwargs = {}
    for f in fields(Scenario):
        if f.name in ("script", "policy_params"):
            continue
        text = kv.get(f.name)
        if text is None:
            continue
        if text == "none":
            kwargs[f.name] = None
        elif f.name in ("name", "policy"):
            kwargs[f.name] = text
        elif f.name in ("seed", "actuation_delay", "image_width", "image_height",
                        "grid_rows", "grid_cols"):
            kwargs[f.name] = int(text)
        else:
            kwargs[f.name] = float(text)
    kwargs["script"] = tuple(script)
    kwargs["policy_params"] = tuple(policy_params)
    try:
        return Scenario(**kwargs)
    except (ValueError, KeyError) as exc:
        raise StreamFormatError(f"invalid scenario: {exc}") from exc
