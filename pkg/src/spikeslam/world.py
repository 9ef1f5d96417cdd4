"""Simulated 2D environments and rotating-robot kinematics.

Environments are lists of wall segments inside a square extent centered on
the origin. The robot sits at a fixed position and rotates; its single
depth ray points along the current true heading. Odometry reports the
commanded angular velocity corrupted by a constant bias and per-step
Gaussian noise.

Angles are degrees, counter-clockwise positive, heading 0 along +x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Environment",
    "RobotState",
    "SensorModel",
    "OdometryModel",
    "NO_RETURN",
    "raycast",
    "step_world",
    "builtin_environments",
    "environment_to_json",
    "environment_from_json",
]

# Sentinel reading for "nothing within range / dropout".
NO_RETURN = float("inf")


@dataclass(frozen=True)
class Environment:
    name: str
    segments: tuple[tuple[float, float, float, float], ...]  # x1,y1,x2,y2 in m
    extent: float = 4.0  # side of the bounding square, centered on origin
    waypoints: tuple[tuple[float, float], ...] = ()

    def validate(self) -> None:
        half = self.extent / 2.0
        for (x1, y1, x2, y2) in self.segments:
            for v in (x1, x2):
                if abs(v) > half + 1e-9:
                    raise ValueError(f"{self.name}: segment x={v} outside extent")
            for v in (y1, y2):
                if abs(v) > half + 1e-9:
                    raise ValueError(f"{self.name}: segment y={v} outside extent")


@dataclass
class RobotState:
    position: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0       # degrees in [0, 360)
    omega: float = 30.0        # commanded angular velocity, deg/s


@dataclass(frozen=True)
class SensorModel:
    max_range: float = 4.0
    range_noise_sigma: float = 0.02
    dropout_prob: float = 0.0

    def validate(self) -> None:
        if self.max_range <= 0:
            raise ValueError("max_range must be > 0")
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise ValueError("dropout_prob must be in [0,1]")


@dataclass(frozen=True)
class OdometryModel:
    omega_noise_sigma: float = 1.0  # deg/s, per step
    omega_bias: float = 0.3         # deg/s


def raycast(env: Environment, position: tuple[float, float], heading: float,
            sensor: SensorModel, rng: np.random.Generator | None = None) -> float:
    """Distance to the nearest segment along ``heading``, or NO_RETURN.

    Draws noise and dropout variates on every call (even on a miss) so the
    rng stream consumption is independent of geometry.
    """
    px, py = position
    half = env.extent / 2.0
    if abs(px) > half or abs(py) > half:
        raise ValueError(f"position {position} outside extent of {env.name}")

    # fixed-order rng consumption
    if rng is not None:
        noise = rng.normal(0.0, sensor.range_noise_sigma)
        drop = rng.uniform()
    else:
        noise, drop = 0.0, 1.0

    rad = math.radians(heading)
    dx, dy = math.cos(rad), math.sin(rad)
    best = math.inf
    for (x1, y1, x2, y2) in env.segments:
        sx, sy = x2 - x1, y2 - y1
        denom = dx * sy - dy * sx
        if abs(denom) < 1e-12:
            continue
        qx, qy = x1 - px, y1 - py
        t = (qx * sy - qy * sx) / denom
        s = (dx * qy - dy * qx) / -denom
        if t > 1e-9 and -1e-12 <= s <= 1.0 + 1e-12:
            best = min(best, t)

    if best > sensor.max_range:
        return NO_RETURN
    if drop < sensor.dropout_prob:
        return NO_RETURN
    return max(best + noise, 0.0)


def step_world(state: RobotState, dt: float, odom: OdometryModel,
               rng: np.random.Generator | None = None) -> tuple[RobotState, float]:
    """Advance true heading by omega*dt; return (new state, reported omega)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    heading = (state.heading + state.omega * dt) % 360.0
    noise = rng.normal(0.0, odom.omega_noise_sigma) if rng is not None else 0.0
    reported = state.omega + odom.omega_bias + noise
    return replace(state, heading=heading), reported


def _square(half: float) -> tuple[tuple[float, float, float, float], ...]:
    return (
        (-half, -half, half, -half),
        (half, -half, half, half),
        (half, half, -half, half),
        (-half, half, -half, -half),
    )


def builtin_environments() -> list[Environment]:
    """The four rotation-only arenas, a symmetric variant, and the 2D maze.

    * env1 -- square room standing in for the physical arena (3.8 m walls).
    * env2 -- 4 m square room.
    * env3 -- two identical narrow plates facing the robot at 30 and 80
      degrees, so most of the sweep is an empty gap.
    * env4 -- two objects of different shape: a flat plate (near-field
      distance level 1) and a closer wedge (level 0), with wide gaps.
    * env4_sym -- two identical plates 180 degrees apart (bimodal
      observation likelihoods).
    * maze -- double-T corridor layout with waypoints for multi-place-cell
      2D mapping.
    """
    envs = [
        Environment("env1", _square(1.9)),
        Environment("env2", _square(2.0)),
        Environment(
            "env3",
            (
                (1.399, 0.577, 1.199, 0.923),
                (0.457, 1.443, 0.064, 1.512),
            ),
        ),
        Environment(
            "env4",
            (
                (1.474, 0.447, 1.124, 1.053),                # plate, level 1
                (-0.090, 0.930, 0.226, 1.280),               # wedge, level 0
                (0.226, 1.280, 0.402, 0.843),
            ),
        ),
        Environment(
            "env4_sym",
            (
                (1.6, -0.35, 1.6, 0.35),
                (-1.6, 0.35, -1.6, -0.35),
            ),
        ),
        Environment(
            "maze",
            (
                # double-T: top bar, bottom bar, connecting stem (outline)
                (-3.5, 2.2, 3.5, 2.2),
                (-3.5, 3.4, 3.5, 3.4),
                (-3.5, 2.2, -3.5, 3.4),
                (3.5, 2.2, 3.5, 3.4),
                (-3.5, -3.4, 3.5, -3.4),
                (-3.5, -2.2, -0.6, -2.2),
                (0.6, -2.2, 3.5, -2.2),
                (-3.5, -3.4, -3.5, -2.2),
                (3.5, -3.4, 3.5, -2.2),
                (-0.6, -2.2, -0.6, 1.0),
                (0.6, -2.2, 0.6, 1.0),
                (-0.6, 1.0, -0.6, 2.2),
                (0.6, 1.0, 0.6, 2.2),
            ),
            extent=8.0,
            waypoints=((-2.4, 2.8), (0.0, 2.8), (2.4, 2.8),
                       (0.0, 0.2), (0.0, -2.8)),
        ),
    ]
    for env in envs:
        env.validate()
    return envs


def get_environment(name: str) -> Environment:
    for env in builtin_environments():
        if env.name == name:
            return env
    known = ", ".join(e.name for e in builtin_environments())
    raise KeyError(f"unknown environment {name!r} (builtin: {known})")


def environment_to_json(env: Environment) -> str:
    return json.dumps(
        {
            "name": env.name,
            "segments": [list(s) for s in env.segments],
            "extent": env.extent,
            "waypoints": [list(w) for w in env.waypoints],
        },
        indent=1,
        sort_keys=True,
    )


def environment_from_json(text: str) -> Environment:
    doc = json.loads(text)
    env = Environment(
        name=doc["name"],
        segments=tuple(tuple(s) for s in doc["segments"]),
        extent=doc["extent"],
        waypoints=tuple(tuple(w) for w in doc.get("waypoints", ())),
    )
    env.validate()
    return env
