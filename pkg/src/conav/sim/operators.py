"""Synthetic operator models that stand in for the human driver.

Every operator exposes the same two-call protocol: ``reset(scenario, seed)``
once per episode, then ``command(x, t)`` each tick to produce the measured
human input at the current state.  All of them are deterministic for a fixed
(spec seed, episode seed) pair.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import DynamicsConfig, RobotState, VelocityCommand, wrap_angle
from ..errors import ConvergenceError, DomainError, ValidationError
from ..intent import (
    IntentParams,
    RationalityCoefficient,
    sample_boltzmann_action,
    solve_rational_action,
)

OPERATOR_KINDS = ("rational", "boltzmann", "scripted_waypoints", "replay", "external")


@dataclass(frozen=True)
class OperatorSpec:
    """Declarative description of an operator, the shape used by scenario
    files, the batch runner, and the CLI.

    Which extra fields matter depends on ``kind``: the value-driven kinds
    (rational, boltzmann) need ``true_theta``; boltzmann also reads ``beta``;
    scripted_waypoints reads ``waypoints``; replay reads ``log_path``.
    """

    kind: str
    true_theta: IntentParams | None = None
    beta: float = 50.0  # rationality coefficient for the boltzmann kind
    waypoints: tuple = ()  # ((x, y), ...) for scripted_waypoints
    log_path: str | None = None  # episode log to replay
    seed: int = 0  # operator-private seed, combined with the episode seed

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValidationError(
                f"unknown operator kind {self.kind!r}; one of {OPERATOR_KINDS}"
            )
        if self.kind in ("rational", "boltzmann") and self.true_theta is None:
            raise ValidationError(f"{self.kind} operator requires true_theta")
        if self.kind == "boltzmann" and not self.beta >= 0.0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if self.kind == "replay" and not self.log_path:
            raise ValidationError("replay operator requires log_path")


class RationalOperator:
    """Noise-free rational driver: plays the exact stationary action of its
    own value function every tick.

    The previous command warm-starts the Newton solve; if the solver fails
    (which can only happen in pathological geometry) the previous command is
    held for one tick rather than crashing the episode.
    """

    def __init__(self, spec: OperatorSpec, dcfg: DynamicsConfig | None = None):
        self.spec = spec
        self.dcfg = dcfg or DynamicsConfig()
        self._scenario = None
        self._prev = VelocityCommand(0.0, 0.0)

    def reset(self, scenario, seed: int) -> None:
        self._scenario = scenario
        self._prev = VelocityCommand(0.0, 0.0)

    def command(self, x: RobotState, t: float) -> VelocityCommand:
        sc = self._scenario
        try:
            u = solve_rational_action(
                x, self.spec.true_theta, sc.goal, sc.obstacles, self.dcfg, u0=self._prev
            )
        except (ConvergenceError, DomainError):
            u = self._prev
        self._prev = u
        return u


class BoltzmannOperator:
    """Noisily-rational driver: samples each tick from the Boltzmann action
    density of its own value function (grid-discretized)."""

    def __init__(self, spec: OperatorSpec, dcfg: DynamicsConfig | None = None):
        self.spec = spec
        self.dcfg = dcfg or DynamicsConfig()
        self.beta = RationalityCoefficient(spec.beta)
        self._scenario = None
        self._rng = np.random.default_rng(spec.seed)

    def reset(self, scenario, seed: int) -> None:
        self._scenario = scenario
        self._rng = np.random.default_rng([self.spec.seed, seed])

    def command(self, x: RobotState, t: float) -> VelocityCommand:
        sc = self._scenario
        return sample_boltzmann_action(
            x, self.spec.true_theta, self.beta, sc.goal, sc.obstacles, self.dcfg,
            rng_seed=self._rng,
        )


@dataclass(frozen=True)
class ScriptedGains:
    """Fixed gains of the waypoint follower."""

    speed_gain: float = 1.2  # [1/s], distance-proportional forward speed
    turn_gain: float = 1.8  # [1/s], bearing-error-proportional turn rate
    capture_radius: float = 0.3  # [m], waypoint switch distance
    v_max: float = 0.4  # [m/s]
    omega_max: float = 0.8  # [rad/s]


class ScriptedOperator:
    """Waypoint follower with a proportional steer-then-drive law: turns
    toward the active waypoint, drives at a speed that falls off with bearing
    error, and releases the stick (zero command) once the list is exhausted.
    An empty waypoint list therefore produces a silent operator.
    """

    def __init__(self, spec: OperatorSpec, gains: ScriptedGains | None = None):
        self.spec = spec
        self.gains = gains or ScriptedGains()
        self._index = 0

    def reset(self, scenario, seed: int) -> None:
        self._index = 0

    def command(self, x: RobotState, t: float) -> VelocityCommand:
        wps = self.spec.waypoints
        g = self.gains
        while self._index < len(wps):
            wx, wy = wps[self._index]
            if math.hypot(wx - x.x, wy - x.y) > g.capture_radius:
                break
            self._index += 1
        if self._index >= len(wps):
            return VelocityCommand(0.0, 0.0)
        wx, wy = wps[self._index]
        dist = math.hypot(wx - x.x, wy - x.y)
        bearing = wrap_angle(math.atan2(wy - x.y, wx - x.x) - x.yaw)
        # Forward speed is gated by heading alignment so the driver pivots
        # in place when the waypoint sits behind it.
        v = g.speed_gain * dist * max(math.cos(bearing), 0.0)
        w = g.turn_gain * bearing
        return VelocityCommand(
            min(max(v, -g.v_max), g.v_max), min(max(w, -g.omega_max), g.omega_max)
        )


class ReplayOperator:
    """Replays the measured human commands of a prior episode log, tick for
    tick; after the log runs out it stays silent."""

    def __init__(self, spec: OperatorSpec):
        self.spec = spec
        self._commands = _read_log_commands(spec.log_path)
        self._index = 0

    def reset(self, scenario, seed: int) -> None:
        self._index = 0

    def command(self, x: RobotState, t: float) -> VelocityCommand:
        if self._index >= len(self._commands):
            return VelocityCommand(0.0, 0.0)
        u = self._commands[self._index]
        self._index += 1
        return u


@dataclass
class ExternalOperator:
    """Command holder fed from outside the loop (a live console).

    ``submit`` records the newest command with its receipt time; ``command``
    serves it while fresh and reverts to zero input once it is older than
    ``timeout`` seconds, which is exactly the deadband takeover the blending
    layer expects.  Latest submission wins; there is no queue.
    """

    timeout: float = 0.3  # [s], staleness bound on the held command
    _latest: VelocityCommand = field(default_factory=lambda: VelocityCommand(0.0, 0.0))
    _received_at: float = -math.inf

    def reset(self, scenario, seed: int) -> None:
        self._latest = VelocityCommand(0.0, 0.0)
        self._received_at = -math.inf

    def submit(self, u: VelocityCommand, t: float) -> None:
        self._latest = u
        self._received_at = t

    def command(self, x: RobotState, t: float) -> VelocityCommand:
        if t - self._received_at > self.timeout:
            return VelocityCommand(0.0, 0.0)
        return self._latest


def _read_log_commands(log_path: str) -> list:
    commands = []
    for line in Path(log_path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        if "uH_meas" not in rec:
            continue  # adaptation records share the log file
        commands.append(VelocityCommand(float(rec["uH_meas"][0]), float(rec["uH_meas"][1])))
    return commands


def build_operator(spec: OperatorSpec, dcfg: DynamicsConfig | None = None):
    """Instantiate the operator class matching ``spec.kind``."""
    if spec.kind == "rational":
        return RationalOperator(spec, dcfg)
    if spec.kind == "boltzmann":
        return BoltzmannOperator(spec, dcfg)
    if spec.kind == "scripted_waypoints":
        return ScriptedOperator(spec)
    if spec.kind == "replay":
        return ReplayOperator(spec)
    return ExternalOperator()
