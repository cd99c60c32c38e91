"""Scenario definitions: start pose, goal, obstacle field, workspace bounds.

A scenario is a static description of one navigation task.  Scenarios are
loaded from JSON (either a file path or a raw JSON string), validated, and
then treated as immutable for the rest of the run.  A small set of built-in
scenarios ships as package data.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from importlib import resources
from pathlib import Path

import numpy as np

from ..dynamics import RobotState
from ..errors import ParseError, UnknownScenario, ValidationError
from ..intent import GoalPose, ObstacleSet

DEFAULT_D_TH = 0.5  # m, center-to-center clearance threshold
_REQUIRED_KEYS = ("name", "start", "goal", "obstacles", "d_th", "bounds")


@dataclasses.dataclass(frozen=True)
class Scenario:
    """One navigation task: where the robot starts, where it should go,
    and what it must not hit.

    ``obstacles.d_th`` is the *effective* threshold: if ``inflate_obstacles``
    is set, the inflation radius has already been added, so planners and
    metrics can use ``obstacles`` directly.
    """

    name: str
    start: RobotState
    goal: GoalPose
    obstacles: ObstacleSet
    bounds: tuple[float, float, float, float]  # (x_min, x_max, y_min, y_max)
    d_th_raw: float = DEFAULT_D_TH
    inflate_obstacles: float | None = None

    def validate(self) -> None:
        x_min, x_max, y_min, y_max = self.bounds
        if not (x_min < x_max and y_min < y_max):
            raise ValidationError(f"degenerate bounds {self.bounds}")
        for label, px, py in (
            ("start", self.start.x, self.start.y),
            ("goal", self.goal.gx, self.goal.gy),
        ):
            if not (x_min <= px <= x_max and y_min <= py <= y_max):
                raise ValidationError(
                    f"{label} ({px:.3f}, {py:.3f}) outside bounds {self.bounds}"
                )
        if len(self.obstacles):
            centers = self.obstacles.as_array()
            inside = (
                (centers[:, 0] >= x_min)
                & (centers[:, 0] <= x_max)
                & (centers[:, 1] >= y_min)
                & (centers[:, 1] <= y_max)
            )
            if not inside.all():
                bad = int(np.argmin(inside))
                raise ValidationError(
                    f"obstacle {bad} at {tuple(centers[bad])} outside bounds"
                )
            d_start = np.hypot(
                centers[:, 0] - self.start.x, centers[:, 1] - self.start.y
            )
            if d_start.min() < self.obstacles.d_th:
                raise ValidationError(
                    "start pose violates the clearance threshold "
                    f"(min distance {d_start.min():.3f} < {self.obstacles.d_th})"
                )
            d_goal = np.hypot(
                centers[:, 0] - self.goal.gx, centers[:, 1] - self.goal.gy
            )
            if d_goal.min() < self.obstacles.d_th:
                raise ValidationError(
                    "goal pose violates the clearance threshold "
                    f"(min distance {d_goal.min():.3f} < {self.obstacles.d_th})"
                )

    def to_dict(self) -> dict:
        """Round-trippable plain-dict form (raw threshold, not inflated)."""
        x_min, x_max, y_min, y_max = self.bounds
        d = {
            "name": self.name,
            "start": {"x": self.start.x, "y": self.start.y, "yaw": self.start.yaw},
            "goal": {"x": self.goal.gx, "y": self.goal.gy, "yaw": self.goal.gyaw},
            "obstacles": [
                {"x": float(cx), "y": float(cy)} for cx, cy in self.obstacles.centers
            ],
            "d_th": self.d_th_raw,
            "bounds": {"x_min": x_min, "x_max": x_max, "y_min": y_min, "y_max": y_max},
        }
        if self.inflate_obstacles is not None:
            d["inflate_obstacles"] = self.inflate_obstacles
        return d

    def digest(self) -> str:
        """Stable hash of the obstacle field (centers + effective threshold).

        Lets a remote client confirm it is rendering the same obstacle map
        the solver is constraining against.
        """
        payload = {
            "centers": [[round(float(c), 9) for c in row] for row in self.obstacles.centers],
            "d_th": round(float(self.obstacles.d_th), 9),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("ascii")).hexdigest()[:16]


def _build(raw: dict, origin: str) -> Scenario:
    for key in _REQUIRED_KEYS:
        if key not in raw:
            raise ParseError(f"{origin}: missing required field {key!r}")
    try:
        start = RobotState(
            float(raw["start"]["x"]), float(raw["start"]["y"]), float(raw["start"]["yaw"])
        )
        goal = GoalPose(
            float(raw["goal"]["x"]), float(raw["goal"]["y"]), float(raw["goal"]["yaw"])
        )
        if not isinstance(raw["obstacles"], list):
            raise ParseError(f"{origin}: obstacles must be a list of {{x, y}} objects")
        centers = np.asarray(
            [[float(o["x"]), float(o["y"])] for o in raw["obstacles"]], dtype=float
        )
        d_th = float(raw["d_th"])
        b = raw["bounds"]
        bounds = (
            float(b["x_min"]), float(b["x_max"]), float(b["y_min"]), float(b["y_max"])
        )
        inflate = raw.get("inflate_obstacles")
        inflate = None if inflate is None else float(inflate)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{origin}: malformed field ({exc})") from exc
    if d_th <= 0:
        raise ValidationError(f"{origin}: d_th must be positive, got {d_th}")
    if inflate is not None and inflate < 0:
        raise ValidationError(f"{origin}: inflate_obstacles must be >= 0")
    effective = d_th + (inflate or 0.0)
    obstacles = ObstacleSet(centers.reshape(-1, 2), d_th=effective)
    scenario = Scenario(
        name=str(raw["name"]),
        start=start,
        goal=goal,
        obstacles=obstacles,
        bounds=bounds,
        d_th_raw=d_th,
        inflate_obstacles=inflate,
    )
    scenario.validate()
    return scenario


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario from a JSON file path or a raw JSON string.

    Raises ParseError for malformed input (naming the offending field) and
    ValidationError for semantically invalid geometry.
    """
    text = None
    origin = "<string>"
    if isinstance(source, Path):
        origin = str(source)
        text = source.read_text()
    elif isinstance(source, str):
        stripped = source.lstrip()
        if stripped.startswith("{"):
            text = source
        else:
            origin = source
            path = Path(source)
            if not path.exists():
                raise ParseError(f"scenario file not found: {source}")
            text = path.read_text()
    else:
        raise ParseError(f"unsupported scenario source type {type(source)!r}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{origin}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{origin}: top level must be an object")
    return _build(raw, origin)


def builtin_scenario_names() -> list[str]:
    files = resources.files("conav.sim").joinpath("data")
    return sorted(p.name[: -len(".json")] for p in files.iterdir() if p.name.endswith(".json"))


def load_builtin(name: str) -> Scenario:
    files = resources.files("conav.sim").joinpath("data")
    candidate = files.joinpath(f"{name}.json")
    if not candidate.is_file():
        raise UnknownScenario(
            f"unknown scenario {name!r}; built-ins: {', '.join(builtin_scenario_names())}"
        )
    return load_scenario(candidate.read_text())


def resolve_scenario(name_or_path: str | Scenario) -> Scenario:
    """Accept a built-in name, a JSON path, or an already-built Scenario."""
    if isinstance(name_or_path, Scenario):
        return name_or_path
    try:
        return load_builtin(name_or_path)
    except UnknownScenario:
        pass
    return load_scenario(name_or_path)


def random_scenario(
    seed: int,
    n_obstacles: int = 6,
    bounds: tuple[float, float, float, float] = (0.0, 8.1, 0.0, 5.4),
    d_th: float = DEFAULT_D_TH,
    min_separation: float = 1.2,
    clearance: float = 1.0,
) -> Scenario:
    """Sample a solvable scenario: obstacles rejected until they keep
    ``min_separation`` between each other and ``clearance`` from both the
    start and the goal.
    """
    rng = np.random.default_rng(seed)
    x_min, x_max, y_min, y_max = bounds
    start = RobotState(x_min + 0.65, 0.5 * (y_min + y_max), 0.0)
    goal = GoalPose(
        x_max - 0.65,
        float(rng.uniform(y_min + 1.0, y_max - 1.0)),
        float(rng.uniform(-np.pi / 2, np.pi / 2)),
    )
    centers: list[tuple[float, float]] = []
    attempts = 0
    while len(centers) < n_obstacles:
        attempts += 1
        if attempts > 10_000:
            raise ValidationError(
                f"could not place {n_obstacles} obstacles with the requested spacing"
            )
        cx = float(rng.uniform(x_min + 0.8, x_max - 0.8))
        cy = float(rng.uniform(y_min + 0.5, y_max - 0.5))
        if np.hypot(cx - start.x, cy - start.y) < clearance:
            continue
        if np.hypot(cx - goal.gx, cy - goal.gy) < clearance:
            continue
        if any(np.hypot(cx - ox, cy - oy) < min_separation for ox, oy in centers):
            continue
        centers.append((cx, cy))
    scenario = Scenario(
        name=f"random-{seed}",
        start=start,
        goal=goal,
        obstacles=ObstacleSet(np.asarray(centers, dtype=float).reshape(-1, 2), d_th=d_th),
        bounds=bounds,
        d_th_raw=d_th,
    )
    scenario.validate()
    return scenario
