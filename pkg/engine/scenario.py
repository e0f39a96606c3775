"""Scenario configuration: what to spawn, what goal to reach, how to run the executive.

Scenarios are TOML files read and written with tomlkit. Unknown keys are errors and every file
carries 'schema_version'. See engine/doc/scenario_config.md for the full schema.

Round trip through TOML:
>>> cfg = ScenarioConfig(name="redo", spawn=SpawnRegion.edge(),
...     disturbances=(DisturbanceEvent(at_tick=140, kind=DisturbanceKind.RESET_OBJECT_TO_WALL),))
>>> scenario_from_toml(scenario_to_toml(cfg)) == cfg
True
>>> ms = preset("ms-central")
>>> scenario_from_toml(scenario_to_toml(ms)) == ms, ms.spawn.posture, ms.seed_policy
(True, <Posture.STANDING: 3>, <SeedPolicy.SPLIT: 2>)

Fail fast on typos:
>>> scenario_from_toml('schema_version = 1\\nhorizn = 50\\n')
Traceback (most recent call last):
...
engine.scenario.ConfigError: Unknown key(s) in scenario: horizn
"""
from __future__ import annotations
from dataclasses import dataclass, field, fields, replace
from enum import Enum, auto
from typing import Any
import logging
import tomlkit
from tomlkit.exceptions import TOMLKitError
from .geometry_types import Point2D, Pose4
from .world import (Corner, DisturbanceEvent, DisturbanceKind, GoalSource, GoalSpec,
                    InvalidScenario, Posture, SimConstants, ToteGeometry)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# name -> (w, d, h) in meters
OBJECT_CATALOG: dict[str, tuple[float, float, float]] = {
        "long_box":     (0.08, 0.05, 0.04),
        "cracker_box":  (0.07, 0.05, 0.05),
        "liquid_box":   (0.06, 0.04, 0.05),
        "oil_tin":      (0.06, 0.06, 0.05),
        }

PICKING_TOTE = ToteGeometry(origin=Point2D(x=0.0, y=0.0), width=0.40, depth=0.30,
                            wall_height=0.10)
PACKING_TOTE = ToteGeometry(origin=Point2D(x=0.50, y=0.0), width=0.40, depth=0.30,
                            wall_height=0.10)

DEFAULT_ORDERING = ("flip", "pick", "pack", "push")


class ConfigError(InvalidScenario):
    """A configuration file does not match its schema."""


class SpawnKind(Enum):
    """Where the object starts."""
    CENTRAL = auto()    # Flat, in the middle of the picking tote
    EDGE = auto()       # Upright, leaning against the left wall of the picking tote
    BOX = auto()        # Flat, anywhere in an explicit box
    STANDING = auto()   # Upright on its end, in the middle of the picking tote


class SeedPolicy(Enum):
    """How demo generation maps a seed to spawns when a scenario has several orderings."""
    SHARED = auto()     # Every ordering starts from the spawn of the same seed
    SPLIT = auto()      # Ordering i of seed s starts from the spawn of seed s*n + i

    def spawn_seed(self, seed: int, ordering: int, n_orderings: int) -> int:
        """Spawn seed of one (seed, ordering) demo.

        >>> [SeedPolicy.SPLIT.spawn_seed(s, i, 2) for s in (0, 1) for i in (0, 1)]
        [0, 1, 2, 3]
        >>> SeedPolicy.SHARED.spawn_seed(5, 1, 2)
        5
        """
        return seed if self is SeedPolicy.SHARED else seed*n_orderings + ordering


@dataclass(frozen=True)
class SpawnRegion:
    """Sampling ranges for the initial object pose.

    EDGE ignores x_range: x is whatever makes the footprint touch the left wall.

    >>> SpawnRegion.box(0.3, 0.5, 0.1, 0.2).validate(PICKING_TOTE)
    Traceback (most recent call last):
    ...
    engine.world.InvalidScenario: Spawn box x (0.3, 0.5) leaves the picking tote (0.0, 0.4)
    """
    kind:       SpawnKind
    x_range:    tuple[float, float]
    y_range:    tuple[float, float]
    yaw_range:  tuple[float, float]

    @classmethod
    def central(cls) -> SpawnRegion:
        """Middle of the picking tote, flat."""
        return cls(SpawnKind.CENTRAL, (0.12, 0.28), (0.10, 0.20), (-0.5, 0.5))

    @classmethod
    def edge(cls) -> SpawnRegion:
        """Band along the left wall, upright."""
        return cls(SpawnKind.EDGE, (0.0, 0.0), (0.08, 0.22), (-0.3, 0.3))

    @classmethod
    def standing(cls) -> SpawnRegion:
        """Middle of the picking tote, standing on its end."""
        return cls(SpawnKind.STANDING, (0.12, 0.28), (0.10, 0.20), (-0.5, 0.5))

    @classmethod
    def box(cls, x_min: float, x_max: float, y_min: float, y_max: float,
            yaw_min: float = -0.5, yaw_max: float = 0.5) -> SpawnRegion:
        """Explicit box, flat."""
        return cls(SpawnKind.BOX, (x_min, x_max), (y_min, y_max), (yaw_min, yaw_max))

    @property
    def posture(self) -> Posture:
        """Objects spawned in the wall band lean against the wall."""
        match self.kind:
            case SpawnKind.EDGE:
                return Posture.LEANING
            case SpawnKind.STANDING:
                return Posture.STANDING
        return Posture.FLAT

    def validate(self, picking: ToteGeometry) -> None:
        """Raise InvalidScenario if the region is empty or not inside the picking tote."""
        ranges = {"y": self.y_range, "yaw": self.yaw_range}
        if self.kind is not SpawnKind.EDGE:
            ranges["x"] = self.x_range
        for name, (lo, hi) in ranges.items():
            if lo > hi:
                raise InvalidScenario(f"Spawn {name} range is empty: ({lo}, {hi})")
        if self.kind is not SpawnKind.EDGE:
            lo, hi = self.x_range
            if lo < picking.x_min or hi > picking.x_max:
                raise InvalidScenario(f"Spawn box x ({lo}, {hi}) leaves the picking tote "
                                      f"({picking.x_min}, {picking.x_max})")
        lo, hi = self.y_range
        if lo < picking.y_min or hi > picking.y_max:
            raise InvalidScenario(f"Spawn box y ({lo}, {hi}) leaves the picking tote "
                                  f"({picking.y_min}, {picking.y_max})")


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that defines one experiment cell.

    >>> ScenarioConfig(horizon=50, max_ticks=40)
    Traceback (most recent call last):
    ...
    engine.world.InvalidScenario: max_ticks (40) must be >= horizon (50)
    """
    name:                   str = "gc"
    spawn:                  SpawnRegion = field(default_factory=SpawnRegion.central)
    object_kind:            str = "long_box"
    goal_corner:            Corner = Corner.BOTTOM_LEFT
    goal_source:            GoalSource = GoalSource.LANGUAGE
    goal_text:              str = ""        # Overrides goal_corner when set
    goal_patch:             tuple[float, ...] = ()  # (x0, y0, x1, y1), overrides goal_corner
    horizon:                int = 50        # Ticks per action chunk
    reestimate_interval:    int = 50        # Ticks between progress estimates
    max_ticks:              int = 3000
    max_cycles:             int = 0         # 0: unlimited. Open-loop: number of skills
    hold_ticks:             int = 100       # Stop-and-hold length after Complete
    disturbances:           tuple[DisturbanceEvent, ...] = ()
    noise_sigma:            float = 0.0     # Actuation noise on chunk targets (meters)
    thresholds:             tuple[float, ...] = ()  # Empty: use the skill bank's thresholds
    hysteresis:             bool = False
    hysteresis_margin:      float = 0.05
    abort_cycles:           int = 3
    abort_gain:             float = 0.05
    orderings:              tuple[tuple[str, ...], ...] = (DEFAULT_ORDERING,)
    seed_policy:            SeedPolicy = SeedPolicy.SHARED
    physics:                SimConstants = field(default_factory=SimConstants)

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.reestimate_interval < 1:
            raise InvalidScenario("horizon and reestimate_interval must be >= 1")
        if self.max_ticks < self.horizon:
            raise InvalidScenario(f"max_ticks ({self.max_ticks}) must be >= horizon "
                                  f"({self.horizon})")
        if self.object_kind not in OBJECT_CATALOG:
            raise InvalidScenario(f"Unknown object {self.object_kind!r}: expected one of "
                                  f"{', '.join(OBJECT_CATALOG)}")
        if self.noise_sigma < 0 or self.max_cycles < 0 or self.hold_ticks < 1:
            raise InvalidScenario("noise_sigma and max_cycles must be >= 0, hold_ticks >= 1")
        if self.goal_patch and len(self.goal_patch) != 4:
            raise InvalidScenario(f"goal_patch needs 4 values, got {len(self.goal_patch)}")
        if not self.orderings or not all(self.orderings):
            raise InvalidScenario("orderings must list at least one non-empty ordering")
        if any(not 0 < t <= 1 for t in self.thresholds):
            raise InvalidScenario(f"thresholds must be in (0, 1]: {self.thresholds}")

    @property
    def object_size(self) -> tuple[float, float, float]:
        """(w, d, h) of the scenario's object."""
        return OBJECT_CATALOG[self.object_kind]

    @property
    def skill_names(self) -> tuple[str, ...]:
        """Every skill named by any ordering, in first-appearance order."""
        names: list[str] = []
        for ordering in self.orderings:
            names.extend(n for n in ordering if n not in names)
        return tuple(names)

    def goal_spec(self, packing: ToteGeometry = PACKING_TOTE) -> GoalSpec:
        """Resolve the goal: instruction text, then image patch, then the plain corner."""
        size = self.object_size
        if self.goal_text:
            return GoalSpec.from_language(self.goal_text, packing, size)
        if self.goal_patch:
            x0, y0, x1, y1 = self.goal_patch
            return GoalSpec.from_image_patch((x0, y0, x1, y1), packing, size)
        return GoalSpec.for_corner(self.goal_corner, packing, size, self.goal_source)

    def with_goal(self, corner: Corner) -> ScenarioConfig:
        """Copy aimed at another corner (clears text and patch goals)."""
        return replace(self, goal_corner=corner, goal_text="", goal_patch=())


def preset(name: str) -> ScenarioConfig:
    """Named scenarios used by the experiment grids.

    >>> sorted(PRESETS)
    ['gc', 'gc-edge', 'ms-central', 'ms-edge', 'redo', 'skip']
    >>> preset("redo").spawn.kind
    <SpawnKind.EDGE: 2>
    """
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidScenario(f"Unknown preset {name!r}: expected one of "
                              f"{', '.join(sorted(PRESETS))}") from None


MS_ORDERINGS = (("flip", "pick", "pack"), ("pick", "pack", "flip"))

PRESETS: dict[str, ScenarioConfig] = {
        "gc": ScenarioConfig(name="gc"),
        "gc-edge": ScenarioConfig(name="gc-edge", spawn=SpawnRegion.edge()),
        "redo": ScenarioConfig(
            name="redo", spawn=SpawnRegion.edge(), hysteresis=True,
            disturbances=(DisturbanceEvent(at_tick=140,
                                           kind=DisturbanceKind.RESET_OBJECT_TO_WALL),)),
        "skip": ScenarioConfig(name="skip", spawn=SpawnRegion.central()),
        "ms-central": ScenarioConfig(name="ms-central", spawn=SpawnRegion.standing(),
                                     orderings=MS_ORDERINGS, seed_policy=SeedPolicy.SPLIT,
                                     hysteresis=True),
        "ms-edge": ScenarioConfig(name="ms-edge", spawn=SpawnRegion.edge(),
                                  orderings=MS_ORDERINGS, hysteresis=True),
        }


# ---------------------------------------------------------------------------------------------
# TOML
# ---------------------------------------------------------------------------------------------

def take_key(table: dict[str, Any], key: str, kind: type | tuple[type, ...], default: Any) -> Any:
    """Remove 'key' from 'table' and type-check it. Missing keys take 'default'."""
    if key not in table:
        return default
    value = table.pop(key)
    if isinstance(value, bool) and kind in (int, float, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"{key}: expected {kind}, got {value!r}")
    return value


def reject_leftovers(table: dict[str, Any], where: str) -> None:
    if table:
        raise ConfigError(f"Unknown key(s) in {where}: {', '.join(sorted(table))}")


def _spawn_from(value: Any) -> SpawnRegion:
    match value:
        case "central":
            return SpawnRegion.central()
        case "edge":
            return SpawnRegion.edge()
        case "standing":
            return SpawnRegion.standing()
        case dict():
            table = dict(value)
            region = SpawnRegion.box(
                    float(take_key(table, "x_min", (int, float), 0.12)),
                    float(take_key(table, "x_max", (int, float), 0.28)),
                    float(take_key(table, "y_min", (int, float), 0.10)),
                    float(take_key(table, "y_max", (int, float), 0.20)),
                    float(take_key(table, "yaw_min", (int, float), -0.5)),
                    float(take_key(table, "yaw_max", (int, float), 0.5)))
            reject_leftovers(table, "spawn")
            return region
    raise ConfigError(f"spawn: expected 'central', 'edge', 'standing' or a table, got {value!r}")


def _spawn_to(region: SpawnRegion) -> Any:
    if region == SpawnRegion.central():
        return "central"
    if region == SpawnRegion.edge():
        return "edge"
    if region == SpawnRegion.standing():
        return "standing"
    table = tomlkit.inline_table()
    table.update({"x_min": region.x_range[0], "x_max": region.x_range[1],
                  "y_min": region.y_range[0], "y_max": region.y_range[1],
                  "yaw_min": region.yaw_range[0], "yaw_max": region.yaw_range[1]})
    return table


def _disturbance_from(value: Any) -> DisturbanceEvent:
    if not isinstance(value, dict):
        raise ConfigError(f"disturbances: expected a table, got {value!r}")
    table = dict(value)
    at_tick = take_key(table, "at_tick", int, None)
    kind_code = take_key(table, "kind", str, None)
    pose = take_key(table, "pose", list, None)
    reject_leftovers(table, "disturbances")
    if at_tick is None or kind_code is None:
        raise ConfigError("disturbances: 'at_tick' and 'kind' are required")
    try:
        kind = DisturbanceKind.from_code(kind_code)
        return DisturbanceEvent(at_tick=at_tick, kind=kind,
                                pose=None if pose is None else Pose4.from_tuple(pose))
    except ValueError as err:
        raise ConfigError(f"disturbances: {err}") from err


def scenario_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    """Build a ScenarioConfig from parsed TOML. Raises ConfigError on any schema problem."""
    table = dict(data)
    version = take_key(table, "schema_version", int, None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    defaults = ScenarioConfig()
    physics_table = dict(take_key(table, "physics", dict, {}))
    physics = SimConstants(**{
        f.name: float(take_key(physics_table, f.name, (int, float),
                               getattr(defaults.physics, f.name)))
        for f in fields(SimConstants)})
    reject_leftovers(physics_table, "physics")
    try:
        goal_corner = Corner.from_code(take_key(table, "goal", str, defaults.goal_corner.code))
        goal_source = GoalSource[take_key(table, "goal_source", str, "language").upper()]
    except (ValueError, KeyError) as err:
        raise ConfigError(f"goal: {err}") from err
    policy = take_key(table, "seed_policy", str, defaults.seed_policy.name.lower())
    try:
        seed_policy = SeedPolicy[policy.upper()]
    except KeyError:
        raise ConfigError(f"seed_policy: expected 'shared' or 'split', got {policy!r}") from None
    cfg = ScenarioConfig(
            name=take_key(table, "name", str, defaults.name),
            spawn=_spawn_from(table.pop("spawn", "central")),
            object_kind=take_key(table, "object", str, defaults.object_kind),
            goal_corner=goal_corner,
            goal_source=goal_source,
            goal_text=take_key(table, "goal_text", str, ""),
            goal_patch=tuple(float(v) for v in take_key(table, "goal_patch", list, [])),
            horizon=take_key(table, "horizon", int, defaults.horizon),
            reestimate_interval=take_key(table, "reestimate_interval", int,
                                     defaults.reestimate_interval),
            max_ticks=take_key(table, "max_ticks", int, defaults.max_ticks),
            max_cycles=take_key(table, "max_cycles", int, defaults.max_cycles),
            hold_ticks=take_key(table, "hold_ticks", int, defaults.hold_ticks),
            disturbances=tuple(_disturbance_from(d)
                               for d in take_key(table, "disturbances", list, [])),
            noise_sigma=float(take_key(table, "noise_sigma", (int, float), defaults.noise_sigma)),
            thresholds=tuple(float(t) for t in take_key(table, "thresholds", list, [])),
            hysteresis=take_key(table, "hysteresis", bool, defaults.hysteresis),
            hysteresis_margin=float(take_key(table, "hysteresis_margin", (int, float),
                                         defaults.hysteresis_margin)),
            abort_cycles=take_key(table, "abort_cycles", int, defaults.abort_cycles),
            abort_gain=float(take_key(table, "abort_gain", (int, float), defaults.abort_gain)),
            orderings=tuple(tuple(str(n) for n in o)
                            for o in take_key(table, "orderings", list, [list(DEFAULT_ORDERING)])),
            seed_policy=seed_policy,
            physics=physics,
            )
    reject_leftovers(table, "scenario")
    return cfg


def scenario_from_toml(text: str) -> ScenarioConfig:
    """Parse scenario TOML text."""
    try:
        data = tomlkit.parse(text).unwrap()
    except TOMLKitError as err:
        raise ConfigError(f"Scenario is not valid TOML: {err}") from err
    cfg = scenario_from_dict(data)
    log.debug("Scenario %s: %s spawn, goal %s, %d disturbance(s)", cfg.name,
              cfg.spawn.kind.name.lower(), cfg.goal_corner.code, len(cfg.disturbances))
    return cfg


def scenario_to_toml(cfg: ScenarioConfig) -> str:
    """Serialize a ScenarioConfig. Every field is written, defaults included."""
    doc = tomlkit.document()
    doc.add(tomlkit.comment("Tote-world scenario. See engine/doc/scenario_config.md"))
    doc["schema_version"] = SCHEMA_VERSION
    doc["name"] = cfg.name
    doc["spawn"] = _spawn_to(cfg.spawn)
    doc["object"] = cfg.object_kind
    doc["goal"] = cfg.goal_corner.code
    doc["goal_source"] = cfg.goal_source.name.lower()
    doc["goal_text"] = cfg.goal_text
    doc["goal_patch"] = list(cfg.goal_patch)
    doc["horizon"] = cfg.horizon
    doc["reestimate_interval"] = cfg.reestimate_interval
    doc["max_ticks"] = cfg.max_ticks
    doc["max_cycles"] = cfg.max_cycles
    doc["hold_ticks"] = cfg.hold_ticks
    doc["noise_sigma"] = cfg.noise_sigma
    doc["thresholds"] = list(cfg.thresholds)
    doc["hysteresis"] = cfg.hysteresis
    doc["hysteresis_margin"] = cfg.hysteresis_margin
    doc["abort_cycles"] = cfg.abort_cycles
    doc["abort_gain"] = cfg.abort_gain
    doc["orderings"] = [list(o) for o in cfg.orderings]
    doc["seed_policy"] = cfg.seed_policy.name.lower()
    physics = tomlkit.table()
    for f in fields(SimConstants):
        physics[f.name] = getattr(cfg.physics, f.name)
    doc["physics"] = physics
    disturbances = tomlkit.aot()
    for event in cfg.disturbances:
        entry = tomlkit.table()
        entry["at_tick"] = event.at_tick
        entry["kind"] = event.kind.code
        if event.pose is not None:
            entry["pose"] = list(event.pose.as_tuple())
        disturbances.append(entry)
    if cfg.disturbances:
        doc["disturbances"] = disturbances
    return tomlkit.dumps(doc)
