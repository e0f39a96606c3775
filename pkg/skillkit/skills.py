"""Scripted skill controllers, the policy bank and demonstration generation.

A controller looks at one Observation, the goal and the physics constants of the world it acts in
and returns a waypoint plan. plan_chunk rolls the
plan out into exactly H absolute tip targets (at most one waypoint leg per tick at the waypoint's
speed) and pads the rest of the chunk by holding the last target. Plans are open loop: the
executive re-plans from a fresh observation at the start of every chunk.

Default skills
--------------
    id  name    segments
    0   flip    (press,)
    1   pick    (grasp,)
    2   pack    (place,)
    3   push    (orientation, position)

Usage:
    bank = default_bank()
    world = spawn(scenario, seed)
    chunk = plan_chunk(bank, bank.skill_id("pick"), 0, observe(world), world.goal, horizon=50,
                       constants=world.constants)
    world = roll_out(world, chunk)

>>> bank = default_bank()
>>> [spec.name for spec in bank.skills]
['flip', 'pick', 'pack', 'push']
>>> bank.spec(3).segments
('orientation', 'position')
"""
from __future__ import annotations
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping, Sequence
import logging
import math
import numpy as np
from engine.geometry_types import Point2D, Vec2D, Pose4
from engine.geometry_operators import Matrix2D
from engine.scenario import PACKING_TOTE, ScenarioConfig
from engine.sim import HOME_POSE, observe, skill_postconditions, spawn, step
from engine.world import (Action, GoalSpec, Observation, Postconditions, SimConstants, Workspace,
                          WorldState, yaw_error)
from .annotation import Demonstration, SegmentMarker, Step, Window, object_moved, MOVE_LOOKBACK

log = logging.getLogger(__name__)

HOVER_Z = 0.18              # Transit height: clears the tote walls with an object attached
APPROACH_SPEED = 0.01       # Free-space travel per tick
PRESS_SPEED = 0.005         # Pressing down on an object
PUSH_SPEED = 0.004          # Entering contact and sweeping an arc
SLIDE_SPEED = 0.005         # Translating an object across the floor
FLIP_OVERSHOOT = 0.01       # Press this far past the flip depth
LIFT_CLEARANCE = 0.01       # Pick lifts the object this far above the lift height
DROP_INSET = 0.04           # Drop point distance from the goal pose, away from the walls
PUSH_STANDOFF = 0.02        # Where the tip descends before pushing, outside the footprint
PUSH_ENTRY = 0.003          # How far the tip enters the grown footprint to make contact
ARC_STEP = 0.003            # Arc length per tick while turning an object
ARC_INWARD = 0.0003         # Radius shrink per arc tick, keeps the tip pressing
RETREAT = 0.03              # Back-off after a push
NEAR = 0.005                # Planar distance that counts as "already above the target"
MAX_CHUNKS_PER_SEGMENT = 3


class SkillError(Exception):
    """Base class of the errors raised by the skill bank and the demo generator."""


class UnknownSkill(SkillError):
    """No skill with this id or name."""


class UnknownSegment(SkillError):
    """The skill has no segment with this index."""


class InfeasibleOrdering(SkillError):
    """A skill could not reach its postcondition from the state the ordering left it in."""


class DuplicateId(SkillError):
    """A skill with this id or name is already registered."""


class NonContiguousId(SkillError):
    """Skill ids must stay dense: the next id is the current bank size."""


@dataclass(frozen=True)
class SkillSpec:
    """One skill of the bank.

    >>> SkillSpec(id=0, name="flip", threshold=0.0)
    Traceback (most recent call last):
    ...
    ValueError: flip: threshold must be in (0, 1], got 0.0
    """
    id:         int
    name:       str
    threshold:  float = 0.9
    segments:   tuple[str, ...] = ("main",)

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"{self.name}: skill id must be >= 0, got {self.id}")
        if not 0 < self.threshold <= 1:
            raise ValueError(f"{self.name}: threshold must be in (0, 1], got {self.threshold}")
        if not self.segments:
            raise ValueError(f"{self.name}: a skill needs at least one segment")

    @property
    def k(self) -> int:
        """Number of segments."""
        return len(self.segments)


@dataclass(frozen=True)
class Waypoint:
    """A point the tip travels to at 'speed' per tick, firing 'suction' on arrival."""
    x:          float
    y:          float
    z:          float
    speed:      float = APPROACH_SPEED
    suction:    int = 0

    @classmethod
    def at(cls, point: Point2D, z: float, speed: float = APPROACH_SPEED, suction: int = 0
           ) -> Waypoint:
        """Waypoint above a planar point."""
        return cls(x=point.x, y=point.y, z=z, speed=speed, suction=suction)

    @property
    def planar(self) -> Point2D:
        """(x, y)"""
        return Point2D(x=self.x, y=self.y)


@dataclass(frozen=True)
class ActionChunk:
    """H consecutive actions, executed open loop.

    >>> chunk = ActionChunk.rollout(HOME_POSE, [Waypoint(x=0.45, y=0.15, z=0.17, suction=1)], 5)
    >>> [round(a.target.z, 3) for a in chunk]
    [0.19, 0.18, 0.17, 0.17, 0.17]
    >>> chunk.suction_events
    (0, 0, 1, 0, 0)
    """
    actions:    tuple[Action, ...]

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Action]:
        return iter(self.actions)

    @property
    def horizon(self) -> int:
        """H"""
        return len(self.actions)

    @property
    def suction_events(self) -> tuple[int, ...]:
        """The relative suction channel."""
        return tuple(a.suction for a in self.actions)

    @classmethod
    def rollout(cls, start: Pose4, waypoints: Sequence[Waypoint], horizon: int) -> ActionChunk:
        """Walk the waypoints from 'start', then cut or pad to exactly 'horizon' actions."""
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        actions: list[Action] = []
        here = np.array([start.x, start.y, start.z])
        for wp in waypoints:
            goal = np.array([wp.x, wp.y, wp.z])
            if wp.suction == 0 and np.linalg.norm(goal - here) < 1e-12:
                continue
            while len(actions) < horizon:
                dist = float(np.linalg.norm(goal - here))
                if dist <= wp.speed + 1e-12:
                    here = goal
                    actions.append(Action(target=_pose(here), suction=wp.suction))
                    break
                here = here + (goal - here)*(wp.speed/dist)
                actions.append(Action(target=_pose(here)))
            if len(actions) >= horizon:
                break
        while len(actions) < horizon:
            actions.append(Action(target=_pose(here)))
        return cls(actions=tuple(actions))

    def with_noise(self, sigma: float, seed: int, workspace: Workspace = Workspace()
                   ) -> ActionChunk:
        """Add zero-mean Gaussian noise to the targets, clipped to the workspace.

        >>> chunk = ActionChunk.rollout(HOME_POSE, [Waypoint(x=0.3, y=0.15, z=0.2)], 4)
        >>> noisy = chunk.with_noise(0.002, seed=1)
        >>> noisy == chunk.with_noise(0.002, seed=1), noisy == chunk
        (True, False)
        """
        rng = np.random.default_rng(seed)
        targets = np.array([[a.target.x, a.target.y, a.target.z] for a in self.actions])
        targets = targets + rng.normal(0.0, sigma, size=targets.shape)
        targets = np.clip(targets,
                          [workspace.x_min, workspace.y_min, workspace.z_min],
                          [workspace.x_max, workspace.y_max, workspace.z_max])
        return ActionChunk(actions=tuple(replace(a, target=_pose(t))
                                         for a, t in zip(self.actions, targets)))


def _pose(xyz: np.ndarray) -> Pose4:
    return Pose4(x=float(xyz[0]), y=float(xyz[1]), z=float(xyz[2]))


Controller = Callable[[Observation, GoalSpec, SimConstants], list[Waypoint]]


# ---------------------------------------------------------------------------------------------
# Controllers
# ---------------------------------------------------------------------------------------------

def transit(tip: Pose4, point: Point2D, z: float, speed: float = APPROACH_SPEED) -> list[Waypoint]:
    """Go to (point, z): rise to hover height, cross over, descend. Straight when already above."""
    waypoints = []
    if tip.planar.distance_to(point) > NEAR:
        if tip.z < HOVER_Z - 1e-9:
            waypoints.append(Waypoint(x=tip.x, y=tip.y, z=HOVER_Z))
        waypoints.append(Waypoint.at(point, HOVER_Z))
    waypoints.append(Waypoint.at(point, z, speed))
    return waypoints


def plan_flip(obs: Observation, _goal: GoalSpec, constants: SimConstants) -> list[Waypoint]:
    """Come down on the top of the upright object and press it flat against the floor."""
    center = obs.object_pose.planar
    top = obs.object_top_z
    tip = obs.robot
    waypoints = []
    if not (tip.planar.distance_to(center) <= NEAR and tip.z <= top + 0.01 + 1e-9):
        waypoints = transit(tip, center, top + 0.01)
    press = constants.flip_depth + FLIP_OVERSHOOT
    waypoints.append(Waypoint.at(center, top - press, PRESS_SPEED))
    waypoints.append(Waypoint.at(center, HOVER_Z))
    return waypoints


def lift_z(obs: Observation, constants: SimConstants) -> float:
    """Tip height at which the held object sits LIFT_CLEARANCE above the lift height.

    >>> from engine.scenario import ScenarioConfig, SpawnRegion
    >>> flat = observe(spawn(ScenarioConfig(), seed=1))
    >>> standing = observe(spawn(ScenarioConfig(spawn=SpawnRegion.standing()), seed=1))
    >>> round(lift_z(flat, SimConstants()), 9), round(lift_z(standing, SimConstants()), 9)
    (0.15, 0.19)
    """
    return constants.lift_height + LIFT_CLEARANCE + obs.object_extent


def _grasp(obs: Observation, constants: SimConstants) -> list[Waypoint]:
    center = obs.object_pose.planar
    waypoints = transit(obs.robot, center, obs.object_top_z)
    waypoints[-1] = replace(waypoints[-1], suction=1)
    waypoints.append(Waypoint.at(center, lift_z(obs, constants)))
    return waypoints


def plan_pick(obs: Observation, _goal: GoalSpec, constants: SimConstants) -> list[Waypoint]:
    """Descend onto the top face, switch suction on, lift just past the lift height.

    The object is held where pick's postcondition starts to hold. Carrying it higher is pack's
    business.
    """
    if obs.attached:
        return [Waypoint(x=obs.robot.x, y=obs.robot.y, z=lift_z(obs, constants))]
    return _grasp(obs, constants)


def drop_point(goal: GoalSpec) -> Point2D:
    """Where pack puts the object centre: inside the goal quadrant, clear of both walls."""
    return goal.target_pose.planar.moved_by(goal.corner.inward.scaled(DROP_INSET))


def plan_pack(obs: Observation, goal: GoalSpec, constants: SimConstants) -> list[Waypoint]:
    """Carry the object over the goal quadrant, set it down, switch suction off, rise.

    An object that is not held is grasped first. The set-down height is the object's vertical
    extent, so a standing object is set down on its end.
    """
    drop = drop_point(goal)
    height = obs.object_extent
    if obs.attached:
        offset = Vec2D.from_points(obs.robot.planar, obs.object_pose.planar)
        waypoints = transit(obs.robot, drop.moved_by(offset.scaled(-1.0)), height)
    else:
        waypoints = _grasp(obs, constants)
        lifted = Pose4(x=waypoints[-1].x, y=waypoints[-1].y, z=waypoints[-1].z)
        waypoints += transit(lifted, drop, height)
    waypoints[-1] = replace(waypoints[-1], suction=-1)
    waypoints.append(Waypoint(x=waypoints[-1].x, y=waypoints[-1].y, z=HOVER_Z))
    return waypoints


def _exit_distance(obs: Observation, direction: Vec2D, margin: float) -> float:
    """Distance from the object centre to the grown footprint boundary along 'direction'."""
    local = Matrix2D.rotation(obs.object_pose.yaw).transpose.multiply_vec(direction)
    hw = obs.object_size[0]/2 + margin
    hd = obs.object_size[1]/2 + margin
    limits = [half/abs(component) for half, component in ((hw, local.x), (hd, local.y))
              if abs(component) > 1e-9]
    return min(limits)


def plan_push_orientation(obs: Observation, goal: GoalSpec, constants: SimConstants
                          ) -> list[Waypoint]:
    """Hold the tip against the end of the object that faces the tote centre and sweep an arc.

    The arc radius shrinks a little every tick so the tip keeps pressing while the object turns
    to the goal yaw.
    """
    tip = obs.robot
    err = yaw_error(obs.object_pose.yaw, goal.target_pose.yaw)
    if abs(err) < 0.01:
        return [Waypoint(x=tip.x, y=tip.y, z=HOVER_Z)]
    center = obs.object_pose.planar
    z = obs.object_size[2]/2
    reach = obs.object_size[0]/2 + constants.push_margin
    start_angle = obs.object_pose.yaw
    inward = Vec2D.from_points(center, PACKING_TOTE.center)
    if Vec2D.from_angle(start_angle).dot(inward) < 0:
        start_angle += math.pi
    radius = reach - PUSH_ENTRY
    standoff = center.moved_by(Vec2D.from_angle(start_angle, reach + PUSH_STANDOFF))
    waypoints = transit(tip, standoff, z)
    waypoints.append(Waypoint.at(center.moved_by(Vec2D.from_angle(start_angle, radius)), z,
                                 PUSH_SPEED))
    steps = max(1, math.ceil(abs(err)*radius/ARC_STEP))
    for k in range(1, steps + 1):
        angle = start_angle - err*k/steps
        point = center.moved_by(Vec2D.from_angle(angle, radius - ARC_INWARD*k))
        waypoints.append(Waypoint.at(point, z, PUSH_SPEED))
    end_angle = start_angle - err
    away = center.moved_by(Vec2D.from_angle(end_angle, radius - ARC_INWARD*steps + RETREAT))
    waypoints.append(Waypoint.at(away, z))
    waypoints.append(Waypoint.at(away, HOVER_Z))
    return waypoints


def plan_push_position(obs: Observation, goal: GoalSpec, constants: SimConstants
                       ) -> list[Waypoint]:
    """Put the tip on the face opposite the goal and slide the object into the corner."""
    tip = obs.robot
    center = obs.object_pose.planar
    target = goal.target_pose.planar
    to_target = Vec2D.from_points(center, target)
    if to_target.mag < 0.002:
        return [Waypoint(x=tip.x, y=tip.y, z=HOVER_Z)]
    heading = to_target.to_unit_vec()
    behind = heading.scaled(-1.0)
    face = _exit_distance(obs, behind, constants.push_margin)
    z = obs.object_size[2]/2
    entry = min(PUSH_ENTRY, to_target.mag)
    waypoints = transit(tip, center.moved_by(behind.scaled(face + PUSH_STANDOFF)), z)
    waypoints.append(Waypoint.at(center.moved_by(behind.scaled(face - entry)), z, PUSH_SPEED))
    end = target.moved_by(behind.scaled(face - 0.001))
    waypoints.append(Waypoint.at(end, z, SLIDE_SPEED))
    away = end.moved_by(behind.scaled(RETREAT))
    waypoints.append(Waypoint.at(away, z))
    waypoints.append(Waypoint.at(away, HOVER_Z))
    return waypoints


def plan_settle(obs: Observation, _goal: GoalSpec, _constants: SimConstants) -> list[Waypoint]:
    """Press the object down once on its top face."""
    center = obs.object_pose.planar
    top = obs.object_top_z
    waypoints = transit(obs.robot, center, top + 0.01)
    waypoints.append(Waypoint.at(center, top - 0.005, PRESS_SPEED))
    waypoints.append(Waypoint.at(center, HOVER_Z))
    return waypoints


def plan_home(obs: Observation) -> list[Waypoint]:
    """Back off to the home pose."""
    return transit(obs.robot, HOME_POSE.planar, HOME_POSE.z)


# ---------------------------------------------------------------------------------------------
# Policy bank
# ---------------------------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyBank:
    """Skills and their controllers, one per (skill, segment). Immutable: see register_skill.

    >>> bank = default_bank()
    >>> bank.skill_id("push"), bank.size
    (3, 4)
    >>> bank.controller(3, 2)
    Traceback (most recent call last):
    ...
    skillkit.skills.UnknownSegment: push has 2 segment(s), no segment 2
    >>> bank.skill_id("wipe")
    Traceback (most recent call last):
    ...
    skillkit.skills.UnknownSkill: No skill named 'wipe': expected one of flip, pick, pack, push
    """
    skills:         tuple[SkillSpec, ...]
    controllers:    tuple[tuple[Controller, ...], ...]

    def __post_init__(self) -> None:
        if len(self.skills) != len(self.controllers):
            raise ValueError("One controller tuple per skill is required")
        for index, (spec, controllers) in enumerate(zip(self.skills, self.controllers)):
            if spec.id != index:
                raise NonContiguousId(f"Skill {spec.name} has id {spec.id}, expected {index}")
            if len(controllers) != spec.k:
                raise ValueError(f"{spec.name} has {spec.k} segment(s) but "
                                 f"{len(controllers)} controller(s)")

    @property
    def size(self) -> int:
        """N, the number of skills and the dimension of a progress vector."""
        return len(self.skills)

    @property
    def names(self) -> tuple[str, ...]:
        """Skill names in id order."""
        return tuple(spec.name for spec in self.skills)

    @property
    def thresholds(self) -> tuple[float, ...]:
        """theta_i in id order."""
        return tuple(spec.threshold for spec in self.skills)

    def spec(self, skill_id: int) -> SkillSpec:
        """The SkillSpec with this id."""
        if not 0 <= skill_id < self.size:
            raise UnknownSkill(f"No skill with id {skill_id} in a bank of {self.size}")
        return self.skills[skill_id]

    def skill_id(self, name: str) -> int:
        """Id of the skill called 'name'."""
        for spec in self.skills:
            if spec.name == name:
                return spec.id
        raise UnknownSkill(f"No skill named {name!r}: expected one of {', '.join(self.names)}")

    def resolve(self, names: Sequence[str]) -> tuple[int, ...]:
        """Skill ids of an ordering given by name."""
        return tuple(self.skill_id(name) for name in names)

    def controller(self, skill_id: int, segment: int) -> Controller:
        """The controller of one segment of one skill."""
        spec = self.spec(skill_id)
        if not 0 <= segment < spec.k:
            raise UnknownSegment(f"{spec.name} has {spec.k} segment(s), no segment {segment}")
        return self.controllers[skill_id][segment]

    def with_thresholds(self, thresholds: Sequence[float]) -> PolicyBank:
        """Copy with new termination thresholds. An empty sequence keeps the current ones."""
        if not thresholds:
            return self
        if len(thresholds) != self.size:
            raise ValueError(f"Expected {self.size} thresholds, got {len(thresholds)}")
        skills = tuple(replace(spec, threshold=t) for spec, t in zip(self.skills, thresholds))
        return replace(self, skills=skills)


def default_bank() -> PolicyBank:
    """flip, pick, pack and the two-segment push."""
    return PolicyBank(
            skills=(SkillSpec(id=0, name="flip", segments=("press",)),
                    SkillSpec(id=1, name="pick", segments=("grasp",)),
                    SkillSpec(id=2, name="pack", segments=("place",)),
                    SkillSpec(id=3, name="push", segments=("orientation", "position"))),
            controllers=((plan_flip,), (plan_pick,), (plan_pack,),
                         (plan_push_orientation, plan_push_position)))


SETTLE = SkillSpec(id=4, name="settle", segments=("press",))


def register_skill(bank: PolicyBank, spec: SkillSpec, controllers: Sequence[Controller]
                   ) -> PolicyBank:
    """Return a new bank with one more skill. The old bank and its controllers are untouched.

    >>> bank = default_bank()
    >>> bigger = register_skill(bank, SETTLE, [plan_settle])
    >>> bigger.size, bank.size
    (5, 4)
    >>> all(new is old for new, old in zip(bigger.controllers, bank.controllers))
    True
    >>> register_skill(bank, replace(SETTLE, id=7), [plan_settle])
    Traceback (most recent call last):
    ...
    skillkit.skills.NonContiguousId: New skill settle has id 7, the next free id is 4
    >>> register_skill(bank, replace(SETTLE, id=2), [plan_settle])
    Traceback (most recent call last):
    ...
    skillkit.skills.DuplicateId: Skill id 2 is already taken by pack
    """
    if spec.id < bank.size:
        raise DuplicateId(f"Skill id {spec.id} is already taken by {bank.skills[spec.id].name}")
    if spec.name in bank.names:
        raise DuplicateId(f"A skill named {spec.name!r} is already registered")
    if spec.id != bank.size:
        raise NonContiguousId(f"New skill {spec.name} has id {spec.id}, the next free id is "
                              f"{bank.size}")
    return PolicyBank(skills=bank.skills + (spec,),
                      controllers=bank.controllers + (tuple(controllers),))


def plan_chunk(bank: PolicyBank,
               skill_id: int,
               segment: int,
               observation: Observation,
               goal: GoalSpec,
               horizon: int,
               *,
               constants: SimConstants,
               noise_sigma: float = 0.0,
               seed: int = 0) -> ActionChunk:
    """H actions of one segment of one skill, planned from 'observation' for a world with these
    physics constants.

    A pick planned right above the object switches suction on exactly once:
    >>> from engine.scenario import ScenarioConfig
    >>> world = spawn(ScenarioConfig(), seed=3)
    >>> obj = world.object
    >>> world = replace(world, robot=Pose4(x=obj.pose.x, y=obj.pose.y, z=HOVER_Z))
    >>> bank = default_bank()
    >>> chunk = plan_chunk(bank, 1, 0, observe(world), world.goal, horizon=50,
    ...                    constants=world.constants)
    >>> len(chunk), chunk.suction_events.count(1), chunk.suction_events.count(-1)
    (50, 1, 0)

    Roll the pick out: the object ends up held just past the lift height, not at transit height.
    >>> held = roll_out(world, chunk)
    >>> skill_postconditions(held).pick, round(held.object.pose.z, 9)
    (True, 0.11)

    The lift follows the physics of the world it runs in:
    >>> high = replace(world, constants=replace(world.constants, lift_height=0.12))
    >>> higher = roll_out(high, plan_chunk(bank, 1, 0, observe(high), high.goal, horizon=50,
    ...                                    constants=high.constants))
    >>> skill_postconditions(higher).pick, round(higher.object.pose.z, 9)
    (True, 0.13)

    Then pack into the bottom-left quarter in one long chunk:
    >>> packed = roll_out(held, plan_chunk(bank, 2, 0, observe(held), held.goal, horizon=120,
    ...                                    constants=held.constants))
    >>> held.goal.corner.code, skill_postconditions(packed).pack
    ('bl', True)

    >>> plan_chunk(bank, 9, 0, observe(world), world.goal, horizon=50, constants=world.constants)
    Traceback (most recent call last):
    ...
    skillkit.skills.UnknownSkill: No skill with id 9 in a bank of 4
    """
    controller = bank.controller(skill_id, segment)
    chunk = ActionChunk.rollout(observation.robot, controller(observation, goal, constants),
                                horizon)
    if noise_sigma > 0:
        chunk = chunk.with_noise(noise_sigma, seed)
    return chunk


def plan_hold(observation: Observation, horizon: int) -> ActionChunk:
    """Back off to the home pose and wait there."""
    return ActionChunk.rollout(observation.robot, plan_home(observation), horizon)


def roll_out(world: WorldState, chunk: ActionChunk) -> WorldState:
    """Step the world through every action of a chunk."""
    for action in chunk:
        world = step(world, action)
    return world


# ---------------------------------------------------------------------------------------------
# Demonstrations
# ---------------------------------------------------------------------------------------------

SEGMENT_DONE: Mapping[tuple[str, int], Callable[[Postconditions], bool]] = {
        ("flip", 0): lambda post: post.flip,
        ("pick", 0): lambda post: post.pick,
        ("pack", 0): lambda post: post.pack,
        ("push", 0): lambda post: post.push_orientation,
        ("push", 1): lambda post: post.push_position,
        }


def segment_done(name: str, segment: int, post: Postconditions, chunks_run: int) -> bool:
    """Has the segment reached its postcondition? Skills without one are done after one chunk."""
    done = SEGMENT_DONE.get((name, segment))
    return chunks_run > 0 if done is None else done(post)


@dataclass
class _WindowTracker:
    """Follows the execution window of every skill while a demo is being generated."""
    recent:     deque[Observation] = field(default_factory=lambda: deque(maxlen=MOVE_LOOKBACK + 1))
    first:      dict[int, int] = field(default_factory=dict)
    last:       dict[int, int] = field(default_factory=dict)
    marked:     dict[tuple[int, int], list[int]] = field(default_factory=dict)

    def record(self, entry: Step) -> None:
        """Feed the next step."""
        obs = entry.observation
        self.recent.append(obs)
        marker = entry.marker
        if marker is None:
            return
        self.marked.setdefault((marker.skill, marker.segment), []).append(obs.tick)
        if not obs.contact:
            return
        self.first.setdefault(marker.skill, obs.tick)
        if object_moved(self.recent[0], obs) or entry.action.suction != 0:
            self.last[marker.skill] = obs.tick

    def windows(self, bank: PolicyBank) -> dict[int, Window]:
        """Ground-truth window of every skill that touched the object."""
        result = {}
        for skill, start in self.first.items():
            end = max(self.last.get(skill, start), start)
            segments = []
            for segment in range(bank.spec(skill).k):
                ticks = [t for t in self.marked.get((skill, segment), []) if start <= t <= end]
                segments.append((ticks[0], ticks[-1]) if ticks else None)
            result[skill] = Window(start=start, end=end, segments=tuple(segments))
        return result


def generate_demo(bank: PolicyBank,
                  ordering: Sequence[int],
                  scenario: ScenarioConfig,
                  seed: int) -> Demonstration:
    """Scripted demonstration of one skill ordering from a freshly spawned world.

    Every segment gets at most MAX_CHUNKS_PER_SEGMENT chunks to reach its postcondition.
    Skills whose postconditions already hold are not executed and do not appear in the
    demo's ordering. A final chunk backs off to the home pose.

    >>> from engine.scenario import ScenarioConfig, SpawnRegion
    >>> bank = default_bank()
    >>> demo = generate_demo(bank, [0, 1, 2, 3], ScenarioConfig(), seed=1)
    >>> demo.ordering
    (1, 2, 3)
    >>> [s.action.suction for s in demo.steps if s.action.suction != 0]
    [1, -1]
    >>> demo == generate_demo(bank, [0, 1, 2, 3], ScenarioConfig(), seed=1)
    True

    An object leaning against the wall cannot be picked before it is flipped:
    >>> generate_demo(bank, [1, 0, 2, 3], ScenarioConfig(spawn=SpawnRegion.edge()), seed=1)
    Traceback (most recent call last):
    ...
    skillkit.skills.InfeasibleOrdering: seed 1: pick segment 0 did not finish in 3 chunks
    """
    world = spawn(scenario, seed)
    goal = world.goal
    horizon = scenario.horizon
    steps: list[Step] = []
    executed: list[int] = []
    tracker = _WindowTracker()
    chunk_count = 0

    def run(chunk: ActionChunk, marker: SegmentMarker | None) -> None:
        nonlocal world
        for action in chunk:
            entry = Step(observation=observe(world), action=action, marker=marker)
            tracker.record(entry)
            steps.append(entry)
            world = step(world, action)

    for skill_id in ordering:
        spec = bank.spec(skill_id)
        ran = False
        for segment in range(spec.k):
            chunks_run = 0
            while not segment_done(spec.name, segment, skill_postconditions(world), chunks_run):
                if chunks_run == MAX_CHUNKS_PER_SEGMENT:
                    raise InfeasibleOrdering(f"seed {seed}: {spec.name} segment {segment} did "
                                             f"not finish in {MAX_CHUNKS_PER_SEGMENT} chunks")
                chunk = plan_chunk(bank, skill_id, segment, observe(world), goal, horizon,
                                   constants=world.constants,
                                   noise_sigma=scenario.noise_sigma,
                                   seed=seed*4096 + chunk_count)
                run(chunk, SegmentMarker(skill=skill_id, segment=segment))
                chunks_run += 1
                chunk_count += 1
            ran = ran or chunks_run > 0
        if ran:
            executed.append(skill_id)
        else:
            log.debug("seed %d: %s already done, skipped", seed, spec.name)
    run(plan_hold(observe(world), horizon), None)
    return Demonstration(steps=tuple(steps), ordering=tuple(executed), goal=goal,
                         scenario=scenario.name, seed=seed, truth=tracker.windows(bank))


def generate_demos(bank: PolicyBank,
                   scenario: ScenarioConfig,
                   seeds: Sequence[int]) -> tuple[list[Demonstration], list[tuple[int, str]]]:
    """One demo per (seed, ordering) pair. Infeasible pairs are reported, not raised.

    The scenario's seed policy says which spawn each pair starts from. Returns (demos, skipped)
    where skipped lists (spawn seed, reason).

    Both orderings of a standing object are feasible, each from its own spawns:
    >>> from engine.scenario import preset
    >>> bank = default_bank()
    >>> demos, skipped = generate_demos(bank, preset("ms-central"), [4])
    >>> [(d.seed, d.ordering) for d in demos], skipped
    ([(8, (0, 1, 2)), (9, (1, 2, 0))], [])
    """
    demos: list[Demonstration] = []
    skipped: list[tuple[int, str]] = []
    orderings = [bank.resolve(names) for names in scenario.orderings]
    policy = scenario.seed_policy
    for seed in seeds:
        for index, ordering in enumerate(orderings):
            spawn_seed = policy.spawn_seed(seed, index, len(orderings))
            try:
                demos.append(generate_demo(bank, ordering, scenario, spawn_seed))
            except InfeasibleOrdering as err:
                log.debug("%s", err)
                skipped.append((spawn_seed, str(err)))
    return demos, skipped
