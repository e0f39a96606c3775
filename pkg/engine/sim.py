"""Deterministic tote-world simulator.

spawn() builds the initial WorldState from a scenario and a seed. step() advances one tick and
never mutates its input. There is no hidden state: the random generator only runs in spawn(), so
two worlds can be stepped in any interleaving.

Tick semantics
--------------
    1. The tip moves toward the action target, at most max_travel per tick.
    2. If the object is free, the tip interacts with it:
        - tip coming down onto a flat object rests on its top face
        - tip pressing into an upright object deeper than flip_depth knocks it flat
        - tip moving beside a flat object, inside its footprint grown by push_margin and closer
          to its centre, drags the object rigidly: the contact point follows the tip and the
          object turns by the angle the tip swept about the centre. The walls of the tote that
          holds the object then slide it back inside.
    3. Suction events: +1 switches suction on and attaches an object whose top centre is within
       attach_radius of the tip, unless it leans against a wall. -1 switches suction off and sets
       the object down where it is: a standing object stays on its end, anything else lies flat.
    4. An attached object follows the tip, hanging its vertical extent below it.

Spawn an edge object, press straight down on it and watch it flip:
>>> from .scenario import ScenarioConfig, SpawnRegion
>>> world = spawn(ScenarioConfig(spawn=SpawnRegion.edge()), seed=3)
>>> world.object.posture, skill_postconditions(world).flip
(<Posture.LEANING: 2>, False)
>>> obj = world.object
>>> above = Pose4(x=obj.pose.x, y=obj.pose.y, z=obj.top_z + 0.01)
>>> world = replace(world, robot=above)
>>> for z in [above.z - 0.01*k for k in range(1, 7)]:
...     world = step(world, Action(target=replace(above, z=z)))
>>> world.object.posture, skill_postconditions(world).flip
(<Posture.FLAT: 1>, True)

A standing object can be picked on its end and set down upright. It still needs the flip:
>>> world = spawn(ScenarioConfig(spawn=SpawnRegion.standing()), seed=3)
>>> top = Pose4(x=world.object.pose.x, y=world.object.pose.y, z=world.object.top_z)
>>> held = step(replace(world, robot=top), Action(target=top, suction=1))
>>> lifted = step(held, Action(target=replace(top, z=top.z + 0.01)))
>>> round(lifted.object.pose.z, 9), lifted.object.posture
(0.01, <Posture.STANDING: 3>)
>>> down = step(lifted, Action(target=lifted.robot, suction=-1))
>>> down.object.posture, down.object.pose.z, skill_postconditions(down).flip
(<Posture.STANDING: 3>, 0.0, False)

Determinism and purity:
>>> w1 = spawn(ScenarioConfig(), seed=7)
>>> w2 = spawn(ScenarioConfig(), seed=7)
>>> w1 == w2
True
>>> target = Action(target=Pose4(x=0.3, y=0.1, z=0.1))
>>> a = step(w1, target)
>>> b = step(step(w2, target), target)
>>> a == step(w1, target) and b == step(a, target)
True
"""
from __future__ import annotations
from dataclasses import dataclass, replace
import logging
import math
import numpy as np
from .geometry_types import Point2D, Vec2D, Pose4, wrap_angle
from .geometry_operators import Matrix2D, Matrix2DH
from .scenario import PACKING_TOTE, PICKING_TOTE, ScenarioConfig, SpawnKind
from .world import (Action, DisturbanceEvent, DisturbanceKind, GoalSpec, InvalidScenario,
                    ObjectState, Observation, OutOfWorkspace, Postconditions, Posture,
                    ToteGeometry, ToteMembership, WorldState, yaw_error)

log = logging.getLogger(__name__)

HOME_POSE = Pose4(x=0.45, y=0.15, z=0.20, yaw=0.0)  # Above the gap between the totes
SEED_LIMIT = 2**64


def spawn(scenario: ScenarioConfig, seed: int) -> WorldState:
    """Initial world for a scenario, sampled with a generator seeded by 'seed'.

    >>> from .scenario import ScenarioConfig, SpawnRegion
    >>> w = spawn(ScenarioConfig(), seed=7)
    >>> 0.12 <= w.object.pose.x <= 0.28 and 0.10 <= w.object.pose.y <= 0.20
    True
    >>> w.object.posture
    <Posture.FLAT: 1>
    >>> e = spawn(ScenarioConfig(spawn=SpawnRegion.edge()), seed=11)
    >>> e.object.posture
    <Posture.LEANING: 2>
    >>> round(e.object.pose.x - e.object.aabb_half_extents()[0], 12)
    0.0
    >>> spawn(ScenarioConfig(), seed=-1)
    Traceback (most recent call last):
    ...
    engine.world.InvalidScenario: seed must be a 64-bit unsigned integer, got -1
    """
    if not 0 <= seed < SEED_LIMIT:
        raise InvalidScenario(f"seed must be a 64-bit unsigned integer, got {seed}")
    picking, packing = PICKING_TOTE, PACKING_TOTE
    region = scenario.spawn
    region.validate(picking)
    rng = np.random.default_rng(seed)
    yaw = float(rng.uniform(*region.yaw_range))
    size = scenario.object_size
    obj = ObjectState(pose=Pose4(x=0.0, y=0.0, z=0.0, yaw=yaw), size=size,
                      posture=region.posture)
    if region.kind is SpawnKind.EDGE:
        y = float(rng.uniform(*region.y_range))
        x = picking.x_min + obj.aabb_half_extents()[0]
    else:
        x = float(rng.uniform(*region.x_range))
        y = float(rng.uniform(*region.y_range))
    center = picking.clamp_inside(Point2D(x=x, y=y), obj.aabb_half_extents())
    obj = obj.moved_to(center)
    return WorldState(tick=0, robot=HOME_POSE, suction_on=False, object=obj,
                      picking=picking, packing=packing, goal=scenario.goal_spec(packing),
                      rng_seed=seed, constants=scenario.physics)


def _move_toward(robot: Pose4, target: Pose4, max_travel: float, max_yaw_rate: float) -> Pose4:
    """Tip pose after one tick of travel toward 'target'."""
    dist = robot.distance_to(target)
    if dist <= max_travel + 1e-12:
        x, y, z = target.x, target.y, target.z
    else:
        s = max_travel/dist
        x = robot.x + s*(target.x - robot.x)
        y = robot.y + s*(target.y - robot.y)
        z = robot.z + s*(target.z - robot.z)
    dyaw = wrap_angle(target.yaw - robot.yaw)
    dyaw = max(-max_yaw_rate, min(max_yaw_rate, dyaw))
    return Pose4(x=x, y=y, z=z, yaw=robot.yaw + dyaw)


def containing_tote(world: WorldState, point: Point2D) -> ToteGeometry | None:
    """The tote whose floor is under 'point', if any."""
    for tote in world.totes:
        if tote.contains(point):
            return tote
    return None


def _settle(world: WorldState, obj: ObjectState) -> ObjectState:
    """Slide a free object back inside the walls of its tote and the workspace."""
    center = world.workspace.clamp_planar(obj.center)
    tote = containing_tote(world, center)
    if tote is not None and obj.pose.z < tote.wall_height:
        center = tote.clamp_inside(center, obj.aabb_half_extents())
    return obj if center == obj.center else obj.moved_to(center)


def _push(world: WorldState, tip_old: Pose4, tip_new: Pose4, obj: ObjectState) -> ObjectState:
    """Rigid drag of a flat object by a tip moving beside it. See module docstring."""
    margin = world.constants.push_margin
    if not obj.footprint_contains(tip_new.planar, margin):
        return obj
    hw, hd = obj.half_extents
    old_local = obj.to_local(tip_old.planar)
    contact = obj.to_world(Vec2D(x=min(max(old_local.x, -hw - margin), hw + margin),
                                 y=min(max(old_local.y, -hd - margin), hd + margin)))
    center = obj.center
    to_contact = Vec2D.from_points(center, contact)
    to_tip = Vec2D.from_points(center, tip_new.planar)
    if to_tip.mag >= to_contact.mag - 1e-12:
        return obj
    swept = wrap_angle(to_tip.angle - to_contact.angle) if to_tip.mag > 1e-9 else 0.0
    motion = Matrix2DH.rotation_about(contact, swept).then(
            Matrix2DH.translation_by(Vec2D.from_points(contact, tip_new.planar)))
    moved = obj.moved_to(motion.multiply_point(center), yaw=obj.pose.yaw + swept)
    return _settle(world, moved)


def _tip_interaction(world: WorldState, tip_new: Pose4) -> tuple[Pose4, ObjectState]:
    """Resolve the tip against a free object: rest on top, flip, or push."""
    obj = world.object
    tip_old = world.robot
    top = obj.top_z
    if obj.upright:
        if (obj.footprint_contains(tip_new.planar)
                and top - tip_new.z > world.constants.flip_depth):
            log.debug("tick %d: %s object knocked flat", world.tick, obj.posture.code)
            obj = replace(obj, posture=Posture.FLAT, pose=replace(obj.pose, z=0.0))
        return tip_new, obj
    if tip_new.z >= top:
        return tip_new, obj
    if tip_old.z >= top - 1e-9 and obj.footprint_contains(tip_new.planar):
        return replace(tip_new, z=top), obj
    return tip_new, _push(world, tip_old, tip_new, obj)


def _attach(world: WorldState, tip: Pose4, obj: ObjectState) -> ObjectState:
    """Suction +1: attach if the tip is on the top centre of an object that is not leaning."""
    if obj.attached or obj.posture is Posture.LEANING:
        return obj
    top_center = Pose4(x=obj.pose.x, y=obj.pose.y, z=obj.top_z)
    if tip.distance_to(top_center) > world.constants.attach_radius:
        return obj
    rot_t = Matrix2D.rotation(tip.yaw).transpose
    offset = rot_t.multiply_vec(Vec2D.from_points(tip.planar, obj.center))
    return replace(obj, attached=True, grip_offset=offset,
                   grip_yaw=wrap_angle(obj.pose.yaw - tip.yaw))


def _follow(world: WorldState, tip: Pose4, obj: ObjectState) -> ObjectState:
    """An attached object hangs under the tip."""
    rot = Matrix2D.rotation(tip.yaw)
    center = world.workspace.clamp_planar(tip.planar.moved_by(rot.multiply_vec(obj.grip_offset)))
    return obj.moved_to(center, yaw=tip.yaw + obj.grip_yaw,
                        z=max(tip.z - obj.vertical_extent, 0.0))


def _release(world: WorldState, obj: ObjectState) -> ObjectState:
    """Set the object down where it is. Only a standing object stays on its end."""
    posture = Posture.STANDING if obj.posture is Posture.STANDING else Posture.FLAT
    dropped = replace(obj, attached=False, posture=posture,
                      grip_offset=Vec2D(x=0.0, y=0.0), grip_yaw=0.0,
                      pose=replace(obj.pose, z=0.0))
    return _settle(world, dropped)


def step(world: WorldState, action: Action, *, strict: bool = False) -> WorldState:
    """Advance the world by one tick. See the module docstring for the tick semantics.

    A target outside the workspace is rejected: only the tick advances. With strict=True the
    rejection raises OutOfWorkspace instead.

    >>> from .scenario import ScenarioConfig
    >>> w = spawn(ScenarioConfig(), seed=1)
    >>> far = Action(target=Pose4(x=2.0, y=0.0, z=0.1))
    >>> rejected = step(w, far)
    >>> rejected.tick, rejected.robot == w.robot
    (1, True)
    >>> step(w, far, strict=True)
    Traceback (most recent call last):
    ...
    engine.world.OutOfWorkspace: tick 0: target (2.000, 0.000, 0.100, yaw=0.000) is outside ...

    Suction far from the object does nothing but switch the suction on:
    >>> on = step(w, Action(target=w.robot, suction=1))
    >>> on.suction_on, on.object.attached
    (True, False)

    Attach on the top face, lift, then release: the object rests where it is, on the floor.
    >>> top = Pose4(x=w.object.pose.x, y=w.object.pose.y, z=w.object.top_z)
    >>> held = step(replace(w, robot=top), Action(target=top, suction=1))
    >>> held.object.attached
    True
    >>> lifted = step(held, Action(target=replace(top, z=top.z + 0.01)))
    >>> round(lifted.object.pose.z, 9)
    0.01
    >>> dropped = step(lifted, Action(target=lifted.robot, suction=-1))
    >>> dropped.object.attached, dropped.object.pose.z, dropped.suction_on
    (False, 0.0, False)
    >>> dropped.object.center == lifted.object.center
    True
    """
    constants = world.constants
    if not world.workspace.contains(action.target):
        message = f"tick {world.tick}: target {action.target} is outside the workspace"
        if strict:
            raise OutOfWorkspace(message)
        log.debug("%s, motion rejected", message)
        return replace(world, tick=world.tick + 1)
    tip = _move_toward(world.robot, action.target, constants.max_travel, constants.max_yaw_rate)
    obj = world.object
    if not obj.attached:
        tip, obj = _tip_interaction(world, tip)
    suction_on = world.suction_on
    if action.suction == 1:
        suction_on = True
        obj = _attach(world, tip, obj)
    elif action.suction == -1:
        suction_on = False
        if obj.attached:
            obj = _release(world, obj)
    if obj.attached:
        obj = _follow(world, tip, obj)
    return replace(world, tick=world.tick + 1, robot=tip, suction_on=suction_on, object=obj)


def reset_to_wall(world: WorldState, obj: ObjectState) -> ObjectState:
    """Stand the object upright against the left wall of the picking tote, near where it was."""
    picking = world.picking
    yaw = max(-0.3, min(0.3, obj.pose.yaw))
    leaning = replace(obj, posture=Posture.LEANING, attached=False,
                      grip_offset=Vec2D(x=0.0, y=0.0), grip_yaw=0.0,
                       pose=Pose4(x=0.0, y=0.0, z=0.0, yaw=yaw))
    ex, ey = leaning.aabb_half_extents()
    y = min(max(obj.pose.y, picking.y_min + ey), picking.y_max - ey)
    return leaning.moved_to(Point2D(x=picking.x_min + ex, y=y))


def apply_disturbance(world: WorldState, event: DisturbanceEvent) -> WorldState:
    """Apply a scheduled disturbance. The tick does not change.

    >>> from .scenario import ScenarioConfig
    >>> w = spawn(ScenarioConfig(), seed=2)
    >>> reset = apply_disturbance(w, DisturbanceEvent(0, DisturbanceKind.RESET_OBJECT_TO_WALL))
    >>> reset.object.posture, reset.tick == w.tick
    (<Posture.LEANING: 2>, True)
    >>> goal = w.goal.target_pose
    >>> moved = apply_disturbance(w, DisturbanceEvent(0, DisturbanceKind.TELEPORT_OBJECT, goal))
    >>> skill_postconditions(moved).all
    True
    """
    obj = world.object
    match event.kind:
        case DisturbanceKind.RESET_OBJECT_TO_WALL:
            obj = reset_to_wall(world, obj)
            return replace(world, object=obj, suction_on=False)
        case DisturbanceKind.TELEPORT_OBJECT:
            assert event.pose is not None
            pose = event.pose
            obj = replace(obj, attached=False, posture=Posture.FLAT,
                          grip_offset=Vec2D(x=0.0, y=0.0), grip_yaw=0.0,
                          pose=Pose4(x=pose.x, y=pose.y, z=0.0, yaw=pose.yaw))
            return replace(world, object=_settle(world, obj))
        case DisturbanceKind.DETACH_SUCTION:
            if obj.attached:
                obj = _release(world, obj)
            return replace(world, object=obj, suction_on=False)
    raise AssertionError(f"Unhandled disturbance {event.kind}")


def tote_membership(world: WorldState) -> ToteMembership:
    """Which tote holds the object centre."""
    center = world.object.center
    if world.picking.contains(center):
        return ToteMembership.PICKING
    if world.packing.contains(center):
        return ToteMembership.PACKING
    return ToteMembership.NEITHER


def in_contact(world: WorldState) -> bool:
    """Tip within contact_radius of the object, or holding it."""
    obj = world.object
    return obj.attached or obj.distance_to(world.robot) <= world.constants.contact_radius


def observe(world: WorldState) -> Observation:
    """Snapshot of what the executive can see.

    >>> from .scenario import ScenarioConfig
    >>> w = spawn(ScenarioConfig(), seed=4)
    >>> o = observe(w)
    >>> o.tick, o.contact, o.tote.name
    (0, False, 'PICKING')
    >>> observe(step(w, Action(target=w.robot))).tick
    1
    """
    obj = world.object
    return Observation(tick=world.tick,
                       robot=world.robot,
                       suction_on=world.suction_on,
                       object_pose=obj.pose,
                       object_size=obj.size,
                       posture=obj.posture,
                       attached=obj.attached,
                       contact=in_contact(world),
                       tote=tote_membership(world),
                       goal_corner=world.goal.corner)


def skill_postconditions(world: WorldState, goal: GoalSpec | None = None) -> Postconditions:
    """Success predicates of each skill on this world.

    >>> from .scenario import ScenarioConfig
    >>> w = spawn(ScenarioConfig(), seed=5)
    >>> target = w.goal.target_pose
    >>> at_goal = replace(w, object=w.object.moved_to(target.planar, yaw=target.yaw))
    >>> skill_postconditions(at_goal).all
    True
    >>> off = replace(w, object=w.object.moved_to(Point2D(x=target.x + 0.021, y=target.y),
    ...                                           yaw=0.0))
    >>> p = skill_postconditions(off)
    >>> p.push_position, p.push_orientation
    (False, True)
    """
    goal = world.goal if goal is None else goal
    obj = world.object
    constants = world.constants
    membership = tote_membership(world)
    target = goal.target_pose
    x_lo, x_hi, y_lo, y_hi = world.packing.quadrant(goal.corner)
    in_quadrant = x_lo <= obj.pose.x <= x_hi and y_lo <= obj.pose.y <= y_hi
    return Postconditions(
            flip=not obj.upright,
            pick=((obj.attached and obj.pose.z >= constants.lift_height - 1e-9)
                  or membership is not ToteMembership.PICKING),
            pack=in_quadrant and not obj.attached,
            push_orientation=abs(yaw_error(obj.pose.yaw, target.yaw)) <= constants.yaw_tolerance,
            push_position=obj.center.distance_to(target.planar) <= constants.position_tolerance,
            )


TRACE_FIELDS = ("tick", "robot_x", "robot_y", "robot_z", "robot_yaw", "suction_on",
                "object_x", "object_y", "object_z", "object_yaw", "upright", "attached",
                "contact")


@dataclass(frozen=True)
class TraceRow:
    """One tick of an episode, as exported to CSV."""
    tick:       int
    robot:      Pose4
    suction_on: bool
    object:     Pose4
    upright:    bool
    attached:   bool
    contact:    bool

    @classmethod
    def of(cls, world: WorldState) -> TraceRow:
        """Snapshot a world."""
        obj = world.object
        return cls(tick=world.tick, robot=world.robot, suction_on=world.suction_on,
                   object=obj.pose, upright=obj.upright, attached=obj.attached,
                   contact=in_contact(world))

    def as_csv_row(self) -> list[str]:
        """Fixed-precision strings in TRACE_FIELDS order.

        >>> from .scenario import ScenarioConfig
        >>> TraceRow.of(spawn(ScenarioConfig(), seed=7)).as_csv_row()[:6]
        ['0', '0.450000', '0.150000', '0.200000', '0.000000', '0']
        """
        def fmt(v: float) -> str:
            return f"{v:.6f}"
        r, o = self.robot, self.object
        return [str(self.tick), fmt(r.x), fmt(r.y), fmt(r.z), fmt(r.yaw),
                str(int(self.suction_on)), fmt(o.x), fmt(o.y), fmt(o.z), fmt(o.yaw),
                str(int(self.upright)), str(int(self.attached)), str(int(self.contact))]


def within_goal(row: TraceRow, goal: GoalSpec, position_tolerance: float,
                yaw_tolerance: float) -> bool:
    """Object resting at the goal pose within tolerances."""
    target = goal.target_pose
    return (not row.attached
            and math.hypot(row.object.x - target.x, row.object.y - target.y) <= position_tolerance
            and abs(yaw_error(row.object.yaw, target.yaw)) <= yaw_tolerance)
