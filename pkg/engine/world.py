"""Domain types of the tote world.

The world is two totes side by side on a table, one box-shaped object, and a suction tool whose tip
pose is the robot pose. Everything here is frozen: engine/sim.py builds a new WorldState on every
tick.

Frames
------
    x: from the picking tote toward the packing tote
    y: from the "bottom" of a tote toward its "top"
    z: up from the tote floor
    yaw: counter-clockwise about +z, 0 means the object's long side is along x

Object size is (w, d, h): w along the object's local x, d along local y, h vertical when the
object lies flat. An upright object, leaning against a wall or standing clear of them, rests on
its end, so its top is at z + w instead of z + h.

>>> box = ObjectState(pose=Pose4(x=0.2, y=0.15, z=0.0, yaw=0.0), size=(0.08, 0.05, 0.04))
>>> box.top_z
0.04
>>> box.half_extents
(0.04, 0.025)
>>> box.as_leaning().top_z, box.as_standing().vertical_extent
(0.08, 0.08)
"""
from __future__ import annotations
from dataclasses import dataclass, field, replace
from enum import Enum, auto
import math
from .geometry_types import Point2D, Vec2D, Pose4, wrap_angle
from .geometry_operators import Matrix2D


class SimError(Exception):
    """Base class of every error raised by the simulator."""


class InvalidScenario(SimError):
    """The scenario cannot be simulated (bad spawn region, bad geometry, bad seed)."""


class OutOfWorkspace(SimError):
    """An action would take the tool tip outside the workspace."""


class InvalidAction(SimError):
    """An action is malformed (suction outside {-1, 0, +1})."""


@dataclass(frozen=True)
class SimConstants:
    """Tunable constants of the simulator (meters, radians)."""
    max_travel:         float = 0.01    # Tip travel per tick
    attach_radius:      float = 0.02    # Suction attaches within this distance of the top centre
    contact_radius:     float = 0.02    # Contact indicator: tip within this distance of the object
    flip_depth:         float = 0.03    # Press depth on an upright object that knocks it flat
    lift_height:        float = 0.10    # Attached object z above this counts as picked
    yaw_tolerance:      float = 0.15    # Goal orientation tolerance
    position_tolerance: float = 0.02    # Goal position tolerance ("less than 2cm to the corner")
    push_margin:        float = 0.005   # Tip radius: footprint grows by this much for pushing
    max_yaw_rate:       float = 0.1     # Tool yaw change per tick

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not value > 0:
                raise InvalidScenario(f"physics.{name} must be > 0, got {value}")


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned bounds on the tool tip and on the object centre.

    >>> ws = Workspace()
    >>> ws.contains(Pose4(x=0.45, y=0.15, z=0.2))
    True
    >>> ws.contains(Pose4(x=1.0, y=0.15, z=0.2))
    False
    >>> print(ws.clamp_planar(Point2D(x=1.2, y=-0.3)))
    (0.950, -0.050)
    """
    x_min: float = -0.05
    x_max: float = 0.95
    y_min: float = -0.05
    y_max: float = 0.35
    z_min: float = 0.0
    z_max: float = 0.30

    def contains(self, pose: Pose4) -> bool:
        """True if the pose position is inside the bounds (inclusive)."""
        return (self.x_min <= pose.x <= self.x_max
                and self.y_min <= pose.y <= self.y_max
                and self.z_min <= pose.z <= self.z_max)

    def clamp_planar(self, point: Point2D) -> Point2D:
        """Nearest point inside the planar bounds."""
        return Point2D(x=min(max(point.x, self.x_min), self.x_max),
                       y=min(max(point.y, self.y_min), self.y_max))

    @property
    def diagonal(self) -> float:
        """Length of the planar diagonal: the normalization scale for distances."""
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)


class Corner(Enum):
    """Goal corner of the packing tote. 'Top' is +y, 'left' is -x."""
    TOP_LEFT = auto()
    TOP_RIGHT = auto()
    BOTTOM_LEFT = auto()
    BOTTOM_RIGHT = auto()

    @property
    def code(self) -> str:
        """Short code used on the command line and in files: tl, tr, bl, br."""
        return {Corner.TOP_LEFT: "tl", Corner.TOP_RIGHT: "tr",
                Corner.BOTTOM_LEFT: "bl", Corner.BOTTOM_RIGHT: "br"}[self]

    @property
    def is_top(self) -> bool:
        """True for the two +y corners."""
        return self in (Corner.TOP_LEFT, Corner.TOP_RIGHT)

    @property
    def is_left(self) -> bool:
        """True for the two -x corners."""
        return self in (Corner.TOP_LEFT, Corner.BOTTOM_LEFT)

    @property
    def inward(self) -> Vec2D:
        """Unit signs pointing from the corner into the tote.

        >>> Corner.TOP_LEFT.inward
        Vec2D(x=1.0, y=-1.0)
        """
        return Vec2D(x=1.0 if self.is_left else -1.0, y=-1.0 if self.is_top else 1.0)

    @classmethod
    def from_code(cls, code: str) -> Corner:
        """Parse tl/tr/bl/br.

        >>> Corner.from_code("BL")
        <Corner.BOTTOM_LEFT: 3>
        """
        for corner in cls:
            if corner.code == code.strip().lower():
                return corner
        raise ValueError(f"Unknown goal corner {code!r}: expected one of tl, tr, bl, br")


class ToteMembership(Enum):
    """Which tote contains the object centre."""
    PICKING = auto()
    PACKING = auto()
    NEITHER = auto()


class Posture(Enum):
    """How the object rests.

    LEANING is the upright object propped against a tote wall: suction cannot hold its end face.
    STANDING is upright on its end, clear of the walls: it can be picked and set down upright.
    """
    FLAT = auto()
    LEANING = auto()
    STANDING = auto()

    @property
    def upright(self) -> bool:
        """On its end, either way. Pressing the top face knocks it flat."""
        return self is not Posture.FLAT

    @property
    def code(self) -> str:
        """Name used in data files."""
        return self.name.lower()

    @classmethod
    def from_code(cls, code: str) -> Posture:
        """Parse flat/leaning/standing.

        >>> Posture.from_code("Standing")
        <Posture.STANDING: 3>
        >>> Posture.from_code("tilted")
        Traceback (most recent call last):
        ...
        ValueError: Unknown posture 'tilted': expected one of flat, leaning, standing
        """
        try:
            return cls[code.strip().upper()]
        except KeyError:
            raise ValueError(f"Unknown posture {code!r}: expected one of "
                             f"{', '.join(p.code for p in cls)}") from None


class GoalSource(Enum):
    """How the goal was communicated."""
    LANGUAGE = auto()
    IMAGE_PATCH = auto()


@dataclass(frozen=True)
class ToteGeometry:
    """An open box on the table.

    >>> tote = ToteGeometry(origin=Point2D(x=0.5, y=0.0), width=0.4, depth=0.3, wall_height=0.1)
    >>> tote.contains(Point2D(x=0.7, y=0.15))
    True
    >>> tote.quadrant(Corner.BOTTOM_LEFT)
    (0.5, 0.7, 0.0, 0.15)
    >>> print(tote.corner_point(Corner.TOP_RIGHT))
    (0.900, 0.300)
    """
    origin:         Point2D
    width:          float
    depth:          float
    wall_height:    float

    def __post_init__(self) -> None:
        if min(self.width, self.depth, self.wall_height) <= 0:
            raise InvalidScenario(f"Tote dimensions must be > 0: {self}")

    @property
    def x_min(self) -> float:
        """Left wall"""
        return self.origin.x

    @property
    def x_max(self) -> float:
        """Right wall"""
        return self.origin.x + self.width

    @property
    def y_min(self) -> float:
        """Bottom wall"""
        return self.origin.y

    @property
    def y_max(self) -> float:
        """Top wall"""
        return self.origin.y + self.depth

    @property
    def center(self) -> Point2D:
        """Planar centre of the tote floor."""
        return Point2D(x=self.origin.x + self.width/2, y=self.origin.y + self.depth/2)

    def contains(self, point: Point2D) -> bool:
        """True if the point is over the tote floor (walls inclusive)."""
        return self.x_min <= point.x <= self.x_max and self.y_min <= point.y <= self.y_max

    def overlaps(self, other: ToteGeometry) -> bool:
        """True if the two tote rectangles intersect."""
        return not (self.x_max < other.x_min or other.x_max < self.x_min
                    or self.y_max < other.y_min or other.y_max < self.y_min)

    def quadrant(self, corner: Corner) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, y_lo, y_hi) of the quarter of the floor nearest 'corner'."""
        x_mid = self.origin.x + self.width/2
        y_mid = self.origin.y + self.depth/2
        x_lo, x_hi = (self.x_min, x_mid) if corner.is_left else (x_mid, self.x_max)
        y_lo, y_hi = (y_mid, self.y_max) if corner.is_top else (self.y_min, y_mid)
        return (x_lo, x_hi, y_lo, y_hi)

    def corner_point(self, corner: Corner) -> Point2D:
        """The inside corner where two walls meet."""
        return Point2D(x=self.x_min if corner.is_left else self.x_max,
                       y=self.y_max if corner.is_top else self.y_min)

    def clamp_inside(self, center: Point2D, half_extents: tuple[float, float]) -> Point2D:
        """Slide a footprint with the given AABB half extents until it clears the walls."""
        ex, ey = half_extents
        return Point2D(x=min(max(center.x, self.x_min + ex), self.x_max - ex),
                       y=min(max(center.y, self.y_min + ey), self.y_max - ey))


@dataclass(frozen=True)
class GoalSpec:
    """Where the object must end up: a corner of the packing tote.

    The target pose puts the object flat in the corner with both walls touching and yaw 0.

    >>> packing = ToteGeometry(origin=Point2D(x=0.5, y=0.0), width=0.4, depth=0.3, wall_height=0.1)
    >>> goal = GoalSpec.for_corner(Corner.BOTTOM_LEFT, packing, size=(0.08, 0.05, 0.04))
    >>> print(goal.target_pose)
    (0.540, 0.025, 0.000, yaw=0.000)

    A language instruction names the corner:
    >>> GoalSpec.from_language("put it in the top right corner", packing, (0.08, 0.05, 0.04)).corner
    <Corner.TOP_RIGHT: 2>

    An image patch marks it (x0, y0, x1, y1 in packing-tote coordinates):
    >>> g = GoalSpec.from_image_patch((0.02, 0.2, 0.08, 0.28), packing, (0.08, 0.05, 0.04))
    >>> (g.corner, g.source)
    (<Corner.TOP_LEFT: 1>, <GoalSource.IMAGE_PATCH: 2>)
    """
    corner:         Corner
    target_pose:    Pose4
    source:         GoalSource = GoalSource.LANGUAGE

    @classmethod
    def for_corner(cls,
                   corner: Corner,
                   packing: ToteGeometry,
                   size: tuple[float, float, float],
                   source: GoalSource = GoalSource.LANGUAGE) -> GoalSpec:
        """Goal pose for an object of 'size' resting in 'corner' of the packing tote."""
        corner_xy = packing.corner_point(corner)
        inward = corner.inward
        target = Pose4(x=corner_xy.x + inward.x*size[0]/2,
                       y=corner_xy.y + inward.y*size[1]/2,
                       z=0.0, yaw=0.0)
        return cls(corner=corner, target_pose=target, source=source)

    @classmethod
    def from_language(cls,
                      text: str,
                      packing: ToteGeometry,
                      size: tuple[float, float, float]) -> GoalSpec:
        """Read 'top'/'upper' or 'bottom'/'lower' plus 'left' or 'right' from an instruction."""
        words = text.lower().replace("-", " ").split()
        is_top = any(w in ("top", "upper") for w in words)
        is_bottom = any(w in ("bottom", "lower") for w in words)
        is_left = "left" in words
        is_right = "right" in words
        if is_top == is_bottom or is_left == is_right:
            raise ValueError(f"Cannot read a goal corner from {text!r}")
        corner = {(True, True): Corner.TOP_LEFT, (True, False): Corner.TOP_RIGHT,
                  (False, True): Corner.BOTTOM_LEFT, (False, False): Corner.BOTTOM_RIGHT
                  }[(is_top, is_left)]
        return cls.for_corner(corner, packing, size, GoalSource.LANGUAGE)

    @classmethod
    def from_image_patch(cls,
                         patch: tuple[float, float, float, float],
                         packing: ToteGeometry,
                         size: tuple[float, float, float]) -> GoalSpec:
        """The patch (x0, y0, x1, y1), relative to the tote origin, marks the goal quarter."""
        x0, y0, x1, y1 = patch
        cx, cy = (x0 + x1)/2, (y0 + y1)/2
        if not (0 <= cx <= packing.width and 0 <= cy <= packing.depth):
            raise ValueError(f"Goal patch {patch} is not over the packing tote")
        is_left = cx < packing.width/2
        is_top = cy >= packing.depth/2
        corner = {(True, True): Corner.TOP_LEFT, (True, False): Corner.TOP_RIGHT,
                  (False, True): Corner.BOTTOM_LEFT, (False, False): Corner.BOTTOM_RIGHT
                  }[(is_top, is_left)]
        return cls.for_corner(corner, packing, size, GoalSource.IMAGE_PATCH)


@dataclass(frozen=True)
class ObjectState:
    """The single object in the scene.

    grip_offset and grip_yaw are only meaningful while attached: the object centre relative to
    the tool tip (tool frame) and the object yaw relative to the tool yaw, captured on attach.
    """
    pose:                   Pose4
    size:                   tuple[float, float, float]
    posture:                Posture = Posture.FLAT
    attached:               bool = False
    grip_offset:            Vec2D = field(default_factory=lambda: Vec2D(x=0.0, y=0.0))
    grip_yaw:               float = 0.0

    @property
    def width(self) -> float:
        """w"""
        return self.size[0]

    @property
    def depth(self) -> float:
        """d"""
        return self.size[1]

    @property
    def height(self) -> float:
        """h"""
        return self.size[2]

    @property
    def upright(self) -> bool:
        """Resting on its end."""
        return self.posture.upright

    @property
    def vertical_extent(self) -> float:
        """Bottom to top: w when upright, h when flat."""
        return self.width if self.posture.upright else self.height

    @property
    def top_z(self) -> float:
        """Height of the top face."""
        return self.pose.z + self.vertical_extent

    @property
    def half_extents(self) -> tuple[float, float]:
        """Half of the footprint in the object frame."""
        return (self.width/2, self.depth/2)

    @property
    def center(self) -> Point2D:
        """Planar centre."""
        return self.pose.planar

    def aabb_half_extents(self, yaw: float | None = None) -> tuple[float, float]:
        """Half extents of the axis-aligned box around the footprint at 'yaw' (default: own yaw).

        >>> box = ObjectState(pose=Pose4(x=0, y=0, z=0, yaw=math.pi/2), size=(0.08, 0.05, 0.04))
        >>> [round(e, 6) for e in box.aabb_half_extents()]
        [0.025, 0.04]
        """
        yaw = self.pose.yaw if yaw is None else yaw
        c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
        hw, hd = self.half_extents
        return (hw*c + hd*s, hw*s + hd*c)

    def to_local(self, point: Point2D) -> Vec2D:
        """Express a tote-frame point in the object frame (origin at the centre)."""
        rot_t = Matrix2D.rotation(self.pose.yaw).transpose
        return rot_t.multiply_vec(Vec2D.from_points(self.center, point))

    def to_world(self, local: Vec2D) -> Point2D:
        """Express an object-frame offset as a tote-frame point."""
        return self.center.moved_by(Matrix2D.rotation(self.pose.yaw).multiply_vec(local))

    def footprint_contains(self, point: Point2D, margin: float = 0.0) -> bool:
        """True if the point is over the footprint grown by 'margin' on every side."""
        local = self.to_local(point)
        hw, hd = self.half_extents
        return abs(local.x) <= hw + margin and abs(local.y) <= hd + margin

    def distance_to(self, tip: Pose4) -> float:
        """Distance from the tool tip to the object's bounding box (0 inside)."""
        local = self.to_local(tip.planar)
        hw, hd = self.half_extents
        dx = max(abs(local.x) - hw, 0.0)
        dy = max(abs(local.y) - hd, 0.0)
        dz = max(self.pose.z - tip.z, tip.z - self.top_z, 0.0)
        return math.sqrt(dx*dx + dy*dy + dz*dz)

    def as_leaning(self) -> ObjectState:
        """The same object propped upright against a wall."""
        return replace(self, posture=Posture.LEANING, attached=False)

    def as_standing(self) -> ObjectState:
        """The same object standing on its end, clear of the walls."""
        return replace(self, posture=Posture.STANDING, attached=False)

    def moved_to(self, center: Point2D, yaw: float | None = None, z: float | None = None
                 ) -> ObjectState:
        """Copy with a new planar centre (and optionally yaw and z)."""
        pose = self.pose
        return replace(self, pose=Pose4(x=center.x, y=center.y,
                                        z=pose.z if z is None else z,
                                        yaw=pose.yaw if yaw is None else yaw))


@dataclass(frozen=True)
class Action:
    """One control tick: an absolute tip target and a relative suction event.

    suction: +1 switches suction on, -1 switches it off, 0 leaves it as it is.

    >>> Action(target=Pose4(x=0.1, y=0.1, z=0.1), suction=2)
    Traceback (most recent call last):
    ...
    engine.world.InvalidAction: suction must be -1, 0 or +1, got 2
    """
    target:     Pose4
    suction:    int = 0

    def __post_init__(self) -> None:
        if self.suction not in (-1, 0, 1):
            raise InvalidAction(f"suction must be -1, 0 or +1, got {self.suction}")


class DisturbanceKind(Enum):
    """What a scheduled disturbance does to the world."""
    RESET_OBJECT_TO_WALL = auto()   # Stand the object upright against the picking-tote wall
    TELEPORT_OBJECT = auto()        # Put the object at a given pose (flat, detached)
    DETACH_SUCTION = auto()         # Suction fails: the object drops where it is

    @property
    def code(self) -> str:
        """Name used in scenario files."""
        return self.name.lower()

    @classmethod
    def from_code(cls, code: str) -> DisturbanceKind:
        """Parse a scenario-file name."""
        try:
            return cls[code.strip().upper()]
        except KeyError:
            raise ValueError(f"Unknown disturbance kind {code!r}: expected one of "
                             f"{', '.join(k.code for k in cls)}") from None


@dataclass(frozen=True)
class DisturbanceEvent:
    """A disturbance that fires after the step of tick 'at_tick'.

    >>> DisturbanceEvent(at_tick=-1, kind=DisturbanceKind.DETACH_SUCTION)
    Traceback (most recent call last):
    ...
    engine.world.InvalidScenario: Disturbance at_tick must be >= 0, got -1
    """
    at_tick:    int
    kind:       DisturbanceKind
    pose:       Pose4 | None = None     # TELEPORT_OBJECT only

    def __post_init__(self) -> None:
        if self.at_tick < 0:
            raise InvalidScenario(f"Disturbance at_tick must be >= 0, got {self.at_tick}")
        if (self.kind is DisturbanceKind.TELEPORT_OBJECT) != (self.pose is not None):
            raise InvalidScenario("A pose is required by teleport_object and only by it")


@dataclass(frozen=True)
class WorldState:
    """Full simulator state."""
    tick:           int
    robot:          Pose4
    suction_on:     bool
    object:         ObjectState
    picking:        ToteGeometry
    packing:        ToteGeometry
    goal:           GoalSpec
    rng_seed:       int
    workspace:      Workspace = field(default_factory=Workspace)
    constants:      SimConstants = field(default_factory=SimConstants)

    @property
    def totes(self) -> tuple[ToteGeometry, ToteGeometry]:
        """(picking, packing)"""
        return (self.picking, self.packing)


@dataclass(frozen=True)
class Observation:
    """What a controller or an estimator gets to see at one tick."""
    tick:           int
    robot:          Pose4
    suction_on:     bool
    object_pose:    Pose4
    object_size:    tuple[float, float, float]
    posture:        Posture
    attached:       bool
    contact:        bool
    tote:           ToteMembership
    goal_corner:    Corner

    @property
    def upright(self) -> bool:
        """The object rests on its end."""
        return self.posture.upright

    @property
    def object_extent(self) -> float:
        """Bottom to top of the object in its current posture."""
        return self.object_size[0] if self.upright else self.object_size[2]

    @property
    def object_top_z(self) -> float:
        """Height of the object's top face."""
        return self.object_pose.z + self.object_extent

    @property
    def as_object(self) -> ObjectState:
        """Rebuild the object geometry from the observation (grip offsets are not observed)."""
        return ObjectState(pose=self.object_pose, size=self.object_size,
                           posture=self.posture, attached=self.attached)


@dataclass(frozen=True)
class Postconditions:
    """Per-skill success predicates evaluated on one world state."""
    flip:               bool
    pick:               bool
    pack:               bool
    push_orientation:   bool
    push_position:      bool

    @property
    def push(self) -> bool:
        """Push is done when both of its segments are."""
        return self.push_orientation and self.push_position

    @property
    def all(self) -> bool:
        """Every criterion holds."""
        return all(self.as_dict().values())

    def as_dict(self) -> dict[str, bool]:
        """Criterion name -> value, in task order."""
        return {"flip": self.flip, "pick": self.pick, "pack": self.pack,
                "push_orientation": self.push_orientation, "push_position": self.push_position}


CRITERIA = ("flip", "pick", "pack", "push_orientation", "push_position")


def yaw_error(yaw: float, goal_yaw: float) -> float:
    """Signed yaw difference wrapped to (-pi, pi]."""
    return wrap_angle(yaw - goal_yaw)
