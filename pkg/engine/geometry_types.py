"""Geometry data types: points, vectors and end-effector poses.

All types are frozen. The simulator builds a new WorldState on every tick, so geometry values are
never updated in place: use the methods that return a new value (scaled, rotated, moved_by).
"""
from __future__ import annotations
from dataclasses import dataclass
import sys
import math

FLOAT_PRINT_PRECISION = 0.3


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to the interval (-pi, pi].

    >>> wrap_angle(0.5)
    0.5
    >>> wrap_angle(-math.pi) == math.pi
    True
    >>> round(wrap_angle(3*math.pi/2), 12) == round(-math.pi/2, 12)
    True
    """
    wrapped = math.remainder(angle, 2*math.pi)
    if wrapped <= -math.pi:
        wrapped += 2*math.pi
    return wrapped


@dataclass(frozen=True)
class Point2D:
    """Two-dimensional point in the tote plane (meters).

    A point is like a vector from the origin, but is not a vector.
    A vector can be translated, a point cannot.

    >>> point = Point2D(x=0.1, y=0.2)
    >>> point
    Point2D(x=0.1, y=0.2)
    >>> point.as_tuple()
    (0.1, 0.2)
    >>> print(point)
    (0.100, 0.200)

    Move a point by a vector:
    >>> print(point.moved_by(Vec2D(x=0.3, y=-0.2)))
    (0.400, 0.000)

    Distance between points:
    >>> Point2D(x=0, y=0).distance_to(Point2D(x=3, y=4))
    5.0
    """
    x: float
    y: float

    def as_vec(self) -> Vec2D:
        """Consider this point as a vector from (0,0)."""
        return Vec2D(x=self.x, y=self.y)

    def as_tuple(self) -> tuple[float, float]:
        """Return point as (x, y)."""
        return (self.x, self.y)

    def moved_by(self, vec: Vec2D) -> Point2D:
        """Return the point translated by 'vec'."""
        return Point2D(x=self.x + vec.x, y=self.y + vec.y)

    def distance_to(self, other: Point2D) -> float:
        """Euclidean distance to another point."""
        return math.hypot(other.x - self.x, other.y - self.y)

    def __str__(self) -> str:
        """Point as string with three decimal places (default: FLOAT_PRINT_PRECISION)."""
        return self.fmt(FLOAT_PRINT_PRECISION)

    def fmt(self, precision: float) -> str:
        """Point as a string with the desired precision."""
        return f"({self.x:{precision}f}, {self.y:{precision}f})"

    @classmethod
    def from_tuple(cls, position: tuple[float, float]) -> Point2D:
        """Create a point from (x, y)."""
        return cls(x=position[0], y=position[1])


@dataclass(frozen=True)
class Vec2D:
    """Two-dimensional vector.

    >>> vec = Vec2D(x=3, y=4)
    >>> vec.mag
    5.0
    >>> vec.to_unit_vec()
    Vec2D(x=0.6, y=0.8)
    >>> vec.scaled(2)
    Vec2D(x=6, y=8)
    >>> vec.dot(Vec2D(x=1, y=0))
    3
    >>> vec.cross(Vec2D(x=1, y=0))
    -4

    Rotate by a quarter turn:
    >>> print(Vec2D(x=1, y=0).rotated(math.pi/2))
    (0.000, 1.000)

    Obtain a vector by subtracting two points:
    >>> Vec2D.from_points(start=Point2D(x=1, y=-1), end=Point2D(x=1, y=0))
    Vec2D(x=0, y=1)

    The zero vector has a unit vector of zero instead of a division error:
    >>> Vec2D(x=0.0, y=0.0).to_unit_vec()
    Vec2D(x=0.0, y=0.0)
    """
    x: float
    y: float

    def as_point(self) -> Point2D:
        """Consider this vector as a point relative to (0,0)."""
        return Point2D(x=self.x, y=self.y)

    def as_tuple(self) -> tuple[float, float]:
        """Return vector as tuple (x, y)."""
        return (self.x, self.y)

    @property
    def mag(self) -> float:
        """Return the magnitude of the vector."""
        return math.hypot(self.x, self.y)

    @property
    def mag_never_zero(self) -> float:
        """Return the magnitude of the vector. If 0, return smallest float."""
        return max(self.mag, sys.float_info.min)

    @property
    def angle(self) -> float:
        """Direction of the vector in radians, measured from +x."""
        return math.atan2(self.y, self.x)

    def to_unit_vec(self) -> Vec2D:
        """Return the unit vector."""
        return Vec2D(
                x=self.x/self.mag_never_zero,
                y=self.y/self.mag_never_zero)

    def scaled(self, k: float) -> Vec2D:
        """Return the vector scaled by k."""
        return Vec2D(x=self.x*k, y=self.y*k)

    def rotated(self, angle: float) -> Vec2D:
        """Return the vector rotated counter-clockwise by 'angle' radians."""
        c, s = math.cos(angle), math.sin(angle)
        return Vec2D(x=c*self.x - s*self.y, y=s*self.x + c*self.y)

    def dot(self, other: Vec2D) -> float:
        """Dot product."""
        return self.x*other.x + self.y*other.y

    def cross(self, other: Vec2D) -> float:
        """z-component of the cross product (signed area)."""
        return self.x*other.y - self.y*other.x

    def __add__(self, other: Vec2D) -> Vec2D:
        return Vec2D(x=self.x + other.x, y=self.y + other.y)

    def __sub__(self, other: Vec2D) -> Vec2D:
        return Vec2D(x=self.x - other.x, y=self.y - other.y)

    def __str__(self) -> str:
        """Vector as string with three decimal places (default: FLOAT_PRINT_PRECISION)."""
        return self.fmt(FLOAT_PRINT_PRECISION)

    def fmt(self, precision: float) -> str:
        """Vector as a string with the desired precision."""
        return f"({self.x:{precision}f}, {self.y:{precision}f})"

    @classmethod
    def from_points(cls, start: Point2D, end: Point2D) -> Vec2D:
        """Create a vector from two points: vector = end - start."""
        return cls(x=end.x-start.x,
                   y=end.y-start.y)

    @classmethod
    def from_angle(cls, angle: float, length: float = 1.0) -> Vec2D:
        """Create a vector of 'length' pointing along 'angle'."""
        return cls(x=length*math.cos(angle), y=length*math.sin(angle))


@dataclass(frozen=True)
class Pose4:
    """End-effector or object pose: position in meters plus yaw about +z in radians.

    Roll and pitch are not modelled. Yaw is normalized to (-pi, pi] on construction and every
    component must be finite.

    >>> pose = Pose4(x=0.1, y=0.2, z=0.0, yaw=2*math.pi + 0.25)
    >>> round(pose.yaw, 12)
    0.25
    >>> print(pose)
    (0.100, 0.200, 0.000, yaw=0.250)
    >>> pose.planar
    Point2D(x=0.1, y=0.2)
    >>> Pose4(x=float("nan"), y=0, z=0, yaw=0)
    Traceback (most recent call last):
    ...
    ValueError: Pose4 components must be finite: (nan, 0, 0, 0)
    """
    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.z, self.yaw)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Pose4 components must be finite: {values}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def planar(self) -> Point2D:
        """The (x, y) part of the pose."""
        return Point2D(x=self.x, y=self.y)

    def as_tuple(self) -> tuple[float, float, float, float]:
        """Return pose as (x, y, z, yaw)."""
        return (self.x, self.y, self.z, self.yaw)

    def distance_to(self, other: Pose4) -> float:
        """Euclidean distance between the positions of two poses (yaw ignored)."""
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))

    def __str__(self) -> str:
        p = FLOAT_PRINT_PRECISION
        return f"({self.x:{p}f}, {self.y:{p}f}, {self.z:{p}f}, yaw={self.yaw:{p}f})"

    @classmethod
    def from_tuple(cls, values: tuple[float, ...] | list[float]) -> Pose4:
        """Create a pose from (x, y, z, yaw)."""
        if len(values) != 4:
            raise ValueError(f"Pose4 needs 4 values (x, y, z, yaw), got {len(values)}")
        return cls(x=float(values[0]), y=float(values[1]), z=float(values[2]),
                   yaw=float(values[3]))
