"""Geometry operations expressed as matrices.

The simulator needs two things from this module:
    - Matrix2D.rotation(yaw): carry object-frame offsets (footprint corners, the tool tip in the
      object frame) into the tote frame and back.
    - Matrix2DH: rigid planar motions. A push is "rotate about the contact point, then translate
      the contact point onto the tip": see Matrix2DH.rotation_about() and Matrix2DH.then().
"""
from __future__ import annotations
from dataclasses import dataclass
import math
from .geometry_types import Point2D, Vec2D

FLOAT_ROUND_NDIGITS = 14
FLOAT_PRINT_WIDTH = FLOAT_ROUND_NDIGITS + 3  # Account for "0." and one space


@dataclass(frozen=True)
class Matrix2D:
    """2x2 matrix in column-vector convention.

    >>> m = Matrix2D(
    ... m11=2, m12=1,
    ... m21=-4, m22=3)
    >>> print(m)
    |                2                 1|
    |               -4                 3|
    >>> m.det
    10

    A rotation is orthonormal, so its transpose is its inverse:
    >>> r = Matrix2D.rotation(math.pi/2)
    >>> print(r)
    |              0.0              -1.0|
    |              1.0               0.0|
    >>> print(r.multiply_vec(Vec2D(x=1, y=0)))
    (0.000, 1.000)
    >>> print(r.transpose.multiply_vec(Vec2D(x=0, y=1)))
    (1.000, 0.000)
    """
    m11: float
    m12: float
    m21: float
    m22: float

    def __str__(self) -> str:
        w = FLOAT_PRINT_WIDTH  # Right-align each entry to be this wide
        m11 = round(self.m11, FLOAT_ROUND_NDIGITS)
        m12 = round(self.m12, FLOAT_ROUND_NDIGITS)
        m21 = round(self.m21, FLOAT_ROUND_NDIGITS)
        m22 = round(self.m22, FLOAT_ROUND_NDIGITS)
        return (f"|{m11:>{w}} {m12:>{w}}|\n"
                f"|{m21:>{w}} {m22:>{w}}|")

    @classmethod
    def rotation(cls, angle: float) -> Matrix2D:
        """Counter-clockwise rotation by 'angle' radians."""
        c, s = math.cos(angle), math.sin(angle)
        return cls(m11=c, m12=-s,
                   m21=s, m22=c)

    @property
    def det(self) -> float:
        """Determinant: the signed area of the parallelogram spanned by the columns."""
        return self.m11*self.m22 - self.m21*self.m12

    @property
    def transpose(self) -> Matrix2D:
        """Swap rows and columns."""
        return Matrix2D(m11=self.m11, m12=self.m21,
                        m21=self.m12, m22=self.m22)

    def multiply_vec(self, v: Vec2D) -> Vec2D:
        """M*v"""
        return Vec2D(x=self.m11*v.x + self.m12*v.y,
                     y=self.m21*v.x + self.m22*v.y)


@dataclass(frozen=True)
class Matrix2DH:
    """Rigid planar motion: a rotation augmented with homogeneous coordinates for translation.

        |a   c  Tx|
        |b   d  Ty|
        |0   0   1|

    Only points are moved with it: they are rotated, then translated.

    >>> m = Matrix2DH.translation_by(Vec2D(x=0.5, y=0.0))
    >>> print(m)
    |              1.0               0.0                0.5|
    |              0.0               1.0                0.0|
    |                0                 0                  1|
    >>> print(m.multiply_point(Point2D(x=0.1, y=0.2)))
    (0.600, 0.200)

    Rotate a quarter turn about (1, 0): the origin swings to (1, -1).
    >>> r = Matrix2DH.rotation_about(Point2D(x=1, y=0), math.pi/2)
    >>> print(r.multiply_point(Point2D(x=0, y=0)))
    (1.000, -1.000)

    The center of rotation is a fixed point:
    >>> print(r.multiply_point(Point2D(x=1, y=0)))
    (1.000, 0.000)

    Compose: first r, then m.
    >>> print(r.then(m).multiply_point(Point2D(x=0, y=0)))
    (1.500, -1.000)

    Undo a motion:
    >>> back = r.then(m).inv.multiply_point(Point2D(x=1.5, y=-1.0))
    >>> abs(back.x) < 1e-12 and abs(back.y) < 1e-12
    True
    """
    rotation: Matrix2D
    translation: Vec2D
    m31: float = 0
    m32: float = 0
    m33: float = 1

    @property
    def m13(self) -> float:
        """x translation"""
        return self.translation.x

    @property
    def m23(self) -> float:
        """y translation"""
        return self.translation.y

    def __str__(self) -> str:
        w = FLOAT_PRINT_WIDTH  # Right-align each entry to be this wide
        r = self.rotation
        m11 = round(r.m11, FLOAT_ROUND_NDIGITS)
        m12 = round(r.m12, FLOAT_ROUND_NDIGITS)
        m13 = round(self.m13, FLOAT_ROUND_NDIGITS)
        m21 = round(r.m21, FLOAT_ROUND_NDIGITS)
        m22 = round(r.m22, FLOAT_ROUND_NDIGITS)
        m23 = round(self.m23, FLOAT_ROUND_NDIGITS)
        return (f"|{m11:>{w}} {m12:>{w}}  {m13:>{w}}|\n"
                f"|{m21:>{w}} {m22:>{w}}  {m23:>{w}}|\n"
                f"|{self.m31:>{w}} {self.m32:>{w}}  {self.m33:>{w}}|")

    @classmethod
    def translation_by(cls, vec: Vec2D) -> Matrix2DH:
        """Pure translation."""
        return cls(rotation=Matrix2D(m11=1.0, m12=0.0, m21=0.0, m22=1.0), translation=vec)

    @classmethod
    def rotation_about(cls, center: Point2D, angle: float) -> Matrix2DH:
        """Rotate by 'angle' about 'center': T(center) * R(angle) * T(-center)."""
        rot = Matrix2D.rotation(angle)
        c = center.as_vec()
        return cls(rotation=rot, translation=c - rot.multiply_vec(c))

    @property
    def angle(self) -> float:
        """Rotation angle of the motion in radians."""
        return math.atan2(self.rotation.m21, self.rotation.m11)

    def multiply_point(self, p: Point2D) -> Point2D:
        """Move a point: the matrix times (x, y, 1).

            |a   c  Tx|   |x|   |a*x + c*y + Tx|
            |b   d  Ty| * |y| = |b*x + d*y + Ty|
            |0   0   1|   |1|   |             1|

        >>> half = Matrix2DH.rotation_about(Point2D(x=1, y=0), math.pi)
        >>> print(half.multiply_point(Point2D(x=0, y=0.5)))
        (2.000, -0.500)
        """
        rotated = self.rotation.multiply_vec(p.as_vec())
        return Point2D(x=rotated.x + self.m13, y=rotated.y + self.m23)

    def then(self, other: Matrix2DH) -> Matrix2DH:
        """Compose motions: apply self first, then 'other' (matrix product other*self)."""
        r1, r2 = self.rotation, other.rotation
        rot = Matrix2D(m11=r2.m11*r1.m11 + r2.m12*r1.m21, m12=r2.m11*r1.m12 + r2.m12*r1.m22,
                       m21=r2.m21*r1.m11 + r2.m22*r1.m21, m22=r2.m21*r1.m12 + r2.m22*r1.m22)
        return Matrix2DH(rotation=rot,
                         translation=r2.multiply_vec(self.translation) + other.translation)

    @property
    def inv(self) -> Matrix2DH:
        """Inverse of a rigid motion: R^T and -R^T*T.

        Only valid for rotations (det == 1), which is all this class builds.
        """
        assert abs(self.rotation.det - 1.0) < 1e-9
        rot_t = self.rotation.transpose
        return Matrix2DH(rotation=rot_t,
                         translation=rot_t.multiply_vec(self.translation).scaled(-1))
