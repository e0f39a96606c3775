"""Progress estimators.

Two estimators share one interface, progress(world) -> rho:

    OracleEstimator: reads the progress off the true world state (postconditions plus a
                     geometric completion fraction per skill)
    KnnEstimator:    k-nearest-neighbour regression over the featurized steps of annotated
                     demonstrations

Both are stateless: the estimate depends on the current state only. That is what lets a
disturbance undo a finished skill (redo) and lets a skill that is done from the start be
skipped.

Features
--------
    0  object x              workspace-normalized
    1  object y              workspace-normalized
    2  object yaw             (yaw + pi) / 2pi
    3  object z / lift height
    4  upright flag
    5  attached flag
    6  suction on
    7  in picking tote
    8  in packing tote
    9  in neither tote
    10 object to goal, planar distance / workspace diagonal
    11 |yaw error| / pi
    12 tip to object distance / workspace diagonal
    13-16 goal corner one-hot (tl, tr, bl, br)
"""
from __future__ import annotations
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence
import logging
import math
import numpy as np
from numpy.typing import NDArray
from engine.geometry_types import Point2D
from engine.scenario import DEFAULT_ORDERING
from engine.sim import observe, skill_postconditions, tote_membership
from engine.world import (Corner, GoalSpec, Observation, Postconditions, SimConstants,
                          ToteGeometry, ToteMembership, Workspace, WorldState, yaw_error)
from .annotation import AnnotatedDemo
from .formats import FormatError, SCHEMA_VERSION, atomic_output

log = logging.getLogger(__name__)

N_FEATURES = 17
DEFAULT_K = 5
CEILING_GAP = 0.05      # Position-only push progress stays this far below theta
UNFINISHED_GAP = 1e-3   # An unfinished skill reads at least this far below theta


class EstimatorError(Exception):
    """Base class of the estimator errors."""


class EmptyDataset(EstimatorError):
    """Nothing to fit."""


class InconsistentDimension(EstimatorError):
    """Annotated demos disagree on the number of skills."""


class ProgressEstimator(Protocol):
    """What the runner needs from an estimator."""

    @property
    def n_skills(self) -> int:
        """N"""

    def progress(self, world: WorldState) -> NDArray[np.float64]:
        """rho for this world."""


def featurize(observation: Observation,
              goal: GoalSpec,
              workspace: Workspace,
              constants: SimConstants) -> NDArray[np.float64]:
    """The fixed-order feature vector of one observation, normalized by the workspace and the
    physics constants of the world it was taken in.

    >>> from engine.scenario import ScenarioConfig
    >>> from engine.sim import spawn
    >>> from dataclasses import replace
    >>> world = spawn(ScenarioConfig(), seed=4)
    >>> target = world.goal.target_pose
    >>> at_goal = replace(world, object=world.object.moved_to(target.planar, yaw=target.yaw))
    >>> f = featurize(observe(at_goal), at_goal.goal, at_goal.workspace, at_goal.constants)
    >>> f.shape, float(f[10]), float(f[11])
    ((17,), 0.0, 0.0)
    >>> bool(np.all((f >= 0) & (f <= 1)))
    True
    >>> bool(np.array_equal(f, featurize(observe(at_goal), at_goal.goal, at_goal.workspace,
    ...                                  at_goal.constants)))
    True

    Height is measured against the lift height of the scenario's physics:
    >>> raised = replace(observe(world), object_pose=replace(world.object.pose, z=0.1))
    >>> tall = replace(world.constants, lift_height=0.2)
    >>> [float(featurize(raised, world.goal, world.workspace, c)[3])
    ...  for c in (world.constants, tall)]
    [1.0, 0.5]
    """
    pose = observation.object_pose
    target = goal.target_pose
    diagonal = workspace.diagonal
    features = np.zeros(N_FEATURES)
    features[0] = (pose.x - workspace.x_min)/(workspace.x_max - workspace.x_min)
    features[1] = (pose.y - workspace.y_min)/(workspace.y_max - workspace.y_min)
    features[2] = (pose.yaw + math.pi)/(2*math.pi)
    features[3] = pose.z/constants.lift_height
    features[4] = float(observation.upright)
    features[5] = float(observation.attached)
    features[6] = float(observation.suction_on)
    features[7 + list(ToteMembership).index(observation.tote)] = 1.0
    features[10] = pose.planar.distance_to(target.planar)/diagonal
    features[11] = abs(yaw_error(pose.yaw, target.yaw))/math.pi
    features[12] = observation.as_object.distance_to(observation.robot)/diagonal
    features[13 + list(Corner).index(goal.corner)] = 1.0
    return np.clip(features, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class KnnEstimator:
    """Stored (feature, progress) pairs, the min/max normalization of the features, and the
    physics and workspace the features are measured in.

    TODO: a linear scan is fine up to ~1e5 stored steps; a KD-tree over the normalized
    features drops in behind nearest() if datasets grow past that.
    """
    k:          int
    features:   NDArray[np.float64]     # (P, F) raw features
    labels:     NDArray[np.float64]     # (P, N) progress labels
    lo:         NDArray[np.float64]     # (F,) feature minimum over the dataset
    hi:         NDArray[np.float64]     # (F,) feature maximum over the dataset
    physics:    SimConstants = field(default_factory=SimConstants)
    workspace:  Workspace = field(default_factory=Workspace)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if len(self.features) == 0 or len(self.features) != len(self.labels):
            raise EmptyDataset("A k-NN estimator needs at least one labeled feature vector")

    @property
    def n_skills(self) -> int:
        """N"""
        return int(self.labels.shape[1])

    @cached_property
    def stored(self) -> NDArray[np.float64]:
        """The stored features, normalized."""
        return self.normalize(self.features)

    def normalize(self, features: NDArray[np.float64]) -> NDArray[np.float64]:
        """Scale features by the dataset min/max. Constant features map to 0."""
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (features - self.lo)/span

    def nearest(self, query: NDArray[np.float64]) -> NDArray[np.intp]:
        """Indices of the k stored points closest to a raw feature vector, ties in stored order."""
        dists = np.linalg.norm(self.stored - self.normalize(query), axis=1)
        return np.argsort(dists, kind="stable")[:self.k]

    def predict_features(self, query: NDArray[np.float64]) -> NDArray[np.float64]:
        """Mean label of the k nearest neighbours, clamped to [0, 1]."""
        return np.clip(self.labels[self.nearest(query)].mean(axis=0), 0.0, 1.0)

    def predict(self, observation: Observation, goal: GoalSpec) -> NDArray[np.float64]:
        """rho for one observation."""
        return self.predict_features(featurize(observation, goal, self.workspace, self.physics))

    def progress(self, world: WorldState) -> NDArray[np.float64]:
        """rho for a world state."""
        return self.predict(observe(world), world.goal)


def fit_knn(annotated: Sequence[AnnotatedDemo],
            k: int = DEFAULT_K,
            *,
            physics: SimConstants,
            workspace: Workspace = Workspace()) -> KnnEstimator:
    """Store every step with its label, featurized with the physics the demos were run under.

    >>> fit_knn([], physics=SimConstants())
    Traceback (most recent call last):
    ...
    skillkit.estimator.EmptyDataset: No annotated demos to fit
    """
    if not annotated:
        raise EmptyDataset("No annotated demos to fit")
    dims = {a.n_skills for a in annotated}
    if len(dims) != 1:
        raise InconsistentDimension(f"Annotated demos have different skill counts: {sorted(dims)}")
    features = np.array([featurize(s.observation, a.demo.goal, workspace, physics)
                         for a in annotated for s in a.demo.steps])
    labels = np.vstack([a.progress for a in annotated])
    log.debug("k-NN fit on %d steps of %d demos", len(features), len(annotated))
    return KnnEstimator(k=k, features=features, labels=labels,
                        lo=features.min(axis=0), hi=features.max(axis=0),
                        physics=physics, workspace=workspace)


def predict(estimator: KnnEstimator, observation: Observation, goal: GoalSpec
            ) -> NDArray[np.float64]:
    """Mean progress of the k nearest stored steps.

    >>> est = KnnEstimator(k=2, features=np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]]),
    ...                    labels=np.array([[0.2, 1.0], [0.6, 1.0], [1.0, 1.0]]),
    ...                    lo=np.array([0.0, 0.0]), hi=np.array([5.0, 0.0]))
    >>> est.predict_features(np.array([0.5, 0.0])).round(6).tolist()
    [0.4, 1.0]
    >>> KnnEstimator(1, est.features, est.labels, est.lo, est.hi).predict_features(
    ...     np.array([5.0, 0.0])).tolist()
    [1.0, 1.0]
    """
    return estimator.predict(observation, goal)


def save_knn(estimator: KnnEstimator, path: Path) -> None:
    """Write an .npz snapshot (write-then-rename). Physics and workspace go in field order.

    >>> import tempfile
    >>> tall = SimConstants(lift_height=0.2)
    >>> est = KnnEstimator(k=1, features=np.zeros((1, 2)), labels=np.ones((1, 2)),
    ...                    lo=np.zeros(2), hi=np.ones(2), physics=tall)
    >>> with tempfile.TemporaryDirectory() as tmp:
    ...     path = Path(tmp) / "knn.npz"
    ...     save_knn(est, path)
    ...     back = load_knn(path)
    >>> back.physics == tall, back.workspace == Workspace()
    (True, True)
    """
    physics = [getattr(estimator.physics, f.name) for f in fields(SimConstants)]
    workspace = [getattr(estimator.workspace, f.name) for f in fields(Workspace)]
    with atomic_output(path, binary=True) as stream:
        np.savez(stream, schema_version=np.array(SCHEMA_VERSION), k=np.array(estimator.k),
                 features=estimator.features, labels=estimator.labels,
                 lo=estimator.lo, hi=estimator.hi,
                 physics=np.array(physics), workspace=np.array(workspace))


def load_knn(path: Path) -> KnnEstimator:
    """Read an .npz snapshot written by save_knn."""
    with np.load(path) as data:
        missing = ({"schema_version", "k", "features", "labels", "lo", "hi", "physics", "workspace"}
                   - set(data.files))
        if missing:
            raise FormatError(f"{path}: missing array(s) {', '.join(sorted(missing))}")
        version = int(data["schema_version"])
        if version != SCHEMA_VERSION:
            raise FormatError(f"{path}: schema_version {version}, expected {SCHEMA_VERSION}")
        physics = SimConstants(*(float(v) for v in data["physics"]))
        workspace = Workspace(*(float(v) for v in data["workspace"]))
        return KnnEstimator(k=int(data["k"]), features=data["features"], labels=data["labels"],
                            lo=data["lo"], hi=data["hi"], physics=physics, workspace=workspace)


def _flip_fraction(world: WorldState, _goal: GoalSpec) -> float:
    """How deep the tip presses into an upright object, as a fraction of the flip depth."""
    obj = world.object
    tip = world.robot
    if not obj.footprint_contains(tip.planar):
        return 0.0
    return (obj.top_z - tip.z)/world.constants.flip_depth


def _lift_fraction(world: WorldState, _goal: GoalSpec) -> float:
    obj = world.object
    return obj.pose.z/world.constants.lift_height if obj.attached else 0.0


def _quadrant_distance(point: Point2D, packing: ToteGeometry, corner: Corner) -> float:
    x_lo, x_hi, y_lo, y_hi = packing.quadrant(corner)
    x, y = point.x, point.y
    return math.hypot(max(x_lo - x, 0.0, x - x_hi), max(y_lo - y, 0.0, y - y_hi))


def _carry_fraction(world: WorldState, goal: GoalSpec) -> float:
    """How far the held object has travelled from the picking tote toward the goal quarter."""
    if not world.object.attached:
        return 0.0
    reference = _quadrant_distance(world.picking.center, world.packing, goal.corner)
    gap = _quadrant_distance(world.object.center, world.packing, goal.corner)
    return 1.0 - gap/max(reference, 1e-9)


FRACTIONS: Mapping[str, Callable[[WorldState, GoalSpec], float]] = {
        "flip": _flip_fraction,
        "pick": _lift_fraction,
        "pack": _carry_fraction,
        }

DONE: Mapping[str, Callable[[Postconditions], bool]] = {
        "flip": lambda post: post.flip,
        "pick": lambda post: post.pick,
        "pack": lambda post: post.pack,
        "push": lambda post: post.push,
        }


def _target_distance(world: WorldState, goal: GoalSpec) -> float:
    """Object to goal, normalized by the packing tote diagonal."""
    packing = world.packing
    return (world.object.center.distance_to(goal.target_pose.planar)
            / math.hypot(packing.width, packing.depth))


def _push_progress(world: WorldState, goal: GoalSpec, alpha: float, first_bound: float,
                   theta: float) -> float:
    """Orientation stage below the first bound, position stage between it and theta."""
    obj = world.object
    if obj.attached or tote_membership(world) is not ToteMembership.PACKING:
        return alpha
    yaw_off = abs(yaw_error(obj.pose.yaw, goal.target_pose.yaw))
    near = 1.0 - _target_distance(world, goal)
    top = min(first_bound, theta)
    ceiling = theta - CEILING_GAP
    upper = ceiling if top <= ceiling else top + (theta - top)/2
    if yaw_off > world.constants.yaw_tolerance:
        phi = 0.5*(1.0 - yaw_off/math.pi) + 0.5*near
        return alpha + (top - alpha)*min(max(phi, 0.0), 0.99)
    return top + (upper - top)*min(max(near, 0.0), 1.0)


# pylint: disable=too-many-arguments
def oracle_progress(world: WorldState,
                    goal: GoalSpec,
                    alphas: Sequence[float],
                    names: Sequence[str] = DEFAULT_ORDERING,
                    bounds: Sequence[Sequence[float]] | None = None,
                    thresholds: Sequence[float] | None = None) -> NDArray[np.float64]:
    """Progress read off the true state.

    A skill whose postcondition holds is at 1. Otherwise its progress rises from alpha with a
    completion fraction phi toward a ceiling theta - CEILING_GAP, and never reads closer to
    theta than UNFINISHED_GAP, whatever alpha is. An unfinished skill never reads as done:

        flip:   press depth / flip depth
        pick:   object height / lift height, once attached
        pack:   share of the way from the picking tote to the goal quarter, while attached
        push:   staged over its two segments and only once the object rests in the packing
                tote: below the first segment bound while the yaw is off, then from that
                bound up to the ceiling (or halfway to theta when the bound lies above the
                ceiling) while only the position is off

    Skills with names the oracle does not know report 1.

    >>> from engine.scenario import ScenarioConfig, SpawnRegion
    >>> from engine.sim import apply_disturbance, spawn
    >>> from engine.world import DisturbanceEvent, DisturbanceKind
    >>> alphas = (0.4, 0.3, 0.2, 0.1)
    >>> edge = spawn(ScenarioConfig(spawn=SpawnRegion.edge()), seed=3)
    >>> oracle_progress(edge, edge.goal, alphas).tolist()
    [0.4, 0.3, 0.2, 0.1]
    >>> goal = edge.goal.target_pose
    >>> done = apply_disturbance(edge, DisturbanceEvent(0, DisturbanceKind.TELEPORT_OBJECT, goal))
    >>> oracle_progress(done, done.goal, alphas).tolist()
    [1.0, 1.0, 1.0, 1.0]

    Standing the object back up undoes everything:
    >>> redo = apply_disturbance(done, DisturbanceEvent(0, DisturbanceKind.RESET_OBJECT_TO_WALL))
    >>> oracle_progress(redo, redo.goal, alphas).tolist()
    [0.4, 0.3, 0.2, 0.1]

    Halfway through a flip press:
    >>> from dataclasses import replace
    >>> from engine.geometry_types import Pose4
    >>> obj = edge.object
    >>> pressing = replace(edge, robot=Pose4(x=obj.pose.x, y=obj.pose.y,
    ...                                      z=obj.top_z - edge.constants.flip_depth/2))
    >>> round(float(oracle_progress(pressing, edge.goal, alphas)[0]), 6)
    0.625

    Push reads below its first segment bound while the yaw is off, above it once only the
    position is:
    >>> bounds = ((1.0,), (1.0,), (1.0,), (0.55, 1.0))
    >>> def push_rho(pose):
    ...     event = DisturbanceEvent(0, DisturbanceKind.TELEPORT_OBJECT, pose)
    ...     moved = apply_disturbance(edge, event)
    ...     return float(oracle_progress(moved, moved.goal, alphas, bounds=bounds)[3])
    >>> turned, shifted = replace(goal, yaw=1.0), replace(goal, x=goal.x + 0.05)
    >>> 0.1 < push_rho(turned) < 0.55 <= push_rho(shifted) < 0.9
    True

    A skill whose alpha is above its threshold still reads below it until it is done, and so
    does push when its first segment bound sits at theta:
    >>> high, at_theta = (0.95, 0.3, 0.2, 0.95), ((1.0,), (1.0,), (1.0,), (0.9, 1.0))
    >>> rho = oracle_progress(pressing, edge.goal, high, bounds=at_theta)
    >>> bool(rho[0] < 0.9), round(float(rho[0]), 6)
    (True, 0.899)
    >>> event = DisturbanceEvent(0, DisturbanceKind.TELEPORT_OBJECT, shifted)
    >>> moved = apply_disturbance(edge, event)
    >>> rho = oracle_progress(moved, moved.goal, high, bounds=at_theta)
    >>> bool(rho[3] < 0.9), round(float(rho[3]), 6)
    (True, 0.899)
    """
    post = skill_postconditions(world, goal)
    rho = np.ones(len(alphas))
    for skill, (name, alpha) in enumerate(zip(names, alphas)):
        done = DONE.get(name)
        if done is None or done(post):
            continue
        theta = 0.9 if thresholds is None else thresholds[skill]
        start = min(alpha, theta - UNFINISHED_GAP)
        ceiling = max(theta - CEILING_GAP, start)
        if name == "push":
            first = 1.0 if bounds is None else bounds[skill][0]
            value = _push_progress(world, goal, start, first, theta)
        else:
            phi = min(max(FRACTIONS[name](world, goal), 0.0), 1.0)
            value = start + (ceiling - start)*phi
        rho[skill] = min(value, theta - UNFINISHED_GAP)
    return np.clip(rho, 0.0, 1.0)


@dataclass(frozen=True)
class OracleEstimator:
    """oracle_progress behind the estimator interface.

    >>> from engine.scenario import ScenarioConfig
    >>> from engine.sim import spawn
    >>> oracle = OracleEstimator(names=("flip", "pick"), alphas=(0.4, 0.3))
    >>> oracle.progress(spawn(ScenarioConfig(), seed=1)).tolist()
    [1.0, 0.3]
    """
    names:      tuple[str, ...]
    alphas:     tuple[float, ...]
    bounds:     tuple[tuple[float, ...], ...] | None = None
    thresholds: tuple[float, ...] | None = None

    @property
    def n_skills(self) -> int:
        """N"""
        return len(self.alphas)

    def progress(self, world: WorldState) -> NDArray[np.float64]:
        """rho for a world state."""
        return oracle_progress(world, world.goal, self.alphas, self.names, self.bounds,
                               self.thresholds)
