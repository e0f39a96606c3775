"""Progress-guided skill selection.

A progress vector rho holds one value in [0, 1] per skill. Given a skill ordering, the selector
walks the ordering and executes the first skill whose progress is below its termination threshold
theta. Inside a skill with several segments it picks the first segment j with
rho < min(theta, b_j), where b_j is the segment's upper progress bound.

With several demonstrated orderings, every ordering becomes a polyline in progress space (the
sequence library). The selector follows the ordering whose polyline passes closest to rho.

>>> select_single([1.0, 0.2, 0.0, 1.0], [0, 1, 2, 3], [0.9]*4, [(1.0,)]*4)
Execute(skill_id=1, segment=0)
>>> select_single([0.95, 0.9, 1.0, 0.99], [0, 1, 2, 3], [0.9]*4, [(1.0,)]*4)
Complete()
>>> select_single([0.85], [0], [0.9], [(0.6, 0.8, 1.0)])
Execute(skill_id=0, segment=2)
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Sequence, Union
import logging
import numpy as np
from numpy.typing import ArrayLike, NDArray
from .annotation import AnnotatedDemo, DatasetStats, median_alphas, segment_bounds

log = logging.getLogger(__name__)

Vector = NDArray[np.float64]


class SelectorError(Exception):
    """Base class of the selector errors."""


class DimensionMismatch(SelectorError):
    """Progress vector, thresholds, bounds and library disagree on the number of skills."""


class EmptyOrderings(SelectorError):
    """A sequence library needs at least one ordering."""


@dataclass(frozen=True)
class Execute:
    """Run one segment of one skill."""
    skill_id:   int
    segment:    int

    def __str__(self) -> str:
        return f"execute {self.skill_id}/{self.segment}"


@dataclass(frozen=True)
class Complete:
    """Every skill of the ordering is done."""

    def __str__(self) -> str:
        return "complete"


Decision = Union[Execute, Complete]


def progress_vector(values: ArrayLike, n_skills: int | None = None) -> Vector:
    """Validate a progress vector.

    >>> progress_vector([0.5, 1.0], n_skills=3)
    Traceback (most recent call last):
    ...
    skillkit.selector.DimensionMismatch: Progress vector has 2 component(s), expected 3
    """
    rho = np.asarray(values, dtype=np.float64)
    if rho.ndim != 1:
        raise DimensionMismatch(f"A progress vector is one-dimensional, got shape {rho.shape}")
    if n_skills is not None and rho.size != n_skills:
        raise DimensionMismatch(f"Progress vector has {rho.size} component(s), expected {n_skills}")
    if np.any((rho < 0.0) | (rho > 1.0)):
        raise ValueError(f"Progress values must be in [0, 1]: {rho.tolist()}")
    return rho


def select_single(rho: ArrayLike,
                  ordering: Sequence[int],
                  thresholds: Sequence[float],
                  bounds: Sequence[Sequence[float]]) -> Decision:
    """Decision for one ordering.

    bounds[i] lists the segment upper bounds of skill i (a single (1.0,) for unsegmented skills).

    Redo: a finished skill whose progress drops is selected again ahead of later skills.
    >>> select_single([0.3, 0.95, 0.2, 0.1], [0, 1, 2, 3], [0.9]*4, [(1.0,)]*4)
    Execute(skill_id=0, segment=0)

    Skip: a first skill already at 1 hands the decision to the next one.
    >>> select_single([1.0, 0.1, 0.2, 0.1], [0, 1, 2, 3], [0.9]*4, [(1.0,)]*4)
    Execute(skill_id=1, segment=0)

    >>> select_single([0.1, 0.2], [0, 1], [0.9]*3, [(1.0,)]*2)
    Traceback (most recent call last):
    ...
    skillkit.selector.DimensionMismatch: rho has 2 component(s), thresholds 3, bounds 2
    """
    rho = progress_vector(rho)
    if not len(thresholds) == len(bounds) == rho.size:
        raise DimensionMismatch(f"rho has {rho.size} component(s), thresholds {len(thresholds)}, "
                                f"bounds {len(bounds)}")
    if not ordering:
        raise ValueError("The ordering is empty")
    for skill in ordering:
        if not 0 <= skill < rho.size:
            raise DimensionMismatch(f"Skill {skill} is outside 0..{rho.size - 1}")
        theta = thresholds[skill]
        if rho[skill] < theta:
            for segment, bound in enumerate(bounds[skill]):
                if rho[skill] < min(theta, bound):
                    return Execute(skill_id=skill, segment=segment)
            return Execute(skill_id=skill, segment=len(bounds[skill]) - 1)
    return Complete()


@dataclass(frozen=True, eq=False)
class ProgressTrajectory:
    """One ordering as a polyline in progress space, one row per vertex."""
    ordering:   tuple[int, ...]
    vertices:   Vector

    @property
    def n_skills(self) -> int:
        """N"""
        return int(self.vertices.shape[1])

    @property
    def start(self) -> Vector:
        """First vertex: alpha for the ordering's skills, 1 for the rest."""
        return self.vertices[0]


@dataclass(frozen=True, eq=False)
class SequenceLibrary:
    """Canonical trajectories of every demonstrated ordering.

    alphas are the per-skill canonical alphas and bounds the per-skill segment bounds the
    trajectories were built from.
    """
    trajectories:   tuple[ProgressTrajectory, ...]
    alphas:         tuple[float, ...]
    bounds:         tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not self.trajectories:
            raise EmptyOrderings("A sequence library needs at least one trajectory")
        if any(t.n_skills != len(self.alphas) for t in self.trajectories):
            raise DimensionMismatch("Every trajectory must have one component per skill")

    @property
    def n_skills(self) -> int:
        """N"""
        return len(self.alphas)

    @property
    def orderings(self) -> tuple[tuple[int, ...], ...]:
        """The ordering of every trajectory, in insertion order."""
        return tuple(t.ordering for t in self.trajectories)


def canonical_bounds(alphas: Sequence[float],
                     segment_durations: Sequence[Sequence[int]]) -> tuple[tuple[float, ...], ...]:
    """Segment bounds of every skill from its canonical alpha and mean segment durations.

    A skill with alpha 1 (never executed) keeps all of its bounds at 1.

    >>> canonical_bounds([0.4, 1.0], [[30, 30, 30], [5, 5]])
    ((0.6, 0.8, 1.0), (1.0, 1.0))
    """
    result = []
    for alpha, durations in zip(alphas, segment_durations):
        if alpha >= 1.0:
            result.append(tuple(1.0 for _ in durations))
            continue
        result.append(tuple(round(b, 12) for b in segment_bounds(alpha, durations)))
    return tuple(result)


def build_trajectory_map(orderings: Sequence[Sequence[int]],
                         alphas: Sequence[float],
                         bounds: Sequence[Sequence[float]],
                         start_alphas: Sequence[Sequence[float]] | None = None
                         ) -> SequenceLibrary:
    """One canonical polyline per distinct ordering, in first-appearance order.

    The polyline starts at alpha for the ordering's skills and 1 for the others, then raises
    each skill in turn through its interior segment bounds to 1. start_alphas, if given, holds
    one alpha vector per entry of orderings and replaces alphas at the start of that ordering's
    polyline. A repeated ordering keeps the vector of its first appearance.

    >>> lib = build_trajectory_map([[0, 1]], [0.5, 0.5], [(1.0,), (1.0,)])
    >>> lib.trajectories[0].vertices.tolist()
    [[0.5, 0.5], [1.0, 0.5], [1.0, 1.0]]
    >>> lib = build_trajectory_map([[0, 1], [1, 0], [0, 1]], [0.5, 0.5, 0.3], [(1.0,)]*3)
    >>> lib.orderings
    ((0, 1), (1, 0))
    >>> all(v[2] == 1.0 for t in lib.trajectories for v in t.vertices)
    True
    >>> solo = build_trajectory_map([[0], [1, 0]], [0.2, 0.4], [(0.6, 1.0), (1.0,)])
    >>> solo.trajectories[0].vertices
    array([[0.2, 1. ],
           [0.6, 1. ],
           [1. , 1. ]])
    >>> split = build_trajectory_map([[0, 1], [1, 0]], [0.5, 0.5], [(1.0,)]*2,
    ...                              start_alphas=[[0.4, 0.5], [0.5, 0.6]])
    >>> [t.start.tolist() for t in split.trajectories], split.alphas
    ([[0.4, 0.5], [0.5, 0.6]], (0.5, 0.5))
    >>> build_trajectory_map([[0, 1]], [0.5, 0.5], [(1.0,)]*2, start_alphas=[[0.4]])
    Traceback (most recent call last):
    ...
    skillkit.selector.DimensionMismatch: Start alphas of (0, 1) have 1 component(s), expected 2
    >>> build_trajectory_map([], [0.5], [(1.0,)])
    Traceback (most recent call last):
    ...
    skillkit.selector.EmptyOrderings: No orderings to build a library from
    """
    if not orderings:
        raise EmptyOrderings("No orderings to build a library from")
    n_skills = len(alphas)
    if len(bounds) != n_skills:
        raise DimensionMismatch(f"{n_skills} alphas but {len(bounds)} bound lists")
    starts = [alphas]*len(orderings) if start_alphas is None else start_alphas
    if len(starts) != len(orderings):
        raise DimensionMismatch(f"{len(orderings)} ordering(s) but {len(starts)} start vector(s)")
    distinct: dict[tuple[int, ...], Sequence[float]] = {}
    for ordering, start in zip(map(tuple, orderings), starts):
        if not ordering or len(set(ordering)) != len(ordering):
            raise ValueError(f"An ordering lists distinct skills: {ordering}")
        if not all(0 <= s < n_skills for s in ordering):
            raise DimensionMismatch(f"Ordering {ordering} names a skill outside 0..{n_skills - 1}")
        if len(start) != n_skills:
            raise DimensionMismatch(f"Start alphas of {ordering} have {len(start)} "
                                    f"component(s), expected {n_skills}")
        distinct.setdefault(ordering, start)
    trajectories = []
    for ordering, start in distinct.items():
        vertex = np.ones(n_skills)
        for skill in ordering:
            vertex[skill] = start[skill]
        vertices = [vertex.copy()]
        for skill in ordering:
            for level in (*bounds[skill][:-1], 1.0):
                if level > vertex[skill]:
                    vertex[skill] = level
                    vertices.append(vertex.copy())
        trajectories.append(ProgressTrajectory(ordering=ordering, vertices=np.array(vertices)))
    return SequenceLibrary(trajectories=tuple(trajectories),
                           alphas=tuple(float(a) for a in alphas),
                           bounds=tuple(tuple(float(b) for b in bs) for bs in bounds))


def point_to_polyline_distance(rho: ArrayLike, trajectory: ProgressTrajectory
                               ) -> tuple[float, Vector, int]:
    """(distance, nearest point, edge index) from rho to the polyline. Ties go to the lower edge.

    >>> lib = build_trajectory_map([[0, 1]], [0.5, 0.5], [(1.0,), (1.0,)])
    >>> line = lib.trajectories[0]
    >>> d, p, edge = point_to_polyline_distance([0.75, 0.5], line)
    >>> (d, p.tolist(), edge)
    (0.0, [0.75, 0.5], 0)
    >>> d, p, edge = point_to_polyline_distance([0.5, 1.0], line)
    >>> (d, p.tolist(), edge)
    (0.5, [0.5, 0.5], 0)

    Agrees with dense sampling of the polyline:
    >>> rng = np.random.default_rng(3)
    >>> s = np.linspace(0, 1, 5001)[:, None]
    >>> dense = np.vstack([line.vertices[0] + s*(line.vertices[1] - line.vertices[0]),
    ...                    line.vertices[1] + s*(line.vertices[2] - line.vertices[1])])
    >>> checks = []
    >>> for _ in range(300):
    ...     q = rng.uniform(0, 1, size=2)
    ...     brute = float(np.min(np.linalg.norm(dense - q, axis=1)))
    ...     checks.append(-1e-12 <= brute - point_to_polyline_distance(q, line)[0] <= 1e-4)
    >>> all(checks)
    True
    """
    point = np.asarray(rho, dtype=np.float64)
    vertices = trajectory.vertices
    if point.shape != (vertices.shape[1],):
        raise DimensionMismatch(f"rho has shape {point.shape}, the trajectory has "
                                f"{vertices.shape[1]} component(s)")
    if len(vertices) == 1:
        return float(np.linalg.norm(point - vertices[0])), vertices[0].copy(), 0
    starts = vertices[:-1]
    diffs = vertices[1:] - starts
    lengths = np.sum(diffs*diffs, axis=1)
    dots = np.sum((point - starts)*diffs, axis=1)
    t = np.clip(np.divide(dots, lengths, out=np.zeros_like(dots), where=lengths > 0), 0.0, 1.0)
    projections = starts + t[:, None]*diffs
    dists = np.linalg.norm(point - projections, axis=1)
    edge = int(np.argmin(dists))
    return float(dists[edge]), projections[edge], edge


def nearest_index(rho: ArrayLike, library: SequenceLibrary) -> tuple[int, float]:
    """(index, distance) of the nearest trajectory. Ties go to the first inserted."""
    best_index, best = 0, np.inf
    for index, trajectory in enumerate(library.trajectories):
        dist = point_to_polyline_distance(rho, trajectory)[0]
        if dist < best - 1e-12:
            best_index, best = index, dist
    return best_index, float(best)


def nearest_sequence(rho: ArrayLike, library: SequenceLibrary) -> ProgressTrajectory:
    """The trajectory passing closest to rho.

    >>> lib = build_trajectory_map([[0, 1], [1, 0]], [0.5, 0.5], [(1.0,), (1.0,)])
    >>> nearest_sequence([0.5, 0.8], lib).ordering
    (1, 0)
    >>> nearest_sequence([0.5, 0.5], lib).ordering
    (0, 1)
    """
    return library.trajectories[nearest_index(rho, library)[0]]


def select_multi(rho: ArrayLike,
                 library: SequenceLibrary,
                 thresholds: Sequence[float],
                 bounds: Sequence[Sequence[float]] | None = None) -> Decision:
    """Decision along the nearest demonstrated ordering.

    Edge spawn: the flip-first trajectory starts where nothing is done yet.
    >>> lib = build_trajectory_map([[0, 1, 2], [1, 2, 0]], [0.4, 0.3, 0.2], [(1.0,)]*3)
    >>> select_multi(lib.trajectories[0].vertices[0], lib, [0.9]*3)
    Execute(skill_id=0, segment=0)

    With a single ordering it is select_single:
    >>> one = build_trajectory_map([[2, 0, 1]], [0.4, 0.3, 0.2], [(1.0,), (0.7, 1.0), (1.0,)])
    >>> rng = np.random.default_rng(5)
    >>> all(select_multi(r, one, [0.9]*3) == select_single(r, (2, 0, 1), [0.9]*3, one.bounds)
    ...     for r in rng.uniform(0, 1, size=(1000, 3)))
    True
    >>> select_multi([0.95, 0.91, 1.0], lib, [0.9]*3)
    Complete()
    """
    bounds = library.bounds if bounds is None else bounds
    return select_single(rho, nearest_sequence(rho, library).ordering, thresholds, bounds)


def keeps_order(executed: Sequence[int], ordering: Sequence[int]) -> bool:
    """Does 'executed' list its skills in the order 'ordering' has them?

    >>> keeps_order((1, 2, 3), (0, 1, 2, 3)), keeps_order((1, 2, 0), (0, 1, 2))
    (True, False)
    """
    remaining = iter(ordering)
    return all(skill in remaining for skill in executed)


def ordering_alphas(annotated: Sequence[AnnotatedDemo],
                    ordering: Sequence[int],
                    fallback: Sequence[float]) -> tuple[float, ...]:
    """Median alphas over the demos that executed their skills in the order of 'ordering'.
    Skills none of them executed take the fallback."""
    matching = [a for a in annotated if keeps_order(a.demo.ordering, ordering)]
    alphas = []
    for skill, default in enumerate(fallback):
        values = [a.alpha[skill] for a in matching if skill in a.alpha]
        alphas.append(float(np.median(values)) if values else float(default))
    return tuple(alphas)


def library_from_annotated(annotated: Sequence[AnnotatedDemo],
                           stats: DatasetStats,
                           orderings: Sequence[Sequence[int]] | None = None) -> SequenceLibrary:
    """The library of a labeled dataset: median alphas, mean segment durations and either the
    given orderings or every ordering the demos executed.

    Each trajectory starts from the median alphas of the demos that followed its ordering, so
    orderings whose skills run longer or shorter from the same spawn region start apart:
    >>> from engine.scenario import ScenarioConfig, SpawnRegion, preset
    >>> from skillkit.annotation import annotate, dataset_stats
    >>> from skillkit.skills import default_bank, generate_demos
    >>> bank = default_bank()
    >>> ms, _ = generate_demos(bank, preset("ms-central"), [4, 5])
    >>> ms_stats = dataset_stats(ms, [1, 1, 1, 2])
    >>> ms_lib = library_from_annotated([annotate(d, ms_stats) for d in ms], ms_stats)
    >>> ms_lib.orderings
    ((0, 1, 2), (1, 2, 0))
    >>> first, second = ms_lib.trajectories
    >>> bool(np.any(first.start != second.start))
    True
    >>> [nearest_sequence(t.start, ms_lib).ordering for t in ms_lib.trajectories]
    [(0, 1, 2), (1, 2, 0)]

    >>> from skillkit.skills import generate_demo
    >>> demos = [generate_demo(bank, [0, 1, 2, 3], ScenarioConfig(spawn=SpawnRegion.edge()), 2),
    ...          generate_demo(bank, [0, 1, 2, 3], ScenarioConfig(), 1)]
    >>> stats = dataset_stats(demos, [1, 1, 1, 2])
    >>> lib = library_from_annotated([annotate(d, stats) for d in demos], stats)
    >>> lib.orderings
    ((0, 1, 2, 3), (1, 2, 3))
    >>> all(0 <= a < 1 for a in lib.alphas), [len(b) for b in lib.bounds]
    (True, [1, 1, 1, 2])
    """
    n_skills = stats.n_skills
    alphas = median_alphas(annotated, n_skills)
    durations = [stats.segment_durations.get(skill, (1,)) for skill in range(n_skills)]
    bounds = canonical_bounds(alphas, durations)
    if orderings is None:
        orderings = [a.demo.ordering for a in annotated]
    starts = [ordering_alphas(annotated, ordering, alphas) for ordering in orderings]
    log.debug("Library over %d skill(s): alphas %s", n_skills, [round(a, 3) for a in alphas])
    return build_trajectory_map(orderings, alphas, bounds, start_alphas=starts)
