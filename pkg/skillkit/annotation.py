"""Progress labels for demonstrations.

Every step of a demonstration gets a progress vector, one value per skill:

    before the skill's execution window:   alpha = 1 - t/M
    inside the window:                      linear from alpha to 1
    after the window:                       1
    skill not in the demo's ordering:       1 everywhere

t is the length of this demo's window and M the longest window of that skill over the dataset,
both in ticks (inclusive). A skill with k > 1 segments ramps through its segment upper bounds one
sub-window at a time.

Execution windows
-----------------
The phase of a skill is the steps whose segment marker names it. The window starts at the first
phase step in contact with the object and ends at the last phase step in contact where the object
moved (compared with MOVE_LOOKBACK steps earlier) or the suction was toggled.

>>> compute_alpha(25, 100)
0.75
>>> [round(b, 12) for b in segment_bounds(0.4, [30, 30, 30])]
[0.6, 0.8, 1.0]
>>> dilate_suction([0, 0, 1, 0, 0, 0, -1, 0], k=1)
(0, 1, 1, 1, 0, -1, -1, -1)
"""
from __future__ import annotations
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence
import logging
import numpy as np
from engine.geometry_types import wrap_angle
from engine.world import Action, GoalSpec, Observation

log = logging.getLogger(__name__)

MOVE_LOOKBACK = 5       # Steps between the two poses compared by object_moved
MOVE_DISTANCE = 0.001   # Meters
MOVE_YAW = 0.01         # Radians
DEFAULT_DILATION = 2


class AnnotationError(Exception):
    """Base class of the annotation errors."""


class NoContactFound(AnnotationError):
    """The phase of a skill never touches the object."""


class DurationExceedsMax(AnnotationError):
    """A window is longer than the dataset maximum: the stats are stale."""


class MissingSkillCoverage(AnnotationError):
    """A skill never executes in the dataset, so it has no statistics."""


class SkillNotInOrdering(AnnotationError):
    """The demo did not execute this skill."""


@dataclass(frozen=True)
class SegmentMarker:
    """Which (skill, segment) controller produced a step."""
    skill:      int
    segment:    int


@dataclass(frozen=True)
class Step:
    """The observation before an action, the action, and who issued it (None for transit)."""
    observation:    Observation
    action:         Action
    marker:         SegmentMarker | None = None

    @property
    def tick(self) -> int:
        """Tick of the observation."""
        return self.observation.tick


@dataclass(frozen=True)
class Window:
    """An execution window in ticks, both ends inclusive, with one sub-window per segment.

    A segment that did not run inside the window has None.
    """
    start:      int
    end:        int
    segments:   tuple[tuple[int, int] | None, ...] = ()

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError(f"Window ends before it starts: {self.start}..{self.end}")

    @property
    def length(self) -> int:
        """Duration t in ticks."""
        return self.end - self.start + 1


@dataclass(frozen=True)
class Demonstration:
    """A state-action log of one scripted episode.

    ordering lists the skills that actually executed. truth holds the windows the generator saw
    while producing the log; it is there to check window detection and nothing else.
    """
    steps:      tuple[Step, ...]
    ordering:   tuple[int, ...]
    goal:       GoalSpec
    scenario:   str = ""
    seed:       int = 0
    truth:      Mapping[int, Window] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("A demonstration needs at least one step")
        ticks = np.array([s.tick for s in self.steps])
        if np.any(np.diff(ticks) <= 0):
            raise ValueError("Demonstration ticks must be strictly increasing")

    @property
    def ticks(self) -> np.ndarray:
        """Tick of every step."""
        return np.array([s.tick for s in self.steps])

    def without_truth(self) -> Demonstration:
        """The same demo with the ground-truth windows dropped."""
        return replace(self, truth={})


def object_moved(before: Observation, after: Observation) -> bool:
    """Did the object pose change between two observations?"""
    a, b = before.object_pose, after.object_pose
    return (a.distance_to(b) > MOVE_DISTANCE
            or abs(wrap_angle(b.yaw - a.yaw)) > MOVE_YAW
            or before.posture is not after.posture)


def detect_execution_window(demo: Demonstration, skill_id: int, segments: int = 1) -> Window:
    """Window of one executed skill, found from contact and object motion.

    Generated demos carry the windows the generator tracked while running; detection finds the
    same ones:
    >>> from engine.scenario import ScenarioConfig, SpawnRegion
    >>> from skillkit.skills import default_bank, generate_demo
    >>> bank = default_bank()
    >>> demo = generate_demo(bank, [0, 1, 2, 3], ScenarioConfig(spawn=SpawnRegion.edge()), seed=2)
    >>> demo.ordering
    (0, 1, 2, 3)
    >>> all(detect_execution_window(demo, s, bank.spec(s).k) == demo.truth[s]
    ...     for s in demo.ordering)
    True

    The pick window holds the suction-on tick:
    >>> pick = detect_execution_window(demo, 1)
    >>> on = [s.tick for s in demo.steps if s.action.suction == 1]
    >>> pick.start <= on[0] <= pick.end
    True

    >>> detect_execution_window(generate_demo(bank, [0, 1, 2, 3], ScenarioConfig(), 2), 0)
    Traceback (most recent call last):
    ...
    skillkit.annotation.SkillNotInOrdering: Skill 0 did not execute in demo gc/2
    """
    if skill_id not in demo.ordering:
        raise SkillNotInOrdering(f"Skill {skill_id} did not execute in demo "
                                 f"{demo.scenario}/{demo.seed}")
    steps = demo.steps
    phase = np.array([i for i, s in enumerate(steps)
                      if s.marker is not None and s.marker.skill == skill_id], dtype=int)
    contact = np.array([steps[i].observation.contact for i in phase], dtype=bool)
    if not contact.any():
        raise NoContactFound(f"Skill {skill_id} never touches the object in demo "
                             f"{demo.scenario}/{demo.seed}")
    active = np.array([object_moved(steps[max(i - MOVE_LOOKBACK, 0)].observation,
                                    steps[i].observation)
                       or steps[i].action.suction != 0
                       for i in phase], dtype=bool)
    start_index = phase[np.argmax(contact)]
    qualifying = phase[contact & active]
    end_index = qualifying[-1] if qualifying.size else start_index
    start, end = steps[start_index].tick, steps[end_index].tick
    sub_windows: list[tuple[int, int] | None] = []
    for segment in range(segments):
        ticks = [steps[i].tick for i in phase
                 if steps[i].marker is not None and steps[i].marker.segment == segment
                 and start <= steps[i].tick <= end]
        sub_windows.append((ticks[0], ticks[-1]) if ticks else None)
    return Window(start=start, end=end, segments=tuple(sub_windows))


def compute_alpha(t: int, m: int) -> float:
    """Progress before execution, 1 - t/M.

    >>> compute_alpha(100, 100)
    0.0
    >>> compute_alpha(0, 100)
    Traceback (most recent call last):
    ...
    ValueError: Execution duration must be >= 1 tick, got 0
    >>> compute_alpha(101, 100)
    Traceback (most recent call last):
    ...
    skillkit.annotation.DurationExceedsMax: Duration 101 exceeds the dataset maximum 100
    """
    if t < 1:
        raise ValueError(f"Execution duration must be >= 1 tick, got {t}")
    if t > m:
        raise DurationExceedsMax(f"Duration {t} exceeds the dataset maximum {m}")
    return 1.0 - t/m


def segment_bounds(alpha: float, durations: Sequence[int]) -> tuple[float, ...]:
    """Upper progress bound of every segment. The last bound is exactly 1.

    >>> segment_bounds(0.0, [1, 3])
    (0.25, 1.0)
    >>> segment_bounds(0.3, [17])
    (1.0,)

    Telescoping holds for any input:
    >>> rng = np.random.default_rng(0)
    >>> all(segment_bounds(float(rng.uniform(0, 1)),
    ...                    list(rng.integers(1, 90, size=int(rng.integers(1, 6)))))[-1] == 1.0
    ...     for _ in range(200))
    True
    """
    if not durations or min(durations) < 1:
        raise ValueError(f"Segment durations must be a non-empty list of values >= 1: "
                         f"{list(durations)}")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    fractions = np.cumsum(np.asarray(durations, dtype=float))/float(np.sum(durations))
    bounds = alpha + (1.0 - alpha)*fractions
    bounds[-1] = 1.0
    return tuple(float(b) for b in bounds)


@dataclass(frozen=True)
class DatasetStats:
    """Per-skill statistics of a demonstration dataset.

    max_duration: M_i, the longest window of skill i.
    segment_durations: T_j^i, the rounded mean sub-window length of each segment of skill i.
    """
    n_skills:           int
    max_duration:       Mapping[int, int]
    segment_durations:  Mapping[int, tuple[int, ...]]

    def __post_init__(self) -> None:
        if set(self.max_duration) != set(self.segment_durations):
            raise ValueError("max_duration and segment_durations must cover the same skills")
        for skill, m in self.max_duration.items():
            if not 0 <= skill < self.n_skills:
                raise ValueError(f"Skill {skill} is outside 0..{self.n_skills - 1}")
            if m < 1 or min(self.segment_durations[skill], default=0) < 1:
                raise ValueError(f"Skill {skill}: durations must be >= 1")

    def covers(self, skill_id: int) -> bool:
        """True if the dataset executed this skill."""
        return skill_id in self.max_duration

    def segments(self, skill_id: int) -> int:
        """k of a covered skill."""
        return len(self.segment_durations[skill_id])


def dataset_stats(demos: Sequence[Demonstration],
                  segments: Sequence[int],
                  required: Sequence[int] | None = None) -> DatasetStats:
    """M_i and T_j^i over a dataset.

    segments[i] is the number of segments of skill i (so len(segments) is N). Every skill in
    'required' (default: all of them) must execute in at least one demo.

    >>> from engine.scenario import ScenarioConfig
    >>> from skillkit.skills import default_bank, generate_demo
    >>> bank = default_bank()
    >>> demos = [generate_demo(bank, [0, 1, 2, 3], ScenarioConfig(), seed) for seed in (1, 2)]
    >>> dataset_stats(demos, [1, 1, 1, 2])
    Traceback (most recent call last):
    ...
    skillkit.annotation.MissingSkillCoverage: No demo executes skill(s) 0
    >>> stats = dataset_stats(demos, [1, 1, 1, 2], required=[1, 2, 3])
    >>> sorted(stats.max_duration), stats.segments(3)
    ([1, 2, 3], 2)
    """
    n_skills = len(segments)
    required = range(n_skills) if required is None else required
    lengths: dict[int, list[int]] = {}
    sub_lengths: dict[int, list[list[int]]] = {}
    for demo in demos:
        for skill in demo.ordering:
            window = detect_execution_window(demo, skill, segments[skill])
            lengths.setdefault(skill, []).append(window.length)
            per_segment = sub_lengths.setdefault(skill, [[] for _ in range(segments[skill])])
            for j, sub in enumerate(window.segments):
                if sub is not None:
                    per_segment[j].append(sub[1] - sub[0] + 1)
    missing = sorted(set(required) - set(lengths))
    if missing:
        raise MissingSkillCoverage(f"No demo executes skill(s) "
                                   f"{', '.join(str(s) for s in missing)}")
    max_duration = {s: max(values) for s, values in sorted(lengths.items())}
    segment_durations = {s: tuple(max(1, int(round(float(np.mean(v))))) if v else 1
                                  for v in sub_lengths[s])
                         for s in max_duration}
    return DatasetStats(n_skills=n_skills, max_duration=max_duration,
                        segment_durations=segment_durations)


def dilate_suction(signal: Sequence[int], k: int) -> tuple[int, ...]:
    """Widen every suction event to its k-neighborhood.

    Positions within k of two events take the nearer one, the earlier one on a tie. Events are
    never overwritten.

    >>> dilate_suction([1, 0, -1], k=1)
    (1, 1, -1)
    >>> dilate_suction([0, 0, 0], k=3)
    (0, 0, 0)
    >>> dilate_suction([0, 0, 0, 0, 1, 0, 0, 0, 0], k=2).count(1)
    5
    """
    if k < 0:
        raise ValueError(f"Dilation k must be >= 0, got {k}")
    values = np.asarray(signal, dtype=int)
    events = np.flatnonzero(values)
    if events.size == 0 or k == 0:
        return tuple(int(v) for v in values)
    positions = np.arange(values.size)
    after = np.searchsorted(events, positions, side="left")
    before = after - 1
    far = values.size + k + 1
    dist_after = np.where(after < events.size,
                          events[np.minimum(after, events.size - 1)] - positions, far)
    dist_before = np.where(before >= 0, positions - events[np.maximum(before, 0)], far)
    use_before = dist_before <= dist_after
    nearest = np.where(use_before, events[np.maximum(before, 0)],
                       events[np.minimum(after, events.size - 1)])
    dist = np.minimum(dist_before, dist_after)
    dilated = np.where(dist <= k, values[nearest], 0)
    return tuple(int(v) for v in dilated)


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True, eq=False)
class AnnotatedDemo:
    """A demonstration with per-step progress labels.

    progress has one row per step and one column per skill.
    """
    demo:               Demonstration
    windows:            Mapping[int, Window]
    alpha:              Mapping[int, float]
    progress:           np.ndarray
    suction_dilated:    tuple[int, ...]

    @property
    def n_skills(self) -> int:
        """N"""
        return int(self.progress.shape[1])

    def index_of(self, tick: int) -> int:
        """Row of the step at 'tick'."""
        return int(np.searchsorted(self.demo.ticks, tick))

    def same_labels(self, other: AnnotatedDemo) -> bool:
        """True if both carry the same windows, alphas and labels."""
        return (dict(self.windows) == dict(other.windows)
                and dict(self.alpha) == dict(other.alpha)
                and np.array_equal(self.progress, other.progress)
                and self.suction_dilated == other.suction_dilated)


def _ramp(ticks: np.ndarray, start: int, end: int, low: float, high: float) -> np.ndarray:
    if end == start:
        return np.full(ticks.shape, high)
    return low + (high - low)*(ticks - start)/(end - start)


def skill_progress(ticks: np.ndarray, window: Window, alpha: float,
                   durations: Sequence[int]) -> np.ndarray:
    """Label column of one executed skill.

    >>> ticks = np.arange(10)
    >>> skill_progress(ticks, Window(2, 6, ((2, 6),)), 0.5, [5]).round(3).tolist()
    [0.5, 0.5, 0.5, 0.625, 0.75, 0.875, 1.0, 1.0, 1.0, 1.0]
    >>> w = Window(1, 8, ((1, 4), (6, 8)))
    >>> skill_progress(ticks, w, 0.2, [4, 4]).round(3).tolist()
    [0.2, 0.2, 0.333, 0.467, 0.6, 0.6, 0.6, 0.8, 1.0, 1.0]
    """
    column = np.full(ticks.shape, alpha, dtype=np.float64)
    inside = (ticks >= window.start) & (ticks <= window.end)
    if len(durations) == 1:
        column[inside] = _ramp(ticks[inside], window.start, window.end, alpha, 1.0)
    else:
        bounds = segment_bounds(alpha, durations)
        low = alpha
        for j, sub in enumerate(window.segments):
            if sub is None:
                low = bounds[j]
                continue
            s, e = sub
            mask = (ticks >= s) & (ticks <= e)
            column[mask] = _ramp(ticks[mask], s, e, low, bounds[j])
            column[inside & (ticks > e)] = bounds[j]
            low = bounds[j]
    column[ticks >= window.end] = 1.0
    return np.clip(column, 0.0, 1.0)


def annotate(demo: Demonstration, stats: DatasetStats,
             dilation: int = DEFAULT_DILATION) -> AnnotatedDemo:
    """Progress labels for every step of a demonstration.

    >>> from engine.scenario import ScenarioConfig, SpawnRegion
    >>> from skillkit.skills import default_bank, generate_demo
    >>> bank = default_bank()
    >>> edge = ScenarioConfig(spawn=SpawnRegion.edge())
    >>> demos = [generate_demo(bank, [0, 1, 2, 3], edge, seed) for seed in (2, 3)]
    >>> stats = dataset_stats(demos, [1, 1, 1, 2])
    >>> labeled = annotate(demos[0], stats)
    >>> bool(np.all(np.diff(labeled.progress, axis=0) >= 0))
    True
    >>> pick = labeled.windows[1]
    >>> float(labeled.progress[labeled.index_of(pick.end), 1])
    1.0
    >>> bool(labeled.progress[labeled.index_of(pick.start), 1] == labeled.alpha[1])
    True

    Inside a single-segment window the labels rise by 1/M per tick, up to quantization:
    >>> m = stats.max_duration[1]
    >>> rows = labeled.progress[labeled.index_of(pick.start):labeled.index_of(pick.end) + 1, 1]
    >>> bool(np.all(np.abs(np.diff(rows) - 1/m) <= 1/(m*(pick.end - pick.start)) + 1e-12))
    True

    A skill the demo skipped is labeled 1 throughout, and annotation is repeatable:
    >>> central = generate_demo(bank, [0, 1, 2, 3], ScenarioConfig(), seed=2)
    >>> bool(np.all(annotate(central, stats).progress[:, 0] == 1.0))
    True
    >>> annotate(demos[0], stats).same_labels(labeled)
    True

    Windows come from the log alone, never from the generator's truth:
    >>> annotate(demos[0].without_truth(), stats).same_labels(labeled)
    True
    """
    ticks = demo.ticks
    progress = np.ones((len(demo.steps), stats.n_skills), dtype=np.float64)
    windows: dict[int, Window] = {}
    alphas: dict[int, float] = {}
    for skill in demo.ordering:
        if not stats.covers(skill):
            raise MissingSkillCoverage(f"The dataset stats have no entry for skill {skill}")
        window = detect_execution_window(demo, skill, stats.segments(skill))
        alpha = compute_alpha(window.length, stats.max_duration[skill])
        progress[:, skill] = skill_progress(ticks, window, alpha,
                                            stats.segment_durations[skill])
        windows[skill] = window
        alphas[skill] = alpha
    suction = dilate_suction([s.action.suction for s in demo.steps], dilation)
    return AnnotatedDemo(demo=demo, windows=windows, alpha=alphas, progress=progress,
                         suction_dilated=suction)


def window_mismatches(demo: Demonstration, segments: Sequence[int]) -> list[str]:
    """Compare detected windows against the generator's. An empty list means they all agree."""
    problems = []
    for skill, truth in sorted(demo.truth.items()):
        found = detect_execution_window(demo, skill, segments[skill])
        if found != truth:
            problems.append(f"{demo.scenario}/{demo.seed} skill {skill}: detected "
                            f"{found.start}..{found.end}, expected {truth.start}..{truth.end}")
            log.debug("%s", problems[-1])
    return problems


def median_alphas(annotated: Sequence[AnnotatedDemo], n_skills: int) -> tuple[float, ...]:
    """Canonical alpha of every skill: the dataset median. Skills never executed get 1."""
    alphas = []
    for skill in range(n_skills):
        values = [a.alpha[skill] for a in annotated if skill in a.alpha]
        alphas.append(float(np.median(values)) if values else 1.0)
    return tuple(alphas)


def label_problems(annotated: AnnotatedDemo, tolerance: float = 1e-9) -> list[str]:
    """Check one labeled demo: every column non-decreasing, alpha at each window start, 1 at its
    end, and 1 throughout for skills the demo never executed.

    >>> from engine.scenario import ScenarioConfig, SpawnRegion
    >>> from skillkit.skills import default_bank, generate_demo
    >>> demo = generate_demo(default_bank(), [0, 1, 2, 3], ScenarioConfig(spawn=SpawnRegion.edge()),
    ...                      seed=2)
    >>> labeled = annotate(demo, dataset_stats([demo], [1, 1, 1, 2]))
    >>> label_problems(labeled)
    []
    >>> broken = replace(labeled, progress=labeled.progress[::-1])
    >>> label_problems(broken)[0]
    'gc/2 skill 0: labels decrease'
    """
    name = f"{annotated.demo.scenario}/{annotated.demo.seed}"
    progress = annotated.progress
    problems = []
    for skill in range(annotated.n_skills):
        column = progress[:, skill]
        if np.any(np.diff(column) < -tolerance):
            problems.append(f"{name} skill {skill}: labels decrease")
            continue
        window = annotated.windows.get(skill)
        if window is None:
            if np.any(np.abs(column - 1.0) > tolerance):
                problems.append(f"{name} skill {skill}: not executed but labeled below 1")
            continue
        start = column[annotated.index_of(window.start)]
        end = column[annotated.index_of(window.end)]
        off_start = window.start < window.end and abs(start - annotated.alpha[skill]) > tolerance
        if off_start or abs(end - 1.0) > tolerance:
            problems.append(f"{name} skill {skill}: window runs {start:.3f}..{end:.3f}, "
                            f"expected {annotated.alpha[skill]:.3f}..1")
    for problem in problems:
        log.debug("%s", problem)
    return problems
