"""The closed-loop executive and its metrics.

Every re-estimation interval the runner observes the world, asks the estimator for rho, picks a
decision and plans an action chunk from it. Between estimates it plays the chunk out through the
simulator, replanning at chunk boundaries, and applies scheduled disturbances. Complete switches
to stop-and-hold: the tool backs off to the home pose and the episode ends once it has held
for hold_ticks without the decision changing.

Outcomes:
    SUCCESS         held after Complete and every criterion holds
    SKILL_FAILURE   held (or a controller refused) with some criterion unmet
    TIMEOUT         max_ticks reached first
    ABORTED         the same segment was selected abort_cycles more times without gaining
                    abort_gain progress
"""
from __future__ import annotations
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Iterable, Sequence
import logging
import numpy as np
from engine.buffer_value import BufferValue
from engine.scenario import ScenarioConfig
from engine.sim import TRACE_FIELDS, TraceRow, apply_disturbance, observe, skill_postconditions
from engine.sim import spawn, step, within_goal
from engine.timing import TickCounter
from engine.world import CRITERIA, DisturbanceEvent, GoalSpec, WorldState
from .estimator import OracleEstimator, ProgressEstimator
from .formats import FLOAT_FORMAT
from .selector import (Complete, Decision, DimensionMismatch, Execute, SequenceLibrary,
                       nearest_index, point_to_polyline_distance, progress_vector,
                       select_single)
from .skills import ActionChunk, PolicyBank, SkillError, plan_chunk, plan_hold

log = logging.getLogger(__name__)

HOLD_WINDOW = 100   # Ticks the object must stay at the goal to count as arrived

# Criteria a skill is responsible for
SKILL_CRITERIA = {
        "flip": ("flip",),
        "pick": ("pick",),
        "pack": ("pack",),
        "push": ("push_orientation", "push_position"),
        }


class Outcome(Enum):
    """How an episode ended."""
    SUCCESS = auto()
    SKILL_FAILURE = auto()
    TIMEOUT = auto()
    ABORTED = auto()


@dataclass(frozen=True)
class CycleRecord:
    """One estimate/select cycle."""
    cycle:      int
    tick:       int
    rho:        tuple[float, ...]
    decision:   Decision
    ordering:   int         # Index of the library trajectory followed this cycle


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True, eq=False)
class EpisodeResult:
    """Everything one episode produced."""
    scenario:       str
    seed:           int
    goal:           GoalSpec
    trace:          tuple[TraceRow, ...]
    decisions:      tuple[CycleRecord, ...]
    completion:     dict[str, bool]         # Criterion -> met, after failure propagation
    execution_time: int | None
    outcome:        Outcome
    failed_skill:   str | None = None

    @property
    def ticks(self) -> int:
        """Ticks simulated."""
        return self.trace[-1].tick - self.trace[0].tick

    @property
    def executed(self) -> tuple[int, ...]:
        """Skills named by any Execute decision, in first-decision order."""
        seen: list[int] = []
        for record in self.decisions:
            decision = record.decision
            if isinstance(decision, Execute) and decision.skill_id not in seen:
                seen.append(decision.skill_id)
        return tuple(seen)

    @property
    def first_ordering(self) -> int:
        """The trajectory the executive followed when it first executed a skill."""
        for record in self.decisions:
            if isinstance(record.decision, Execute):
                return record.ordering
        return self.decisions[0].ordering if self.decisions else 0

    @property
    def task_done(self) -> bool:
        """Every criterion met."""
        return all(self.completion.values())

    def redone(self, skill_id: int, threshold: float) -> bool:
        """Was the skill executed again after a cycle that read it as done?"""
        done_at = next((r.cycle for r in self.decisions if r.rho[skill_id] >= threshold), None)
        return done_at is not None and any(
                isinstance(r.decision, Execute) and r.decision.skill_id == skill_id
                for r in self.decisions[done_at + 1:])

    def decision_rows(self) -> list[list[str]]:
        """CSV rows (cycle, tick, rho_1..rho_N, decision, ordering)."""
        return [[str(r.cycle), str(r.tick)] + [FLOAT_FORMAT.format(v) for v in r.rho]
                + [str(r.decision), str(r.ordering)] for r in self.decisions]

    def trace_rows(self) -> list[list[str]]:
        """CSV rows of the tick trace."""
        return [row.as_csv_row() for row in self.trace]


def decision_header(n_skills: int) -> list[str]:
    """Header of the decisions CSV."""
    rhos = [f"rho_{i + 1}" for i in range(n_skills)]
    return ["cycle", "tick", *rhos, "decision", "ordering"]


def trace_header() -> list[str]:
    """Header of the trace CSV."""
    return list(TRACE_FIELDS)


def scenario_criteria(scenario: ScenarioConfig) -> tuple[str, ...]:
    """The criteria of the scenario's skills, in task order."""
    wanted = {c for name in scenario.skill_names for c in SKILL_CRITERIA.get(name, ())}
    return tuple(c for c in CRITERIA if c in wanted)


def completion_flags(world: WorldState, criteria: Sequence[str]) -> dict[str, bool]:
    """Criteria on the final world. Once one fails, every later one counts as failed too.

    >>> from engine.scenario import ScenarioConfig
    >>> world = spawn(ScenarioConfig(), seed=1)
    >>> completion_flags(world, CRITERIA)
    {'flip': True, 'pick': False, 'pack': False, 'push_orientation': False, 'push_position': False}
    """
    post = skill_postconditions(world).as_dict()
    flags = {}
    failed = False
    for criterion in criteria:
        failed = failed or not post[criterion]
        flags[criterion] = not failed
    return flags


def execution_time(trace: Sequence[TraceRow],
                   goal: GoalSpec,
                   position_tolerance: float,
                   yaw_tolerance: float,
                   hold: int = HOLD_WINDOW) -> int | None:
    """First tick from which the object stays at the goal for 'hold' consecutive ticks.

    >>> from dataclasses import replace
    >>> from engine.scenario import ScenarioConfig
    >>> world = spawn(ScenarioConfig(), seed=2)
    >>> target = world.goal.target_pose
    >>> away = TraceRow.of(world)
    >>> there = replace(away, object=target)
    >>> rows = [replace(r, tick=t) for t, r in enumerate([away]*900 + [there]*100)]
    >>> execution_time(rows, world.goal, 0.02, 0.15)
    900
    >>> execution_time(rows[:999], world.goal, 0.02, 0.15) is None
    True
    >>> execution_time(rows[900:], world.goal, 0.02, 0.15, hold=100)
    900

    Brute force agrees on random traces:
    >>> rng = np.random.default_rng(0)
    >>> def brute(flags, hold):
    ...     return next((i for i in range(len(flags) - hold + 1) if all(flags[i:i + hold])), None)
    >>> agree = []
    >>> for _ in range(200):
    ...     flags = (rng.uniform(size=int(rng.integers(1, 400))) < 0.97).tolist()
    ...     rows = [replace(there if f else away, tick=t) for t, f in enumerate(flags)]
    ...     agree.append(execution_time(rows, world.goal, 0.02, 0.15) == brute(flags, 100))
    >>> all(agree)
    True
    """
    if hold < 1:
        raise ValueError(f"hold must be >= 1, got {hold}")
    if len(trace) < hold:
        return None
    inside = np.array([within_goal(row, goal, position_tolerance, yaw_tolerance)
                       for row in trace], dtype=np.int64)
    runs = np.convolve(inside, np.ones(hold, dtype=np.int64), mode="valid")
    full = np.flatnonzero(runs == hold)
    return int(trace[full[0]].tick) if full.size else None


def oracle_for(bank: PolicyBank, library: SequenceLibrary,
               thresholds: Sequence[float] | None = None) -> OracleEstimator:
    """An oracle estimator matched to a bank and a library."""
    return OracleEstimator(names=bank.names, alphas=library.alphas, bounds=library.bounds,
                           thresholds=tuple(bank.thresholds if thresholds is None
                                            else thresholds))


@dataclass
class _Pinning:
    """Which library trajectory the executive follows, with optional hysteresis."""
    library:    SequenceLibrary
    hysteresis: bool
    margin:     float
    pinned:     BufferValue[int] = field(default_factory=BufferValue)

    def follow(self, rho: np.ndarray) -> int:
        """Index of the trajectory to follow for this rho."""
        nearest, best = nearest_index(rho, self.library)
        self.pinned.load(nearest)
        if (not self.hysteresis or self.pinned.is_empty
                or best < self.distance(rho, self.pinned.value) - self.margin):
            self.pinned.clock()
        return self.pinned.value

    def distance(self, rho: np.ndarray, index: int) -> float:
        """Distance from rho to one trajectory."""
        return point_to_polyline_distance(rho, self.library.trajectories[index])[0]


# pylint: disable=too-many-locals,too-many-branches,too-many-statements
def run_episode(scenario: ScenarioConfig,
                bank: PolicyBank,
                estimator: ProgressEstimator,
                library: SequenceLibrary,
                seed: int) -> EpisodeResult:
    """One closed-loop episode.

    >>> from engine.scenario import preset
    >>> from skillkit.selector import build_trajectory_map
    >>> from skillkit.skills import default_bank
    >>> bank = default_bank()
    >>> lib = build_trajectory_map([[0, 1, 2, 3]], [0.4, 0.3, 0.2, 0.1],
    ...                            [(1.0,), (1.0,), (1.0,), (0.55, 1.0)])
    >>> result = run_episode(preset("gc"), bank, oracle_for(bank, lib), lib, seed=1)
    >>> result.outcome, result.task_done
    (<Outcome.SUCCESS: 1>, True)

    A flat object never needs flipping:
    >>> 0 in result.executed
    False

    Every cycle is followed by one interval of ticks, and Complete is never followed by an
    Execute without a disturbance:
    >>> len(result.decisions) == -(-result.ticks // preset("gc").reestimate_interval)
    True
    >>> kinds = [type(r.decision).__name__ for r in result.decisions]
    >>> "Execute" not in kinds[kinds.index("Complete"):]
    True
    >>> all(r.rho[r.decision.skill_id] < bank.thresholds[r.decision.skill_id]
    ...     for r in result.decisions if isinstance(r.decision, Execute))
    True

    An object stood back up after the flip gets flipped again:
    >>> redo = run_episode(preset("redo"), bank, oracle_for(bank, lib), lib, seed=2)
    >>> flips = [r.cycle for r in redo.decisions if r.decision == Execute(0, 0)]
    >>> redo.outcome, len(flips) > 1 and flips != list(range(flips[0], flips[-1] + 1))
    (<Outcome.SUCCESS: 1>, True)
    """
    if not estimator.n_skills == library.n_skills == bank.size:
        raise DimensionMismatch(f"The bank has {bank.size} skill(s), the estimator "
                                f"{estimator.n_skills}, the library {library.n_skills}")
    thresholds = tuple(scenario.thresholds) or bank.thresholds
    if len(thresholds) != bank.size:
        raise DimensionMismatch(f"{len(thresholds)} threshold(s) for {bank.size} skill(s)")
    world = spawn(scenario, seed)
    goal = world.goal
    criteria = scenario_criteria(scenario)
    disturbances: dict[int, list[DisturbanceEvent]] = {}
    for event in scenario.disturbances:
        disturbances.setdefault(event.at_tick, []).append(event)

    ticks = TickCounter(tick_count=world.tick)
    estimate = ticks.add_event("estimate", period=scenario.reestimate_interval)
    replan = ticks.add_event("replan", period=scenario.horizon)
    pinning = _Pinning(library, scenario.hysteresis, scenario.hysteresis_margin)

    trace = [TraceRow.of(world)]
    decisions: list[CycleRecord] = []
    decision: Decision | None = None
    chunk: ActionChunk | None = None
    chunk_tick = 0
    chunks = 0
    holding_since: int | None = None
    stalled = 0
    outcome: Outcome | None = None
    failed_skill: str | None = None

    def new_chunk() -> ActionChunk:
        nonlocal chunks
        chunks += 1
        observation = observe(world)
        if holding_since is not None or not isinstance(decision, Execute):
            return plan_hold(observation, scenario.horizon)
        return plan_chunk(bank, decision.skill_id, decision.segment, observation, goal,
                          scenario.horizon, constants=world.constants,
                          noise_sigma=scenario.noise_sigma,
                          seed=seed*4096 + chunks)

    while outcome is None:
        if world.tick >= scenario.max_ticks:
            outcome = Outcome.TIMEOUT
            break
        open_loop_over = 0 < scenario.max_cycles <= len(decisions)
        if estimate.is_period and not open_loop_over:
            rho = progress_vector(estimator.progress(world), bank.size)
            index = pinning.follow(rho)
            previous = decisions[-1] if decisions else None
            decision = select_single(rho, library.trajectories[index].ordering, thresholds,
                                     library.bounds)
            decisions.append(CycleRecord(cycle=len(decisions), tick=world.tick,
                                         rho=tuple(float(v) for v in rho), decision=decision,
                                         ordering=index))
            log.debug("tick %d: rho %s -> %s", world.tick, np.round(rho, 3).tolist(), decision)
            if isinstance(decision, Complete):
                holding_since = world.tick if holding_since is None else holding_since
                stalled = 0
            else:
                holding_since = None
                if (previous is not None and previous.decision == decision
                        and rho[decision.skill_id] - previous.rho[decision.skill_id]
                        < scenario.abort_gain):
                    stalled += 1
                else:
                    stalled = 0
                if stalled >= scenario.abort_cycles:
                    outcome = Outcome.ABORTED
                    failed_skill = bank.names[decision.skill_id]
                    break
            chunk = None
        elif open_loop_over and holding_since is None:
            holding_since = world.tick
            chunk = None
        if chunk is None or replan.is_period or chunk_tick >= len(chunk):
            try:
                chunk = new_chunk()
            except SkillError as err:
                log.debug("seed %d: %s", seed, err)
                outcome = Outcome.SKILL_FAILURE
                break
            chunk_tick = 0
        before = world.tick
        world = step(world, chunk.actions[chunk_tick])
        chunk_tick += 1
        for event in disturbances.get(before, ()):
            log.debug("tick %d: disturbance %s", before, event.kind.code)
            world = apply_disturbance(world, event)
        ticks.update()
        trace.append(TraceRow.of(world))
        if holding_since is not None and world.tick - holding_since >= scenario.hold_ticks:
            break

    completion = completion_flags(world, criteria)
    if outcome is None:
        outcome = Outcome.SUCCESS if all(completion.values()) else Outcome.SKILL_FAILURE
    if outcome is not Outcome.SUCCESS and failed_skill is None:
        failed = next((c for c in criteria if not completion[c]), None)
        failed_skill = next((name for name, owned in SKILL_CRITERIA.items() if failed in owned),
                            None)
    constants = world.constants
    arrived = (execution_time(trace, goal, constants.position_tolerance, constants.yaw_tolerance)
               if "push_position" in criteria else None)
    log.debug("%s/%d: %s after %d ticks", scenario.name, seed, outcome.name.lower(),
              world.tick)
    return EpisodeResult(scenario=scenario.name, seed=seed, goal=goal, trace=tuple(trace),
                         decisions=tuple(decisions), completion=completion,
                         execution_time=arrived, outcome=outcome, failed_skill=failed_skill)


# ---------------------------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    """One experiment cell: a named scenario."""
    name:       str
    scenario:   ScenarioConfig


@dataclass(frozen=True, eq=False)
class EpisodeJob:
    """Everything a worker needs to run one episode."""
    cell:       int
    seed:       int
    scenario:   ScenarioConfig
    bank:       PolicyBank
    estimator:  ProgressEstimator
    library:    SequenceLibrary


def _run_job(job: EpisodeJob) -> tuple[int, EpisodeResult]:
    return job.cell, run_episode(job.scenario, job.bank, job.estimator, job.library, job.seed)


@dataclass
class CellMetrics:
    """Aggregates of one cell."""
    name:       str
    criteria:   tuple[str, ...]
    trials:     int = 0
    completed:  Counter[str] = field(default_factory=Counter)
    full_task:  int = 0
    times:      list[int] = field(default_factory=list)
    orderings:  Counter[str] = field(default_factory=Counter)
    outcomes:   Counter[str] = field(default_factory=Counter)

    def add(self, result: EpisodeResult, ordering_names: Sequence[str]) -> None:
        """Count one episode."""
        self.trials += 1
        self.completed.update(c for c, ok in result.completion.items() if ok)
        self.full_task += int(result.outcome is Outcome.SUCCESS)
        if result.execution_time is not None and result.outcome is Outcome.SUCCESS:
            self.times.append(result.execution_time)
        if result.decisions:
            self.orderings[ordering_names[result.first_ordering]] += 1
        self.outcomes[result.outcome.name.lower()] += 1

    @property
    def mean_time(self) -> float | None:
        """Mean execution time over successes that have one."""
        return float(np.mean(self.times)) if self.times else None


METRICS_HEADER = ("cell", "metric", "count", "trials", "value")


@dataclass
class MetricsTable:
    """Per-cell completion counts, execution times and ordering histograms."""
    cells:  list[CellMetrics] = field(default_factory=list)

    def cell(self, name: str) -> CellMetrics:
        """Metrics of a cell by name."""
        for metrics in self.cells:
            if metrics.name == name:
                return metrics
        raise KeyError(name)

    def rows(self) -> list[list[str]]:
        """CSV rows in METRICS_HEADER order."""
        rows = []
        for m in self.cells:
            trials = max(m.trials, 1)
            for criterion in m.criteria:
                count = m.completed[criterion]
                rows.append([m.name, criterion, str(count), str(m.trials), f"{count/trials:.3f}"])
            rows.append([m.name, "task", str(m.full_task), str(m.trials),
                         f"{m.full_task/trials:.3f}"])
            mean = m.mean_time
            rows.append([m.name, "execution_time", str(len(m.times)), str(m.trials),
                         "" if mean is None else f"{mean:.1f}"])
            for ordering, count in sorted(m.orderings.items()):
                rows.append([m.name, f"ordering {ordering}", str(count), str(m.trials),
                             f"{count/trials:.3f}"])
            for outcome, count in sorted(m.outcomes.items()):
                rows.append([m.name, f"outcome {outcome}", str(count), str(m.trials),
                             f"{count/trials:.3f}"])
        return rows

    def table_rows(self) -> list[list[str]]:
        """Rows for a printed table: cell, metric, count/trials, value."""
        return [[cell, metric, f"{count}/{trials}", value]
                for cell, metric, count, trials, value in self.rows()]


def _ordering_names(bank: PolicyBank, library: SequenceLibrary) -> list[str]:
    return ["-".join(bank.names[s] for s in t.ordering) for t in library.trajectories]


# pylint: disable=too-many-arguments
def run_cells(cells: Sequence[Cell],
              trials: int,
              base_seed: int,
              bank: PolicyBank,
              estimator: ProgressEstimator,
              library: SequenceLibrary,
              workers: int = 1) -> list[tuple[int, EpisodeResult]]:
    """(cell index, result) of every trial, sorted by (cell, seed)."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    jobs = [EpisodeJob(cell=i, seed=base_seed + t, scenario=cell.scenario, bank=bank,
                       estimator=estimator, library=library)
            for i, cell in enumerate(cells) for t in range(trials)]
    results: Iterable[tuple[int, EpisodeResult]]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]
    return sorted(results, key=lambda r: (r[0], r[1].seed))


# pylint: disable=too-many-arguments
def evaluate(cells: Sequence[Cell],
             trials: int,
             base_seed: int,
             bank: PolicyBank,
             estimator: ProgressEstimator,
             library: SequenceLibrary,
             workers: int = 1) -> MetricsTable:
    """Run 'trials' seeded episodes per cell and aggregate them.

    Seeds are base_seed .. base_seed + trials - 1 in every cell. Results are merged in
    (cell, seed) order whatever order the workers finish in.

    >>> from engine.scenario import preset
    >>> from skillkit.selector import build_trajectory_map
    >>> from skillkit.skills import default_bank
    >>> bank = default_bank()
    >>> lib = build_trajectory_map([[0, 1, 2, 3]], [0.4, 0.3, 0.2, 0.1],
    ...                            [(1.0,), (1.0,), (1.0,), (0.55, 1.0)])
    >>> cells = [Cell("skip", preset("skip"))]
    >>> table = evaluate(cells, 2, 5, bank, oracle_for(bank, lib), lib)
    >>> table.rows() == evaluate(cells, 2, 5, bank, oracle_for(bank, lib), lib).rows()
    True
    >>> table.cell("skip").trials, table.rows()[0][:4]
    (2, ['skip', 'flip', '2', '2'])
    """
    names = _ordering_names(bank, library)
    table = MetricsTable([CellMetrics(cell.name, scenario_criteria(cell.scenario))
                          for cell in cells])
    for index, result in run_cells(cells, trials, base_seed, bank, estimator, library, workers):
        table.cells[index].add(result, names)
    return table
