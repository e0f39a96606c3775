"""Desk-scale experiment grids.

Each grid builds its cells from the scenario presets, runs seeded episodes through the runner and
returns either a MetricsTable or the counts the grid is judged on. The full-size runs go through
`main.py evaluate --cells ...`; the doctests here run one or two trials per cell.

Usage:
    pipeline = prepare([preset("gc"), preset("gc-edge")], demos_per_scenario=15, seed=0)
    table = gc_grid(pipeline, trials=10, base_seed=0)
    print(Report.table(table.table_rows()))

>>> from engine.scenario import preset
>>> pipeline = prepare([preset("gc"), preset("gc-edge")], demos_per_scenario=2, seed=2)
>>> pipeline.library.orderings
((0, 1, 2, 3),)
>>> table = gc_grid(pipeline, trials=1, base_seed=1, corners=[Corner.BOTTOM_LEFT])
>>> table.cell("gc/bl").full_task
1
>>> skip_grid(pipeline, trials=1, base_seed=1)
(1, 1)
>>> redo_grid(pipeline, trials=1, base_seed=2)
(1, 1)
>>> expansion_isolation(pipeline, seeds=[1]).isolated
True
>>> bool(knn_refit_drift(pipeline) < 1e-9)
True
"""
from __future__ import annotations
from dataclasses import dataclass, field, replace
from typing import Sequence
import logging
import numpy as np
from numpy.typing import NDArray
from engine.scenario import ScenarioConfig, preset
from engine.sim import observe, spawn
from engine.world import Corner, SimConstants
from .annotation import (DEFAULT_DILATION, AnnotatedDemo, DatasetStats, Demonstration, annotate,
                         dataset_stats)
from .estimator import (DEFAULT_K, KnnEstimator, OracleEstimator, ProgressEstimator, featurize,
                        fit_knn)
from .runner import Cell, EpisodeResult, MetricsTable, evaluate, oracle_for, run_cells
from .selector import SequenceLibrary, build_trajectory_map, library_from_annotated
from .skills import (SETTLE, PolicyBank, default_bank, generate_demos, plan_chunk, plan_settle,
                     register_skill)

log = logging.getLogger(__name__)

NOISE_SIGMA = 0.002     # Actuation noise of the robustness cells (meters)
MAE_BAR = 0.1           # Largest acceptable per-component k-NN error on held-out steps
GRIDS = ("gc", "gc-noise", "redo", "skip", "ms")


@dataclass(frozen=True, eq=False)
class Pipeline:
    """A bank with the dataset, labels and library built from its demonstrations."""
    bank:       PolicyBank
    stats:      DatasetStats
    annotated:  tuple[AnnotatedDemo, ...]
    library:    SequenceLibrary
    dilation:   int = DEFAULT_DILATION
    physics:    SimConstants = field(default_factory=SimConstants)

    @property
    def demos(self) -> tuple[Demonstration, ...]:
        """The demonstrations behind the labels."""
        return tuple(a.demo for a in self.annotated)

    def oracle(self) -> OracleEstimator:
        """Oracle estimator matched to the bank and library."""
        return oracle_for(self.bank, self.library)

    def knn(self, k: int = DEFAULT_K) -> KnnEstimator:
        """k-NN estimator fitted on every labeled step."""
        return fit_knn(self.annotated, k, physics=self.physics)


def prepare(scenarios: Sequence[ScenarioConfig],
            demos_per_scenario: int,
            seed: int,
            bank: PolicyBank | None = None,
            dilation: int = DEFAULT_DILATION) -> Pipeline:
    """Generate, annotate and build the library in one go.

    Every scenario gets seeds seed .. seed + demos_per_scenario - 1. The library holds the
    scenarios' orderings, so a skill no demo needed still has its place in them. The k-NN
    features are scaled by the physics of the scenarios, which must all agree.
    """
    if demos_per_scenario < 1:
        raise ValueError(f"demos_per_scenario must be >= 1, got {demos_per_scenario}")
    physics = {scenario.physics for scenario in scenarios}
    if len(physics) > 1:
        raise ValueError(f"Scenarios disagree on their physics: "
                         f"{sorted(scenario.name for scenario in scenarios)}")
    bank = default_bank() if bank is None else bank
    seeds = range(seed, seed + demos_per_scenario)
    demos: list[Demonstration] = []
    for scenario in scenarios:
        generated, skipped = generate_demos(bank, scenario, seeds)
        demos.extend(generated)
        if skipped:
            log.debug("%s: %d infeasible (seed, ordering) pair(s) skipped", scenario.name,
                      len(skipped))
    orderings: list[tuple[int, ...]] = []
    for scenario in scenarios:
        orderings.extend(o for o in map(bank.resolve, scenario.orderings) if o not in orderings)
    required = sorted({skill for ordering in orderings for skill in ordering})
    stats = dataset_stats(demos, [spec.k for spec in bank.skills], required)
    annotated = tuple(annotate(demo, stats, dilation) for demo in demos)
    library = library_from_annotated(annotated, stats, orderings)
    log.info("Prepared %d demo(s) over %d ordering(s)", len(demos), len(orderings))
    return Pipeline(bank=bank, stats=stats, annotated=annotated, library=library,
                    dilation=dilation, physics=physics.pop() if physics else SimConstants())


def grid_cells(name: str, noise_sigma: float = NOISE_SIGMA) -> list[Cell]:
    """Cells of a named grid. Any preset name is a one-cell grid.

    >>> [cell.name for cell in grid_cells("gc")]
    ['gc/tl', 'gc/tr', 'gc/bl', 'gc/br']
    >>> [cell.scenario.noise_sigma for cell in grid_cells("gc-noise")][:2]
    [0.002, 0.002]
    >>> [cell.name for cell in grid_cells("ms")]
    ['ms-central', 'ms-edge']
    """
    match name:
        case "gc":
            return corner_cells(preset("gc"))
        case "gc-noise":
            return corner_cells(replace(preset("gc"), noise_sigma=noise_sigma),
                                prefix="gc-noise")
        case "ms":
            return [Cell(n, preset(n)) for n in ("ms-central", "ms-edge")]
        case _:
            return [Cell(name, preset(name))]


def corner_cells(scenario: ScenarioConfig, corners: Sequence[Corner] = tuple(Corner),
                 prefix: str | None = None) -> list[Cell]:
    """One cell per goal corner."""
    prefix = scenario.name if prefix is None else prefix
    return [Cell(f"{prefix}/{c.code}", scenario.with_goal(c)) for c in corners]


# pylint: disable=too-many-arguments
def gc_grid(pipeline: Pipeline,
            trials: int,
            base_seed: int,
            noise_sigma: float = 0.0,
            estimator: ProgressEstimator | None = None,
            corners: Sequence[Corner] = tuple(Corner),
            workers: int = 1) -> MetricsTable:
    """The goal-conditioned task in every corner."""
    scenario = replace(preset("gc"), noise_sigma=noise_sigma)
    estimator = pipeline.oracle() if estimator is None else estimator
    return evaluate(corner_cells(scenario, corners), trials, base_seed, pipeline.bank, estimator,
                    pipeline.library, workers)


def run_trials(pipeline: Pipeline,
               scenario: ScenarioConfig,
               trials: int,
               base_seed: int,
               estimator: ProgressEstimator | None = None,
               workers: int = 1) -> list[EpisodeResult]:
    """Results of one scenario, in seed order."""
    estimator = pipeline.oracle() if estimator is None else estimator
    results = run_cells([Cell(scenario.name, scenario)], trials, base_seed, pipeline.bank,
                        estimator, pipeline.library, workers)
    return [result for _, result in results]


def redo_grid(pipeline: Pipeline, trials: int, base_seed: int,
              estimator: ProgressEstimator | None = None, workers: int = 1) -> tuple[int, int]:
    """(trials that flipped again after flip read done and then succeeded, trials)."""
    flip = pipeline.bank.skill_id("flip")
    theta = pipeline.bank.thresholds[flip]
    results = run_trials(pipeline, preset("redo"), trials, base_seed, estimator, workers)
    redone = sum(r.redone(flip, theta) and r.task_done for r in results)
    return redone, len(results)


def skip_grid(pipeline: Pipeline, trials: int, base_seed: int,
              estimator: ProgressEstimator | None = None, workers: int = 1) -> tuple[int, int]:
    """(trials with no flip decision that succeeded, trials)."""
    flip = pipeline.bank.skill_id("flip")
    results = run_trials(pipeline, preset("skip"), trials, base_seed, estimator, workers)
    skipped = sum(flip not in r.executed and r.task_done for r in results)
    return skipped, len(results)


def ms_grid(pipeline: Pipeline, trials: int, base_seed: int,
            estimator: ProgressEstimator | None = None, workers: int = 1) -> MetricsTable:
    """Central and edge cells of the two-ordering task. Defaults to the k-NN estimator.

    The 'ordering' rows of the table are the histogram of the trajectory each trial followed when
    it first executed a skill.
    """
    estimator = pipeline.knn() if estimator is None else estimator
    return evaluate(grid_cells("ms"), trials, base_seed, pipeline.bank, estimator,
                    pipeline.library, workers)


def knn_accuracy(annotated: Sequence[AnnotatedDemo],
                 train_share: float = 0.8,
                 seed: int = 0,
                 k: int = DEFAULT_K,
                 physics: SimConstants = SimConstants()) -> NDArray[np.float64]:
    """Per-component mean absolute error on the steps of held-out demos.

    The split is by demo, so no held-out step has a training step from the same episode.
    Compare the result against MAE_BAR. Features are scaled by `physics`, which should be the
    physics the demos were recorded under.

    >>> knn_accuracy([], 0.8)
    Traceback (most recent call last):
    ...
    ValueError: An accuracy split needs at least 2 annotated demos, got 0
    """
    if len(annotated) < 2:
        raise ValueError(f"An accuracy split needs at least 2 annotated demos, got "
                         f"{len(annotated)}")
    if not 0 < train_share < 1:
        raise ValueError(f"train_share must be in (0, 1), got {train_share}")
    order = np.random.default_rng(seed).permutation(len(annotated))
    n_train = min(max(int(round(train_share*len(annotated))), 1), len(annotated) - 1)
    train = [annotated[i] for i in order[:n_train]]
    held = [annotated[i] for i in order[n_train:]]
    model = fit_knn(train, k, physics=physics)
    errors = [np.abs(model.predict_features(featurize(s.observation, a.demo.goal,
                                                      model.workspace, physics))
                     - a.progress[row])
              for a in held for row, s in enumerate(a.demo.steps)]
    mae = np.mean(errors, axis=0)
    log.info("k-NN MAE over %d held-out step(s): %s", len(errors), np.round(mae, 3).tolist())
    return mae


# ---------------------------------------------------------------------------------------------
# Skill-set expansion
# ---------------------------------------------------------------------------------------------

def with_settle(bank: PolicyBank, library: SequenceLibrary
                ) -> tuple[PolicyBank, SequenceLibrary]:
    """Register settle as the next skill. Its progress sits at 1 along every trajectory."""
    bigger = register_skill(bank, replace(SETTLE, id=bank.size), [plan_settle])
    wider = build_trajectory_map(library.orderings, library.alphas + (1.0,),
                                 library.bounds + ((1.0,),),
                                 start_alphas=[(*t.start, 1.0) for t in library.trajectories])
    return bigger, wider


@dataclass
class IsolationReport:
    """Episodes compared before and after registering a skill, and how many matched."""
    episodes:   int = 0
    decisions:  int = 0     # Same ticks, old-skill rho, decisions and followed trajectory
    traces:     int = 0     # Same tick trace
    chunks:     int = 0     # Same old-skill plan_chunk output from the spawn observation
    mismatched: list[int] = field(default_factory=list)

    @property
    def isolated(self) -> bool:
        """Everything matched."""
        return self.episodes == self.decisions == self.traces == self.chunks


def _cycles(result: EpisodeResult, n_skills: int) -> list[tuple[object, ...]]:
    return [(r.tick, r.rho[:n_skills], r.decision, r.ordering) for r in result.decisions]


def expansion_isolation(pipeline: Pipeline, seeds: Sequence[int],
                        scenario: ScenarioConfig | None = None) -> IsolationReport:
    """Run the same episodes with the bank as is and with settle registered, and compare.

    The wider oracle reads settle as done everywhere, so old skills must behave bit for bit
    as before.
    """
    scenario = preset("gc") if scenario is None else scenario
    bank, library = pipeline.bank, pipeline.library
    bigger, wider = with_settle(bank, library)
    old_oracle = oracle_for(bank, library)
    new_oracle = oracle_for(bigger, wider)
    report = IsolationReport()
    n = bank.size
    for seed in seeds:
        before = run_trials(pipeline, scenario, 1, seed, old_oracle)[0]
        after = run_trials(replace(pipeline, bank=bigger, library=wider), scenario, 1, seed,
                           new_oracle)[0]
        world = spawn(scenario, seed)
        obs = observe(world)
        same_chunks = all(
                plan_chunk(bank, s, j, obs, world.goal, scenario.horizon,
                           constants=world.constants)
                == plan_chunk(bigger, s, j, obs, world.goal, scenario.horizon,
                              constants=world.constants)
                for s in range(n) for j in range(bank.spec(s).k))
        report.episodes += 1
        report.decisions += _cycles(before, n) == _cycles(after, n)
        report.traces += before.trace == after.trace
        report.chunks += same_chunks
        if not (_cycles(before, n) == _cycles(after, n) and before.trace == after.trace
                and same_chunks):
            report.mismatched.append(seed)
    if report.mismatched:
        log.warning("Registering settle changed seed(s) %s", report.mismatched)
    return report


def knn_refit_drift(pipeline: Pipeline, k: int = DEFAULT_K, queries: int = 200) -> float:
    """Largest change in old-skill k-NN progress after relabeling with one more skill and
    refitting. The new skill never executes, so its column is all ones."""
    stats = pipeline.stats
    wider = replace(stats, n_skills=stats.n_skills + 1)
    relabeled = [annotate(a.demo, wider, pipeline.dilation) for a in pipeline.annotated]
    before = fit_knn(pipeline.annotated, k, physics=pipeline.physics)
    after = fit_knn(relabeled, k, physics=pipeline.physics)
    picks = np.linspace(0, len(before.features) - 1, num=min(queries, len(before.features)))
    drift = 0.0
    for row in picks.astype(int):
        query = before.features[row]
        old = before.predict_features(query)
        new = after.predict_features(query)[:stats.n_skills]
        drift = max(drift, float(np.abs(new - old).max()))
    return drift
