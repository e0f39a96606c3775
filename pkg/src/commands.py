"""The pipeline commands behind the subcommands of main.py.

Every command reads its inputs through the manifest in --out, writes its artifact next to the
manifest, records it there and prints a Report. A command returns its exit code; exceptions are
turned into exit codes by App.run.

    generate    scenario(s) -> demos.jsonl, scenario.toml
    annotate    demos.jsonl -> annotated.jsonl, stats.toml
    fit         annotated.jsonl -> estimator.npz
    library     annotated.jsonl, stats.toml -> library.toml
    run         one episode -> trace.csv, decisions.csv
    evaluate    experiment grids -> metrics.csv
    export      default scenario.toml (or the library as CSV)
"""
from __future__ import annotations
import argparse
from collections import defaultdict
from pathlib import Path
import logging
import numpy as np
from engine.report import Report
from engine.scenario import PRESETS, ScenarioConfig, preset, scenario_from_toml, scenario_to_toml
from engine.world import Corner, SimConstants
from skillkit.annotation import (AnnotatedDemo, DatasetStats, annotate, dataset_stats,
                                 label_problems, median_alphas, window_mismatches)
from skillkit.estimator import ProgressEstimator, fit_knn, load_knn, save_knn
from skillkit.experiments import MAE_BAR, grid_cells, knn_accuracy
from skillkit.formats import (FLOAT_FORMAT, library_from_toml, library_rows, library_to_toml,
                              read_annotated, read_demos, read_text, stats_from_toml,
                              stats_to_toml, write_annotated, write_csv, write_demos, write_text)
from skillkit.runner import (METRICS_HEADER, decision_header, evaluate, oracle_for, run_episode,
                             trace_header)
from skillkit.selector import SequenceLibrary, library_from_annotated
from skillkit.skills import PolicyBank, default_bank, generate_demos
from .context import Context

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
DEFAULT_DEMO_SCENARIOS = ("gc", "gc-edge")  # Flat and leaning spawns: every skill gets demos
SHOWN_PROBLEMS = 5


# ---------------------------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------------------------

def load_scenario(name: str | None, goal: str | None = None) -> ScenarioConfig:
    """A preset name, a scenario TOML file, or (None) the manifest's scenario, else gc."""
    if name is None:
        path = Context.manifest.scenario
        scenario = (scenario_from_toml(read_text(path)) if path is not None and path.exists()
                    else preset("gc"))
    elif name in PRESETS:
        scenario = preset(name)
    else:
        scenario = scenario_from_toml(read_text(Path(name)))
    return scenario if goal is None else scenario.with_goal(Corner.from_code(goal))


def bank_for(scenario: ScenarioConfig) -> PolicyBank:
    """The default bank with the scenario's thresholds."""
    return default_bank().with_thresholds(scenario.thresholds)


def required_skills(bank: PolicyBank, scenario: ScenarioConfig) -> list[int]:
    """Skills the scenario's orderings use."""
    return sorted({s for names in scenario.orderings for s in bank.resolve(names)})


def load_stats() -> DatasetStats:
    """stats.toml of the manifest."""
    path = Context.manifest.require("stats")
    return stats_from_toml(read_text(path), str(path))


def load_library(bank: PolicyBank, scenario: ScenarioConfig) -> SequenceLibrary:
    """library.toml of the manifest, or a library built on the spot from the annotated demos."""
    path = Context.manifest.library
    if path is not None and path.exists():
        return library_from_toml(read_text(path), str(path))
    log.info("No library in the manifest: building one from the annotated demos")
    annotated = read_annotated(Context.manifest.require("annotated"))
    orderings = [bank.resolve(names) for names in scenario.orderings]
    return library_from_annotated(annotated, load_stats(), orderings)


def load_estimator(kind: str, bank: PolicyBank, library: SequenceLibrary) -> ProgressEstimator:
    """The oracle, or the k-NN snapshot of the manifest."""
    if kind == "oracle":
        return oracle_for(bank, library)
    return load_knn(Context.manifest.require("estimator"))


def _rounded(values: tuple[float, ...] | list[float]) -> str:
    return ", ".join(f"{v:.3f}" for v in values)


# ---------------------------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    """Scripted demos of every ordering of every scenario, args.count seeds each."""
    names = args.scenario or list(DEFAULT_DEMO_SCENARIOS)
    scenarios = [load_scenario(name, args.goal) for name in names]
    bank = default_bank()
    seeds = range(Context.seed, Context.seed + args.count)
    report = Report("Generate")
    demos = []
    lengths: dict[str, list[int]] = defaultdict(list)
    for scenario in scenarios:
        generated, skipped = generate_demos(bank, scenario, seeds)
        demos.extend(generated)
        for demo in generated:
            lengths["-".join(bank.names[s] for s in demo.ordering)].append(len(demo.steps))
        for seed, reason in skipped:
            report.item(f"skipped {scenario.name}/{seed}: {reason}")
    if not demos:
        report.item("no demos: every (seed, ordering) pair was infeasible")
        print(report)
        return EXIT_VALIDATION
    scenario_path = Context.path("scenario.toml")
    write_text(scenario_path, scenario_to_toml(scenarios[0]))
    Context.record("scenario", scenario_path)
    demos_path = Context.path("demos.jsonl")
    write_demos(demos_path, demos)
    Context.record("demos", demos_path)
    report.item(f"{len(demos)} demo(s) written to {demos_path}")
    report.table(["executed", "demos", "mean steps"],
                 [[ordering, str(len(v)), f"{np.mean(v):.1f}"]
                  for ordering, v in sorted(lengths.items())])
    print(report)
    return EXIT_OK


def cmd_annotate(args: argparse.Namespace) -> int:
    """Label the manifest's demos. Nothing is written if a window or a label fails its check."""
    demos = read_demos(Context.manifest.require("demos"))
    bank = default_bank()
    scenario = load_scenario(None)
    segments = [spec.k for spec in bank.skills]
    stats = dataset_stats(demos, segments, required_skills(bank, scenario))
    annotated = [annotate(demo, stats, args.k_dilation) for demo in demos]
    problems = [p for demo in demos for p in window_mismatches(demo, segments)]
    problems += [p for labeled in annotated for p in label_problems(labeled)]
    report = Report("Annotate")
    report.item(f"{len(annotated)} demo(s), dilation k={args.k_dilation}")
    alphas = median_alphas(annotated, stats.n_skills)
    report.table(["skill", "M", "segment ticks", "median alpha"],
                 [[bank.names[s], str(stats.max_duration.get(s, "-")),
                   " ".join(str(d) for d in stats.segment_durations.get(s, ())),
                   f"{alphas[s]:.3f}"]
                  for s in range(stats.n_skills)])
    if problems:
        report.item(f"{len(problems)} validation problem(s), nothing written")
        for problem in problems[:SHOWN_PROBLEMS]:
            report.item(problem)
        print(report)
        return EXIT_VALIDATION
    annotated_path = Context.path("annotated.jsonl")
    write_annotated(annotated_path, annotated)
    Context.record("annotated", annotated_path)
    stats_path = Context.path("stats.toml")
    write_text(stats_path, stats_to_toml(stats))
    Context.record("stats", stats_path)
    report.item("windows and labels check out")
    print(report)
    return EXIT_OK


def _accuracy_rows(annotated: list[AnnotatedDemo], bank: PolicyBank, k: int,
                  physics: SimConstants) -> list[list[str]]:
    mae = knn_accuracy(annotated, seed=Context.seed, k=k, physics=physics)
    return [[bank.names[s], FLOAT_FORMAT.format(err), "ok" if err <= MAE_BAR else "over"]
            for s, err in enumerate(mae)]


def cmd_fit(args: argparse.Namespace) -> int:
    """Fit the k-NN estimator on every annotated step, under the physics of the manifest's
    scenario."""
    annotated = read_annotated(Context.manifest.require("annotated"))
    physics = load_scenario(None).physics
    estimator = fit_knn(annotated, args.k, physics=physics)
    path = Context.path("estimator.npz")
    save_knn(estimator, path)
    Context.record("estimator", path)
    report = Report("Fit")
    report.item(f"k={estimator.k}, {len(estimator.features)} stored step(s), "
                f"{estimator.n_skills} skill(s): {path}")
    if len(annotated) > 1:
        report.print("Held-out error (80/20 split by demo)")
        report.table(["skill", "MAE", f"<= {MAE_BAR}"],
                     _accuracy_rows(annotated, default_bank(), args.k, physics))
    print(report)
    return EXIT_OK


def cmd_library(args: argparse.Namespace) -> int:
    """Canonical trajectories of the scenario's orderings."""
    bank = default_bank()
    scenario = load_scenario(args.scenario)
    annotated = read_annotated(Context.manifest.require("annotated"))
    orderings = [bank.resolve(names) for names in scenario.orderings]
    library = library_from_annotated(annotated, load_stats(), orderings)
    path = Context.path("library.toml")
    write_text(path, library_to_toml(library))
    Context.record("library", path)
    report = Report("Library")
    for trajectory in library.trajectories:
        report.item(f"{'-'.join(bank.names[s] for s in trajectory.ordering)}: "
                    f"{len(trajectory.vertices)} vertices")
    report.item(f"alphas: {_rounded(library.alphas)}")
    report.item(f"written to {path}")
    print(report)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    """One closed-loop episode with the chosen estimator."""
    scenario = load_scenario(args.scenario, args.goal)
    bank = bank_for(scenario)
    library = load_library(bank, scenario)
    estimator = load_estimator(args.estimator, bank, library)
    result = run_episode(scenario, bank, estimator, library, Context.seed)
    trace_path = Path(args.trace) if args.trace else Context.path("trace.csv")
    write_csv(trace_path, trace_header(), result.trace_rows())
    decisions_path = Context.path("decisions.csv")
    write_csv(decisions_path, decision_header(bank.size), result.decision_rows())
    report = Report(f"Episode {scenario.name}/{result.seed}, goal {result.goal.corner.code}")
    report.item(f"outcome: {result.outcome.name.lower()}"
                + (f" ({result.failed_skill})" if result.failed_skill else ""))
    report.item(f"{result.ticks} ticks, {len(result.decisions)} cycles")
    arrived = result.execution_time
    report.item(f"execution time: {'-' if arrived is None else arrived}")
    report.table(["criterion", "met"],
                 [[c, "yes" if ok else "no"] for c, ok in result.completion.items()])
    report.item(f"trace: {trace_path}, decisions: {decisions_path}")
    print(report)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Seeded trials of every cell of the named grids."""
    cells = [cell for name in (args.cells or ["gc"]) for cell in grid_cells(name)]
    scenario = load_scenario(None)
    bank = bank_for(scenario)
    library = load_library(bank, scenario)
    estimator = load_estimator(args.estimator, bank, library)
    table = evaluate(cells, args.trials, Context.seed, bank, estimator, library, args.workers)
    path = Path(args.metrics) if args.metrics else Context.path("metrics.csv")
    write_csv(path, METRICS_HEADER, table.rows())
    report = Report(f"Evaluate: {args.trials} trial(s) per cell, seeds from {Context.seed}")
    report.table(["cell", "metric", "count", "value"], table.table_rows())
    report.item(f"written to {path}")
    print(report)
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    """Write a scenario TOML and the manifest, or the library as CSV vertex lists."""
    report = Report("Export")
    if args.what == "library":
        scenario = load_scenario(None)
        bank = bank_for(scenario)
        library = load_library(bank, scenario)
        path = Context.path("library.csv")
        header = ["trajectory", "ordering", "vertex"] + [f"rho_{i + 1}"
                                                          for i in range(library.n_skills)]
        write_csv(path, header, library_rows(library))
        report.item(f"library vertices written to {path}")
    else:
        scenario = load_scenario(args.scenario, args.goal)
        path = Context.path("scenario.toml")
        write_text(path, scenario_to_toml(scenario))
        Context.record("scenario", path)
        report.item(f"scenario {scenario.name} written to {path}")
    print(report)
    return EXIT_OK
