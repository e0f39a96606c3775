"""Files on disk: demonstration datasets, dataset stats, libraries, manifests and CSV tables.

    demos, annotated demos      JSONL: a header line starts each demo, one line per step follows
    stats, library, manifest    TOML with schema_version, unknown keys are errors
    traces, decisions, metrics  CSV with fixed float precision

Every writer goes through atomic_output: the file appears complete or not at all.
See engine/doc/formats.md for the field lists.

>>> from engine.scenario import ScenarioConfig
>>> from skillkit.skills import default_bank, generate_demo
>>> demo = generate_demo(default_bank(), [1, 2, 3], ScenarioConfig(), seed=1)
>>> lines = list(demo_lines(demo))
>>> json.loads(lines[0])["kind"], len(lines) == len(demo.steps) + 1
('demo', True)
>>> again = demos_from_lines(lines, "demos.jsonl")[0]
>>> again.steps == demo.steps and again.ordering == demo.ordering and again.truth == demo.truth
True
"""
from __future__ import annotations
from contextlib import contextmanager
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Mapping, Sequence
import csv
import json
import logging
import os
import numpy as np
import tomlkit
from tomlkit.exceptions import TOMLKitError
from engine.geometry_types import Pose4
from engine.scenario import ConfigError, reject_leftovers, take_key
from engine.world import (Action, Corner, GoalSource, GoalSpec, Observation, Posture,
                          ToteMembership)
from .annotation import AnnotatedDemo, DatasetStats, Demonstration, SegmentMarker, Step, Window
from .selector import ProgressTrajectory, SequenceLibrary

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "{:.6f}"


class FormatError(Exception):
    """A file does not parse or does not match its schema."""


@contextmanager
def atomic_output(path: Path, binary: bool = False) -> Iterator[IO[Any]]:
    """Open a temporary sibling of 'path' and rename it over 'path' once the block succeeds.

    >>> import tempfile
    >>> with tempfile.TemporaryDirectory() as tmp:
    ...     target = Path(tmp) / "out.txt"
    ...     try:
    ...         with atomic_output(target) as stream:
    ...             _ = stream.write("half")
    ...             raise RuntimeError("interrupted")
    ...     except RuntimeError:
    ...         pass
    ...     sorted(p.name for p in Path(tmp).iterdir())
    []
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    stream: IO[Any] = (open(tmp, "wb") if binary  # pylint: disable=consider-using-with
                       else open(tmp, "w", encoding="utf-8", newline=""))
    try:
        with stream:
            yield stream
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    log.debug("Wrote %s", path)


def write_text(path: Path, text: str) -> None:
    """Atomically replace a text file."""
    with atomic_output(path) as stream:
        stream.write(text)


def read_text(path: Path) -> str:
    """Read a UTF-8 text file."""
    return path.read_text(encoding="utf-8")


# ---------------------------------------------------------------------------------------------
# Demonstrations
# ---------------------------------------------------------------------------------------------

def _goal_record(goal: GoalSpec) -> dict[str, Any]:
    return {"corner": goal.corner.code, "target": list(goal.target_pose.as_tuple()),
            "source": goal.source.name.lower()}


def _goal_from(record: Any) -> GoalSpec:
    table = dict(record)
    goal = GoalSpec(corner=Corner.from_code(take_key(table, "corner", str, None)),
                    target_pose=Pose4.from_tuple(take_key(table, "target", list, None)),
                    source=GoalSource[take_key(table, "source", str, "language").upper()])
    reject_leftovers(table, "goal")
    return goal


def _window_record(window: Window) -> list[Any]:
    return [window.start, window.end, [None if s is None else list(s) for s in window.segments]]


def _window_from(record: Any) -> Window:
    start, end, segments = record
    return Window(start=int(start), end=int(end),
                  segments=tuple(None if s is None else (int(s[0]), int(s[1])) for s in segments))


def _windows_record(windows: Mapping[int, Window]) -> dict[str, Any]:
    return {str(skill): _window_record(w) for skill, w in sorted(windows.items())}


def _windows_from(record: Any) -> dict[int, Window]:
    return {int(skill): _window_from(w) for skill, w in dict(record).items()}


def demo_header(demo: Demonstration, kind: str = "demo") -> dict[str, Any]:
    """First line of a demo block."""
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "scenario": demo.scenario,
            "seed": demo.seed, "ordering": list(demo.ordering), "goal": _goal_record(demo.goal),
            "truth": _windows_record(demo.truth)}


def step_record(step: Step) -> dict[str, Any]:
    """One step as a JSON object."""
    obs = step.observation
    action = step.action
    marker = step.marker
    return {"tick": obs.tick,
            "robot": list(obs.robot.as_tuple()),
            "suction_on": obs.suction_on,
            "object": list(obs.object_pose.as_tuple()),
            "size": list(obs.object_size),
            "posture": obs.posture.code,
            "attached": obs.attached,
            "contact": obs.contact,
            "tote": obs.tote.name.lower(),
            "goal": obs.goal_corner.code,
            "action": list(action.target.as_tuple()),
            "suction": action.suction,
            "segment_marker": None if marker is None else [marker.skill, marker.segment]}


def step_from(record: Mapping[str, Any]) -> Step:
    """Inverse of step_record.

    >>> step_from({"tick": 0, "posture": "tilted"})
    Traceback (most recent call last):
    ...
    ValueError: Unknown posture 'tilted': expected one of flat, leaning, standing
    """
    table = dict(record)
    tick = take_key(table, "tick", int, None)
    if tick is None:
        raise KeyError("tick")
    posture = Posture.from_code(take_key(table, "posture", str, ""))
    size = take_key(table, "size", list, None)
    observation = Observation(
            tick=tick,
            robot=Pose4.from_tuple(take_key(table, "robot", list, None)),
            suction_on=take_key(table, "suction_on", bool, None),
            object_pose=Pose4.from_tuple(take_key(table, "object", list, None)),
            object_size=(float(size[0]), float(size[1]), float(size[2])),
            posture=posture,
            attached=take_key(table, "attached", bool, None),
            contact=take_key(table, "contact", bool, None),
            tote=ToteMembership[take_key(table, "tote", str, None).upper()],
            goal_corner=Corner.from_code(take_key(table, "goal", str, None)))
    action = Action(target=Pose4.from_tuple(take_key(table, "action", list, None)),
                    suction=take_key(table, "suction", int, 0))
    marker = take_key(table, "segment_marker", (list, type(None)), None)
    for extra in ("progress", "suction_dilated"):
        table.pop(extra, None)
    reject_leftovers(table, "step")
    return Step(observation=observation, action=action,
                marker=None if marker is None else SegmentMarker(int(marker[0]), int(marker[1])))


def demo_lines(demo: Demonstration) -> Iterator[str]:
    """JSONL lines of one demo block."""
    yield json.dumps(demo_header(demo))
    for step in demo.steps:
        yield json.dumps(step_record(step))


def _annotated_lines(annotated: AnnotatedDemo) -> Iterator[str]:
    demo = annotated.demo
    header = demo_header(demo, kind="annotated")
    header["windows"] = _windows_record(annotated.windows)
    header["alpha"] = {str(skill): a for skill, a in sorted(annotated.alpha.items())}
    yield json.dumps(header)
    for step, row, suction in zip(demo.steps, annotated.progress, annotated.suction_dilated):
        record = step_record(step)
        record["progress"] = [float(v) for v in row]
        record["suction_dilated"] = suction
        yield json.dumps(record)


Numbered = tuple[int, dict[str, Any]]


def _blocks(lines: Iterable[str], where: str
            ) -> Iterator[tuple[dict[str, Any], list[Numbered], int]]:
    """Split JSONL into (header, (line number, step record) pairs, header line number) blocks."""
    header: dict[str, Any] | None = None
    header_line = 0
    records: list[Numbered] = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as err:
            raise FormatError(f"{where}:{number}: not JSON: {err.msg}") from err
        if not isinstance(record, dict):
            raise FormatError(f"{where}:{number}: expected a JSON object")
        if "kind" in record:
            if header is not None:
                yield header, records, header_line
            if record.get("schema_version") != SCHEMA_VERSION:
                raise FormatError(f"{where}:{number}: schema_version must be {SCHEMA_VERSION}")
            header, header_line, records = record, number, []
        elif header is None:
            raise FormatError(f"{where}:{number}: step line before any demo header")
        else:
            records.append((number, record))
    if header is not None:
        yield header, records, header_line


def _steps_from(records: Sequence[Numbered], where: str) -> tuple[Step, ...]:
    steps = []
    for number, record in records:
        try:
            steps.append(step_from(record))
        except (ConfigError, KeyError, TypeError, ValueError, AttributeError) as err:
            raise FormatError(f"{where}:{number}: bad step: {err}") from err
    return tuple(steps)


def _demo_from(header: Mapping[str, Any], records: Sequence[Numbered],
               where: str) -> Demonstration:
    return Demonstration(steps=_steps_from(records, where),
                         ordering=tuple(int(s) for s in header["ordering"]),
                         goal=_goal_from(header["goal"]),
                         scenario=str(header.get("scenario", "")),
                         seed=int(header.get("seed", 0)),
                         truth=_windows_from(header.get("truth", {})))


def demos_from_lines(lines: Iterable[str], where: str) -> list[Demonstration]:
    """Parse a demo dataset. Errors name 'where' and the line.

    >>> demos_from_lines(['{"tick": 0}'], "demos.jsonl")
    Traceback (most recent call last):
    ...
    skillkit.formats.FormatError: demos.jsonl:1: step line before any demo header

    A step that does not parse is cited by its own line, not by its block's header:
    >>> from engine.scenario import ScenarioConfig
    >>> from skillkit.skills import default_bank, generate_demo
    >>> demo = generate_demo(default_bank(), [1, 2, 3], ScenarioConfig(), seed=1)
    >>> lines = list(demo_lines(demo))
    >>> broken = json.loads(lines[2]) | {"tick": "x"}
    >>> demos_from_lines(lines[:2] + [json.dumps(broken)] + lines[3:], "demos.jsonl")
    Traceback (most recent call last):
    ...
    skillkit.formats.FormatError: demos.jsonl:3: bad step: tick: expected <class 'int'>, got 'x'
    """
    demos = []
    for header, records, number in _blocks(lines, where):
        try:
            demos.append(_demo_from(header, records, where))
        except (ConfigError, KeyError, TypeError, ValueError) as err:
            raise FormatError(f"{where}:{number}: bad demo block: {err}") from err
    return demos


def write_demos(path: Path, demos: Iterable[Demonstration]) -> None:
    """Write a demo dataset."""
    with atomic_output(path) as stream:
        for demo in demos:
            for line in demo_lines(demo):
                stream.write(line + "\n")


def read_demos(path: Path) -> list[Demonstration]:
    """Read a demo dataset. Annotated datasets read as their plain demos."""
    with open(path, encoding="utf-8") as stream:
        return demos_from_lines(stream, str(path))


def write_annotated(path: Path, annotated: Iterable[AnnotatedDemo]) -> None:
    """Write an annotated dataset."""
    with atomic_output(path) as stream:
        for labeled in annotated:
            for line in _annotated_lines(labeled):
                stream.write(line + "\n")


def annotated_from_lines(lines: Iterable[str], where: str) -> list[AnnotatedDemo]:
    """Parse an annotated dataset."""
    result = []
    for header, records, number in _blocks(lines, where):
        if header.get("kind") != "annotated":
            raise FormatError(f"{where}:{number}: expected an annotated demo, "
                              f"got kind {header.get('kind')!r}")
        try:
            demo = _demo_from(header, records, where)
            progress = np.array([r["progress"] for _, r in records], dtype=np.float64)
            if progress.ndim != 2:
                raise ValueError("progress rows differ in length")
            result.append(AnnotatedDemo(
                    demo=demo,
                    windows=_windows_from(header["windows"]),
                    alpha={int(s): float(a) for s, a in dict(header["alpha"]).items()},
                    progress=progress,
                    suction_dilated=tuple(int(r["suction_dilated"]) for _, r in records)))
        except (ConfigError, KeyError, TypeError, ValueError) as err:
            raise FormatError(f"{where}:{number}: bad annotated block: {err}") from err
    return result


def read_annotated(path: Path) -> list[AnnotatedDemo]:
    """Read an annotated dataset."""
    with open(path, encoding="utf-8") as stream:
        return annotated_from_lines(stream, str(path))


# ---------------------------------------------------------------------------------------------
# TOML
# ---------------------------------------------------------------------------------------------

def _parse_toml(text: str, where: str) -> dict[str, Any]:
    try:
        data = tomlkit.parse(text).unwrap()
    except TOMLKitError as err:
        raise FormatError(f"{where}: not valid TOML: {err}") from err
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise FormatError(f"{where}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    return data


def stats_to_toml(stats: DatasetStats) -> str:
    """Serialize DatasetStats.

    >>> stats = DatasetStats(n_skills=2, max_duration={0: 40, 1: 90},
    ...                      segment_durations={0: (30,), 1: (20, 50)})
    >>> back = stats_from_toml(stats_to_toml(stats))
    >>> back == stats
    True
    """
    doc = tomlkit.document()
    doc["schema_version"] = SCHEMA_VERSION
    doc["n_skills"] = stats.n_skills
    skills = tomlkit.aot()
    for skill in sorted(stats.max_duration):
        entry = tomlkit.table()
        entry["id"] = skill
        entry["max_duration"] = stats.max_duration[skill]
        entry["segment_durations"] = list(stats.segment_durations[skill])
        skills.append(entry)
    doc["skills"] = skills
    return tomlkit.dumps(doc)


def stats_from_toml(text: str, where: str = "stats") -> DatasetStats:
    """Parse DatasetStats."""
    data = _parse_toml(text, where)
    try:
        n_skills = take_key(data, "n_skills", int, None)
        max_duration: dict[int, int] = {}
        segment_durations: dict[int, tuple[int, ...]] = {}
        for entry in take_key(data, "skills", list, []):
            table = dict(entry)
            skill = take_key(table, "id", int, None)
            max_duration[skill] = take_key(table, "max_duration", int, None)
            segment_durations[skill] = tuple(int(d) for d in
                                             take_key(table, "segment_durations", list, None))
            reject_leftovers(table, "skills")
        reject_leftovers(data, where)
        return DatasetStats(n_skills=n_skills, max_duration=max_duration,
                            segment_durations=segment_durations)
    except (ConfigError, TypeError, ValueError) as err:
        raise FormatError(f"{where}: {err}") from err


def library_to_toml(library: SequenceLibrary) -> str:
    """Serialize a SequenceLibrary.

    >>> from skillkit.selector import build_trajectory_map
    >>> lib = build_trajectory_map([[0, 1], [1, 0]], [0.25, 0.5], [(1.0,), (0.75, 1.0)],
    ...                            start_alphas=[[0.25, 0.5], [0.125, 0.375]])
    >>> back = library_from_toml(library_to_toml(lib))
    >>> back.orderings, back.alphas, back.bounds
    (((0, 1), (1, 0)), (0.25, 0.5), ((1.0,), (0.75, 1.0)))
    >>> all(np.array_equal(a.vertices, b.vertices)
    ...     for a, b in zip(lib.trajectories, back.trajectories))
    True
    """
    doc = tomlkit.document()
    doc["schema_version"] = SCHEMA_VERSION
    doc["alphas"] = [float(a) for a in library.alphas]
    doc["bounds"] = [[float(b) for b in bounds] for bounds in library.bounds]
    trajectories = tomlkit.aot()
    for trajectory in library.trajectories:
        entry = tomlkit.table()
        entry["ordering"] = list(trajectory.ordering)
        entry["vertices"] = [[float(v) for v in row] for row in trajectory.vertices]
        trajectories.append(entry)
    doc["trajectories"] = trajectories
    return tomlkit.dumps(doc)


def library_from_toml(text: str, where: str = "library") -> SequenceLibrary:
    """Parse a SequenceLibrary."""
    data = _parse_toml(text, where)
    try:
        alphas = tuple(float(a) for a in take_key(data, "alphas", list, None))
        bounds = tuple(tuple(float(b) for b in row) for row in take_key(data, "bounds", list, None))
        trajectories = []
        for entry in take_key(data, "trajectories", list, []):
            table = dict(entry)
            trajectories.append(ProgressTrajectory(
                    ordering=tuple(int(s) for s in take_key(table, "ordering", list, None)),
                    vertices=np.array(take_key(table, "vertices", list, None), dtype=np.float64)))
            reject_leftovers(table, "trajectories")
        reject_leftovers(data, where)
        return SequenceLibrary(trajectories=tuple(trajectories), alphas=alphas, bounds=bounds)
    except (ConfigError, TypeError, ValueError) as err:
        raise FormatError(f"{where}: {err}") from err


def library_rows(library: SequenceLibrary) -> Iterator[list[str]]:
    """CSV rows (trajectory, ordering, vertex, rho_1..rho_N) of every vertex."""
    for index, trajectory in enumerate(library.trajectories):
        ordering = " ".join(str(s) for s in trajectory.ordering)
        for vertex, row in enumerate(trajectory.vertices):
            yield [str(index), ordering, str(vertex)] + [FLOAT_FORMAT.format(v) for v in row]


STAGES = ("scenario", "demos", "annotated", "stats", "estimator", "library")


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class RunManifest:
    """Where the artifacts of one pipeline live.

    updated is the only field that changes between identical runs.

    >>> m = RunManifest(seed=7, out_dir=Path("out")).recorded("demos", Path("out/demos.jsonl"))
    >>> m.demos
    PosixPath('out/demos.jsonl')
    >>> back = manifest_from_toml(manifest_to_toml(m))
    >>> back == m
    True
    >>> m.require("library")
    Traceback (most recent call last):
    ...
    skillkit.formats.FormatError: The manifest has no library: run the step that builds it first
    """
    seed:       int = 0
    out_dir:    Path = Path("out")
    scenario:   Path | None = None
    demos:      Path | None = None
    annotated:  Path | None = None
    stats:      Path | None = None
    estimator:  Path | None = None
    library:    Path | None = None
    updated:    str = ""

    def recorded(self, stage: str, path: Path) -> RunManifest:
        """Copy with 'stage' pointing at 'path' and a fresh timestamp."""
        if stage not in STAGES:
            raise ValueError(f"Unknown manifest stage {stage!r}")
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return replace(self, updated=stamp, **{stage: path})

    def require(self, stage: str) -> Path:
        """Path of a stage's artifact. It must be recorded and exist."""
        path: Path | None = getattr(self, stage)
        if path is None:
            raise FormatError(f"The manifest has no {stage}: run the step that builds it first")
        if not path.exists():
            raise FormatError(f"The manifest's {stage} file {path} does not exist")
        return path


def manifest_to_toml(manifest: RunManifest) -> str:
    """Serialize a RunManifest."""
    doc = tomlkit.document()
    doc["schema_version"] = SCHEMA_VERSION
    doc["seed"] = manifest.seed
    doc["out_dir"] = str(manifest.out_dir)
    header = tomlkit.table()
    header["updated"] = manifest.updated
    doc["header"] = header
    paths = tomlkit.table()
    for stage in STAGES:
        value = getattr(manifest, stage)
        if value is not None:
            paths[stage] = str(value)
    doc["paths"] = paths
    return tomlkit.dumps(doc)


def manifest_from_toml(text: str, where: str = "manifest") -> RunManifest:
    """Parse a RunManifest."""
    data = _parse_toml(text, where)
    try:
        header = dict(take_key(data, "header", dict, {}))
        updated = take_key(header, "updated", str, "")
        reject_leftovers(header, "header")
        paths = dict(take_key(data, "paths", dict, {}))
        recorded = {stage: Path(take_key(paths, stage, str, None))
                    for stage in STAGES if stage in paths}
        reject_leftovers(paths, "paths")
        manifest = RunManifest(seed=take_key(data, "seed", int, 0),
                               out_dir=Path(take_key(data, "out_dir", str, "out")),
                               updated=updated, **recorded)
        reject_leftovers(data, where)
        return manifest
    except ConfigError as err:
        raise FormatError(f"{where}: {err}") from err


def read_manifest(path: Path) -> RunManifest:
    """Read manifest.toml."""
    return manifest_from_toml(read_text(path), str(path))


def write_manifest(path: Path, manifest: RunManifest) -> None:
    """Write manifest.toml."""
    write_text(path, manifest_to_toml(manifest))


# ---------------------------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------------------------

def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    """Write a CSV table with '\\n' line endings."""
    with atomic_output(path) as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path: Path) -> list[dict[str, str]]:
    """Rows of a CSV table keyed by the header."""
    with open(path, encoding="utf-8", newline="") as stream:
        return list(csv.DictReader(stream))
