#!/usr/bin/env python3
# vim: set fileencoding=utf-8 :
"""Share the state of one command-line session."""
from __future__ import annotations
import inspect
from dataclasses import replace
from pathlib import Path
from typing import Type, TypeVar, Any
from skillkit.formats import RunManifest, read_manifest, write_manifest
T = TypeVar("T")

MANIFEST_NAME = "manifest.toml"


def namespace(cls: Type[T]) -> Type[T]:
    """Class decorator to identify a Namespace Class (a class that cannot be instantiated).

    A Namespace Class is a class you never instantiate. It is simply for grouping data and functions
    together.

    Adding this decorator to a class overrides its `__init__()` method with a function that throws a
    RuntimeError if instantiation is attempted.

    Adding this decorator also provides the convenience function `state_str()` for printing the
    public class members.

    >>> @namespace
    ... class Pair:
    ...     left: int = 1
    ...     right: str = "r"
    >>> Pair.state_str()
    "Pair(left=1, right='r')"
    >>> Pair()
    Traceback (most recent call last):
    ...
    RuntimeError: Pair is a Namespace Class and cannot be instantiated.
    """

    def no_init(self: Any) -> None:
        """Prevent instantiation"""
        raise RuntimeError(f"{cls.__name__} is a Namespace Class and cannot be instantiated.")

    def state_str() -> str:
        """Return pretty string of public class members.

        Members omitted from this string:
        - beginning with an underscore
        - any methods, including classmethods and staticmethods
        """
        attrs = {
            k: v for k, v in cls.__dict__.items()
            if not k.startswith("_")
            and not inspect.isroutine(v)
            and not isinstance(v, (classmethod, staticmethod))
        }
        items = [f"{k}={v!r}" for k, v in attrs.items()]
        return f"{cls.__name__}({', '.join(items)})"

    setattr(cls, "__init__", no_init)
    setattr(cls, "state_str", state_str)
    return cls


@namespace
class Context:
    """Session context: the output directory, the base seed and the run manifest.

    Context is populated when a command starts. Commands record each artifact they write, and the
    manifest is saved next to the artifacts.

    >>> import tempfile
    >>> out = Path(tempfile.mkdtemp())
    >>> Context.open(out, seed=3)
    >>> Context.manifest.seed, Context.path("demos.jsonl") == out / "demos.jsonl"
    (3, True)
    >>> Context.record("demos", Context.path("demos.jsonl"))
    >>> (out / MANIFEST_NAME).exists()
    True

    Reopening picks the manifest up again, and the seed given on the command line wins:
    >>> Context.open(out, seed=5)
    >>> Context.manifest.demos == out / "demos.jsonl", Context.manifest.seed
    (True, 5)
    """
    out_dir: Path = Path("out")
    seed: int = 0
    manifest: RunManifest = RunManifest()

    @classmethod
    def open(cls, out_dir: Path, seed: int) -> None:
        """Load (or start) the manifest of 'out_dir'."""
        out_dir.mkdir(parents=True, exist_ok=True)
        cls.out_dir = out_dir
        cls.seed = seed
        manifest_path = out_dir / MANIFEST_NAME
        if manifest_path.exists():
            cls.manifest = replace(read_manifest(manifest_path), seed=seed)
        else:
            cls.manifest = RunManifest(seed=seed, out_dir=out_dir)

    @classmethod
    def path(cls, name: str) -> Path:
        """Where an artifact called 'name' goes."""
        return cls.out_dir / name

    @classmethod
    def record(cls, stage: str, path: Path) -> None:
        """Point the manifest's 'stage' at 'path' and save the manifest."""
        cls.manifest = cls.manifest.recorded(stage, path)
        cls.save()

    @classmethod
    def save(cls) -> None:
        """Write manifest.toml."""
        write_manifest(cls.out_dir / MANIFEST_NAME, cls.manifest)
