#!/usr/bin/env python3
# vim: set fileencoding=utf-8 :
"""Tote-world skill chaining.

* [x] Kinematic tote world: spawn, step, disturbances, postconditions
* [x] Scripted skills (flip, pick, pack, two-segment push) and demonstration generation
* [x] Progress labels: execution windows, alpha = 1 - t/M, segment bounds, suction dilation
* [x] Selection: single ordering, nearest trajectory over a sequence library
* [x] Estimators: geometric oracle, k-NN over annotated steps
* [x] Closed-loop runner, execution time, metrics tables and experiment grids
* [x] Command line: generate, annotate, fit, library, run, evaluate, export
* [ ] A spatial index behind KnnEstimator.nearest once datasets outgrow a linear scan

Run `main.py --help` or see README.md.
"""
import sys
from pathlib import Path
from engine.log import setup_logging
from src.app import App


log = setup_logging()


if __name__ == "__main__":
    # NOTE: The following MUST be in this __name__ == "__main__" block or unit tests will not run!
    log.debug("Run \"%s\"",
              Path()
              .joinpath(Path(__file__).parent.name)
              .joinpath(Path(__file__).name)
              )
    sys.exit(App.run())
