"""Shared fixtures: planted datasets and cached end-to-end runs over five seeds.

The end-to-end runs are expensive (seconds each), so they are computed once
per session and shared by the acceptance suite and the module tests that make
claims about planted data.
"""

from __future__ import annotations

import re
import time
from dataclasses import replace

import pytest

from genepanel.expr import normalize
from genepanel.prefilter import prefilter_pipeline
from genepanel.selection import SelectConfig, ablation_run, run_selection
from genepanel.synth import SynthConfig, generate_planted

SEEDS = (1, 2, 3, 4, 5)
PLANTED = SynthConfig(n_cells=300, n_genes=200, n_informative=30, n_clusters=4, effect_size=2.0)

_acceptance = {}


class PlantedCase:
    """One planted dataset with lazily computed pipeline runs."""

    def __init__(self, seed: int):
        self.seed = seed
        self.data = generate_planted(replace(PLANTED, seed=seed))
        self.m = normalize(self.data.matrix)
        self.prefilter = prefilter_pipeline(self.m)
        self.cfg = SelectConfig(master_seed=seed)
        self._runs = {}

    def run(self, key: str = "full"):
        if key not in self._runs:
            t0 = time.perf_counter()
            if key == "full":
                result = run_selection(self.m, self.prefilter, self.cfg)
            elif key in ("-r", "-k"):
                result = ablation_run(self.m, key, self.cfg, prefilter=self.prefilter)
            elif key.startswith("lambda="):
                lam = float(key.split("=", 1)[1])
                result = run_selection(self.m, self.prefilter, replace(self.cfg, lam=lam))
            else:
                raise KeyError(key)
            self._runs[key] = (result, time.perf_counter() - t0)
        return self._runs[key][0]

    def runtime(self, key: str = "full") -> float:
        self.run(key)
        return self._runs[key][1]


@pytest.fixture(scope="session")
def planted_cases():
    return [PlantedCase(seed) for seed in SEEDS]


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    props = dict(report.user_properties)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[number] = (report.outcome, props.get("detail", ""), props.get("table"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        outcome, detail, table = _acceptance[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {detail}")
        if table:
            for line in table.splitlines():
                terminalreporter.write_line("    " + line)
