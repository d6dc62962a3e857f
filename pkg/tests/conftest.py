# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import numpy as np
import pytest

from hireindex.datasets import gen_synthetic
from hireindex.hookspecs import hookimpl, pm


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run the desk-scale acceptance checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small():
    "Parameters of a small index that splits, merges and recalibrates often."
    return {"f": 16, "background_worker": False}


@pytest.fixture(scope="session")
def uniform_keys():
    return gen_synthetic("uniform", 20_000, 3)


@pytest.fixture(scope="session")
def segmented_keys():
    return gen_synthetic("segmented", 20_000, 7)


class JobRecorder:
    def __init__(self):
        self.published = []
        self.errors = []

    @hookimpl
    def on_job_published(self, engine, job, elapsed):
        self.published.append((engine, job, elapsed))

    @hookimpl
    def on_job_error(self, engine, job, error):
        self.errors.append((engine, job, error))


@pytest.fixture
def jobs():
    recorder = JobRecorder()
    pm.register(recorder)
    try:
        yield recorder
    finally:
        pm.unregister(recorder)
