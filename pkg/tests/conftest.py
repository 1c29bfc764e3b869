"""Shared fixtures: stepped clock, simulated repositories, a review driver."""

from datetime import timedelta

import pytest

from config import Settings
from helpers import DATASET_FILES, ReviewDriver
from src.repository.simulated import simulated_repo
from src.review.engine import ReviewEngine
from src.utils.clock import DEFAULT_START, SteppedClock


@pytest.fixture
def clock():
    return SteppedClock(DEFAULT_START, timedelta(seconds=60))


@pytest.fixture
def make_repo(clock):
    """Build a simulated repository holding one registered dataset."""

    def _make(behavior="Faithful", files=None, dataset_id="ds-1"):
        repository, admin = simulated_repo(behavior, clock=clock)
        ref = admin.register(dataset_id, files or DATASET_FILES, persistent_id="doi:10.5555/ds-1")
        return repository, admin, ref

    return _make


@pytest.fixture
def engine(clock):
    return ReviewEngine(Settings(), clock=clock)


@pytest.fixture
def driver_for(engine, make_repo):
    """Driver over a fresh repository of the given behavior."""

    def _driver(behavior="Faithful", files=None):
        repository, admin, ref = make_repo(behavior, files)
        driver = ReviewDriver(engine, repository, ref)
        driver.repository = repository
        driver.admin = admin
        return driver

    return _driver
