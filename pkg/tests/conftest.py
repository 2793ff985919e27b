import pytest

from asympt import resolve_scenario, run_pipeline


@pytest.fixture(scope="session")
def sc3():
    return resolve_scenario("example3")


@pytest.fixture(scope="session")
def run3(sc3):
    return run_pipeline(sc3)


@pytest.fixture(scope="session")
def sc1():
    return resolve_scenario("example1")


@pytest.fixture(scope="session")
def run1(sc1):
    return run_pipeline(sc1)
