import pytest

import util


@pytest.fixture(scope="session")
def attack_lines():
    return util.gen_lines("attack_table2")


@pytest.fixture(scope="session")
def attack_records(attack_lines):
    return util.aggregate_lines(attack_lines)


@pytest.fixture(scope="session")
def db_lines():
    return util.gen_lines("db", seed=7)


@pytest.fixture(scope="session")
def web_lines():
    return util.gen_lines("web", seed=7)


@pytest.fixture(scope="session")
def threads_lines():
    return util.gen_lines("threads", seed=7)
