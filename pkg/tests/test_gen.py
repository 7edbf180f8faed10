import io
import json

import pytest

import util
from sysflow.gen import PROFILES, generate, write_raw
from sysflow.ingest import read_raw_stream


def test_profiles_registry():
    assert set(PROFILES) == {"attack_table2", "db", "web", "threads"}


def test_unknown_profile():
    with pytest.raises(ValueError, match="unknown profile"):
        list(generate("nope"))


@pytest.mark.parametrize("profile,params", [
    ("attack_table2", {}),
    ("db", {"n_ops": 500}),
    ("web", {"n_conns": 30}),
    ("threads", {"n_threads": 40}),
])
def test_output_is_deterministic(profile, params):
    a = util.gen_lines(profile, seed=5, **params)
    b = util.gen_lines(profile, seed=5, **params)
    assert a == b


@pytest.mark.parametrize("profile,params", [
    ("db", {"n_ops": 500}),
    ("threads", {"n_threads": 40}),
])
def test_seed_changes_rng_profiles(profile, params):
    assert util.gen_lines(profile, seed=1, **params) != util.gen_lines(profile, seed=2, **params)


def test_attack_profile_ignores_seed():
    assert util.gen_lines("attack_table2", seed=1) == util.gen_lines("attack_table2", seed=2)


@pytest.mark.parametrize("profile,params", [
    ("attack_table2", {}),
    ("db", {"n_ops": 2000, "duration_s": 10}),
    ("web", {"n_conns": 50, "tid_handoff": 3}),
    ("threads", {"n_threads": 60}),
])
def test_raw_streams_are_parseable_and_ordered(profile, params):
    lines = util.gen_lines(profile, seed=3, **params)
    events = list(read_raw_stream(io.StringIO("\n".join(lines) + "\n")))
    assert len(events) == len(lines)


@pytest.mark.parametrize("profile,params", [
    ("attack_table2", {}),
    ("db", {"n_ops": 2000, "duration_s": 10}),
    ("web", {"n_conns": 50, "tid_handoff": 2}),
    ("threads", {"n_threads": 60}),
])
def test_no_orphan_fds_in_generated_traces(profile, params):
    lines = util.gen_lines(profile, seed=3, **params)
    util.aggregate_lines(lines, orphan_fd="fail")  # must not raise


def test_attack_trace_event_count():
    assert len(util.gen_lines("attack_table2")) == 291


def test_web_event_count_scales_with_connections():
    for n in (0, 1, 13):
        lines = util.gen_lines("web", n_conns=n)
        assert len(lines) == 5 * n + 1  # accept/recv/send/shutdown/close + exit


def test_threads_event_count():
    for n in (0, 1, 25):
        lines = util.gen_lines("threads", n_threads=n)
        assert len(lines) == 2 * n + 2  # execve + clone/exit pairs + main exit


def test_db_event_count():
    # one open, then the I/O ops; the handle is never closed
    lines = util.gen_lines("db", n_ops=100)
    assert len(lines) == 100 + 1


@pytest.mark.parametrize("profile,params", [
    ("db", {"n_ops": -1}),
    ("db", {"duration_s": 0}),
    ("web", {"n_conns": -2}),
    ("web", {"tid_handoff": 0}),
    ("web", {"tid_handoff": 4}),
    ("threads", {"n_threads": -1}),
])
def test_bad_params_rejected(profile, params):
    with pytest.raises(ValueError):
        list(generate(profile, **params))


def test_attack_container_fields():
    first = json.loads(util.gen_lines("attack_table2")[0])
    assert first["container_id"] == "7f3a9c41e8b2"
    assert first["container_name"] == "node-js"
    assert first["container_image"] == "node:12"


def test_write_raw_counts_lines():
    buf = io.StringIO()
    n = write_raw(generate("threads", n_threads=3), buf)
    lines = [l for l in buf.getvalue().splitlines() if l]
    assert n == len(lines) == 8
