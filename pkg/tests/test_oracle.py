"""Streaming aggregator vs the buffered reference replayer.

The replayer recomputes flow windows from scratch with no incremental
state, so any agreement is structural rather than shared-code luck.
The full 20-seed sweep lives in the acceptance suite; this is the quick
version that runs with the unit tests.
"""

from collections import Counter

import pytest

import replayer
import util

NS = util.NS

PROFILE_PARAMS = [
    ("attack_table2", {}),
    ("db", {"n_ops": 800, "duration_s": 90}),
    ("web", {"n_conns": 40, "tid_handoff": 3}),
    ("threads", {"n_threads": 80}),
]


@pytest.mark.parametrize("profile,params", PROFILE_PARAMS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_replayer_equivalence(profile, params, seed):
    lines = util.gen_lines(profile, seed=seed, **params)
    streamed = util.aggregate_lines(lines)
    replayed = replayer.replay(lines, timeout_ns=30 * NS)
    assert Counter(streamed) == Counter(replayed)


def test_replayer_equivalence_short_timeout():
    # a 1s window forces heavy splitting in every profile
    for profile, params in PROFILE_PARAMS:
        lines = util.gen_lines(profile, seed=9, **params)
        streamed = util.aggregate_lines(lines, timeout_secs=1)
        replayed = replayer.replay(lines, timeout_ns=1 * NS)
        assert Counter(streamed) == Counter(replayed), profile


def test_replayer_disagrees_when_it_should():
    # sanity check that the comparison has teeth: a different timeout
    # must change the record multiset for a trace with idle gaps
    lines = util.gen_lines("db", seed=4, n_ops=800, duration_s=90)
    a = Counter(util.aggregate_lines(lines, timeout_secs=1))
    b = Counter(util.aggregate_lines(lines, timeout_secs=1000))
    assert a != b
