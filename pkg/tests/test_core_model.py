"""Models, schedules, ensembles, sampling, enumeration, and the block
increment transform."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import staged_select as ss
from staged_select.errors import (
    ConfigInvalid,
    DimensionMismatch,
    EnumerationTooLarge,
    InvalidDimensions,
    LastSizeNotOne,
    LastTimeNotT,
    NonDecreasingSizes,
    NonMonotoneTimes,
    SizesExceedN,
)

INSTANCE_A = (ss.rademacher(1), ss.validate_schedule([1, 2], [2, 1], N=3, T=2))


# --- models ----------------------------------------------------------------

def test_discrete_probs_must_sum_to_one():
    with pytest.raises(ConfigInvalid):
        ss.discrete([1, -1], ["1/2", "1/3"])


def test_discrete_rejects_duplicate_support():
    with pytest.raises(ConfigInvalid):
        ss.discrete([1, 1], ["1/2", "1/2"])


def test_discrete_rejects_zero_prob():
    with pytest.raises(ConfigInvalid):
        ss.discrete([1, -1, 0], ["1/2", "1/2", "0"])


def test_uniform_requires_lo_below_hi():
    with pytest.raises(ConfigInvalid):
        ss.uniform(1.0, 1.0)


def test_gaussian_allows_zero_stddev():
    assert ss.gaussian(0, 0).stddev == 0.0


def test_rademacher_as_discrete_is_exact():
    d = ss.rademacher(1).as_discrete()
    assert d.support == (Fraction(1), Fraction(-1))
    assert sum(d.probs) == 1


def test_drift_model_is_flagged_dependent():
    m = ss.drift_model(ss.gaussian(0, 1), [1, -1], ["1/2", "1/2"])
    assert not m.independent_increments
    assert ss.gaussian(0, 1).independent_increments


def test_drift_probs_validated():
    with pytest.raises(ConfigInvalid):
        ss.drift_model(ss.gaussian(0, 1), [1], ["1/2"])


# --- schedule --------------------------------------------------------------

def test_schedule_ok():
    s = ss.validate_schedule([1, 2], [2, 1], N=3, T=2)
    assert s.times == (1, 2) and s.sizes == (2, 1)
    assert s.block_bounds() == ((0, 1), (1, 2))


@pytest.mark.parametrize(
    "times,sizes,N,T,err",
    [
        ([1, 2], [2, 2], 3, 2, NonDecreasingSizes),
        ([1, 3], [2, 1], 3, 2, LastTimeNotT),
        ([2, 1], [2, 1], 3, 2, NonMonotoneTimes),
        ([0, 2], [2, 1], 3, 2, NonMonotoneTimes),
        ([1, 2], [2, 0], 3, 2, NonDecreasingSizes),
        ([1, 2], [3, 2], 3, 2, LastSizeNotOne),
        ([1, 2], [3, 1], 3, 2, SizesExceedN),
        ([], [], 3, 2, InvalidDimensions),
        ([1, 2], [2], 3, 2, InvalidDimensions),
    ],
)
def test_schedule_violations_named(times, sizes, N, T, err):
    with pytest.raises(err):
        ss.validate_schedule(times, sizes, N, T)


def test_degenerate_single_stage_schedule_is_legal():
    s = ss.validate_schedule([4], [1], N=2, T=4)
    assert s.stages == 1


# --- ensembles and the increment transform ---------------------------------

def test_paths_start_at_zero_and_stay_consistent():
    x = ss.PathEnsemble.from_increment_rows([[1, -1], [2, 0]])
    assert all(row[0] == 0 for row in x.values)
    assert x.values == ((0, 1, 0), (0, 2, 2))


def test_from_value_rows_requires_zero_start():
    with pytest.raises(InvalidDimensions):
        ss.PathEnsemble.from_value_rows([[1, 2]])


def test_to_increments_zero_ensemble():
    _, s = INSTANCE_A
    x = ss.PathEnsemble.from_increment_rows([[0, 0]] * 3)
    b = ss.to_increments(x, s)
    assert all(all(v == 0 for v in row) for block in b.blocks for row in block)


def test_to_increments_telescopes():
    _, s = INSTANCE_A
    x = ss.PathEnsemble.from_value_rows([[0, 0, 0], [0, 1, 0], [0, 2, 4]])
    b = ss.to_increments(x, s)
    assert b.blocks[0][1] == (1,)
    assert b.blocks[1][1] == (-1,)
    assert ss.from_increments(b, s).values[1] == (0, 1, 0)


def test_increment_round_trip_exact_for_floats():
    _, s = INSTANCE_A
    rng = np.random.default_rng(5)
    x = ss.PathEnsemble.from_increment_rows(rng.standard_normal((3, 2)).tolist())
    assert ss.from_increments(ss.to_increments(x, s), s) == x


def test_dimension_mismatch_detected():
    _, s = INSTANCE_A
    x = ss.PathEnsemble.from_increment_rows([[1, -1]] * 4)
    with pytest.raises(DimensionMismatch):
        ss.to_increments(x, s)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_round_trip_property(data):
    N = data.draw(st.integers(2, 5), label="N")
    T = data.draw(st.integers(2, 6), label="T")
    rows = data.draw(st.lists(
        st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=T, max_size=T),
        min_size=N, max_size=N,
    ), label="rows")
    stages = data.draw(st.integers(1, min(2, T - 1, N - 1)), label="stages")
    sizes = list(range(stages, 0, -1))
    times = list(range(T - stages + 1, T + 1))
    s = ss.validate_schedule(times, sizes, N=N, T=T)
    x = ss.PathEnsemble.from_increment_rows(rows)
    assert ss.from_increments(ss.to_increments(x, s), s) == x


# --- sampling --------------------------------------------------------------

def test_zero_variance_model_gives_zero_paths():
    x = ss.sample_ensemble(ss.gaussian(0, 0), N=2, T=3, seed=7)
    assert all(v == 0 for row in x.values for v in row)


def test_sampling_is_deterministic():
    a = ss.sample_ensemble(ss.gaussian(0, 1), N=4, T=5, seed=42)
    b = ss.sample_ensemble(ss.gaussian(0, 1), N=4, T=5, seed=42)
    assert a == b
    c = ss.sample_ensemble(ss.gaussian(0, 1), N=4, T=5, seed=43)
    assert a != c


def test_rademacher_parity():
    x = ss.sample_ensemble(ss.rademacher(1), N=2, T=4, seed=3)
    for row in x.values:
        for t, v in enumerate(row):
            assert abs(v) <= t
            assert int(v) % 2 == t % 2


def test_sample_rejects_bad_dimensions():
    with pytest.raises(InvalidDimensions):
        ss.sample_ensemble(ss.gaussian(0, 1), N=1, T=3, seed=0)
    with pytest.raises(InvalidDimensions):
        ss.sample_ensemble(ss.gaussian(0, 1), N=2, T=0, seed=0)


def test_drift_sampling_adds_persistent_shift():
    m = ss.drift_model(ss.gaussian(0, 0), [3], ["1"])
    x = ss.sample_ensemble(m, N=2, T=3, seed=1)
    assert x.values[0] == (0, 3, 6, 9)


def test_replication_chunks_are_schedule_independent():
    m = ss.gaussian(0, 1)
    one = np.concatenate([inc for _, inc in ss.sample_replications(m, 3, 2, 10, seed=9)])
    two = np.concatenate([inc for _, inc in ss.sample_replications(m, 3, 2, 7000, seed=9)])
    assert np.array_equal(one, two[:10])


# --- enumeration -----------------------------------------------------------

def test_enumeration_counts_and_probabilities():
    model, _ = INSTANCE_A
    atoms = ss.enumerate_paths(model, 3, 2)
    assert len(atoms) == 64
    assert all(p == Fraction(1, 64) for _, p in atoms)
    assert sum(p for _, p in atoms) == 1
    keys = {x.key() for x, _ in atoms}
    assert len(keys) == 64


def test_enumeration_degenerate_support():
    atoms = ss.enumerate_paths(ss.discrete([0], ["1"]), 2, 2)
    assert len(atoms) == 1
    assert atoms[0][1] == 1


def test_enumeration_cap():
    with pytest.raises(EnumerationTooLarge):
        ss.enumerate_paths(ss.rademacher(1), 4, 4, cap=100)


def test_enumeration_sum_with_uneven_probs():
    atoms = ss.enumerate_paths(ss.discrete([1, 0, -2], ["1/2", "1/3", "1/6"]), 2, 2)
    assert sum(p for _, p in atoms) == 1


# --- JSON configuration ----------------------------------------------------

def test_model_config_round_trip():
    doc = {"kind": "discrete", "support": [1, -1], "probs": ["1/2", "1/2"]}
    m = ss.model_from_config(doc)
    assert ss.model_to_config(m) == doc
    d = {"kind": "drift", "base": {"kind": "rademacher", "scale": 10},
         "drift_support": [1, -1], "drift_probs": ["1/2", "1/2"]}
    assert ss.model_to_config(ss.model_from_config(d)) == d


def test_model_config_rejects_unknown_key():
    with pytest.raises(ConfigInvalid, match="model.scale"):
        ss.model_from_config({"kind": "gaussian", "mean": 0, "stddev": 1, "scale": 2})


def test_schedule_config_round_trip():
    doc = {"times": [1, 2], "sizes": [2, 1], "N": 3, "T": 2}
    s = ss.schedule_from_config(doc)
    assert ss.schedule_to_config(s) == doc


def test_schedule_config_missing_key_names_path():
    with pytest.raises(ConfigInvalid, match="schedule.sizes"):
        ss.schedule_from_config({"times": [1, 2], "N": 3, "T": 2})
