"""Monte Carlo estimation, paired comparison, and the dependence
experiment."""

import numpy as np
import pytest

import staged_select as ss
from staged_select.errors import ConfigInvalid, InvalidReps
from staged_select.experiments import _final_values_loop, final_values_for_chunk

MODEL_A = ss.rademacher(1)
SCHEDULE_A = ss.validate_schedule([1, 2], [2, 1], N=3, T=2)
GAUSS = ss.gaussian(0, 1)
SCHEDULE_G = ss.validate_schedule([2, 4, 8], [8, 4, 1], N=16, T=8)


# --- mc_estimate -------------------------------------------------------------

def test_mc_requires_two_reps():
    with pytest.raises(InvalidReps):
        ss.mc_estimate(MODEL_A, SCHEDULE_A, ss.greedy_strategy(), reps=1, seed=0)


def test_mc_zero_variance_model():
    r = ss.mc_estimate(ss.gaussian(0, 0), SCHEDULE_A, ss.greedy_strategy(),
                       reps=100, seed=0)
    assert r.mean == 0.0 and r.stderr == 0.0
    assert r.ci95 == (0.0, 0.0)


def test_mc_deterministic_given_seed():
    a = ss.mc_estimate(GAUSS, SCHEDULE_A, ss.greedy_strategy(), reps=5000, seed=3)
    b = ss.mc_estimate(GAUSS, SCHEDULE_A, ss.greedy_strategy(), reps=5000, seed=3)
    assert a == b
    c = ss.mc_estimate(GAUSS, SCHEDULE_A, ss.greedy_strategy(), reps=5000, seed=4)
    assert a.mean != c.mean


def test_mc_thread_count_never_changes_results():
    one = ss.mc_estimate(GAUSS, SCHEDULE_G, ss.greedy_strategy(),
                         reps=20_000, seed=5, threads=1)
    four = ss.mc_estimate(GAUSS, SCHEDULE_G, ss.greedy_strategy(),
                          reps=20_000, seed=5, threads=4)
    assert one == four


def test_mc_stderr_definition():
    r = ss.mc_estimate(GAUSS, SCHEDULE_A, ss.greedy_strategy(), reps=4096, seed=9)
    finals = final_values_for_chunk(
        ss.sample_chunk(GAUSS, 3, 2, seed=9, chunk_index=0), SCHEDULE_A,
        ss.greedy_strategy())
    assert r.mean == pytest.approx(float(np.mean(finals)))
    assert r.stderr == pytest.approx(float(np.std(finals, ddof=1)) / 64.0)
    assert r.ci95 == (r.mean - 1.96 * r.stderr, r.mean + 1.96 * r.stderr)


def test_mc_close_to_exact_value():
    r = ss.mc_estimate(MODEL_A, SCHEDULE_A, ss.greedy_strategy(),
                       reps=100_000, seed=12)
    assert abs(r.mean - 17 / 16) <= 4 * r.stderr


# --- batched engine ------------------------------------------------------------

@pytest.mark.parametrize("model,schedule", [
    (GAUSS, SCHEDULE_G),
    (MODEL_A, SCHEDULE_A),
    (ss.uniform(-1, 2), ss.validate_schedule([1, 3, 5], [4, 2, 1], N=6, T=5)),
])
def test_batch_engine_matches_reference_engine(model, schedule):
    inc = ss.sample_chunk(model, schedule.N, schedule.T, seed=31, chunk_index=0)[:400]
    for strat in ss.full_catalog():
        fast = final_values_for_chunk(inc, schedule, strat)
        slow = _final_values_loop(inc, schedule, strat)
        assert np.array_equal(fast, slow), strat.name


def test_batch_engine_matches_reference_on_drift_model():
    model, schedule = ss.default_drift_experiment()
    inc = ss.sample_chunk(model, schedule.N, schedule.T, seed=37, chunk_index=0)[:300]
    for strat in ss.full_catalog():
        fast = final_values_for_chunk(inc, schedule, strat)
        slow = _final_values_loop(inc, schedule, strat)
        assert np.array_equal(fast, slow), strat.name


def test_unlisted_strategy_falls_back_to_reference_engine():
    worst = ss.Strategy(
        name="keep_worst",
        chooser=lambda v, n: sorted(v.survivors,
                                    key=lambda i: (v.value_at(i, v.time), i))[:n],
    )
    r = ss.mc_estimate(GAUSS, SCHEDULE_A, worst, reps=500, seed=2)
    g = ss.mc_estimate(GAUSS, SCHEDULE_A, ss.greedy_strategy(), reps=500, seed=2)
    assert r.mean < g.mean


# --- compare_strategies ----------------------------------------------------------

def test_compare_single_greedy_row_is_zero_diff():
    t = ss.compare_strategies(GAUSS, SCHEDULE_A, [ss.greedy_strategy()],
                              reps=1000, seed=8)
    assert len(t.rows) == 1
    row = t.rows[0]
    assert row.paired_diff_vs_greedy == 0.0
    assert row.paired_stderr == 0.0


def test_compare_common_random_numbers():
    # same seed, different catalog subsets: identical sampled ensembles
    a = ss.compare_strategies(GAUSS, SCHEDULE_G, ss.full_catalog(), reps=2000, seed=6)
    b = ss.compare_strategies(GAUSS, SCHEDULE_G, [ss.greedy_strategy()], reps=2000, seed=6)
    assert a.ensemble_hash == b.ensemble_hash
    assert a.row("greedy").mean == b.row("greedy").mean


def test_compare_thread_independence():
    a = ss.compare_strategies(GAUSS, SCHEDULE_G, ss.full_catalog(), reps=9000,
                              seed=13, threads=1)
    b = ss.compare_strategies(GAUSS, SCHEDULE_G, ss.full_catalog(), reps=9000,
                              seed=13, threads=4)
    assert a == b


def test_compare_greedy_wins_every_pairing():
    t = ss.compare_strategies(GAUSS, SCHEDULE_G, ss.full_catalog(), reps=20_000, seed=21)
    for row in t.rows:
        assert row.paired_diff_vs_greedy <= 3 * row.paired_stderr
    anti = t.row("anti_greedy")
    assert anti.paired_diff_vs_greedy < -3 * anti.paired_stderr


def test_compare_coupled_mode_has_zero_violations():
    t = ss.compare_strategies(GAUSS, SCHEDULE_A, ss.full_catalog(), reps=300,
                              seed=4, coupled=True)
    for row in t.rows:
        assert row.coupled_violations == 0


def test_compare_stage_rows_shape():
    t = ss.compare_strategies(GAUSS, SCHEDULE_G, [ss.greedy_strategy()],
                              reps=500, seed=2)
    assert len(t.stage_rows) == SCHEDULE_G.stages
    stages = [r[1] for r in t.stage_rows]
    assert stages == [1, 2, 3]
    # greedy survivor means decline as the cut tightens around the best
    assert t.stage_rows[2][3] >= t.stage_rows[0][3]


def test_compare_needs_catalog():
    with pytest.raises(ConfigInvalid):
        ss.compare_strategies(GAUSS, SCHEDULE_A, [], reps=100, seed=0)


# --- dependence experiment ---------------------------------------------------------

def test_drift_experiment_smoke_reps_two():
    model, schedule = ss.default_drift_experiment()
    rep = ss.dependent_model_experiment(model, schedule, reps=2, seed=1)
    assert rep.replications == 2
    assert len(rep.rows) == 2
    assert {r.strategy for r in rep.rows} == {"greedy", "drift_aware"}
    assert isinstance(rep.paired_diff, float)


def test_drift_experiment_requires_drift_model():
    with pytest.raises(ConfigInvalid):
        ss.dependent_model_experiment(GAUSS, SCHEDULE_A, reps=10, seed=0)


def test_drift_experiment_directional_small():
    model, schedule = ss.default_drift_experiment()
    rep = ss.dependent_model_experiment(model, schedule, reps=5000, seed=19)
    assert rep.paired_diff >= 3 * rep.paired_stderr
    zero = ss.drift_model(ss.rademacher(10), [0], ["1"])
    rep0 = ss.dependent_model_experiment(zero, schedule, reps=5000, seed=19)
    assert rep0.paired_diff <= 3 * rep0.paired_stderr
