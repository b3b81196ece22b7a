"""Execution of iterative selection strategies over a path ensemble.

A run proceeds through the schedule's stages.  At stage j the strategy sees
a `HistoryView` (survivor paths up to t_j, eliminated paths frozen at their
elimination time) and must return exactly n_j of the current survivors.
The run records survivor sets, the temporal index bookkeeping, and the final
selected value.

One global tie-break rule is used for every ranking in the package: higher
value wins, and equal values are ordered by smaller process id.  Consistency
of this rule across ranking, greedy selection, and alignment pairing is what
keeps the alignment map well-defined on tie sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core_model import Number, PathEnsemble, Schedule
from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    StageOutOfOrder,
    StrategyViolation,
    ValueHidden,
)


def ranked_ids(ids: Sequence[int], value_of: Callable[[int], Number]) -> list[int]:
    """Ids ordered best-first: by value descending, ties to the smaller id."""
    return sorted(ids, key=lambda i: (-value_of(i), i))


def rank_desc(values: Sequence[Number]) -> list[int]:
    """Rank positions of a value list, 1 = largest, ties to the earlier entry.

    >>> rank_desc([3.0, 1.0, 2.0])
    [1, 3, 2]
    """
    if not values:
        raise ValueError("cannot rank an empty list")
    order = ranked_ids(range(len(values)), lambda i: values[i])
    ranks = [0] * len(values)
    for pos, i in enumerate(order, start=1):
        ranks[i] = pos
    return ranks


# ---------------------------------------------------------------------------
# history views
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryView:
    """The observable portion of the ensemble at one stage.

    Eliminated processes are visible only up to their elimination time;
    reads past a process's horizon raise `ValueHidden`, so a strategy
    cannot depend on information the selection protocol hides.
    """

    stage: int                      # 1-based stage index j
    time: int                       # t_j
    times: tuple[int, ...]          # full observation grid
    survivors: tuple[int, ...]      # candidates for this cut
    _values: tuple[tuple[Number, ...], ...]
    _increments: tuple[tuple[Number, ...], ...]
    _horizons: tuple[int, ...]      # per-process visibility cap

    @property
    def n_processes(self) -> int:
        return len(self._horizons)

    @property
    def final_time(self) -> int:
        return self.times[-1]

    @property
    def previous_time(self) -> int:
        return 0 if self.stage == 1 else self.times[self.stage - 2]

    def horizon(self, i: int) -> int:
        return self._horizons[i]

    def value_at(self, i: int, t: int) -> Number:
        if t < 0 or t > self._horizons[i]:
            raise ValueHidden(
                f"process {i} is not observable at time {t} (horizon {self._horizons[i]})"
            )
        return self._values[i][t]

    def path(self, i: int) -> tuple[Number, ...]:
        """Visible value path of process i, from time 0 to its horizon."""
        return self._values[i][: self._horizons[i] + 1]

    def step_increments(self, i: int) -> tuple[Number, ...]:
        """Visible step increments of process i (one per observed step)."""
        return self._increments[i][: self._horizons[i]]

    def current_values(self) -> list[tuple[int, Number]]:
        """(id, value at t_j) for every current survivor."""
        return [(i, self._values[i][self.time]) for i in self.survivors]


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Strategy:
    """A named deterministic map (HistoryView, required size) -> survivors.

    Randomized strategies carry an auxiliary seed and are deterministic
    given it; `deterministic` is False only for intentionally ill-behaved
    strategies used to exercise the alignment guard.
    """

    name: str
    chooser: Callable[[HistoryView, int], Sequence[int]]
    aux_seed: int | None = None
    deterministic: bool = True

    def select(self, view: HistoryView, size: int) -> tuple[int, ...]:
        return tuple(self.chooser(view, size))

    def describe(self) -> str:
        if self.aux_seed is not None:
            return f"{self.name}(aux_seed={self.aux_seed})"
        return self.name


def _top(view: HistoryView, size: int) -> list[int]:
    order = ranked_ids(view.survivors, lambda i: view.value_at(i, view.time))
    return order[:size]


def greedy_strategy() -> Strategy:
    """Keep the survivors with the best current values.  Memoryless: only
    values at the current observation time enter the decision."""
    return Strategy(name="greedy", chooser=_top)


def _anti_greedy(view: HistoryView, size: int) -> list[int]:
    # sabotage every cut by keeping the worst-ranked survivors, but report
    # the best remaining one at the terminal stage (the output pick is not
    # part of the sabotage)
    order = ranked_ids(view.survivors, lambda i: view.value_at(i, view.time))
    if view.stage == len(view.times):
        return order[:size]
    return order[len(order) - size:]


def _lagged_greedy(view: HistoryView, size: int) -> list[int]:
    # ranks by the previous observation time; at stage 1 that is time 0,
    # where all values are 0, so the tie rule keeps the smallest ids
    t_prev = view.previous_time
    order = ranked_ids(view.survivors, lambda i: view.value_at(i, t_prev))
    return order[:size]


def _drift_aware(view: HistoryView, size: int) -> list[int]:
    # score = current value + estimated mean step * remaining steps; the
    # step-location estimate is the midrange of the process's own observed
    # increments, which is efficient for bounded noise and collapses the
    # strategy to greedy when no steps remain
    remaining = view.final_time - view.time

    def score(i: int) -> Number:
        v = view.value_at(i, view.time)
        if remaining == 0:
            return v
        steps = view.step_increments(i)
        est = (min(steps) + max(steps)) / 2
        return v + remaining * est

    return sorted(view.survivors, key=lambda i: (-score(i), i))[:size]


@lru_cache(maxsize=64)
def _priority_table(aux_seed: int, stages: int, n_processes: int) -> tuple[tuple[float, ...], ...]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=aux_seed, spawn_key=(0x5EED,)))
    table = rng.random((stages, n_processes))
    return tuple(tuple(float(x) for x in row) for row in table)


def random_fixed_strategy(aux_seed: int) -> Strategy:
    """Value-blind uniformly random selection, frozen by the auxiliary seed.

    Each (stage, process) gets a pseudo-random priority; the stage keeps the
    survivors with the highest priorities.  Independent uniform priorities
    make every legal subset equally likely, while the fixed table keeps the
    strategy deterministic and recomputable from any history prefix.
    """

    def choose(view: HistoryView, size: int) -> list[int]:
        table = _priority_table(aux_seed, len(view.times), view.n_processes)
        row = table[view.stage - 1]
        return sorted(view.survivors, key=lambda i: (-row[i], i))[:size]

    return Strategy(name="random_fixed", chooser=choose, aux_seed=aux_seed)


def baseline_strategies(aux_seed: int = 2024) -> dict[str, Strategy]:
    """The comparison catalog: everything here is deterministic and legal."""
    return {
        "anti_greedy": Strategy(name="anti_greedy", chooser=_anti_greedy),
        "random_fixed": random_fixed_strategy(aux_seed),
        "lagged_greedy": Strategy(name="lagged_greedy", chooser=_lagged_greedy),
        "drift_aware": Strategy(name="drift_aware", chooser=_drift_aware),
    }


def full_catalog(aux_seed: int = 2024) -> list[Strategy]:
    return [greedy_strategy(), *baseline_strategies(aux_seed).values()]


def strategy_from_config(obj: dict, path: str = "strategy") -> Strategy:
    if not isinstance(obj, dict) or "name" not in obj:
        raise ConfigInvalid(f"{path}.name: missing required key")
    name = obj["name"]
    extra = set(obj) - {"name", "aux_seed"}
    if extra:
        raise ConfigInvalid(f"{path}.{sorted(extra)[0]}: unknown key")
    if name == "random_fixed":
        if "aux_seed" not in obj:
            raise ConfigInvalid(f"{path}.aux_seed: missing required key for random_fixed")
        return random_fixed_strategy(int(obj["aux_seed"]))
    if "aux_seed" in obj:
        raise ConfigInvalid(f"{path}.aux_seed: only valid for random_fixed")
    if name == "greedy":
        return greedy_strategy()
    catalog = baseline_strategies()
    if name in catalog:
        return catalog[name]
    raise ConfigInvalid(f"{path}.name: unknown strategy {name!r}")


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageRecord:
    stage: int
    time: int
    candidates: tuple[int, ...]            # W_{j-1}, the set that was ranked
    survivors: tuple[int, ...]             # selected set, sorted
    eliminated: tuple[int, ...]            # dropped at this stage, sorted
    values: tuple[tuple[int, Number], ...]  # (id, value at t_j) for candidates
    indices: tuple[tuple[int, int], ...]   # full temporal index map after ranking


@dataclass(frozen=True)
class SelectionTrace:
    strategy: str
    stages: tuple[StageRecord, ...]
    final_index: int
    final_value: Number

    def survivor_sets(self) -> list[tuple[int, ...]]:
        return [rec.survivors for rec in self.stages]

    def index_map(self, stage: int) -> dict[int, int]:
        return dict(self.stages[stage - 1].indices)


def assign_temporal_indices(
    trace_so_far: SelectionTrace | Sequence[StageRecord] | None,
    stage: int,
    values_at_tj: Sequence[Number],
) -> dict[int, int]:
    """Rank-based index assignment for one stage.

    Stage 1 ranks all processes by their values; stage j > 1 re-ranks only
    the previous survivors with indices 1..n_{j-1}, while every eliminated
    process keeps the index from its last ranking.
    """
    records: Sequence[StageRecord]
    if trace_so_far is None:
        records = ()
    elif isinstance(trace_so_far, SelectionTrace):
        records = trace_so_far.stages
    else:
        records = tuple(trace_so_far)
    if stage != len(records) + 1:
        raise StageOutOfOrder(f"stage {stage} requested after {len(records)} recorded stages")
    if stage == 1:
        candidates: Sequence[int] = range(len(values_at_tj))
        previous: dict[int, int] = {}
    else:
        candidates = records[-1].survivors
        previous = dict(records[-1].indices)
    order = ranked_ids(candidates, lambda i: values_at_tj[i])
    indices = dict(previous)
    for pos, i in enumerate(order, start=1):
        indices[i] = pos
    return indices


class StagewiseRun:
    """Incremental strategy execution over a (possibly growing) value grid.

    The alignment machinery re-runs strategies while it is still building
    the grid block by block, so this runner only ever reads values up to the
    stage it is asked to advance to.  Grids are held by reference; views
    are read-only by contract.  With `detail=False` the temporal index
    bookkeeping is skipped (the alignment walks do not need it).
    """

    def __init__(self, schedule: Schedule, strategy: Strategy,
                 values: Sequence[Sequence[Number]],
                 increments: Sequence[Sequence[Number]],
                 detail: bool = True):
        self.schedule = schedule
        self.strategy = strategy
        self.values = values
        self.increments = increments
        self.detail = detail
        self.survivors: tuple[int, ...] = tuple(range(schedule.N))
        self.horizons = [0] * schedule.N
        self.records: list[StageRecord] = []

    def advance(self) -> StageRecord:
        """Run one more stage and return its record."""
        j = len(self.records) + 1
        if j > self.schedule.stages:
            raise StageOutOfOrder(f"all {self.schedule.stages} stages already run")
        t_j = self.schedule.times[j - 1]
        n_j = self.schedule.sizes[j - 1]
        candidates = self.survivors
        # visibility: candidates up to t_j, earlier casualties stay frozen
        for i in candidates:
            self.horizons[i] = t_j
        view = HistoryView(
            stage=j,
            time=t_j,
            times=self.schedule.times,
            survivors=candidates,
            _values=self.values,
            _increments=self.increments,
            _horizons=tuple(self.horizons),
        )
        chosen = self.strategy.select(view, n_j)
        chosen_set = set(chosen)
        if len(chosen) != n_j or len(chosen_set) != n_j:
            raise StrategyViolation(
                f"{self.strategy.name} returned {len(chosen)} picks at stage {j}, wanted {n_j} distinct"
            )
        if not chosen_set <= set(candidates):
            raise StrategyViolation(
                f"{self.strategy.name} selected non-survivors {sorted(chosen_set - set(candidates))} at stage {j}"
            )
        if self.detail:
            values_at_tj = [self.values[i][t_j] for i in range(self.schedule.N)]
            indices = tuple(sorted(assign_temporal_indices(self.records, j, values_at_tj).items()))
            observed = tuple((i, self.values[i][t_j]) for i in candidates)
        else:
            indices = ()
            observed = ()
        survivors = tuple(sorted(chosen_set))
        eliminated = tuple(sorted(set(candidates) - chosen_set))
        record = StageRecord(
            stage=j,
            time=t_j,
            candidates=tuple(candidates),
            survivors=survivors,
            eliminated=eliminated,
            values=observed,
            indices=indices,
        )
        self.records.append(record)
        self.survivors = survivors
        return record


def run_selection(x: PathEnsemble, s: Schedule, alg: Strategy) -> SelectionTrace:
    """Execute the strategy over every stage and record the full trace."""
    if x.n_processes != s.N or x.horizon != s.T:
        raise DimensionMismatch(
            f"ensemble is {x.n_processes}x{x.horizon}, schedule wants {s.N}x{s.T}"
        )
    run = StagewiseRun(s, alg, x.values, x.increments)
    for _ in range(s.stages):
        run.advance()
    final_index = run.survivors[0]
    return SelectionTrace(
        strategy=alg.describe(),
        stages=tuple(run.records),
        final_index=final_index,
        final_value=x.values[final_index][s.T],
    )


# ---------------------------------------------------------------------------
# trace export
# ---------------------------------------------------------------------------

TRACE_CSV_HEADER = ("stage", "time", "process_id", "value", "temporal_index", "survived")


def trace_to_csv_rows(trace: SelectionTrace, x: PathEnsemble, s: Schedule) -> list[tuple]:
    """Long-format rows, one per (process, time point).

    `stage` is the stage whose window contains the time (0 for t=0);
    `temporal_index` is the index held at that time (0 before the first
    ranking); `survived` says whether the process was still retained after
    all decisions up to that time.
    """
    stage_of_time = {0: 0}
    for j, t in enumerate(s.times, start=1):
        lo = s.previous_time(j)
        for t_in in range(lo + 1, t + 1):
            stage_of_time[t_in] = j
    index_after = {0: {i: 0 for i in range(s.N)}}
    surviving_after = {0: set(range(s.N))}
    for rec in trace.stages:
        index_after[rec.stage] = dict(rec.indices)
        surviving_after[rec.stage] = set(rec.survivors)
    rows = []
    for i in range(s.N):
        for t in range(s.T + 1):
            j = stage_of_time[t]
            # the ranking and cut at stage j take effect at t = t_j; interior
            # times still carry the previous stage's bookkeeping
            done = sum(1 for obs in s.times if obs <= t)
            held = index_after[done].get(i, 0)
            alive = i in surviving_after[done]
            rows.append((j, t, i, x.values[i][t], held, int(alive)))
    return rows
