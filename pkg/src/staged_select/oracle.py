"""Exact certification oracles for small discrete instances.

Everything in this module computes with `fractions.Fraction`: expectations,
probabilities, and path values.  Optimality claims are equalities of exact
rationals, never float comparisons.

Three independent routes to the optimal expected final value exist:

* `exact_expected_value` evaluates one concrete strategy by full path
  enumeration;
* `dp_optimal_value` maximizes over all history-measurable strategies by
  backward induction, memoized on a rank-canonicalized history encoding
  (symmetric states merge; sound because processes are exchangeable and
  increments are independent, which the oracle enforces);
* `exhaustive_strategy_search` walks the raw decision tree with no state
  merging at all — full per-process paths, interior steps included — and
  optimizes every reachable decision history pointwise.  It also reports
  the cardinality of the deterministic strategy space it maximized over.

Agreement of all three on an instance certifies the backward-induction
shortcuts empirically rather than by appeal to theory.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .core_model import (
    Discrete,
    DriftModel,
    ENUMERATION_CAP,
    Model,
    Number,
    PathEnsemble,
    Rademacher,
    Schedule,
    enumerate_paths,
)
from .errors import (
    EnumerationTooLarge,
    IndependenceViolated,
    PreconditionViolated,
    SearchTooLarge,
)
from .selection_engine import Strategy, run_selection

#: default cap on decision-tree nodes for the uncompressed search
SEARCH_CAP = 5_000_000


def instance_label(model: Model, s: Schedule) -> str:
    return f"{model.tag()} N={s.N} times={list(s.times)} sizes={list(s.sizes)}"


@dataclass(frozen=True)
class ExactValue:
    """An exact expected final value together with its provenance."""

    value: Fraction
    instance: str
    strategy: str

    def __str__(self) -> str:
        return f"{self.value.numerator}/{self.value.denominator}"


def _require_discrete_independent(model: Model) -> Discrete:
    if isinstance(model, DriftModel):
        raise IndependenceViolated(
            "exact oracles require independent increments; drift models are refused"
        )
    if isinstance(model, Rademacher):
        return model.as_discrete()
    if not isinstance(model, Discrete):
        raise TypeError("exact oracles need a discrete-step model")
    return model


# ---------------------------------------------------------------------------
# strategy evaluation by enumeration
# ---------------------------------------------------------------------------

def exact_expected_value(
    model: Model, s: Schedule, alg: Strategy, cap: int = ENUMERATION_CAP
) -> ExactValue:
    """Exact expectation of the strategy's final selected value."""
    return exact_expected_values(model, s, [alg], cap=cap)[0]


def exact_expected_values(
    model: Model, s: Schedule, algs: Sequence[Strategy], cap: int = ENUMERATION_CAP
) -> list[ExactValue]:
    """Evaluate several strategies over a single path enumeration."""
    disc = _require_discrete_independent(model)
    atoms = enumerate_paths(disc, s.N, s.T, cap=cap)
    label = instance_label(model, s)
    out = []
    for alg in algs:
        total = Fraction(0)
        for x, prob in atoms:
            total += prob * run_selection(x, s, alg).final_value
        out.append(ExactValue(value=total, instance=label, strategy=alg.describe()))
    return out


# ---------------------------------------------------------------------------
# backward induction over canonicalized histories
# ---------------------------------------------------------------------------

def _sum_distribution(model: Discrete, length: int) -> list[tuple[Fraction, Fraction]]:
    """Exact law of the sum of `length` i.i.d. steps."""
    dist = {Fraction(0): Fraction(1)}
    for _ in range(length):
        new: dict[Fraction, Fraction] = {}
        for v, p in dist.items():
            for step, q in zip(model.support, model.probs):
                key = v + step
                new[key] = new.get(key, Fraction(0)) + p * q
        dist = new
    return sorted(dist.items())


def _format_exact(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


@dataclass(frozen=True)
class DecisionTable:
    """One argmax decision per reachable canonical decision history."""

    entries: tuple[tuple[str, tuple[Fraction, ...]], ...]

    def to_csv_rows(self) -> list[tuple[str, str]]:
        return [
            (key, " ".join(_format_exact(v) for v in chosen))
            for key, chosen in self.entries
        ]


def dp_optimal_value(
    model: Model, s: Schedule, cap: int = ENUMERATION_CAP
) -> tuple[ExactValue, DecisionTable]:
    """Optimal expected final value over every history-measurable strategy.

    States are canonicalized per stage as the ranked multiset of the ranked
    cohort's values with kept/dropped flags; the memo key is the sequence of
    those records plus the current candidates' ranked values.  Merging
    symmetric states this way is value-preserving because processes are
    interchangeable and, given independent increments, the continuation law
    depends only on the candidates' current values.  The uncompressed search
    below exists precisely to cross-check this encoding.
    """
    disc = _require_discrete_independent(model)
    count = len(disc.support) ** (s.N * s.T)
    if count > cap:
        raise EnumerationTooLarge(count, cap)
    spans = s.block_bounds()
    block_sum_dists = [_sum_distribution(disc, hi - lo) for lo, hi in spans]
    sizes = s.sizes
    k = s.stages
    memo: dict[tuple, Fraction] = {}
    decisions: dict[tuple, tuple[Fraction, ...]] = {}

    def decide(j: int, hist: tuple, anchors: tuple[Fraction, ...]) -> Fraction:
        key = (j, hist, anchors)
        if key in memo:
            return memo[key]
        n_j = sizes[j - 1]
        best: Fraction | None = None
        best_choice: tuple[Fraction, ...] = ()
        seen: set[tuple[Fraction, ...]] = set()
        for positions in itertools.combinations(range(len(anchors)), n_j):
            chosen = tuple(anchors[p] for p in positions)
            if chosen in seen:
                continue  # same value multiset, identical continuation
            seen.add(chosen)
            if j == k:
                value = chosen[0]
            else:
                kept = set(positions)
                record = tuple(
                    (anchors[p], p in kept) for p in range(len(anchors))
                )
                value = expect(j, hist + (record,), chosen)
            if best is None or value > best:
                best = value
                best_choice = chosen
        assert best is not None
        memo[key] = best
        decisions[key] = best_choice
        return best

    def expect(j: int, hist: tuple, kept: tuple[Fraction, ...]) -> Fraction:
        # expectation over the next block's per-survivor sums
        dist = block_sum_dists[j]
        total = Fraction(0)
        for sums in itertools.product(dist, repeat=len(kept)):
            prob = Fraction(1)
            for _, p in sums:
                prob *= p
            new_anchors = tuple(
                sorted((v + ds for v, (ds, _) in zip(kept, sums)), reverse=True)
            )
            total += prob * decide(j + 1, hist, new_anchors)
        return total

    value = expect(0, (), tuple([Fraction(0)] * s.N))
    table = DecisionTable(entries=tuple(
        (_decision_key_string(key), chosen)
        for key, chosen in sorted(decisions.items(), key=lambda kv: _decision_key_string(kv[0]))
    ))
    return (
        ExactValue(value=value, instance=instance_label(model, s), strategy="dp_optimal"),
        table,
    )


def _decision_key_string(key: tuple) -> str:
    j, hist, anchors = key
    stages = []
    for record in hist:
        stages.append(",".join(
            f"{_format_exact(v)}{'+' if kept else '-'}" for v, kept in record
        ))
    hist_part = ";".join(stages) if stages else "-"
    anchor_part = ",".join(_format_exact(v) for v in anchors)
    return f"stage={j}|past={hist_part}|values={anchor_part}"


# ---------------------------------------------------------------------------
# uncompressed pointwise search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchResult:
    best: ExactValue
    strategy_space_size: int   # deterministic maps the search maximized over
    decision_histories: int    # distinct reachable decision points


def _comb(n: int, r: int) -> int:
    import math
    return math.comb(n, r)


def exhaustive_strategy_search(
    model: Model, s: Schedule, cap: int = SEARCH_CAP
) -> SearchResult:
    """Maximize over every deterministic strategy by walking the full
    decision tree without any state merging.

    Histories are raw: every process's full visible path, interior steps
    included, with no canonicalization.  Each reachable decision history is
    optimized independently, which realizes the maximum over the complete
    product space of deterministic maps (choices at distinct histories
    affect disjoint branches); that space's exact cardinality is returned.
    Enumerating strategy profiles one by one would visit
    prod-over-histories(choice counts) profiles, which is astronomically
    redundant — the tree walk computes the same maximum in
    `decision_histories` node visits.
    """
    disc = _require_discrete_independent(model)
    spans = s.block_bounds()
    steps = list(zip(disc.support, disc.probs))
    sizes = s.sizes
    k = s.stages

    # work / cardinality accounting before touching the tree
    histories_at_stage = []
    nodes = 1
    for j in range(1, k + 1):
        lo, hi = spans[j - 1]
        alive = s.N if j == 1 else sizes[j - 2]
        nodes *= len(disc.support) ** (alive * (hi - lo))
        histories_at_stage.append(nodes)
        nodes *= _comb(alive, sizes[j - 1]) if j < k else 1
    total_nodes = sum(histories_at_stage)
    if total_nodes > cap:
        raise SearchTooLarge(total_nodes, cap)
    strategy_space = 1
    for j in range(1, k + 1):
        alive = s.N if j == 1 else sizes[j - 2]
        strategy_space *= _comb(alive, sizes[j - 1]) ** histories_at_stage[j - 1]

    visited = 0

    def best_at_decision(j: int, paths: tuple[tuple[Fraction, ...], ...],
                         survivors: tuple[int, ...]) -> Fraction:
        nonlocal visited
        visited += 1
        n_j = sizes[j - 1]
        best: Fraction | None = None
        for chosen in itertools.combinations(survivors, n_j):
            if j == k:
                value = paths[chosen[0]][-1]
            else:
                value = continue_from(j, paths, chosen)
            if best is None or value > best:
                best = value
        assert best is not None
        return best

    def continue_from(j: int, paths, survivors) -> Fraction:
        # enumerate full increment sequences of the next block, survivors only
        lo, hi = spans[j]
        length = hi - lo
        m = len(survivors)
        total = Fraction(0)
        for combo in itertools.product(steps, repeat=m * length):
            prob = Fraction(1)
            new_paths = list(paths)
            for idx, i in enumerate(survivors):
                segment = combo[idx * length:(idx + 1) * length]
                row = list(paths[i])
                for step, q in segment:
                    prob *= q
                    row.append(row[-1] + step)
                new_paths[i] = tuple(row)
            total += prob * best_at_decision(j + 1, tuple(new_paths), survivors)
        return total

    start = tuple((Fraction(0),) for _ in range(s.N))
    value = continue_from(0, start, tuple(range(s.N)))
    return SearchResult(
        best=ExactValue(value=value, instance=instance_label(model, s),
                        strategy="exhaustive_search"),
        strategy_space_size=strategy_space,
        decision_histories=visited,
    )


def literal_profile_search(
    model: Model, s: Schedule, profile_cap: int = 100_000
) -> tuple[Fraction, int]:
    """Brute-force maximum over literally enumerated strategy profiles.

    A profile assigns one legal subset to every reachable decision history
    (keyed by the raw visible state: survivor paths up to the current time,
    eliminated paths frozen at their elimination time).  Only feasible on
    tiny instances; exists to validate that the pointwise tree search above
    really equals the maximum over whole strategy maps.
    Returns (best value, number of profiles evaluated).
    """
    disc = _require_discrete_independent(model)
    atoms = enumerate_paths(disc, s.N, s.T)
    sizes = s.sizes
    k = s.stages

    def visible_key(x: PathEnsemble, j: int, survivors: tuple[int, ...],
                    horizons: dict[int, int]) -> tuple:
        t_j = s.times[j - 1]
        paths = tuple(
            x.values[i][: (t_j if i in survivors else horizons[i]) + 1]
            for i in range(s.N)
        )
        return (j, paths, survivors)

    histories: dict[tuple, list[tuple[int, ...]]] = {}

    def explore(x: PathEnsemble, j: int, survivors: tuple[int, ...],
                horizons: dict[int, int]) -> None:
        key = visible_key(x, j, survivors, horizons)
        if key not in histories:
            histories[key] = list(itertools.combinations(survivors, sizes[j - 1]))
        if j == k:
            return
        t_j = s.times[j - 1]
        for chosen in histories[key]:
            new_horizons = dict(horizons)
            for i in survivors:
                if i not in chosen:
                    new_horizons[i] = t_j
            explore(x, j + 1, chosen, new_horizons)

    for x, _ in atoms:
        explore(x, 1, tuple(range(s.N)), {})

    keys = sorted(histories, key=repr)
    n_profiles = 1
    for key in keys:
        n_profiles *= len(histories[key])
    if n_profiles > profile_cap:
        raise SearchTooLarge(n_profiles, profile_cap)

    best: Fraction | None = None
    for profile in itertools.product(*(histories[key] for key in keys)):
        choice_of = dict(zip(keys, profile))
        total = Fraction(0)
        for x, prob in atoms:
            survivors = tuple(range(s.N))
            horizons: dict[int, int] = {}
            for j in range(1, k + 1):
                key = visible_key(x, j, survivors, horizons)
                chosen = choice_of[key]
                t_j = s.times[j - 1]
                for i in survivors:
                    if i not in chosen:
                        horizons[i] = t_j
                survivors = chosen
            total += prob * x.values[survivors[0]][s.T]
        if best is None or total > best:
            best = total
    assert best is not None
    return best, n_profiles


# ---------------------------------------------------------------------------
# order statistics lemma
# ---------------------------------------------------------------------------

def order_stat_lemma_check(
    A: Sequence[Number], B: Sequence[Number], C: Sequence[Number]
) -> bool:
    """True iff the m-th largest of A+C is at most the m-th largest of B+C
    for every m, given the componentwise precondition A <= B."""
    if not A or len(A) != len(B) or len(A) != len(C):
        raise PreconditionViolated("A, B, C must be nonempty vectors of equal length")
    if any(a > b for a, b in zip(A, B)):
        raise PreconditionViolated("requires A[i] <= B[i] for all i")
    ac = sorted((a + c for a, c in zip(A, C)), reverse=True)
    bc = sorted((b + c for b, c in zip(B, C)), reverse=True)
    return all(x <= y for x, y in zip(ac, bc))
