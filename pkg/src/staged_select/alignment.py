"""Construction, inversion, and verification of the alignment coupling.

The coupling maps a realization X (run under an arbitrary strategy) to an
image realization Y on which the greedy strategy is run.  Y starts as an
exact copy of X up to the first observation time; afterwards each block of
Y's step increments is a row permutation of X's block, chosen so that the
greedy run on Y always holds values at least as large as the paired
processes of the original run on X.

Pairing rule.  The permutation feeding block j is fixed at the block's left
endpoint t_{j-1}, using information available there:

* survivors of the strategy on X are paired to survivors of greedy on Y by
  equal rank of their values at t_{j-1} within their own cohort;
* processes eliminated at an earlier stage s were paired cohort-to-cohort by
  rank of their values at t_s, and those pairs stay frozen forever.

Every ranking uses the package-wide tie rule (higher value first, then
smaller id), which keeps the pairing recomputable from truncated history;
that recomputability is what makes the map invertible, and is checked
explicitly by `check_block_permutation`.

Because Y's rows accumulate exactly the same increment values as X's rows
(in the same order, from anchors that dominate), the per-pair inequalities
hold exactly in floating point as well: float addition is monotone in each
argument, so no tolerance is needed anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .core_model import (
    Model,
    Number,
    PathEnsemble,
    Schedule,
    enumerate_paths,
    ENUMERATION_CAP,
    sample_replications,
)
from .errors import DimensionMismatch, NonDeterministicStrategy
from .selection_engine import (
    StagewiseRun,
    Strategy,
    greedy_strategy,
    ranked_ids,
    run_selection,
)


# ---------------------------------------------------------------------------
# pairing data
# ---------------------------------------------------------------------------

class Pair(NamedTuple):
    """One matched process pair.  `key` identifies the cohort and rank that
    produced the match: ("init", i) for the identity pairing of block 1,
    ("survivor", r) for rank-r survivors, ("elim", s, r) for rank-r members
    of the cohort eliminated at stage s."""

    key: tuple
    x_process: int
    y_process: int


@dataclass(frozen=True)
class PairingSequence:
    """For each block j (1-based), the full-population pairing that assigned
    Y's block-j increment rows from X's."""

    by_block: tuple[tuple[Pair, ...], ...]

    def permutation(self, block: int) -> dict[int, int]:
        """Row assignment for a block as a {y_process: x_process} map."""
        return {p.y_process: p.x_process for p in self.by_block[block - 1]}


class DominanceEntry(NamedTuple):
    stage: int
    time: int
    key: tuple
    x_process: int
    y_process: int
    x_value: Number
    y_value: Number
    ok: bool


@dataclass(frozen=True)
class AlignmentWitness:
    """The image ensemble with everything needed to audit it."""

    x: PathEnsemble
    y: PathEnsemble
    schedule: Schedule
    strategy: str
    pairing: PairingSequence
    dominance: tuple[DominanceEntry, ...]
    alg_final: Number          # final value of the strategy's run on X
    greedy_final: Number       # final value of greedy's run on Y
    x_survivors: tuple[tuple[int, ...], ...]
    y_survivors: tuple[tuple[int, ...], ...]

    @property
    def headline_ok(self) -> bool:
        return self.alg_final <= self.greedy_final


# ---------------------------------------------------------------------------
# the dual walk
# ---------------------------------------------------------------------------

def _extend_values(values: list[list[Number]], increments: Sequence[Sequence[Number]],
                   lo: int, hi: int) -> None:
    # strictly sequential accumulation; same operation order as the
    # PathEnsemble constructor so rebuilt grids match bit for bit
    for row_v, row_i in zip(values, increments):
        acc = row_v[-1]
        for c in range(lo, hi):
            acc = acc + row_i[c]
            row_v.append(acc)


def _stage_pairs(
    stage: int,
    x_rec,
    y_rec,
    x_values: Sequence[Sequence[Number]],
    y_values: Sequence[Sequence[Number]],
    t_j: int,
    frozen: list[Pair],
) -> list[Pair]:
    """Pairs in effect for the next block: fresh survivor pairs plus the
    frozen eliminated-cohort pairs (extended with this stage's casualties)."""
    xs = ranked_ids(x_rec.survivors, lambda i: x_values[i][t_j])
    ys = ranked_ids(y_rec.survivors, lambda i: y_values[i][t_j])
    survivor_pairs = [
        Pair(key=("survivor", r + 1), x_process=xn, y_process=ym)
        for r, (xn, ym) in enumerate(zip(xs, ys))
    ]
    x_out = ranked_ids(x_rec.eliminated, lambda i: x_values[i][t_j])
    y_out = ranked_ids(y_rec.eliminated, lambda i: y_values[i][t_j])
    frozen.extend(
        Pair(key=("elim", stage, r + 1), x_process=xn, y_process=ym)
        for r, (xn, ym) in enumerate(zip(x_out, y_out))
    )
    return survivor_pairs + list(frozen)


def _dual_walk(s: Schedule, alg: Strategy, x_inc, y_inc, fill: str,
               known_values):
    """Run the strategy on X and greedy on Y in lockstep, building the
    not-yet-known side's increment grid block by block.

    fill="y": X is complete (known_values is its value grid), Y's blocks
    past the first are written.  fill="x": the mirror image.  Both
    increment grids must already agree on block 1.  The built side's values
    are accumulated with the same sequential sums the `PathEnsemble`
    constructor uses, so a later canonical rebuild is bit-identical.
    """
    t1 = s.times[0]
    spans = s.block_bounds()
    if fill == "y":
        x_vals = known_values
        y_vals = [list(row[: t1 + 1]) for row in known_values]
    else:
        y_vals = known_values
        x_vals = [list(row[: t1 + 1]) for row in known_values]

    x_run = StagewiseRun(s, alg, x_vals, x_inc, detail=False)
    y_run = StagewiseRun(s, greedy_strategy(), y_vals, y_inc, detail=False)

    by_block: list[tuple[Pair, ...]] = [
        tuple(Pair(key=("init", i), x_process=i, y_process=i) for i in range(s.N))
    ]
    frozen: list[Pair] = []
    for j in range(1, s.stages + 1):
        t_j = s.times[j - 1]
        x_rec = x_run.advance()
        y_rec = y_run.advance()
        if j == s.stages:
            break
        pairs = _stage_pairs(j, x_rec, y_rec, x_vals, y_vals, t_j, frozen)
        by_block.append(tuple(pairs))
        lo, hi = spans[j]
        if fill == "y":
            for p in pairs:
                y_inc[p.y_process].extend(x_inc[p.x_process][lo:hi])
            _extend_values(y_vals, y_inc, lo, hi)
        else:
            for p in pairs:
                x_inc[p.x_process].extend(y_inc[p.y_process][lo:hi])
            _extend_values(x_vals, x_inc, lo, hi)

    return by_block, x_vals, y_vals, x_run, y_run


def _require_deterministic(alg: Strategy) -> None:
    if not alg.deterministic:
        raise NonDeterministicStrategy(
            f"alignment needs a deterministic strategy, {alg.name} is not"
        )


def build_alignment(x: PathEnsemble, s: Schedule, alg: Strategy) -> AlignmentWitness:
    """Construct Y and the pairing for a strategy on one realization."""
    _require_deterministic(alg)
    if x.n_processes != s.N or x.horizon != s.T:
        raise DimensionMismatch(
            f"ensemble is {x.n_processes}x{x.horizon}, schedule wants {s.N}x{s.T}"
        )
    t1 = s.times[0]
    y_inc = [list(row[:t1]) for row in x.increments]
    by_block, x_vals, y_vals, x_run, y_run = _dual_walk(
        s, alg, x.increments, y_inc, fill="y", known_values=x.values
    )
    # y_vals are the sequential running sums of y_inc, so constructing the
    # ensemble directly keeps the canonical value/increment consistency
    y = PathEnsemble(
        values=tuple(tuple(row) for row in y_vals),
        increments=tuple(tuple(row) for row in y_inc),
        model_tag=x.model_tag,
    )
    dominance = _dominance_entries(s, by_block, x_vals, y_vals)
    x_final = x_run.survivors[0]
    y_final = y_run.survivors[0]
    return AlignmentWitness(
        x=x,
        y=y,
        schedule=s,
        strategy=alg.describe(),
        pairing=PairingSequence(by_block=tuple(by_block)),
        dominance=tuple(dominance),
        alg_final=x_vals[x_final][s.T],
        greedy_final=y_vals[y_final][s.T],
        x_survivors=tuple(rec.survivors for rec in x_run.records),
        y_survivors=tuple(rec.survivors for rec in y_run.records),
    )


def invert_alignment(y: PathEnsemble, s: Schedule, alg: Strategy) -> PathEnsemble:
    """Reconstruct the unique X with build_alignment(X) = Y.

    Works stage by stage: X agrees with Y up to t_1; given X up to t_{j-1}
    the strategy's selections and the pairing are recomputable, so X's
    block-j rows can be read off Y's paired rows.  The round trip through
    `build_alignment` is exact, including for float-valued paths.
    """
    _require_deterministic(alg)
    if y.n_processes != s.N or y.horizon != s.T:
        raise DimensionMismatch(
            f"ensemble is {y.n_processes}x{y.horizon}, schedule wants {s.N}x{s.T}"
        )
    t1 = s.times[0]
    x_inc = [list(row[:t1]) for row in y.increments]
    _, x_vals, _, _, _ = _dual_walk(
        s, alg, x_inc, y.increments, fill="x", known_values=y.values
    )
    return PathEnsemble(
        values=tuple(tuple(row) for row in x_vals),
        increments=tuple(tuple(row) for row in x_inc),
        model_tag=y.model_tag,
    )


def _dominance_entries(s: Schedule, by_block, x_vals, y_vals) -> list[DominanceEntry]:
    """Per-stage per-pair value comparisons.

    At t_1 the pairs are the identity pairs (values equal by construction).
    At t_j (j > 1) the pairs checked are the survivor pairs fixed at
    t_{j-1}: those received identical block increments, so the image value
    must stay at or above the original.  Frozen eliminated pairs are part of
    the permutation but carry no inequality.
    """
    entries = []
    for j in range(1, s.stages + 1):
        t_j = s.times[j - 1]
        for p in by_block[j - 1]:
            if j > 1 and p.key[0] != "survivor":
                continue
            xv = x_vals[p.x_process][t_j]
            yv = y_vals[p.y_process][t_j]
            entries.append(DominanceEntry(
                stage=j, time=t_j, key=p.key,
                x_process=p.x_process, y_process=p.y_process,
                x_value=xv, y_value=yv, ok=yv >= xv,
            ))
    return entries


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DominanceReport:
    entries: tuple[DominanceEntry, ...]
    violations: tuple[DominanceEntry, ...]
    alg_final: Number
    greedy_final: Number
    headline_ok: bool

    @property
    def ok(self) -> bool:
        return self.headline_ok and not self.violations


def check_pairwise_dominance(w: AlignmentWitness, s: Schedule) -> DominanceReport:
    """Recompute every pairwise inequality and the headline inequality
    (strategy final on X <= greedy final on Y) from the witness grids.
    A violation indicates an implementation bug, never a data condition.
    """
    entries = []
    for e in w.dominance:
        xv = w.x.values[e.x_process][e.time]
        yv = w.y.values[e.y_process][e.time]
        entries.append(DominanceEntry(
            stage=e.stage, time=e.time, key=e.key,
            x_process=e.x_process, y_process=e.y_process,
            x_value=xv, y_value=yv, ok=yv >= xv,
        ))
    violations = tuple(e for e in entries if not e.ok)
    return DominanceReport(
        entries=tuple(entries),
        violations=violations,
        alg_final=w.alg_final,
        greedy_final=w.greedy_final,
        headline_ok=w.alg_final <= w.greedy_final,
    )


@dataclass(frozen=True)
class BlockCheck:
    block: int
    bijective: bool
    rows_match: bool
    history_measurable: bool

    @property
    def ok(self) -> bool:
        return self.bijective and self.rows_match and self.history_measurable


@dataclass(frozen=True)
class PermutationReport:
    blocks: tuple[BlockCheck, ...]

    @property
    def ok(self) -> bool:
        return all(b.ok for b in self.blocks)


def _pairs_from_prefix(w: AlignmentWitness, s: Schedule, alg: Strategy,
                       upto_stage: int) -> tuple[Pair, ...]:
    """Recompute the pairing fixed at t_{upto_stage} using only data up to
    that time: both grids are physically truncated, so any dependence on
    later values would crash or differ."""
    t_cut = s.times[upto_stage - 1]
    x_inc = [row[:t_cut] for row in w.x.increments]
    y_inc = [row[:t_cut] for row in w.y.increments]
    x_vals = [row[: t_cut + 1] for row in w.x.values]
    y_vals = [row[: t_cut + 1] for row in w.y.values]
    x_run = StagewiseRun(s, alg, x_vals, x_inc, detail=False)
    y_run = StagewiseRun(s, greedy_strategy(), y_vals, y_inc, detail=False)
    frozen: list[Pair] = []
    pairs: list[Pair] = []
    for j in range(1, upto_stage + 1):
        x_rec = x_run.advance()
        y_rec = y_run.advance()
        pairs = _stage_pairs(j, x_rec, y_rec, x_vals, y_vals, s.times[j - 1], frozen)
    return tuple(pairs)


def check_block_permutation(w: AlignmentWitness, s: Schedule,
                            alg: Strategy | None = None) -> PermutationReport:
    """Verify that each block of Y's increments is exactly a pairing-applied
    reordering of X's rows, and that the pairing for block j is recomputable
    from data up to t_{j-1} alone (history measurability).

    Pass the strategy to enable the recomputation check; without it the
    measurability flag is reported as True only for the trivial first block.
    """
    spans = s.block_bounds()
    checks = []
    for j in range(1, s.stages + 1):
        pairs = w.pairing.by_block[j - 1]
        xs = sorted(p.x_process for p in pairs)
        ys = sorted(p.y_process for p in pairs)
        bijective = xs == list(range(s.N)) and ys == list(range(s.N))
        lo, hi = spans[j - 1]
        rows_match = all(
            w.y.increments[p.y_process][lo:hi] == w.x.increments[p.x_process][lo:hi]
            for p in pairs
        )
        if j == 1:
            measurable = all(p.x_process == p.y_process for p in pairs)
        elif alg is not None:
            recomputed = _pairs_from_prefix(w, s, alg, j - 1)
            measurable = set(recomputed) == set(pairs)
        else:
            measurable = True
        checks.append(BlockCheck(
            block=j, bijective=bijective, rows_match=rows_match,
            history_measurable=measurable,
        ))
    return PermutationReport(blocks=tuple(checks))


# ---------------------------------------------------------------------------
# whole-space / sampled verification sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerifyResult:
    mode: str
    strategy: str
    cases: int
    dominance_violations: int
    permutation_violations: int
    inversion_failures: int
    bijective: bool
    pushforward_ok: bool
    coupling_expectation_equal: bool

    @property
    def ok(self) -> bool:
        return (
            self.dominance_violations == 0
            and self.permutation_violations == 0
            and self.inversion_failures == 0
            and self.bijective
            and self.pushforward_ok
            and self.coupling_expectation_equal
        )

    def summary(self) -> str:
        unit = "atoms" if self.mode == "exhaustive" else "realizations"
        parts = [
            "dominance " + ("OK" if self.dominance_violations == 0
                            else f"{self.dominance_violations} violations"),
            "permutation " + ("OK" if self.permutation_violations == 0
                              else f"{self.permutation_violations} violations"),
        ]
        if self.mode == "exhaustive":
            parts.append("pushforward " + ("OK" if self.bijective and self.pushforward_ok
                                           and self.coupling_expectation_equal else "FAILED"))
        parts.append("inversion " + ("OK" if self.inversion_failures == 0
                                     else f"{self.inversion_failures} failures"))
        return f"{self.cases}/{self.cases} {unit}: " + ", ".join(parts)


def verify_exhaustive(model, s: Schedule, alg: Strategy,
                      cap: int = ENUMERATION_CAP) -> VerifyResult:
    """Audit the coupling over the entire enumerated path space.

    Checks, atom by atom with exact arithmetic: pairwise and headline
    dominance, per-block permutation structure with history measurability,
    probability preservation P(image) = P(atom), global injectivity (hence
    bijectivity), exact inversion, and the change-of-variables identity
    sum P * greedy(image) = sum P * greedy(atom).
    """
    atoms = enumerate_paths(model, s.N, s.T, cap=cap)
    index = {x.key(): p for x, p in atoms}
    greedy_alg = greedy_strategy()
    dom_bad = perm_bad = inv_bad = 0
    pushforward_ok = True
    image_keys = set()
    sum_direct = 0
    sum_image = 0
    for x, prob in atoms:
        w = build_alignment(x, s, alg)
        dom = check_pairwise_dominance(w, s)
        if dom.violations or not dom.headline_ok:
            dom_bad += 1
        perm = check_block_permutation(w, s, alg=alg)
        if not perm.ok:
            perm_bad += 1
        if invert_alignment(w.y, s, alg) != x:
            inv_bad += 1
        y_key = w.y.key()
        image_keys.add(y_key)
        if index.get(y_key) != prob:
            pushforward_ok = False
        sum_image += prob * w.greedy_final
        sum_direct += prob * run_selection(x, s, greedy_alg).final_value
    return VerifyResult(
        mode="exhaustive",
        strategy=alg.describe(),
        cases=len(atoms),
        dominance_violations=dom_bad,
        permutation_violations=perm_bad,
        inversion_failures=inv_bad,
        bijective=len(image_keys) == len(atoms),
        pushforward_ok=pushforward_ok,
        coupling_expectation_equal=sum_image == sum_direct,
    )


ALL_CHECKS = ("dominance", "permutation", "inversion")


def verify_mc(model: Model, s: Schedule, alg: Strategy, reps: int,
              seed: int, checks: tuple[str, ...] = ALL_CHECKS) -> VerifyResult:
    """Audit the coupling over sampled realizations.

    `checks` selects the layers to run per realization: "dominance"
    (pairwise and headline inequalities) is cheap, "permutation" (block
    structure with the history-measurability recomputation) and
    "inversion" (full round trip) roughly triple the cost.  The
    measure-theoretic checks need an enumerable space and are reported as
    vacuously true here.
    """
    dom_bad = perm_bad = inv_bad = 0
    count = 0
    for _, inc in sample_replications(model, s.N, s.T, reps, seed):
        for r in range(inc.shape[0]):
            x = PathEnsemble.from_increment_rows(inc[r].tolist(), model_tag="mc")
            w = build_alignment(x, s, alg)
            if "dominance" in checks:
                if not w.headline_ok or not all(e.ok for e in w.dominance):
                    dom_bad += 1
            if "permutation" in checks:
                if not check_block_permutation(w, s, alg=alg).ok:
                    perm_bad += 1
            if "inversion" in checks:
                if invert_alignment(w.y, s, alg) != x:
                    inv_bad += 1
            count += 1
    return VerifyResult(
        mode="mc",
        strategy=alg.describe(),
        cases=count,
        dominance_violations=dom_bad,
        permutation_violations=perm_bad,
        inversion_failures=inv_bad,
        bijective=True,
        pushforward_ok=True,
        coupling_expectation_equal=True,
    )


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

WITNESS_CSV_HEADER = (
    "stage", "pair_key", "x_process", "y_process", "x_value", "y_value", "dominance_ok"
)


def witness_to_csv_rows(w: AlignmentWitness) -> list[tuple]:
    rows = []
    for e in w.dominance:
        rows.append((
            e.stage, "/".join(str(k) for k in e.key), e.x_process, e.y_process,
            e.x_value, e.y_value, int(e.ok),
        ))
    return rows


def permutation_summary_rows(w: AlignmentWitness, s: Schedule,
                             alg: Strategy | None = None) -> list[tuple]:
    report = check_block_permutation(w, s, alg=alg)
    return [
        (b.block, int(b.bijective), int(b.rows_match), int(b.history_measurable))
        for b in report.blocks
    ]
