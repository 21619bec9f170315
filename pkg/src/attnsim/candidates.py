"""Greedy candidate selection over a column-sorted key matrix, plus post-scoring.

Preprocessing sorts every key column once (off the query critical path).
At query time the selector runs a bounded number of iterations, each popping
the current largest component product from a max frontier (one entry per
column) and the current smallest from a min frontier.  Positive pops
accumulate into a per-row greedy score via the max side, negative pops via
the min side; rows with a positive final score become candidates.  The
frontiers are a k-way merge of the sorted columns, so the pop sequences are
globally sorted.

naive_greedy_oracle is an independent check: it materializes all n*d
component products, sorts them globally, and replays the same budgeted
iteration.  Within a column, equal products are ordered the way the frontier
traversal visits them, which is what makes the two routes match exactly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import pipeline
from .cycles import CycleParams, CycleReport, DEFAULT_PARAMS, approx_report
from .fixedpoint import PrecisionSchedule, QArray, QValue, quantize, quantize_array

__all__ = [
    "SelectionConfig",
    "SortedKey",
    "CandidateSet",
    "GreedyState",
    "ApproxResult",
    "preprocess_key",
    "candidate_selection",
    "naive_greedy_oracle",
    "post_scoring_select",
    "attention_approx",
]


@dataclass(frozen=True)
class SelectionConfig:
    """iterations: pop budget per frontier; keep_percent: post-scoring weight floor
    as a percentage of the maximum weight; heuristic: skip the min pop while the
    cumulative popped sum is negative."""

    iterations: int
    keep_percent: float = 100.0
    heuristic: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 < self.keep_percent <= 100.0:
            raise ValueError("keep_percent must be in (0, 100]")


@dataclass(frozen=True)
class SortedKey:
    """Per-column ascending (value, row) pairs; ties sorted by ascending row."""

    values: np.ndarray  # (n, d), column c ascending
    rows: np.ndarray    # (n, d) int64 row ids

    def __post_init__(self):
        for arr in (self.values, self.rows):
            arr.setflags(write=False)
        if self.values.shape != self.rows.shape or self.values.ndim != 2:
            raise ValueError("values and rows must be matching 2-D arrays")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def preprocess_key(key) -> SortedKey:
    """Sort every column of the key matrix, remembering original row ids."""
    key = np.array(key, dtype=np.float64)
    if key.ndim != 2 or key.shape[0] < 1 or key.shape[1] < 1:
        raise ValueError(f"key must be 2-D and nonempty, got shape {key.shape}")
    order = np.argsort(key, axis=0, kind="stable")
    values = np.take_along_axis(key, order, axis=0)
    return SortedKey(values=values, rows=order.astype(np.int64))


@dataclass(frozen=True)
class CandidateSet:
    rows: tuple          # ascending row ids
    greedy_scores: tuple  # aligned with rows
    fallback: bool = False


class GreedyState:
    """Frontier pointers, priority queues, and greedy accumulator for one query.

    Heap entries are (signed score, col, row): the max queue stores negated
    scores so both queues pop through heapq, and score ties break by
    (col, row) ascending.
    """

    def __init__(self, sorted_key: SortedKey, query):
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (sorted_key.d,):
            raise ValueError(
                f"query length {query.shape} does not match key dim {sorted_key.d}"
            )
        self._vals = sorted_key.values
        self._rows = sorted_key.rows
        self._query = query
        n, d = sorted_key.n, sorted_key.d
        self._n = n
        self.max_ptr = [n - 1 if query[c] > 0 else 0 for c in range(d)]
        self.min_ptr = [0 if query[c] > 0 else n - 1 for c in range(d)]
        self.max_queue = []
        self.min_queue = []
        for c in range(d):
            p = self.max_ptr[c]
            self.max_queue.append(
                (-float(self._vals[p, c] * query[c]), c, int(self._rows[p, c]))
            )
            p = self.min_ptr[c]
            self.min_queue.append(
                (float(self._vals[p, c] * query[c]), c, int(self._rows[p, c]))
            )
        heapq.heapify(self.max_queue)
        heapq.heapify(self.min_queue)
        self.greedy_score = {}
        self.cum_sum = 0.0

    def pop_max(self):
        """Largest frontier product, or None when every column is exhausted.
        Advances the popped column toward smaller products and refills."""
        if not self.max_queue:
            return None
        neg, col, row = heapq.heappop(self.max_queue)
        p = self.max_ptr[col] + (-1 if self._query[col] > 0 else 1)
        self.max_ptr[col] = p
        if 0 <= p < self._n:
            heapq.heappush(
                self.max_queue,
                (-float(self._vals[p, col] * self._query[col]), col, int(self._rows[p, col])),
            )
        return -neg, row

    def pop_min(self):
        """Smallest frontier product; advances the popped column toward larger ones."""
        if not self.min_queue:
            return None
        score, col, row = heapq.heappop(self.min_queue)
        p = self.min_ptr[col] + (1 if self._query[col] > 0 else -1)
        self.min_ptr[col] = p
        if 0 <= p < self._n:
            heapq.heappush(
                self.min_queue,
                (float(self._vals[p, col] * self._query[col]), col, int(self._rows[p, col])),
            )
        return score, row

    def run_iterations(self, iterations: int, heuristic: bool = False) -> None:
        """Per iteration: one max pop, then one min pop unless the heuristic
        suppresses it while the cumulative popped sum is negative.  A max pop
        accumulates only positive products, a min pop only negative ones.
        Budgets beyond n*d simply exhaust the frontiers early."""
        greedy = self.greedy_score
        for _ in range(iterations):
            popped = self.pop_max()
            if popped is not None:
                score, row = popped
                if score > 0:
                    greedy[row] = greedy.get(row, 0.0) + score
                self.cum_sum += score
            if heuristic and self.cum_sum < 0:
                continue
            popped = self.pop_min()
            if popped is not None:
                score, row = popped
                if score < 0:
                    greedy[row] = greedy.get(row, 0.0) + score
                self.cum_sum += score


def _select_candidates(greedy: dict, n: int) -> CandidateSet:
    positive = sorted(r for r, s in greedy.items() if s > 0)
    if positive:
        return CandidateSet(
            rows=tuple(positive),
            greedy_scores=tuple(greedy[r] for r in positive),
            fallback=False,
        )
    if greedy:
        # No positive scores: keep the single best-scoring row, lowest id on tie.
        best = min(greedy, key=lambda r: (-greedy[r], r))
        return CandidateSet(rows=(best,), greedy_scores=(greedy[best],), fallback=True)
    # Nothing was ever accumulated (e.g. zero budget): keep everything.
    return CandidateSet(rows=tuple(range(n)), greedy_scores=(0.0,) * n, fallback=True)


def candidate_selection(sorted_key: SortedKey, query, cfg: SelectionConfig) -> CandidateSet:
    """Budgeted greedy search; returns rows with positive greedy score, ascending."""
    state = GreedyState(sorted_key, query)
    state.run_iterations(cfg.iterations, cfg.heuristic)
    return _select_candidates(state.greedy_score, sorted_key.n)


def naive_greedy_oracle(key, query, cfg: SelectionConfig) -> CandidateSet:
    """Reference selection via a global sort of the full component-product matrix.

    Iteration k consumes the k-th largest product (max side) and the k-th
    smallest (min side) under the same positivity, heuristic, and exhaustion
    rules as candidate_selection.
    """
    key = np.asarray(key, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if key.ndim != 2 or query.shape != (key.shape[1],):
        raise ValueError("key must be n x d with a length-d query")
    n, d = key.shape
    products = key * query
    max_seq = []
    min_seq = []
    for c in range(d):
        order = np.argsort(key[:, c], kind="stable")  # ascending (value, row)
        fwd = [(float(products[r, c]), c, int(r)) for r in order]
        if query[c] > 0:
            max_seq.extend(reversed(fwd))
            min_seq.extend(fwd)
        else:
            max_seq.extend(fwd)
            min_seq.extend(reversed(fwd))
    # Stable sorts keep same-column ties in frontier-traversal order.
    max_seq.sort(key=lambda e: (-e[0], e[1]))
    min_seq.sort(key=lambda e: (e[0], e[1]))

    greedy = {}
    cum = 0.0
    mi = 0
    for it in range(cfg.iterations):
        if it < len(max_seq):
            score, _, row = max_seq[it]
            if score > 0:
                greedy[row] = greedy.get(row, 0.0) + score
            cum += score
        if cfg.heuristic and cum < 0:
            continue
        if mi < len(min_seq):
            score, _, row = min_seq[mi]
            mi += 1
            if score < 0:
                greedy[row] = greedy.get(row, 0.0) + score
            cum += score
    return _select_candidates(greedy, n)


def post_scoring_select(entries, keep_percent: float):
    """Keep (row, score) pairs within ln(100 / keep_percent) of the best score.

    A dropped row's softmax weight is below keep_percent% of the maximum
    weight.  Input order is preserved.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("post-scoring needs at least one candidate")
    if not 0.0 < keep_percent <= 100.0:
        raise ValueError("keep_percent must be in (0, 100]")
    threshold = math.log(100.0 / keep_percent)
    smax = max(s for _, s in entries)
    return [(r, s) for r, s in entries if smax - s <= threshold]


@dataclass(frozen=True)
class ApproxResult:
    output: QArray
    candidate_count: int
    survivor_count: int
    candidates: CandidateSet
    cycles: CycleReport
    survivor_rows: tuple
    expsum: QValue
    dp_max: QValue


def attention_approx(key, value, query, sched: PrecisionSchedule,
                     luts: pipeline.ExpLutPair, cfg: SelectionConfig, *,
                     sorted_key: SortedKey = None,
                     cycle_params: CycleParams = DEFAULT_PARAMS) -> ApproxResult:
    """Candidate selection, then the quantized pipeline restricted to survivors.

    Selection runs on the real-valued key and query; quantization applies
    from the dot-product stage onward.  Post-scoring compares quantized dot
    products against the threshold rounded onto the shifted-format grid.
    Pass a precomputed sorted_key to keep preprocessing off the query path.
    """
    key = np.asarray(key, dtype=np.float64)
    value = np.asarray(value, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if key.shape != value.shape:
        raise ValueError(f"key {key.shape} and value {value.shape} shapes differ")
    if key.shape != (sched.rows, sched.dim):
        raise ValueError(f"key shape {key.shape} does not match schedule "
                         f"({sched.rows}, {sched.dim})")
    sk = sorted_key if sorted_key is not None else preprocess_key(key)

    cand = candidate_selection(sk, query, cfg)
    rows = list(cand.rows)

    key_q = quantize_array(key, sched.input)
    value_q = quantize_array(value, sched.input)
    query_q = quantize_array(query, sched.input)

    sub_key = QArray(key_q.raw[rows], sched.input)
    dp, dp_max = pipeline.dot_product_stage(sub_key, query_q, sched)

    threshold = math.log(100.0 / cfg.keep_percent)
    t_raw = quantize(threshold, sched.dot_product_shifted).raw
    keep = (int(dp_max.raw) - dp.raw) <= t_raw
    survivor_rows = tuple(rows[i] for i in range(len(rows)) if keep[i])

    dp_kept = QArray(dp.raw[keep], sched.dot_product)
    scores, expsum = pipeline.exponent_stage(dp_kept, dp_max, luts)
    sub_value = QArray(value_q.raw[list(survivor_rows)], sched.input)
    output = pipeline.output_stage(scores, expsum, sub_value, sched)

    cycles = approx_report(cfg.iterations, len(rows), len(survivor_rows),
                           n=sched.rows, params=cycle_params, dim=sched.dim)
    return ApproxResult(
        output=output,
        candidate_count=len(rows),
        survivor_count=len(survivor_rows),
        candidates=cand,
        cycles=cycles,
        survivor_rows=survivor_rows,
        expsum=expsum,
        dp_max=dp_max,
    )
