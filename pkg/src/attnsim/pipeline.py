"""Quantized three-stage attention pipeline with a two-table exponent lookup.

Stage 1 computes integer dot products and tracks their running maximum.
Stage 2 subtracts the maximum (every shifted value is then <= 0) and reads
e**-x from two lookup tables addressed by the high and low halves of the
magnitude's bit pattern; the table product is rounded once.  Stage 3
normalizes by the score sum and accumulates the weighted value rows.

All arithmetic is exact integer math with a single round-to-nearest-even
step per rounding point, so results are bit-deterministic.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .fixedpoint import (
    ContractViolation,
    PrecisionSchedule,
    QArray,
    QFormat,
    QValue,
    _div_rne,
    ceil_log2,
)

__all__ = [
    "ExpTable",
    "ExpLutPair",
    "PipelineResult",
    "build_exp_luts",
    "exp_lut_eval",
    "dot_product_stage",
    "exponent_stage",
    "output_stage",
    "attention_base",
]

# Tables at most this wide are fully materialized; wider ones compute entries
# on first use and cache them (almost all of a wide table decays to zero and
# is never read).
_EAGER_TABLE_BITS = 12


class ExpTable:
    """Entries e**-(step_units * index * 2**-frac_bits), rounded to the 2**-frac_bits grid.

    Entry 0 is exactly 1.0 (raw 2**frac_bits), so entries live in the
    score-register format with one integer headroom bit.
    """

    __slots__ = ("bits", "step_units", "frac_bits", "_entries", "_cache")

    def __init__(self, bits: int, step_units: int, frac_bits: int):
        if bits < 1 or step_units < 1 or frac_bits < 1:
            raise ValueError("bits, step_units, frac_bits must be positive")
        self.bits = bits
        self.step_units = step_units
        self.frac_bits = frac_bits
        if bits <= _EAGER_TABLE_BITS:
            self._entries = [self._compute(i) for i in range(1 << bits)]
            self._cache = None
        else:
            self._entries = None
            self._cache = {}

    def __len__(self) -> int:
        return 1 << self.bits

    def _compute(self, index: int) -> int:
        arg = (index * self.step_units) * math.ldexp(1.0, -self.frac_bits)
        return round(math.exp(-arg) * (1 << self.frac_bits))

    def raw(self, index: int) -> int:
        if not 0 <= index < (1 << self.bits):
            raise ValueError(f"index {index} outside {self.bits}-bit table")
        if self._entries is not None:
            return self._entries[index]
        r = self._cache.get(index)
        if r is None:
            r = self._cache[index] = self._compute(index)
        return r

    def __getitem__(self, index: int) -> QValue:
        return QValue(self.raw(index), QFormat(1, self.frac_bits))


@functools.lru_cache(maxsize=None)
def _exp_table(bits: int, step_units: int, frac_bits: int) -> ExpTable:
    return ExpTable(bits, step_units, frac_bits)


@dataclass(frozen=True)
class ExpLutPair:
    """High/low half tables whose product reproduces e**-x for a split bit pattern."""

    hi_table: ExpTable
    lo_table: ExpTable
    hi_bits: int
    lo_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.hi_bits < 1 or self.lo_bits < 1:
            raise ValueError("both halves of the split need at least one bit")
        ok = (
            self.hi_table.bits == self.hi_bits
            and self.lo_table.bits == self.lo_bits
            and self.hi_table.step_units == (1 << self.lo_bits)
            and self.lo_table.step_units == 1
            and self.hi_table.frac_bits == self.frac_bits
            and self.lo_table.frac_bits == self.frac_bits
        )
        if not ok:
            raise ValueError("tables inconsistent with the declared split")

    @property
    def input_bits(self) -> int:
        return self.hi_bits + self.lo_bits

    @property
    def score_format(self) -> QFormat:
        return QFormat(1, self.frac_bits)


def make_exp_luts(hi_bits: int, lo_bits: int, frac_bits: int) -> ExpLutPair:
    """Construct a table pair for a (hi_bits + lo_bits)-wide magnitude."""
    return ExpLutPair(
        hi_table=_exp_table(hi_bits, 1 << lo_bits, frac_bits),
        lo_table=_exp_table(lo_bits, 1, frac_bits),
        hi_bits=hi_bits,
        lo_bits=lo_bits,
        frac_bits=frac_bits,
    )


def build_exp_luts(sched: PrecisionSchedule, split=None) -> ExpLutPair:
    """Table pair covering the full shifted dot-product magnitude of `sched`.

    `split` is (hi_bits, lo_bits) and must sum to the shifted format's total
    width; by default the width is halved with the extra bit on the high side.
    """
    total = sched.dot_product_shifted.total_bits
    if split is None:
        lo = total // 2
        split = (total - lo, lo)
    hi_bits, lo_bits = split
    if hi_bits + lo_bits != total:
        raise ValueError(
            f"split {split} does not cover the {total}-bit shifted magnitude"
        )
    return make_exp_luts(hi_bits, lo_bits, sched.dot_product_shifted.frac_bits)


def exp_lut_eval(x_mag: int, luts: ExpLutPair) -> QValue:
    """e**-x for a nonnegative magnitude of x_mag grid units, via the split tables.

    The two entries are multiplied exactly (2*frac_bits fraction bits) and
    rounded once back to the score grid.
    """
    x_mag = int(x_mag)
    if not 0 <= x_mag < (1 << luts.input_bits):
        raise ValueError(f"magnitude {x_mag} not expressible in {luts.input_bits} bits")
    hi = luts.hi_table.raw(x_mag >> luts.lo_bits)
    lo = luts.lo_table.raw(x_mag & ((1 << luts.lo_bits) - 1))
    raw = _div_rne(hi * lo, 1 << luts.frac_bits)
    return QValue(raw, luts.score_format)


@dataclass(frozen=True)
class PipelineResult:
    output: QArray  # d entries, output format
    scores: QArray  # n entries on the score grid
    expsum: QValue
    dp_max: QValue
    dp: QArray  # n dot products, dot_product format


def dot_product_stage(key: QArray, query: QArray, sched: PrecisionSchedule):
    """Exact per-row dot products and their maximum.

    Inputs must already be quantized to the schedule's input format; the sum
    of d doubled-width products fits the dot_product format by construction.
    """
    if key.fmt != sched.input or query.fmt != sched.input:
        raise ValueError("key and query must be quantized to the schedule input format")
    if key.raw.ndim != 2 or query.raw.ndim != 1:
        raise ValueError("key must be 2-D and query 1-D")
    if key.shape[1] != query.shape[0]:
        raise ValueError(f"key has {key.shape[1]} columns but query has {query.shape[0]}")
    dp_raw = key.raw @ query.raw  # frac 2f, exact in int64
    if int(np.abs(dp_raw).max()) > sched.dot_product.max_raw:
        raise ContractViolation("dot product overflowed its scheduled width")
    dp = QArray(dp_raw, sched.dot_product)
    return dp, QValue(int(dp_raw.max()), sched.dot_product)


def exponent_stage(dp: QArray, dp_max: QValue, luts: ExpLutPair):
    """Scores e**-(dp_max - dp[i]) and their sum.

    The row holding the maximum scores exactly 1, so the sum is always >= 1.
    """
    if dp.fmt.frac_bits != luts.frac_bits:
        raise ValueError("dot products and tables disagree on the fraction grid")
    n = len(dp)
    mags = int(dp_max.raw) - dp.raw
    if mags.size == 0:
        raise ValueError("need at least one dot product")
    if int(mags.min()) < 0:
        raise ContractViolation("dp_max below some dot product")
    if int(mags.max()) >= (1 << luts.input_bits):
        raise ContractViolation("shifted magnitude outside the table domain")
    raws = np.empty(n, dtype=np.int64)
    for i in range(n):
        raws[i] = exp_lut_eval(int(mags[i]), luts).raw
    expsum_raw = int(raws.sum())
    one = 1 << luts.frac_bits
    if expsum_raw < one:
        raise ContractViolation("score sum below 1")
    scores = QArray(raws, luts.score_format)
    expsum = QValue(expsum_raw, QFormat(ceil_log2(n) + 1, luts.frac_bits))
    return scores, expsum


def output_stage(scores: QArray, expsum: QValue, value: QArray, sched: PrecisionSchedule) -> QArray:
    """Normalize scores into weights and accumulate the weighted value rows.

    Weight products carry 3f fraction bits, exactly the output format, so the
    accumulation itself never rounds.
    """
    one = 1 << expsum.fmt.frac_bits
    if expsum.raw < one:
        raise ContractViolation(f"expsum {expsum.value} below 1")
    if value.fmt != sched.input:
        raise ValueError("value matrix must be quantized to the schedule input format")
    if scores.fmt.frac_bits != 2 * sched.frac_bits:
        raise ValueError("scores are not on the schedule's score grid")
    n = len(scores)
    if value.raw.ndim != 2 or value.shape[0] != n:
        raise ValueError(f"value must have one row per score, got {value.shape}")
    wf = sched.weight_reg.frac_bits
    weights = np.empty(n, dtype=np.int64)
    for i in range(n):
        weights[i] = _div_rne(int(scores.raw[i]) << wf, int(expsum.raw))
    out_raw = weights @ value.raw  # frac 2f + f = 3f, exact
    if int(np.abs(out_raw).max()) > sched.output.max_raw:
        raise ContractViolation("output overflowed its scheduled width")
    return QArray(out_raw, sched.output)


def attention_base(key: QArray, value: QArray, query: QArray,
                   sched: PrecisionSchedule, luts: ExpLutPair) -> PipelineResult:
    """Run the full quantized pipeline over every row."""
    if key.shape != value.shape:
        raise ValueError(f"key {key.shape} and value {value.shape} shapes differ")
    dp, dp_max = dot_product_stage(key, query, sched)
    scores, expsum = exponent_stage(dp, dp_max, luts)
    output = output_stage(scores, expsum, value, sched)
    return PipelineResult(output=output, scores=scores, expsum=expsum, dp_max=dp_max, dp=dp)
