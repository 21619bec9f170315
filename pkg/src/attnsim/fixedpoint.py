"""Signed fixed-point formats with saturating quantization and exact raw arithmetic.

Raw values are plain integers counting steps of 2**-frac_bits.  Widths are
validated rather than packed, so every operation is exact integer math
followed by at most one round-to-nearest-even rescale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ContractViolation",
    "QFormat",
    "QValue",
    "QArray",
    "PrecisionSchedule",
    "ceil_log2",
    "make_schedule",
    "quantize",
    "quantize_array",
    "q_add",
    "q_mul",
    "q_div",
    "to_real",
]

# Schedules are refused outright if any stage would not fit an int64 raw value.
_MAX_TOTAL_BITS = 60

# Array quantization goes through float64, which is only exact up to 2**52.
_MAX_ARRAY_QUANT_BITS = 52


class ContractViolation(RuntimeError):
    """An internal invariant was broken (distinct from bad user input)."""


def ceil_log2(x: int) -> int:
    """Smallest w with 2**w >= x.  ceil_log2(1) == 0."""
    if x < 1:
        raise ValueError(f"ceil_log2 requires x >= 1, got {x}")
    return (int(x) - 1).bit_length()


def _div_rne(num: int, den: int) -> int:
    """Divide with round-to-nearest, ties to even.  den must be positive."""
    # Floored divmod keeps 0 <= r < den for either sign of num.
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q & 1):
        q += 1
    return q


def _rescale(raw: int, frac_from: int, frac_to: int) -> int:
    if frac_to >= frac_from:
        return raw << (frac_to - frac_from)
    return _div_rne(raw, 1 << (frac_from - frac_to))


@dataclass(frozen=True)
class QFormat:
    """Fixed-point layout: int_bits integer bits, frac_bits fraction bits, implicit sign."""

    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.int_bits < 0 or self.frac_bits < 0:
            raise ValueError("bit counts must be nonnegative")
        if self.int_bits + self.frac_bits < 1:
            raise ValueError("need at least one magnitude bit")

    @property
    def total_bits(self) -> int:
        return self.int_bits + self.frac_bits

    @property
    def max_raw(self) -> int:
        return (1 << self.total_bits) - 1

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_value(self) -> float:
        """Largest representable magnitude, 2**int_bits - 2**-frac_bits."""
        return math.ldexp(self.max_raw, -self.frac_bits)

    def widen(self, extra_int_bits: int = 1) -> "QFormat":
        return QFormat(self.int_bits + extra_int_bits, self.frac_bits)


@dataclass(frozen=True)
class QValue:
    """One fixed-point number: raw steps of 2**-frac_bits in a given format."""

    raw: int
    fmt: QFormat

    def __post_init__(self):
        object.__setattr__(self, "raw", int(self.raw))
        if abs(self.raw) > self.fmt.max_raw:
            raise ValueError(f"raw {self.raw} outside range of {self.fmt}")

    @property
    def value(self) -> float:
        return math.ldexp(self.raw, -self.fmt.frac_bits)

    def to_real(self) -> float:
        return self.value


def to_real(v: QValue) -> float:
    """Exact real value of v, raw * 2**-frac_bits."""
    return v.value


@dataclass(frozen=True)
class QArray:
    """An int64 array of raw values sharing one format.  Immutable after construction."""

    raw: np.ndarray
    fmt: QFormat

    def __post_init__(self):
        arr = np.array(self.raw, dtype=np.int64)
        if arr.size and int(np.abs(arr).max()) > self.fmt.max_raw:
            raise ValueError(f"raw values outside range of {self.fmt}")
        arr.setflags(write=False)
        object.__setattr__(self, "raw", arr)

    @property
    def shape(self):
        return self.raw.shape

    def __len__(self) -> int:
        return len(self.raw)

    def __getitem__(self, idx) -> QValue:
        return QValue(int(self.raw[idx]), self.fmt)

    def to_real(self) -> np.ndarray:
        return self.raw.astype(np.float64) * self.fmt.resolution


def quantize(x: float, fmt: QFormat) -> QValue:
    """Round x to the nearest multiple of 2**-frac_bits (ties to even), saturating."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    bound = fmt.max_value
    if x >= bound:
        raw = fmt.max_raw
    elif x <= -bound:
        raw = -fmt.max_raw
    else:
        # Scaling by a power of two is exact in binary floating point, and
        # Python's round() is round-half-even.
        raw = round(x * (1 << fmt.frac_bits))
    return QValue(raw, fmt)


def quantize_array(x, fmt: QFormat) -> QArray:
    """Vectorized quantize over an array, same semantics as the scalar path."""
    if fmt.total_bits > _MAX_ARRAY_QUANT_BITS:
        raise ValueError(f"{fmt} too wide for float64-based array quantization")
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize non-finite values")
    scaled = arr * float(1 << fmt.frac_bits)
    raw = np.rint(scaled)  # np.rint rounds half to even, like round()
    raw = np.clip(raw, -float(fmt.max_raw), float(fmt.max_raw))
    return QArray(raw.astype(np.int64), fmt)


def _saturate(raw: int, fmt: QFormat) -> int:
    m = fmt.max_raw
    if raw > m:
        return m
    if raw < -m:
        return -m
    return raw


def q_add(a: QValue, b: QValue, out: QFormat) -> QValue:
    """Exact sum of a and b rendered into `out` (round-to-nearest-even, saturating)."""
    f = max(a.fmt.frac_bits, b.fmt.frac_bits)
    s = (a.raw << (f - a.fmt.frac_bits)) + (b.raw << (f - b.fmt.frac_bits))
    return QValue(_saturate(_rescale(s, f, out.frac_bits), out), out)


def q_mul(a: QValue, b: QValue, out: QFormat) -> QValue:
    """Exact product of a and b rendered into `out`."""
    prod = a.raw * b.raw
    f = a.fmt.frac_bits + b.fmt.frac_bits
    return QValue(_saturate(_rescale(prod, f, out.frac_bits), out), out)


def q_div(a: QValue, b: QValue, out: QFormat) -> QValue:
    """Quotient a / b rendered into `out`.  The divisor must be at least 1."""
    if b.raw < (1 << b.fmt.frac_bits):
        raise ContractViolation(
            f"divisor {b.value} below 1; quotient precision not guaranteed"
        )
    e = b.fmt.frac_bits - a.fmt.frac_bits + out.frac_bits
    if e >= 0:
        raw = _div_rne(a.raw << e, b.raw)
    else:
        raw = _div_rne(a.raw, b.raw << -e)
    return QValue(_saturate(raw, out), out)


@dataclass(frozen=True)
class PrecisionSchedule:
    """Per-stage formats for an n-row, d-dim pipeline quantized to (int_bits, frac_bits).

    Widths grow along the pipeline so that exact integer arithmetic never
    overflows: products need doubled bits, a d-way sum needs ceil(log2(d))
    more, the max subtraction one more, and the output accumulates n weighted
    rows of f-bit values under 2f-bit weights.
    """

    rows: int
    dim: int
    int_bits: int
    frac_bits: int
    input: QFormat
    temp: QFormat
    dot_product: QFormat
    dot_product_shifted: QFormat
    score: QFormat
    expsum: QFormat
    weight: QFormat
    output: QFormat

    # The exponent path emits exactly 1.0 for the running-max row, and an
    # all-ties expsum reaches exactly n.  Those values sit one code point
    # above the nominal score/expsum/weight ranges, so the register variants
    # carry one extra integer bit.
    @property
    def score_reg(self) -> QFormat:
        return self.score.widen()

    @property
    def expsum_reg(self) -> QFormat:
        return self.expsum.widen()

    @property
    def weight_reg(self) -> QFormat:
        return self.weight.widen()


def make_schedule(n: int, d: int, i: int, f: int) -> PrecisionSchedule:
    """Derive all stage formats for an n x d problem with i integer / f fraction bits.

    n and d are rounded up to powers of two for width derivation only.
    """
    for name, v in (("n", n), ("d", d), ("i", i), ("f", f)):
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    n, d, i, f = int(n), int(d), int(i), int(f)
    log_d = ceil_log2(d)
    log_n = ceil_log2(n)
    sched = PrecisionSchedule(
        rows=n,
        dim=d,
        int_bits=i,
        frac_bits=f,
        input=QFormat(i, f),
        temp=QFormat(2 * i, 2 * f),
        dot_product=QFormat(log_d + 2 * i, 2 * f),
        dot_product_shifted=QFormat(log_d + 2 * i + 1, 2 * f),
        score=QFormat(0, 2 * f),
        expsum=QFormat(log_n, 2 * f),
        weight=QFormat(0, 2 * f),
        output=QFormat(i + log_n, 3 * f),
    )
    widest = max(
        sched.dot_product_shifted.total_bits + 1,
        sched.output.total_bits + 1,
        4 * f,  # exponent table product before its single rounding
    )
    if widest > _MAX_TOTAL_BITS:
        raise ValueError(f"schedule for n={n} d={d} i={i} f={f} exceeds 64-bit raw domain")
    return sched
