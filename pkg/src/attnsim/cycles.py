"""Closed-form cycle accounting for the base and approximate pipelines."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "CycleParams",
    "CycleReport",
    "base_latency",
    "base_throughput",
    "base_report",
    "approx_latency",
    "approx_throughput",
    "approx_report",
]


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class CycleParams:
    overhead_cycles: int = 27   # constant pipeline overhead
    refill_depth: int = 4       # frontier refill pipeline depth
    scan_width: int = 16        # greedy-score entries scanned per cycle
    div_cycles: int = 7
    mul_acc_cycles: int = 2

    def __post_init__(self):
        if self.overhead_cycles < 0:
            raise ValueError("overhead_cycles must be >= 0")
        for name in ("refill_depth", "scan_width", "div_cycles", "mul_acc_cycles"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


DEFAULT_PARAMS = CycleParams()


@dataclass(frozen=True)
class CycleReport:
    latency_cycles: int
    throughput_cycles_per_query: int
    breakdown: dict

    def __post_init__(self):
        if self.latency_cycles < 0 or self.throughput_cycles_per_query < 0:
            raise ValueError("cycle counts must be nonnegative")
        if any(v < 0 for v in self.breakdown.values()):
            raise ValueError("breakdown entries must be nonnegative")
        if self.latency_cycles < self.throughput_cycles_per_query:
            raise ValueError("latency cannot be below per-query throughput")


def base_latency(n: int) -> int:
    """Pipeline latency of the dense three-stage path: 3n + 27 cycles."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 3 * n + 27


def base_throughput(n: int) -> int:
    """Cycles per query of the dense path: n + 9 (n rows, 7 divide, 2 MAC)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return n + 9


def base_report(n: int, params: CycleParams = DEFAULT_PARAMS) -> CycleReport:
    per_module = n + params.div_cycles + params.mul_acc_cycles
    return CycleReport(
        latency_cycles=3 * per_module,
        throughput_cycles_per_query=per_module,
        breakdown={
            "dot_product": per_module,
            "exponent": per_module,
            "output": per_module,
        },
    )


def approx_latency(iterations: int, candidates: int, survivors: int,
                   params: CycleParams = DEFAULT_PARAMS) -> int:
    """Latency of the approximate path: iterations + candidates + 2*survivors + overhead."""
    if iterations < 0 or candidates < 0 or survivors < 0:
        raise ValueError("counts must be nonnegative")
    if survivors > candidates:
        raise ValueError("survivors cannot exceed candidates")
    return iterations + candidates + 2 * survivors + params.overhead_cycles


def approx_throughput(iterations: int, n: int,
                      params: CycleParams = DEFAULT_PARAMS) -> int:
    """Cycles per query, dominated by the selector: iterations plus the score scan."""
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    if n < 1:
        raise ValueError("n must be >= 1")
    return iterations + _ceil_div(n, params.scan_width)


def approx_report(iterations: int, candidates: int, survivors: int, n: int,
                  params: CycleParams = DEFAULT_PARAMS, dim=None) -> CycleReport:
    """Report for one approximate query.

    Latency sums candidate_iterations, dot_product, post_scoring,
    exponent_output, and pipeline_overhead.  The greedy-score scan and the
    frontier-initialization multiply count are reported separately so either
    accounting convention can be reconstructed.
    """
    breakdown = {
        "candidate_iterations": iterations,
        "dot_product": candidates,
        "post_scoring": survivors,
        "exponent_output": survivors,
        "pipeline_overhead": params.overhead_cycles,
        "greedy_scan": _ceil_div(n, params.scan_width),
    }
    if dim is not None:
        breakdown["init_refill_mults"] = 2 * params.refill_depth * int(dim)
    return CycleReport(
        latency_cycles=approx_latency(iterations, candidates, survivors, params),
        throughput_cycles_per_query=approx_throughput(iterations, n, params),
        breakdown=breakdown,
    )
