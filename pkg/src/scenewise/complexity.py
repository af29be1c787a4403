"""MAC, parameter and memory accounting against the task budget.

Convolutions and linear layers are the only layers that cost MACs. Batch
norm is assumed folded into the preceding convolution at inference time, and
ReLU and pooling are treated as free, which matches the conv-dominated
accounting behind the reference budget. Kilobytes are decimal (1 kB = 1000
bytes), so the memory limit is 128,000 bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .nn.graph import LayerSpec, ModelGraph

BYTES_PER_VALUE = {8: 1, 16: 2, 32: 4}
PRECISION_BITS = {"int8": 8, "fp16": 16, "fp32": 32}
REFERENCE_INPUT = (1, 256, 65)  # one second at the default frontend settings


@dataclass(frozen=True)
class Budget:
    max_memory_bytes: int = 128_000
    max_macs: int = 30_000_000
    reference_duration_s: float = 1.0

    def __post_init__(self):
        if self.max_memory_bytes <= 0 or self.max_macs <= 0:
            raise ConfigurationError("budget limits must be positive")


@dataclass(frozen=True)
class LayerRow:
    name: str
    kind: str
    macs: int
    params: int


@dataclass
class ComplexityReport:
    rows: list[LayerRow]
    precision_bits: int
    include_bn_running_stats: bool = False
    violations: tuple[str, ...] = ()
    verdict: str | None = None
    label: str = ""

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def memory_bytes(self) -> int:
        return memory_bytes(self.total_params, self.precision_bits)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "layers": [
                {"name": r.name, "kind": r.kind, "macs": r.macs, "params": r.params} for r in self.rows
            ],
            "total_macs": self.total_macs,
            "total_params": self.total_params,
            "precision_bits": self.precision_bits,
            "memory_bytes": self.memory_bytes,
            "memory_kb": self.memory_bytes / 1000,
            "include_bn_running_stats": self.include_bn_running_stats,
            "verdict": self.verdict,
            "violations": list(self.violations),
        }

    def render(self) -> str:
        name_w = max([len("layer")] + [len(r.name) for r in self.rows])
        kind_w = max([len("kind")] + [len(r.kind) for r in self.rows])
        lines = [f"{'layer':<{name_w}}  {'kind':<{kind_w}}  {'MACs':>12}  {'params':>8}"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            lines.append(f"{r.name:<{name_w}}  {r.kind:<{kind_w}}  {r.macs:>12,}  {r.params:>8,}")
        lines.append("-" * len(lines[0]))
        lines.append(f"{'total':<{name_w}}  {'':<{kind_w}}  {self.total_macs:>12,}  {self.total_params:>8,}")
        lines.append(
            f"memory: {self.memory_bytes:,} bytes ({self.memory_bytes / 1000:.1f} kB) "
            f"at {self.precision_bits}-bit; MACs: {self.total_macs / 1e6:.2f} M"
        )
        if self.verdict is not None:
            detail = f" ({', '.join(self.violations)})" if self.violations else ""
            lines.append(f"verdict: {self.verdict.upper()}{detail}")
        return "\n".join(lines) + "\n"


def _bits(precision) -> int:
    if isinstance(precision, str):
        if precision not in PRECISION_BITS:
            raise ConfigurationError(f"unknown precision {precision!r}")
        return PRECISION_BITS[precision]
    if precision not in BYTES_PER_VALUE:
        raise ConfigurationError(f"precision must be 8, 16 or 32 bits, got {precision}")
    return int(precision)


def layer_macs(layer: LayerSpec, in_shape, out_shape) -> int:
    if layer.kind == "conv2d":
        c_out, of, ot = out_shape
        kf, kt = layer.kernel
        return of * ot * c_out * (layer.in_channels // layer.groups) * kf * kt
    if layer.kind == "linear":
        return layer.in_channels * layer.out_channels
    return 0


def layer_params(layer: LayerSpec, include_bn_running_stats=False) -> int:
    if layer.kind == "conv2d":
        kf, kt = layer.kernel
        n = layer.out_channels * (layer.in_channels // layer.groups) * kf * kt
        return n + (layer.out_channels if layer.bias else 0)
    if layer.kind == "batchnorm2d":
        return (4 if include_bn_running_stats else 2) * layer.in_channels
    if layer.kind == "linear":
        return layer.in_channels * layer.out_channels + (layer.out_channels if layer.bias else 0)
    return 0


def _layer_name(i, layer):
    return f"{i:02d}_{layer.kind}"


def count_macs(graph: ModelGraph, input_shape=None) -> tuple[list[tuple[str, int]], int]:
    """Per-layer MACs and their total for one forward pass of one clip."""
    shapes = graph.infer_shapes(tuple(input_shape) if input_shape is not None else graph.input_shape)
    rows = [
        (_layer_name(i, layer), layer_macs(layer, shapes[i], shapes[i + 1]))
        for i, layer in enumerate(graph.layers)
    ]
    return rows, sum(m for _, m in rows)


def count_params(graph: ModelGraph, include_bn_running_stats=False) -> tuple[list[tuple[str, int]], int]:
    rows = [
        (_layer_name(i, layer), layer_params(layer, include_bn_running_stats))
        for i, layer in enumerate(graph.layers)
    ]
    return rows, sum(p for _, p in rows)


def memory_bytes(total_params: int, precision) -> int:
    return total_params * BYTES_PER_VALUE[_bits(precision)]


def audit(graph: ModelGraph, precision="fp16", input_shape=None, include_bn_running_stats=False,
          budget: Budget | None = None, label="") -> ComplexityReport:
    """Build a ComplexityReport and, unless ``budget`` is False, its verdict."""
    shapes = graph.infer_shapes(tuple(input_shape) if input_shape is not None else graph.input_shape)
    rows = [
        LayerRow(
            _layer_name(i, layer), layer.kind,
            layer_macs(layer, shapes[i], shapes[i + 1]),
            layer_params(layer, include_bn_running_stats),
        )
        for i, layer in enumerate(graph.layers)
    ]
    report = ComplexityReport(rows, _bits(precision), include_bn_running_stats, label=label)
    if budget is not False:
        check_budget(report, budget or Budget())
    return report


@dataclass(frozen=True)
class Verdict:
    passed: bool
    violations: tuple[str, ...] = field(default=())

    def __bool__(self):
        return self.passed


def check_figures(memory: int, macs: int, budget: Budget | None = None) -> Verdict:
    """Verdict for raw (memory bytes, MACs) figures."""
    budget = budget or Budget()
    violations = []
    if memory > budget.max_memory_bytes:
        violations.append("memory")
    if macs > budget.max_macs:
        violations.append("macs")
    return Verdict(not violations, tuple(violations))


def check_budget(report: ComplexityReport, budget: Budget | None = None) -> Verdict:
    """Apply ``budget`` to ``report``; records and returns the verdict."""
    verdict = check_figures(report.memory_bytes, report.total_macs, budget)
    report.violations = verdict.violations
    report.verdict = "pass" if verdict.passed else "fail"
    return verdict


def write_report(report: ComplexityReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
