"""Morphing a single convolutional layer into a target module.

The engine first reduces the target with reverse atomic operations. A
simple morphable target is rebuilt from a single edge by replaying the
recorded steps, numerically: parallel expansions use the exact filter
split, serial expansions the alternating factorization. A complex target
keeps an irreducible core; the core is solved directly against the padded
parent filter and the reducible shell (if any) is replayed on top.

Every result carries two residuals: the algebraic one (distance between
the assigned module's equivalent filter and the padded parent) and a
functional one (forward evaluation against the parent convolution on
random blobs, compared on the interior unaffected by boundary padding).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .executor import forward, linear_module
from .graph import ModuleGraph
from .reduction import Classification, ReductionResult, StepKind, reduce_module
from .solver import (
    InfeasibleError,
    SolverConfig,
    SolveReport,
    SplitError,
    decompose_type_i,
    solve_irreducible,
    split_type_ii,
)
from .tensors import Blob, DimensionError, Filter, conv_blob, zero_pad

__all__ = [
    "MorphRequest",
    "MorphResult",
    "PhaseRecord",
    "Strategy",
    "StrategyError",
    "morph",
    "verify_equation",
    "verify_function",
]


class Strategy(str, enum.Enum):
    AUTO = "AUTO"
    REPLAY_ONLY = "REPLAY_ONLY"
    DIRECT_SOLVE = "DIRECT_SOLVE"


class StrategyError(ValueError):
    """The requested strategy cannot handle the target module."""


@dataclass(frozen=True)
class MorphRequest:
    parent_filter: Filter
    target: ModuleGraph
    config: SolverConfig = SolverConfig()
    strategy: Strategy = Strategy.AUTO


@dataclass(frozen=True)
class PhaseRecord:
    """One engine action: pad, split, decompose, core solve, or fallback."""

    phase: str
    detail: str
    report: SolveReport | None = None

    def to_json(self) -> dict:
        doc = {"phase": self.phase, "detail": self.detail}
        if self.report is not None:
            doc["report"] = self.report.to_json()
        return doc


@dataclass(frozen=True)
class MorphResult:
    assigned: ModuleGraph
    plan: ReductionResult
    equation_residual: float
    function_residual: float
    phase_log: tuple[PhaseRecord, ...]

    def to_json(self) -> dict:
        return {
            "plan": self.plan.to_json(),
            "equation_residual": self.equation_residual,
            "function_residual": self.function_residual,
            "phase_log": [p.to_json() for p in self.phase_log],
        }


def verify_equation(assigned: ModuleGraph, parent: Filter) -> float:
    """Relative Frobenius distance between the module's equivalent filter
    and the parent padded to the module's effective kernel."""
    km = assigned.effective_kernel()
    target = zero_pad(parent, km[0], km[1])
    norm = parent.norm()
    diff = assigned.module_filter().data - target.data
    return float(np.linalg.norm(diff) / (norm if norm > 0 else 1.0))


def verify_function(
    assigned: ModuleGraph,
    parent: Filter,
    trials: int = 10,
    blob_size: tuple[int, int] = (16, 16),
    rng: np.random.Generator | None = None,
) -> float:
    """Max over random blobs of the relative error between the module's
    forward evaluation and the parent convolution, measured on the interior
    region a border of half the effective kernel in from each edge."""
    rng = rng if rng is not None else np.random.default_rng(0)
    km = assigned.effective_kernel()
    by, bx = (km[0] - 1) // 2, (km[1] - 1) // 2
    h, w = blob_size
    if h - 2 * by < 1 or w - 2 * bx < 1:
        raise ValueError(
            f"blob size {blob_size} leaves no interior for effective kernel {km}"
        )
    module = linear_module(assigned)
    worst = 0.0
    for _ in range(trials):
        b = Blob(rng.standard_normal((parent.c_in, h, w)))
        got = forward(module, b).data[:, by : h - by, bx : w - bx]
        want = conv_blob(parent, b).data[:, by : h - by, bx : w - bx]
        ref = np.linalg.norm(want)
        err = float(np.linalg.norm(got - want) / (ref if ref > 0 else 1.0))
        worst = max(worst, err)
    return worst


def _support_params(f: Filter) -> int:
    sh, sw = f.support()
    return f.c_out * f.c_in * sh * sw


def _replay(
    plan: ReductionResult,
    root_filter: Filter,
    cfg: SolverConfig,
    strict: bool,
    phase_log: list[PhaseRecord],
    core_assignment: dict[str, Filter] | None = None,
):
    """Replay plan.steps starting from plan.residual with filters attached.

    root_filter seeds a single-edge residual; core_assignment seeds a
    multi-edge residual (complex targets). Returns the filter assignment
    keyed by target edge id, or None when a step cannot be carried exactly
    and strict is False (signalling the caller to fall back).
    """
    graph = plan.residual
    filters: dict[str, Filter] = {}
    if core_assignment is not None:
        filters.update(core_assignment)
    else:
        only = graph.edges[0]
        filters[only.id] = zero_pad(root_filter, only.kernel[0], only.kernel[1])
    rng = np.random.default_rng([cfg.seed, 0x5EED])

    for index, step in enumerate(plan.steps):
        parent = filters.pop(step.parent.id)
        c1, c2 = step.children
        if step.kind is StepKind.TYPE_II:
            try:
                f1, f2 = split_type_ii(
                    parent, rng, kernels=(c1.kernel, c2.kernel), limit_support=True
                )
            except SplitError as exc:
                if strict:
                    raise InfeasibleError(f"step {index}: {exc}") from exc
                phase_log.append(PhaseRecord("fallback", f"split step {index}: {exc}"))
                return None
            filters[c1.id], filters[c2.id] = f1, f2
            phase_log.append(
                PhaseRecord("split", f"{step.parent.id} -> {c1.id} + {c2.id}")
            )
        else:
            assert step.intermediate is not None
            c_mid = step.intermediate.channels
            largest = max(
                c_mid * parent.c_in * c1.kernel[0] * c1.kernel[1],
                parent.c_out * c_mid * c2.kernel[0] * c2.kernel[1],
            )
            if largest < _support_params(parent) and not strict:
                phase_log.append(
                    PhaseRecord(
                        "fallback",
                        f"decompose step {index}: factors too small for "
                        f"{step.parent.id}'s support",
                    )
                )
                return None
            f1, f2, report = decompose_type_i(parent, c1.kernel, c2.kernel, c_mid, cfg)
            phase_log.append(
                PhaseRecord(
                    "decompose", f"{step.parent.id} -> {c1.id} * {c2.id}", report
                )
            )
            if not report.converged and not strict:
                phase_log.append(
                    PhaseRecord("fallback", f"decompose step {index} did not converge")
                )
                return None
            filters[c1.id], filters[c2.id] = f1, f2
    return filters


def morph(req: MorphRequest) -> MorphResult:
    """Produce a filter assignment for the target that preserves the
    parent layer's function, per the requested strategy."""
    target = req.target.check()
    parent = req.parent_filter
    cfg = req.config
    if parent.c_in != target.channels(target.source) or parent.c_out != target.channels(
        target.sink
    ):
        raise DimensionError(
            "parent filter channels do not match target source/sink channels"
        )
    km = target.effective_kernel()
    if km[0] < parent.kh or km[1] < parent.kw:
        raise InfeasibleError(
            f"target effective kernel {km} cannot hold the parent kernel {parent.kernel}"
        )

    plan = reduce_module(target)
    phase_log: list[PhaseRecord] = [
        PhaseRecord("plan", f"{plan.classification.value}, {len(plan.steps)} steps")
    ]

    def direct() -> dict[str, Filter]:
        assignment, report = solve_irreducible(target, parent, cfg)
        phase_log.append(PhaseRecord("direct-solve", f"{len(target.edges)} edges", report))
        return assignment

    if req.strategy is Strategy.DIRECT_SOLVE:
        filters = direct()
    elif req.strategy is Strategy.REPLAY_ONLY:
        if plan.classification is not Classification.SIMPLE_MORPHABLE:
            raise StrategyError("REPLAY_ONLY requested but the target is complex")
        filters = _replay(plan, parent, cfg, strict=True, phase_log=phase_log)
        assert filters is not None
    else:  # AUTO
        if plan.classification is Classification.SIMPLE_MORPHABLE:
            filters = _replay(plan, parent, cfg, strict=False, phase_log=phase_log)
        else:
            core = plan.residual
            core_assignment, report = solve_irreducible(core, parent, cfg)
            phase_log.append(
                PhaseRecord("core-solve", f"{len(core.edges)} edges", report)
            )
            filters = _replay(
                plan,
                parent,
                cfg,
                strict=False,
                phase_log=phase_log,
                core_assignment=core_assignment,
            )
        if filters is None:
            filters = direct()

    assigned = target.with_filters(filters).check()
    equation_residual = verify_equation(assigned, parent)
    blob = (max(16, km[0] + 2), max(16, km[1] + 2))
    function_residual = verify_function(
        assigned, parent, trials=5, blob_size=blob, rng=np.random.default_rng([cfg.seed, 0xB10B])
    )
    return MorphResult(assigned, plan, equation_residual, function_residual, tuple(phase_log))
