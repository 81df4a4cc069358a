"""Numerical realization of the atomic morphs and the alternating solver.

Three solve styles live here:

* split_type_ii: exact parallel split of a filter into two summands.
* decompose_type_i: serial factorization of a filter into two filters by
  alternating linear least squares, exploiting that fixing one factor makes
  the other a block least-squares problem with one system matrix shared by
  all output (resp. input) channels.
* solve_irreducible / deconv_solve: the general alternating scheme on a
  whole module. With all filters but one fixed, the module's equivalent
  filter is affine in the free one, so each step assembles the dense linear
  operator for that edge and takes the minimum-norm least-squares solution
  (rank-revealing orthogonal factorization, LAPACK gelsy).

Every step is an exact minimization over one block, so the recorded loss
never increases within a run. Dense Gaussian initialization can stall on
targets whose support is much smaller than the effective kernel; when a run
stalls, the solver restarts with filters randomized on the center tap only,
which keeps path supports aligned with the target's. The returned report
describes the run that produced the returned filters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._kernels import conv2d_compose
from .graph import ModuleGraph, UnassignedEdgeError
from .tensors import DimensionError, Filter, add_filters, identity_filter, zero_pad

__all__ = [
    "InfeasibleError",
    "SolveReport",
    "SolverConfig",
    "SplitError",
    "deconv_operator",
    "deconv_solve",
    "decompose_type_i",
    "fit_kernel",
    "solve_irreducible",
    "split_type_ii",
]

STALL_RATIO = 0.9
STALL_SWEEPS = 2


class InfeasibleError(ValueError):
    """Requested factorization shapes cannot represent the target."""


class SplitError(ValueError):
    """Parallel split cannot reproduce the filter with the given kernels."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration cap, relative-residual tolerance, seed, and init scale.

    init_scale is the standard deviation of the Gaussian filter
    initialization; None means sqrt(2 / fan_in) per filter.
    """

    max_iter: int = 100
    tol: float = 1e-8
    seed: int = 0
    init_scale: float | None = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass
class SolveReport:
    """Outcome of one solve: sweep count, final relative Frobenius residual,
    convergence flag, and the residual after every least-squares step of the
    returned run (non-increasing). restarts counts additional runs tried
    with a different initialization before settling on this one."""

    iterations: int
    residual: float
    converged: bool
    per_iteration_residuals: tuple[float, ...] = field(default=())
    size_condition_ok: bool | None = None
    restarts: int = 0

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "per_iteration_residuals": list(self.per_iteration_residuals),
            "size_condition_ok": self.size_condition_ok,
            "restarts": self.restarts,
        }


def _lstsq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm least squares with all-zero rows dropped first.

    Zero rows constrain nothing and only cost factorization time; they are
    frequent here because filters during morphing have small support.
    """
    keep = np.flatnonzero(np.any(a != 0.0, axis=1))
    if keep.size < a.shape[0]:
        a, b = a[keep], b[keep]
    if a.shape[0] == 0:
        return np.zeros((a.shape[1],) + b.shape[1:])
    sol, _, _, _ = scipy.linalg.lstsq(a, b, lapack_driver="gelsy")
    return sol


def _rel(err: np.ndarray, ref_norm: float) -> float:
    return float(np.linalg.norm(err) / (ref_norm if ref_norm > 0 else 1.0))


def _support_size(data: np.ndarray, rel_tol: float = 1e-12) -> tuple[int, int]:
    mags = np.abs(data)
    cutoff = mags.max() * rel_tol
    nz = np.nonzero(np.any(mags > cutoff, axis=(0, 1)))
    if nz[0].size == 0:
        return (0, 0)
    return (int(nz[0].max() - nz[0].min()) + 1, int(nz[1].max() - nz[1].min()) + 1)


def fit_kernel(f: Filter, kernel: tuple[int, int], drop_tol: float = 0.0) -> Filter:
    """Re-center a filter into the given kernel shape without changing its
    values: pad where the target is larger, crop where it is smaller.
    Raises SplitError if cropping would drop an entry larger than drop_tol
    times the filter's largest magnitude (strict by default)."""
    kh, kw = int(kernel[0]), int(kernel[1])
    if (kh - f.kh) % 2 != 0 or (kw - f.kw) % 2 != 0:
        raise SplitError(f"kernel {f.kernel} cannot be center-fit to {(kh, kw)}")
    big_h, big_w = max(kh, f.kh), max(kw, f.kw)
    data = zero_pad(f, big_h, big_w).data
    oy, ox = (big_h - kh) // 2, (big_w - kw) // 2
    inside = data[:, :, oy : oy + kh, ox : ox + kw]
    outside = data.copy()
    outside[:, :, oy : oy + kh, ox : ox + kw] = 0.0
    if np.any(np.abs(outside) > drop_tol * np.abs(data).max()):
        raise SplitError(f"filter support exceeds kernel {(kh, kw)}")
    return Filter(inside)


def _boxed_random(
    c_out: int,
    c_in: int,
    kernel: tuple[int, int],
    box: tuple[int, int],
    rng: np.random.Generator,
    init_scale: float | None,
) -> Filter:
    """Gaussian filter on `kernel` whose nonzeros sit in a centered box."""
    bh = min(kernel[0], box[0]) if box[0] > 0 else 1
    bw = min(kernel[1], box[1]) if box[1] > 0 else 1
    # keep the box center-alignable
    bh -= (kernel[0] - bh) % 2
    bw -= (kernel[1] - bw) % 2
    std = init_scale if init_scale is not None else np.sqrt(2.0 / (c_in * bh * bw))
    data = np.zeros((c_out, c_in, kernel[0], kernel[1]))
    oy, ox = (kernel[0] - bh) // 2, (kernel[1] - bw) // 2
    data[:, :, oy : oy + bh, ox : ox + bw] = std * rng.standard_normal((c_out, c_in, bh, bw))
    return Filter(data)


def split_type_ii(
    g: Filter,
    rng: np.random.Generator | None = None,
    *,
    kernels: tuple[tuple[int, int], tuple[int, int]] | None = None,
    halves: bool = False,
    init_scale: float | None = None,
    limit_support: bool = False,
) -> tuple[Filter, Filter]:
    """Split a filter into two filters that sum back to it exactly.

    Default: the first part is drawn randomly with g's kernel shape and the
    second is the complement. halves=True returns the deterministic
    (0.5 g, 0.5 g) split instead. kernels, when given, are the declared
    kernel shapes of the two parts; the random part is then the one whose
    kernel does not need to carry the complement, and limit_support keeps
    its random support inside g's so downstream factorizations stay exact.
    """
    k1, k2 = kernels if kernels is not None else (g.kernel, g.kernel)
    if halves:
        half = Filter(0.5 * g.data)
        return fit_kernel(half, k1), fit_kernel(half, k2)
    if rng is None:
        raise ValueError("rng is required unless halves=True")
    # round-off junk from upstream solves may be dropped; real content may not
    drop = 1e-12 if limit_support else 0.0
    box = g.support() if limit_support else (max(k1[0], k2[0]), max(k1[1], k2[1]))
    first_random = _boxed_random(g.c_out, g.c_in, k1, box, rng, init_scale)
    try:
        rest = fit_kernel(add_filters(g, Filter(-first_random.data)), k2, drop)
        return first_random, rest
    except SplitError:
        pass
    second_random = _boxed_random(g.c_out, g.c_in, k2, box, rng, init_scale)
    rest = fit_kernel(add_filters(g, Filter(-second_random.data)), k1, drop)
    return rest, second_random


# ---------------------------------------------------------------------------
# Alternating solve machinery
# ---------------------------------------------------------------------------


@dataclass
class _Run:
    filters: dict[str, np.ndarray]
    history: list[float]
    sweeps: int
    converged: bool


def _alternating(
    attempts,
    solve_step,
    loss_fn,
    cfg: SolverConfig,
) -> tuple[_Run, int]:
    """Run ALS attempts until one converges; return the best run.

    attempts: iterable of (init_fn, order) where init_fn(rng) builds the
    filter dict and order lists the edge ids per sweep. solve_step mutates
    the dict by exactly minimizing over one edge; loss_fn scores a dict.
    A run stops early when the loss stops improving (ratio > STALL_RATIO
    over a sweep, STALL_SWEEPS times in a row).
    """
    best: _Run | None = None
    restarts = 0
    for attempt_index, (init_fn, order) in enumerate(attempts):
        rng = np.random.default_rng([cfg.seed, attempt_index])
        filters = init_fn(rng)
        history: list[float] = []
        converged = False
        stall = 0
        prev_end: float | None = None
        sweeps = 0
        for _ in range(cfg.max_iter):
            for j in order:
                solve_step(filters, j)
                loss = loss_fn(filters)
                history.append(loss)
                if loss <= cfg.tol:
                    converged = True
                    break
            sweeps += 1
            if converged:
                break
            end = history[-1]
            if prev_end is not None and end > prev_end * STALL_RATIO:
                stall += 1
                if stall >= STALL_SWEEPS:
                    break
            else:
                stall = 0
            prev_end = end
        run = _Run(filters, history, sweeps, converged)
        if best is None or run.history[-1] < best.history[-1]:
            best = run
        if converged:
            break
        restarts += 1
    assert best is not None
    # count only restarts actually run beyond the returned style
    return best, min(restarts, len(attempts) - 1)


# ---------------------------------------------------------------------------
# TYPE-I decomposition (serial factorization)
# ---------------------------------------------------------------------------


def _factor_matrix_second(f1: np.ndarray, k2: tuple[int, int], km: tuple[int, int]) -> np.ndarray:
    """Least-squares matrix for the second factor given the first.

    The composed filter's (c_out, c_in, y, x) entry depends on the second
    factor's (c_out, c_mid, u, v) entries through f1 only, identically for
    every c_out, so one matrix over rows (c_in, y, x) and columns
    (c_mid, u, v) serves all output channels as a multi-RHS solve.
    """
    c_mid, c_in, k1h, k1w = f1.shape
    m = np.zeros((c_in, km[0], km[1], c_mid, k2[0], k2[1]))
    moved = np.transpose(f1, (1, 2, 3, 0))
    for u in range(k2[0]):
        for v in range(k2[1]):
            m[:, u : u + k1h, v : v + k1w, :, u, v] = moved
    return m.reshape(c_in * km[0] * km[1], c_mid * k2[0] * k2[1])


def _factor_matrix_first(f2: np.ndarray, k1: tuple[int, int], km: tuple[int, int]) -> np.ndarray:
    """Least-squares matrix for the first factor given the second; one
    matrix over rows (c_out, y, x), columns (c_mid, u, v), shared by every
    input channel."""
    c_out, c_mid, k2h, k2w = f2.shape
    m = np.zeros((c_out, km[0], km[1], c_mid, k1[0], k1[1]))
    moved = np.transpose(f2, (0, 2, 3, 1))
    for u in range(k1[0]):
        for v in range(k1[1]):
            m[:, u : u + k2h, v : v + k2w, :, u, v] = moved
    return m.reshape(c_out * km[0] * km[1], c_mid * k1[0] * k1[1])


def decompose_type_i(
    g: Filter,
    k1: tuple[int, int],
    k2: tuple[int, int],
    c_mid: int,
    cfg: SolverConfig | None = None,
) -> tuple[Filter, Filter, SolveReport]:
    """Factor g into two serial filters with kernels k1 then k2 and c_mid
    middle channels, so that compose(f2, f1) reproduces g padded to the
    combined kernel.

    The first factor is randomly initialized and the factors are solved
    alternately, each step an exact block least squares. The report's
    size_condition_ok flag states whether the larger factor has at least as
    many parameters as the padded target has on its support; when it is
    False exactness is not expected and the residual simply reports how
    close the factorization got.
    """
    cfg = cfg or SolverConfig()
    k1 = (int(k1[0]), int(k1[1]))
    k2 = (int(k2[0]), int(k2[1]))
    if min(k1) < 1 or min(k2) < 1 or k1[0] % 2 == 0 or k1[1] % 2 == 0 or k2[0] % 2 == 0 or k2[1] % 2 == 0:
        raise InfeasibleError(f"factor kernels must be odd-sized, got {k1} and {k2}")
    if c_mid < 1:
        raise InfeasibleError(f"middle channel count must be >= 1, got {c_mid}")
    km = (k1[0] + k2[0] - 1, k1[1] + k2[1] - 1)
    if km[0] < g.kh or km[1] < g.kw:
        raise InfeasibleError(
            f"combined kernel {km} cannot hold the target kernel {g.kernel}"
        )
    g_t = zero_pad(g, km[0], km[1]).data
    g_norm = float(np.linalg.norm(g_t))
    c_out, c_in = g.c_out, g.c_in

    sh, sw = _support_size(g_t)
    support_count = c_out * c_in * sh * sw
    size_first = c_mid * c_in * k1[0] * k1[1]
    size_second = c_out * c_mid * k2[0] * k2[1]
    size_ok = max(size_first, size_second) >= support_count

    def solve_step(filters: dict[str, np.ndarray], which: str) -> None:
        if which == "f2":
            m = _factor_matrix_second(filters["f1"], k2, km)
            rhs = g_t.reshape(c_out, -1).T
            sol = _lstsq(m, rhs)
            filters["f2"] = sol.T.reshape(c_out, c_mid, k2[0], k2[1])
        else:
            m = _factor_matrix_first(filters["f2"], k1, km)
            rhs = np.transpose(g_t, (1, 0, 2, 3)).reshape(c_in, -1).T
            sol = _lstsq(m, rhs)
            filters["f1"] = np.ascontiguousarray(
                np.transpose(sol.T.reshape(c_in, c_mid, k1[0], k1[1]), (1, 0, 2, 3))
            )

    def loss_fn(filters: dict[str, np.ndarray]) -> float:
        return _rel(conv2d_compose(filters["f2"], filters["f1"]) - g_t, g_norm)

    def dense_init(rng: np.random.Generator) -> dict[str, np.ndarray]:
        scale1 = cfg.init_scale if cfg.init_scale is not None else np.sqrt(2.0 / (c_in * k1[0] * k1[1]))
        scale2 = cfg.init_scale if cfg.init_scale is not None else np.sqrt(2.0 / (c_mid * k2[0] * k2[1]))
        return {
            "f1": scale1 * rng.standard_normal((c_mid, c_in, k1[0], k1[1])),
            "f2": scale2 * rng.standard_normal((c_out, c_mid, k2[0], k2[1])),
        }

    def center_init(rng: np.random.Generator) -> dict[str, np.ndarray]:
        f1 = np.zeros((c_mid, c_in, k1[0], k1[1]))
        f2 = np.zeros((c_out, c_mid, k2[0], k2[1]))
        f1[:, :, k1[0] // 2, k1[1] // 2] = rng.standard_normal((c_mid, c_in)) * np.sqrt(2.0 / c_in)
        f2[:, :, k2[0] // 2, k2[1] // 2] = rng.standard_normal((c_out, c_mid)) * np.sqrt(2.0 / c_mid)
        return {"f1": f1, "f2": f2}

    attempts = [
        (dense_init, ("f2", "f1")),
        (center_init, ("f2", "f1")),
        (center_init, ("f1", "f2")),
    ]
    run, restarts = _alternating(attempts, solve_step, loss_fn, cfg)
    report = SolveReport(
        iterations=run.sweeps,
        residual=run.history[-1],
        converged=run.converged,
        per_iteration_residuals=tuple(run.history),
        size_condition_ok=size_ok,
        restarts=restarts,
    )
    return Filter(run.filters["f1"]), Filter(run.filters["f2"]), report


# ---------------------------------------------------------------------------
# Whole-module alternating solve
# ---------------------------------------------------------------------------


class _ModuleProblem:
    """Path-sum structure of a module with raw-array filters."""

    def __init__(self, m: ModuleGraph, km: tuple[int, int]):
        self.km = km
        self.paths = m.enumerate_paths()
        self.shapes: dict[str, tuple[int, int, int, int]] = {}
        for e in m.edges:
            self.shapes[e.id] = (m.channels(e.dst), m.channels(e.src), e.kernel[0], e.kernel[1])
        self.c_out = m.channels(m.sink)
        self.c_in = m.channels(m.source)

    def _pad(self, data: np.ndarray) -> np.ndarray:
        out = np.zeros((self.c_out, self.c_in, self.km[0], self.km[1]))
        oy = (self.km[0] - data.shape[2]) // 2
        ox = (self.km[1] - data.shape[3]) // 2
        out[:, :, oy : oy + data.shape[2], ox : ox + data.shape[3]] = data
        return out

    def _chain(self, filters: dict[str, np.ndarray], path) -> np.ndarray:
        acc = filters[path[0]]
        for eid in path[1:]:
            acc = conv2d_compose(filters[eid], acc)
        return acc

    def path_sum(self, filters: dict[str, np.ndarray]) -> np.ndarray:
        total = np.zeros((self.c_out, self.c_in, self.km[0], self.km[1]))
        for path in self.paths:
            total += self._pad(self._chain(filters, path))
        return total

    def operator(self, filters: dict[str, np.ndarray], j: str) -> tuple[np.ndarray, np.ndarray]:
        """Dense matrix A with A @ vec(F_j) the paths-through-j part of the
        module filter, plus the constant part from paths avoiding j."""
        a_ch, b_ch, kjh, kjw = self.shapes[j]
        km_h, km_w = self.km
        a8 = np.zeros((self.c_out, self.c_in, km_h, km_w, a_ch, b_ch, kjh, kjw))
        constant = np.zeros((self.c_out, self.c_in, km_h, km_w))
        eye_pre = np.eye(b_ch).reshape(b_ch, b_ch, 1, 1)
        eye_post = np.eye(a_ch).reshape(a_ch, a_ch, 1, 1)
        for path in self.paths:
            if j not in path:
                constant += self._pad(self._chain(filters, path))
                continue
            i = path.index(j)
            pre = self._chain(filters, path[:i]) if i > 0 else eye_pre
            post = self._chain(filters, path[i + 1 :]) if i + 1 < len(path) else eye_post
            ph, pw = pre.shape[2], pre.shape[3]
            th, tw = post.shape[2], post.shape[3]
            qh, qw = ph + th - 1, pw + tw - 1
            d = np.zeros((self.c_out, a_ch, b_ch, self.c_in, qh, qw))
            for ty in range(th):
                for tx in range(tw):
                    d[:, :, :, :, ty : ty + ph, tx : tx + pw] += np.einsum(
                        "oa,biuv->oabiuv", post[:, :, ty, tx], pre
                    )
            d = np.transpose(d, (0, 3, 4, 5, 1, 2))  # (c_out, c_in, qy, qx, a, b)
            dy = (km_h - (qh + kjh - 1)) // 2
            dx = (km_w - (qw + kjw - 1)) // 2
            for sy in range(kjh):
                for sx in range(kjw):
                    a8[:, :, dy + sy : dy + sy + qh, dx + sx : dx + sx + qw, :, :, sy, sx] += d
        rows = self.c_out * self.c_in * km_h * km_w
        return a8.reshape(rows, a_ch * b_ch * kjh * kjw), constant

    def solve_edge(self, filters: dict[str, np.ndarray], j: str, g_t: np.ndarray) -> None:
        a, constant = self.operator(filters, j)
        sol = _lstsq(a, (g_t - constant).ravel())
        filters[j] = sol.reshape(self.shapes[j])


def _module_size_condition(problem: _ModuleProblem, g_t: np.ndarray) -> bool:
    sh, sw = _support_size(g_t)
    target = problem.c_out * problem.c_in * sh * sw
    return any(int(np.prod(shape)) >= target for shape in problem.shapes.values())


def deconv_operator(m: ModuleGraph, j: str) -> tuple[np.ndarray, Filter]:
    """Dense operator and constant term for edge j with all other filters
    taken from the graph. Rows follow vec of the module-kernel filter,
    columns vec of edge j's filter."""
    m.check()
    km = m.effective_kernel()
    problem = _ModuleProblem(m, km)
    filters: dict[str, np.ndarray] = {}
    for e in m.edges:
        if e.id == j:
            continue
        if e.filter is None:
            raise UnassignedEdgeError(f"edge {e.id!r} has no filter assigned")
        filters[e.id] = e.filter.data
    if j not in problem.shapes:
        raise DimensionError(f"unknown edge {j!r}")
    filters[j] = np.zeros(problem.shapes[j])
    a, constant = problem.operator(filters, j)
    return a, Filter(constant)


def deconv_solve(g_tilde: Filter, m: ModuleGraph, j: str) -> Filter:
    """Filter for edge j minimizing the distance between the module filter
    and g_tilde with every other edge fixed; minimum-norm on rank-deficient
    systems. g_tilde must already be padded to the module effective kernel."""
    m.check()
    km = m.effective_kernel()
    if g_tilde.kernel != km:
        raise DimensionError(
            f"target kernel {g_tilde.kernel} must equal the module effective kernel {km}"
        )
    if g_tilde.c_out != m.channels(m.sink) or g_tilde.c_in != m.channels(m.source):
        raise DimensionError("target channels do not match module source/sink channels")
    a, constant = deconv_operator(m, j)
    sol = _lstsq(a, (g_tilde.data - constant.data).ravel())
    problem_shape = (m.channels(m.edge(j).dst), m.channels(m.edge(j).src), *m.edge(j).kernel)
    return Filter(sol.reshape(problem_shape))


def solve_irreducible(
    m: ModuleGraph,
    g: Filter,
    cfg: SolverConfig | None = None,
) -> tuple[dict[str, Filter], SolveReport]:
    """Solve for all edge filters so the module's equivalent filter matches
    g (padded to the module's effective kernel).

    Filters start as random noise; each sweep visits edges in insertion
    order and replaces one filter with its exact least-squares value,
    recording the loss after every step. Stops when the relative residual
    drops to cfg.tol or after cfg.max_iter sweeps. Convergence is expected
    when some edge has at least as many parameters as the padded target has
    on its support (size_condition_ok); otherwise the report says honestly
    how close the sweep got.
    """
    cfg = cfg or SolverConfig()
    m.check()
    if g.c_in != m.channels(m.source) or g.c_out != m.channels(m.sink):
        raise DimensionError(
            f"filter channels {(g.c_out, g.c_in)} do not match module "
            f"{(m.channels(m.sink), m.channels(m.source))}"
        )
    # when the target's reach is smaller than the parent kernel, compare in
    # the common kernel; the unreachable part then shows up as residual
    eff = m.effective_kernel()
    km = (max(eff[0], g.kh), max(eff[1], g.kw))
    problem = _ModuleProblem(m, km)
    g_t = zero_pad(g, km[0], km[1]).data
    g_norm = float(np.linalg.norm(g_t))
    size_ok = _module_size_condition(problem, g_t)
    order = tuple(e.id for e in m.edges)

    def dense_init(rng: np.random.Generator) -> dict[str, np.ndarray]:
        out = {}
        for eid, (co, ci, kh, kw) in problem.shapes.items():
            std = cfg.init_scale if cfg.init_scale is not None else np.sqrt(2.0 / (ci * kh * kw))
            out[eid] = std * rng.standard_normal((co, ci, kh, kw))
        return out

    def center_init(rng: np.random.Generator) -> dict[str, np.ndarray]:
        out = {}
        for eid, (co, ci, kh, kw) in problem.shapes.items():
            data = np.zeros((co, ci, kh, kw))
            std = cfg.init_scale if cfg.init_scale is not None else np.sqrt(2.0 / ci)
            data[:, :, kh // 2, kw // 2] = std * rng.standard_normal((co, ci))
            out[eid] = data
        return out

    def solve_step(filters: dict[str, np.ndarray], j: str) -> None:
        problem.solve_edge(filters, j, g_t)

    def loss_fn(filters: dict[str, np.ndarray]) -> float:
        return _rel(problem.path_sum(filters) - g_t, g_norm)

    attempts = [(dense_init, order), (center_init, order)]
    run, restarts = _alternating(attempts, solve_step, loss_fn, cfg)
    report = SolveReport(
        iterations=run.sweeps,
        residual=run.history[-1],
        converged=run.converged,
        per_iteration_residuals=tuple(run.history),
        size_condition_ok=size_ok,
        restarts=restarts,
    )
    assignment = {eid: Filter(arr) for eid, arr in run.filters.items()}
    return assignment, report
