r"""Generic sparse-combination engine for multilinear approximation problems.

Each factor of a multilinear problem is described by a work exponent
``gamma`` (work to build the input at resolution ``N`` scales like
``N**gamma``) and a convergence exponent ``beta`` (error scales like
``N**-beta``).  Levels are mapped to resolutions through
``N_l = ceil(exp(t * l))`` with ``t = 1/(gamma + beta)``, so the
work-to-contribution ratio grows at the same rate in every direction and
the simplex ``sum(l) <= L`` is the natural index set.  The engine
evaluates the signed combination over the two outermost layers, accounts
abstract work units, and predicts the error-versus-work exponent
``-1/rho`` with ``rho = max_j gamma_j / beta_j``.

Values produced by a tensor evaluator may be plain floats or any object
supporting addition and scalar multiplication (see
:class:`kernelkit.surrogate.Surrogate`).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from kernelkit.multiindex import (
    MultiIndex,
    combination_coefficients,
    corner_is_zero,
    delta_expand,
    enumerate_simplex,
)

# Relative tolerance when detecting ties among gamma/beta ratios; inputs
# typically arrive as floats parsed from config files.
_TIE_RTOL = 1e-9


class EvaluationError(RuntimeError):
    """Raised when a tensor evaluator fails; carries the offending term."""

    def __init__(self, message: str, index: MultiIndex, resolutions: tuple[int, ...]):
        super().__init__(f"{message} (multi-index {index}, resolutions {resolutions})")
        self.index = index
        self.resolutions = resolutions


@dataclass(frozen=True)
class FactorSpec:
    """Work/convergence description of one factor of a multilinear problem.

    Parameters
    ----------
    gamma : float
        Work exponent; building the factor at resolution ``N`` costs
        ``N**gamma`` abstract units.
    beta : float
        Convergence exponent; the factor error decays like ``N**-beta``.
    label : str
        Free-form name used in diagnostics.
    resolution_map : callable, optional
        Override for the level-to-resolution map.  Must return a positive
        integer for every level >= 1.  The default map is
        ``ceil(exp(t * level))``.
    """

    gamma: float
    beta: float
    label: str = ""
    resolution_map: Callable[[int], int] | None = None

    def __post_init__(self):
        if not (self.gamma > 0 and self.beta > 0):
            raise ValueError(
                f"exponents must be positive, got gamma={self.gamma}, beta={self.beta}"
            )

    @property
    def t(self) -> float:
        """Level spacing ``1 / (gamma + beta)``."""
        return 1.0 / (self.gamma + self.beta)

    def resolution(self, level: int) -> int:
        """Resolution at ``level``; level 0 is the auxiliary zero approximation."""
        return level_to_resolution(self, level)


def level_to_resolution(factor: FactorSpec, level: int) -> int:
    """Map a level to its resolution: 0 at level 0, else ``ceil(exp(t*l))``."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    if level == 0:
        return 0
    if factor.resolution_map is not None:
        value = int(factor.resolution_map(level))
        if value < 1:
            raise ValueError(f"resolution map returned {value} at level {level}")
        return value
    return math.ceil(math.exp(factor.t * level))


def scaled_exponential_map(gamma: float, beta: float, scale: float) -> Callable[[int], int]:
    """Resolution map ``ceil(scale * exp(t*l))`` with ``t = 1/(gamma+beta)``.

    Prefactors do not change any convergence or work exponent; they shift
    a subsequence so that its coarsest members are already meaningful,
    which matters at small thresholds.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    t = 1.0 / (gamma + beta)

    def mapped(level: int) -> int:
        return math.ceil(scale * math.exp(t * level))

    return mapped


@dataclass(frozen=True)
class ProblemSpec:
    """A multilinear problem: factor specs plus a deterministic evaluator.

    ``tensor_evaluator`` maps a tuple of per-factor resolutions to a value
    (scalar or summable object); it must be deterministic given the same
    resolution tuple and seed.
    """

    factors: tuple[FactorSpec, ...]
    tensor_evaluator: Callable[[tuple[int, ...]], Any]
    value_space: str = "scalar"

    def __post_init__(self):
        if len(self.factors) < 1:
            raise ValueError("problem needs at least one factor")

    @property
    def n(self) -> int:
        return len(self.factors)

    def resolutions(self, index: Sequence[int]) -> tuple[int, ...]:
        return tuple(
            level_to_resolution(f, l) for f, l in zip(self.factors, index)
        )


@dataclass(frozen=True)
class RatePrediction:
    """Predicted complexity exponents of the sparse estimator."""

    rho: float
    n0: int
    g: tuple[float, ...]
    b: tuple[float, ...]
    g_max: float
    b_min: float
    slope: float


def predicted_rates(factors: Sequence[FactorSpec]) -> RatePrediction:
    """Predict the error-versus-work exponent for a factor collection.

    Returns ``rho = max_j gamma_j/beta_j``, its multiplicity ``n0``
    (ties detected with relative tolerance 1e-9), the per-factor work and
    error shares ``g_j = gamma_j/(gamma_j+beta_j)`` and ``b_j = 1 - g_j``,
    and the predicted log-log slope ``-1/rho`` of error against work.
    """
    if len(factors) < 1:
        raise ValueError("need at least one factor")
    ratios = [f.gamma / f.beta for f in factors]
    rho = max(ratios)
    n0 = sum(1 for r in ratios if r >= rho * (1.0 - _TIE_RTOL))
    g = tuple(f.gamma / (f.gamma + f.beta) for f in factors)
    b = tuple(f.beta / (f.gamma + f.beta) for f in factors)
    return RatePrediction(
        rho=rho,
        n0=n0,
        g=g,
        b=b,
        g_max=max(g),
        b_min=min(b),
        slope=-1.0 / rho,
    )


@dataclass
class WorkLedger:
    """Abstract work account of one sparse estimate.

    ``total_work`` charges ``prod_j N_j**gamma_j`` for every combination
    term with nonzero coefficient (the multiplicative work model);
    ``evaluations`` counts distinct tensor-evaluator calls, which can be
    smaller because identical resolution tuples are memoized.
    """

    total_work: float = 0.0
    evaluations: int = 0
    per_term: list[tuple[MultiIndex, float]] = field(default_factory=list)

    def check(self) -> None:
        recomputed = sum(w for _, w in self.per_term)
        if not math.isclose(recomputed, self.total_work, rel_tol=1e-12, abs_tol=0.0):
            raise AssertionError("ledger total does not match per-term sum")


def _term_work(factors: Sequence[FactorSpec], resolutions: Sequence[int]) -> float:
    work = 1.0
    for f, n in zip(factors, resolutions):
        work *= float(n) ** f.gamma
    return work


class SmolyakEngine:
    """Evaluates sparse estimates of one problem with a shared memo cache.

    Tensor-evaluator results are memoized by resolution tuple for the
    lifetime of the engine, so repeated estimates (e.g. a convergence
    study over a range of thresholds) never recompute a tuple, and the
    combination and difference-expansion paths share evaluations.
    Independent tuples may be evaluated concurrently; results are always
    reduced in lexicographic term order, so output does not depend on the
    worker count.
    """

    def __init__(self, problem: ProblemSpec, workers: int | None = 1):
        self.problem = problem
        self.workers = workers
        self._cache: dict[tuple[int, ...], Any] = {}

    @property
    def evaluations(self) -> int:
        """Number of distinct resolution tuples evaluated so far."""
        return len(self._cache)

    def _ensure_evaluated(self, needed: Iterable[tuple[tuple[int, ...], MultiIndex]]):
        pending: dict[tuple[int, ...], MultiIndex] = {}
        for resolutions, index in needed:
            if resolutions not in self._cache and resolutions not in pending:
                pending[resolutions] = index
        if not pending:
            return
        order = sorted(pending)

        def run(res: tuple[int, ...]):
            try:
                return self.problem.tensor_evaluator(res)
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise EvaluationError(
                    f"tensor evaluator failed: {exc}", pending[res], res
                ) from exc

        if self.workers is not None and self.workers <= 1:
            values = [run(res) for res in order]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                values = list(pool.map(run, order))
        for res, val in zip(order, values):
            self._cache[res] = val

    def estimate(self, L: int) -> tuple[Any, WorkLedger]:
        """Signed-combination estimate at threshold ``L`` plus its ledger."""
        n = self.problem.n
        if L < n:
            raise ValueError(f"threshold L={L} below factor count n={n}")
        terms = combination_coefficients(n, L)
        tuples = [self.problem.resolutions(t.index) for t in terms]
        self._ensure_evaluated(zip(tuples, (t.index for t in terms)))

        ledger = WorkLedger()
        value = None
        for term, resolutions in zip(terms, tuples):
            work = _term_work(self.problem.factors, resolutions)
            ledger.per_term.append((term.index, work))
            ledger.total_work += work
            contribution = term.coefficient * self._cache[resolutions]
            value = contribution if value is None else value + contribution
        ledger.evaluations = self.evaluations
        return value, ledger

    def estimate_via_deltas(self, L: int) -> Any:
        """Same estimate through per-index difference expansion (cross-check)."""
        n = self.problem.n
        if L < n:
            raise ValueError(f"threshold L={L} below factor count n={n}")
        needed = []
        plan: list[tuple[tuple[int, ...], int]] = []
        for index in enumerate_simplex(n, L):
            for corner, sign in delta_expand(index):
                if corner_is_zero(corner):
                    continue
                resolutions = self.problem.resolutions(corner)
                needed.append((resolutions, index))
                plan.append((resolutions, sign))
        self._ensure_evaluated(needed)
        value = None
        for resolutions, sign in plan:
            contribution = sign * self._cache[resolutions]
            value = contribution if value is None else value + contribution
        return value


def smolyak_estimate(
    problem: ProblemSpec, L: int, workers: int | None = 1
) -> tuple[Any, WorkLedger]:
    """One-shot combination-rule estimate (fresh memo cache)."""
    return SmolyakEngine(problem, workers=workers).estimate(L)


def smolyak_via_deltas(problem: ProblemSpec, L: int, workers: int | None = 1) -> Any:
    """One-shot difference-expansion estimate (cross-check oracle)."""
    return SmolyakEngine(problem, workers=workers).estimate_via_deltas(L)


def _abs_error(reference: Any, value: Any) -> float:
    return abs(reference - value)


def convergence_study(
    problem: ProblemSpec,
    L_values: Sequence[int],
    reference: Any | None = None,
    error_fn: Callable[[Any, Any], float] = _abs_error,
    reference_margin: int = 2,
    workers: int | None = 1,
    engine: SmolyakEngine | None = None,
) -> list[tuple[int, float, int, float]]:
    """Error-versus-work table over a range of thresholds.

    Parameters
    ----------
    problem : ProblemSpec
    L_values : sequence of int
        Thresholds, each >= the factor count.
    reference : optional
        Exact value to compare against.  When omitted, the estimator at
        ``max(L_values) + reference_margin`` serves as reference.
    error_fn : callable
        ``error_fn(reference, estimate) -> float``; defaults to the
        absolute difference (scalar problems).
    workers : int or None
        Concurrency cap for tensor evaluations.

    Returns
    -------
    list of (L, work_units, evaluations, error)
        ``evaluations`` is the per-estimate distinct-evaluation count of
        the shared engine after computing that row.
    """
    Ls = sorted(int(L) for L in L_values)
    if engine is None:
        engine = SmolyakEngine(problem, workers=workers)
    if reference is None:
        reference, _ = engine.estimate(Ls[-1] + reference_margin)
    rows = []
    for L in Ls:
        value, ledger = engine.estimate(L)
        rows.append((L, ledger.total_work, ledger.evaluations, error_fn(reference, value)))
    return rows


def write_study_csv(path, rows: Sequence[tuple[int, float, int, float]]) -> None:
    """Write a study table as ``L,work_units,evaluations,error``."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["L", "work_units", "evaluations", "error"])
        for L, work, evaluations, error in rows:
            writer.writerow([L, f"{work:.12e}", evaluations, f"{error:.12e}"])


def fit_loglog_slope(
    table: Sequence[tuple[float, float]], window: float = 1.0
) -> float:
    """Least-squares slope of ``log y`` against ``log x`` over a trailing window.

    Parameters
    ----------
    table : sequence of (x, y)
        Positive pairs; typically (work, error).
    window : float
        Trailing fraction of the table to fit, in (0, 1].

    Raises
    ------
    ValueError
        If fewer than 3 points fall in the window, or any windowed value
        is nonpositive.
    """
    if not 0.0 < window <= 1.0:
        raise ValueError(f"window must lie in (0, 1], got {window}")
    count = max(3, math.ceil(window * len(table)))
    tail = list(table)[-count:]
    if len(tail) < 3:
        raise ValueError(f"need at least 3 points in the window, got {len(tail)}")
    xs = np.array([p[0] for p in tail], dtype=float)
    ys = np.array([p[1] for p in tail], dtype=float)
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("log-log fit requires positive values in the window")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)
