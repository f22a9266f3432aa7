"""Application pipelines on the combination engine.

Four pipelines are provided, all instances of the same generic sparse
estimator with different factor wiring:

* multilevel expectation: one quadrature factor plus one sample-family
  factor (two-factor combination, the classic multilevel telescope);
* multi-index expectation: per-block quadrature rules plus the sample
  family (deterministic collocation in every parameter block);
* response surface: per-block kernel interpolation of the sample family,
  producing a function-valued surrogate;
* optimization under uncertainty: kernel interpolation over a control
  disc of empirical means over random-field draws of PDE outputs,
  followed by pattern-search minimization of surrogate plus penalty.

Work ledgers charge only sampler work (``prod N_j * N_pde**gamma`` per
term); the cost of solving kernel systems is reported separately.
Randomness is counter-based throughout: the draw with index ``k`` of a
given ``(seed, stream)`` never depends on evaluation order, so parallel
runs are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Sequence

import numpy as np

from kernelkit.kernels import (
    MaternKernel,
    QuadratureRule,
    fit_interpolant,
    generate_points,
    quadrature_weights,
    tensor_grid,
    tensor_grid_interpolant,
)
from kernelkit.pde import (
    AdvectionDiffusionProblem,
    BumpDiffusionProblem,
    GaussianFieldSampler,
    Mesh,
    pde_resolution_map,
)
from kernelkit.points import Box, Disc, Domain, PointSet
from kernelkit.smolyak import (
    FactorSpec,
    ProblemSpec,
    SmolyakEngine,
    WorkLedger,
    scaled_exponential_map,
)
from kernelkit.surrogate import Surrogate


@lru_cache(maxsize=None)
def cached_mesh(cells: int) -> Mesh:
    return Mesh(cells=cells)


def philox_generator(seed: int, stream: int, draw: int = 0) -> np.random.Generator:
    """Counter-based generator: a pure function of ``(seed, stream, draw)``."""
    return np.random.Generator(
        np.random.Philox(counter=[0, 0, draw, 0], key=[seed, stream])
    )


def random_points(domain: Domain, count: int, seed: int, stream: int = 101) -> np.ndarray:
    """Deterministic pseudo-random evaluation points inside a domain."""
    rng = philox_generator(seed, stream)
    if isinstance(domain, Box):
        lows = np.asarray(domain.lows)
        highs = np.asarray(domain.highs)
        return lows + rng.random((count, domain.dim)) * (highs - lows)
    if isinstance(domain, Disc):
        box = domain.bounding_box
        out = np.empty((count, 2))
        have = 0
        while have < count:
            chunk = np.asarray(box.lows) + rng.random((2 * (count - have), 2)) * (
                np.asarray(box.highs) - np.asarray(box.lows)
            )
            keep = chunk[domain.contains(chunk)]
            take = min(len(keep), count - have)
            out[have : have + take] = keep[:take]
            have += take
        return out
    raise TypeError(f"unsupported domain type {type(domain)!r}")


@dataclass
class EstimatorResult:
    """Output of one pipeline estimate."""

    value: Any
    ledger: WorkLedger
    L: int
    pde_solves: int = 0
    kernel_solve_work: float = 0.0
    draw_log: dict[tuple[int, ...], tuple[int, ...]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# factors


@dataclass(frozen=True)
class QuadratureFactor:
    """A family of quadrature rules indexed by node count."""

    spec: FactorSpec
    rule: Callable[[int], tuple[np.ndarray, np.ndarray]]


def midpoint_quadrature_factor(
    gamma: float = 1.0, beta: float = 2.0
) -> QuadratureFactor:
    """Composite midpoint rule on [0, 1] (order-2 on smooth integrands)."""

    def rule(count: int):
        pts = ((np.arange(count) + 0.5) / count).reshape(-1, 1)
        return pts, np.full(count, 1.0 / count)

    return QuadratureFactor(
        spec=FactorSpec(gamma=gamma, beta=beta, label="midpoint"), rule=rule
    )


def kernel_quadrature_factor(
    kernel: MaternKernel,
    domain: Box,
    gamma: float = 1.0,
    alpha: float = 0.0,
) -> QuadratureFactor:
    """Kernel quadrature on nested points; rules are cached per node count."""
    rate = (kernel.beta - alpha) / kernel.dim
    cache: dict[int, QuadratureRule] = {}

    def rule(count: int):
        if count not in cache:
            cache[count] = quadrature_weights(kernel, generate_points(domain, count))
        built = cache[count]
        return built.nodes.points, built.weights

    return QuadratureFactor(
        spec=FactorSpec(gamma=gamma, beta=rate, label="kernel-quadrature"), rule=rule
    )


class SampleFactor:
    """Sample family ``q_N(y)`` with coordinate-keyed memoization.

    ``evaluate_one(point, resolution)`` is called once per distinct
    ``(resolution, point)`` pair; ``solve_count`` reports the number of
    distinct evaluations performed so far.
    """

    def __init__(self, spec: FactorSpec, evaluate_one: Callable[[np.ndarray, int], float]):
        self.spec = spec
        self._evaluate_one = evaluate_one
        self._cache: dict[tuple[int, bytes], float] = {}

    def values(self, points: np.ndarray, resolution: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(len(pts))
        for idx, row in enumerate(pts):
            key = (resolution, row.tobytes())
            value = self._cache.get(key)
            if value is None:
                value = float(self._evaluate_one(row, resolution))
                self._cache[key] = value
            out[idx] = value
        return out

    @property
    def solve_count(self) -> int:
        return len(self._cache)


def synthetic_bias_factor(
    integrand: Callable[[np.ndarray], np.ndarray],
    gamma: float = 1.0,
    kappa: float = 1.0,
) -> SampleFactor:
    """Synthetic family ``q_N(y) = integrand(y) + 1/N`` with known bias."""
    spec = FactorSpec(gamma=gamma, beta=kappa, label="synthetic")

    def evaluate_one(point: np.ndarray, resolution: int) -> float:
        return float(integrand(point.reshape(1, -1))[0]) + 1.0 / resolution

    return SampleFactor(spec=spec, evaluate_one=evaluate_one)


def bump_sample_factor(
    n_bumps: int = 1,
    work_exponent: float = 1.5,
    convergence_exponent: float = 1.0,
    max_cells: int = 64,
) -> SampleFactor:
    """Bump-diffusion quantity of interest on meshes realizing the level map."""
    problem = BumpDiffusionProblem(n_bumps=n_bumps)
    spec = FactorSpec(
        gamma=work_exponent,
        beta=convergence_exponent,
        label="bump-pde",
        resolution_map=pde_resolution_map(work_exponent, convergence_exponent, max_cells),
    )

    def evaluate_one(point: np.ndarray, resolution: int) -> float:
        cells = math.isqrt(resolution)
        if cells * cells != resolution:
            raise ValueError(f"resolution {resolution} is not a realized mesh size")
        return problem.sample_qoi(point, cached_mesh(cells))

    return SampleFactor(spec=spec, evaluate_one=evaluate_one)


@dataclass(eq=False)
class InterpolationFactor:
    """Kernel best-approximation factor on nested points in one block."""

    kernel: MaternKernel
    domain: Domain
    spec: FactorSpec

    def __post_init__(self):
        self._prefix_cache: dict[int, PointSet] = {}

    def points(self, count: int) -> PointSet:
        cached = self._prefix_cache.get(count)
        if cached is None:
            cached = generate_points(self.domain, count)
            self._prefix_cache[count] = cached
        return cached


def interpolation_factor(
    kernel: MaternKernel,
    domain: Domain,
    alpha: float = 0.0,
    resolution_map: Callable[[int], int] | None = None,
) -> InterpolationFactor:
    rate = (kernel.beta - alpha) / kernel.dim
    if rate <= 0:
        raise ValueError(f"nonpositive interpolation rate {rate}")
    spec = FactorSpec(
        gamma=1.0, beta=rate, label="interpolation", resolution_map=resolution_map
    )
    return InterpolationFactor(kernel=kernel, domain=domain, spec=spec)


# ---------------------------------------------------------------------------
# expectation pipelines


def build_expectation_problem(
    quad_factors: Sequence[QuadratureFactor], sample_factor: SampleFactor
) -> ProblemSpec:
    """Multilinear problem: per-block quadrature applied to the sample family."""

    def evaluator(resolutions: tuple[int, ...]) -> float:
        *rule_counts, sample_resolution = resolutions
        points_blocks = []
        weights = np.array([1.0])
        for factor, count in zip(quad_factors, rule_counts):
            pts, wts = factor.rule(count)
            points_blocks.append(pts)
            weights = np.outer(weights, wts).ravel()
        grid = (
            points_blocks[0]
            if len(points_blocks) == 1
            else _product_points(points_blocks)
        )
        values = sample_factor.values(grid, sample_resolution)
        return float(weights @ values)

    factors = tuple(f.spec for f in quad_factors) + (sample_factor.spec,)
    return ProblemSpec(factors=factors, tensor_evaluator=evaluator)


def _product_points(blocks: Sequence[np.ndarray]) -> np.ndarray:
    counts = [len(b) for b in blocks]
    dims = [b.shape[1] for b in blocks]
    total = int(np.prod(counts))
    out = np.empty((total, sum(dims)))
    col = 0
    for j, block in enumerate(blocks):
        reps_after = int(np.prod(counts[j + 1 :])) if j + 1 < len(counts) else 1
        reps_before = int(np.prod(counts[:j])) if j > 0 else 1
        tiled = np.tile(np.repeat(block, reps_after, axis=0), (reps_before, 1))
        out[:, col : col + dims[j]] = tiled
        col += dims[j]
    return out


def multiindex_expectation(
    quad_factors: Sequence[QuadratureFactor],
    sample_factor: SampleFactor,
    L: int,
    workers: int | None = 1,
    engine: SmolyakEngine | None = None,
) -> EstimatorResult:
    """Sparse expectation estimate with per-block deterministic quadrature."""
    if engine is None:
        engine = SmolyakEngine(
            build_expectation_problem(quad_factors, sample_factor), workers=workers
        )
    value, ledger = engine.estimate(L)
    return EstimatorResult(
        value=value, ledger=ledger, L=L, pde_solves=sample_factor.solve_count
    )


def multilevel_expectation(
    quad_factor: QuadratureFactor,
    sample_factor: SampleFactor,
    L: int,
    workers: int | None = 1,
    engine: SmolyakEngine | None = None,
) -> EstimatorResult:
    """Two-factor multilevel estimate (single quadrature block)."""
    return multiindex_expectation(
        [quad_factor], sample_factor, L, workers=workers, engine=engine
    )


def expectation_study(
    quad_factors: Sequence[QuadratureFactor],
    sample_factor: SampleFactor,
    L_values: Sequence[int],
    reference: float | None = None,
    reference_L: int | None = None,
    workers: int | None = 1,
) -> list[dict]:
    """Error table for an expectation pipeline.

    ``reference`` wins over ``reference_L``; the default reference is the
    estimator at ``max(L_values) + 2``.
    """
    engine = SmolyakEngine(
        build_expectation_problem(quad_factors, sample_factor), workers=workers
    )
    Ls = sorted(int(L) for L in L_values)
    if reference is None:
        ref_L = reference_L if reference_L is not None else Ls[-1] + 2
        reference, _ = engine.estimate(ref_L)
    rows = []
    for L in Ls:
        value, ledger = engine.estimate(L)
        error = abs(reference - value)
        rows.append(
            {
                "L": L,
                "work_units": ledger.total_work,
                "pde_solves": sample_factor.solve_count,
                "error_l2": error,
                "error_linf": error,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# response surfaces


def build_surface_problem(
    interp_factors: Sequence[InterpolationFactor], sample_factor: SampleFactor
) -> ProblemSpec:
    def evaluator(resolutions: tuple[int, ...]):
        *point_counts, sample_resolution = resolutions
        point_sets = [
            factor.points(count)
            for factor, count in zip(interp_factors, point_counts)
        ]
        grid = tensor_grid(point_sets)
        values = sample_factor.values(grid, sample_resolution)
        return tensor_grid_interpolant(
            [f.kernel for f in interp_factors], point_sets, values
        )

    factors = tuple(f.spec for f in interp_factors) + (sample_factor.spec,)
    return ProblemSpec(
        factors=factors, tensor_evaluator=evaluator, value_space="surrogate"
    )


def _interp_solve_work(engine: SmolyakEngine, n_blocks: int) -> float:
    """Cubic-cost model of all distinct kernel fits performed so far."""
    total = 0.0
    for resolutions in engine._cache:
        size = float(np.prod(resolutions[:n_blocks]))
        total += size**3
    return total


def response_surface(
    interp_factors: Sequence[InterpolationFactor],
    sample_factor: SampleFactor,
    L: int,
    workers: int | None = 1,
    engine: SmolyakEngine | None = None,
) -> EstimatorResult:
    """Function-valued sparse estimate: a surrogate of the sample limit."""
    if engine is None:
        engine = SmolyakEngine(
            build_surface_problem(interp_factors, sample_factor), workers=workers
        )
    value, ledger = engine.estimate(L)
    if not isinstance(value, Surrogate):
        value = Surrogate(terms=((1.0, value),))
    return EstimatorResult(
        value=value,
        ledger=ledger,
        L=L,
        pde_solves=sample_factor.solve_count,
        kernel_solve_work=_interp_solve_work(engine, len(interp_factors)),
    )


def surface_study(
    interp_factors: Sequence[InterpolationFactor],
    sample_factor: SampleFactor,
    L_values: Sequence[int],
    eval_points: np.ndarray,
    reference_L: int | None = None,
    reference_values: np.ndarray | None = None,
    workers: int | None = 1,
) -> list[dict]:
    """Surrogate error table against a fine reference surrogate.

    Errors are estimated on ``eval_points``: ``error_l2`` is the root mean
    square difference, ``error_linf`` the maximum difference.
    """
    engine = SmolyakEngine(
        build_surface_problem(interp_factors, sample_factor), workers=workers
    )
    Ls = sorted(int(L) for L in L_values)
    if reference_values is None:
        ref_L = reference_L if reference_L is not None else Ls[-1] + 2
        reference, _ = engine.estimate(ref_L)
        reference_values = reference.evaluate(eval_points)
    rows = []
    for L in Ls:
        value, ledger = engine.estimate(L)
        diff = value.evaluate(eval_points) - reference_values
        rows.append(
            {
                "L": L,
                "work_units": ledger.total_work,
                "pde_solves": sample_factor.solve_count,
                "error_l2": float(np.sqrt(np.mean(diff**2))),
                "error_linf": float(np.max(np.abs(diff))),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Monte Carlo and optimization under uncertainty


def monte_carlo_mean(
    sampler: Callable[[np.random.Generator, int], Any], N: int, seed: int, stream: int = 0
):
    """Empirical mean of ``N`` counter-keyed draws.

    ``sampler(rng, k)`` receives a generator that is a pure function of
    ``(seed, stream, k)``, so the estimate does not depend on evaluation
    order and is reproducible across worker counts.
    """
    if N < 1:
        raise ValueError(f"sample count must be >= 1, got {N}")
    total = None
    for k in range(N):
        value = sampler(philox_generator(seed, stream, draw=k), k)
        total = value if total is None else total + value
    return total / N


class OuuPipeline:
    """Surrogate construction for optimization under uncertainty.

    Three factors: kernel interpolation over the control domain, empirical
    means over random-field draws, and the PDE mesh family.  Field draws
    are sampled once on the reference grid per ``(seed, stream, k)`` and
    every mesh resolution consumes the same realization (the solver
    samples its bilinear extension), so difference terms across mesh
    resolutions are exactly coupled.
    """

    def __init__(
        self,
        interp_factor: InterpolationFactor,
        seed: int,
        stream: int = 0,
        mc_gamma: float = 1.0,
        mc_scale: float = 1.0,
        pde_work_exponent: float = 1.5,
        pde_convergence_exponent: float = 1.0,
        pde_scale: float = 1.0,
        max_cells: int = 32,
        field_grid: Mesh | None = None,
        qoi: Callable[[np.ndarray, Any, Mesh], float] | None = None,
        workers: int | None = 1,
    ):
        self.interp_factor = interp_factor
        self.seed = seed
        self.stream = stream
        self.mc_spec = FactorSpec(
            gamma=mc_gamma,
            beta=0.5,
            label="monte-carlo",
            resolution_map=scaled_exponential_map(mc_gamma, 0.5, mc_scale)
            if mc_scale != 1.0
            else None,
        )
        self.pde_spec = FactorSpec(
            gamma=pde_work_exponent,
            beta=pde_convergence_exponent,
            label="field-pde",
            resolution_map=pde_resolution_map(
                pde_work_exponent, pde_convergence_exponent, max_cells, scale=pde_scale
            ),
        )
        self.field_grid = field_grid if field_grid is not None else Mesh(cells=32)
        self._field_sampler = GaussianFieldSampler(self.field_grid, stream=stream)
        if qoi is None:
            problem = AdvectionDiffusionProblem()
            qoi = lambda z, m, mesh: problem.sample_qoi(z, m, mesh)  # noqa: E731
        self._qoi = qoi
        self._field_cache: dict[int, Any] = {}
        self._solve_cache: dict[tuple[bytes, int, int], float] = {}
        self.draw_log: dict[tuple[int, ...], tuple[int, ...]] = {}
        problem_spec = ProblemSpec(
            factors=(self.interp_factor.spec, self.mc_spec, self.pde_spec),
            tensor_evaluator=self._evaluate,
            value_space="surrogate",
        )
        self.engine = SmolyakEngine(problem_spec, workers=workers)

    def _field(self, draw: int):
        sample = self._field_cache.get(draw)
        if sample is None:
            sample = self._field_sampler.sample(self.seed, draw)
            self._field_cache[draw] = sample
        return sample

    def _solve(self, z: np.ndarray, draw: int, cells: int) -> float:
        key = (z.tobytes(), draw, cells)
        value = self._solve_cache.get(key)
        if value is None:
            value = float(self._qoi(z, self._field(draw), cached_mesh(cells)))
            self._solve_cache[key] = value
        return value

    def _evaluate(self, resolutions: tuple[int, ...]):
        n_points, n_draws, mesh_resolution = resolutions
        cells = math.isqrt(mesh_resolution)
        if cells * cells != mesh_resolution:
            raise ValueError(
                f"resolution {mesh_resolution} is not a realized mesh size"
            )
        nodes = self.interp_factor.points(n_points)
        means = np.empty(n_points)
        for i, z in enumerate(nodes.points):
            acc = 0.0
            for k in range(n_draws):
                acc += self._solve(z, k, cells)
            means[i] = acc / n_draws
        self.draw_log[resolutions] = tuple(range(n_draws))
        return fit_interpolant(self.interp_factor.kernel, nodes, means)

    @property
    def pde_solves(self) -> int:
        return len(self._solve_cache)

    def estimate(self, L: int) -> EstimatorResult:
        value, ledger = self.engine.estimate(L)
        if not isinstance(value, Surrogate):
            value = Surrogate(terms=((1.0, value),))
        return EstimatorResult(
            value=value,
            ledger=ledger,
            L=L,
            pde_solves=self.pde_solves,
            kernel_solve_work=_interp_solve_work(self.engine, 1),
            draw_log=dict(self.draw_log),
        )


def ouu_surrogate(
    interp_factor: InterpolationFactor,
    L: int,
    seed: int,
    stream: int = 0,
    workers: int | None = 1,
    **pipeline_kwargs,
) -> EstimatorResult:
    """One-shot surrogate of the expected quantity of interest."""
    pipeline = OuuPipeline(
        interp_factor, seed=seed, stream=stream, workers=workers, **pipeline_kwargs
    )
    return pipeline.estimate(L)


@dataclass(frozen=True)
class OuuObjective:
    """Surrogate objective plus the quadratic control penalty ``|z|^2 / 10``."""

    surrogate: Surrogate
    penalty_weight: float = 0.1

    def __call__(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(self.surrogate(z)) + self.penalty_weight * float(z @ z)


def minimize_objective(
    objective: Callable[[np.ndarray], float],
    restarts: int = 8,
    seed: int = 0,
    domain: Disc | None = None,
    initial_step: float = 0.25,
    final_step: float = 1e-4,
) -> tuple[np.ndarray, float]:
    """Multi-start coordinate pattern search over the closed unit disc.

    Starts are a low-discrepancy prefix over the domain; each search
    probes coordinate steps, projects onto the disc, and halves the step
    on failure until it drops below ``final_step``.  The best visited
    point is returned; ``seed`` is accepted for interface stability but
    the search is fully deterministic.
    """
    del seed
    if domain is None:
        domain = Disc(center=(0.0, 0.0), radius=1.0)
    starts = generate_points(domain, max(1, restarts)).points
    center = np.asarray(domain.center)

    def project(z: np.ndarray) -> np.ndarray:
        offset = z - center
        norm = np.linalg.norm(offset)
        if norm <= domain.radius:
            return z
        return center + offset * (domain.radius / norm)

    best_z = None
    best_value = math.inf
    for start in starts:
        z = project(start.copy())
        value = objective(z)
        step = initial_step
        while step > final_step:
            improved = False
            for axis in range(len(z)):
                for direction in (1.0, -1.0):
                    candidate = z.copy()
                    candidate[axis] += direction * step
                    candidate = project(candidate)
                    candidate_value = objective(candidate)
                    if candidate_value < value - 1e-15:
                        z, value = candidate, candidate_value
                        improved = True
            if not improved:
                step *= 0.5
        if value < best_value:
            best_z, best_value = z, value
    return best_z, best_value


def ouu_study(
    interp_factor_builder: Callable[[], InterpolationFactor],
    L_values: Sequence[int],
    seed: int,
    replications: int = 5,
    reference_L: int | None = None,
    eval_points: np.ndarray | None = None,
    workers: int | None = 1,
    **pipeline_kwargs,
) -> tuple[list[dict], Surrogate]:
    """Mean-squared maximum-error table over stochastic replications.

    The reference surrogate is built on its own stream at ``reference_L``
    (default ``max(L) + 2``); each replication r = 1..R runs the full
    threshold range on stream ``r``.  Returns the rows and the reference
    surrogate (for downstream minimization).
    """
    Ls = sorted(int(L) for L in L_values)
    ref_L = reference_L if reference_L is not None else Ls[-1] + 2
    if eval_points is None:
        factor = interp_factor_builder()
        eval_points = random_points(factor.domain, 2048, seed)
    reference_pipeline = OuuPipeline(
        interp_factor_builder(), seed=seed, stream=0, workers=workers, **pipeline_kwargs
    )
    reference = reference_pipeline.estimate(ref_L).value
    reference_values = reference.evaluate(eval_points)
    pipelines = [
        OuuPipeline(
            interp_factor_builder(),
            seed=seed,
            stream=r,
            workers=workers,
            **pipeline_kwargs,
        )
        for r in range(1, replications + 1)
    ]
    rows = []
    for L in Ls:
        errors_sq = []
        work = None
        solves = 0
        for pipeline in pipelines:
            result = pipeline.estimate(L)
            diff = result.value.evaluate(eval_points) - reference_values
            errors_sq.append(float(np.max(np.abs(diff))) ** 2)
            work = result.ledger.total_work
            solves += result.pde_solves
        rows.append(
            {
                "L": L,
                "work_units": work,
                "pde_solves": solves,
                "mse_linf": float(np.mean(errors_sq)),
                "replications": replications,
            }
        )
    return rows, reference
