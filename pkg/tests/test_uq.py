import math

import numpy as np
import pytest

from kernelkit.kernels import (
    MaternKernel,
    doubling_levels,
    fit_interpolant,
    single_block,
)
from kernelkit.pde import Mesh
from kernelkit.points import Box, Disc, generate_points
from kernelkit.smolyak import (
    SmolyakEngine,
    fit_loglog_slope,
    level_to_resolution,
    predicted_rates,
)
from kernelkit.surrogate import load_surrogate, save_surrogate
from kernelkit.uq import (
    OuuObjective,
    OuuPipeline,
    build_expectation_problem,
    expectation_study,
    interpolation_factor,
    kernel_quadrature_factor,
    midpoint_quadrature_factor,
    minimize_objective,
    monte_carlo_mean,
    multiindex_expectation,
    multilevel_expectation,
    philox_generator,
    random_points,
    response_surface,
    surface_study,
    synthetic_bias_factor,
)

UNIT_INTERVAL = Box((0.0,), (1.0,))
UNIT_DISC = Disc(center=(0.0, 0.0), radius=1.0)


def parabola_factors():
    quad = midpoint_quadrature_factor(gamma=1.0, beta=2.0)
    sample = synthetic_bias_factor(lambda pts: pts[:, 0] ** 2, gamma=1.0, kappa=1.0)
    return quad, sample


class TestMultilevelExpectation:
    def test_matches_generic_engine(self):
        quad, sample = parabola_factors()
        problem = build_expectation_problem([quad], sample)
        direct, _ = SmolyakEngine(problem).estimate(6)
        result = multilevel_expectation(quad, sample, 6)
        assert abs(result.value - direct) <= 1e-12 * max(1.0, abs(direct))

    def test_matches_telescoped_double_sum(self):
        quad, sample = parabola_factors()
        for L in range(2, 7):
            result = multilevel_expectation(quad, sample, L)
            total = 0.0
            for l1 in range(1, L):
                l2 = L - l1
                pts, w = quad.rule(level_to_resolution(quad.spec, l1))
                fine = sample.values(pts, level_to_resolution(sample.spec, l2))
                if l2 == 1:
                    coarse = np.zeros(len(pts))
                else:
                    coarse = sample.values(pts, level_to_resolution(sample.spec, l2 - 1))
                total += float(w @ (fine - coarse))
            assert abs(result.value - total) <= 1e-12 * max(1.0, abs(total))

    def test_exact_quadrature_with_saturating_samples(self):
        # Quadrature exact for the integrand; sample family exact from level 2.
        def rule(count):
            pts = np.array([[0.5 - 0.5 / math.sqrt(3.0)], [0.5 + 0.5 / math.sqrt(3.0)]])
            return pts, np.array([0.5, 0.5])  # 2-point Gauss, exact for cubics

        from kernelkit.smolyak import FactorSpec
        from kernelkit.uq import QuadratureFactor, SampleFactor

        quad = QuadratureFactor(spec=FactorSpec(gamma=1.0, beta=2.0), rule=rule)
        cap = level_to_resolution(FactorSpec(gamma=1.0, beta=1.0), 2)

        def evaluate_one(point, resolution):
            return float(point[0] ** 2) + 1.0 / min(resolution, cap)

        sample = SampleFactor(
            spec=FactorSpec(gamma=1.0, beta=1.0), evaluate_one=evaluate_one
        )
        result = multilevel_expectation(quad, sample, 8)
        assert result.value == pytest.approx(1.0 / 3.0 + 1.0 / cap, rel=1e-12)

    def test_synthetic_error_slope(self):
        quad, sample = parabola_factors()
        pred = predicted_rates([quad.spec, sample.spec])
        rows = expectation_study([quad], sample, range(2, 15), reference=1.0 / 3.0)
        slope = fit_loglog_slope(
            [(r["work_units"], r["error_l2"]) for r in rows], window=0.5
        )
        assert abs(slope - pred.slope) <= 0.3 * abs(pred.slope)

    def test_work_model_is_product_of_resolutions(self):
        quad, sample = parabola_factors()
        result = multilevel_expectation(quad, sample, 5)
        recomputed = 0.0
        for index, work in result.ledger.per_term:
            n1 = level_to_resolution(quad.spec, index[0])
            n2 = level_to_resolution(sample.spec, index[1])
            assert work == pytest.approx(n1 * n2, rel=1e-13)
            recomputed += work
        assert result.ledger.total_work == pytest.approx(recomputed, rel=1e-13)


class TestMultiindexExpectation:
    def test_single_block_equals_multilevel(self):
        quad, sample = parabola_factors()
        a = multilevel_expectation(quad, sample, 6).value
        quad2, sample2 = parabola_factors()
        b = multiindex_expectation([quad2], sample2, 6).value
        assert a == b

    def test_constant_integrand_with_kernel_quadrature(self):
        kernel = MaternKernel(beta=2.0, dim=1)
        quad = kernel_quadrature_factor(kernel, UNIT_INTERVAL)
        constant = 4.2
        from kernelkit.smolyak import FactorSpec
        from kernelkit.uq import SampleFactor

        sample = SampleFactor(
            spec=FactorSpec(gamma=1.0, beta=1.0),
            evaluate_one=lambda point, resolution: constant,
        )
        L = 6
        result = multilevel_expectation(quad, sample, L)
        # Kernel rules integrate constants only up to a measurable defect.
        n_top = level_to_resolution(quad.spec, L - 1)
        pts, w = quad.rule(n_top)
        defect = float(w.sum()) - 1.0
        assert result.value == pytest.approx(constant * (1.0 + defect), abs=1e-9)

    def test_two_block_sine_product_converges(self):
        kernel = MaternKernel(beta=2.0, dim=1)
        quads = [
            kernel_quadrature_factor(kernel, UNIT_INTERVAL),
            kernel_quadrature_factor(kernel, UNIT_INTERVAL),
        ]
        integrand = lambda pts: np.sin(2 * np.pi * pts[:, 0]) * np.sin(
            2 * np.pi * pts[:, 1]
        )
        sample = synthetic_bias_factor(integrand, gamma=1.5, kappa=1.0)
        rows = []
        engine = SmolyakEngine(build_expectation_problem(quads, sample))
        reference, _ = engine.estimate(10)
        for L in range(3, 9):
            value, _ = engine.estimate(L)
            rows.append(abs(value - reference))
        assert all(b <= a + 1e-15 for a, b in zip(rows, rows[1:]))
        assert rows[-1] < 0.2 * rows[0]


class TestResponseSurface:
    def test_exactness_for_native_target(self):
        kernel = MaternKernel(beta=2.0, dim=1)
        factor = interpolation_factor(kernel, UNIT_INTERVAL)
        anchors = factor.points(level_to_resolution(factor.spec, 1))
        coeffs = np.array([1.5, -0.75])
        tensor = single_block(kernel)

        def target(pts):
            return tensor.gram(pts, anchors.points) @ coeffs

        from kernelkit.smolyak import FactorSpec
        from kernelkit.uq import SampleFactor

        sample = SampleFactor(
            spec=FactorSpec(gamma=1.5, beta=1.0),
            evaluate_one=lambda point, resolution: float(target(point.reshape(1, -1))[0]),
        )
        result = response_surface([factor], sample, L=5)
        test_pts = random_points(UNIT_INTERVAL, 100, seed=3)
        err = result.value.evaluate(test_pts) - target(test_pts)
        assert np.max(np.abs(err)) <= 1e-7

    def test_surrogate_linearity_in_samples(self):
        from kernelkit.smolyak import FactorSpec
        from kernelkit.uq import SampleFactor

        kernel = MaternKernel(beta=2.0, dim=1)
        results = []
        for scale in (1.0, 2.0):
            factor = interpolation_factor(kernel, UNIT_INTERVAL)
            sample = SampleFactor(
                spec=FactorSpec(gamma=1.5, beta=1.0),
                evaluate_one=lambda point, resolution, s=scale: s
                * (math.exp(point[0]) + 1.0 / resolution),
            )
            results.append(response_surface([factor], sample, L=5).value)
        xs = random_points(UNIT_INTERVAL, 64, seed=4)
        assert np.allclose(
            2.0 * results[0].evaluate(xs), results[1].evaluate(xs), rtol=0, atol=1e-12
        )

    def test_serialization_round_trip(self, tmp_path):
        kernel = MaternKernel(beta=2.0, dim=1)
        factor = interpolation_factor(kernel, UNIT_INTERVAL)
        sample = synthetic_bias_factor(
            lambda pts: np.sin(2 * np.pi * pts[:, 0]), gamma=1.5, kappa=1.0
        )
        surrogate = response_surface([factor], sample, L=5).value
        path = tmp_path / "rsr.txt"
        save_surrogate(surrogate, path)
        loaded = load_surrogate(path)
        xs = random_points(UNIT_INTERVAL, 128, seed=5)
        assert np.array_equal(surrogate.evaluate(xs), loaded.evaluate(xs))

    def test_study_rows_are_consistent(self):
        kernel = MaternKernel(beta=2.0, dim=1)
        factor = interpolation_factor(kernel, UNIT_INTERVAL)
        sample = synthetic_bias_factor(
            lambda pts: np.sin(2 * np.pi * pts[:, 0]), gamma=1.5, kappa=1.0
        )
        pts = random_points(UNIT_INTERVAL, 256, seed=6)
        rows = surface_study([factor], sample, range(2, 7), eval_points=pts)
        works = [r["work_units"] for r in rows]
        assert works == sorted(works)
        assert all(r["error_l2"] <= r["error_linf"] + 1e-15 for r in rows)

    def test_pde_work_model_charged_per_term(self):
        from kernelkit.multiindex import combination_coefficients
        from kernelkit.uq import bump_sample_factor

        kernel = MaternKernel(beta=2.0, dim=2)
        box = Box((0.25, 0.25), (0.75, 0.75))
        factor = interpolation_factor(kernel, box)
        sample = bump_sample_factor(n_bumps=1, max_cells=16)
        L = 5
        result = response_surface([factor], sample, L)
        expected = sum(
            level_to_resolution(factor.spec, term.index[0])
            * level_to_resolution(sample.spec, term.index[1]) ** 1.5
            for term in combination_coefficients(2, L)
        )
        assert result.ledger.total_work == pytest.approx(expected, rel=1e-12)


class TestMonteCarloMean:
    def test_constant_sampler(self):
        value = monte_carlo_mean(lambda rng, k: 3.25, N=17, seed=0)
        assert value == 3.25

    def test_mean_of_means_band(self):
        means = [
            monte_carlo_mean(lambda rng, k: rng.standard_normal(), N=10_000, seed=s)
            for s in range(30)
        ]
        assert abs(float(np.mean(means))) <= 4.0 / math.sqrt(10_000)

    def test_variance_scales_inversely_with_samples(self):
        def estimate(N, seed):
            return monte_carlo_mean(lambda rng, k: rng.standard_normal(), N=N, seed=seed)

        small = np.array([estimate(1024, s) for s in range(200)])
        large = np.array([estimate(4096, s + 1000) for s in range(200)])
        ratio = large.var() / small.var()
        assert 0.15 <= ratio <= 0.35

    def test_deterministic_in_seed(self):
        a = monte_carlo_mean(lambda rng, k: rng.standard_normal(), N=64, seed=9)
        b = monte_carlo_mean(lambda rng, k: rng.standard_normal(), N=64, seed=9)
        assert a == b

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            monte_carlo_mean(lambda rng, k: 0.0, N=0, seed=0)


def stub_interp_factor():
    kernel = MaternKernel(beta=4.0, dim=2)
    return interpolation_factor(
        kernel, UNIT_DISC, alpha=1.0, resolution_map=doubling_levels
    )


class TestOuuPipeline:
    def test_degenerate_factors_reduce_to_interpolation(self):
        target = lambda z: float(np.sin(z[0]) + 0.5 * z[1])
        pipeline = OuuPipeline(
            stub_interp_factor(),
            seed=0,
            stream=1,
            qoi=lambda z, field, mesh: target(z),
            field_grid=Mesh(cells=8),
            max_cells=8,
        )
        L = 6
        result = pipeline.estimate(L)
        count = level_to_resolution(pipeline.interp_factor.spec, L - 2)
        nodes = generate_points(UNIT_DISC, count)
        direct = fit_interpolant(
            pipeline.interp_factor.kernel,
            nodes,
            np.array([target(z) for z in nodes.points]),
        )
        pts = random_points(UNIT_DISC, 200, seed=1)
        assert np.max(np.abs(result.value.evaluate(pts) - direct.evaluate(pts))) <= 1e-9

    def test_draw_sets_shared_across_mesh_levels(self):
        pipeline = OuuPipeline(
            stub_interp_factor(),
            seed=0,
            stream=2,
            field_grid=Mesh(cells=8),
            max_cells=8,
        )
        result = pipeline.estimate(5)
        by_draw_count = {}
        for resolutions, draws in result.draw_log.items():
            assert draws == tuple(range(resolutions[1]))
            by_draw_count.setdefault(resolutions[1], set()).add(draws)
        for draws_used in by_draw_count.values():
            assert len(draws_used) == 1

    def test_solve_cache_couples_corners(self):
        pipeline = OuuPipeline(
            stub_interp_factor(),
            seed=0,
            stream=3,
            field_grid=Mesh(cells=8),
            max_cells=8,
        )
        pipeline.estimate(5)
        draws_by_cells = {}
        for _, draw, cells in pipeline._solve_cache:
            draws_by_cells.setdefault(cells, set()).add(draw)
        counts = {c: max(d) + 1 for c, d in draws_by_cells.items()}
        # Every mesh resolution consumed a prefix of the same draw sequence.
        for cells, draws in draws_by_cells.items():
            assert draws == set(range(counts[cells]))

    def test_estimator_unbiased_on_noisy_stub(self):
        target = 1.7

        def qoi(z, field, mesh):
            return target + 0.3 * float(field.values[0])

        values = []
        for seed in range(100):
            pipeline = OuuPipeline(
                stub_interp_factor(),
                seed=seed,
                stream=1,
                qoi=qoi,
                field_grid=Mesh(cells=4),
                max_cells=4,
            )
            values.append(pipeline.estimate(4).value(np.array([0.2, 0.1])))
        values = np.array(values)
        stderr = values.std(ddof=1) / math.sqrt(len(values))
        assert abs(values.mean() - target) <= 4.0 * max(stderr, 1e-12)

    def test_objective_at_origin_has_no_penalty(self):
        pipeline = OuuPipeline(
            stub_interp_factor(),
            seed=0,
            stream=1,
            qoi=lambda z, field, mesh: float(z[0] ** 2),
            field_grid=Mesh(cells=4),
            max_cells=4,
        )
        surrogate = pipeline.estimate(4).value
        objective = OuuObjective(surrogate=surrogate)
        origin = np.zeros(2)
        assert objective(origin) == pytest.approx(float(surrogate(origin)))

    def test_linearity_under_qoi_scaling(self):
        def build(scale):
            pipeline = OuuPipeline(
                stub_interp_factor(),
                seed=0,
                stream=1,
                qoi=lambda z, field, mesh: scale
                * (1.0 + z[0] + 0.1 * float(field.values[0])),
                field_grid=Mesh(cells=4),
                max_cells=4,
            )
            return pipeline.estimate(5).value

        xs = random_points(UNIT_DISC, 50, seed=2)
        a = build(1.0).evaluate(xs)
        b = build(2.0).evaluate(xs)
        assert np.allclose(2.0 * a, b, rtol=0, atol=1e-10)


class TestMinimizeObjective:
    def test_quadratic_bowl(self):
        z0 = np.array([0.3, 0.2])
        objective = lambda z: float(np.sum((np.asarray(z) - z0) ** 2))
        z, value = minimize_objective(objective, restarts=6, seed=0)
        assert np.linalg.norm(z - z0) <= 1e-3
        assert value <= 1e-6

    def test_pure_penalty(self):
        objective = OuuObjective(
            surrogate=_zero_surrogate(), penalty_weight=0.1
        )
        z, _ = minimize_objective(objective, restarts=6, seed=0)
        assert np.linalg.norm(z) <= 1e-3

    def test_minimizer_stays_in_disc(self):
        objective = lambda z: -float(z[0])  # pushes toward the boundary
        z, _ = minimize_objective(objective, restarts=4, seed=0)
        assert np.linalg.norm(z) <= 1.0 + 1e-9
        assert z[0] == pytest.approx(1.0, abs=1e-3)


def _zero_surrogate():
    kernel = MaternKernel(beta=4.0, dim=2)
    nodes = generate_points(UNIT_DISC, 3)
    interp = fit_interpolant(kernel, nodes, np.zeros(3))
    from kernelkit.surrogate import Surrogate

    return Surrogate(terms=((1.0, interp),))


class TestDeterminism:
    def test_pipeline_outputs_identical_across_worker_counts(self):
        def run(workers):
            quad, sample = parabola_factors()
            rows = expectation_study(
                [quad], sample, range(2, 8), reference=1.0 / 3.0, workers=workers
            )
            return [(r["work_units"], r["error_l2"]) for r in rows]

        assert run(1) == run(8)

    def test_ouu_identical_across_worker_counts(self):
        def run(workers):
            pipeline = OuuPipeline(
                stub_interp_factor(),
                seed=5,
                stream=1,
                field_grid=Mesh(cells=8),
                max_cells=8,
                workers=workers,
            )
            pts = random_points(UNIT_DISC, 64, seed=0)
            return pipeline.estimate(5).value.evaluate(pts)

        assert np.array_equal(run(1), run(4))

    def test_philox_draws_are_order_independent(self):
        a = philox_generator(3, 1, draw=7).standard_normal(4)
        philox_generator(3, 1, draw=6).standard_normal(100)
        b = philox_generator(3, 1, draw=7).standard_normal(4)
        assert np.array_equal(a, b)
