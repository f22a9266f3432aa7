import numpy as np
import pytest

from kernelkit.kernels import MaternKernel, fit_interpolant, sparse_interpolate
from kernelkit.points import Box, Disc, generate_points
from kernelkit.surrogate import (
    Surrogate,
    dump_surrogate,
    load_surrogate,
    parse_surrogate,
    save_surrogate,
)

UNIT_INTERVAL = Box((0.0,), (1.0,))


def simple_surrogate():
    k = MaternKernel(beta=2.0, dim=1)
    nodes_a = generate_points(UNIT_INTERVAL, 6)
    nodes_b = generate_points(UNIT_INTERVAL, 9)
    ia = fit_interpolant(k, nodes_a, np.sin(nodes_a.points[:, 0]))
    ib = fit_interpolant(k, nodes_b, np.cos(nodes_b.points[:, 0]))
    return Surrogate(terms=((1.0, ib), (-0.5, ia)))


class TestSurrogateAlgebra:
    def test_weighted_evaluation(self):
        s = simple_surrogate()
        xs = np.linspace(0.0, 1.0, 33).reshape(-1, 1)
        expected = s.terms[0][1].evaluate(xs) - 0.5 * s.terms[1][1].evaluate(xs)
        assert np.allclose(s.evaluate(xs), expected, atol=1e-14)

    def test_addition_concatenates_terms(self):
        s = simple_surrogate()
        total = s + s
        xs = np.array([[0.3]])
        assert total.evaluate(xs)[0] == pytest.approx(2.0 * s.evaluate(xs)[0])
        assert len(total.terms) == 4

    def test_scalar_multiplication(self):
        s = simple_surrogate()
        xs = np.array([[0.7]])
        assert (3.0 * s).evaluate(xs)[0] == pytest.approx(3.0 * s.evaluate(xs)[0])
        assert (-s).evaluate(xs)[0] == pytest.approx(-s.evaluate(xs)[0])

    def test_interpolant_coerces_to_surrogate(self):
        k = MaternKernel(beta=2.0, dim=1)
        nodes = generate_points(UNIT_INTERVAL, 5)
        interp = fit_interpolant(k, nodes, np.ones(5))
        s = 2.0 * interp
        assert isinstance(s, Surrogate)
        assert s(np.array([0.5])) == pytest.approx(2.0 * interp(np.array([0.5])))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Surrogate(terms=())


class TestSerialization:
    def test_header(self):
        text = dump_surrogate(simple_surrogate())
        assert text.splitlines()[0] == "kernelkit-surrogate v1"

    def test_round_trip_is_exact(self, tmp_path):
        s = simple_surrogate()
        path = tmp_path / "surrogate.txt"
        save_surrogate(s, path)
        loaded = load_surrogate(path)
        xs = np.random.default_rng(0).random((200, 1))
        a = s.evaluate(xs)
        b = loaded.evaluate(xs)
        assert np.max(np.abs(a - b)) <= 1e-15 * max(1.0, np.max(np.abs(a)))

    def test_round_trip_sparse_surrogate(self, tmp_path):
        k = MaternKernel(beta=2.0, dim=1)
        f = lambda p: np.sin(2 * np.pi * p[:, 0]) * np.sin(2 * np.pi * p[:, 1])
        s = sparse_interpolate([k, k], [UNIT_INTERVAL, UNIT_INTERVAL], f, L=5)
        path = tmp_path / "sparse.txt"
        save_surrogate(s, path)
        loaded = load_surrogate(path)
        xs = np.random.default_rng(1).random((300, 2))
        assert np.array_equal(s.evaluate(xs), loaded.evaluate(xs))

    def test_disc_domain_round_trip(self, tmp_path):
        disc = Disc(center=(0.0, 0.0), radius=1.0)
        k = MaternKernel(beta=4.0, dim=2)
        nodes = generate_points(disc, 12)
        interp = fit_interpolant(k, nodes, np.cos(nodes.points[:, 0]))
        s = Surrogate(terms=((2.5, interp),))
        path = tmp_path / "disc.txt"
        save_surrogate(s, path)
        loaded = load_surrogate(path)
        xs = generate_points(disc, 50).points
        assert np.array_equal(s.evaluate(xs), loaded.evaluate(xs))

    def test_rejects_bad_header(self):
        with pytest.raises(ValueError):
            parse_surrogate("something else\nterms 0\n")
