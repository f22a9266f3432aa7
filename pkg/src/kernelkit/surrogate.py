"""Signed combinations of kernel interpolants, with plain-text persistence.

A surrogate is the function-valued output of the combination engine: a
weighted sum of tensor-product kernel interpolants.  Surrogates support
addition and scalar multiplication (term concatenation / coefficient
scaling), so the engine can accumulate them like numbers.

The on-disk format is versioned plain text (header ``kernelkit-surrogate
v1``) with one block per term listing the combination coefficient, kernel
parameters, node coordinates and interpolation coefficients, all floats
written with ``%.17g`` so a round trip preserves values bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kernelkit.kernels import Interpolant, MaternKernel, TensorKernel
from kernelkit.points import Box, Disc, Domain, PointSet

_HEADER = "kernelkit-surrogate v1"


def _fmt(value: float) -> str:
    return f"{value:.17g}"


@dataclass(frozen=True)
class Surrogate:
    """Weighted sum of kernel interpolants."""

    terms: tuple[tuple[float, Interpolant], ...]

    def __post_init__(self):
        if len(self.terms) == 0:
            raise ValueError("surrogate needs at least one term")

    @property
    def dim(self) -> int:
        return self.terms[0][1].nodes.dim

    @property
    def domain(self) -> Domain:
        return self.terms[0][1].nodes.domain

    def evaluate(self, points: np.ndarray, check_domain: bool = True) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0])
        for coefficient, interpolant in self.terms:
            out += coefficient * interpolant.evaluate(pts, check_domain=check_domain)
        return out

    def __call__(self, point) -> float:
        return float(self.evaluate(np.asarray(point, dtype=float).reshape(1, -1))[0])

    def __add__(self, other):
        if isinstance(other, Interpolant):
            other = Surrogate(terms=((1.0, other),))
        if not isinstance(other, Surrogate):
            return NotImplemented
        return Surrogate(terms=self.terms + other.terms)

    __radd__ = __add__

    def __rmul__(self, coefficient: float) -> "Surrogate":
        c = float(coefficient)
        return Surrogate(terms=tuple((c * w, s) for w, s in self.terms))

    __mul__ = __rmul__

    def __neg__(self) -> "Surrogate":
        return -1.0 * self

    def __sub__(self, other) -> "Surrogate":
        return self + (-1.0 * other)

    def node_count(self) -> int:
        return sum(len(interp.nodes) for _, interp in self.terms)


def _domain_line(domain: Domain) -> str:
    if isinstance(domain, Box):
        parts = ["domain", "box", str(domain.dim)]
        parts += [_fmt(v) for v in domain.lows] + [_fmt(v) for v in domain.highs]
        return " ".join(parts)
    if isinstance(domain, Disc):
        return " ".join(
            ["domain", "disc", _fmt(domain.center[0]), _fmt(domain.center[1]), _fmt(domain.radius)]
        )
    raise TypeError(f"unsupported domain type {type(domain)!r}")


def _parse_domain(tokens: list[str]) -> Domain:
    kind = tokens[0]
    if kind == "box":
        d = int(tokens[1])
        values = [float(v) for v in tokens[2:]]
        if len(values) != 2 * d:
            raise ValueError("malformed box domain line")
        return Box(lows=tuple(values[:d]), highs=tuple(values[d:]))
    if kind == "disc":
        cx, cy, r = (float(v) for v in tokens[1:4])
        return Disc(center=(cx, cy), radius=r)
    raise ValueError(f"unknown domain kind {kind!r}")


def dump_surrogate(surrogate: Surrogate) -> str:
    """Serialize to the versioned plain-text format."""
    lines = [_HEADER, f"terms {len(surrogate.terms)}"]
    for coefficient, interp in surrogate.terms:
        lines.append("term")
        lines.append(f"coefficient {_fmt(coefficient)}")
        lines.append(f"blocks {len(interp.kernel.blocks)}")
        for kernel, coords in interp.kernel.blocks:
            lines.append(
                "block "
                + " ".join(
                    [_fmt(kernel.beta), str(kernel.dim), _fmt(kernel.length_scale)]
                    + [str(c) for c in coords]
                )
            )
        lines.append(_domain_line(interp.nodes.domain))
        pts = interp.nodes.points
        lines.append(f"nodes {pts.shape[0]} {pts.shape[1]}")
        for row in pts:
            lines.append(" ".join(_fmt(v) for v in row))
        lines.append(f"alpha {len(interp.coefficients)}")
        for v in interp.coefficients:
            lines.append(_fmt(v))
        lines.append("end")
    return "\n".join(lines) + "\n"


def save_surrogate(surrogate: Surrogate, path) -> None:
    with open(path, "w") as handle:
        handle.write(dump_surrogate(surrogate))


def parse_surrogate(text: str) -> Surrogate:
    """Inverse of :func:`dump_surrogate`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise ValueError("not a kernelkit surrogate file (bad header)")
    if not lines[1].startswith("terms "):
        raise ValueError("missing term count")
    term_count = int(lines[1].split()[1])
    pos = 2
    terms = []
    for _ in range(term_count):
        if lines[pos] != "term":
            raise ValueError(f"expected 'term' at line {pos + 1}")
        pos += 1
        coefficient = float(lines[pos].split()[1])
        pos += 1
        block_count = int(lines[pos].split()[1])
        pos += 1
        blocks = []
        for _ in range(block_count):
            tokens = lines[pos].split()
            if tokens[0] != "block":
                raise ValueError(f"expected 'block' at line {pos + 1}")
            beta, dim, scale = float(tokens[1]), int(tokens[2]), float(tokens[3])
            coords = tuple(int(c) for c in tokens[4:])
            blocks.append((MaternKernel(beta=beta, dim=dim, length_scale=scale), coords))
            pos += 1
        tokens = lines[pos].split()
        if tokens[0] != "domain":
            raise ValueError(f"expected 'domain' at line {pos + 1}")
        domain = _parse_domain(tokens[1:])
        pos += 1
        tokens = lines[pos].split()
        if tokens[0] != "nodes":
            raise ValueError(f"expected 'nodes' at line {pos + 1}")
        count, dim = int(tokens[1]), int(tokens[2])
        pos += 1
        pts = np.array(
            [[float(v) for v in lines[pos + i].split()] for i in range(count)]
        ).reshape(count, dim)
        pos += count
        tokens = lines[pos].split()
        if tokens[0] != "alpha":
            raise ValueError(f"expected 'alpha' at line {pos + 1}")
        alpha_count = int(tokens[1])
        pos += 1
        alpha = np.array([float(lines[pos + i]) for i in range(alpha_count)])
        pos += alpha_count
        if lines[pos] != "end":
            raise ValueError(f"expected 'end' at line {pos + 1}")
        pos += 1
        kernel = TensorKernel(blocks=tuple(blocks))
        nodes = PointSet(points=pts, domain=domain)
        gram = kernel.gram(pts, pts)
        values = gram @ alpha
        alpha.setflags(write=False)
        interp = Interpolant(
            kernel=kernel,
            nodes=nodes,
            coefficients=alpha,
            native_norm_sq=float(values @ alpha),
        )
        terms.append((coefficient, interp))
    return Surrogate(terms=tuple(terms))


def load_surrogate(path) -> Surrogate:
    with open(path) as handle:
        return parse_surrogate(handle.read())
