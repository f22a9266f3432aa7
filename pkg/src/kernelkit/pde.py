"""Structured P1 finite elements on the unit square, model problems, and
a Gaussian-random-field sampler with cross-resolution coupling.

Meshes are uniform triangulations of ``[0,1]**2``: ``cells`` squares per
axis, each split into two right triangles along the southwest-northeast
diagonal.  Dyadic meshes (``cells = 2**level``) are used by the
convergence check and as random-field reference grids; the sparse
pipelines realize their resolution sequences with arbitrary cell counts,
because the combination rule needs resolutions that grow by small factors
per level while dyadic refinement quadruples the point count.

Two model problems are provided: a pure-diffusion problem with movable
bumps in the coefficient and homogeneous Dirichlet data, and an
advection-diffusion problem with a random log-normal-type coefficient,
fixed Gaussian source and Robin boundary data.  The quantity of interest
is always the spatial average of the solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from kernelkit.points import Box

_FIELD_NUGGET = 1e-10
_FIELD_NUGGET_FALLBACK = 1e-8
_MAX_FIELD_NODES = 5000


@dataclass(frozen=True)
class Mesh:
    """Uniform right-triangle mesh of the unit square."""

    cells: int

    def __post_init__(self):
        if self.cells < 1:
            raise ValueError(f"cells must be >= 1, got {self.cells}")

    @property
    def nodes_per_axis(self) -> int:
        return self.cells + 1

    @property
    def node_count(self) -> int:
        return self.nodes_per_axis**2

    @property
    def h(self) -> float:
        return 1.0 / self.cells

    @property
    def h_max(self) -> float:
        return math.sqrt(2.0) / self.cells

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, ordered row-major in (y, x)."""
        axis = np.linspace(0.0, 1.0, self.nodes_per_axis)
        xg, yg = np.meshgrid(axis, axis, indexing="xy")
        out = np.stack([xg.ravel(), yg.ravel()], axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def triangles(self) -> np.ndarray:
        nx = self.nodes_per_axis
        c = self.cells
        i, j = np.meshgrid(np.arange(c), np.arange(c), indexing="xy")
        n00 = (j * nx + i).ravel()
        n10 = n00 + 1
        n01 = n00 + nx
        n11 = n01 + 1
        lower = np.stack([n00, n10, n11], axis=1)
        upper = np.stack([n00, n11, n01], axis=1)
        out = np.vstack([lower, upper])
        out.setflags(write=False)
        return out

    @cached_property
    def centroids(self) -> np.ndarray:
        out = self.nodes[self.triangles].mean(axis=1)
        out.setflags(write=False)
        return out

    @property
    def triangle_area(self) -> float:
        return 0.5 * self.h * self.h

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        nx = self.nodes_per_axis
        i = np.arange(self.node_count) % nx
        j = np.arange(self.node_count) // nx
        out = (i == 0) | (i == nx - 1) | (j == 0) | (j == nx - 1)
        out.setflags(write=False)
        return out

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Boundary edges as ``(node_a, node_b)`` pairs, axis-aligned."""
        nx = self.nodes_per_axis
        c = self.cells
        edges = []
        for i in range(c):  # bottom and top
            edges.append((i, i + 1))
            edges.append((c * nx + i, c * nx + i + 1))
        for j in range(c):  # left and right
            edges.append((j * nx, (j + 1) * nx))
            edges.append((j * nx + c, (j + 1) * nx + c))
        out = np.array(edges, dtype=int)
        out.setflags(write=False)
        return out

    @cached_property
    def gradients(self) -> np.ndarray:
        """Per-triangle P1 basis gradients, shape (ntri, 2, 3)."""
        pts = self.nodes[self.triangles]  # (ntri, 3, 2)
        x = pts[:, :, 0]
        y = pts[:, :, 1]
        two_area = 2.0 * self.triangle_area
        grads = np.empty((len(self.triangles), 2, 3))
        for k in range(3):
            k1 = (k + 1) % 3
            k2 = (k + 2) % 3
            grads[:, 0, k] = (y[:, k1] - y[:, k2]) / two_area
            grads[:, 1, k] = (x[:, k2] - x[:, k1]) / two_area
        grads.setflags(write=False)
        return grads


def mesh_at_level(level: int) -> Mesh:
    """Dyadic mesh with ``2**level`` cells per axis."""
    if level < 1:
        raise ValueError(f"mesh level must be >= 1, got {level}")
    return Mesh(cells=2**level)


def mesh_cells_for_resolution(resolution: int, max_cells: int) -> int:
    """Cells per axis realizing a target point-count-like resolution.

    Uses ``cells = round(sqrt(2 * resolution))`` (the resolution plays the
    role of ``h_max**-2``), clamped to ``[2, max_cells]``.
    """
    if resolution < 1:
        raise ValueError(f"resolution must be >= 1, got {resolution}")
    cells = int(round(math.sqrt(2.0 * resolution)))
    return max(2, min(max_cells, cells))


def pde_resolution_map(
    work_exponent: float,
    convergence_exponent: float,
    max_cells: int,
    scale: float = 1.0,
):
    """Level map for a PDE factor: realized mesh size as the resolution.

    The idealized subsequence ``ceil(scale * exp(t*l))`` is realized on
    the mesh family by rounding to a cell count; the returned resolution
    is the realized ``cells**2``, so the engine's ``resolution**gamma``
    charge equals the ``(mesh size)**gamma`` solver-work model exactly.
    ``scale`` shifts the subsequence without touching any exponent.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    t = 1.0 / (work_exponent + convergence_exponent)

    def mapped(level: int) -> int:
        target = math.ceil(scale * math.exp(t * level))
        return mesh_cells_for_resolution(target, max_cells) ** 2

    return mapped


def spatial_average(solution: np.ndarray, mesh: Mesh) -> float:
    """Exact integral of a P1 function over the unit square."""
    if solution.shape != (mesh.node_count,):
        raise ValueError("solution vector does not match mesh")
    return float(solution[mesh.triangles].sum() * mesh.triangle_area / 3.0)


def _assemble_stiffness(mesh: Mesh, a_centroid: np.ndarray) -> sparse.csr_matrix:
    grads = mesh.gradients
    local = np.einsum("tdi,tdj->tij", grads, grads)
    local = local * (a_centroid * mesh.triangle_area)[:, None, None]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    return sparse.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.node_count, mesh.node_count)
    ).tocsr()


def _assemble_advection(mesh: Mesh, velocity: np.ndarray) -> sparse.csr_matrix:
    grads = mesh.gradients
    zdotg = np.einsum("d,tdj->tj", velocity, grads)  # (ntri, 3)
    ntri = len(mesh.triangles)
    local = np.broadcast_to(zdotg[:, None, :], (ntri, 3, 3)) * (
        mesh.triangle_area / 3.0
    )
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    return sparse.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.node_count, mesh.node_count)
    ).tocsr()


def _assemble_load(mesh: Mesh, f_centroid: np.ndarray) -> np.ndarray:
    load = np.zeros(mesh.node_count)
    contribution = f_centroid * (mesh.triangle_area / 3.0)
    for k in range(3):
        np.add.at(load, mesh.triangles[:, k], contribution)
    return load


def _assemble_robin(mesh: Mesh, a_edge: np.ndarray, ub_nodes: np.ndarray):
    """Boundary mass and right-hand side for ``du/dn + u = u_b``.

    The conormal term contributes ``a * (u_b - u)`` on the boundary, with
    the diffusion coefficient evaluated at edge midpoints.
    """
    edges = mesh.boundary_edges
    length = mesh.h
    mass = np.array([[2.0, 1.0], [1.0, 2.0]]) * (length / 6.0)
    data = a_edge[:, None, None] * mass[None, :, :]
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    boundary_mass = sparse.coo_matrix(
        (data.ravel(), (rows, cols)), shape=(mesh.node_count, mesh.node_count)
    ).tocsr()
    ub_local = ub_nodes[edges]  # (nedge, 2)
    rhs_local = np.einsum("ij,ej->ei", mass, ub_local) * a_edge[:, None]
    rhs = np.zeros(mesh.node_count)
    np.add.at(rhs, edges[:, 0], rhs_local[:, 0])
    np.add.at(rhs, edges[:, 1], rhs_local[:, 1])
    return boundary_mass, rhs


def solve_poisson_dirichlet(mesh: Mesh, a_centroid, f_centroid) -> np.ndarray:
    """P1 solve of ``-div(a grad u) = f`` with homogeneous Dirichlet data.

    ``a_centroid`` and ``f_centroid`` are arrays over triangles (one-point
    centroid quadrature) or scalars.
    """
    ntri = len(mesh.triangles)
    a = np.broadcast_to(np.asarray(a_centroid, dtype=float), (ntri,))
    f = np.broadcast_to(np.asarray(f_centroid, dtype=float), (ntri,))
    stiffness = _assemble_stiffness(mesh, a)
    load = _assemble_load(mesh, f)
    interior = ~mesh.boundary_mask
    solution = np.zeros(mesh.node_count)
    if interior.any():
        system = stiffness[interior][:, interior].tocsc()
        solution[interior] = spsolve(system, load[interior])
    return solution


@dataclass(frozen=True)
class BumpDiffusionProblem:
    """Diffusion through a medium with movable bumps in the coefficient.

    The coefficient is ``2 + sum_j bump_profile(|x - c_j| / radius)`` where
    each center ``c_j`` ranges over its own box, chosen so bump supports
    stay disjoint and inside the unit square.  The source is 1 and the
    solution vanishes on the boundary.
    """

    n_bumps: int = 1

    def __post_init__(self):
        if self.n_bumps not in (1, 2, 4):
            raise ValueError(f"supported bump counts: 1, 2, 4 (got {self.n_bumps})")

    @property
    def radius(self) -> float:
        return 0.25 if self.n_bumps == 1 else 0.125

    @cached_property
    def center_boxes(self) -> tuple[Box, ...]:
        r = self.radius
        if self.n_bumps == 1:
            return (Box((r, r), (1.0 - r, 1.0 - r)),)
        if self.n_bumps == 2:
            return (
                Box((r, r), (0.5 - r, 1.0 - r)),
                Box((0.5 + r, r), (1.0 - r, 1.0 - r)),
            )
        return (
            Box((r, r), (0.5 - r, 0.5 - r)),
            Box((0.5 + r, r), (1.0 - r, 0.5 - r)),
            Box((r, 0.5 + r), (0.5 - r, 1.0 - r)),
            Box((0.5 + r, 0.5 + r), (1.0 - r, 1.0 - r)),
        )

    @property
    def parameter_dimension(self) -> int:
        return 2 * self.n_bumps

    def diffusion(self, centers: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Coefficient values at points ``x`` for bump centers ``centers``."""
        centers = np.asarray(centers, dtype=float).reshape(self.n_bumps, 2)
        out = np.full(len(x), 2.0)
        for c in centers:
            r = np.linalg.norm(x - c, axis=1) / self.radius
            out += bump_profile(r)
        return out

    def solve(self, centers: np.ndarray, mesh: Mesh) -> np.ndarray:
        a = self.diffusion(centers, mesh.centroids)
        return solve_poisson_dirichlet(mesh, a, 1.0)

    def sample_qoi(self, centers: np.ndarray, mesh: Mesh) -> float:
        return spatial_average(self.solve(centers, mesh), mesh)


def bump_profile(r) -> np.ndarray:
    """Polynomial bump ``s**3/3 - s**4/2 + s**5/5`` at ``s = max(1 - r, 0)``."""
    s = np.clip(1.0 - np.asarray(r, dtype=float), 0.0, None)
    return s**3 / 3.0 - s**4 / 2.0 + s**5 / 5.0


def _advection_boundary_values(x: np.ndarray) -> np.ndarray:
    """Piecewise boundary data; corners are consistent across sides."""
    vals = np.zeros(len(x))
    x1 = x[:, 0]
    x2 = x[:, 1]
    left = np.isclose(x1, 0.0)
    right = np.isclose(x1, 1.0)
    bottom = np.isclose(x2, 0.0) & ~left & ~right
    top = np.isclose(x2, 1.0) & ~left & ~right
    vals[left] = 1.0
    vals[right] = 0.0
    vals[bottom] = 0.5 * (1.0 + np.cos(np.pi * x1[bottom]))
    safe = top & (x1 < 1.0)
    vals[safe] = np.exp(1.0 - 1.0 / (1.0 - x1[safe]))
    return vals


@dataclass(frozen=True)
class AdvectionDiffusionProblem:
    """Advection-diffusion with random diffusion and Robin boundary data.

    The diffusion coefficient is ``1 + exp(-m)`` for a nodal field ``m``,
    the velocity is a control in the closed unit disc, the source is a
    fixed Gaussian, and the boundary condition is ``du/dn + u = u_b``.
    """

    def source(self, x: np.ndarray) -> np.ndarray:
        d2 = (x[:, 0] - 0.5) ** 2 + (x[:, 1] - 0.5) ** 2
        return 20.0 * np.exp(-d2)

    def boundary_values(self, x: np.ndarray) -> np.ndarray:
        return _advection_boundary_values(x)

    def solve(self, velocity, field, mesh: Mesh) -> np.ndarray:
        """P1 solve for one field realization.

        ``field`` is either a :class:`GrfSample` (the coefficient samples
        the bilinear extension of the reference-grid realization, so all
        mesh resolutions see the same continuous coefficient) or a nodal
        vector on ``mesh`` itself.
        """
        velocity = np.asarray(velocity, dtype=float)
        if velocity.shape != (2,):
            raise ValueError("velocity must be a 2-vector")
        if np.linalg.norm(velocity) > 1.0 + 1e-9:
            raise ValueError(f"velocity must lie in the unit disc, got {velocity}")
        edges = mesh.boundary_edges
        edge_midpoints = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
        if isinstance(field, GrfSample):
            m_centroid = bilinear_on_grid(field.grid, field.values, mesh.centroids)
            m_edge = bilinear_on_grid(field.grid, field.values, edge_midpoints)
        else:
            field = np.asarray(field, dtype=float)
            if field.shape != (mesh.node_count,):
                raise ValueError("field vector does not match mesh")
            m_centroid = field[mesh.triangles].mean(axis=1)
            m_edge = 0.5 * (field[edges[:, 0]] + field[edges[:, 1]])
        a_centroid = 1.0 + np.exp(-m_centroid)
        a_edge = 1.0 + np.exp(-m_edge)
        ub = np.zeros(mesh.node_count)
        boundary_ids = np.unique(edges)
        ub[boundary_ids] = self.boundary_values(mesh.nodes[boundary_ids])
        stiffness = _assemble_stiffness(mesh, a_centroid)
        advection = _assemble_advection(mesh, velocity)
        boundary_mass, boundary_rhs = _assemble_robin(mesh, a_edge, ub)
        system = (stiffness + advection + boundary_mass).tocsc()
        rhs = _assemble_load(mesh, self.source(mesh.centroids)) + boundary_rhs
        return spsolve(system, rhs)

    def sample_qoi(self, velocity, field, mesh: Mesh) -> float:
        return spatial_average(self.solve(velocity, field, mesh), mesh)


@dataclass(frozen=True)
class GrfSample:
    """One realization of the random field on its reference grid."""

    grid: Mesh
    values: np.ndarray
    seed: int
    draw: int


class GaussianFieldSampler:
    """Centered Gaussian field with covariance ``exp(-(10 |x-y|)**2)``.

    Realizations are drawn on a fixed reference grid by dense Cholesky;
    the draw indexed ``(seed, draw)`` is a pure function of its key
    (counter-based generator), so parallel sampling is order-independent.
    """

    def __init__(self, grid: Mesh, stream: int = 0):
        if grid.node_count > _MAX_FIELD_NODES:
            raise ValueError(
                f"reference grid has {grid.node_count} nodes, "
                f"dense factorization bound is {_MAX_FIELD_NODES}"
            )
        self.grid = grid
        self.stream = stream
        coords = grid.nodes
        sq = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
        covariance = np.exp(-100.0 * sq)
        eye = np.eye(grid.node_count)
        try:
            self._factor = np.linalg.cholesky(covariance + _FIELD_NUGGET * eye)
        except np.linalg.LinAlgError:
            self._factor = np.linalg.cholesky(
                covariance + _FIELD_NUGGET_FALLBACK * eye
            )

    def sample(self, seed: int, draw: int) -> GrfSample:
        rng = np.random.Generator(
            np.random.Philox(counter=[0, 0, draw, 0], key=[seed, self.stream])
        )
        normals = rng.standard_normal(self.grid.node_count)
        return GrfSample(
            grid=self.grid, values=self._factor @ normals, seed=seed, draw=draw
        )


def restrict_field(sample: GrfSample, coarse: Mesh) -> np.ndarray:
    """Field values at the nodes of a coarser mesh (bilinear interpolation).

    Exact copy when the meshes coincide; rejects targets finer than the
    reference grid so coupled differences always share one realization.
    """
    if coarse.cells > sample.grid.cells:
        raise ValueError(
            f"target mesh ({coarse.cells} cells) finer than reference "
            f"grid ({sample.grid.cells} cells)"
        )
    if coarse.cells == sample.grid.cells:
        return sample.values.copy()
    return bilinear_on_grid(sample.grid, sample.values, coarse.nodes)


def bilinear_on_grid(grid: Mesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate nodal grid data at arbitrary points in the unit square."""
    nx = grid.nodes_per_axis
    table = values.reshape(nx, nx)  # [j, i] with x fastest
    c = grid.cells
    x = np.clip(np.asarray(points)[:, 0], 0.0, 1.0) * c
    y = np.clip(np.asarray(points)[:, 1], 0.0, 1.0) * c
    i0 = np.minimum(x.astype(int), c - 1)
    j0 = np.minimum(y.astype(int), c - 1)
    fx = x - i0
    fy = y - j0
    v00 = table[j0, i0]
    v10 = table[j0, i0 + 1]
    v01 = table[j0 + 1, i0]
    v11 = table[j0 + 1, i0 + 1]
    return (
        v00 * (1.0 - fx) * (1.0 - fy)
        + v10 * fx * (1.0 - fy)
        + v01 * (1.0 - fx) * fy
        + v11 * fx * fy
    )


def export_solution_csv(mesh: Mesh, solution: np.ndarray, path) -> None:
    """Write the nodal solution as ``x,y,value`` rows."""
    with open(path, "w") as handle:
        handle.write("x,y,value\n")
        for (x, y), v in zip(mesh.nodes, solution):
            handle.write(f"{x:.12e},{y:.12e},{v:.12e}\n")


def l2_error_against(mesh: Mesh, solution: np.ndarray, exact) -> float:
    """L2 distance between a P1 function and a callable, by edge-midpoint
    quadrature (exact for quadratics on each triangle)."""
    tri = mesh.triangles
    pts = mesh.nodes[tri]  # (ntri, 3, 2)
    vals = solution[tri]  # (ntri, 3)
    total = 0.0
    for k in range(3):
        k1 = (k + 1) % 3
        mid = 0.5 * (pts[:, k, :] + pts[:, k1, :])
        uh_mid = 0.5 * (vals[:, k] + vals[:, k1])
        diff = uh_mid - exact(mid)
        total += np.sum(diff**2)
    return math.sqrt(total * mesh.triangle_area / 3.0)
