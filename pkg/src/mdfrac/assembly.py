"""Assembly of the mixed-dimensional saddle-point system.

Unknowns are ordered ``x = (u0, lambda, p)``.  With ``Phi = [P, E]`` mapping
``(u0, lambda)`` to the full flux vector (``P`` the injection of free facets,
``E`` the extension of mortar fluxes) the system reads::

    [ A   B^T ] [ (u0, lambda) ]   [ r_x ]
    [ B   0   ] [      p       ] = [ r_p ]

    A   = Phi^T M Phi + diag(0, W)        M: K^-1 weighted RT0 mass
    B~  = D Phi + [0, |T| * jump]         D: eps-weighted RT0 divergence
    B   = -B~
    r_x = Phi^T r_D                        r_D: -(1/|F|) int_F g eps on Dirichlet facets
    r_p = -(eps^2 f, 1_T)

``W`` is the diagonal mortar mass ``|c| gamma / K_nu``.  The second row states
``B~ x = (eps^2 f, 1_T)``: the cellwise balance of the scaled divergence and
the mortar inflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np
import scipy.sparse as sp

from .mesh import TAG_CODE, Key, MixedDimMesh, Subdomain
from .scaling import ScalingFields, as_field
from .spaces import (
    DofLayout, SparseOperator, build_layout, extension_matrix, jump_operator, mortar_projection,
)

PointFn = Callable[[np.ndarray], np.ndarray]
SourceLike = Union[None, float, str, PointFn, Mapping[int, Union[float, str, PointFn]]]


class AssemblyError(ValueError):
    """Raised for inconsistent boundary data or parameters."""


@dataclass
class ProblemSpec:
    """Mesh, scaling fields and data of one Darcy problem.

    ``pressure`` is the Dirichlet pressure ``g`` on the outer boundary; its
    trace is used on lower-dimensional boundary facets.  ``source`` is ``f``:
    a single function for every dimension, or a mapping from dimension to
    function.
    """

    mesh: MixedDimMesh
    fields: ScalingFields
    pressure: Union[float, str, PointFn] = 0.0
    source: SourceLike = None
    extension: str = "compact"
    extension_seed: int = 0
    allow_clipping: bool = False

    def pressure_fn(self) -> PointFn:
        return as_field(self.pressure)

    def source_fn(self, dim: int) -> PointFn | None:
        src = self.source
        if isinstance(src, Mapping):
            src = src.get(dim)
        return None if src is None else as_field(src)


@dataclass(eq=False)
class SaddleSystem:
    """The assembled symmetric indefinite system and its building blocks."""

    problem: ProblemSpec
    layout: DofLayout
    matrix: sp.csr_matrix
    rhs: np.ndarray
    A: sp.csr_matrix
    B: sp.csr_matrix
    mass_full: sp.csr_matrix
    div_full: sp.csr_matrix
    jump: sp.csr_matrix
    mortar_mass: sp.dia_matrix
    extension: SparseOperator
    phi: sp.csr_matrix
    source_integrals: np.ndarray
    dirichlet_full: np.ndarray
    cell_measure: np.ndarray
    labels: tuple[str, str, str] = ("u0", "lambda", "p")

    @property
    def n_x(self) -> int:
        return self.layout.n_u + self.layout.n_lambda

    def blocks(self) -> dict[str, sp.csr_matrix]:
        nu = self.layout.n_u
        return {
            "A_uu": self.A[:nu, :nu], "A_ul": self.A[:nu, nu:], "A_ll": self.A[nu:, nu:],
            "B_u": self.B[:, :nu], "B_l": self.B[:, nu:],
        }

    @property
    def r_u(self) -> np.ndarray:
        return self.rhs[: self.layout.n_u]

    @property
    def r_lambda(self) -> np.ndarray:
        return self.rhs[self.layout.n_u: self.n_x]

    @property
    def r_p(self) -> np.ndarray:
        return self.rhs[self.n_x:]

    def full_flux(self, x: np.ndarray) -> np.ndarray:
        """Combined flux ``u0 + R lambda`` on all facets."""
        return self.phi @ x[: self.n_x]

    def write_mtx(self, path) -> None:
        SparseOperator(self.matrix, "saddle", "saddle").write_mtx(path)


# ------------------------------------------------------------------ local operators


def _kinv(K: np.ndarray) -> np.ndarray:
    if K.shape[1] == 0:
        return K
    det = np.linalg.det(K)
    if np.any(np.abs(det) < 1e-300):
        raise AssemblyError("singular permeability")
    return np.linalg.inv(K)


def local_mass(s: Subdomain, K: np.ndarray) -> np.ndarray:
    """Element RT0 mass matrices ``(M, d+1, d+1)`` with weight ``K^-1`` in global orientation.

    With basis ``phi_i = s_i / (d |T|) (x - a_i)`` and the exact simplex
    moments ``int lambda_k lambda_l = |T| (1 + delta_kl) / ((d+1)(d+2))``.
    """
    d = s.dim
    g = s.geometry
    a = g.local[s.cells]
    a = a - a.mean(axis=1, keepdims=True)
    G = np.einsum("mki,mij,mlj->mkl", a, _kinv(K), a)
    r = G.sum(axis=1)  # r_j = sum_k G_kj
    T0 = G.sum(axis=(1, 2)) + np.trace(G, axis1=1, axis2=2)
    S = (T0[:, None, None] - (d + 2) * (r[:, :, None] + r[:, None, :])
         + (d + 1) * (d + 2) * G)
    scale = 1.0 / (d * d * g.volumes * (d + 1) * (d + 2))
    return scale[:, None, None] * S * g.signs[:, :, None] * g.signs[:, None, :]


def assemble_flux_mass(s: Subdomain, K: np.ndarray | float) -> SparseOperator:
    """RT0 mass matrix on the facets of ``s`` with weight ``K^-1`` (cellwise constant)."""
    K = np.asarray(K, dtype=float)
    if K.ndim < 3:
        K = np.broadcast_to(K * np.eye(s.dim) if K.ndim == 0 else K, (s.num_cells, s.dim, s.dim))
    loc = local_mass(s, K)
    cf = s.geometry.cell_facets
    rows = np.repeat(cf, s.dim + 1, axis=1).ravel()
    cols = np.tile(cf, (1, s.dim + 1)).ravel()
    M = sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(s.num_facets, s.num_facets))
    return SparseOperator(M, f"flux{s.key}", f"flux{s.key}")


def assemble_div(s: Subdomain, eps_facet: np.ndarray | float = 1.0) -> SparseOperator:
    """Scaled divergence ``int_T div(eps v)`` for every RT0 basis function.

    For an eps that is linear on each cell, the divergence theorem gives the
    exact value ``s_i eps(centroid of F_i)``; ``eps_facet`` holds these values.
    """
    g = s.geometry
    eps = np.broadcast_to(np.asarray(eps_facet, dtype=float), (s.num_facets,))
    vals = g.signs * eps[g.cell_facets]
    rows = np.repeat(np.arange(s.num_cells), s.dim + 1)
    D = sp.csr_matrix((vals.ravel(), (rows, g.cell_facets.ravel())), shape=(s.num_cells, s.num_facets))
    return SparseOperator(D, f"pressure{s.key}", f"flux{s.key}")


def assemble_mortar_terms(mesh: MixedDimMesh, fields: ScalingFields, k: int
                          ) -> tuple[SparseOperator, SparseOperator]:
    """Mortar mass ``|c| gamma / K_nu`` and the jump coupling ``-|T| eps_hat``.

    The coupling maps the mortar cells of interface ``k`` to the pressure
    cells of its lower subdomain.
    """
    f = mesh.interfaces[k]
    lo = mesh[f.lower_key]
    tr = mesh.trace[k]
    Kn = fields.K_nu[k]
    if np.any(Kn <= 0):
        raise AssemblyError("normal permeability must be positive")
    meas = lo.geometry.volumes[tr.mortar_cells]
    W = sp.diags(meas * fields.gamma_m[k] / Kn)
    J = jump_operator(mesh, fields.eps_hat, f.lower_key).matrix
    cols = np.concatenate([[0], np.cumsum([mesh.interfaces[j].num_mortar for j in mesh.interfaces_of(f.lower_key)])])
    pos = mesh.interfaces_of(f.lower_key).index(k)
    Jk = sp.diags(lo.geometry.volumes) @ J[:, cols[pos]: cols[pos + 1]]
    return (SparseOperator(W, f"mortar[{k}]", f"mortar[{k}]"),
            SparseOperator(Jk, f"pressure{f.lower_key}", f"mortar[{k}]"))


# ------------------------------------------------------------------ boundary data

_FACET_RULES = {
    0: (np.ones((1, 1)), np.ones(1)),
    1: (np.array([[0.5 + 0.5 / math.sqrt(3), 0.5 - 0.5 / math.sqrt(3)],
                  [0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)]]), np.array([0.5, 0.5])),
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3)),
}


def facet_average(s: Subdomain, facets: np.ndarray, fn: PointFn) -> np.ndarray:
    """Average of ``fn`` over the given facets (exact for quadratics on segments and triangles)."""
    bary, w = _FACET_RULES[s.dim - 1]
    x = s.nodes[s.geometry.facets[facets]]  # (F, d, n)
    out = np.zeros(len(facets))
    for q in range(len(w)):
        out += w[q] * fn(np.einsum("k,fkj->fj", bary[q], x))
    return out


# ------------------------------------------------------------------ global system


def assemble_system(problem: ProblemSpec) -> SaddleSystem:
    """Assemble the symmetric saddle-point system of a problem."""
    mesh, fields = problem.mesh, problem.fields
    n = mesh.ambient_dim
    for s in mesh.by_dim(n):
        if not np.any(s.facet_tag_codes == TAG_CODE["dirichlet"]):
            raise AssemblyError(f"subdomain {s.key} has no Dirichlet boundary")
    layout = build_layout(mesh)
    g_fn = problem.pressure_fn()

    mass_blocks, div_blocks = [], []
    r_full = np.zeros(layout.n_full)
    F = np.zeros(layout.n_p)
    cell_measure = np.zeros(layout.n_p)
    for s in mesh:
        sl = layout.pressure_slice(s.key)
        cell_measure[sl] = s.geometry.volumes
        f_fn = problem.source_fn(s.dim)
        if f_fn is not None:
            g = s.geometry
            F[sl] = fields.eps[s.key] ** 2 * f_fn(g.centroids) * g.volumes
        if s.dim == 0:
            mass_blocks.append(sp.csr_matrix((0, 0)))
            div_blocks.append(sp.csr_matrix((s.num_cells, 0)))
            continue
        mass_blocks.append(assemble_flux_mass(s, fields.K[s.key]).matrix)
        div_blocks.append(assemble_div(s, fields.eps_facet[s.key]).matrix)
        dfacets = s.facets_with_tag("dirichlet")
        if len(dfacets):
            ge = lambda x, e=fields.eps_fn[s.key]: g_fn(x) * e(x)  # noqa: E731
            r_full[layout.full_offset[s.key] + dfacets] = -facet_average(s, dfacets, ge)
    M = sp.block_diag(mass_blocks, format="csr")
    D = sp.block_diag(div_blocks, format="csr")

    projections = [mortar_projection(mesh, k, problem.allow_clipping) for k in range(len(mesh.interfaces))]
    E = extension_matrix(layout, projections, problem.extension, problem.extension_seed)
    P = layout.selection()
    Phi = sp.hstack([P, E.matrix], format="csr")

    wdiag = np.zeros(layout.n_lambda)
    jr, jc, jv = [], [], []
    for k, f in enumerate(mesh.interfaces):
        W, Jk = assemble_mortar_terms(mesh, fields, k)
        wdiag[layout.mortar_slice(k)] = W.matrix.diagonal()
        coo = Jk.matrix.tocoo()
        jr.append(layout.pressure_offset[f.lower_key] + coo.row)
        jc.append(layout.mortar_offset[k] + coo.col)
        jv.append(coo.data)
    if jr:
        J = sp.csr_matrix((np.concatenate(jv), (np.concatenate(jr), np.concatenate(jc))),
                          shape=(layout.n_p, layout.n_lambda))
    else:
        J = sp.csr_matrix((layout.n_p, 0))
    Wm = sp.diags(np.concatenate([np.zeros(layout.n_u), wdiag]))

    A = (Phi.T @ M @ Phi + Wm).tocsr()
    A = ((A + A.T) * 0.5).tocsr()
    Bt = (D @ Phi + sp.hstack([sp.csr_matrix((layout.n_p, layout.n_u)), J])).tocsr()
    B = (-Bt).tocsr()
    K = sp.bmat([[A, B.T], [B, None]], format="csr")
    K.sum_duplicates()
    K.eliminate_zeros()
    K.sort_indices()
    rhs = np.concatenate([Phi.T @ r_full, -F])
    return SaddleSystem(
        problem, layout, K, rhs, A, B, M, D, J, sp.diags(wdiag), E, Phi, F, r_full, cell_measure,
    )


def scaled_divergence(system: SaddleSystem, x: np.ndarray) -> np.ndarray:
    """Cell integrals of ``div(eps u) + [[eps_hat lambda]]`` for a solution vector."""
    return -(system.B @ x[: system.n_x])
