"""Aperture, cross-section scaling and permeability fields.

Every lower-dimensional subdomain ``(d, i)`` carries a half-aperture ``gamma``
(a constant or a coordinate expression), a tangential permeability ``K`` and
a normal permeability ``K_nu`` that applies on all of its interfaces.  The
cross-sectional scaling is ``eps = (2 gamma) ** ((n - d) / 2)`` unless an
exponent override is given; the top-dimensional subdomains use
``eps = gamma = 1``.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

from .mesh import Key, MixedDimMesh, Subdomain

Number = Union[float, int]
GammaLike = Union[Number, str, Callable[[np.ndarray], np.ndarray]]


class ParameterError(ValueError):
    """Raised for physically inadmissible parameters."""


# ------------------------------------------------------------ expressions

_FUNCS: dict[str, Callable] = {
    "max": np.maximum, "min": np.minimum, "abs": np.abs, "sqrt": np.sqrt,
    "exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos, "tan": np.tan,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}


def compile_expression(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile an arithmetic expression in ``x1, x2, x3`` into a vectorized function.

    Only numbers, the coordinates, ``pi``/``e``, the four arithmetic
    operators, powers and a small set of elementwise functions are allowed.
    """
    tree = ast.parse(text, mode="eval")

    def check(node: ast.AST) -> None:
        if isinstance(node, ast.Expression):
            check(node.body)
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            check(node.operand)
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS) or node.keywords:
                raise ParameterError(f"function not allowed in '{text}'")
            for a in node.args:
                check(a)
        elif isinstance(node, ast.Name):
            if node.id not in ("x1", "x2", "x3") and node.id not in _CONSTS:
                raise ParameterError(f"unknown name '{node.id}' in '{text}'")
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        else:
            raise ParameterError(f"unsupported syntax in '{text}'")

    check(tree)

    def evaluate(node: ast.AST, env: dict):
        if isinstance(node, ast.Expression):
            return evaluate(node.body, env)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](evaluate(node.left, env), evaluate(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = evaluate(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](*(evaluate(a, env) for a in node.args))
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        return float(node.value)

    def fn(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        env = {f"x{k + 1}": x[:, k] for k in range(x.shape[1])}
        out = evaluate(tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (x.shape[0],)).copy()

    fn.__doc__ = text
    return fn


def as_field(value: GammaLike) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a constant, expression string or callable into a point function."""
    if isinstance(value, str):
        return compile_expression(value)
    if callable(value):
        return lambda x: np.asarray(value(np.atleast_2d(x)), dtype=float).reshape(-1)
    c = float(value)
    return lambda x: np.full(np.atleast_2d(x).shape[0], c)


# ------------------------------------------------------------ parameters


@dataclass(frozen=True)
class FeatureParams:
    """Physical parameters of one subdomain.

    ``K`` is a scalar (isotropic) or a d x d tensor in the subdomain's
    tangent frame.  ``gamma`` and ``K_nu`` are ignored on top-dimensional
    subdomains.
    """

    K: Union[Number, tuple] = 1.0
    K_nu: Number = 1.0
    gamma: GammaLike = 0.0


@dataclass
class ParameterTable:
    """Per-subdomain parameters with a fallback for unlisted subdomains."""

    features: dict[Key, FeatureParams] = field(default_factory=dict)
    default: FeatureParams = field(default_factory=FeatureParams)
    eps_exponent: float | None = None  # None: (n - d) / 2

    def __getitem__(self, key: Key) -> FeatureParams:
        return self.features.get(tuple(key), self.default)

    def with_overrides(self, **kw) -> "ParameterTable":
        """Copy with the same keyword overrides applied to every lower-dimensional feature."""
        feats = {k: FeatureParams(**{**vars(p), **kw}) for k, p in self.features.items()}
        return ParameterTable(feats, self.default, self.eps_exponent)


def eps_law(gamma: np.ndarray, codim: int, exponent: float | None = None) -> np.ndarray:
    """Cross-sectional scaling from the half-aperture."""
    if codim == 0:
        return np.ones_like(gamma)
    p = codim / 2 if exponent is None else exponent
    return np.power(2.0 * gamma, p)


def _tensor(K, d: int, ncells: int) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = K * np.eye(d)
    if K.shape != (d, d):
        raise ParameterError(f"permeability tensor must be {d}x{d}")
    if d and (np.abs(K - K.T).max() > 1e-14 * np.abs(K).max() or np.linalg.eigvalsh(K).min() <= 0):
        raise ParameterError("permeability must be symmetric positive definite")
    return np.broadcast_to(K, (ncells, d, d)).copy()


# ------------------------------------------------------------ fields

_GAUSS = {
    0: (np.zeros((1, 0)), np.ones(1)),
    1: (np.array([[0.5 - 0.5 / math.sqrt(3)], [0.5 + 0.5 / math.sqrt(3)]]), np.array([0.5, 0.5])),
    2: (np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]), np.full(3, 1 / 3)),
}


def cell_average(s: Subdomain, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Cell averages of a point function by a low-order Gauss rule (exact for quadratics)."""
    ref, w = _GAUSS.get(s.dim, (None, None))
    x = s.nodes[s.cells]
    if ref is None:
        return fn(x.mean(axis=1))
    total = np.zeros(s.num_cells)
    for q in range(len(w)):
        bary = np.concatenate([[1.0 - ref[q].sum()], ref[q]])
        total += w[q] * fn(np.einsum("k,mkj->mj", bary, x))
    return total


@dataclass(frozen=True, eq=False)
class ScalingFields:
    """Aperture, scaling and permeability data on a mixed-dimensional mesh.

    Per subdomain ``key``: ``gamma``, ``eps``, ``eps_e``, ``eps_hat_max`` (one
    value per cell), ``eps_facet`` (value at facet centroids, the linear
    reconstruction used by the divergence) and ``K`` (cell tensors in the
    tangent frame).  Per interface index ``k``: ``gamma_m``, ``K_nu``,
    ``eps_hat`` (one value per mortar cell).
    """

    mesh: MixedDimMesh
    gamma: dict[Key, np.ndarray]
    eps: dict[Key, np.ndarray]
    eps_facet: dict[Key, np.ndarray]
    eps_e: dict[Key, np.ndarray]
    eps_hat_max: dict[Key, np.ndarray]
    K: dict[Key, np.ndarray]
    gamma_m: list[np.ndarray]
    K_nu: list[np.ndarray]
    eps_hat: list[np.ndarray]
    eps_fn: dict[Key, Callable[[np.ndarray], np.ndarray]]

    def check(self, constant: float = 10.0) -> None:
        """Enforce the positivity and boundedness relations between the scalings."""
        n = self.mesh.ambient_dim
        for s in self.mesh:
            if s.dim == n:
                continue
            em = self.eps_hat_max[s.key]
            if np.any(em <= 0):
                raise ParameterError(f"{s.key}: a cell has no side with positive aperture")
            ratio = np.sqrt(self.eps[s.key].max()) / em.min()
            if ratio > constant:
                raise ParameterError(
                    f"{s.key}: sqrt(max eps) / min eps_hat_max = {ratio:.3g} exceeds {constant}"
                )
            if np.any(self.eps_e[s.key] < self.eps[s.key]):
                raise ParameterError(f"{s.key}: eps_e below eps")


def attach_scaling(mesh: MixedDimMesh, table: ParameterTable, check: bool = True) -> ScalingFields:
    """Evaluate the parameter table on a mesh and derive all scaling fields."""
    n = mesh.ambient_dim
    gamma, eps, eps_facet, eps_e, K, eps_fn = {}, {}, {}, {}, {}, {}
    for s in mesh:
        p = table[s.key]
        codim = n - s.dim
        K[s.key] = _tensor(p.K, s.dim, s.num_cells)
        if codim == 0:
            one = lambda x: np.ones(np.atleast_2d(x).shape[0])  # noqa: E731
            gfn = efn = one
        else:
            gfn = as_field(p.gamma)

            def efn(x, gfn=gfn, codim=codim):
                g = gfn(x)
                if np.any(g < 0):
                    raise ParameterError("negative aperture")
                return eps_law(g, codim, table.eps_exponent)

            if float(p.K_nu) <= 0:
                raise ParameterError(f"{s.key}: K_nu must be positive")
        eps_fn[s.key] = efn
        g = s.geometry
        gamma[s.key] = cell_average(s, gfn) if codim else np.ones(s.num_cells)
        if np.any(gamma[s.key] < 0):
            raise ParameterError(f"{s.key}: negative aperture")
        eps[s.key] = efn(g.centroids)
        if s.dim:
            eps_facet[s.key] = efn(g.facet_centroids)
            nodal = efn(s.nodes)
            probe = np.concatenate(
                [nodal[s.cells], eps_facet[s.key][g.cell_facets], eps[s.key][:, None]], axis=1
            )
            eps_e[s.key] = probe.max(axis=1)
        else:
            eps_facet[s.key] = np.zeros(0)
            eps_e[s.key] = eps[s.key].copy()

    gamma_m, K_nu, eps_hat = [], [], []
    for f, tr in zip(mesh.interfaces, mesh.trace):
        lo = mesh[f.lower_key]
        p = table[f.lower_key]
        cells = tr.mortar_cells
        gamma_m.append(gamma[lo.key][cells].copy())
        K_nu.append(np.full(f.num_mortar, float(p.K_nu)))
        # trace of the upper scaling, evaluated on the mortar cell
        if f.upper_key[0] == n:
            eps_hat.append(np.ones(f.num_mortar))
        else:
            eps_hat.append(cell_average(lo, eps_fn[f.upper_key])[cells])

    eps_hat_max = {}
    for s in mesh:
        if s.dim == n:
            eps_hat_max[s.key] = np.ones(s.num_cells)
            continue
        em = np.zeros(s.num_cells)
        for k in mesh.interfaces_of(s.key):
            np.maximum.at(em, mesh.trace[k].mortar_cells, eps_hat[k])
        eps_hat_max[s.key] = em

    fields = ScalingFields(
        mesh, gamma, eps, eps_facet, eps_e, eps_hat_max, K, gamma_m, K_nu, eps_hat, eps_fn,
    )
    if check:
        fields.check()
    return fields


@dataclass(frozen=True)
class GradientBoundReport:
    max_ratio: float
    per_subdomain: dict[Key, float]
    constant: float

    @property
    def violated(self) -> bool:
        return self.max_ratio > self.constant


def gradient_ratio(fields: ScalingFields, key: Key) -> np.ndarray:
    """Per cell ``|grad eps| / eps**0.5`` of the linear reconstruction through facet values.

    The reconstruction gradient is ``sum_i eps(F_i) grad(lambda_i)`` with
    ``lambda_i`` the barycentric coordinate opposite facet ``F_i`` taken with
    a minus sign, which is exact for linear ``eps``.  Cells where the
    midpoint value vanishes use the largest value on the cell instead.
    """
    s = fields.mesh[key]
    if s.dim == 0:
        return np.zeros(s.num_cells)
    g = s.geometry
    vals = fields.eps_facet[key][g.cell_facets]  # (M, d+1)
    # linear function equal to vals at facet centroids: grad = -d * sum_i vals_i grad lambda_i
    grad = -s.dim * np.einsum("mi,mij->mj", vals, g.grad_bary)
    gn = np.linalg.norm(grad, axis=1)
    mid = fields.eps[key]
    denom = np.where(mid > 0, mid, fields.eps_e[key])
    out = np.zeros(s.num_cells)
    pos = denom > 0
    out[pos] = gn[pos] / np.sqrt(denom[pos])
    return out


def validate_gradient_bound(fields: ScalingFields, constant: float = 10.0) -> GradientBoundReport:
    """Diagnostic check of ``|grad eps| <= C eps**0.5`` on every lower-dimensional subdomain."""
    per = {}
    n = fields.mesh.ambient_dim
    for s in fields.mesh:
        if s.dim in (0, n):
            continue
        per[s.key] = float(gradient_ratio(fields, s.key).max(initial=0.0))
    return GradientBoundReport(max(per.values(), default=0.0), per, constant)
