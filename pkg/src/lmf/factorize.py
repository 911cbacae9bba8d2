"""Sparse matrix factorizers sharing one (predict, loss, constraint,
regularizer) shape so they remain separable across diagonal blocks.

Four algorithms:

* ``svd_als``   -- squared loss on observed entries, ridge term scaled by
  each vector's observation count, exact alternating least squares.
* ``nmf``       -- nonnegative factors, observed-entry squared loss with
  Frobenius regularization, multiplicative updates.
* ``pmf_sgd``   -- squared loss with per-factor Gaussian priors, trained
  as MAP estimation by stochastic gradient descent.
* ``mmmf_fast`` -- smooth-hinge ordinal loss with trainable per-user
  thresholds and Frobenius regularization, trained by SGD.

All losses weight unobserved cells by zero, all regularizers are sums of
per-row/per-column norms, and the only hard constraint (nonnegativity)
holds exactly when it holds per block, so factoring a block-diagonal
matrix jointly or block-by-block yields the same iterates.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix

from .errors import (
    DivergenceError,
    DomainError,
    EmptyInputError,
    ShapeError,
)

ALGORITHMS = ("svd_als", "nmf", "pmf_sgd", "mmmf_fast")
_EPS = 1e-12


@dataclass(frozen=True)
class FactorizerSpec:
    """Hyperparameters naming one factorization algorithm.

    Only the fields relevant to ``algorithm`` are consulted: ``reg`` for
    svd_als/nmf, ``reg_user``/``reg_item`` for pmf_sgd, ``margin_c`` and
    ``levels`` for mmmf_fast, ``learning_rate`` for the SGD algorithms.
    """

    algorithm: str
    r: int = 60
    reg: float = 0.065
    reg_user: float = 0.002
    reg_item: float = 0.002
    margin_c: float = 1.5
    learning_rate: float = 0.01
    max_iters: int = 200
    convergence_tol: float = 1e-5
    seed: int = 0
    levels: tuple = None

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.r < 1:
            raise ValueError("factor count r must be >= 1")
        for name in ("reg", "reg_user", "reg_item", "margin_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        return self


@dataclass
class FactorPair:
    """Factor matrices plus training provenance."""

    U: np.ndarray
    V: np.ndarray
    thresholds: np.ndarray = None
    final_objective: float = float("nan")
    history: list = field(default_factory=list)

    @property
    def r(self):
        return self.U.shape[1]


def _resolve_matrix(m):
    # AssembledBlock carries a local dense-indexed matrix
    return getattr(m, "matrix", m)


def _check_finite(value, iteration):
    if not np.isfinite(value):
        raise DivergenceError(iteration)


def _converged(history, tol):
    if len(history) < 2:
        return False
    prev, cur = history[-2], history[-1]
    return abs(prev - cur) <= tol * max(abs(prev), 1e-12)


def _sse(m, U, V):
    pred = np.einsum("ij,ij->i", U[m.rows], V[m.cols])
    d = m.vals - pred
    return float(d @ d)


# -- svd_als -------------------------------------------------------------------

def _als_objective(m, U, V, reg):
    nr_w = m.row_counts().astype(np.float64)
    nc_w = m.col_counts().astype(np.float64)
    pen = (nr_w * (U * U).sum(axis=1)).sum() + (nc_w * (V * V).sum(axis=1)).sum()
    return _sse(m, U, V) + reg * float(pen)


def _als_half_sweep(target, fixed, ptr_get_idx, ptr_get_val, n, r, reg):
    eye = np.eye(r)
    for i in range(n):
        idx = ptr_get_idx(i)
        if idx.size == 0:
            target[i] = 0.0
            continue
        F = fixed[idx]
        A = F.T @ F + (reg * idx.size) * eye
        b = F.T @ ptr_get_val(i)
        try:
            target[i] = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            # unregularized and rank-deficient: minimum-norm least squares
            target[i] = np.linalg.lstsq(A, b, rcond=None)[0]


def _fit_svd_als(m, spec, init, hook):
    rng = np.random.default_rng(spec.seed)
    r = spec.r
    if init is None:
        U = rng.standard_normal((m.n_rows, r)) / np.sqrt(r)
        V = rng.standard_normal((m.n_cols, r)) / np.sqrt(r)
    else:
        U, V = init[0].copy(), init[1].copy()
    history = []
    for it in range(spec.max_iters):
        _als_half_sweep(U, V, m.row_cols, m.row_vals, m.n_rows, r, spec.reg)
        _als_half_sweep(V, U, m.col_rows, m.col_vals, m.n_cols, r, spec.reg)
        obj = _als_objective(m, U, V, spec.reg)
        _check_finite(obj, it)
        history.append(obj)
        if hook is not None:
            hook(it, U, V)
        if _converged(history, spec.convergence_tol):
            break
    return FactorPair(U, V, final_objective=history[-1], history=history)


# -- nmf ----------------------------------------------------------------------

def _nmf_objective(m, U, V, reg):
    return _sse(m, U, V) + reg * (float((U * U).sum()) + float((V * V).sum()))


def _fit_nmf(m, spec, init, hook):
    if m.vals.min() < 0:
        raise DomainError("nmf requires nonnegative values")
    rng = np.random.default_rng(spec.seed)
    r = spec.r
    if init is None:
        U = rng.uniform(0.0, 1.0 / np.sqrt(r), (m.n_rows, r))
        V = rng.uniform(0.0, 1.0 / np.sqrt(r), (m.n_cols, r))
    else:
        U, V = init[0].copy(), init[1].copy()
        if U.min() < 0 or V.min() < 0:
            raise DomainError("nmf initialization must be nonnegative")

    X = csr_matrix((m.vals, m.cols, m._row_ptr), shape=m.shape)
    t_vals = m.vals[m._col_order]
    t_rows = m.rows[m._col_order]
    Xt = csr_matrix((t_vals, t_rows, m._col_ptr), shape=(m.n_cols, m.n_rows))

    history = []
    for it in range(spec.max_iters):
        pred = np.einsum("ij,ij->i", U[m.rows], V[m.cols])
        P = csr_matrix((pred, m.cols, m._row_ptr), shape=m.shape)
        U *= (X @ V) / (P @ V + spec.reg * U + _EPS)

        pred = np.einsum("ij,ij->i", U[m.rows], V[m.cols])
        Pt = csr_matrix((pred[m._col_order], t_rows, m._col_ptr),
                        shape=(m.n_cols, m.n_rows))
        V *= (Xt @ U) / (Pt @ U + spec.reg * V + _EPS)

        obj = _nmf_objective(m, U, V, spec.reg)
        _check_finite(obj, it)
        history.append(obj)
        if hook is not None:
            hook(it, U, V)
        if _converged(history, spec.convergence_tol):
            break
    return FactorPair(U, V, final_objective=history[-1], history=history)


# -- pmf (MAP by sgd) ----------------------------------------------------------

def _pmf_objective(m, U, V, reg_u, reg_v):
    return (_sse(m, U, V)
            + reg_u * float((U * U).sum()) + reg_v * float((V * V).sum()))


def _fit_pmf_sgd(m, spec, init, hook, sample_order):
    rng = np.random.default_rng(spec.seed)
    r = spec.r
    if init is None:
        U = rng.standard_normal((m.n_rows, r)) / np.sqrt(r)
        V = rng.standard_normal((m.n_cols, r)) / np.sqrt(r)
    else:
        U, V = init[0].copy(), init[1].copy()
    lr, ru, rv = spec.learning_rate, spec.reg_user, spec.reg_item
    rows, cols, vals = m.rows, m.cols, m.vals
    history = []
    for it in range(spec.max_iters):
        order = rng.permutation(m.nnz) if sample_order is None else sample_order
        # overflow shows up as a non-finite objective below
        with np.errstate(over="ignore", invalid="ignore"):
            for t in order:
                i, j = rows[t], cols[t]
                ui = U[i]
                vj = V[j]
                e = vals[t] - ui @ vj
                U[i] = ui + lr * (e * vj - ru * ui)
                V[j] = vj + lr * (e * ui - rv * vj)
        obj = _pmf_objective(m, U, V, ru, rv)
        _check_finite(obj, it)
        history.append(obj)
        if hook is not None:
            hook(it, U, V)
        if _converged(history, spec.convergence_tol):
            break
    return FactorPair(U, V, final_objective=history[-1], history=history)


# -- fast maximum-margin with smooth hinge --------------------------------------

def _smooth_hinge(z):
    out = np.where(z >= 1.0, 0.0,
                   np.where(z > 0.0, 0.5 * (1.0 - z) ** 2, 0.5 - z))
    return out


def _smooth_hinge_grad(z):
    return np.where(z >= 1.0, 0.0, np.where(z > 0.0, z - 1.0, -1.0))


def _mmmf_levels(m, spec):
    if spec.levels is not None:
        levels = np.asarray(spec.levels, dtype=np.float64)
    else:
        levels = np.unique(m.vals)
    if levels.size < 1:
        raise EmptyInputError("no rating levels")
    return levels


def _mmmf_objective(m, U, V, thresholds, lev_idx, margin_c):
    n_th = thresholds.shape[1]
    if n_th == 0:
        hinge = 0.0
    else:
        s = np.einsum("ij,ij->i", U[m.rows], V[m.cols])
        T = np.where(np.arange(n_th)[None, :] >= lev_idx[:, None], 1.0, -1.0)
        Z = T * (thresholds[m.rows] - s[:, None])
        hinge = float(_smooth_hinge(Z).sum())
    return 0.5 * (float((U * U).sum()) + float((V * V).sum())) \
        + margin_c * hinge


def _fit_mmmf(m, spec, init, hook, sample_order):
    rng = np.random.default_rng(spec.seed)
    r = spec.r
    levels = _mmmf_levels(m, spec)
    lev_idx = np.searchsorted(levels, m.vals)
    lev_idx = np.clip(lev_idx, 0, levels.size - 1)
    n_th = levels.size - 1
    if init is None:
        U = rng.standard_normal((m.n_rows, r)) / np.sqrt(r)
        V = rng.standard_normal((m.n_cols, r)) / np.sqrt(r)
    else:
        U, V = init[0].copy(), init[1].copy()
    mids = (levels[:-1] + levels[1:]) / 2.0 if n_th else np.empty(0)
    thresholds = np.tile(mids, (m.n_rows, 1))

    n_i = np.maximum(m.row_counts(), 1).astype(np.float64)
    m_j = np.maximum(m.col_counts(), 1).astype(np.float64)
    lr, C = spec.learning_rate, spec.margin_c
    rows, cols, vals = m.rows, m.cols, m.vals
    sign = np.arange(n_th)

    history = []
    for it in range(spec.max_iters):
        order = rng.permutation(m.nnz) if sample_order is None else sample_order
        for t in order:
            i, j = rows[t], cols[t]
            ui = U[i]
            vj = V[j]
            if n_th:
                T = np.where(sign >= lev_idx[t], 1.0, -1.0)
                z = T * (thresholds[i] - ui @ vj)
                coef = C * (_smooth_hinge_grad(z) * T)
                gs = -coef.sum()
                thresholds[i] -= lr * coef
            else:
                gs = 0.0
            U[i] = ui - lr * (gs * vj + ui / n_i[i])
            V[j] = vj - lr * (gs * ui + vj / m_j[j])
        obj = _mmmf_objective(m, U, V, thresholds, lev_idx, C)
        _check_finite(obj, it)
        history.append(obj)
        if hook is not None:
            hook(it, U, V)
        if _converged(history, spec.convergence_tol):
            break
    return FactorPair(U, V, thresholds=thresholds,
                      final_objective=history[-1], history=history)


# -- public surface ---------------------------------------------------------------

def factorize(m, spec, init=None, sample_order=None, iterate_hook=None):
    """Fit factors to the observed entries of ``m``.

    Args:
        m: a RatingMatrix or an AssembledBlock.
        spec: algorithm and hyperparameters.
        init: optional (U0, V0) overriding the seeded initialization.
        sample_order: optional fixed SGD visitation order (testing hook;
            SGD algorithms otherwise reshuffle per epoch from the seed).
        iterate_hook: optional callable ``(iteration, U, V)`` invoked after
            every iteration.

    The objective never increases across iterations for svd_als and nmf;
    SGD objectives are tracked per epoch. Training is deterministic for a
    fixed spec.
    """
    m = _resolve_matrix(m)
    spec.validate()
    if m.nnz == 0:
        raise EmptyInputError("cannot factorize a matrix with no entries")
    if spec.algorithm == "svd_als":
        return _fit_svd_als(m, spec, init, iterate_hook)
    if spec.algorithm == "nmf":
        return _fit_nmf(m, spec, init, iterate_hook)
    if spec.algorithm == "pmf_sgd":
        return _fit_pmf_sgd(m, spec, init, iterate_hook, sample_order)
    if spec.algorithm == "mmmf_fast":
        return _fit_mmmf(m, spec, init, iterate_hook, sample_order)
    raise ValueError(spec.algorithm)


def predict_entry(pair, i, j, clamp=None):
    """Prediction for one cell: the factor dot product (identity link),
    optionally clamped to a (low, high) rating scale for evaluation."""
    if not (0 <= i < pair.U.shape[0] and 0 <= j < pair.V.shape[0]):
        raise ShapeError(f"index ({i}, {j}) out of range")
    p = float(pair.U[i] @ pair.V[j])
    if clamp is not None:
        p = min(max(p, clamp[0]), clamp[1])
    return p


def objective_value(m, pair, spec):
    """The training objective at the given factors (loss over observed
    entries plus the algorithm's regularizer)."""
    m = _resolve_matrix(m)
    spec.validate()
    if pair.U.shape[0] != m.n_rows or pair.V.shape[0] != m.n_cols:
        raise ShapeError("factor dimensions do not match the matrix")
    if spec.algorithm == "svd_als":
        return _als_objective(m, pair.U, pair.V, spec.reg)
    if spec.algorithm == "nmf":
        return _nmf_objective(m, pair.U, pair.V, spec.reg)
    if spec.algorithm == "pmf_sgd":
        return _pmf_objective(m, pair.U, pair.V, spec.reg_user, spec.reg_item)
    if spec.algorithm == "mmmf_fast":
        levels = _mmmf_levels(m, spec)
        lev_idx = np.clip(np.searchsorted(levels, m.vals), 0, levels.size - 1)
        th = pair.thresholds
        if th is None:
            th = np.empty((m.n_rows, 0))
        return _mmmf_objective(m, pair.U, pair.V, th, lev_idx, spec.margin_c)
    raise ValueError(spec.algorithm)


# -- persistence -------------------------------------------------------------------

_MAGIC = b"LMF1"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIQQI")


def save_factors(path, pair, spec):
    """Binary factor dump plus a JSON sidecar with the spec and the
    objective history. Layout: header, then U, V and (mmmf only) the
    thresholds as little-endian float64 row-major."""
    n_th = pair.thresholds.shape[1] if pair.thresholds is not None else 0
    header = _HEADER.pack(
        _MAGIC, _VERSION, ALGORITHMS.index(spec.algorithm), pair.r,
        pair.U.shape[0], pair.V.shape[0], n_th)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pair.U.astype("<f8").tobytes(order="C"))
        fh.write(pair.V.astype("<f8").tobytes(order="C"))
        if n_th:
            fh.write(pair.thresholds.astype("<f8").tobytes(order="C"))
    sidecar = {
        "spec": spec_to_dict(spec),
        "final_objective": pair.final_objective,
        "history": list(map(float, pair.history)),
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)


def load_factors(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise ShapeError(f"{path}: not a factor file")
        magic, version, algo, r, n_rows, n_cols, n_th = _HEADER.unpack(raw)
        if magic != _MAGIC or version != _VERSION:
            raise ShapeError(f"{path}: not a factor file")
        U = np.frombuffer(fh.read(8 * n_rows * r), dtype="<f8").reshape(n_rows, r)
        V = np.frombuffer(fh.read(8 * n_cols * r), dtype="<f8").reshape(n_cols, r)
        th = None
        if n_th:
            th = np.frombuffer(fh.read(8 * n_rows * n_th),
                               dtype="<f8").reshape(n_rows, n_th)
    with open(str(path) + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    spec = spec_from_dict(sidecar["spec"])
    if spec.algorithm != ALGORITHMS[algo]:
        raise ShapeError(f"{path}: algorithm tag mismatch")
    pair = FactorPair(U.copy(), V.copy(),
                      thresholds=th.copy() if th is not None else None,
                      final_objective=sidecar["final_objective"],
                      history=sidecar["history"])
    return pair, spec


def spec_to_dict(spec):
    d = {
        "algorithm": spec.algorithm, "r": spec.r, "reg": spec.reg,
        "reg_user": spec.reg_user, "reg_item": spec.reg_item,
        "margin_c": spec.margin_c, "learning_rate": spec.learning_rate,
        "max_iters": spec.max_iters, "convergence_tol": spec.convergence_tol,
        "seed": spec.seed,
        "levels": list(spec.levels) if spec.levels is not None else None,
    }
    return d


def spec_from_dict(d):
    d = dict(d)
    if d.get("levels") is not None:
        d["levels"] = tuple(d["levels"])
    return FactorizerSpec(**d)


def with_seed(spec, seed):
    return replace(spec, seed=seed)
