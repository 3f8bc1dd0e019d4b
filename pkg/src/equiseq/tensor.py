"""Dense real linear algebra, seeded randomness and structured matrices.

A ``Matrix`` is a two-dimensional float64 :class:`numpy.ndarray`.  Sequences
are stored column-wise: ``X`` of shape ``(d, n)`` holds ``n`` tokens living in
``R^d``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DegenerateInputError,
    IllConditionedError,
    InvalidInputError,
    SchemaError,
    ShapeError,
)

Matrix = np.ndarray

NORM_FLOOR = 1e-300
COND_LIMIT = 1e12

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def as_matrix(value, *, name: str = "matrix") -> Matrix:
    """Coerce ``value`` to a finite 2-D float64 array."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: empty shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: non-finite entries")
    return arr


def shape_str(a) -> str:
    return "x".join(str(s) for s in np.shape(a))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {shape_str(a)} by {shape_str(b)}")
    return a @ b


def identity(d: int) -> Matrix:
    return np.eye(d)


def max_abs(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


# --------------------------------------------------------------------------
# randomness


def splitmix64(x: int) -> int:
    """One output of the SplitMix64 finaliser applied to ``x``."""
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def child_seed(seed: int, index: int) -> int:
    """Derive the seed of the ``index``-th child stream of ``seed``.

    This is the ``index``-th SplitMix64 output for a generator started at
    ``seed``, so children of one parent are decorrelated and reproducible.
    """
    return splitmix64((seed + (index + 1) * _GOLDEN_GAMMA) & _MASK64)


class Rng:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    The stream for a given seed is fixed by the PCG64 algorithm and numpy's
    ziggurat normal sampler, neither of which depends on the platform.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= _MASK64:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * std

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in the closed interval ``[low, high]``."""
        return int(self._gen.integers(low, high, endpoint=True))

    def uniform(self, shape=None):
        return self._gen.random(shape)

    def child(self, index: int) -> "Rng":
        return Rng(child_seed(self.seed, index))


# --------------------------------------------------------------------------
# structured constructors


def householder(u) -> Matrix:
    """Reflection ``I - 2 u u^T / |u|^2`` across the hyperplane normal to ``u``."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.size == 0 or not np.all(np.isfinite(u)):
        raise InvalidInputError("householder: direction must be a finite non-empty vector")
    norm_sq = float(u @ u)
    if math.sqrt(norm_sq) <= NORM_FLOOR:
        raise DegenerateInputError("householder: direction vector has zero norm")
    return np.eye(u.size) - (2.0 / norm_sq) * np.outer(u, u)


def random_orthogonal(d: int, rng: Rng) -> Matrix:
    """Product of ``d`` Householder reflections with Gaussian directions.

    The result is exactly orthogonal up to rounding; uniformity over O(d) is
    not claimed.
    """
    if int(d) < 1:
        raise InvalidInputError(f"random_orthogonal: d must be >= 1, got {d}")
    q = np.eye(d)
    for _ in range(d):
        u = rng.normal(d)
        while math.sqrt(float(u @ u)) <= NORM_FLOOR:
            u = rng.normal(d)
        q = householder(u) @ q
    return q


def permutation_indices(n: int, rng: Rng) -> np.ndarray:
    """Uniform permutation of ``range(n)`` by Fisher-Yates."""
    if int(n) < 1:
        raise InvalidInputError(f"random_permutation: n must be >= 1, got {n}")
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = rng.integer(0, i)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def permutation_matrix(perm) -> Matrix:
    """Matrix ``P`` with ``P[perm[j], j] = 1`` so that ``(X P)[:, j] = X[:, perm[j]]``."""
    perm = np.asarray(perm)
    n = perm.size
    p = np.zeros((n, n))
    p[perm, np.arange(n)] = 1.0
    return p


def random_permutation(n: int, rng: Rng) -> Matrix:
    return permutation_matrix(permutation_indices(n, rng))


# --------------------------------------------------------------------------
# numerics


def softmax_rows(a: Matrix) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows: expected a matrix, got shape {shape_str(a)}")
    if np.isnan(a).any():
        raise InvalidInputError("softmax_rows: NaN in input")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("softmax_rows: infinite entries in input")
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def lu_factor(a: Matrix):
    """Gaussian elimination with partial pivoting.

    Returns ``(lu, piv)`` in the packed LAPACK-like layout.  A pivot that is
    negligible relative to the matrix scale raises IllConditionedError.
    """
    a = np.array(a, dtype=np.float64)
    n, m = a.shape
    if n != m:
        raise ShapeError(f"lu_factor: matrix must be square, got {shape_str(a)}")
    scale = max_abs(a)
    if scale <= NORM_FLOOR:
        raise IllConditionedError("lu_factor: zero matrix")
    tiny = scale * n * np.finfo(np.float64).eps
    piv = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= tiny:
            raise IllConditionedError(f"lu_factor: matrix is singular to working precision (column {k})")
        if p != k:
            a[[k, p]] = a[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        a[k + 1 :, k] /= a[k, k]
        a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k, k + 1 :])
    return a, piv


def lu_solve(factors, b: Matrix) -> Matrix:
    lu, piv = factors
    n = lu.shape[0]
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    y = np.array(b[piv], dtype=np.float64).reshape(n, -1)
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] -= lu[i, i + 1 :] @ y[i + 1 :]
        y[i] /= lu[i, i]
    return y.reshape(-1) if vec else y


def solve(a: Matrix, b: Matrix) -> Matrix:
    return lu_solve(lu_factor(a), b)


def _rayleigh_power(apply, n: int, iters: int = 200, rtol: float = 1e-8) -> float:
    v = 1.0 + np.arange(n, dtype=np.float64) / n
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply(v)
        norm = float(np.linalg.norm(w))
        if norm <= NORM_FLOOR:
            return 0.0
        new = float(v @ w)
        v = w / norm
        if abs(new - lam) <= rtol * abs(new):
            return new
        lam = new
    return lam


def condition_estimate_spd(b: Matrix, factors=None) -> float:
    """Estimate ``lambda_max / lambda_min`` of a symmetric positive definite
    matrix by power iteration on ``b`` and inverse power iteration on ``b``."""
    n = b.shape[0]
    if factors is None:
        factors = lu_factor(b)
    lam_max = _rayleigh_power(lambda v: b @ v, n)
    inv_max = _rayleigh_power(lambda v: lu_solve(factors, v), n)
    if inv_max <= 0.0 or lam_max <= 0.0:
        return math.inf
    return lam_max * inv_max


def pseudo_inverse_left(x: Matrix) -> Matrix:
    """Left inverse ``(X^T X)^{-1} X^T`` of a full-column-rank matrix."""
    x = as_matrix(x, name="pseudo_inverse_left")
    d, n = x.shape
    if n > d:
        raise IllConditionedError(f"pseudo_inverse_left: {d}x{n} matrix cannot have full column rank")
    gram = x.T @ x
    factors = lu_factor(gram)
    cond = condition_estimate_spd(gram, factors)
    if not cond <= COND_LIMIT:
        raise IllConditionedError(
            f"pseudo_inverse_left: condition estimate of X^T X is {cond:.3e} (> {COND_LIMIT:.0e})"
        )
    return lu_solve(factors, x.T)


# --------------------------------------------------------------------------
# JSON


def matrix_to_json(a: Matrix) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"rows": int(a.shape[0]), "cols": int(a.shape[1]), "data": [float(v) for v in a.reshape(-1)]}


def matrix_from_json(obj, path: str = "") -> Matrix:
    if not isinstance(obj, dict):
        raise SchemaError("expected a matrix object {rows, cols, data}", path)
    for key in ("rows", "cols", "data"):
        if key not in obj:
            raise SchemaError(f"missing field '{key}'", path)
    rows, cols, data = obj["rows"], obj["cols"], obj["data"]
    if not (isinstance(rows, int) and isinstance(cols, int)) or rows < 1 or cols < 1:
        raise SchemaError("rows and cols must be positive integers", path)
    if not isinstance(data, list) or len(data) != rows * cols:
        raise SchemaError(f"data must be a list of length rows*cols = {rows * cols}", path)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in data):
        raise SchemaError("data entries must be numbers", path)
    arr = np.array(data, dtype=np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(arr)):
        raise SchemaError("data entries must be finite", path)
    return arr
