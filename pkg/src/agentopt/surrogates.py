"""Numerical engines for the model-based selectors.

* masked alternating least squares with per-member dropout, giving an
  ensemble of low-rank fits whose spread serves as per-cell uncertainty;
* a Gaussian-process posterior over the finite combination space with an
  exponential Hamming kernel, plus closed-form Expected Improvement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from agentopt.core import AgentOptError, ScoreMatrix

# 1e-6 leaves a shrinkage bias of order 1e-6 on recovered cells; 1e-9 does not
RIDGE = 1e-9
INIT_SCALE = 0.1
MAX_SWEEPS = 100
REL_TOL = 1e-8
DEFAULT_DROPOUT = 0.1
DEFAULT_GAMMA = 1.0
DEFAULT_NOISE = 1e-4
Z_CLAMP = 40.0


class InsufficientObservations(AgentOptError):
    pass


class NumericalFailure(AgentOptError):
    pass


class ShapeMismatch(AgentOptError):
    pass


class SurrogateFitFailed(AgentOptError):
    pass


@dataclass(frozen=True)
class LowRankFactor:
    U: np.ndarray
    V: np.ndarray
    sweeps: int = 0
    objective_trace: tuple[float, ...] = ()

    def predict(self) -> np.ndarray:
        return self.U @ self.V.T

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])


@dataclass(frozen=True)
class EnsembleStats:
    mu_hat: np.ndarray
    sigma_hat: np.ndarray


def _as_arrays(partial, mask=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(partial, ScoreMatrix):
        return np.nan_to_num(partial.scores), partial.mask.copy()
    values = np.asarray(partial, dtype=float)
    if mask is None:
        mask = ~np.isnan(values)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} != values shape {values.shape}")
    return np.where(mask, np.nan_to_num(values), 0.0), mask


def _solve_side(X: np.ndarray, M: np.ndarray, other: np.ndarray, ridge: float) -> np.ndarray:
    # row i solves (sum_j M_ij o_j o_j^T + ridge I) x_i = sum_j M_ij X_ij o_j
    r = other.shape[1]
    if r == 1:
        o = other[:, 0]
        return ((X @ o) / (M @ (o * o) + ridge))[:, None]
    gram = np.einsum("ij,jk,jl->ikl", M, other, other) + ridge * np.eye(r)
    rhs = X @ other
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def _balance(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # equalise column norms per component; U V^T is unchanged and the ridge
    # term can only shrink
    nu = np.sqrt(np.einsum("ik,ik->k", U, U))
    nv = np.sqrt(np.einsum("jk,jk->k", V, V))
    ok = (nu > 0) & (nv > 0)
    s = np.ones_like(nu)
    s[ok] = np.sqrt(nv[ok] / nu[ok])
    return U * s, V / s


def _objective(X, M, U, V, ridge) -> float:
    # X is zero and M is 0.0 wherever a cell is hidden
    resid = M * (X - U @ V.T)
    return float(np.vdot(resid, resid) + ridge * (np.vdot(U, U) + np.vdot(V, V)))


def als_fit(
    partial,
    r: int = 1,
    dropout_p: float = 0.0,
    iters: int = MAX_SWEEPS,
    seed: int = 0,
    *,
    mask=None,
    ridge: float = RIDGE,
    tol: float = REL_TOL,
) -> LowRankFactor:
    """Fit ``partial ~= U V^T`` on observed cells by alternating ridge solves.

    ``partial`` is a :class:`ScoreMatrix` or an array with NaN (or an explicit
    ``mask``) marking unobserved cells. A seeded fraction ``dropout_p`` of the
    observed cells is hidden from this fit.
    """
    if r < 1 or iters < 1:
        raise AgentOptError("rank and iteration count must be >= 1")
    if not 0.0 <= dropout_p < 1.0:
        raise AgentOptError(f"dropout must lie in [0, 1), got {dropout_p}")
    X, M = _as_arrays(partial, mask)
    if not M.any():
        raise InsufficientObservations("no observed cells to factorise")
    rng = np.random.default_rng(seed)
    if dropout_p > 0:
        kept = M & (rng.random(M.shape) >= dropout_p)
        # never drop everything
        M = kept if kept.any() else M
    X = np.where(M, X, 0.0)
    M = M.astype(float)
    n_rows, n_cols = X.shape
    # half-normal start: scores are non-negative, and a sign-mixed start can
    # settle on a spurious stationary point of the rank-1 problem
    U = INIT_SCALE * np.abs(rng.standard_normal((n_rows, r)))
    V = INIT_SCALE * np.abs(rng.standard_normal((n_cols, r)))
    trace = []
    prev = math.inf
    sweeps = 0
    for sweeps in range(1, iters + 1):
        U = _solve_side(X, M, V, ridge)
        V = _solve_side(X.T, M.T, U, ridge)
        U, V = _balance(U, V)
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise NumericalFailure("non-finite factors in ALS sweep")
        obj = _objective(X, M, U, V, ridge)
        trace.append(obj)
        if obj < 1e-28 or (math.isfinite(prev) and prev - obj <= tol * prev):
            break
        prev = obj
    return LowRankFactor(U, V, sweeps, tuple(trace))


def fit_ensemble(
    partial,
    r: int,
    members: int,
    dropout_p: float = DEFAULT_DROPOUT,
    seed: int = 0,
    *,
    mask=None,
    iters: int = MAX_SWEEPS,
) -> list[LowRankFactor]:
    seeds = np.random.SeedSequence(seed).generate_state(members)
    return [
        als_fit(partial, r, dropout_p, iters, int(s), mask=mask) for s in seeds
    ]


def ensemble_stats(members: Sequence[LowRankFactor]) -> EnsembleStats:
    """Per-cell mean and population standard deviation across members."""
    if not members:
        raise AgentOptError("ensemble needs at least one member")
    shape = members[0].shape
    for m in members:
        if m.shape != shape:
            raise ShapeMismatch(f"member shape {m.shape} != {shape}")
    preds = np.stack([m.predict() for m in members])
    return EnsembleStats(preds.mean(axis=0), preds.std(axis=0))


# --------------------------------------------------------------------------
# Hamming-kernel GP


def hamming_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """``exp(-gamma * #differing roles)`` between rows of two digit arrays."""
    dist = (A[:, None, :] != B[None, :, :]).sum(axis=2)
    return np.exp(-gamma * dist)


class SurrogateModel:
    """Zero-mean, unit-prior-variance GP posterior over combination encodings."""

    def __init__(self, X: np.ndarray, y: np.ndarray, gamma: float, noise: float):
        if gamma <= 0:
            raise AgentOptError(f"gamma must be > 0, got {gamma}")
        if noise < 0:
            raise AgentOptError(f"noise must be >= 0, got {noise}")
        self.X = np.atleast_2d(np.asarray(X))
        self.y = np.asarray(y, dtype=float)
        if len(self.X) == 0:
            raise InsufficientObservations("surrogate needs at least one training point")
        self.gamma = gamma
        self.noise = noise
        K = hamming_kernel(self.X, self.X, gamma)
        jitter = noise
        for _ in range(8):
            try:
                self._L = np.linalg.cholesky(K + jitter * np.eye(len(K)))
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10, 1e-10)
        else:
            raise NumericalFailure("Gram matrix not positive definite after jitter escalation")
        self.jitter = jitter
        self._alpha = np.linalg.solve(self._L.T, np.linalg.solve(self._L, self.y))

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        Xq = np.atleast_2d(np.asarray(Xq))
        Ks = hamming_kernel(Xq, self.X, self.gamma)
        mean = Ks @ self._alpha
        w = np.linalg.solve(self._L, Ks.T)
        var = np.maximum(1.0 - np.sum(w * w, axis=0), 0.0)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise NumericalFailure("non-finite surrogate prediction")
        return mean, var


def surrogate_fit(history, gamma: float = DEFAULT_GAMMA, noise: float = DEFAULT_NOISE) -> SurrogateModel:
    """Fit on ``(encoding, mean score)`` pairs; encodings are per-role
    candidate positions."""
    history = list(history)
    if not history:
        raise InsufficientObservations("surrogate needs at least one training point")
    X = np.array([list(enc) for enc, _ in history])
    y = np.array([v for _, v in history], dtype=float)
    return SurrogateModel(X, y, gamma, noise)


_erf = np.frompyfunc(math.erf, 1, 1)


def _norm_cdf(z):
    return 0.5 * (1.0 + _erf(np.asarray(z) / math.sqrt(2.0)).astype(float))


def _norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def expected_improvement_from(mean, std, incumbent: float) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    diff = mean - incumbent
    out = np.maximum(diff, 0.0)
    pos = std > 0
    if np.any(pos):
        with np.errstate(over="ignore"):  # subnormal std overflows to inf, which the clamp absorbs
            z = np.clip(diff[pos] / std[pos], -Z_CLAMP, Z_CLAMP)
        out = out.astype(float).copy()
        out[pos] = np.maximum(diff[pos] * _norm_cdf(z) + std[pos] * _norm_pdf(z), 0.0)
    return out


def expected_improvement(model: SurrogateModel, candidate, incumbent_best: float) -> float:
    mean, var = model.predict(np.atleast_2d(candidate))
    return float(expected_improvement_from(mean, np.sqrt(var), incumbent_best)[0])
