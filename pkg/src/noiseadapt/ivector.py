"""GMM-UBM and total-variability (i-vector) modelling.

Supervectors are stacked component means, ``s = m + T w``, with T stored
as a (K*D, M) matrix whose k-th block of D rows belongs to component k.
Statistics are always centred on the UBM means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from . import model_io
from .errors import InvalidArgumentError
from .features import FeatureMatrix

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-4
LOG_2PI = np.log(2.0 * np.pi)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, FeatureMatrix) else np.atleast_2d(np.asarray(f, dtype=float))


@dataclass
class Ubm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: list[float] = field(default_factory=list)

    @property
    def num_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_loglik(self, x: np.ndarray) -> np.ndarray:
        """log(w_k N(x_t; mu_k, diag var_k)), shape (T, K)."""
        prec = 1.0 / self.variances
        with np.errstate(divide="ignore"):
            const = np.log(self.weights) - 0.5 * (
                self.dim * LOG_2PI + np.log(self.variances).sum(1) + (self.means ** 2 * prec).sum(1))
        return const - 0.5 * (x ** 2) @ prec.T + x @ (self.means * prec).T

    def posteriors(self, f) -> tuple[np.ndarray, float]:
        """Component posteriors (T, K) and total log-likelihood."""
        x = _values(f)
        if x.shape[1] != self.dim:
            raise InvalidArgumentError(f"UBM expects {self.dim} dims, got {x.shape[1]}")
        lp = self.component_loglik(x)
        norm = logsumexp(lp, axis=1)
        return np.exp(lp - norm[:, None]), float(norm.sum())

    def loglik(self, f) -> float:
        return self.posteriors(f)[1]

    def save(self, path) -> None:
        model_io.save_document(path, "ubm", {"loglik_history": self.loglik_history},
                               {"weights": self.weights, "means": self.means,
                                "variances": self.variances})

    @classmethod
    def load(cls, path) -> "Ubm":
        meta, a = model_io.load_document(path, "ubm")
        return cls(a["weights"], a["means"], a["variances"], list(meta.get("loglik_history", [])))


def ubm_train(f, num_components: int = 64, iters: int = 10, seed: int = 0,
              kmeans_iters: int = 5) -> Ubm:
    """k-means++ initialisation followed by ``iters`` EM iterations.

    ``loglik_history`` holds the total log-likelihood before each EM update
    and after the last one (``iters + 1`` values).
    """
    x = _values(f)
    n, d = x.shape
    k = int(num_components)
    if k < 1 or k > n:
        raise InvalidArgumentError(f"need 1 <= K <= frame count ({n}), got K={k}")
    floor = VARIANCE_FLOOR * x.var(axis=0)
    floor = np.where(floor > 0, floor, 1e-10)
    rng = np.random.default_rng([seed, 21])
    if k == 1:
        labels = np.zeros(n, dtype=int)
    else:
        _, labels = kmeans2(x, k, iter=kmeans_iters, minit="++", seed=rng)
    gamma = np.zeros((n, k))
    gamma[np.arange(n), labels] = 1.0
    # empty k-means clusters are reseeded with random frames
    empty = np.flatnonzero(gamma.sum(0) == 0)
    if len(empty):
        rows = rng.choice(n, len(empty), replace=False)
        gamma[rows] = 0.0
        gamma[rows, empty] = 1.0
    ubm = _m_step(x, gamma, floor)
    history = []
    for it in range(iters):
        gamma, ll = ubm.posteriors(x)
        history.append(ll)
        logger.debug("ubm iter %d loglik %.6f", it, ll)
        ubm = _m_step(x, gamma, floor)
    history.append(ubm.loglik(x))
    ubm.loglik_history = history
    return ubm


def _m_step(x: np.ndarray, gamma: np.ndarray, floor: np.ndarray) -> Ubm:
    nk = gamma.sum(axis=0)
    safe = np.maximum(nk, 1e-300)[:, None]
    means = gamma.T @ x / safe
    var = gamma.T @ (x ** 2) / safe - means ** 2
    var = np.maximum(var, floor)
    return Ubm(nk / nk.sum(), means, var)


# ------------------------------------------------------------- statistics


@dataclass
class BaumWelchStats:
    """Zeroth-order counts N (K,) and mean-centred first-order sums F (K, D)."""

    n: np.ndarray
    f: np.ndarray

    def __add__(self, other: "BaumWelchStats") -> "BaumWelchStats":
        return BaumWelchStats(self.n + other.n, self.f + other.f)

    def scaled(self, factor: float) -> "BaumWelchStats":
        return BaumWelchStats(self.n * factor, self.f * factor)

    @classmethod
    def zeros(cls, k: int, d: int) -> "BaumWelchStats":
        return cls(np.zeros(k), np.zeros((k, d)))


def accumulate_stats(ubm: Ubm, f) -> BaumWelchStats:
    x = _values(f)
    if x.shape[1] != ubm.dim:
        raise InvalidArgumentError(f"UBM expects {ubm.dim} dims, got {x.shape[1]}")
    gamma, _ = ubm.posteriors(x)
    n = gamma.sum(axis=0)
    return BaumWelchStats(n, gamma.T @ x - n[:, None] * ubm.means)


# --------------------------------------------------------- total variability


@dataclass
class TotalVariability:
    t: np.ndarray                 # (K*D, M)
    m: np.ndarray                 # (K*D,)
    variances: np.ndarray         # (K, D) UBM variances
    objective_history: list[float] = field(default_factory=list)

    @property
    def ivector_dim(self) -> int:
        return self.t.shape[1]

    @property
    def blocks(self) -> np.ndarray:
        """T reshaped to (K, D, M)."""
        k, d = self.variances.shape
        return self.t.reshape(k, d, self.ivector_dim)

    def _precisions(self):
        blocks = self.blocks
        prec = 1.0 / self.variances
        # T_k' Sigma_k^-1 T_k for every component, (K, M, M)
        tt = np.einsum("kdm,kd,kdn->kmn", blocks, prec, blocks)
        tsig = (blocks * prec[:, :, None]).reshape(-1, self.ivector_dim)  # Sigma^-1 T
        return tt, tsig

    def posterior(self, stats: BaumWelchStats, _cache=None):
        """Posterior mean and precision matrix L of w for one scope."""
        tt, tsig = _cache if _cache is not None else self._precisions()
        m = self.ivector_dim
        lmat = np.eye(m) + np.tensordot(stats.n, tt, axes=1)
        b = stats.f.reshape(-1) @ tsig
        return np.linalg.solve(lmat, b), lmat, b

    def save(self, path) -> None:
        model_io.save_document(path, "total_variability",
                               {"objective_history": self.objective_history},
                               {"t": self.t, "m": self.m, "variances": self.variances})

    @classmethod
    def load(cls, path) -> "TotalVariability":
        meta, a = model_io.load_document(path, "total_variability")
        return cls(a["t"], a["m"], a["variances"], list(meta.get("objective_history", [])))


@dataclass
class IVector:
    w: np.ndarray
    scope: str = "utterance"


def tv_objective(tv: TotalVariability, stats_list) -> float:
    """Sum over scopes of 0.5*b'L^-1 b - 0.5*log|L| (the T-dependent part of
    the marginal log-likelihood); EM on T never decreases it."""
    cache = tv._precisions()
    total = 0.0
    for s in stats_list:
        w, lmat, b = tv.posterior(s, cache)
        total += 0.5 * b @ w - 0.5 * np.linalg.slogdet(lmat)[1]
    return float(total)


def tmatrix_train(ubm: Ubm, stats_list, ivector_dim: int = 40, iters: int = 10,
                  seed: int = 0, init: np.ndarray | None = None) -> TotalVariability:
    """EM for T: posterior of w per scope (E step), per-component linear
    solves for the loading blocks (M step).

    The random initial T is 0.1 * N(0, 1) scaled by the UBM standard
    deviations. ``objective_history`` records :func:`tv_objective` before
    each iteration and after the last.
    """
    k, d = ubm.means.shape
    m = int(ivector_dim)
    if m < 1 or m > k * d:
        raise InvalidArgumentError(f"i-vector dim must be in [1, {k * d}], got {m}")
    stats_list = list(stats_list)
    if not stats_list:
        raise InvalidArgumentError("no statistics to train on")
    if init is None:
        rng = np.random.default_rng([seed, 22])
        t = 0.1 * rng.standard_normal((k, d, m)) * np.sqrt(ubm.variances)[:, :, None]
        t = t.reshape(k * d, m)
    else:
        t = np.array(init, dtype=float).reshape(k * d, m)
    tv = TotalVariability(t, ubm.means.reshape(-1).copy(), ubm.variances.copy())
    nmat = np.array([s.n for s in stats_list])           # (S, K)
    fmat = np.array([s.f.reshape(-1) for s in stats_list])  # (S, K*D)
    history = []
    for it in range(iters):
        tt, tsig = tv._precisions()
        lmats = np.eye(m) + np.einsum("sk,kmn->smn", nmat, tt)
        bs = fmat @ tsig
        ws = np.linalg.solve(lmats, bs[:, :, None])[:, :, 0]
        covs = np.linalg.inv(lmats)
        history.append(float(np.sum(0.5 * np.einsum("sm,sm->s", bs, ws)
                                    - 0.5 * np.linalg.slogdet(lmats)[1])))
        second = covs + ws[:, :, None] * ws[:, None, :]      # E[w w'], (S, M, M)
        a = np.einsum("sk,smn->kmn", nmat, second)            # (K, M, M)
        c = (fmat.T @ ws).reshape(k, d, m)                     # (K, D, M)
        # T_k A_k = C_k  ->  T_k = C_k A_k^-1 (A_k symmetric)
        blocks = np.linalg.solve(a, c.transpose(0, 2, 1)).transpose(0, 2, 1)
        tv = TotalVariability(blocks.reshape(k * d, m), tv.m, tv.variances)
        logger.debug("tv iter %d objective %.6f", it, history[-1])
    history.append(tv_objective(tv, stats_list))
    tv.objective_history = history
    return tv


def extract_ivector(tv: TotalVariability, ubm: Ubm, stats: BaumWelchStats,
                    scope: str = "utterance") -> IVector:
    """Posterior mean (I + T'S^-1 N T)^-1 T'S^-1 F."""
    if stats.f.shape != ubm.means.shape or tv.t.shape[0] != stats.f.size:
        raise InvalidArgumentError("statistics do not match the UBM / T dimensions")
    w, _, _ = tv.posterior(stats)
    return IVector(w, scope)


def extract_ivector_online(tv: TotalVariability, ubm: Ubm, f, window: int = 10) -> np.ndarray:
    """Per-frame i-vectors from the trailing ``window`` frames (fewer at the start).

    Returns an array of shape (T, M).
    """
    x = _values(f)
    if len(x) < 1:
        raise InvalidArgumentError("need at least one frame")
    if window < 1:
        raise InvalidArgumentError("window must be positive")
    gamma, _ = ubm.posteriors(x)
    gx = gamma[:, :, None] * x[:, None, :]                # (T, K, D)
    n_win = np.zeros_like(gamma)
    gx_win = np.zeros_like(gx)
    for j in range(window):
        if j >= len(x):
            break
        n_win[j:] += gamma[:len(x) - j]
        gx_win[j:] += gx[:len(x) - j]
    f_win = gx_win - n_win[:, :, None] * ubm.means[None]
    tt, tsig = tv._precisions()
    m = tv.ivector_dim
    lmats = np.eye(m) + np.einsum("tk,kmn->tmn", n_win, tt)
    bs = f_win.reshape(len(x), -1) @ tsig
    return np.linalg.solve(lmats, bs[:, :, None])[:, :, 0]
