"""Shared numeric helpers and deterministic RNG derivation."""

from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, ndtr

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def stable_key_hash(*parts: Any) -> int:
    """Deterministic 63-bit hash of a tuple of JSON-serializable parts.

    Python's builtin ``hash`` is salted per process, so anything that must
    reproduce across runs (frozen Monte Carlo draws, per-entry seeds) goes
    through here instead.
    """
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    digest = hashlib.blake2b(blob.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def derive_rng(seed: int, *keys: Any) -> np.random.Generator:
    """Child generator for (seed, keys), independent of call order."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(stable_key_hash(*keys),))
    )


def derive_seed(seed: int, *keys: Any) -> int:
    """Child integer seed for (seed, keys)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stable_key_hash(*keys),))
    return int(ss.generate_state(1, np.uint64)[0])


def as_rng(seed_or_rng: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(int(seed_or_rng))


def probit(x: np.ndarray | float) -> np.ndarray | float:
    """Standard normal CDF, via the complementary error function."""
    return ndtr(x)


def log_probit(x: np.ndarray | float) -> np.ndarray | float:
    """log(Phi(x)), safe far into the lower tail."""
    return log_ndtr(x)


def inv_mills(x: np.ndarray) -> np.ndarray:
    """phi(x) / Phi(x), computed in log space so the tails don't overflow."""
    x = np.asarray(x, dtype=np.float64)
    log_pdf = -0.5 * x * x - LOG_SQRT_2PI
    return np.exp(log_pdf - log_ndtr(x))


def logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax."""
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def check_lower_triangular(scale: np.ndarray, name: str = "scale") -> np.ndarray:
    scale = np.asarray(scale, dtype=np.float64)
    if scale.ndim != 2 or scale.shape[0] != scale.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {scale.shape}")
    if not np.allclose(scale, np.tril(scale)):
        raise ValueError(f"{name} must be lower-triangular")
    if np.any(np.diag(scale) <= 0):
        raise ValueError(f"{name} must have a strictly positive diagonal")
    return scale


def scale_from_cov(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular L with positive diagonal such that L.T @ L == cov.

    Cholesky of the index-reversed matrix, flipped back; the transpose of
    that upper factor is the lower-triangular factor of the L.T @ L
    parameterization used throughout.
    """
    cov = np.asarray(cov, dtype=np.float64)
    rev = cov[::-1, ::-1]
    upper = np.linalg.cholesky(rev)[::-1, ::-1]
    return np.ascontiguousarray(upper.T)


def solve_cov(scale: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """(scale.T @ scale)^{-1} rhs via two triangular solves.

    ``rhs`` may be (d,) or (d, m); the solve happens column-wise.
    """
    y = solve_triangular(scale, rhs, trans="T", lower=True)
    return solve_triangular(scale, y, trans="N", lower=True)


def mahalanobis_sq(scale: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """resid^T (scale^T scale)^{-1} resid for one residual (d,) or rows (n, d)."""
    resid = np.asarray(resid, dtype=np.float64)
    single = resid.ndim == 1
    r = resid.reshape(1, -1) if single else resid
    y = solve_triangular(scale, r.T, trans="T", lower=True)
    out = np.sum(y * y, axis=0)
    return out[0] if single else out


def gaussian_kl(
    mean0: np.ndarray, cov0: np.ndarray, mean1: np.ndarray, cov1: np.ndarray
) -> float:
    """KL(N(mean0, cov0) || N(mean1, cov1)) in closed form."""
    d = mean0.shape[0]
    diff = mean1 - mean0
    inv1 = np.linalg.inv(cov1)
    _, logdet0 = np.linalg.slogdet(cov0)
    _, logdet1 = np.linalg.slogdet(cov1)
    return 0.5 * float(
        np.trace(inv1 @ cov0) + diff @ inv1 @ diff - d + logdet1 - logdet0
    )
