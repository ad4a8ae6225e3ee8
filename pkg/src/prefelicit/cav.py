"""Soft-attribute semantics: concept-vector training, scores, quality, beliefs.

A concept vector is the normal of the separating hyperplane of a regularized
logistic regressor over item embeddings; its dot product with an item
embedding (the g-score) says how much the item exhibits the attribute.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .util import as_rng


class CavError(ValueError):
    pass


class CavTrainingError(CavError):
    """Optimizer did not reach the gradient tolerance; carries the last iterate."""

    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class Cav:
    """A learned concept direction plus the response noise used with it."""

    tag_id: str
    vector: np.ndarray
    noise_sigma: float
    quality: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=np.float64))
        if self.noise_sigma <= 0:
            raise CavError("noise_sigma must be positive")


@dataclass(frozen=True)
class CavBelief:
    """Gaussian uncertainty over a concept direction.

    ``chol_scale`` is lower-triangular L with covariance L.T @ L; draws use
    mean + L @ eps (exact and self-consistent for the isotropic case).
    """

    tag_id: str
    mean: np.ndarray
    chol_scale: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        chol = np.asarray(self.chol_scale, dtype=np.float64)
        if not np.allclose(chol, np.tril(chol)):
            raise CavError("chol_scale must be lower-triangular")
        if np.any(np.diag(chol) < 0):
            raise CavError("chol_scale diagonal must be nonnegative")
        if chol.shape != (mean.shape[0], mean.shape[0]):
            raise CavError("chol_scale shape must match mean dimension")
        if self.noise_sigma <= 0:
            raise CavError("noise_sigma must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol_scale", chol)

    def cov(self) -> np.ndarray:
        return self.chol_scale.T @ self.chol_scale

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        eps = rng.standard_normal((n, self.mean.shape[0]))
        return self.mean + eps @ self.chol_scale.T


@dataclass(frozen=True)
class CavTrainConfig:
    reg_lambda: float = 0.1
    max_iters: int = 10_000
    tol: float = 1e-8

    def __post_init__(self):
        if self.reg_lambda < 0:
            raise CavError("reg_lambda must be nonnegative")
        if self.tol <= 0:
            raise CavError("tol must be positive")
        if self.max_iters < 1:
            raise CavError("max_iters must be positive")


def _loss_and_grad(w: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float):
    margins = y * (x @ w)
    # log(1 + exp(-m)) computed stably for either sign of m
    loss = float(np.sum(np.logaddexp(0.0, -margins)) + 0.5 * lam * w @ w)
    sig = 1.0 / (1.0 + np.exp(np.clip(margins, -500, 500)))
    grad = -(x.T @ (y * sig)) + lam * w
    return loss, grad


def train_cav(
    embeddings: np.ndarray,
    labels: np.ndarray,
    tag_id: str,
    cfg: CavTrainConfig = CavTrainConfig(),
    noise_sigma: float = 0.1,
) -> Cav:
    """Fit the concept direction by full-batch gradient descent.

    Deterministic: zero initialization, backtracking line search, stop when
    the gradient norm falls below ``cfg.tol``. The objective is the summed
    logistic loss on (embedding, label) pairs plus an L2 ridge.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise CavError("embeddings and labels disagree in length")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise CavError(f"untrainable tag {tag_id!r}: single-class data")

    lam = cfg.reg_lambda
    w = np.zeros(x.shape[1])
    loss, grad = _loss_and_grad(w, x, y, lam)
    step = 1.0
    for _ in range(cfg.max_iters):
        gnorm2 = grad @ grad
        if np.sqrt(gnorm2) <= cfg.tol:
            return Cav(tag_id=tag_id, vector=w, noise_sigma=noise_sigma)
        # backtracking with Armijo condition, reusing the last good step
        step = min(step * 2.0, 1e6)
        while True:
            w_new = w - step * grad
            loss_new, grad_new = _loss_and_grad(w_new, x, y, lam)
            if loss_new <= loss - 0.5 * step * gnorm2 or step < 1e-18:
                break
            step *= 0.5
        w, loss, grad = w_new, loss_new, grad_new
    if np.linalg.norm(grad) <= cfg.tol:
        return Cav(tag_id=tag_id, vector=w, noise_sigma=noise_sigma)
    raise CavTrainingError(
        f"tag {tag_id!r}: no convergence in {cfg.max_iters} iterations "
        f"(gradient norm {np.linalg.norm(grad):.3e})",
        last_iterate=w,
    )


def cav_loss(w: np.ndarray, embeddings: np.ndarray, labels: np.ndarray, reg_lambda: float) -> float:
    """Training objective value at ``w`` (exposed for verification)."""
    loss, _ = _loss_and_grad(
        np.asarray(w, np.float64), np.asarray(embeddings, np.float64),
        np.asarray(labels, np.float64), reg_lambda,
    )
    return loss


def g_score(cav_vector: np.ndarray, item_embedding: np.ndarray) -> float:
    """Degree to which an item satisfies the attribute: plain dot product."""
    v = np.asarray(cav_vector, dtype=np.float64)
    e = np.asarray(item_embedding, dtype=np.float64)
    if v.shape != e.shape:
        raise CavError(f"dimension mismatch: {v.shape} vs {e.shape}")
    return float(v @ e)


def cav_quality(cav: Cav, embeddings: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of (positive, negative) pairs ranked correctly by g-score.

    Ties count as satisfied. Exact pair enumeration for small sets; a
    sort-based rank count (exactly equivalent under the >= rule) otherwise.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    scores = x @ cav.vector
    pos = scores[y > 0]
    neg = scores[y < 0]
    if len(pos) == 0 or len(neg) == 0:
        raise CavError("quality needs both classes")
    if len(pos) * len(neg) <= 1_000_000:
        good = int(np.sum(pos[:, None] >= neg[None, :]))
    else:
        neg_sorted = np.sort(neg)
        good = int(np.sum(np.searchsorted(neg_sorted, pos, side="right")))
    return good / (len(pos) * len(neg))


def sample_cav(belief: CavBelief, rng_seed: int | np.random.Generator) -> np.ndarray:
    """One reparameterized draw: mean + chol_scale @ eps. Seeded-reproducible."""
    rng = as_rng(rng_seed)
    eps = rng.standard_normal(belief.mean.shape[0])
    return belief.mean + belief.chol_scale @ eps


def make_uncertainty_suite(
    cavs: list[Cav],
    sigma_lo: float,
    sigma_hi: float,
    rng_seed: int | np.random.Generator,
) -> list[CavBelief]:
    """Inject synthetic uncertainty: isotropic beliefs around each learned CAV.

    The per-tag standard deviations are spread log10-evenly over
    [sigma_lo, sigma_hi] and assigned to tags in a seeded random permutation.
    """
    if not (0 < sigma_lo <= sigma_hi):
        raise CavError("need 0 < sigma_lo <= sigma_hi")
    n = len(cavs)
    if n == 0:
        return []
    if n == 1:
        sigmas = np.array([sigma_lo])
    else:
        sigmas = np.logspace(np.log10(sigma_lo), np.log10(sigma_hi), n)
    perm = as_rng(rng_seed).permutation(n)
    out = []
    for cav, sigma in zip(cavs, sigmas[perm]):
        d = cav.vector.shape[0]
        out.append(
            CavBelief(
                tag_id=cav.tag_id,
                mean=cav.vector.copy(),
                chol_scale=float(sigma) * np.eye(d),
                noise_sigma=cav.noise_sigma,
            )
        )
    return out


def save_cavs(cavs: list[Cav], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for c in cavs:
            row = {
                "tag": c.tag_id,
                "vec": c.vector.tolist(),
                "sigma": c.noise_sigma,
                "quality": c.quality,
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_cavs(path: str | Path) -> list[Cav]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                out.append(
                    Cav(
                        tag_id=str(row["tag"]),
                        vector=np.array(row["vec"], dtype=np.float64),
                        noise_sigma=float(row["sigma"]),
                        quality=row.get("quality"),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CavError(f"malformed CAV row at line {lineno}: {exc}") from None
    return out


def save_cav_beliefs(beliefs: list[CavBelief], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for b in beliefs:
            row = {
                "tag": b.tag_id,
                "mean": b.mean.tolist(),
                "chol_rows": b.chol_scale.tolist(),
                "sigma": b.noise_sigma,
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_cav_beliefs(path: str | Path) -> list[CavBelief]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                out.append(
                    CavBelief(
                        tag_id=str(row["tag"]),
                        mean=np.array(row["mean"], dtype=np.float64),
                        chol_scale=np.array(row["chol_rows"], dtype=np.float64),
                        noise_sigma=float(row["sigma"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CavError(f"malformed CAV-belief row at line {lineno}: {exc}") from None
    return out


def with_quality(cav: Cav, quality: float) -> Cav:
    return replace(cav, quality=quality)
