"""Acquisition functions for query scoring.

Information measures (predictive entropy, mutual information, expected value
of information) and recommendation quality, blended by a gamma weight.
Particle beliefs are evaluated exactly over their support; Gaussian beliefs
contribute seeded utility draws. Tags carrying a concept belief are
marginalized over a frozen draw set keyed by query content, shared across
hypothetical responses so likelihoods stay normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belief import ParticleBelief, UserBelief, posterior_mean, utility_support
from .catalog import ItemCatalog
from .cav import Cav
from .response import (
    AttributeQuery,
    ContinuousQuery,
    IpaQuery,
    ItemQuery,
    Query,
    ResponseModelConfig,
    Semantics,
    outcomes,
    query_key,
    response_prob_matrix,
)
from .util import derive_rng, probit, softmax


class AcquisitionError(ValueError):
    pass


VALID_KINDS = ("random", "entropy", "mutual_information", "evoi")


@dataclass(frozen=True)
class AcquisitionConfig:
    kind: str = "evoi"
    gamma: float = 0.5
    n_user_samples: int = 64
    n_cav_samples: int = 16
    rng_seed: int = 0
    evoi_peu: str = "exact"  # or "sampled"
    maximize_info: bool = True  # False flips the information score's sign

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise AcquisitionError(f"unknown acquisition kind {self.kind!r}; valid: {VALID_KINDS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise AcquisitionError("gamma must be in [0, 1]")
        if self.n_user_samples < 1 or self.n_cav_samples < 1:
            raise AcquisitionError("sample counts must be >= 1")
        if self.evoi_peu not in ("exact", "sampled"):
            raise AcquisitionError(f"unknown PEU variant {self.evoi_peu!r}")


@dataclass(frozen=True)
class QueryScore:
    ig: float
    rq: float
    blended: float


def _query_cav_draws(
    query: Query, semantics: Semantics, cfg: AcquisitionConfig
) -> np.ndarray | None:
    """Frozen concept draws for scoring one query (None for fixed semantics)."""
    if isinstance(query, ItemQuery):
        return None
    entry = semantics.get(query.tag)
    if entry is None:
        raise AcquisitionError(f"unknown tag {query.tag!r}")
    if isinstance(entry, Cav):
        return None
    rng = derive_rng(cfg.rng_seed, "acq-cav", query_key(query))
    return entry.sample_many(rng, cfg.n_cav_samples)


def _support(
    belief: UserBelief, query: Query, cfg: AcquisitionConfig
) -> tuple[np.ndarray, np.ndarray]:
    rng = derive_rng(cfg.rng_seed, "acq-utility", query_key(query))
    return utility_support(belief, cfg.n_user_samples, rng)


def _prob_matrix(
    query: Query,
    utilities: np.ndarray,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig,
) -> np.ndarray:
    return response_prob_matrix(
        query, utilities, semantics, catalog, model_cfg,
        cav_draws=_query_cav_draws(query, semantics, cfg),
    )


def response_marginal(
    query: Query,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> np.ndarray:
    """Belief-averaged response distribution, shape (n_outcomes,)."""
    utilities, weights = _support(belief, query, cfg)
    probs = _prob_matrix(query, utilities, semantics, catalog, cfg, model_cfg)
    return weights @ probs


def _entropy(p: np.ndarray, axis: int | None = None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -np.sum(terms, axis=axis)


def entropy_af(
    query: Query,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> float:
    """Shannon entropy (nats) of the belief-marginal response distribution."""
    return float(_entropy(response_marginal(query, belief, semantics, catalog, cfg, model_cfg)))


def mutual_information_af(
    query: Query,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> float:
    """Mutual information between the user's target and their response:
    marginal response entropy minus expected per-utility response entropy,
    clamped at zero against Monte Carlo noise."""
    utilities, weights = _support(belief, query, cfg)
    probs = _prob_matrix(query, utilities, semantics, catalog, cfg, model_cfg)
    marginal = weights @ probs
    cond = float(weights @ _entropy(probs, axis=1))
    return max(float(_entropy(marginal)) - cond, 0.0)


def eu_star(belief: UserBelief, catalog: ItemCatalog) -> tuple[str, float]:
    """Best item under the posterior-mean utility; ties break to the lowest
    item id."""
    if len(catalog) == 0:
        raise AcquisitionError("empty catalog")
    mean = posterior_mean(belief)
    scores = catalog.embeddings @ mean
    best = float(np.max(scores))
    tied = [catalog.item_ids[k] for k in np.flatnonzero(scores == best)]
    return min(tied), best


def _peu_from_support(
    utilities: np.ndarray,
    weights: np.ndarray,
    probs: np.ndarray,
    catalog: ItemCatalog,
) -> float:
    """sum_rho max_i [sum_j w_j u_j^T x_i P(rho | q, u_j)].

    Equals the marginal-weighted best posterior expected utility: reweighting
    the support by the likelihood of rho and rescanning the catalog.
    """
    contrib = (weights[:, None] * probs).T @ utilities  # (K, d)
    marg = weights @ probs
    keep = marg >= 1e-12  # negligible-probability responses contribute zero
    if not np.any(keep):
        return 0.0
    scores = contrib[keep] @ catalog.embeddings.T  # (K', n_items)
    return float(np.sum(np.max(scores, axis=1)))


def peu_exact(
    query: Query,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> float:
    """Posterior expected utility with exact enumeration over responses and
    exact Bayes reweighting on the belief support."""
    utilities, weights = _support(belief, query, cfg)
    probs = _prob_matrix(query, utilities, semantics, catalog, cfg, model_cfg)
    return _peu_from_support(utilities, weights, probs, catalog)


def peu_sampled(
    query: Query,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> float:
    """Monte Carlo posterior expected utility over m belief draws.

    Particle beliefs with uniform weights and at most m particles are used
    as-is; otherwise m draws are resampled by weight.
    """
    m = cfg.n_user_samples
    rng = derive_rng(cfg.rng_seed, "peu-sampled", query_key(query))
    if isinstance(belief, ParticleBelief):
        n = belief.particles.shape[0]
        uniform = np.allclose(belief.weights, 1.0 / n)
        if uniform and m >= n:
            utilities = belief.particles
        else:
            utilities = belief.sample(rng, m)
    else:
        utilities = belief.sample(rng, m)
    weights = np.full(utilities.shape[0], 1.0 / utilities.shape[0])
    probs = _prob_matrix(query, utilities, semantics, catalog, cfg, model_cfg)
    return _peu_from_support(utilities, weights, probs, catalog)


def evoi_af(
    query: Query,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> float:
    """Expected improvement in best-item expected utility from asking."""
    peu_fn = peu_exact if cfg.evoi_peu == "exact" else peu_sampled
    peu = peu_fn(query, belief, semantics, catalog, cfg, model_cfg)
    _, base = eu_star(belief, catalog)
    return peu - base


def rq(query: Query, belief: UserBelief, catalog: ItemCatalog) -> float:
    """Recommendation quality of the slate: summed posterior-mean utility."""
    mean = posterior_mean(belief)
    return float(sum(mean @ catalog.embedding(i) for i in query.slate))


def information_gain(
    query: Query,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> float:
    if cfg.kind == "random":
        return 0.0
    if cfg.kind == "entropy":
        value = entropy_af(query, belief, semantics, catalog, cfg, model_cfg)
    elif cfg.kind == "mutual_information":
        value = mutual_information_af(query, belief, semantics, catalog, cfg, model_cfg)
    else:
        value = evoi_af(query, belief, semantics, catalog, cfg, model_cfg)
    return value if cfg.maximize_info else -value


def bper_score(
    query: Query,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> QueryScore:
    """Raw blend gamma*IG + (1-gamma)*RQ for one query.

    Candidate-set comparisons normalize the two parts first (see
    ``blend_over_candidates``); the raw blend here keeps the parts
    recomputable.
    """
    ig = information_gain(query, belief, semantics, catalog, cfg, model_cfg)
    quality = rq(query, belief, catalog)
    return QueryScore(ig=ig, rq=quality, blended=cfg.gamma * ig + (1.0 - cfg.gamma) * quality)


def blend_over_candidates(scores: list[QueryScore], gamma: float) -> np.ndarray:
    """Comparable blended scores across a candidate set.

    IG and RQ scales differ across acquisition kinds, so each part is divided
    by its standard deviation over the candidates (left alone when
    degenerate) before blending.
    """
    ig = np.array([s.ig for s in scores], dtype=np.float64)
    quality = np.array([s.rq for s in scores], dtype=np.float64)
    ig_std = float(np.std(ig))
    rq_std = float(np.std(quality))
    ig_n = ig / ig_std if ig_std > 0 else ig
    rq_n = quality / rq_std if rq_std > 0 else quality
    return gamma * ig_n + (1.0 - gamma) * rq_n


# ---------------------------------------------------------------------------
# differentiable surrogate for continuous relaxation


def _norm_and_unit(m: np.ndarray) -> tuple[float, np.ndarray]:
    norm = float(np.linalg.norm(m))
    if norm < 1e-300:
        return 0.0, np.zeros_like(m)
    return norm, m / norm


def peu_differentiable(
    query: ContinuousQuery,
    utilities: np.ndarray,
    weights: np.ndarray,
    max_norm: float,
    cfg: AcquisitionConfig,
    temperature: float = 0.5,
    eps_draws: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Norm-form surrogate of the posterior expected utility and its analytic
    gradient with respect to the continuous query parameters.

    Value: z * sum_rho || sum_j w_j u_j P(rho | q, u_j) ||, averaged over
    reparameterized concept draws (mean + chol @ eps with frozen eps) when the
    query carries a concept distribution. Gradients cover the slate
    embeddings and, where present, the concept vector or (mean, chol).
    Attribute responses use the slate-mean comparison model.
    """
    u = np.asarray(utilities, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    slate = query.slate
    k, d = slate.shape
    z = max_norm
    targets = z * u / np.linalg.norm(u, axis=1)[:, None]

    grads: dict[str, np.ndarray] = {"slate": np.zeros_like(slate)}

    if query.kind == "item":
        pi = softmax(u @ slate.T / temperature, axis=1)  # (m, k)
        value = 0.0
        for i in range(k):
            norm, unit = _norm_and_unit((w * pi[:, i]) @ u)
            value += norm
            if norm == 0.0:
                continue
            a = u @ unit  # (m,)
            for l in range(k):
                delta = (1.0 if l == i else 0.0) - pi[:, l]
                grads["slate"][l] += (w * a * pi[:, i] * delta) @ u / temperature
        grads["slate"] *= z
        return z * value, grads

    # concept vectors: one fixed vector or n reparameterized draws
    if query.cav_vector is not None:
        vs = query.cav_vector[None, :]
        eps = None
    else:
        if eps_draws is None:
            rng = derive_rng(cfg.rng_seed, "relax-eps")
            eps_draws = rng.standard_normal((cfg.n_cav_samples, d))
        eps = np.asarray(eps_draws, dtype=np.float64)
        vs = query.cav_mean[None, :] + eps @ query.cav_chol.T  # (S, d)
        grads["cav_mean"] = np.zeros(d)
        grads["cav_chol"] = np.zeros((d, d))
    if query.cav_vector is not None:
        grads["cav"] = np.zeros(d)
    sigma = query.noise_sigma
    n_draws = vs.shape[0]

    if query.kind == "attribute":
        ref = slate.mean(axis=0)
        diffs = targets - ref  # (m, d)
        value = 0.0
        for s in range(n_draws):
            margin = diffs @ vs[s] / sigma  # (m,)
            pos = probit(margin)
            pdf = np.exp(-0.5 * margin * margin) / math.sqrt(2.0 * math.pi)
            n_pos, u_pos = _norm_and_unit((w * pos) @ u)
            n_neg, u_neg = _norm_and_unit((w * (1.0 - pos)) @ u)
            value += n_pos + n_neg
            delta = w * pdf * (u @ (u_pos - u_neg))  # (m,): dvalue/dmargin_j
            # margin_j = v^T (target_j - ref) / sigma
            grads["slate"] += np.tile(-(delta.sum()) * vs[s] / (sigma * k), (k, 1))
            dv = delta @ diffs / sigma  # (d,)
            if eps is None:
                grads["cav"] += dv
            else:
                grads["cav_mean"] += dv
                grads["cav_chol"] += np.outer(dv, eps[s])
        scale = z / n_draws
        value *= scale
        for key in grads:
            grads[key] *= scale
        return value, grads

    # ipa: joint (choice, direction)
    pi = softmax(u @ slate.T / temperature, axis=1)  # (m, k)
    value = 0.0
    for s in range(n_draws):
        diffs = targets[:, None, :] - slate[None, :, :]  # (m, k, d)
        margins = diffs @ vs[s] / sigma  # (m, k)
        pos = probit(margins)
        pdf = np.exp(-0.5 * margins * margins) / math.sqrt(2.0 * math.pi)
        for i in range(k):
            for y_idx, y in enumerate((1.0, -1.0)):
                p_dir = pos[:, i] if y > 0 else 1.0 - pos[:, i]
                norm, unit = _norm_and_unit((w * pi[:, i] * p_dir) @ u)
                value += norm
                if norm == 0.0:
                    continue
                a = u @ unit  # (m,)
                base = w * a  # (m,)
                # logit factor moves with every slate embedding
                for l in range(k):
                    delta = (1.0 if l == i else 0.0) - pi[:, l]
                    grads["slate"][l] += (base * p_dir * pi[:, i] * delta) @ u / (
                        temperature * n_draws
                    )
                # probit factor: margin_ji = v^T (target_j - x_i) / sigma
                dmargin = base * pi[:, i] * pdf[:, i] * y  # (m,)
                grads["slate"][i] += -(dmargin.sum()) * vs[s] / (sigma * n_draws)
                dv = dmargin @ diffs[:, i, :] / (sigma * n_draws)  # (d,)
                if eps is None:
                    grads["cav"] += dv
                else:
                    grads["cav_mean"] += dv
                    grads["cav_chol"] += np.outer(dv, eps[s])
    value = z * value / n_draws
    for key in grads:
        grads[key] *= z
    return value, grads
