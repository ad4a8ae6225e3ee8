"""Query-space search: random, Thompson sampling, sequential greedy, random
search, and continuous relaxation with projection back onto the catalog."""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass, field

from .acquisition import (
    AcquisitionConfig,
    QueryScore,
    blend_over_candidates,
    bper_score,
    eu_star,
    peu_differentiable,
)
from .belief import UserBelief, utility_support
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
)
from .util import as_rng, derive_rng, gaussian_kl


class OptimizerError(ValueError):
    pass


VALID_POLICIES = ("random", "thompson", "sequential_greedy", "random_search", "relaxation")


@dataclass(frozen=True)
class RelaxationConfig:
    steps: int = 2
    learning_rate: float = 1e-3
    hessian_reg: float = 1e-4
    init_random_trials: int = 20
    order: str = "first"  # or "second"

    def __post_init__(self):
        if self.steps < 0 or self.init_random_trials < 1:
            raise OptimizerError("steps must be >= 0 and init_random_trials >= 1")
        if self.learning_rate < 0 or self.hessian_reg <= 0:
            raise OptimizerError("learning_rate must be >= 0 and hessian_reg > 0")
        if self.order not in ("first", "second"):
            raise OptimizerError(f"unknown order {self.order!r}")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "random_search"
    slate_size: int = 5
    n_candidates: int = 100
    query_type: str = "ipa"  # "item" | "attribute" | "ipa"
    relaxation: RelaxationConfig = field(default_factory=RelaxationConfig)

    def __post_init__(self):
        if self.kind not in VALID_POLICIES:
            raise OptimizerError(f"unknown optimizer {self.kind!r}; valid: {VALID_POLICIES}")
        if self.query_type not in ("item", "attribute", "ipa"):
            raise OptimizerError(f"unknown query type {self.query_type!r}")
        if self.slate_size < 1 or self.n_candidates < 1:
            raise OptimizerError("slate_size and n_candidates must be >= 1")


def _make_query(query_type: str, slate: tuple[str, ...], tag: str | None) -> Query:
    if query_type == "item":
        return ItemQuery(slate)
    if tag is None:
        raise OptimizerError(f"{query_type} query needs a tag")
    if query_type == "attribute":
        return AttributeQuery(slate, tag)
    return IpaQuery(slate, tag)


def random_query(
    catalog: ItemCatalog,
    tags: list[str],
    cfg: OptimizerConfig,
    rng_seed: int | np.random.Generator,
) -> Query:
    """Uniform slate without replacement, uniform tag where needed."""
    if cfg.slate_size > len(catalog):
        raise OptimizerError("slate_size exceeds the catalog")
    rng = as_rng(rng_seed)
    idx = rng.choice(len(catalog), size=cfg.slate_size, replace=False)
    slate = tuple(catalog.item_ids[i] for i in idx)
    tag = None
    if cfg.query_type != "item":
        tag = sorted(tags)[int(rng.integers(len(tags)))]
    return _make_query(cfg.query_type, slate, tag)


def thompson_slate(
    belief: UserBelief,
    catalog: ItemCatalog,
    tags: list[str],
    cfg: OptimizerConfig,
    rng_seed: int | np.random.Generator,
) -> Query:
    """Sequential Thompson sampling: each position draws a fresh utility from
    the belief and takes the best not-yet-chosen item; the tag is uniform."""
    rng = as_rng(rng_seed)
    chosen: list[int] = []
    mask = np.zeros(len(catalog), dtype=bool)
    for _ in range(cfg.slate_size):
        draw = belief.sample(rng, 1)[0]
        scores = catalog.embeddings @ draw
        scores[mask] = -np.inf
        pick = int(np.argmax(scores))
        chosen.append(pick)
        mask[pick] = True
    slate = tuple(catalog.item_ids[i] for i in chosen)
    tag = None
    if cfg.query_type != "item":
        tag = sorted(tags)[int(rng.integers(len(tags)))]
    return _make_query(cfg.query_type, slate, tag)


def _argmax_normalized(
    candidates: list[Query],
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    acq: AcquisitionConfig,
    model_cfg: ResponseModelConfig,
) -> tuple[int, list[QueryScore], np.ndarray]:
    scores = [bper_score(q, belief, semantics, catalog, acq, model_cfg) for q in candidates]
    blended = blend_over_candidates(scores, acq.gamma)
    return int(np.argmax(blended)), scores, blended


def sequential_greedy(
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    tags: list[str],
    cfg: OptimizerConfig,
    acq: AcquisitionConfig,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> Query:
    """Greedy slate construction: best expected item first, then alternate
    between re-choosing the tag and appending the item that maximizes the
    blended score of the partial query. Ties break to the lowest id."""
    first, _ = eu_star(belief, catalog)
    slate = [first]

    def best_tag(current: list[str]) -> str | None:
        if cfg.query_type == "item":
            return None
        cands = sorted(tags)
        queries = [_make_query(cfg.query_type, tuple(current), t) for t in cands]
        idx, _, _ = _argmax_normalized(queries, belief, semantics, catalog, acq, model_cfg)
        return cands[idx]

    tag = best_tag(slate)
    while len(slate) < cfg.slate_size:
        tag = best_tag(slate)
        remaining = sorted(set(catalog.item_ids) - set(slate))
        queries = [_make_query(cfg.query_type, tuple(slate + [i]), tag) for i in remaining]
        idx, _, _ = _argmax_normalized(queries, belief, semantics, catalog, acq, model_cfg)
        slate.append(remaining[idx])
    return _make_query(cfg.query_type, tuple(slate), tag)


def random_search(
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    tags: list[str],
    cfg: OptimizerConfig,
    acq: AcquisitionConfig,
    rng_seed: int | np.random.Generator,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> Query:
    query, _, _ = random_search_scored(
        belief, semantics, catalog, tags, cfg, acq, rng_seed, model_cfg
    )
    return query


def random_search_scored(
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    tags: list[str],
    cfg: OptimizerConfig,
    acq: AcquisitionConfig,
    rng_seed: int | np.random.Generator,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> tuple[Query, QueryScore, list[tuple[Query, QueryScore]]]:
    """Best of n_candidates random queries under the normalized blend; also
    returns the full scored candidate list."""
    rng = as_rng(rng_seed)
    candidates = [random_query(catalog, tags, cfg, rng) for _ in range(cfg.n_candidates)]
    idx, scores, _ = _argmax_normalized(candidates, belief, semantics, catalog, acq, model_cfg)
    return candidates[idx], scores[idx], list(zip(candidates, scores))


# ---------------------------------------------------------------------------
# continuous relaxation


def _to_continuous(
    query: Query, semantics: Semantics, catalog: ItemCatalog
) -> ContinuousQuery:
    slate_emb = catalog.slate_embeddings(query.slate)
    if isinstance(query, ItemQuery):
        return ContinuousQuery(kind="item", slate=slate_emb)
    entry = semantics[query.tag]
    kind = "attribute" if isinstance(query, AttributeQuery) else "ipa"
    if isinstance(entry, Cav):
        return ContinuousQuery(
            kind=kind, slate=slate_emb, cav_vector=entry.vector.copy(),
            noise_sigma=entry.noise_sigma,
        )
    return ContinuousQuery(
        kind=kind, slate=slate_emb, cav_mean=entry.mean.copy(),
        cav_chol=entry.chol_scale.copy(), noise_sigma=entry.noise_sigma,
    )


def _pack(q: ContinuousQuery) -> np.ndarray:
    parts = [q.slate.ravel()]
    if q.cav_vector is not None:
        parts.append(q.cav_vector)
    elif q.cav_mean is not None:
        parts.extend([q.cav_mean, q.cav_chol.ravel()])
    return np.concatenate(parts)


def _unpack(theta: np.ndarray, template: ContinuousQuery) -> ContinuousQuery:
    k, d = template.slate.shape
    slate = theta[: k * d].reshape(k, d)
    pos = k * d
    cav_vector = cav_mean = cav_chol = None
    if template.cav_vector is not None:
        cav_vector = theta[pos : pos + d]
    elif template.cav_mean is not None:
        cav_mean = theta[pos : pos + d]
        cav_chol = theta[pos + d : pos + d + d * d].reshape(d, d)
    return ContinuousQuery(
        kind=template.kind, slate=slate, cav_vector=cav_vector,
        cav_mean=cav_mean, cav_chol=cav_chol, noise_sigma=template.noise_sigma,
    )


def _objective_grad(
    theta: np.ndarray,
    template: ContinuousQuery,
    utilities: np.ndarray,
    weights: np.ndarray,
    max_norm: float,
    acq: AcquisitionConfig,
    temperature: float,
    eps_draws: np.ndarray | None,
) -> tuple[float, np.ndarray]:
    """gamma * differentiable-PEU + (1-gamma) * RQ and its gradient."""
    q = _unpack(theta, template)
    peu, grads = peu_differentiable(
        q, utilities, weights, max_norm, acq, temperature, eps_draws
    )
    mean = weights @ utilities
    quality = float(np.sum(q.slate @ mean))
    value = acq.gamma * peu + (1.0 - acq.gamma) * quality

    k, d = q.slate.shape
    g_slate = acq.gamma * grads["slate"] + (1.0 - acq.gamma) * np.tile(mean, (k, 1))
    parts = [g_slate.ravel()]
    if q.cav_vector is not None:
        parts.append(acq.gamma * grads["cav"])
    elif q.cav_mean is not None:
        parts.extend([acq.gamma * grads["cav_mean"], acq.gamma * grads["cav_chol"].ravel()])
    return value, np.concatenate(parts)


def _project_slate(slate_emb: np.ndarray, catalog: ItemCatalog) -> tuple[str, ...]:
    """Each position to its nearest item; duplicates take the next nearest."""
    chosen: list[str] = []
    taken: set[int] = set()
    for row in slate_emb:
        dists = np.linalg.norm(catalog.embeddings - row, axis=1)
        order = np.argsort(dists, kind="stable")
        pick = next(int(i) for i in order if int(i) not in taken)
        taken.add(pick)
        chosen.append(catalog.item_ids[pick])
    return tuple(chosen)


def _project_tag(q: ContinuousQuery, semantics: Semantics, tags: list[str]) -> str:
    """Nearest tag: Euclidean on concept vectors, or smallest KL from the
    relaxed Gaussian to each tag's concept belief."""
    if q.cav_vector is not None:
        best_tag, best_dist = None, np.inf
        for tag in sorted(tags):
            entry = semantics[tag]
            vec = entry.vector if isinstance(entry, Cav) else entry.mean
            dist = float(np.linalg.norm(vec - q.cav_vector))
            if dist < best_dist:
                best_tag, best_dist = tag, dist
        return best_tag
    d = q.cav_mean.shape[0]
    jitter = 1e-12 * np.eye(d)
    cov0 = q.cav_chol.T @ q.cav_chol + jitter
    best_tag, best_kl = None, np.inf
    for tag in sorted(tags):
        entry = semantics[tag]
        if isinstance(entry, Cav):
            mean1, cov1 = entry.vector, jitter
        else:
            mean1, cov1 = entry.mean, entry.chol_scale.T @ entry.chol_scale + jitter
        kl = gaussian_kl(q.cav_mean, cov0, mean1, cov1)
        if kl < best_kl:
            best_tag, best_kl = tag, kl
    return best_tag


def relax_and_project(
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    tags: list[str],
    cfg: OptimizerConfig,
    acq: AcquisitionConfig,
    rng_seed: int,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> Query:
    """Continuous query optimization: start from the best of a small random
    search, take first- or second-order steps on the differentiable
    surrogate, then project each slate position to its nearest item and the
    concept parameters to the nearest tag."""
    relax = cfg.relaxation
    init_cfg = OptimizerConfig(
        kind="random_search", slate_size=cfg.slate_size,
        n_candidates=relax.init_random_trials, query_type=cfg.query_type,
        relaxation=relax,
    )
    init_query, _, _ = random_search_scored(
        belief, semantics, catalog, tags, init_cfg, acq,
        derive_rng(rng_seed, "relax-init"), model_cfg,
    )
    template = _to_continuous(init_query, semantics, catalog)
    theta = _pack(template)

    utilities, weights = utility_support(
        belief, acq.n_user_samples, derive_rng(rng_seed, "relax-utility")
    )
    eps_draws = None
    if template.cav_mean is not None:
        d = template.cav_mean.shape[0]
        eps_draws = derive_rng(rng_seed, "relax-eps").standard_normal(
            (acq.n_cav_samples, d)
        )

    def grad_at(t: np.ndarray) -> np.ndarray:
        return _objective_grad(
            t, template, utilities, weights, catalog.max_norm, acq,
            model_cfg.temperature, eps_draws,
        )[1]

    for _ in range(relax.steps):
        g = grad_at(theta)
        if relax.order == "first":
            theta = theta + relax.learning_rate * g
            continue
        # second order: Hessian by central differences of the analytic gradient
        dim = theta.shape[0]
        h = 1e-5
        hessian = np.empty((dim, dim))
        for j in range(dim):
            bump = np.zeros(dim)
            bump[j] = h
            hessian[:, j] = (grad_at(theta + bump) - grad_at(theta - bump)) / (2 * h)
        hessian = 0.5 * (hessian + hessian.T)
        try:
            step = np.linalg.solve(relax.hessian_reg * np.eye(dim) + hessian, g)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = relax.learning_rate * g  # singular curvature: first-order fallback
        theta = theta + step

    final = _unpack(theta, template)
    slate = _project_slate(final.slate, catalog)
    tag = None if cfg.query_type == "item" else _project_tag(final, semantics, tags)
    return _make_query(cfg.query_type, slate, tag)


def select_query(
    policy: str,
    belief: UserBelief,
    semantics: Semantics,
    catalog: ItemCatalog,
    tags: list[str],
    cfg: OptimizerConfig,
    acq: AcquisitionConfig,
    rng_seed: int,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> Query:
    """Dispatch to the configured query optimizer."""
    if policy == "random":
        return random_query(catalog, tags, cfg, derive_rng(rng_seed, "random-query"))
    if policy == "thompson":
        return thompson_slate(belief, catalog, tags, cfg, derive_rng(rng_seed, "thompson"))
    if policy == "sequential_greedy":
        return sequential_greedy(belief, semantics, catalog, tags, cfg, acq, model_cfg)
    if policy == "random_search":
        return random_search(
            belief, semantics, catalog, tags, cfg, acq,
            derive_rng(rng_seed, "random-search"), model_cfg,
        )
    if policy == "relaxation":
        return relax_and_project(
            belief, semantics, catalog, tags, cfg, acq, rng_seed, model_cfg
        )
    raise OptimizerError(f"unknown policy {policy!r}; valid: {VALID_POLICIES}")
