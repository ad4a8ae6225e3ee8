"""Query/response types and the stochastic response models.

Three query kinds: pick an item from a slate, critique a slate against a
soft attribute (more/less), or both (pick then critique). The user-side
models assume the user compares slates against a hypothetical target item,
the norm-ball-constrained maximizer of their utility.

Canonical outcome order: item queries enumerate the slate in order;
attribute queries are [+1, -1]; item-plus-attribute queries are
[(item_0,+1), (item_0,-1), (item_1,+1), ...].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .catalog import ItemCatalog, TrueUser
from .cav import Cav, CavBelief
from .util import as_rng, derive_rng, probit, softmax


class ResponseModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# queries and responses


@dataclass(frozen=True)
class ItemQuery:
    slate: tuple[str, ...]


@dataclass(frozen=True)
class AttributeQuery:
    slate: tuple[str, ...]
    tag: str


@dataclass(frozen=True)
class IpaQuery:
    slate: tuple[str, ...]
    tag: str


Query = Union[ItemQuery, AttributeQuery, IpaQuery]


@dataclass(frozen=True)
class ChoiceResponse:
    item: str


@dataclass(frozen=True)
class DirectionResponse:
    direction: int  # +1 (more) or -1 (less)


@dataclass(frozen=True)
class ChoiceDirectionResponse:
    item: str
    direction: int


Response = Union[ChoiceResponse, DirectionResponse, ChoiceDirectionResponse]


@dataclass(frozen=True)
class ContinuousQuery:
    """Relaxed query for gradient-based optimization: raw embeddings, and a
    concept vector either fixed or reparameterized as (mean, chol)."""

    kind: str  # "item" | "attribute" | "ipa"
    slate: np.ndarray  # (k, d)
    cav_vector: np.ndarray | None = None
    cav_mean: np.ndarray | None = None
    cav_chol: np.ndarray | None = None
    noise_sigma: float = 0.1

    def __post_init__(self):
        if self.kind not in ("item", "attribute", "ipa"):
            raise ResponseModelError(f"unknown query kind {self.kind!r}")
        object.__setattr__(self, "slate", np.asarray(self.slate, dtype=np.float64))
        if self.kind != "item":
            has_fixed = self.cav_vector is not None
            has_dist = self.cav_mean is not None and self.cav_chol is not None
            if has_fixed == has_dist:
                raise ResponseModelError(
                    "attribute-bearing continuous query needs exactly one of "
                    "cav_vector or (cav_mean, cav_chol)"
                )


def validate_query(query: Query, catalog: ItemCatalog, tags: set[str] | None = None) -> None:
    if not query.slate:
        raise ResponseModelError("empty slate")
    if len(set(query.slate)) != len(query.slate):
        raise ResponseModelError("slate items must be distinct")
    for item in query.slate:
        catalog.index_of(item)
    if isinstance(query, (AttributeQuery, IpaQuery)) and tags is not None:
        if query.tag not in tags:
            raise ResponseModelError(f"unknown tag {query.tag!r}")


def outcomes(query: Query) -> list[Response]:
    """All possible responses, in canonical order."""
    if isinstance(query, ItemQuery):
        return [ChoiceResponse(i) for i in query.slate]
    if isinstance(query, AttributeQuery):
        return [DirectionResponse(1), DirectionResponse(-1)]
    if isinstance(query, IpaQuery):
        return [ChoiceDirectionResponse(i, y) for i in query.slate for y in (1, -1)]
    raise ResponseModelError(f"unknown query type {type(query).__name__}")


def response_index(query: Query, response: Response) -> int:
    """Position of ``response`` in the canonical outcome order."""
    if isinstance(query, ItemQuery):
        if not isinstance(response, ChoiceResponse):
            raise ResponseModelError("item query expects a choice response")
        return query.slate.index(response.item)
    if isinstance(query, AttributeQuery):
        if not isinstance(response, DirectionResponse) or response.direction not in (1, -1):
            raise ResponseModelError("attribute query expects a +1/-1 direction")
        return 0 if response.direction == 1 else 1
    if isinstance(query, IpaQuery):
        if not isinstance(response, ChoiceDirectionResponse) or response.direction not in (1, -1):
            raise ResponseModelError("item-plus-attribute query expects (choice, direction)")
        return 2 * query.slate.index(response.item) + (0 if response.direction == 1 else 1)
    raise ResponseModelError(f"unknown query type {type(query).__name__}")


@dataclass(frozen=True)
class History:
    entries: tuple[tuple[Query, Response], ...] = ()

    def __post_init__(self):
        for query, response in self.entries:
            response_index(query, response)  # validates variant consistency

    def append(self, query: Query, response: Response) -> "History":
        return History(self.entries + ((query, response),))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class MeanProbWeights:
    """Per-slate-position response weights; positive and summing to one."""

    weights: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w <= 0):
            raise ResponseModelError("weights must be positive")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ResponseModelError("weights must sum to 1")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def uniform(cls, k: int) -> "MeanProbWeights":
        return cls(tuple([1.0 / k] * k))


@dataclass(frozen=True)
class ResponseModelConfig:
    """RS-side model choices shared by belief updates and acquisition."""

    attribute_model: str = "mean_slate"  # or "mean_prob"
    weights: MeanProbWeights | None = None  # None = uniform
    temperature: float = 0.5
    n_cav_samples: int = 64
    cav_seed: int = 0

    def __post_init__(self):
        if self.attribute_model not in ("mean_slate", "mean_prob"):
            raise ResponseModelError(f"unknown attribute model {self.attribute_model!r}")
        if self.temperature <= 0:
            raise ResponseModelError("temperature must be positive")
        if self.n_cav_samples < 1:
            raise ResponseModelError("n_cav_samples must be >= 1")


Semantics = dict[str, Union[Cav, CavBelief]]


# ---------------------------------------------------------------------------
# core array-level models (vectorized over utility rows)


def target_items(utilities: np.ndarray, max_norm: float) -> np.ndarray:
    """Row-wise target items: max_norm * u / ||u||."""
    u = np.atleast_2d(np.asarray(utilities, dtype=np.float64))
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms == 0):
        raise ResponseModelError("undefined target: zero utility vector")
    return max_norm * u / norms[:, None]


def target_item(utility: np.ndarray, max_norm: float) -> np.ndarray:
    """Hypothetical ideal item for one utility vector."""
    if max_norm < 0:
        raise ResponseModelError("max_norm must be nonnegative")
    return target_items(utility, max_norm)[0]


def _weights_array(weights: MeanProbWeights | None, k: int) -> np.ndarray:
    if weights is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(weights.weights, dtype=np.float64)
    if w.shape[0] != k:
        raise ResponseModelError(f"{w.shape[0]} weights for a slate of {k}")
    return w


def attr_margins(
    utilities: np.ndarray,
    slate_emb: np.ndarray,
    cav_vectors: np.ndarray,
    sigma: float,
    max_norm: float,
    model: str,
    weights: MeanProbWeights | None = None,
) -> np.ndarray:
    """Probit arguments for a positive direction response.

    Returns (n, S) for the mean-slate model or (n, S, k) per slate item for
    the mean-probability model, where S indexes CAV vectors (S=1 for a
    deterministic CAV).
    """
    if sigma <= 0:
        raise ResponseModelError("noise sigma must be positive")
    cavs = np.atleast_2d(np.asarray(cav_vectors, dtype=np.float64))  # (S, d)
    targets = target_items(utilities, max_norm)  # (n, d)
    if model == "mean_slate":
        ref = slate_emb.mean(axis=0)  # (d,)
        return (targets - ref) @ cavs.T / sigma  # (n, S)
    if model == "mean_prob":
        diffs = targets[:, None, :] - slate_emb[None, :, :]  # (n, k, d)
        return np.einsum("nkd,sd->nsk", diffs, cavs) / sigma  # (n, S, k)
    raise ResponseModelError(f"unknown attribute model {model!r}")


def attr_pos_probs(
    utilities: np.ndarray,
    slate_emb: np.ndarray,
    cav_vectors: np.ndarray,
    sigma: float,
    max_norm: float,
    model: str,
    weights: MeanProbWeights | None = None,
) -> np.ndarray:
    """P(direction=+1) per utility row and CAV vector, shape (n, S)."""
    m = attr_margins(utilities, slate_emb, cav_vectors, sigma, max_norm, model, weights)
    if model == "mean_slate":
        return probit(m)
    w = _weights_array(weights, slate_emb.shape[0])
    return probit(m) @ w


def item_choice_probs(utilities: np.ndarray, slate_emb: np.ndarray, temperature: float) -> np.ndarray:
    """Multinomial logit over the slate, shape (n, k)."""
    if temperature <= 0:
        raise ResponseModelError("temperature must be positive")
    u = np.atleast_2d(np.asarray(utilities, dtype=np.float64))
    return softmax(u @ slate_emb.T / temperature, axis=1)


def ipa_choice_direction_probs(
    utilities: np.ndarray,
    slate_emb: np.ndarray,
    cav_vectors: np.ndarray,
    sigma: float,
    max_norm: float,
    temperature: float,
) -> np.ndarray:
    """Joint (choice, direction) table, shape (n, S, k, 2); [..., 0] is +1."""
    cavs = np.atleast_2d(np.asarray(cav_vectors, dtype=np.float64))
    pi = item_choice_probs(utilities, slate_emb, temperature)  # (n, k)
    targets = target_items(utilities, max_norm)
    diffs = targets[:, None, :] - slate_emb[None, :, :]  # (n, k, d)
    margins = np.einsum("nkd,sd->nsk", diffs, cavs) / sigma
    pos = probit(margins)  # (n, S, k)
    out = np.empty(pos.shape + (2,))
    out[..., 0] = pi[:, None, :] * pos
    out[..., 1] = pi[:, None, :] * (1.0 - pos)
    return out


def _cav_entry(semantics: Semantics, tag: str) -> Union[Cav, CavBelief]:
    try:
        return semantics[tag]
    except KeyError:
        raise ResponseModelError(f"unknown tag {tag!r}") from None


def frozen_cav_draws(
    belief: CavBelief, cfg: ResponseModelConfig, *key_parts
) -> np.ndarray:
    """A seeded, content-keyed set of CAV draws, shape (n_cav_samples, d).

    Keying by content (not position) keeps likelihoods stable under history
    reordering and across repeated evaluations of the same entry.
    """
    rng = derive_rng(cfg.cav_seed, "cav-draws", belief.tag_id, *key_parts)
    return belief.sample_many(rng, cfg.n_cav_samples)


def query_key(query: Query) -> tuple:
    if isinstance(query, ItemQuery):
        return ("item", query.slate)
    if isinstance(query, AttributeQuery):
        return ("attribute", query.slate, query.tag)
    return ("ipa", query.slate, query.tag)


def entry_key(query: Query, response: Response) -> tuple:
    if isinstance(response, ChoiceResponse):
        r = ("choice", response.item)
    elif isinstance(response, DirectionResponse):
        r = ("direction", response.direction)
    else:
        r = ("choice+direction", response.item, response.direction)
    return query_key(query) + r


def response_prob_matrix(
    query: Query,
    utilities: np.ndarray,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: ResponseModelConfig,
    cav_draws: np.ndarray | None = None,
) -> np.ndarray:
    """P(outcome | query, utility) for each utility row, shape (n, K).

    Attribute-bearing queries whose tag carries a belief (rather than a fixed
    vector) are marginalized by averaging over ``cav_draws``; pass frozen
    draws for reproducible likelihoods, or leave None to derive them from
    ``cfg.cav_seed`` keyed by the query content.
    """
    utilities = np.atleast_2d(np.asarray(utilities, dtype=np.float64))
    slate_emb = catalog.slate_embeddings(query.slate)
    if isinstance(query, ItemQuery):
        return item_choice_probs(utilities, slate_emb, cfg.temperature)

    entry = _cav_entry(semantics, query.tag)
    if isinstance(entry, Cav):
        vectors, sigma = entry.vector[None, :], entry.noise_sigma
    else:
        if cav_draws is None:
            cav_draws = frozen_cav_draws(entry, cfg, "query", query_key(query))
        vectors, sigma = cav_draws, entry.noise_sigma

    if isinstance(query, AttributeQuery):
        pos = attr_pos_probs(
            utilities, slate_emb, vectors, sigma, catalog.max_norm,
            cfg.attribute_model, cfg.weights,
        ).mean(axis=1)
        return np.stack([pos, 1.0 - pos], axis=1)

    table = ipa_choice_direction_probs(
        utilities, slate_emb, vectors, sigma, catalog.max_norm, cfg.temperature
    ).mean(axis=1)  # (n, k, 2)
    return table.reshape(table.shape[0], -1)


# ---------------------------------------------------------------------------
# public single-query operations


def attr_prob_mean_slate(
    query: AttributeQuery, cav: Cav, utility: np.ndarray, catalog: ItemCatalog
) -> float:
    """P(+1): probit of the g-score gap between target and slate mean."""
    slate_emb = catalog.slate_embeddings(query.slate)
    return float(
        attr_pos_probs(
            utility, slate_emb, cav.vector, cav.noise_sigma, catalog.max_norm, "mean_slate"
        )[0, 0]
    )


def attr_prob_mean_probability(
    query: AttributeQuery,
    cav: Cav,
    utility: np.ndarray,
    catalog: ItemCatalog,
    weights: MeanProbWeights | None = None,
) -> float:
    """P(+1): weighted average of per-item probit comparisons."""
    slate_emb = catalog.slate_embeddings(query.slate)
    return float(
        attr_pos_probs(
            utility, slate_emb, cav.vector, cav.noise_sigma, catalog.max_norm,
            "mean_prob", weights,
        )[0, 0]
    )


def item_prob(
    query: ItemQuery, utility: np.ndarray, catalog: ItemCatalog, temperature: float
) -> np.ndarray:
    """Choice distribution over the slate, shape (k,)."""
    slate_emb = catalog.slate_embeddings(query.slate)
    return item_choice_probs(utility, slate_emb, temperature)[0]


def ipa_prob(
    query: IpaQuery,
    cav: Cav,
    utility: np.ndarray,
    catalog: ItemCatalog,
    temperature: float,
) -> np.ndarray:
    """Joint (choice, direction) table, shape (k, 2); column 0 is +1."""
    slate_emb = catalog.slate_embeddings(query.slate)
    return ipa_choice_direction_probs(
        utility, slate_emb, cav.vector, cav.noise_sigma, catalog.max_norm, temperature
    )[0, 0]


def marginal_prob(
    query: Union[AttributeQuery, IpaQuery],
    belief: CavBelief,
    utility: np.ndarray,
    catalog: ItemCatalog,
    n_cav_samples: int,
    rng_seed: int | np.random.Generator,
    attribute_model: str = "mean_slate",
    weights: MeanProbWeights | None = None,
    temperature: float = 0.5,
) -> np.ndarray:
    """Response distribution under CAV uncertainty: Monte Carlo average of the
    deterministic model over draws from the concept belief.

    Shape matches the deterministic model: (2,) for attribute queries,
    (k, 2) for item-plus-attribute queries.
    """
    if n_cav_samples < 1:
        raise ResponseModelError("n_cav_samples must be >= 1")
    draws = belief.sample_many(as_rng(rng_seed), n_cav_samples)
    slate_emb = catalog.slate_embeddings(query.slate)
    if isinstance(query, AttributeQuery):
        pos = float(
            attr_pos_probs(
                utility, slate_emb, draws, belief.noise_sigma, catalog.max_norm,
                attribute_model, weights,
            )[0].mean()
        )
        return np.array([pos, 1.0 - pos])
    return ipa_choice_direction_probs(
        utility, slate_emb, draws, belief.noise_sigma, catalog.max_norm, temperature
    )[0].mean(axis=0)


def simulate_response(
    query: Query,
    true_user: TrueUser,
    catalog: ItemCatalog,
    cav_vector: np.ndarray | None = None,
    rng_seed: int | np.random.Generator = 0,
    attribute_model: str = "mean_slate",
    weights: MeanProbWeights | None = None,
) -> Response:
    """Draw a response from the ground-truth user's model.

    ``cav_vector`` is the concept direction powering the user's judgment for
    attribute-bearing queries (a fixed CAV, or a draw from the concept belief
    when simulating uncertain semantics).
    """
    rng = as_rng(rng_seed)
    slate_emb = catalog.slate_embeddings(query.slate)
    utility = true_user.utility

    if isinstance(query, ItemQuery):
        probs = item_choice_probs(utility, slate_emb, true_user.temperature)[0]
        idx = int(rng.choice(len(query.slate), p=probs))
        return ChoiceResponse(query.slate[idx])

    if cav_vector is None:
        raise ResponseModelError("attribute-bearing query needs a cav_vector")
    sigma = true_user.noise_for(query.tag)

    if isinstance(query, AttributeQuery):
        pos = attr_pos_probs(
            utility, slate_emb, cav_vector, sigma, catalog.max_norm,
            attribute_model, weights,
        )[0, 0]
        return DirectionResponse(1 if rng.random() < pos else -1)

    table = ipa_choice_direction_probs(
        utility, slate_emb, cav_vector, sigma, catalog.max_norm, true_user.temperature
    )[0, 0]
    flat = table.reshape(-1)
    idx = int(rng.choice(flat.shape[0], p=flat / flat.sum()))
    return ChoiceDirectionResponse(query.slate[idx // 2], 1 if idx % 2 == 0 else -1)


# ---------------------------------------------------------------------------
# JSON wire forms (used by the session service)


def query_to_json(query: Query) -> dict:
    if isinstance(query, ItemQuery):
        return {"type": "item", "slate": list(query.slate), "tag": None}
    kind = "attribute" if isinstance(query, AttributeQuery) else "ipa"
    return {"type": kind, "slate": list(query.slate), "tag": query.tag}


def query_from_json(obj: dict) -> Query:
    kind = obj.get("type")
    slate = tuple(obj.get("slate") or ())
    if kind == "item":
        return ItemQuery(slate)
    if kind == "attribute":
        return AttributeQuery(slate, str(obj["tag"]))
    if kind == "ipa":
        return IpaQuery(slate, str(obj["tag"]))
    raise ResponseModelError(f"unknown query type {kind!r}")


def response_to_json(response: Response) -> dict:
    if isinstance(response, ChoiceResponse):
        return {"choice": response.item, "direction": None}
    if isinstance(response, DirectionResponse):
        return {"choice": None, "direction": response.direction}
    return {"choice": response.item, "direction": response.direction}


def response_from_json(obj: dict, query: Query) -> Response:
    choice = obj.get("choice")
    direction = obj.get("direction")
    if isinstance(query, ItemQuery):
        if choice is None or direction is not None:
            raise ResponseModelError("item query takes a choice and no direction")
        return ChoiceResponse(str(choice))
    if isinstance(query, AttributeQuery):
        if direction not in (1, -1) or choice is not None:
            raise ResponseModelError("attribute query takes direction +1/-1 only")
        return DirectionResponse(int(direction))
    if choice is None or direction not in (1, -1):
        raise ResponseModelError("item-plus-attribute query takes a choice and direction")
    return ChoiceDirectionResponse(str(choice), int(direction))
