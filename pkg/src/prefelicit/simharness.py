"""Simulated environments, elicitation sessions, metrics, and experiments.

Two desk-scale environments: a fully synthetic one (standard-normal item
embeddings and concept vectors) and a rating/tagging world whose concept
vectors are trained from generated tag data. Sessions pit a configured
query optimizer and belief tracker against a simulated user; experiments
aggregate seeded sessions and emit deterministic report files.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionConfig
from .belief import BeliefTracker, McmcConfig, UserBelief, posterior_mean
from .catalog import GaussianUserPrior, ItemCatalog, TagDataset, TrueUser, build_cav_training_set
from .cav import (
    Cav,
    CavBelief,
    CavTrainConfig,
    cav_quality,
    make_uncertainty_suite,
    train_cav,
    with_quality,
)
from .optimizer import OptimizerConfig, select_query
from .response import (
    Query,
    Response,
    ResponseModelConfig,
    Semantics,
    query_to_json,
    response_to_json,
    simulate_response,
)
from .util import derive_rng, derive_seed, scale_from_cov, softmax, stable_key_hash

logger = logging.getLogger(__name__)


class HarnessError(ValueError):
    pass


# ---------------------------------------------------------------------------
# environment generation


@dataclass(frozen=True)
class SyntheticEnvConfig:
    n_items: int = 1000
    n_tags: int = 10
    dim: int = 5
    response_sigma: float = 0.1
    temperature: float = 0.5
    n_users: int = 10
    seed: int = 0


@dataclass(frozen=True)
class RecsimEnvConfig:
    n_users: int = 500
    n_items: int = 800
    dim: int = 25
    n_taggable: int = 5
    tag_threshold: float = 0.5
    rating_power_exponent: float = 1.1
    response_sigma: float = 0.25
    temperature: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_taggable > self.dim:
            raise HarnessError("n_taggable must not exceed dim")


@dataclass(frozen=True)
class Environment:
    catalog: ItemCatalog
    cavs: tuple[Cav, ...]
    population: tuple[tuple[GaussianUserPrior, TrueUser], ...]
    tag_data: TagDataset | None = None
    attribute_truth: np.ndarray | None = None  # (n_items, n_taggable)

    @property
    def tag_ids(self) -> list[str]:
        return [c.tag_id for c in self.cavs]


def _user_prior(rng: np.random.Generator, dim: int) -> GaussianUserPrior:
    mean = rng.standard_normal(dim)
    a = 0.3 * rng.standard_normal((dim, dim))
    cov = a.T @ a + 0.1 * np.eye(dim)  # ridge keeps the covariance positive definite
    return GaussianUserPrior(mean=mean, scale=scale_from_cov(cov))


def gen_synthetic_env(cfg: SyntheticEnvConfig) -> Environment:
    """Standard-normal item embeddings and concept vectors; per-user Gaussian
    priors with random means and covariances, true utilities drawn from them."""
    rng = np.random.default_rng(cfg.seed)
    width = len(str(cfg.n_items - 1))
    items = rng.standard_normal((cfg.n_items, cfg.dim))
    catalog = ItemCatalog.from_items(
        [f"item-{k:0{width}d}" for k in range(cfg.n_items)], items
    )
    cavs = tuple(
        Cav(f"tag-{t}", rng.standard_normal(cfg.dim), noise_sigma=cfg.response_sigma)
        for t in range(cfg.n_tags)
    )
    noise_map = {c.tag_id: cfg.response_sigma for c in cavs}
    population = []
    for _ in range(cfg.n_users):
        prior = _user_prior(rng, cfg.dim)
        utility = prior.sample(rng, 1)[0]
        population.append((prior, TrueUser(utility, noise_map, cfg.temperature)))
    return Environment(catalog=catalog, cavs=cavs, population=tuple(population))


def gen_recsim_tag_data(
    cfg: RecsimEnvConfig,
) -> tuple[ItemCatalog, np.ndarray, TagDataset]:
    """The data-generation stage: latent vectors, ratings, and tag records.

    Items and users live in [0,1]^dim; each user rates a power-law-sized,
    utility-biased item subset, and taggers mark rated items whose taggable
    coordinate clears the threshold (plus small noise)."""
    rng = np.random.default_rng(cfg.seed)
    width = len(str(cfg.n_items - 1))
    items = rng.uniform(0.0, 1.0, size=(cfg.n_items, cfg.dim))
    catalog = ItemCatalog.from_items(
        [f"item-{k:0{width}d}" for k in range(cfg.n_items)], items
    )
    # mixed-sign per-attribute utilities: users like some latent attributes
    # and dislike others (item coordinates stay in [0,1] so the tagging
    # threshold keeps its meaning)
    users = rng.uniform(-0.5, 0.5, size=(cfg.n_users, cfg.dim))
    tag_names = [f"tag-{t}" for t in range(cfg.n_taggable)]

    records: list[tuple[str, str, str]] = []
    for u in range(cfg.n_users):
        n_rated = min(int(rng.zipf(cfg.rating_power_exponent)), cfg.n_items)
        scores = users[u] @ items.T
        rated = rng.choice(cfg.n_items, size=n_rated, replace=False, p=softmax(scores))
        # most users never tag; the rest tag each rated item with a personal rate
        if rng.random() < 0.8:
            continue
        tag_rate = rng.uniform(0.1, 0.5)
        for i in rated:
            if rng.random() >= tag_rate:
                continue
            for t, tag in enumerate(tag_names):
                noise = rng.normal(0.0, 0.1)
                if items[i, t] >= cfg.tag_threshold + noise:
                    records.append((f"user-{u}", catalog.item_ids[i], tag))
    if not records:
        raise HarnessError("no tag data generated")
    return catalog, users, TagDataset.from_records(records)


def gen_recsim_env(cfg: RecsimEnvConfig) -> Environment:
    """Full environment: generated tag data plus concept vectors trained per
    tag on an 80/20 split (held-out pair quality recorded on each)."""
    catalog, users, tag_data = gen_recsim_tag_data(cfg)
    items = catalog.embeddings
    tag_names = [f"tag-{t}" for t in range(cfg.n_taggable)]

    cavs = []
    split_rng = np.random.default_rng(derive_seed(cfg.seed, "cav-split"))
    for tag in tag_names:
        if tag not in tag_data.tag_ids:
            raise HarnessError(f"no tag data generated for {tag!r}")
        emb, labels, _ = build_cav_training_set(tag_data, catalog, tag)
        order = split_rng.permutation(len(labels))
        n_test = max(1, len(labels) // 5)
        test, train = order[:n_test], order[n_test:]
        both_classes = lambda idx: np.any(labels[idx] > 0) and np.any(labels[idx] < 0)
        if not (both_classes(train) and both_classes(test)):
            train = test = order  # too little data to hold out
        # generated tag data is near-separable; the default gradient tolerance
        # is unreachable there while the direction is long since stable
        train_cfg = CavTrainConfig(tol=1e-5, max_iters=20_000)
        cav = train_cav(
            emb[train], labels[train], tag, train_cfg, noise_sigma=cfg.response_sigma
        )
        # the direction carries the semantics and the quality metric is
        # scale-invariant; unit norm gives sigma_g and the uncertainty suite a
        # consistent meaning across tags
        cav = Cav(
            tag_id=cav.tag_id,
            vector=cav.vector / np.linalg.norm(cav.vector),
            noise_sigma=cav.noise_sigma,
        )
        cavs.append(with_quality(cav, cav_quality(cav, emb[test], labels[test])))

    prior_mean = users.mean(axis=0)
    cov = np.cov(users.T) + 0.05 * np.eye(cfg.dim)
    prior_scale = scale_from_cov(cov)
    noise_map = {tag: cfg.response_sigma for tag in tag_names}
    population = tuple(
        (
            GaussianUserPrior(mean=prior_mean.copy(), scale=prior_scale.copy()),
            TrueUser(users[u], noise_map, cfg.temperature),
        )
        for u in range(cfg.n_users)
    )
    return Environment(
        catalog=catalog,
        cavs=tuple(cavs),
        population=population,
        tag_data=tag_data,
        attribute_truth=items[:, : cfg.n_taggable].copy(),
    )


# ---------------------------------------------------------------------------
# metrics


def cosine_metric(belief: UserBelief, true_user: TrueUser) -> float:
    """Alignment between the posterior-mean utility and the true one."""
    mean = posterior_mean(belief)
    nm = float(np.linalg.norm(mean))
    nu = float(np.linalg.norm(true_user.utility))
    if nu == 0:
        raise HarnessError("true utility vector is zero")
    if nm == 0:
        logger.warning("zero posterior mean; cosine reported as 0")
        return 0.0
    return float(mean @ true_user.utility / (nm * nu))


def _gains(true_utils: np.ndarray) -> np.ndarray:
    lo, hi = float(true_utils.min()), float(true_utils.max())
    if hi == lo:
        return np.zeros_like(true_utils)
    return (true_utils - lo) / (hi - lo)


def _dcg(gains_in_rank_order: np.ndarray) -> float:
    discounts = 1.0 / np.log2(np.arange(2, len(gains_in_rank_order) + 2))
    return float(gains_in_rank_order @ discounts)


def _top_k(scores: np.ndarray, item_ids: tuple[str, ...], k: int) -> list[int]:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], item_ids[i]))
    return order[:k]


def ndcg_metric(
    belief: UserBelief, true_user: TrueUser, catalog: ItemCatalog, k: int
) -> float:
    """Ranking quality of the belief's top-k items against the true top-k.

    Gains are min-max-normalized true utilities over the catalog; positions
    discount as 1/log2(pos+1)."""
    if k > len(catalog):
        raise HarnessError("k exceeds catalog size")
    true_utils = catalog.embeddings @ true_user.utility
    gains = _gains(true_utils)
    pred = catalog.embeddings @ posterior_mean(belief)
    top_pred = _top_k(pred, catalog.item_ids, k)
    top_true = _top_k(true_utils, catalog.item_ids, k)
    ideal = _dcg(gains[top_true])
    if ideal == 0:
        return 0.0
    return _dcg(gains[top_pred]) / ideal


def query_ndcg_metric(
    slate: tuple[str, ...], true_user: TrueUser, catalog: ItemCatalog
) -> float:
    """NDCG with the presented slate standing in for the predicted top-k."""
    true_utils = catalog.embeddings @ true_user.utility
    gains = _gains(true_utils)
    idx = [catalog.index_of(i) for i in slate]
    top_true = _top_k(true_utils, catalog.item_ids, len(slate))
    ideal = _dcg(gains[top_true])
    if ideal == 0:
        return 0.0
    return _dcg(gains[idx]) / ideal


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class ExperimentConfig:
    env_kind: str = "synthetic"  # or "recsim"
    synthetic: SyntheticEnvConfig = field(default_factory=SyntheticEnvConfig)
    recsim: RecsimEnvConfig = field(default_factory=RecsimEnvConfig)
    query_type: str = "ipa"
    attribute_model: str = "mean_slate"
    posterior: str = "particle"  # or "laplace"
    mcmc: McmcConfig = field(default_factory=lambda: McmcConfig(
        n_particles=512, burn_in=80, mode="iterative"
    ))
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(
        kind="random_search", n_candidates=50
    ))
    n_queries: int = 10
    slate_size: int = 5
    n_users: int = 10
    n_seeds: int = 5
    cav_uncertainty: str = "off"  # "modeled" | "mismodeled"
    uncertainty_sigma_lo: float = 0.01
    uncertainty_sigma_hi: float = 1.0
    stop_evoi_below: float | None = None  # optional early stop; untuned
    n_cav_samples: int = 64  # frozen draws per entry for uncertain semantics
    seed: int = 0

    def __post_init__(self):
        if self.env_kind not in ("synthetic", "recsim"):
            raise HarnessError(f"unknown environment {self.env_kind!r}")
        if self.cav_uncertainty not in ("off", "modeled", "mismodeled"):
            raise HarnessError(f"unknown cav_uncertainty {self.cav_uncertainty!r}")
        if self.n_queries < 0 or self.n_users < 1 or self.n_seeds < 1:
            raise HarnessError("n_queries, n_users, n_seeds must be positive")

    def env_config(self):
        return self.synthetic if self.env_kind == "synthetic" else self.recsim

    def response_model(self) -> ResponseModelConfig:
        env = self.env_config()
        return ResponseModelConfig(
            attribute_model=self.attribute_model,
            temperature=env.temperature,
            n_cav_samples=self.n_cav_samples,
            cav_seed=derive_seed(self.seed, "cav-marginal"),
        )

    def optimizer_config(self) -> OptimizerConfig:
        return replace(self.optimizer, query_type=self.query_type, slate_size=self.slate_size)


def config_to_json(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def config_from_json(obj: dict) -> ExperimentConfig:
    obj = dict(obj)
    for key, cls in (
        ("synthetic", SyntheticEnvConfig),
        ("recsim", RecsimEnvConfig),
        ("mcmc", McmcConfig),
        ("acquisition", AcquisitionConfig),
    ):
        if key in obj and isinstance(obj[key], dict):
            obj[key] = cls(**obj[key])
    if "optimizer" in obj and isinstance(obj["optimizer"], dict):
        opt = dict(obj["optimizer"])
        if isinstance(opt.get("relaxation"), dict):
            from .optimizer import RelaxationConfig

            opt["relaxation"] = RelaxationConfig(**opt["relaxation"])
        obj["optimizer"] = OptimizerConfig(**opt)
    return ExperimentConfig(**obj)


def config_hash(cfg: ExperimentConfig) -> str:
    return format(stable_key_hash(config_to_json(cfg)), "016x")


def build_environment(cfg: ExperimentConfig) -> Environment:
    if cfg.env_kind == "synthetic":
        return gen_synthetic_env(cfg.synthetic)
    return gen_recsim_env(cfg.recsim)


def build_semantics(
    env: Environment, cfg: ExperimentConfig
) -> tuple[Semantics, dict[str, CavBelief] | None]:
    """RS-side semantics and, when uncertainty is on, the belief suite the
    simulated user's true concept vectors are drawn from.

    The suite depends only on the experiment seed so that the modeled and
    mismodeled variants face identical ground truth."""
    if cfg.cav_uncertainty == "off":
        return {c.tag_id: c for c in env.cavs}, None
    suite = make_uncertainty_suite(
        list(env.cavs),
        cfg.uncertainty_sigma_lo,
        cfg.uncertainty_sigma_hi,
        derive_rng(cfg.seed, "uncertainty-suite"),
    )
    by_tag = {b.tag_id: b for b in suite}
    if cfg.cav_uncertainty == "modeled":
        return dict(by_tag), by_tag
    rs = {
        tag: Cav(tag, belief.mean.copy(), noise_sigma=belief.noise_sigma)
        for tag, belief in by_tag.items()
    }
    return rs, by_tag


# ---------------------------------------------------------------------------
# sessions


@dataclass(frozen=True)
class TraceEntry:
    query: Query
    response: Response
    cosine: float
    ndcg: float
    query_ndcg: float
    wall_time: float


@dataclass(frozen=True)
class RunRecord:
    user_index: int
    seed_index: int
    session_seed: int
    prior_cosine: float
    prior_ndcg: float
    trace: tuple[TraceEntry, ...]
    config_hash: str

    def to_json(self, include_timings: bool = False) -> dict:
        entries = []
        for e in self.trace:
            row = {
                "query": query_to_json(e.query),
                "response": response_to_json(e.response),
                "cosine": e.cosine,
                "ndcg": e.ndcg,
                "query_ndcg": e.query_ndcg,
            }
            if include_timings:
                row["wall_time"] = e.wall_time
            entries.append(row)
        return {
            "user_index": self.user_index,
            "seed_index": self.seed_index,
            "session_seed": self.session_seed,
            "prior_cosine": self.prior_cosine,
            "prior_ndcg": self.prior_ndcg,
            "trace": entries,
            "config_hash": self.config_hash,
        }


def _true_cav_vector(
    tag: str,
    env_cavs: dict[str, Cav],
    user_suite: dict[str, CavBelief] | None,
    session_seed: int,
) -> np.ndarray:
    """The concept vector powering the simulated user's responses: a fixed
    per-session draw from the belief suite when uncertainty is on, else the
    learned vector itself."""
    if user_suite is None:
        return env_cavs[tag].vector
    rng = derive_rng(session_seed, "true-cav", tag)
    return user_suite[tag].sample_many(rng, 1)[0]


def run_session(
    env: Environment,
    user_index: int,
    cfg: ExperimentConfig,
    session_seed: int,
    seed_index: int = 0,
) -> RunRecord:
    """One seeded elicitation session: select query, simulate the user's
    response, update the belief, record metrics."""
    prior, true_user = env.population[user_index]
    rs_semantics, user_suite = build_semantics(env, cfg)
    env_cavs = {c.tag_id: c for c in env.cavs}
    model_cfg = cfg.response_model()
    tracker = BeliefTracker(
        prior, rs_semantics, env.catalog,
        posterior=cfg.posterior, mcmc=cfg.mcmc, model_cfg=model_cfg,
        seed=derive_seed(session_seed, "belief"),
    )
    opt_cfg = cfg.optimizer_config()
    tags = env.tag_ids
    prior_cos = cosine_metric(tracker.belief, true_user)
    prior_ndcg = ndcg_metric(tracker.belief, true_user, env.catalog, cfg.slate_size)
    chash = config_hash(cfg)

    trace = []
    for k in range(cfg.n_queries):
        t0 = time.perf_counter()
        acq = replace(cfg.acquisition, rng_seed=derive_seed(session_seed, "acq", k))
        query = select_query(
            opt_cfg.kind, tracker.belief, rs_semantics, env.catalog, tags,
            opt_cfg, acq, derive_seed(session_seed, "opt", k), model_cfg,
        )
        if cfg.stop_evoi_below is not None:
            from .acquisition import evoi_af

            value = evoi_af(query, tracker.belief, rs_semantics, env.catalog, acq, model_cfg)
            if value < cfg.stop_evoi_below:
                break  # nothing informative left to ask; trace ends early
        cav_vec = None
        if cfg.query_type != "item":
            cav_vec = _true_cav_vector(query.tag, env_cavs, user_suite, session_seed)
        response = simulate_response(
            query, true_user, env.catalog, cav_vec,
            rng_seed=derive_rng(session_seed, "response", k),
            attribute_model=cfg.attribute_model,
        )
        belief = tracker.update(query, response)
        wall = time.perf_counter() - t0
        trace.append(
            TraceEntry(
                query=query,
                response=response,
                cosine=cosine_metric(belief, true_user),
                ndcg=ndcg_metric(belief, true_user, env.catalog, cfg.slate_size),
                query_ndcg=query_ndcg_metric(query.slate, true_user, env.catalog),
                wall_time=wall,
            )
        )
    return RunRecord(
        user_index=user_index,
        seed_index=seed_index,
        session_seed=session_seed,
        prior_cosine=prior_cos,
        prior_ndcg=prior_ndcg,
        trace=tuple(trace),
        config_hash=chash,
    )


def _session_task(args) -> RunRecord:
    env, cfg, user_index, seed_index = args
    session_seed = derive_seed(cfg.seed, "session", user_index, seed_index)
    try:
        return run_session(env, user_index, cfg, session_seed, seed_index)
    except Exception as exc:
        raise HarnessError(
            f"session failed for user {user_index}, seed index {seed_index}: {exc}"
        ) from exc


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    runs: tuple[RunRecord, ...]

    def metric_matrix(self, name: str) -> np.ndarray:
        """(n_runs, n_queries+1) metric values; column 0 is the prior state
        (query_ndcg has no prior column and is (n_runs, n_queries))."""
        if name == "query_ndcg":
            return np.array([[e.query_ndcg for e in r.trace] for r in self.runs])
        rows = []
        for r in self.runs:
            prior = r.prior_cosine if name == "cosine" else r.prior_ndcg
            rows.append([prior] + [getattr(e, name) for e in r.trace])
        return np.array(rows)


def select_users(env: Environment, cfg: ExperimentConfig) -> list[int]:
    n_pop = len(env.population)
    if cfg.n_users > n_pop:
        raise HarnessError("n_users exceeds the environment population")
    rng = derive_rng(cfg.seed, "users")
    return sorted(int(i) for i in rng.choice(n_pop, size=cfg.n_users, replace=False))


def run_experiment(
    cfg: ExperimentConfig,
    env: Environment | None = None,
    workers: int = 1,
    out_dir: str | Path | None = None,
) -> ExperimentReport:
    """All (user, seed) sessions for a config, optionally in parallel; merged
    deterministically in (user, seed) order and written to report files."""
    if env is None:
        env = build_environment(cfg)
    users = select_users(env, cfg)
    tasks = [
        (env, cfg, user_index, seed_index)
        for user_index in users
        for seed_index in range(cfg.n_seeds)
    ]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_session_task, tasks))
    else:
        runs = [_session_task(t) for t in tasks]
    runs.sort(key=lambda r: (r.user_index, r.seed_index))
    report = ExperimentReport(config=cfg, runs=tuple(runs))
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def write_report(report: ExperimentReport, out_dir: str | Path) -> None:
    """Emit traces.json and aggregate.csv (deterministic bytes for a given
    config and seed) plus timings.csv (wall-clock, excluded from the
    reproducibility contract)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    payload = {
        "config": config_to_json(report.config),
        "config_hash": config_hash(report.config),
        "runs": [r.to_json() for r in report.runs],
    }
    with (out / "traces.json").open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")

    with (out / "aggregate.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["query", "cosine_mean", "cosine_std", "ndcg_mean", "ndcg_std",
             "query_ndcg_mean", "query_ndcg_std"]
        )
        cos = report.metric_matrix("cosine")
        ndcg = report.metric_matrix("ndcg")
        qndcg = report.metric_matrix("query_ndcg")
        for k in range(cos.shape[1]):
            row = [k, repr(float(cos[:, k].mean())), repr(float(cos[:, k].std())),
                   repr(float(ndcg[:, k].mean())), repr(float(ndcg[:, k].std()))]
            if k == 0:
                row += ["", ""]
            else:
                row += [repr(float(qndcg[:, k - 1].mean())), repr(float(qndcg[:, k - 1].std()))]
            writer.writerow(row)

    with (out / "timings.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_index", "seed_index", "query", "wall_time"])
        for r in report.runs:
            for k, e in enumerate(r.trace):
                writer.writerow([r.user_index, r.seed_index, k + 1, f"{e.wall_time:.6f}"])


def reaggregate(traces_path: str | Path, out_dir: str | Path) -> ExperimentReport:
    """Rebuild aggregate files from a traces.json (the ``report`` command)."""
    from .response import query_from_json

    with Path(traces_path).open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    cfg = config_from_json(payload["config"])
    runs = []
    for rj in payload["runs"]:
        entries = []
        for e in rj["trace"]:
            query = query_from_json(e["query"])
            from .response import response_from_json

            entries.append(
                TraceEntry(
                    query=query,
                    response=response_from_json(e["response"], query),
                    cosine=e["cosine"],
                    ndcg=e["ndcg"],
                    query_ndcg=e["query_ndcg"],
                    wall_time=e.get("wall_time", 0.0),
                )
            )
        runs.append(
            RunRecord(
                user_index=rj["user_index"],
                seed_index=rj["seed_index"],
                session_seed=rj["session_seed"],
                prior_cosine=rj["prior_cosine"],
                prior_ndcg=rj["prior_ndcg"],
                trace=tuple(entries),
                config_hash=rj["config_hash"],
            )
        )
    report = ExperimentReport(config=cfg, runs=tuple(runs))
    write_report(report, out_dir)
    return report
