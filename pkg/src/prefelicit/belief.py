"""Belief over the user's utility vector: exact log-posterior and gradients,
ensemble MCMC (random-walk Metropolis and Hamiltonian), and a Laplace
approximation.

The unnormalized log-posterior is the Gaussian prior quadratic form plus the
sum of per-entry response log-likelihoods (responses conditionally
independent given the utility vector). Likelihoods for tags carrying a
concept belief are Monte Carlo marginals over a frozen, content-keyed draw
set per history entry, so the target density is a fixed function across
sampler steps and is invariant to history reordering.

All densities and gradients are evaluated on (n, d) batches of utility
vectors; the public scalar API wraps the batch path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catalog import GaussianUserPrior, ItemCatalog
from .cav import Cav
from .response import (
    AttributeQuery,
    ChoiceDirectionResponse,
    ChoiceResponse,
    DirectionResponse,
    History,
    ItemQuery,
    IpaQuery,
    Query,
    Response,
    ResponseModelConfig,
    Semantics,
    _weights_array,
    entry_key,
    frozen_cav_draws,
)
from .util import (
    LOG_SQRT_2PI,
    derive_rng,
    derive_seed,
    inv_mills,
    log_probit,
    logsumexp,
    mahalanobis_sq,
    solve_cov,
)


class BeliefError(ValueError):
    pass


class McmcDivergenceError(BeliefError):
    pass


@dataclass(frozen=True)
class ParticleBelief:
    """Categorical posterior over utility vectors: particles plus log-weights
    normalized so logsumexp(log_weights) == 0."""

    particles: np.ndarray  # (n, d)
    log_weights: np.ndarray  # (n,)
    provenance: tuple = ()

    def __post_init__(self):
        particles = np.asarray(self.particles, dtype=np.float64)
        lw = np.asarray(self.log_weights, dtype=np.float64)
        if particles.ndim != 2 or particles.shape[0] < 1:
            raise BeliefError("particles must be a non-empty (n, d) array")
        if lw.shape != (particles.shape[0],):
            raise BeliefError("log_weights must match the particle count")
        total = logsumexp(lw)
        if abs(float(np.exp(total)) - 1.0) > 1e-9:
            raise BeliefError("log_weights must normalize to 1")
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def uniform(cls, particles: np.ndarray, provenance: tuple = ()) -> "ParticleBelief":
        n = particles.shape[0]
        return cls(particles, np.full(n, -math.log(n)), provenance)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def reweight(self, log_lik: np.ndarray) -> "ParticleBelief":
        lw = self.log_weights + np.asarray(log_lik, dtype=np.float64)
        return ParticleBelief(self.particles, lw - logsumexp(lw), self.provenance)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(self.particles.shape[0], size=n, p=self.weights)
        return self.particles[idx]


@dataclass(frozen=True)
class LaplaceBelief:
    """Gaussian posterior: mean at the found log-posterior mode, prior scale
    retained as a conservative covariance."""

    mean: np.ndarray
    scale: np.ndarray
    converged: bool = True

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        eps = rng.standard_normal((n, self.mean.shape[0]))
        return self.mean + eps @ self.scale


UserBelief = ParticleBelief | LaplaceBelief | GaussianUserPrior


@dataclass(frozen=True)
class McmcConfig:
    sampler: str = "metropolis_hastings"  # or "hamiltonian"
    n_particles: int = 1000
    burn_in: int = 500
    step_size: float | None = None  # None: 0.1 * mean prior scale diagonal (MH), 0.05 (HMC)
    leapfrog_steps: int = 10
    mode: str = "batch"  # or "iterative"
    iterative_rounds: int | None = None  # None: one round per history entry
    adapt_step: bool = False  # per-round walk step from the ensemble spread

    def __post_init__(self):
        if self.sampler not in ("metropolis_hastings", "hamiltonian"):
            raise BeliefError(f"unknown sampler {self.sampler!r}")
        if self.mode not in ("batch", "iterative"):
            raise BeliefError(f"unknown mode {self.mode!r}")
        if self.n_particles < 1 or self.burn_in < 0 or self.leapfrog_steps < 1:
            raise BeliefError("counts must be positive")
        if self.step_size is not None and self.step_size <= 0:
            raise BeliefError("step_size must be positive")


@dataclass(frozen=True)
class LaplaceConfig:
    max_iters: int = 500
    tol: float = 1e-5


# ---------------------------------------------------------------------------
# compiled history entries


def _target_dot_grads(phi: np.ndarray, vectors: np.ndarray, max_norm: float) -> np.ndarray:
    """d/dphi [v^T target(phi)] for each particle row and direction vector.

    phi: (n, d); vectors: (S, d) -> (n, S, d).
    """
    r = np.linalg.norm(phi, axis=1)
    if np.any(r == 0):
        raise BeliefError("gradient undefined at the zero utility vector")
    dots = phi @ vectors.T  # (n, S)
    return max_norm * (
        vectors[None, :, :] / r[:, None, None]
        - dots[:, :, None] * phi[:, None, :] / (r ** 3)[:, None, None]
    )


class _CompiledEntry:
    """One history entry with its slate embeddings, frozen CAV draws, and
    response bound; exposes batched loglik/grad."""

    def __init__(
        self,
        query: Query,
        response: Response,
        semantics: Semantics,
        catalog: ItemCatalog,
        cfg: ResponseModelConfig,
    ):
        self.query = query
        self.response = response
        self.slate_emb = catalog.slate_embeddings(query.slate)
        self.max_norm = catalog.max_norm
        self.temperature = cfg.temperature
        self.model = cfg.attribute_model
        self.kind = (
            "item" if isinstance(query, ItemQuery)
            else "attribute" if isinstance(query, AttributeQuery)
            else "ipa"
        )
        if self.kind == "item":
            assert isinstance(response, ChoiceResponse)
            self.choice_idx = query.slate.index(response.item)
            self.direction = 0
            self.cav_vectors = None
            self.sigma = 1.0
        else:
            entry = semantics.get(query.tag)
            if entry is None:
                raise BeliefError(f"unknown tag {query.tag!r} in history")
            if isinstance(entry, Cav):
                self.cav_vectors = entry.vector[None, :]
            else:
                self.cav_vectors = frozen_cav_draws(
                    entry, cfg, "entry", entry_key(query, response)
                )
            self.sigma = entry.noise_sigma
            if self.kind == "attribute":
                assert isinstance(response, DirectionResponse)
                self.choice_idx = -1
                self.direction = response.direction
                if self.model == "mean_prob":
                    self.weights = _weights_array(cfg.weights, self.slate_emb.shape[0])
            else:
                assert isinstance(response, ChoiceDirectionResponse)
                self.choice_idx = query.slate.index(response.item)
                self.direction = response.direction

    # -- attribute helpers ---------------------------------------------------

    def _attr_ref(self) -> np.ndarray:
        """Comparison embedding: slate mean, or the chosen item for critiques."""
        if self.kind == "ipa":
            return self.slate_emb[self.choice_idx]
        return self.slate_emb.mean(axis=0)

    def _margins(self, ctx: "_EvalContext") -> np.ndarray:
        """Signed probit arguments, (n, S) mean-slate/critique or (n, S, k)."""
        targets = ctx.targets(self.max_norm)
        v = self.cav_vectors  # (S, d)
        scaled = (self.direction / self.sigma) * v  # fold sign and noise in
        if self.kind == "attribute" and self.model == "mean_prob":
            base = targets @ scaled.T  # (n, S)
            offsets = self.slate_emb @ scaled.T  # (k, S)
            return base[:, :, None] - offsets.T[None, :, :]  # (n, S, k)
        return (targets - self._attr_ref()) @ scaled.T  # (n, S)

    def _attr_loglik(self, ctx: "_EvalContext") -> np.ndarray:
        m = self._margins(ctx)
        if m.ndim == 3:  # mean_prob: mixture over slate items per draw
            per_draw = logsumexp(np.log(self.weights)[None, None, :] + log_probit(m), axis=2)
        else:
            per_draw = log_probit(m)  # (n, S)
        if per_draw.shape[1] == 1:
            return per_draw[:, 0]
        return logsumexp(per_draw, axis=1) - math.log(per_draw.shape[1])

    def _attr_grad(self, ctx: "_EvalContext") -> np.ndarray:
        m = self._margins(ctx)
        v = self.cav_vectors
        coeff = self.direction / self.sigma
        if m.ndim == 3:
            log_num = logsumexp(
                np.log(self.weights)[None, None, :] + (-0.5 * m * m - LOG_SQRT_2PI), axis=2
            )
            log_den = logsumexp(np.log(self.weights)[None, None, :] + log_probit(m), axis=2)
            ratio = np.exp(log_num - log_den)  # (n, S)
            per_draw_ll = log_den
        else:
            ratio = inv_mills(m)  # (n, S)
            per_draw_ll = log_probit(m)
        if per_draw_ll.shape[1] == 1:
            scaled = (coeff * ratio[:, 0])[:, None]  # (n, 1)
            return scaled * ctx.target_dot_grad(v[0], self.max_norm)
        draw_w = np.exp(per_draw_ll - logsumexp(per_draw_ll, axis=1)[:, None])  # (n, S)
        dtarget = _target_dot_grads(ctx.phi, v, self.max_norm)  # (n, S, d)
        return np.einsum("ns,nsd->nd", draw_w * ratio * coeff, dtarget)

    # -- item helpers ----------------------------------------------------------

    def _item_logits(self, ctx: "_EvalContext") -> np.ndarray:
        return ctx.phi @ (self.slate_emb.T / self.temperature)  # (n, k)

    def _item_loglik(self, ctx: "_EvalContext") -> np.ndarray:
        logits = self._item_logits(ctx)
        return logits[:, self.choice_idx] - logsumexp(logits, axis=1)

    def _item_grad(self, ctx: "_EvalContext") -> np.ndarray:
        logits = self._item_logits(ctx)
        p = np.exp(logits - logsumexp(logits, axis=1)[:, None])
        return (self.slate_emb[self.choice_idx][None, :] - p @ self.slate_emb) / self.temperature

    # -- public ----------------------------------------------------------------

    def loglik(self, ctx: "_EvalContext") -> np.ndarray:
        if self.kind == "item":
            return self._item_loglik(ctx)
        if self.kind == "attribute":
            return self._attr_loglik(ctx)
        return self._item_loglik(ctx) + self._attr_loglik(ctx)

    def grad(self, ctx: "_EvalContext") -> np.ndarray:
        if self.kind == "item":
            return self._item_grad(ctx)
        if self.kind == "attribute":
            return self._attr_grad(ctx)
        return self._item_grad(ctx) + self._attr_grad(ctx)


class _EvalContext:
    """Per-batch cache of quantities shared across history entries."""

    def __init__(self, phi: np.ndarray, needs_target: bool):
        self.phi = phi
        self._norms: np.ndarray | None = None
        self._targets: np.ndarray | None = None
        if needs_target:
            self._norms = np.linalg.norm(phi, axis=1)
            if np.any(self._norms == 0):
                raise BeliefError("target undefined at the zero utility vector")

    def norms(self) -> np.ndarray:
        return self._norms

    def targets(self, max_norm: float) -> np.ndarray:
        if self._targets is None:
            self._targets = (max_norm / self._norms)[:, None] * self.phi
        return self._targets

    def target_dot_grad(self, v: np.ndarray, max_norm: float) -> np.ndarray:
        """d/dphi [v^T target(phi)] for one direction vector, (n, d)."""
        r = self._norms
        dots = self.phi @ v  # (n,)
        return (max_norm / r)[:, None] * v[None, :] - (
            max_norm * dots / r**3
        )[:, None] * self.phi


class PosteriorDensity:
    """Fixed unnormalized target density for a (prior, history) pair."""

    def __init__(
        self,
        prior: GaussianUserPrior,
        history: History,
        semantics: Semantics,
        catalog: ItemCatalog,
        cfg: ResponseModelConfig,
    ):
        self.prior = prior
        self.cov_inv = np.linalg.inv(prior.scale.T @ prior.scale)
        self.entries = [
            _CompiledEntry(q, r, semantics, catalog, cfg) for q, r in history.entries
        ]
        self.needs_target = any(e.kind != "item" for e in self.entries)

    def log_density(self, phi: np.ndarray) -> np.ndarray:
        phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
        ctx = _EvalContext(phi, self.needs_target)
        resid = phi - self.prior.mean
        out = -0.5 * np.einsum("nd,dc,nc->n", resid, self.cov_inv, resid)
        for entry in self.entries:
            out = out + entry.loglik(ctx)
        return out

    def grad(self, phi: np.ndarray) -> np.ndarray:
        phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
        ctx = _EvalContext(phi, self.needs_target)
        out = -(phi - self.prior.mean) @ self.cov_inv
        for entry in self.entries:
            out = out + entry.grad(ctx)
        return out


def log_unnormalized_posterior(
    phi: np.ndarray,
    prior: GaussianUserPrior,
    history: History,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: ResponseModelConfig = ResponseModelConfig(),
) -> float:
    """Log prior (up to its normalizing constant) plus summed response
    log-likelihoods at one utility vector."""
    density = PosteriorDensity(prior, history, semantics, catalog, cfg)
    return float(density.log_density(np.asarray(phi, dtype=np.float64))[0])


def grad_log_posterior(
    phi: np.ndarray,
    prior: GaussianUserPrior,
    history: History,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: ResponseModelConfig = ResponseModelConfig(),
) -> np.ndarray:
    """Closed-form gradient of the unnormalized log-posterior."""
    phi = np.asarray(phi, dtype=np.float64)
    if np.linalg.norm(phi) == 0 and any(
        not isinstance(q, ItemQuery) for q, _ in history.entries
    ):
        raise BeliefError("gradient undefined at the zero utility vector")
    density = PosteriorDensity(prior, history, semantics, catalog, cfg)
    return density.grad(phi)[0]


# ---------------------------------------------------------------------------
# samplers


def _mh_sweep(
    density: PosteriorDensity,
    states: np.ndarray,
    logp: np.ndarray,
    steps: int,
    step_size: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    n, d = states.shape
    for _ in range(steps):
        proposal = states + step_size * rng.standard_normal((n, d))
        logp_prop = density.log_density(proposal)
        accept = np.log(rng.random(n)) < (logp_prop - logp)
        states = np.where(accept[:, None], proposal, states)
        logp = np.where(accept, logp_prop, logp)
    return states, logp


def _leapfrog(
    density: PosteriorDensity, q0: np.ndarray, p0: np.ndarray, eps: float, leapfrog: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = q0.copy()
    p = p0 + 0.5 * eps * density.grad(q)
    for step in range(leapfrog):
        q = q + eps * p
        if step < leapfrog - 1:
            p = p + eps * density.grad(q)
    p = p + 0.5 * eps * density.grad(q)
    logp = density.log_density(q)
    energy = -logp + 0.5 * np.sum(p * p, axis=1)
    return q, logp, energy


def _hmc_sweep(
    density: PosteriorDensity,
    states: np.ndarray,
    logp: np.ndarray,
    steps: int,
    step_size: float,
    leapfrog: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, int]:
    n, d = states.shape
    divergences = 0
    for _ in range(steps):
        p0 = rng.standard_normal((n, d))
        q, logp_prop, h1 = _leapfrog(density, states, p0, step_size, leapfrog)
        h0 = -logp + 0.5 * np.sum(p0 * p0, axis=1)
        finite = np.isfinite(h1)
        divergences += int(np.sum(~finite))
        with np.errstate(invalid="ignore"):
            accept = finite & (np.log(rng.random(n)) < (h0 - h1))
        states = np.where(accept[:, None], q, states)
        logp = np.where(accept, logp_prop, logp)
    return states, logp, divergences


def _default_step(cfg: McmcConfig, prior: GaussianUserPrior) -> float:
    if cfg.step_size is not None:
        return cfg.step_size
    if cfg.sampler == "hamiltonian":
        return 0.05
    return 0.1 * float(np.mean(np.diag(prior.scale)))


def _round_step(cfg: McmcConfig, states: np.ndarray, base: float) -> float:
    """Walk step for one round: fixed within the round, so the kernel stays
    exact; optionally scaled to the warm-start ensemble's spread (the
    posterior narrows as history grows and a prior-sized step would stall)."""
    if not cfg.adapt_step:
        return base
    d = states.shape[1]
    spread = float(np.mean(np.std(states, axis=0)))
    if spread <= 0:
        return base
    return 2.4 / math.sqrt(d) * spread


def _run_sweep(
    density: PosteriorDensity,
    states: np.ndarray,
    steps: int,
    cfg: McmcConfig,
    step_size: float,
    prior_scale: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One burn-in sweep over all chains.

    The Hamiltonian sampler spends the first fifth of the budget on
    gradient-free random-walk moves: probit likelihoods form steep walls (and
    the target-item field is singular at the origin) where leapfrog
    trajectories diverge, and walk moves pull stranded chains into the
    typical set first.
    """
    logp = density.log_density(states)
    if cfg.sampler == "metropolis_hastings":
        out, _ = _mh_sweep(density, states, logp, steps, step_size, rng)
        return out
    # Random-walk warmup for half the budget: response likelihoods that act on
    # the normalized utility direction can leave metastable pockets that
    # continuous trajectories cannot exit (the flow would have to cross the
    # origin), while walk moves hop them; the Hamiltonian sweeps then mix
    # locally within the typical set.
    warmup = min(steps, max(10, steps // 2))
    d = states.shape[1]
    walk_step = 2.4 / math.sqrt(d) * float(np.mean(np.diag(prior_scale)))
    warm_states, warm_logp = _mh_sweep(density, states, logp, warmup, walk_step, rng)
    # a whole-run step halving keeps each attempt's kernel exact; divergences
    # are rare once the warmup has pulled chains into the typical set
    eps = step_size
    for attempt in range(6):
        sweep_rng = np.random.default_rng(rng.integers(2**63))
        out, _, divergences = _hmc_sweep(
            density, warm_states, warm_logp, max(steps - warmup, 0), eps,
            cfg.leapfrog_steps, sweep_rng,
        )
        if divergences == 0:
            return out
        eps *= 0.5
    raise McmcDivergenceError(
        f"divergent trajectories persisted after 5 step-size halvings (step {eps:.3e})"
    )


def mcmc_posterior(
    prior: GaussianUserPrior,
    history: History,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: McmcConfig,
    rng_seed: int,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
    init_particles: np.ndarray | None = None,
) -> ParticleBelief:
    """Sample the posterior with an ensemble of parallel chains.

    Batch mode starts every chain at a prior draw and targets the full
    history. Iterative mode sweeps over growing history prefixes, each round
    re-seeding its chains from the previous round's particle set, so the
    final round targets the same density as batch mode.

    ``init_particles`` warm-starts the first round (used by the session loop,
    where each new response triggers exactly one additional round).
    """
    step = _default_step(cfg, prior)
    init_rng = derive_rng(rng_seed, "init")
    if init_particles is not None:
        states = np.array(init_particles, dtype=np.float64, copy=True)
        if states.shape != (cfg.n_particles, prior.dim):
            raise BeliefError("init_particles shape must be (n_particles, d)")
    else:
        states = prior.sample(init_rng, cfg.n_particles)

    if cfg.mode == "batch":
        density = PosteriorDensity(prior, history, semantics, catalog, model_cfg)
        rng = derive_rng(rng_seed, "round", 0)
        states = _run_sweep(
            density, states, cfg.burn_in, cfg, _round_step(cfg, states, step),
            prior.scale, rng,
        )
    else:
        k = len(history)
        rounds = cfg.iterative_rounds if cfg.iterative_rounds is not None else max(k, 1)
        for r in range(rounds):
            prefix = math.ceil(k * (r + 1) / rounds) if k else 0
            density = PosteriorDensity(
                prior, History(history.entries[:prefix]), semantics, catalog, model_cfg
            )
            rng = derive_rng(rng_seed, "round", r)
            states = _run_sweep(
                density, states, cfg.burn_in, cfg, _round_step(cfg, states, step),
                prior.scale, rng,
            )

    provenance = ("mcmc", cfg.sampler, cfg.mode, int(rng_seed), len(history))
    return ParticleBelief.uniform(states, provenance)


def iterative_update(
    belief: ParticleBelief,
    prior: GaussianUserPrior,
    history: History,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: McmcConfig,
    rng_seed: int,
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> ParticleBelief:
    """One iterative round for the newest history entry, warm-started from the
    current particles. Bit-identical to the corresponding round of a full
    iterative ``mcmc_posterior`` run with the same seed."""
    k = len(history)
    density = PosteriorDensity(prior, history, semantics, catalog, model_cfg)
    rng = derive_rng(rng_seed, "round", k - 1 if k else 0)
    step = _round_step(cfg, belief.particles, _default_step(cfg, prior))
    states = _run_sweep(density, belief.particles.copy(), cfg.burn_in, cfg, step, prior.scale, rng)
    provenance = ("mcmc", cfg.sampler, "iterative", int(rng_seed), k)
    return ParticleBelief.uniform(states, provenance)


def laplace_posterior(
    prior: GaussianUserPrior,
    history: History,
    semantics: Semantics,
    catalog: ItemCatalog,
    cfg: LaplaceConfig = LaplaceConfig(),
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
) -> LaplaceBelief:
    """Gaussian posterior with mean at the log-posterior mode.

    Gradient ascent with backtracking from the prior mean; the covariance is
    kept at the prior's (conservative; no curvature re-estimate). On
    non-convergence the best iterate is returned with ``converged=False``.
    """
    density = PosteriorDensity(prior, history, semantics, catalog, model_cfg)
    x = prior.mean.copy()
    has_target = any(e.kind != "item" for e in density.entries)
    if has_target and np.linalg.norm(x) == 0:
        x = x.copy()
        x[0] = 1e-8  # mode search needs a defined target direction
    f = float(density.log_density(x)[0])
    step = 1.0
    converged = False
    for _ in range(cfg.max_iters):
        g = density.grad(x)[0]
        gnorm2 = float(g @ g)
        if math.sqrt(gnorm2) <= cfg.tol:
            converged = True
            break
        step = min(step * 2.0, 1e6)
        while True:
            x_new = x + step * g
            try:
                f_new = float(density.log_density(x_new)[0])
            except BeliefError:
                f_new = -np.inf
            if f_new >= f + 0.5 * step * gnorm2 or step < 1e-18:
                break
            step *= 0.5
        if step < 1e-18:
            break
        x, f = x_new, f_new
    return LaplaceBelief(mean=x, scale=prior.scale.copy(), converged=converged)


class BeliefTracker:
    """Incrementally maintained belief over a growing history.

    The particle/iterative path performs one warm-started chain round per new
    entry; replaying the same (query, response) sequence with the same seed
    reproduces the belief bit-for-bit (the session service relies on this).
    """

    def __init__(
        self,
        prior: GaussianUserPrior,
        semantics: Semantics,
        catalog: ItemCatalog,
        posterior: str = "particle",
        mcmc: McmcConfig = McmcConfig(),
        model_cfg: ResponseModelConfig = ResponseModelConfig(),
        seed: int = 0,
    ):
        if posterior not in ("particle", "laplace"):
            raise BeliefError(f"unknown posterior method {posterior!r}")
        self.prior = prior
        self.semantics = semantics
        self.catalog = catalog
        self.posterior = posterior
        self.mcmc = mcmc
        self.model_cfg = model_cfg
        self.seed = int(seed)
        self.history = History()
        if posterior == "particle":
            init = prior.sample(derive_rng(self.seed, "init"), mcmc.n_particles)
            self.belief: UserBelief = ParticleBelief.uniform(init, ("init", self.seed))
        else:
            self.belief = LaplaceBelief(mean=prior.mean.copy(), scale=prior.scale.copy())

    def update(self, query, response) -> UserBelief:
        self.history = self.history.append(query, response)
        if self.posterior == "laplace":
            self.belief = laplace_posterior(
                self.prior, self.history, self.semantics, self.catalog,
                model_cfg=self.model_cfg,
            )
        elif self.mcmc.mode == "iterative":
            self.belief = iterative_update(
                self.belief, self.prior, self.history, self.semantics, self.catalog,
                self.mcmc, self.seed, self.model_cfg,
            )
        else:
            self.belief = mcmc_posterior(
                self.prior, self.history, self.semantics, self.catalog, self.mcmc,
                derive_seed(self.seed, "batch", len(self.history)), self.model_cfg,
            )
        return self.belief


def replay_belief(
    prior: GaussianUserPrior,
    semantics: Semantics,
    catalog: ItemCatalog,
    entries: list,
    posterior: str = "particle",
    mcmc: McmcConfig = McmcConfig(),
    model_cfg: ResponseModelConfig = ResponseModelConfig(),
    seed: int = 0,
) -> UserBelief:
    """Recompute the belief a tracker would hold after the given entries."""
    tracker = BeliefTracker(prior, semantics, catalog, posterior, mcmc, model_cfg, seed)
    for query, response in entries:
        tracker.update(query, response)
    return tracker.belief


def posterior_mean(belief: UserBelief) -> np.ndarray:
    if isinstance(belief, ParticleBelief):
        return belief.weights @ belief.particles
    if isinstance(belief, (LaplaceBelief, GaussianUserPrior)):
        return np.asarray(belief.mean, dtype=np.float64)
    raise BeliefError(f"unknown belief type {type(belief).__name__}")


def belief_draws(belief: UserBelief, rng: np.random.Generator, n: int) -> np.ndarray:
    """n utility draws from any belief kind."""
    return belief.sample(rng, n)


def utility_support(
    belief: UserBelief, m: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted utility atoms representing the belief.

    Particle beliefs are used exactly (all particles with their weights);
    Gaussian beliefs contribute m equal-weight draws.
    """
    if isinstance(belief, ParticleBelief):
        return belief.particles, belief.weights
    draws = belief.sample(rng, m)
    return draws, np.full(m, 1.0 / m)
