"""HTTP session service: a human plays the simulated user's role.

State machine per session: (no pending) -> next query -> (pending) ->
submit response -> (no pending). Out-of-order calls are rejected without
mutating state. Sessions persist as append-only newline-JSON event logs and
are rebuilt by replay on restart, so a restarted server continues
deterministically.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .acquisition import AcquisitionConfig
from .belief import BeliefTracker, McmcConfig, ParticleBelief, posterior_mean
from .catalog import GaussianUserPrior, ItemCatalog, load_catalog, load_prior
from .cav import load_cav_beliefs, load_cavs
from .optimizer import OptimizerConfig, select_query
from .response import (
    ChoiceDirectionResponse,
    ChoiceResponse,
    Query,
    ResponseModelConfig,
    Semantics,
    query_to_json,
    response_from_json,
    response_to_json,
)
from .util import derive_seed, scale_from_cov


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class SessionState:
    session_id: str
    tracker: BeliefTracker
    query_type: str
    acquisition: AcquisitionConfig
    optimizer: OptimizerConfig
    seed: int
    created_at: float
    updated_at: float
    pending_query: Query | None = None
    query_count: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


def _error_response(exc: ServiceError) -> JSONResponse:
    return JSONResponse(
        status_code=exc.status, content={"error": exc.code, "message": exc.message}
    )


def _float_list(vec: np.ndarray) -> list[float]:
    return [float(x) for x in vec]


class SessionStore:
    """All live sessions plus their event logs."""

    def __init__(
        self,
        catalog: ItemCatalog,
        semantics: Semantics,
        default_prior: GaussianUserPrior,
        model_cfg: ResponseModelConfig,
        mcmc: McmcConfig,
        data_dir: Path | None,
        debug_truth: np.ndarray | None = None,
        dataset_name: str = "default",
    ):
        self.dataset_name = dataset_name
        self.catalog = catalog
        self.semantics = semantics
        self.default_prior = default_prior
        self.model_cfg = model_cfg
        self.mcmc = mcmc
        self.data_dir = data_dir
        self.debug_truth = debug_truth
        self.sessions: dict[str, SessionState] = {}
        self._create_lock = threading.Lock()

    # -- persistence --------------------------------------------------------

    def _log_path(self, session_id: str) -> Path | None:
        if self.data_dir is None:
            return None
        logs = self.data_dir / "sessions"
        logs.mkdir(parents=True, exist_ok=True)
        return logs / f"{session_id}.ndjson"

    def _append_event(self, session_id: str, event: dict) -> None:
        path = self._log_path(session_id)
        if path is None:
            return
        line = json.dumps(event, sort_keys=True)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def restore(self) -> int:
        """Rebuild sessions from event logs (idempotent replay)."""
        if self.data_dir is None:
            return 0
        logs = self.data_dir / "sessions"
        if not logs.exists():
            return 0
        count = 0
        for path in sorted(logs.glob("*.ndjson")):
            events = []
            with path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        events.append(json.loads(line))
            if not events or events[0].get("event") != "create":
                continue
            head = events[0]
            state = self._new_state(
                session_id=head["session_id"],
                query_type=head["query_type"],
                gamma=head["gamma"],
                af=head["af"],
                optimizer=head["optimizer"],
                seed=head["seed"],
                created_at=head["at"],
                persist=False,
            )
            for event in events[1:]:
                if event["event"] == "query":
                    state.pending_query = None
                    self._issue_query(state, persist=False)
                elif event["event"] == "response":
                    resp = response_from_json(event["response"], state.pending_query)
                    self._apply_response(state, resp, persist=False)
            self.sessions[state.session_id] = state
            count += 1
        return count

    # -- session operations --------------------------------------------------

    def _new_state(
        self,
        session_id: str,
        query_type: str,
        gamma: float,
        af: str,
        optimizer: str,
        seed: int,
        created_at: float,
        persist: bool,
    ) -> SessionState:
        if query_type not in ("item", "attribute", "ipa"):
            raise ServiceError(400, "invalid_config", f"unknown query_type {query_type!r}")
        try:
            acq = AcquisitionConfig(kind=af, gamma=gamma, rng_seed=seed)
            opt = OptimizerConfig(kind=optimizer, slate_size=5, n_candidates=50,
                                  query_type=query_type)
        except ValueError as exc:
            raise ServiceError(400, "invalid_config", str(exc)) from None
        tracker = BeliefTracker(
            self.default_prior, self.semantics, self.catalog,
            posterior="particle", mcmc=self.mcmc, model_cfg=self.model_cfg,
            seed=derive_seed(seed, "belief"),
        )
        state = SessionState(
            session_id=session_id, tracker=tracker, query_type=query_type,
            acquisition=acq, optimizer=opt, seed=seed,
            created_at=created_at, updated_at=created_at,
        )
        if persist:
            self._append_event(session_id, {
                "event": "create", "session_id": session_id, "at": created_at,
                "query_type": query_type, "gamma": gamma, "af": af,
                "optimizer": optimizer, "seed": seed,
            })
        return state

    def create_session(self, body: dict) -> SessionState:
        dataset = body.get("dataset")
        if dataset is not None and dataset != self.dataset_name:
            raise ServiceError(
                404, "not_found",
                f"unknown dataset {dataset!r}; available: [{self.dataset_name!r}]",
            )
        with self._create_lock:
            session_id = body.get("session_id") or uuid.uuid4().hex[:12]
            if session_id in self.sessions:
                raise ServiceError(409, "conflict", f"session {session_id!r} exists")
            state = self._new_state(
                session_id=session_id,
                query_type=body.get("query_type", "ipa"),
                gamma=float(body.get("gamma", 0.5)),
                af=body.get("af", "evoi"),
                optimizer=body.get("optimizer", "random_search"),
                seed=int(body.get("seed", 0)),
                created_at=time.time(),
                persist=True,
            )
            self.sessions[session_id] = state
            return state

    def get(self, session_id: str) -> SessionState:
        state = self.sessions.get(session_id)
        if state is None:
            raise ServiceError(404, "not_found", f"unknown session {session_id!r}")
        return state

    def _issue_query(self, state: SessionState, persist: bool = True) -> Query:
        if state.pending_query is not None:
            return state.pending_query
        k = state.query_count
        acq = replace(state.acquisition, rng_seed=derive_seed(state.seed, "acq", k))
        query = select_query(
            state.optimizer.kind, state.tracker.belief, self.semantics, self.catalog,
            sorted(self.semantics.keys()), state.optimizer, acq,
            derive_seed(state.seed, "opt", k), self.model_cfg,
        )
        state.pending_query = query
        state.query_count = k + 1
        state.updated_at = time.time()
        if persist:
            self._append_event(state.session_id, {
                "event": "query", "k": k, "query": query_to_json(query),
            })
        return query

    def _apply_response(self, state: SessionState, resp, persist: bool = True) -> None:
        query = state.pending_query
        if isinstance(resp, (ChoiceResponse, ChoiceDirectionResponse)):
            if resp.item not in query.slate:
                raise ServiceError(400, "invalid_response",
                                   f"choice {resp.item!r} not in the slate")
        if persist:
            self._append_event(state.session_id, {
                "event": "response", "response": response_to_json(resp),
            })
        state.tracker.update(query, resp)
        state.pending_query = None
        state.updated_at = time.time()

    # -- views ----------------------------------------------------------------

    def recommendations(self, state: SessionState, k: int = 5) -> list[dict]:
        mean = posterior_mean(state.tracker.belief)
        scores = self.catalog.embeddings @ mean
        order = sorted(
            range(len(scores)), key=lambda i: (-scores[i], self.catalog.item_ids[i])
        )[:k]
        return [
            {
                "item": self.catalog.item_ids[i],
                "score": float(scores[i]),
                "meta": self.catalog.meta[i] if self.catalog.meta else {},
            }
            for i in order
        ]

    def belief_summary(self, state: SessionState) -> dict:
        belief = state.tracker.belief
        mean = posterior_mean(belief)
        summary = {
            "kind": "particles" if isinstance(belief, ParticleBelief) else "gaussian",
            "mean": _float_list(mean),
            "n": int(belief.particles.shape[0]) if isinstance(belief, ParticleBelief) else 0,
        }
        if self.debug_truth is not None:
            nm, nt = np.linalg.norm(mean), np.linalg.norm(self.debug_truth)
            cos = 0.0 if nm == 0 or nt == 0 else float(mean @ self.debug_truth / (nm * nt))
            summary["cosine_to"] = cos
        return summary

    def render_query(self, query: Query) -> dict:
        body = query_to_json(query)
        body["items"] = [
            {"item": i, "meta": self.catalog.meta[self.catalog.index_of(i)]}
            for i in query.slate
        ]
        if body.get("tag"):
            body["prompt"] = f"more {body['tag']} or less {body['tag']}?"
        return body

    def snapshot(self, state: SessionState) -> dict:
        history = [
            {"query": query_to_json(q), "response": response_to_json(r)}
            for q, r in state.tracker.history.entries
        ]
        return {
            "session_id": state.session_id,
            "query_type": state.query_type,
            "history": history,
            "belief": self.belief_summary(state),
            "recommendations": self.recommendations(state),
            "pending_query": self.render_query(state.pending_query)
            if state.pending_query is not None
            else None,
        }


def default_store(
    data_dir: str | Path | None,
    mcmc: McmcConfig | None = None,
    model_cfg: ResponseModelConfig | None = None,
) -> SessionStore:
    """Build a store from a data directory holding catalog.ndjson plus
    cavs.ndjson or cav_beliefs.ndjson and optionally prior.json."""
    if data_dir is None:
        raise ServiceError(500, "config", "data_dir is required")
    data_dir = Path(data_dir)
    catalog = load_catalog(data_dir / "catalog.ndjson")
    semantics: Semantics = {}
    belief_path = data_dir / "cav_beliefs.ndjson"
    cav_path = data_dir / "cavs.ndjson"
    if belief_path.exists():
        for belief in load_cav_beliefs(belief_path):
            semantics[belief.tag_id] = belief
    elif cav_path.exists():
        for cav in load_cavs(cav_path):
            semantics[cav.tag_id] = cav
    else:
        raise ServiceError(500, "config", f"no CAV file found under {data_dir}")
    prior_path = data_dir / "prior.json"
    if prior_path.exists():
        prior = load_prior(prior_path)
    else:
        # cold start: mean embedding with an isotropic-ish spread
        mean = catalog.embeddings.mean(axis=0)
        cov = np.cov(catalog.embeddings.T) + 0.1 * np.eye(catalog.dim)
        prior = GaussianUserPrior(mean=mean, scale=scale_from_cov(cov))
    truth_path = data_dir / "debug_truth.json"
    debug_truth = None
    if truth_path.exists():
        with truth_path.open("r", encoding="utf-8") as fh:
            debug_truth = np.array(json.load(fh), dtype=np.float64)
    return SessionStore(
        catalog=catalog,
        semantics=semantics,
        default_prior=prior,
        model_cfg=model_cfg or ResponseModelConfig(),
        mcmc=mcmc or McmcConfig(n_particles=256, burn_in=60, mode="iterative"),
        data_dir=data_dir,
        debug_truth=debug_truth,
    )


def create_app(store: SessionStore, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="preference elicitation service")
    store.restore()

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return _error_response(exc)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(store.sessions)}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        try:
            body = await request.json()
        except Exception:
            body = {}
        state = store.create_session(body or {})
        return {
            "session_id": state.session_id,
            "recommendations": store.recommendations(state),
            "belief": store.belief_summary(state),
        }

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        state = store.get(session_id)
        with state.lock:
            return store.snapshot(state)

    @app.get("/sessions/{session_id}/query")
    def next_query(session_id: str):
        state = store.get(session_id)
        with state.lock:
            if state.pending_query is not None:
                # idempotent: repeat calls return the same body
                return {"query": store.render_query(state.pending_query),
                        "k": len(state.tracker.history) + 1}
            query = store._issue_query(state)
            return {"query": store.render_query(query),
                    "k": len(state.tracker.history) + 1}

    @app.post("/sessions/{session_id}/response")
    async def submit_response(session_id: str, request: Request):
        state = store.get(session_id)
        try:
            body = await request.json()
        except Exception:
            raise ServiceError(400, "invalid_response", "body must be JSON")
        with state.lock:
            if state.pending_query is None:
                raise ServiceError(409, "no_pending_query",
                                   "no unanswered query; call GET .../query first")
            before = posterior_mean(state.tracker.belief)
            try:
                resp = response_from_json(body or {}, state.pending_query)
            except ValueError as exc:
                raise ServiceError(400, "invalid_response", str(exc)) from None
            store._apply_response(state, resp)
            after = posterior_mean(state.tracker.belief)
            return {
                "belief": store.belief_summary(state),
                "recommendations": store.recommendations(state),
                "history_length": len(state.tracker.history),
                "mean_shift": float(np.linalg.norm(after - before)),
            }

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="static")
    return app


def serve(
    data_dir: str | Path,
    port: int | None = None,
    static_dir: str | Path | None = None,
) -> None:
    import uvicorn

    store = default_store(data_dir)
    app = create_app(store, static_dir=static_dir)
    uvicorn.run(app, host="0.0.0.0", port=port or int(os.environ.get("PORT", "8080")))
