import { ApiClient, errorMessage } from "./api.js";
import {
  Action,
  SessionView,
  answerFor,
  controlsFor,
  initialState,
  reduce,
} from "./state.js";
import type { ApiError, SessionConfig } from "./types.js";

const api = new ApiClient("");
let state: SessionView = initialState;

function dispatch(action: Action): void {
  state = reduce(state, action);
  render();
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function readConfig(): SessionConfig {
  return {
    query_type: (el<HTMLSelectElement>("cfg-query-type").value as SessionConfig["query_type"]) ?? "ipa",
    af: el<HTMLSelectElement>("cfg-af").value,
    optimizer: el<HTMLSelectElement>("cfg-optimizer").value,
    gamma: parseFloat(el<HTMLInputElement>("cfg-gamma").value),
    seed: parseInt(el<HTMLInputElement>("cfg-seed").value, 10) || 0,
  };
}

async function refreshHistory(): Promise<void> {
  if (state.sessionId === null) return;
  try {
    const snap = await api.getState(state.sessionId);
    dispatch({ kind: "history_refreshed", history: snap.history });
  } catch {
    // history is cosmetic; the next mutation will surface real errors
  }
}

async function fetchNextQuery(): Promise<void> {
  if (state.sessionId === null) return;
  dispatch({ kind: "query_requested" });
  try {
    const { query, k } = await api.nextQuery(state.sessionId);
    dispatch({ kind: "query_received", query, k });
  } catch (e) {
    failed(e as ApiError);
  }
}

function failed(err: ApiError): void {
  dispatch({ kind: "request_failed", error: err, message: errorMessage(err) });
}

async function start(): Promise<void> {
  dispatch({ kind: "start" });
  try {
    const created = await api.createSession(readConfig());
    dispatch({
      kind: "session_created",
      sessionId: created.session_id,
      recommendations: created.recommendations,
      belief: created.belief,
    });
    await fetchNextQuery();
  } catch (e) {
    failed(e as ApiError);
  }
}

async function submit(direction: number | null, clickedItem: string | null): Promise<void> {
  const body = answerFor(state, direction, clickedItem);
  if (body === null || state.sessionId === null) return;
  dispatch({ kind: "submit_started" });
  try {
    const result = await api.submitResponse(state.sessionId, body);
    dispatch({
      kind: "submit_succeeded",
      recommendations: result.recommendations,
      belief: result.belief,
    });
    await refreshHistory();
    await fetchNextQuery();
  } catch (e) {
    const err = e as ApiError;
    failed(err);
    if (err.status === 409) {
      // the server already counted an answer (double-click race): resync
      await refreshHistory();
      await fetchNextQuery();
    }
  }
}

function describeResponse(entry: { response: { choice: string | null; direction: number | null } }): string {
  const { choice, direction } = entry.response;
  const dir = direction === null ? "" : direction > 0 ? "more" : "less";
  if (choice !== null && direction !== null) return `${choice}, ${dir}`;
  if (choice !== null) return choice;
  return dir;
}

function render(): void {
  const controls = controlsFor(state);
  el("config-form").style.display = state.sessionId === null ? "block" : "none";
  el("session-panel").style.display = state.sessionId === null ? "none" : "block";

  const banner = el("banner");
  banner.textContent = state.banner ?? "";
  banner.style.display = state.banner ? "block" : "none";

  el("phase").textContent =
    state.phase === "submitting" || state.phase === "fetching_query"
      ? "working…"
      : state.phase === "fatal"
        ? "session ended"
        : "";

  const title = el("query-title");
  if (state.query !== null) {
    const n = state.questionNumber;
    title.textContent =
      state.query.type === "item"
        ? `Question ${n}: which of these do you prefer?`
        : state.query.type === "attribute"
          ? `Question ${n}: would you prefer ${state.query.prompt ?? "more or less of this?"}`
          : `Question ${n}: pick your favourite, then say ${state.query.prompt ?? "more or less?"}`;
  } else {
    title.textContent = state.phase === "fetching_query" ? "Selecting the next question…" : "";
  }

  const slate = el("slate");
  slate.innerHTML = "";
  for (const item of state.query?.items ?? []) {
    const card = document.createElement("button");
    card.className = "card";
    card.dataset.item = item.item;
    card.disabled = !controls.clickableCards;
    card.classList.toggle("selected", state.selectedItem === item.item);
    const metaText = Object.entries(item.meta ?? {})
      .map(([k, v]) => `${k}: ${v}`)
      .join(" · ");
    card.innerHTML = `<strong>${item.item}</strong>${metaText ? `<small>${metaText}</small>` : ""}`;
    card.addEventListener("click", () => {
      if (state.query?.type === "item") {
        void submit(null, item.item);
      } else {
        dispatch({ kind: "item_selected", item: item.item });
      }
    });
    slate.appendChild(card);
  }

  const dirRow = el("direction-row");
  dirRow.style.display = controls.directionButtons ? "flex" : "none";
  el<HTMLButtonElement>("btn-more").disabled = !controls.directionEnabled;
  el<HTMLButtonElement>("btn-less").disabled = !controls.directionEnabled;

  const recs = el("recommendations");
  recs.innerHTML = "";
  for (const [rank, rec] of state.recommendations.entries()) {
    const li = document.createElement("li");
    li.textContent = `${rank + 1}. ${rec.item} (${rec.score.toFixed(3)})`;
    recs.appendChild(li);
  }

  const belief = el("belief");
  if (state.belief) {
    const cos = state.belief.cosine_to;
    belief.textContent =
      `belief: ${state.belief.kind}, n=${state.belief.n}` +
      (cos !== undefined ? `, alignment ${cos.toFixed(3)}` : "");
  } else {
    belief.textContent = "";
  }

  const hist = el("history");
  hist.innerHTML = "";
  for (const [i, entry] of state.history.entries()) {
    const li = document.createElement("li");
    const tag = entry.query.tag ? ` [${entry.query.tag}]` : "";
    li.textContent = `Q${i + 1} (${entry.query.type}${tag}) → ${describeResponse(entry)}`;
    hist.appendChild(li);
  }
}

export function wire(): void {
  el("btn-start").addEventListener("click", () => void start());
  el("btn-more").addEventListener("click", () => void submit(1, null));
  el("btn-less").addEventListener("click", () => void submit(-1, null));
  render();
}

if (typeof document !== "undefined" && document.getElementById("btn-start") !== null) {
  wire();
}
