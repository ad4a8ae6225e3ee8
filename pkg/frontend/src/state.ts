import type { ApiError, QueryBody, Recommendation, BeliefSummary, HistoryEntry } from "./types.js";

// Turn-based flow with exactly one in-flight request at a time. UI renders
// are a pure function of this state; every mutation re-fetches from the
// server rather than deriving belief math locally.

export type Phase =
  | "configuring"
  | "starting"
  | "fetching_query"
  | "answering"
  | "submitting"
  | "fatal";

export interface SessionView {
  phase: Phase;
  sessionId: string | null;
  query: QueryBody | null;
  selectedItem: string | null; // ipa: the picked item awaiting a direction
  recommendations: Recommendation[];
  belief: BeliefSummary | null;
  history: HistoryEntry[];
  banner: string | null; // transient, user-visible error text
  questionNumber: number;
}

export const initialState: SessionView = {
  phase: "configuring",
  sessionId: null,
  query: null,
  selectedItem: null,
  recommendations: [],
  belief: null,
  history: [],
  banner: null,
  questionNumber: 0,
};

export type Action =
  | { kind: "start" }
  | { kind: "session_created"; sessionId: string; recommendations: Recommendation[]; belief: BeliefSummary }
  | { kind: "query_requested" }
  | { kind: "query_received"; query: QueryBody; k: number }
  | { kind: "item_selected"; item: string }
  | { kind: "submit_started" }
  | { kind: "submit_succeeded"; recommendations: Recommendation[]; belief: BeliefSummary }
  | { kind: "history_refreshed"; history: HistoryEntry[] }
  | { kind: "request_failed"; error: ApiError; message: string }
  | { kind: "banner_cleared" };

export function reduce(state: SessionView, action: Action): SessionView {
  switch (action.kind) {
    case "start":
      return { ...initialState, phase: "starting" };
    case "session_created":
      return {
        ...state,
        phase: "fetching_query",
        sessionId: action.sessionId,
        recommendations: action.recommendations,
        belief: action.belief,
        banner: null,
      };
    case "query_requested":
      return { ...state, phase: "fetching_query", query: null, selectedItem: null };
    case "query_received":
      return {
        ...state,
        phase: "answering",
        query: action.query,
        selectedItem: null,
        questionNumber: action.k,
        banner: null,
      };
    case "item_selected": {
      if (state.phase !== "answering" || state.query === null) return state;
      if (!state.query.slate.includes(action.item)) return state;
      return { ...state, selectedItem: action.item };
    }
    case "submit_started":
      return { ...state, phase: "submitting", banner: null };
    case "submit_succeeded":
      return {
        ...state,
        phase: "fetching_query",
        query: null,
        selectedItem: null,
        recommendations: action.recommendations,
        belief: action.belief,
      };
    case "history_refreshed":
      return { ...state, history: action.history };
    case "request_failed": {
      // unknown session is unrecoverable; anything else keeps the turn open
      if (action.error.status === 404) {
        return { ...state, phase: "fatal", banner: action.message };
      }
      const phase = state.sessionId === null ? "configuring" : "answering";
      // a 409 on submit means the server already has this answer; the caller
      // follows up with a state refresh, so just surface the text
      return { ...state, phase: state.query ? phase : "fetching_query", banner: action.message };
    }
    case "banner_cleared":
      return { ...state, banner: null };
  }
}

export interface AnswerControls {
  clickableCards: boolean; // cards act as the answer (item) or selection (ipa)
  directionButtons: boolean; // more/less visible
  directionEnabled: boolean; // more/less currently actionable
  submitEnabled: boolean;
}

// Controls must match the query variant exactly: item queries never show
// direction buttons; attribute queries never make cards clickable; the
// combined query needs a picked card before more/less become actionable.
export function controlsFor(state: SessionView): AnswerControls {
  const busy = state.phase !== "answering";
  const q = state.query;
  if (busy || q === null) {
    return { clickableCards: false, directionButtons: q?.type !== "item" && q !== null, directionEnabled: false, submitEnabled: false };
  }
  switch (q.type) {
    case "item":
      return { clickableCards: true, directionButtons: false, directionEnabled: false, submitEnabled: true };
    case "attribute":
      return { clickableCards: false, directionButtons: true, directionEnabled: true, submitEnabled: true };
    case "ipa":
      return {
        clickableCards: true,
        directionButtons: true,
        directionEnabled: state.selectedItem !== null,
        submitEnabled: state.selectedItem !== null,
      };
  }
}

export function answerFor(
  state: SessionView,
  direction: number | null,
  clickedItem: string | null,
): { choice: string | null; direction: number | null } | null {
  const q = state.query;
  if (q === null || state.phase !== "answering") return null;
  if (q.type === "item") {
    return clickedItem === null ? null : { choice: clickedItem, direction: null };
  }
  if (q.type === "attribute") {
    return direction === null ? null : { choice: null, direction };
  }
  const choice = state.selectedItem;
  if (choice === null || direction === null) return null;
  return { choice, direction };
}
