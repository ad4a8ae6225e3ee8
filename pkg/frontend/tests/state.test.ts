import { describe, expect, it } from "vitest";
import {
  answerFor,
  controlsFor,
  initialState,
  reduce,
  SessionView,
} from "../src/state.js";
import type { QueryBody } from "../src/types.js";

const itemQuery: QueryBody = {
  type: "item",
  slate: ["a", "b", "c"],
  tag: null,
  items: [{ item: "a", meta: {} }, { item: "b", meta: {} }, { item: "c", meta: {} }],
};
const attrQuery: QueryBody = { ...itemQuery, type: "attribute", tag: "funny" };
const ipaQuery: QueryBody = { ...itemQuery, type: "ipa", tag: "funny" };

function answering(query: QueryBody): SessionView {
  let s = reduce(initialState, { kind: "start" });
  s = reduce(s, {
    kind: "session_created",
    sessionId: "s1",
    recommendations: [],
    belief: { kind: "particles", mean: [0, 0], n: 10 },
  });
  return reduce(s, { kind: "query_received", query, k: 1 });
}

describe("session state machine", () => {
  it("walks configuring -> starting -> answering", () => {
    const s = answering(itemQuery);
    expect(s.phase).toBe("answering");
    expect(s.sessionId).toBe("s1");
    expect(s.questionNumber).toBe(1);
  });

  it("clears the pending query and selection after a submit succeeds", () => {
    let s = answering(ipaQuery);
    s = reduce(s, { kind: "item_selected", item: "b" });
    s = reduce(s, { kind: "submit_started" });
    s = reduce(s, {
      kind: "submit_succeeded",
      recommendations: [],
      belief: { kind: "particles", mean: [1], n: 10 },
    });
    expect(s.query).toBeNull();
    expect(s.selectedItem).toBeNull();
    expect(s.phase).toBe("fetching_query");
  });

  it("ignores selections of items outside the slate", () => {
    let s = answering(ipaQuery);
    s = reduce(s, { kind: "item_selected", item: "zzz" });
    expect(s.selectedItem).toBeNull();
  });

  it("treats a 404 as fatal but keeps other errors recoverable", () => {
    let s = answering(attrQuery);
    const gone = reduce(s, {
      kind: "request_failed",
      error: { error: "not_found", message: "gone", status: 404 },
      message: "gone",
    });
    expect(gone.phase).toBe("fatal");
    const conflict = reduce(s, {
      kind: "request_failed",
      error: { error: "conflict", message: "already answered", status: 409 },
      message: "already answered",
    });
    expect(conflict.phase).toBe("answering");
    expect(conflict.banner).toBe("already answered");
  });
});

describe("answer controls match the query variant", () => {
  it("item queries never show direction buttons", () => {
    const c = controlsFor(answering(itemQuery));
    expect(c.directionButtons).toBe(false);
    expect(c.clickableCards).toBe(true);
  });

  it("attribute queries never make cards clickable", () => {
    const c = controlsFor(answering(attrQuery));
    expect(c.clickableCards).toBe(false);
    expect(c.directionButtons).toBe(true);
    expect(c.directionEnabled).toBe(true);
  });

  it("combined queries gate direction on a picked card", () => {
    let s = answering(ipaQuery);
    expect(controlsFor(s).directionEnabled).toBe(false);
    s = reduce(s, { kind: "item_selected", item: "a" });
    expect(controlsFor(s).directionEnabled).toBe(true);
  });

  it("disables everything while a request is in flight", () => {
    let s = answering(attrQuery);
    s = reduce(s, { kind: "submit_started" });
    const c = controlsFor(s);
    expect(c.submitEnabled).toBe(false);
    expect(c.directionEnabled).toBe(false);
  });
});

describe("answer construction", () => {
  it("builds the right wire body per variant", () => {
    expect(answerFor(answering(itemQuery), null, "b")).toEqual({ choice: "b", direction: null });
    expect(answerFor(answering(attrQuery), -1, null)).toEqual({ choice: null, direction: -1 });
    let s = answering(ipaQuery);
    s = reduce(s, { kind: "item_selected", item: "c" });
    expect(answerFor(s, 1, null)).toEqual({ choice: "c", direction: 1 });
  });

  it("refuses incomplete answers", () => {
    expect(answerFor(answering(ipaQuery), 1, null)).toBeNull(); // no card picked
    expect(answerFor(answering(attrQuery), null, null)).toBeNull();
    let s = answering(itemQuery);
    s = reduce(s, { kind: "submit_started" });
    expect(answerFor(s, null, "a")).toBeNull(); // request already in flight
  });
});
