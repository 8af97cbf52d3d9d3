import { describe, expect, it } from "vitest";

import {
  addRule,
  applyRejected,
  applySaved,
  dropSession,
  editRule,
  initialState,
  isDirty,
  loadVhosts,
  moveRule,
  removeRule,
  setCheckUserResult,
  setSessions,
} from "../src/state.js";
import { makeVhost } from "./fakeserver.js";

function loaded() {
  return loadVhosts(initialState(), {
    "app1.example.com": makeVhost("app1.example.com"),
    "app2.example.com": makeVhost("app2.example.com"),
  });
}

describe("vhost drafts", () => {
  it("loading resets drafts and selects the first vhost", () => {
    const state = loaded();
    expect(Object.keys(state.vhosts).sort()).toEqual(
      ["app1.example.com", "app2.example.com"]);
    expect(state.selectedVhost).toBe("app1.example.com");
    expect(isDirty(state.vhosts["app1.example.com"]!)).toBe(false);
  });

  it("editing a rule marks the draft dirty without touching the original", () => {
    let state = loaded();
    state = editRule(state, "app1.example.com", 0, "rule", '$uid == "root"');
    const draft = state.vhosts["app1.example.com"]!;
    expect(isDirty(draft)).toBe(true);
    expect(draft.original.rules[0]![1]).toBe('$uid == "admin"');
    expect(draft.edited.rules[0]![1]).toBe('$uid == "root"');
    // the other vhost is untouched
    expect(isDirty(state.vhosts["app2.example.com"]!)).toBe(false);
  });

  it("add, remove and reorder preserve row order", () => {
    let state = loaded();
    state = addRule(state, "app1.example.com");
    state = editRule(state, "app1.example.com", 1, "regex", "^/b");
    state = addRule(state, "app1.example.com");
    state = editRule(state, "app1.example.com", 2, "regex", "^/c");
    let rules = state.vhosts["app1.example.com"]!.edited.rules;
    expect(rules.map((r) => r[0])).toEqual(["^/admin", "^/b", "^/c"]);

    state = moveRule(state, "app1.example.com", 2, 0);
    rules = state.vhosts["app1.example.com"]!.edited.rules;
    expect(rules.map((r) => r[0])).toEqual(["^/c", "^/admin", "^/b"]);

    state = removeRule(state, "app1.example.com", 1);
    rules = state.vhosts["app1.example.com"]!.edited.rules;
    expect(rules.map((r) => r[0])).toEqual(["^/c", "^/b"]);
  });

  it("out-of-range moves are ignored", () => {
    let state = loaded();
    state = moveRule(state, "app1.example.com", 0, 5);
    expect(state.vhosts["app1.example.com"]!.edited.rules).toHaveLength(1);
  });

  it("a rejected save keeps the draft dirty and shows the API errors", () => {
    let state = loaded();
    state = editRule(state, "app1.example.com", 0, "rule", "$uid ==");
    state = applyRejected(state, "app1.example.com", ["rule for '^/admin': expected operand"]);
    const draft = state.vhosts["app1.example.com"]!;
    expect(draft.errors).toEqual(["rule for '^/admin': expected operand"]);
    expect(isDirty(draft)).toBe(true);
    expect(state.cfgNum).toBeNull(); // nothing was committed
  });

  it("a successful save re-baselines the draft, clears errors, bumps cfg", () => {
    let state = loaded();
    state = editRule(state, "app1.example.com", 0, "rule", "accept");
    state = applyRejected(state, "app1.example.com", ["old error"]);
    state = applySaved(state, "app1.example.com", 2);
    const draft = state.vhosts["app1.example.com"]!;
    expect(isDirty(draft)).toBe(false);
    expect(draft.errors).toEqual([]);
    expect(state.cfgNum).toBe(2);
  });
});

describe("session results", () => {
  it("search results replace and deletes drop rows", () => {
    let state = initialState();
    state = setSessions(state, "alice", [
      { sid: "a".repeat(32), uid: "alice", attributes: {}, auth_level: 1,
        created_at: 0, expires_at: 1, kind: "sso" },
      { sid: "b".repeat(32), uid: "alice", attributes: {}, auth_level: 1,
        created_at: 0, expires_at: 1, kind: "sso" },
    ]);
    state = dropSession(state, "a".repeat(32));
    expect(state.sessions.map((s) => s.sid)).toEqual(["b".repeat(32)]);
  });
});

describe("checkuser state", () => {
  it("stores the verbatim body alongside the parsed result", () => {
    let state = initialState();
    const raw = `{"allowed": "deny",  "matched_rule": "^/admin", "headers": {}, "uid": "a", "vhost": "v", "uri": "/", "synthetic": false}`;
    state = setCheckUserResult(state, "a", "https://v/", raw, JSON.parse(raw));
    expect(state.checkUser.raw).toBe(raw);
    expect(state.checkUser.result!.allowed).toBe("deny");
  });
});
