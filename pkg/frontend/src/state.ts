/**
 * UI state and pure transition helpers.
 *
 * A vhost draft is the client copy being edited; it is considered dirty once
 * it differs from the section loaded from the server. Drafts with pending
 * validation errors can be re-saved (the server re-validates) but the state
 * never pretends an errored draft was committed.
 */

import type { CheckUserResult, RuleRow, SessionRecord, VhostSection } from "./types.js";

export interface VhostDraft {
  name: string;
  original: VhostSection;
  edited: VhostSection;
  errors: string[];
  saving: boolean;
}

export interface UiState {
  cfgNum: number | null;
  vhosts: Record<string, VhostDraft>;
  selectedVhost: string | null;
  sessionQuery: string;
  sessions: SessionRecord[];
  checkUser: { uid: string; url: string; raw: string | null; result: CheckUserResult | null; error: string | null };
  devops: { document: string; ok: boolean | null; errors: string[] };
}

export function initialState(): UiState {
  return {
    cfgNum: null,
    vhosts: {},
    selectedVhost: null,
    sessionQuery: "",
    sessions: [],
    checkUser: { uid: "", url: "", raw: null, result: null, error: null },
    devops: { document: "", ok: null, errors: [] },
  };
}

function clone<T>(value: T): T {
  return JSON.parse(JSON.stringify(value)) as T;
}

export function loadVhosts(state: UiState, sections: Record<string, VhostSection>): UiState {
  const vhosts: Record<string, VhostDraft> = {};
  for (const [name, section] of Object.entries(sections)) {
    vhosts[name] = {
      name,
      original: clone(section),
      edited: clone(section),
      errors: [],
      saving: false,
    };
  }
  const names = Object.keys(vhosts).sort();
  const selected = state.selectedVhost && vhosts[state.selectedVhost]
    ? state.selectedVhost
    : names[0] ?? null;
  return { ...state, vhosts, selectedVhost: selected };
}

export function isDirty(draft: VhostDraft): boolean {
  return JSON.stringify(draft.original) !== JSON.stringify(draft.edited);
}

function withDraft(state: UiState, name: string, update: (draft: VhostDraft) => VhostDraft): UiState {
  const draft = state.vhosts[name];
  if (!draft) {
    return state;
  }
  return { ...state, vhosts: { ...state.vhosts, [name]: update(clone(draft)) } };
}

export function editRule(
  state: UiState, vhost: string, index: number,
  field: "regex" | "rule", value: string,
): UiState {
  return withDraft(state, vhost, (draft) => {
    const row = draft.edited.rules[index];
    if (row) {
      row[field === "regex" ? 0 : 1] = value;
    }
    return draft;
  });
}

export function addRule(state: UiState, vhost: string): UiState {
  return withDraft(state, vhost, (draft) => {
    draft.edited.rules.push(["^/", "accept"]);
    return draft;
  });
}

export function removeRule(state: UiState, vhost: string, index: number): UiState {
  return withDraft(state, vhost, (draft) => {
    draft.edited.rules.splice(index, 1);
    return draft;
  });
}

/** Reorders rule rows; order is significant (first match wins server-side). */
export function moveRule(state: UiState, vhost: string, from: number, to: number): UiState {
  return withDraft(state, vhost, (draft) => {
    const rules = draft.edited.rules;
    if (from < 0 || from >= rules.length || to < 0 || to >= rules.length) {
      return draft;
    }
    const [row] = rules.splice(from, 1);
    rules.splice(to, 0, row as RuleRow);
    return draft;
  });
}

export function editDefaultRule(state: UiState, vhost: string, value: string): UiState {
  return withDraft(state, vhost, (draft) => {
    draft.edited.default_rule = value;
    return draft;
  });
}

export function editHeader(state: UiState, vhost: string, name: string, template: string): UiState {
  return withDraft(state, vhost, (draft) => {
    draft.edited.headers[name] = template;
    return draft;
  });
}

export function removeHeader(state: UiState, vhost: string, name: string): UiState {
  return withDraft(state, vhost, (draft) => {
    delete draft.edited.headers[name];
    return draft;
  });
}

export function markSaving(state: UiState, vhost: string): UiState {
  return withDraft(state, vhost, (draft) => ({ ...draft, saving: true }));
}

/** A successful commit: the draft becomes the new baseline, errors clear. */
export function applySaved(state: UiState, vhost: string, cfgNum: number): UiState {
  const next = withDraft(state, vhost, (draft) => ({
    ...draft,
    original: clone(draft.edited),
    errors: [],
    saving: false,
  }));
  return { ...next, cfgNum };
}

/** A rejected commit: the server's validation errors render inline. */
export function applyRejected(state: UiState, vhost: string, errors: string[]): UiState {
  return withDraft(state, vhost, (draft) => ({ ...draft, errors, saving: false }));
}

export function setCfgNum(state: UiState, cfgNum: number | null): UiState {
  return { ...state, cfgNum };
}

export function setSessions(state: UiState, query: string, sessions: SessionRecord[]): UiState {
  return { ...state, sessionQuery: query, sessions };
}

export function dropSession(state: UiState, sid: string): UiState {
  return { ...state, sessions: state.sessions.filter((s) => s.sid !== sid) };
}

export function setCheckUserResult(
  state: UiState, uid: string, url: string, raw: string, result: CheckUserResult,
): UiState {
  return { ...state, checkUser: { uid, url, raw, result, error: null } };
}

export function setCheckUserError(state: UiState, uid: string, url: string, error: string): UiState {
  return { ...state, checkUser: { uid, url, raw: null, result: null, error } };
}

export function setDevopsVerdict(state: UiState, document: string, ok: boolean, errors: string[]): UiState {
  return { ...state, devops: { document, ok, errors } };
}
