/** Pure HTML builders; main.ts swaps them into the page and wires events. */

import type { UiState, VhostDraft } from "./state.js";
import { isDirty } from "./state.js";
import type { NotificationRecord, SessionRecord } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function truncateSid(sid: string): string {
  return sid.length > 8 ? `${sid.slice(0, 8)}…` : sid;
}

export function renderCfgBadge(cfgNum: number | null): string {
  return `<span class="cfg-badge" data-testid="cfg-num">cfg #${cfgNum ?? "?"}</span>`;
}

export function renderErrorList(errors: string[]): string {
  if (errors.length === 0) {
    return "";
  }
  const items = errors.map((e) => `<li class="error">${escapeHtml(e)}</li>`).join("");
  return `<ul class="errors" data-testid="errors">${items}</ul>`;
}

export function renderVhostEditor(draft: VhostDraft): string {
  const rows = draft.edited.rules
    .map(([regex, rule], index) => `
      <tr data-row="${index}">
        <td><input data-field="regex" data-index="${index}" value="${escapeHtml(regex)}"></td>
        <td><input data-field="rule" data-index="${index}" value="${escapeHtml(rule)}"></td>
        <td>
          <button data-action="up" data-index="${index}">&uarr;</button>
          <button data-action="down" data-index="${index}">&darr;</button>
          <button data-action="remove" data-index="${index}">&times;</button>
        </td>
      </tr>`)
    .join("");
  const headers = Object.entries(draft.edited.headers)
    .map(([name, template]) => `
      <tr>
        <td>${escapeHtml(name)}</td>
        <td><input data-header="${escapeHtml(name)}" value="${escapeHtml(template)}"></td>
        <td><button data-remove-header="${escapeHtml(name)}">&times;</button></td>
      </tr>`)
    .join("");
  const dirty = isDirty(draft) ? " (unsaved)" : "";
  return `
    <h2>${escapeHtml(draft.name)}${dirty}</h2>
    ${renderErrorList(draft.errors)}
    <table class="rules">
      <thead><tr><th>URI regex</th><th>Rule</th><th></th></tr></thead>
      <tbody>${rows}</tbody>
    </table>
    <p><button data-action="add-rule">Add rule</button></p>
    <label>Default rule
      <input data-field="default" value="${escapeHtml(draft.edited.default_rule)}">
    </label>
    <h3>Exported headers</h3>
    <table class="headers"><tbody>${headers}</tbody></table>
    <p>
      <button data-action="save" ${draft.saving ? "disabled" : ""}>Save</button>
    </p>`;
}

export function renderSessions(sessions: SessionRecord[]): string {
  if (sessions.length === 0) {
    return `<p class="empty" data-testid="sessions-empty">No sessions found.</p>`;
  }
  const rows = sessions
    .map((s) => `
      <tr data-sid="${escapeHtml(s.sid)}">
        <td><code>${truncateSid(s.sid)}</code></td>
        <td>${escapeHtml(s.uid)}</td>
        <td>${s.auth_level}</td>
        <td>${new Date(s.created_at * 1000).toISOString()}</td>
        <td>${escapeHtml(Object.entries(s.attributes).map(([k, v]) => `${k}=${v}`).join(" "))}</td>
        <td><button data-delete-sid="${escapeHtml(s.sid)}">Delete</button></td>
      </tr>`)
    .join("");
  return `
    <table class="sessions" data-testid="sessions">
      <thead><tr><th>SID</th><th>User</th><th>Level</th><th>Created</th><th>Attributes</th><th></th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
}

/** The panel shows the API answer verbatim; the UI adds no interpretation. */
export function renderCheckUser(state: UiState["checkUser"]): string {
  if (state.error) {
    return `<p class="error" data-testid="checkuser-error">${escapeHtml(state.error)}</p>`;
  }
  if (!state.result || state.raw === null) {
    return "";
  }
  const decisionClass = state.result.allowed === "deny" ? "deny" : "allow";
  return `
    <p data-testid="checkuser-decision" class="${decisionClass}">
      Decision: <strong>${escapeHtml(state.result.allowed)}</strong>
      (matched rule: <code>${escapeHtml(state.result.matched_rule)}</code>)
    </p>
    <pre data-testid="checkuser-raw">${escapeHtml(state.raw)}</pre>`;
}

export function renderDevopsVerdict(devops: UiState["devops"]): string {
  if (devops.ok === null) {
    return "";
  }
  if (devops.ok) {
    return `<p class="allow" data-testid="devops-ok">&#10003; document is valid</p>`;
  }
  return renderErrorList(devops.errors);
}

export function renderNotifications(notifications: NotificationRecord[]): string {
  if (notifications.length === 0) {
    return `<p class="empty">No notifications.</p>`;
  }
  const rows = notifications
    .map((n) => `
      <tr>
        <td>${escapeHtml(n.target)}</td>
        <td>${escapeHtml(n.title)}</td>
        <td>${n.require_accept ? "must accept" : "informational"}</td>
        <td>${n.accepted_at ? "accepted" : "pending"}</td>
      </tr>`)
    .join("");
  return `
    <table class="notifications" data-testid="notifications">
      <thead><tr><th>Target</th><th>Title</th><th>Kind</th><th>State</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
}
