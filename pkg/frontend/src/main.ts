/** DOM bootstrap: loads state from the API, renders, wires events. */

import { ManagerClient } from "./api.js";
import {
  addRule,
  applyRejected,
  applySaved,
  dropSession,
  editDefaultRule,
  editHeader,
  editRule,
  initialState,
  loadVhosts,
  markSaving,
  moveRule,
  removeRule,
  setCfgNum,
  setCheckUserError,
  setCheckUserResult,
  setDevopsVerdict,
  setSessions,
  type UiState,
} from "./state.js";
import {
  renderCfgBadge,
  renderCheckUser,
  renderDevopsVerdict,
  renderNotifications,
  renderSessions,
  renderVhostEditor,
} from "./render.js";

const client = new ManagerClient();
let state: UiState = initialState();

function $(id: string): HTMLElement {
  const element = document.getElementById(id);
  if (!element) {
    throw new Error(`missing #${id}`);
  }
  return element;
}

function render(): void {
  $("cfg-badge").innerHTML = renderCfgBadge(state.cfgNum);
  const list = Object.keys(state.vhosts).sort()
    .map((name) => {
      const cls = name === state.selectedVhost ? "selected" : "";
      return `<li><a href="#" data-vhost="${name}" class="${cls}">${name}</a></li>`;
    })
    .join("");
  $("vhost-list").innerHTML = `<ul>${list}</ul>`;
  const selected = state.selectedVhost ? state.vhosts[state.selectedVhost] : undefined;
  $("vhost-editor").innerHTML = selected ? renderVhostEditor(selected) : "<p>No vhost selected.</p>";
  $("session-results").innerHTML = renderSessions(state.sessions);
  $("checkuser-result").innerHTML = renderCheckUser(state.checkUser);
  $("devops-result").innerHTML = renderDevopsVerdict(state.devops);
}

async function reloadVhosts(): Promise<void> {
  const sections = await client.getVhosts();
  state = loadVhosts(state, sections);
  state = setCfgNum(state, client.cfgNum);
  render();
}

async function reloadNotifications(): Promise<void> {
  const notifications = await client.listNotifications();
  $("notification-list").innerHTML = renderNotifications(notifications);
}

async function saveSelected(): Promise<void> {
  const name = state.selectedVhost;
  if (!name) {
    return;
  }
  const draft = state.vhosts[name];
  if (!draft) {
    return;
  }
  state = markSaving(state, name);
  render();
  const based = state.cfgNum ?? undefined;
  const result = await client.putVhost(name, draft.edited, based);
  if (result.kind === "saved") {
    state = applySaved(state, name, result.cfgNum);
  } else if (result.kind === "invalid") {
    state = applyRejected(state, name, result.errors);
  } else if (result.kind === "conflict") {
    state = applyRejected(state, name,
      [`configuration moved to #${result.cfgNum}; reload before saving`]);
    state = setCfgNum(state, result.cfgNum);
  } else {
    state = applyRejected(state, name, [`save failed: HTTP ${result.status}`]);
  }
  render();
}

function wireVhostEditor(): void {
  $("vhost-editor").addEventListener("input", (event) => {
    const target = event.target as HTMLInputElement;
    const name = state.selectedVhost;
    if (!name) {
      return;
    }
    if (target.dataset.field === "regex" || target.dataset.field === "rule") {
      state = editRule(state, name, Number(target.dataset.index), target.dataset.field, target.value);
    } else if (target.dataset.field === "default") {
      state = editDefaultRule(state, name, target.value);
    } else if (target.dataset.header) {
      state = editHeader(state, name, target.dataset.header, target.value);
    }
  });
  $("vhost-editor").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const name = state.selectedVhost;
    if (!name || target.tagName !== "BUTTON") {
      return;
    }
    const index = Number(target.dataset.index ?? -1);
    switch (target.dataset.action) {
      case "add-rule":
        state = addRule(state, name);
        break;
      case "remove":
        state = removeRule(state, name, index);
        break;
      case "up":
        state = moveRule(state, name, index, index - 1);
        break;
      case "down":
        state = moveRule(state, name, index, index + 1);
        break;
      case "save":
        void saveSelected();
        return;
      default:
        if (target.dataset.removeHeader) {
          const next = { ...state.vhosts[name]!.edited.headers };
          delete next[target.dataset.removeHeader];
          state = editHeaderMap(name, next);
        } else {
          return;
        }
    }
    render();
  });
  $("vhost-list").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const vhost = target.dataset.vhost;
    if (vhost) {
      event.preventDefault();
      state = { ...state, selectedVhost: vhost };
      render();
    }
  });
}

function editHeaderMap(name: string, headers: Record<string, string>): UiState {
  const draft = state.vhosts[name];
  if (!draft) {
    return state;
  }
  const edited = { ...draft.edited, headers };
  return { ...state, vhosts: { ...state.vhosts, [name]: { ...draft, edited } } };
}

function wireSessions(): void {
  $("session-search").addEventListener("submit", (event) => {
    event.preventDefault();
    const uid = ($("session-uid") as HTMLInputElement).value.trim();
    void client.searchSessions(uid).then((sessions) => {
      state = setSessions(state, uid, sessions);
      render();
    });
  });
  $("session-results").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const sid = target.dataset.deleteSid;
    if (sid) {
      void client.deleteSession(sid).then(() => {
        state = dropSession(state, sid);
        render();
      });
    }
  });
}

function wireCheckUser(): void {
  $("checkuser-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const uid = ($("checkuser-uid") as HTMLInputElement).value.trim();
    const url = ($("checkuser-url") as HTMLInputElement).value.trim();
    client.checkUser(uid, url).then(
      ({ raw, result }) => {
        state = setCheckUserResult(state, uid, url, raw, result);
        render();
      },
      (error: Error) => {
        state = setCheckUserError(state, uid, url, error.message);
        render();
      },
    );
  });
}

function wireDevops(): void {
  $("devops-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const document = ($("devops-doc") as HTMLTextAreaElement).value;
    void client.checkDevops(document).then((verdict) => {
      state = setDevopsVerdict(state, document, verdict.ok, verdict.errors);
      render();
    });
  });
}

function wireNotifications(): void {
  $("notification-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const target = ($("notification-target") as HTMLInputElement).value.trim() || "_all";
    const title = ($("notification-title") as HTMLInputElement).value.trim();
    const body = ($("notification-body") as HTMLTextAreaElement).value;
    const require = ($("notification-require") as HTMLInputElement).checked;
    void client.createNotification(target, title, body, require).then(() => {
      void reloadNotifications();
    });
  });
}

export function boot(): void {
  wireVhostEditor();
  wireSessions();
  wireCheckUser();
  wireDevops();
  wireNotifications();
  void reloadVhosts();
  void reloadNotifications();
}

if (typeof document !== "undefined" && document.getElementById("vhost-editor")) {
  boot();
}
