/**
 * Typed client for the manager REST API.
 *
 * The UI performs no authorization or validation of its own: every mutation
 * round-trips through the API and this client surfaces the server's verdict
 * (422 validation errors, 409 version conflicts) as structured results.
 */

import type {
  AuditRecord,
  CheckDevopsVerdict,
  CheckUserResult,
  NotificationRecord,
  SessionRecord,
  VhostSection,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type SaveResult =
  | { kind: "saved"; cfgNum: number }
  | { kind: "invalid"; errors: string[] }
  | { kind: "conflict"; cfgNum: number }
  | { kind: "error"; status: number; message: string };

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ManagerClient {
  /** cfg_num reported by the last response; shown as the version badge. */
  cfgNum: number | null = null;

  constructor(
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
    private base: string = "",
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<Response> {
    const init: RequestInit = { method, credentials: "same-origin" };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
      init.headers = { "Content-Type": "application/json" };
    }
    const response = await this.fetchImpl(this.base + path, init);
    const header = response.headers.get("X-Cfg-Num");
    if (header !== null) {
      this.cfgNum = parseInt(header, 10);
    }
    return response;
  }

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.request(method, path, body);
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return (await response.json()) as T;
  }

  async getVhosts(): Promise<Record<string, VhostSection>> {
    return this.json("GET", "/api/config/vhosts");
  }

  async getVhost(name: string): Promise<VhostSection> {
    return this.json("GET", `/api/config/vhosts/${encodeURIComponent(name)}`);
  }

  /**
   * Saves one vhost section. `basedOnCfgNum` pins the version the edit was
   * made against; the server answers 409 if someone committed in between.
   */
  async putVhost(
    name: string,
    section: VhostSection,
    basedOnCfgNum?: number,
  ): Promise<SaveResult> {
    const init: RequestInit = {
      method: "PUT",
      credentials: "same-origin",
      body: JSON.stringify(section),
      headers: {
        "Content-Type": "application/json",
        ...(basedOnCfgNum !== undefined ? { "X-Cfg-Num": String(basedOnCfgNum) } : {}),
      },
    };
    const response = await this.fetchImpl(
      this.base + `/api/config/vhosts/${encodeURIComponent(name)}`,
      init,
    );
    const header = response.headers.get("X-Cfg-Num");
    if (header !== null) {
      this.cfgNum = parseInt(header, 10);
    }
    if (response.status === 200) {
      const payload = (await response.json()) as { cfg_num: number };
      this.cfgNum = payload.cfg_num;
      return { kind: "saved", cfgNum: payload.cfg_num };
    }
    if (response.status === 422) {
      const payload = (await response.json()) as { errors: string[] };
      return { kind: "invalid", errors: payload.errors };
    }
    if (response.status === 409) {
      const payload = (await response.json()) as { cfg_num: number };
      return { kind: "conflict", cfgNum: payload.cfg_num };
    }
    return { kind: "error", status: response.status, message: await response.text() };
  }

  async searchSessions(uid: string): Promise<SessionRecord[]> {
    const query = uid ? `?uid=${encodeURIComponent(uid)}` : "";
    const payload = await this.json<{ sessions: SessionRecord[] }>(
      "GET", `/api/sessions${query}`);
    return payload.sessions;
  }

  async deleteSession(sid: string): Promise<boolean> {
    const response = await this.request("DELETE", `/api/sessions/${encodeURIComponent(sid)}`);
    if (response.status === 404) {
      return false;
    }
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return true;
  }

  /**
   * Returns the verbatim response body alongside the parsed result so the
   * panel can display exactly what the API answered.
   */
  async checkUser(uid: string, url: string): Promise<{ raw: string; result: CheckUserResult }> {
    const response = await this.request("POST", "/api/checkuser", { uid, url });
    const raw = await response.text();
    if (!response.ok) {
      throw new ApiError(response.status, raw);
    }
    return { raw, result: JSON.parse(raw) as CheckUserResult };
  }

  async checkDevops(document: string): Promise<CheckDevopsVerdict> {
    return this.json("POST", "/api/checkdevops", { document });
  }

  async listNotifications(): Promise<NotificationRecord[]> {
    const payload = await this.json<{ notifications: NotificationRecord[] }>(
      "GET", "/api/notifications");
    return payload.notifications;
  }

  async createNotification(
    target: string, title: string, body: string, requireAccept: boolean,
  ): Promise<NotificationRecord> {
    return this.json("POST", "/api/notifications", {
      target, title, body, require_accept: requireAccept,
    });
  }

  async queryAudit(params: { kind?: string; uid?: string; limit?: number }): Promise<AuditRecord[]> {
    const search = new URLSearchParams();
    if (params.kind) search.set("kind", params.kind);
    if (params.uid) search.set("uid", params.uid);
    if (params.limit) search.set("limit", String(params.limit));
    const suffix = search.toString() ? `?${search.toString()}` : "";
    const payload = await this.json<{ events: AuditRecord[] }>("GET", `/api/audit${suffix}`);
    return payload.events;
  }
}
