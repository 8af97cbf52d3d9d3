"""Administration REST API: configuration editing with validation and
versioned commits, session exploration, notifications, what-if checks and
audit queries. The manager is itself SSO-protected (cookie + admin list)."""

from __future__ import annotations

import json
import mimetypes
import os
import time

from .accounting import AuditEvent, AuditLog
from .config import ConfigError, ConfigManager, GlobalConfig
from .devops import check_devops
from .plugins import CheckUser, CheckUserForbidden, CheckUserUnknownUser, NotificationStore
from .sessions import Clock, Session, SessionCache, SessionStore
from .users import UserStore
from .web import Request, Response, json_response, text_response

UI_INDEX = "index.html"


class ManagerApp:
    def __init__(
        self,
        config_manager: ConfigManager,
        sessions: SessionStore,
        cache: SessionCache,
        users: UserStore,
        audit: AuditLog,
        notifications: NotificationStore,
        checkuser: CheckUser,
        clock: Clock = time.time,
        ui_dist: str | None = None,
    ):
        self.config_manager = config_manager
        self.sessions = sessions
        self.cache = cache
        self.users = users
        self.audit = audit
        self.notifications = notifications
        self.checkuser = checkuser
        self.clock = clock
        self.ui_dist = ui_dist

    # --- auth -------------------------------------------------------------------

    def _admin(self, request: Request, config: GlobalConfig) -> tuple[Session | None, Response | None]:
        sid = request.cookies.get(config.cookie_name, "")
        session = self.sessions.lookup(sid) if sid else None
        if session is None:
            return None, json_response(401, {"error": "authentication required"})
        if session.uid not in config.plugins.manager_admins:
            return None, json_response(403, {"error": "not a manager administrator"})
        return session, None

    # --- dispatch ------------------------------------------------------------------

    def handle(self, request: Request) -> Response:
        config = self.config_manager.current()
        response = self._route(request, config)
        response.headers.set("X-Cfg-Num", str(self.config_manager.current().cfg_num))
        return response

    def _route(self, request: Request, config: GlobalConfig) -> Response:
        path = request.path
        if not path.startswith("/api/"):
            return self._static(request)

        session, refused = self._admin(request, config)
        if refused is not None:
            return refused
        actor = session.uid

        if path == "/api/config":
            if request.method == "GET":
                return json_response(200, config.to_dict())
            if request.method == "PUT":
                return self._commit(request, config, actor, self._parse_body(request))
        if path == "/api/config/vhosts" and request.method == "GET":
            return json_response(200, {v.vhost: v.to_dict() for v in config.vhosts})
        if path.startswith("/api/config/vhosts/"):
            name = path[len("/api/config/vhosts/"):].lower()
            if request.method == "GET":
                vhost = config.find_vhost(name)
                if vhost is None:
                    return json_response(404, {"error": f"unknown vhost {name}"})
                return json_response(200, vhost.to_dict())
            if request.method == "PUT":
                return self._put_vhost(request, config, actor, name)
        if path == "/api/sessions" and request.method == "GET":
            return self._sessions_list(request)
        if path.startswith("/api/sessions/") and request.method == "DELETE":
            return self._session_delete(request, path[len("/api/sessions/"):], actor)
        if path == "/api/notifications":
            if request.method == "GET":
                return json_response(200, {"notifications": [n.to_dict() for n in self.notifications.all()]})
            if request.method == "POST":
                return self._notification_create(request, actor)
        if path == "/api/checkuser" and request.method == "POST":
            return self._checkuser(request, actor)
        if path == "/api/checkdevops" and request.method == "POST":
            return self._checkdevops(request)
        if path == "/api/audit" and request.method == "GET":
            return self._audit_query(request)
        return json_response(404, {"error": "no such endpoint"})

    @staticmethod
    def _parse_body(request: Request) -> dict | None:
        try:
            payload = json.loads(request.body.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            return None
        return payload if isinstance(payload, dict) else None

    # --- config ----------------------------------------------------------------------

    def _precondition_failed(self, request: Request) -> Response | None:
        """Optimistic concurrency: a PUT may pin the cfg_num it was based on."""
        expected = request.headers.get("X-Cfg-Num")
        if expected is None:
            return None
        current = self.config_manager.current().cfg_num
        if str(current) != expected.strip():
            return json_response(409, {"error": "configuration changed",
                                       "cfg_num": current})
        return None

    def _commit(self, request: Request, config: GlobalConfig, actor: str, data: dict | None) -> Response:
        if data is None:
            return json_response(400, {"error": "body must be a JSON object"})
        conflict = self._precondition_failed(request)
        if conflict is not None:
            return conflict
        try:
            cfg_num = self.config_manager.commit(data, actor=actor)
        except ConfigError as exc:
            return json_response(422, {"errors": exc.errors})
        return json_response(200, {"cfg_num": cfg_num})

    def _put_vhost(self, request: Request, config: GlobalConfig, actor: str, name: str) -> Response:
        data = self._parse_body(request)
        if data is None:
            return json_response(400, {"error": "body must be a JSON object"})
        data = {**data, "vhost": name}
        whole = config.to_dict()
        vhosts = [v for v in whole["vhosts"] if v["vhost"] != name]
        vhosts.append(data)
        whole["vhosts"] = vhosts
        return self._commit(request, config, actor, whole)

    # --- sessions ------------------------------------------------------------------------

    def _sessions_list(self, request: Request) -> Response:
        uid = request.query.get("uid") or None
        kind = request.query.get("kind", "sso") or None
        found = self.sessions.search(uid=uid, kind=kind)
        return json_response(200, {"sessions": [s.to_dict() for s in found]})

    def _session_delete(self, request: Request, sid: str, actor: str) -> Response:
        session = self.sessions.lookup(sid)
        if session is None:
            return json_response(404, {"error": "no such session"})
        self.sessions.delete(sid)
        self.cache.invalidate(sid)
        self.audit.emit(AuditEvent(
            kind="session_delete", uid=session.uid, sid=sid,
            client_ip=request.client_ip, uri=request.path,
            detail={"by": actor, "reason": "manager"},
        ))
        return json_response(200, {"deleted": True})

    # --- notifications ----------------------------------------------------------------------

    def _notification_create(self, request: Request, actor: str) -> Response:
        data = self._parse_body(request)
        if data is None:
            return json_response(400, {"error": "body must be a JSON object"})
        target = data.get("target") or data.get("uid") or ""
        title = data.get("title", "")
        body = data.get("body", "")
        if not target or not title:
            return json_response(422, {"errors": ["target and title are required"]})
        notification = self.notifications.create(
            target, title, body, require_accept=bool(data.get("require_accept", False))
        )
        self.audit.emit(AuditEvent(
            kind="admin_change", uid=actor, uri=request.path,
            detail={"action": "notification_create", "id": notification.id, "target": target},
        ))
        return json_response(200, notification.to_dict())

    # --- what-if checks --------------------------------------------------------------------------

    def _checkuser(self, request: Request, actor: str) -> Response:
        data = self._parse_body(request)
        if data is None:
            return json_response(400, {"error": "body must be a JSON object"})
        uid = data.get("uid", "")
        url = data.get("url", "")
        if not uid or not url:
            return json_response(422, {"errors": ["uid and url are required"]})
        try:
            result = self.checkuser.check(actor, uid, url, client_ip=data.get("client_ip", "127.0.0.1"))
        except CheckUserForbidden:
            return json_response(403, {"error": "forbidden"})
        except CheckUserUnknownUser:
            return json_response(404, {"error": "unknown-user"})
        except ValueError as exc:
            return json_response(422, {"errors": [str(exc)]})
        return json_response(200, result.to_dict())

    def _checkdevops(self, request: Request) -> Response:
        data = self._parse_body(request)
        if data is None:
            return json_response(400, {"error": "body must be a JSON object"})
        document = data.get("document", "")
        if isinstance(document, dict):
            document = json.dumps(document)
        errors = check_devops(document)
        return json_response(200, {"ok": not errors, "errors": errors})

    # --- audit ------------------------------------------------------------------------------------

    def _audit_query(self, request: Request) -> Response:
        query = request.query
        try:
            since = float(query["since"]) if "since" in query else None
            until = float(query["until"]) if "until" in query else None
            limit = int(query.get("limit", "100"))
        except ValueError:
            return json_response(400, {"error": "since/until/limit must be numbers"})
        events = self.audit.query(
            kind=query.get("kind") or None,
            uid=query.get("uid") or None,
            since=since,
            until=until,
            limit=limit,
        )
        return json_response(200, {"events": events})

    # --- static UI ----------------------------------------------------------------------------------

    def _static(self, request: Request) -> Response:
        if not self.ui_dist:
            return text_response(404, "manager UI not installed; API at /api/")
        rel = request.path.lstrip("/") or UI_INDEX
        path = os.path.normpath(os.path.join(self.ui_dist, rel))
        if not path.startswith(os.path.normpath(self.ui_dist)):
            return text_response(404, "not found")
        if not os.path.isfile(path):
            path = os.path.join(self.ui_dist, UI_INDEX)
            if not os.path.isfile(path):
                return text_response(404, "not found")
        content_type = mimetypes.guess_type(path)[0] or "application/octet-stream"
        with open(path, "rb") as fh:
            body = fh.read()
        response = Response(status=200, body=body)
        response.headers.set("Content-Type", content_type)
        return response
