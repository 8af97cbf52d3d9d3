"""Entry-point plugin engine and the bundled plugins: brute-force lockout,
notifications, per-user access simulation (check_user) and adaptive
authentication levels."""

from __future__ import annotations

import secrets
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .accounting import AuditEvent, AuditLog
from .rules import Decision, RequestCtx, Rule, evaluate
from .sessions import KIND_PERSISTENT, Clock, Session, SessionStore
from .users import UserStore

# Entry points, in lifecycle order.
BEFORE_AUTH = "beforeAuth"
AFTER_AUTH_SUCCESS = "afterAuthSuccess"
AFTER_AUTH_FAILURE = "afterAuthFailure"
AFTER_SESSION_CREATE = "afterSessionCreate"
END_SESSION = "endSession"

ENTRY_POINTS = (BEFORE_AUTH, AFTER_AUTH_SUCCESS, AFTER_AUTH_FAILURE, AFTER_SESSION_CREATE, END_SESSION)


@dataclass
class Abort:
    reason: str


PluginFn = Callable[[dict], "Abort | None"]


class PluginEngine:
    """Synchronous in-process plugin dispatch.

    Plugins run in registration order. A plugin returning Abort stops the
    chain; a plugin raising is logged and treated as continue (fail-open for
    plumbing — a plugin that must fail closed returns Abort explicitly).
    """

    def __init__(self, audit: AuditLog | None = None):
        self.audit = audit
        self._handlers: dict[str, list[tuple[str, PluginFn]]] = {ep: [] for ep in ENTRY_POINTS}

    def register(self, entry_point: str, fn: PluginFn, name: str | None = None) -> None:
        if entry_point not in self._handlers:
            raise ValueError(f"unknown entry point {entry_point!r}")
        self._handlers[entry_point].append((name or getattr(fn, "__name__", "plugin"), fn))

    def run(self, entry_point: str, context: dict) -> Abort | None:
        for name, fn in self._handlers[entry_point]:
            try:
                result = fn(context)
            except Exception as exc:
                if self.audit:
                    self.audit.emit(
                        AuditEvent(
                            kind="plugin_abort",
                            uid=context.get("uid"),
                            detail={"plugin": name, "entry_point": entry_point,
                                    "error": str(exc), "action": "continue"},
                        )
                    )
                continue
            if isinstance(result, Abort):
                if self.audit:
                    self.audit.emit(
                        AuditEvent(
                            kind="plugin_abort",
                            uid=context.get("uid"),
                            detail={"plugin": name, "entry_point": entry_point,
                                    "reason": result.reason, "action": "abort"},
                        )
                    )
                return result
        return None


# --- BruteForceProtection ----------------------------------------------------


class BruteForceProtection:
    """Account lockout after repeated login failures in a sliding window.

    The failure window lives in memory; the lock itself is persisted on the
    user record so it survives restarts.
    """

    def __init__(
        self,
        user_store: UserStore | None = None,
        max_failures: int = 5,
        window_seconds: float = 300,
        lock_seconds: float = 300,
        clock: Clock = time.time,
    ):
        self.user_store = user_store
        self.max_failures = max_failures
        self.window_seconds = window_seconds
        self.lock_seconds = lock_seconds
        self.clock = clock
        self._lock = threading.Lock()
        self._failures: dict[str, deque] = {}
        self._locked_until: dict[str, float] = {}

    def _window(self, uid: str) -> deque:
        window = self._failures.get(uid)
        if window is None:
            window = deque(maxlen=self.max_failures)
            self._failures[uid] = window
        return window

    def check(self, uid: str, now: float | None = None) -> float | None:
        """None when login may proceed, else the lock expiry timestamp."""
        now = self.clock() if now is None else now
        with self._lock:
            until = self._locked_until.get(uid)
        if until is None and self.user_store is not None:
            record = self.user_store.get(uid)
            until = record.locked_until if record else None
        if until is not None and now < until:
            return until
        return None

    def record_failure(self, uid: str, now: float | None = None) -> float | None:
        """Returns the lock expiry if this failure crossed the threshold."""
        now = self.clock() if now is None else now
        cutoff = now - self.window_seconds
        with self._lock:
            window = self._window(uid)
            while window and window[0] < cutoff:
                window.popleft()
            window.append(now)
            if len(window) >= self.max_failures:
                until = now + self.lock_seconds
                self._locked_until[uid] = until
            else:
                until = None
        if until is not None and self.user_store is not None and self.user_store.get(uid):
            self.user_store.set_locked_until(uid, until)
        return until

    def record_success(self, uid: str) -> None:
        with self._lock:
            self._failures.pop(uid, None)
            self._locked_until.pop(uid, None)
        if self.user_store is not None and self.user_store.get(uid):
            self.user_store.set_locked_until(uid, None)


# --- Notification --------------------------------------------------------------


@dataclass
class Notification:
    id: str
    target: str  # uid or "_all"
    title: str
    body: str
    created_at: float
    require_accept: bool = False
    accepted_at: float | None = None  # for single-uid targets

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "target": self.target,
            "title": self.title,
            "body": self.body,
            "created_at": self.created_at,
            "require_accept": self.require_accept,
            "accepted_at": self.accepted_at,
        }


_ACCEPT_ATTR = "notif_accepted_"


class NotificationStore:
    """Messages shown to users at login; acceptance state is recorded with a
    timestamp in the user's persistent session so '_all' notifications are
    accepted independently per user."""

    def __init__(self, session_store: SessionStore, clock: Clock = time.time,
                 persistent_ttl: float = 86400 * 400):
        self.sessions = session_store
        self.clock = clock
        self.persistent_ttl = persistent_ttl
        self._lock = threading.Lock()
        self._notifications: dict[str, Notification] = {}

    def create(self, target: str, title: str, body: str, require_accept: bool = False) -> Notification:
        if not target:
            raise ValueError("target must be a uid or '_all'")
        notification = Notification(
            id=secrets.token_hex(8),
            target=target,
            title=title,
            body=body,
            created_at=self.clock(),
            require_accept=require_accept,
        )
        with self._lock:
            self._notifications[notification.id] = notification
        return notification

    def all(self) -> list[Notification]:
        with self._lock:
            return sorted(self._notifications.values(), key=lambda n: n.created_at)

    def get(self, notification_id: str) -> Notification | None:
        with self._lock:
            return self._notifications.get(notification_id)

    def _persistent(self, uid: str) -> Session:
        session = self.sessions.find_persistent(uid)
        if session is None:
            session = self.sessions.create(uid, {}, 0, self.persistent_ttl, kind=KIND_PERSISTENT)
        return session

    def _accepted_ids(self, uid: str) -> set[str]:
        session = self.sessions.find_persistent(uid)
        if session is None:
            return set()
        return {
            key[len(_ACCEPT_ATTR):]
            for key in session.attributes
            if key.startswith(_ACCEPT_ATTR)
        }

    def pending(self, uid: str) -> list[Notification]:
        accepted = self._accepted_ids(uid)
        return [
            n for n in self.all()
            if n.target in (uid, "_all") and n.id not in accepted
        ]

    def accept(self, uid: str, notification_id: str) -> bool:
        notification = self.get(notification_id)
        if notification is None or notification.target not in (uid, "_all"):
            return False
        now = self.clock()
        session = self._persistent(uid)
        key = _ACCEPT_ATTR + notification_id
        if key in session.attributes:
            return True  # acceptance is monotone
        session.attributes[key] = str(now)
        self.sessions.update(session)
        if notification.target == uid:
            with self._lock:
                notification.accepted_at = now
        return True


# --- AdaptativeAuthLevel ---------------------------------------------------------


@dataclass
class LevelRule:
    condition: Rule
    delta: int | None = None
    set_level: int | None = None


class AdaptativeAuthLevel:
    """Adjusts the session's authentication level from request conditions
    (client network, target vhost, ...). First matching rule applies."""

    def __init__(self, level_rules: list[LevelRule], session_store: SessionStore):
        self.level_rules = level_rules
        self.sessions = session_store

    def apply(self, session: Session, ctx: RequestCtx) -> int:
        for rule in self.level_rules:
            if evaluate(rule.condition, session, ctx) is Decision.ALLOW:
                if rule.set_level is not None:
                    level = rule.set_level
                else:
                    level = session.auth_level + (rule.delta or 0)
                level = max(0, level)
                if level != session.auth_level:
                    session.auth_level = level
                    session.attributes["authLevel"] = str(level)
                    self.sessions.update(session)
                return level
        return session.auth_level

    def entry_point(self, context: dict) -> None:
        session = context.get("session")
        request_ctx = context.get("request_ctx") or RequestCtx()
        if session is not None:
            self.apply(session, request_ctx)


# --- CheckUser --------------------------------------------------------------------


class CheckUserForbidden(Exception):
    pass


class CheckUserUnknownUser(Exception):
    pass


@dataclass
class CheckUserResult:
    allowed: str  # decision value: allow/deny/unprotect/skip
    matched_rule: str
    headers: dict[str, str]
    uid: str
    vhost: str
    uri: str
    synthetic: bool

    def to_dict(self) -> dict:
        return {
            "allowed": self.allowed,
            "matched_rule": self.matched_rule,
            "headers": self.headers,
            "uid": self.uid,
            "vhost": self.vhost,
            "uri": self.uri,
            "synthetic": self.synthetic,
        }


class CheckUser:
    """Read-only what-if: replays rule selection, evaluation and header
    rendering for a user and URL without touching the upstream or any state."""

    def __init__(
        self,
        session_store: SessionStore,
        user_store: UserStore,
        checkuser_admins: list[str],
        find_vhost: Callable[[str], "object | None"],
        devops_documents: Callable[[str], "object | None"] | None = None,
        clock: Clock = time.time,
    ):
        self.sessions = session_store
        self.users = user_store
        self.checkuser_admins = checkuser_admins
        self.find_vhost = find_vhost
        self.devops_documents = devops_documents
        self.clock = clock

    def _subject_session(self, uid: str) -> tuple[Session, bool]:
        live = self.sessions.search(uid=uid, kind="sso")
        if live:
            return live[-1], False
        record = self.users.get(uid)
        if record is None:
            raise CheckUserUnknownUser(uid)
        now = self.clock()
        attrs = dict(record.attributes)
        attrs["uid"] = uid
        synthetic = Session(
            sid="0" * 32, uid=uid, attributes=attrs, auth_level=1,
            created_at=now, expires_at=now + 60,
        )
        return synthetic, True

    def check(self, acting_admin: str, uid: str, url: str, client_ip: str = "127.0.0.1") -> CheckUserResult:
        from urllib.parse import urlsplit

        from .gateway import decide_access

        if acting_admin not in self.checkuser_admins:
            raise CheckUserForbidden(acting_admin)
        session, synthetic = self._subject_session(uid)
        parts = urlsplit(url)
        host = (parts.hostname or "").lower()
        uri = parts.path or "/"
        if parts.query:
            uri = f"{uri}?{parts.query}"
        vhost_cfg = self.find_vhost(host)
        if vhost_cfg is None:
            raise ValueError(f"unknown vhost {host!r}")
        rules_source = vhost_cfg
        if getattr(vhost_cfg, "handler_type", "main") == "devops":
            document = self.devops_documents(host) if self.devops_documents else None
            if document is None:
                return CheckUserResult(
                    allowed=Decision.DENY.value, matched_rule="default", headers={},
                    uid=uid, vhost=host, uri=uri, synthetic=synthetic,
                )
            rules_source = document
        ctx = RequestCtx(uri=uri, ip=client_ip, vhost=host)
        outcome = decide_access(vhost_cfg, rules_source, session, ctx)
        return CheckUserResult(
            allowed=outcome.decision.value,
            matched_rule=outcome.matched_rule,
            headers=outcome.headers,
            uid=uid,
            vhost=host,
            uri=uri,
            synthetic=synthetic,
        )
