"""SSO session records, pluggable storage back-ends and the handler-side cache.

Expiry is lazy: expired records are treated as absent and purged on read.
A clock callable is injected everywhere so tests control time.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

Clock = Callable[[], float]

SID_HEX_LEN = 32

KIND_SSO = "sso"
KIND_PERSISTENT = "persistent"
_KINDS = (KIND_SSO, KIND_PERSISTENT)


class SessionError(Exception):
    pass


class SessionNotFound(SessionError):
    pass


class SessionExpired(SessionError):
    pass


class BackendIOError(SessionError):
    pass


def new_sid() -> str:
    """16 random bytes, lowercase hex: 128 bits of entropy, 32 chars."""
    return secrets.token_hex(16)


def is_valid_sid(sid: str) -> bool:
    return len(sid) == SID_HEX_LEN and all(c in "0123456789abcdef" for c in sid)


@dataclass
class Session:
    sid: str
    uid: str
    attributes: dict[str, str]
    auth_level: int
    created_at: float
    expires_at: float
    kind: str = KIND_SSO

    def to_dict(self) -> dict:
        return {
            "sid": self.sid,
            "uid": self.uid,
            "attributes": dict(self.attributes),
            "auth_level": self.auth_level,
            "created_at": self.created_at,
            "expires_at": self.expires_at,
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Session":
        return cls(
            sid=data["sid"],
            uid=data["uid"],
            attributes=dict(data.get("attributes") or {}),
            auth_level=int(data.get("auth_level", 0)),
            created_at=float(data["created_at"]),
            expires_at=float(data["expires_at"]),
            kind=data.get("kind", KIND_SSO),
        )

    def copy(self) -> "Session":
        return replace(self, attributes=dict(self.attributes))


class MemoryBackend:
    """Thread-safe dict backend; empty at process start."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        self.reads = 0  # instrumentation for cache tests

    def put(self, session: Session) -> None:
        with self._lock:
            self._records[session.sid] = session.to_dict()

    def get(self, sid: str) -> dict | None:
        with self._lock:
            self.reads += 1
            record = self._records.get(sid)
            return dict(record) if record else None

    def delete(self, sid: str) -> bool:
        with self._lock:
            return self._records.pop(sid, None) is not None

    def list_sids(self) -> list[str]:
        with self._lock:
            return list(self._records)


class FileBackend:
    """One JSON file per sid under ``root``; writes are atomic via rename."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._lock = threading.Lock()
        self.reads = 0

    def _path(self, sid: str) -> str:
        if not is_valid_sid(sid):
            raise SessionNotFound(sid)
        return os.path.join(self.root, sid)

    def put(self, session: Session) -> None:
        path = self._path(session.sid)
        tmp = f"{path}.tmp.{threading.get_ident()}"
        try:
            with self._lock:
                with open(tmp, "w", encoding="utf-8") as fh:
                    json.dump(session.to_dict(), fh)
                os.replace(tmp, path)
        except OSError as exc:
            raise BackendIOError(str(exc)) from exc

    def get(self, sid: str) -> dict | None:
        self.reads += 1
        try:
            with open(self._path(sid), encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except SessionNotFound:
            return None
        except (OSError, ValueError) as exc:
            raise BackendIOError(str(exc)) from exc

    def delete(self, sid: str) -> bool:
        try:
            os.remove(self._path(sid))
            return True
        except FileNotFoundError:
            return False
        except SessionNotFound:
            return False
        except OSError as exc:
            raise BackendIOError(str(exc)) from exc

    def list_sids(self) -> list[str]:
        try:
            return [name for name in os.listdir(self.root) if is_valid_sid(name)]
        except OSError as exc:
            raise BackendIOError(str(exc)) from exc


class SessionStore:
    """Create/get/delete sessions on a backend, with lazy expiry."""

    def __init__(self, backend=None, clock: Clock = time.time):
        self.backend = backend if backend is not None else MemoryBackend()
        self.clock = clock

    def create(
        self,
        uid: str,
        attributes: dict[str, str] | None = None,
        auth_level: int = 1,
        ttl_seconds: float = 3600,
        kind: str = KIND_SSO,
    ) -> Session:
        if not uid:
            raise ValueError("uid must be non-empty")
        if ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be > 0")
        if kind not in _KINDS:
            raise ValueError(f"unknown session kind {kind!r}")
        now = self.clock()
        attrs = dict(attributes or {})
        attrs["uid"] = uid
        session = Session(
            sid=new_sid(),
            uid=uid,
            attributes=attrs,
            auth_level=auth_level,
            created_at=now,
            expires_at=now + ttl_seconds,
            kind=kind,
        )
        self.backend.put(session)
        return session.copy()

    def get(self, sid: str) -> Session:
        record = self.backend.get(sid)
        if record is None:
            raise SessionNotFound(sid)
        session = Session.from_dict(record)
        if self.clock() >= session.expires_at:
            self.backend.delete(sid)
            raise SessionExpired(sid)
        return session

    def lookup(self, sid: str) -> Session | None:
        """get() with absent/expired collapsed to None."""
        try:
            return self.get(sid)
        except SessionError:
            return None

    def update(self, session: Session) -> None:
        session.attributes["uid"] = session.uid
        self.backend.put(session)

    def delete(self, sid: str) -> bool:
        return self.backend.delete(sid)

    def sweep(self) -> int:
        """Purge expired records; returns the number removed."""
        removed = 0
        for sid in self.backend.list_sids():
            record = self.backend.get(sid)
            if record and self.clock() >= float(record["expires_at"]):
                if self.backend.delete(sid):
                    removed += 1
        return removed

    def iter_live(self) -> Iterator[Session]:
        for sid in self.backend.list_sids():
            session = self.lookup(sid)
            if session is not None:
                yield session

    def search(self, uid: str | None = None, kind: str | None = None) -> list[Session]:
        out = []
        for session in self.iter_live():
            if uid is not None and session.uid != uid:
                continue
            if kind is not None and session.kind != kind:
                continue
            out.append(session)
        out.sort(key=lambda s: s.created_at)
        return out

    def find_persistent(self, uid: str) -> Session | None:
        found = self.search(uid=uid, kind=KIND_PERSISTENT)
        return found[-1] if found else None


@dataclass
class _CacheSlot:
    session: Session
    cached_at: float
    ttl: float


class SessionCache:
    """Best-effort local cache in front of the store.

    A deleted session may still be served from here until its slot lapses;
    that staleness window is bounded by ``max_ttl``.
    """

    def __init__(self, max_ttl: float = 120.0, clock: Clock = time.time):
        self.max_ttl = max_ttl
        self.clock = clock
        self._lock = threading.Lock()
        self._slots: dict[str, _CacheSlot] = {}

    def put(self, session: Session, ttl: float | None = None) -> None:
        ttl = self.max_ttl if ttl is None else min(ttl, self.max_ttl)
        with self._lock:
            self._slots[session.sid] = _CacheSlot(session.copy(), self.clock(), ttl)

    def get(self, sid: str) -> Session | None:
        now = self.clock()
        with self._lock:
            slot = self._slots.get(sid)
            if slot is None:
                return None
            if now - slot.cached_at > slot.ttl or now >= slot.session.expires_at:
                del self._slots[sid]
                return None
            return slot.session.copy()

    def invalidate(self, sid: str) -> None:
        with self._lock:
            self._slots.pop(sid, None)


@dataclass
class CachedSessionReader:
    """cache-first read path used by the handlers (store fetch per miss)."""

    store: SessionStore
    cache: SessionCache

    def get(self, sid: str) -> Session | None:
        cached = self.cache.get(sid)
        if cached is not None:
            return cached
        session = self.store.lookup(sid)
        if session is not None:
            self.cache.put(session)
        return session
