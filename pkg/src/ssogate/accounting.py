"""Append-only audit trail: one JSON object per line, fixed key order.

Events never carry full session ids or tokens, only an 8-char prefix.
"""

from __future__ import annotations

import json
import os
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, TextIO

Clock = Callable[[], float]

KINDS = (
    "auth_success",
    "auth_failure",
    "auth_locked",
    "authz_allow",
    "authz_deny",
    "session_create",
    "session_delete",
    "token_mint",
    "token_reject",
    "cas_validate",
    "oidc_token",
    "admin_change",
    "plugin_abort",
)

# kinds whose write is flushed to disk before the triggering response is sent
_DURABLE_KINDS = {k for k in KINDS if k.startswith(("auth_", "token_"))} | {"admin_change"}


def redact(value: str | None, keep: int = 8) -> str:
    """Prefix-only form of a secret-bearing identifier for log lines."""
    if not value:
        return "-"
    return value[:keep]


@dataclass
class AuditEvent:
    kind: str
    uid: str | None = None
    sid: str | None = None  # full sid accepted; only the prefix is persisted
    vhost: str | None = None
    uri: str | None = None
    client_ip: str | None = None
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown audit kind {self.kind!r}")


class AuditLog:
    """Serialized single-writer sink; ``emit`` is callable from any worker."""

    def __init__(self, path: str | None = None, clock: Clock = time.time):
        self.path = path
        self.clock = clock
        self._lock = threading.Lock()
        self._fh: TextIO | None = None
        if path:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            self._fh = open(path, "a", encoding="utf-8")

    def close(self) -> None:
        with self._lock:
            if self._fh:
                self._fh.close()
                self._fh = None

    def _serialize(self, event: AuditEvent) -> str:
        record = {
            "ts": int(self.clock() * 1000),
            "kind": event.kind,
            "uid": event.uid or "-",
            "sid_prefix": redact(event.sid),
            "vhost": event.vhost or "-",
            "uri": event.uri or "-",
            "client_ip": event.client_ip or "-",
            "detail": event.detail,
        }
        return json.dumps(record, ensure_ascii=False)

    def emit(self, event: AuditEvent) -> None:
        line = self._serialize(event)
        durable = event.kind in _DURABLE_KINDS
        with self._lock:
            sink = self._fh if self._fh else sys.stderr
            try:
                sink.write(line + "\n")
                sink.flush()
                if durable and self._fh:
                    os.fsync(self._fh.fileno())
            except OSError:
                # accounting must never block a decision; degrade to stderr
                if sink is not sys.stderr:
                    try:
                        sys.stderr.write(line + "\n")
                    except OSError:
                        pass

    def query(
        self,
        kind: str | None = None,
        uid: str | None = None,
        since: float | None = None,
        until: float | None = None,
        limit: int = 100,
    ) -> list[dict]:
        """Filtered scan of the sink file, newest first."""
        if not self.path or not os.path.exists(self.path):
            return []
        with self._lock:
            if self._fh:
                self._fh.flush()
            with open(self.path, encoding="utf-8") as fh:
                lines = fh.readlines()
        out: list[dict] = []
        for line in reversed(lines):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError:
                continue
            if kind is not None and record.get("kind") != kind:
                continue
            if uid is not None and record.get("uid") != uid:
                continue
            ts_seconds = record.get("ts", 0) / 1000.0
            if since is not None and ts_seconds < since:
                continue
            if until is not None and ts_seconds > until:
                continue
            out.append(record)
            if len(out) >= limit:
                break
        return out
