"""Self-service vhost configuration: protected applications publish a
``rules.json`` at their web root; the gateway fetches, validates, caches and
enforces it. The same validator backs the check-devops tool."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from . import rules as rules_mod
from .sessions import Clock
from .web import HttpClient

FETCH_TIMEOUT = 2.0
DEFAULT_CACHE_TTL = 600.0
GRACE_FACTOR = 10  # last-known-good kept up to GRACE_FACTOR * ttl on refresh failure


class RulesFetchError(Exception):
    pass


@dataclass
class RulesDocument:
    """Parsed, validated rules.json: ordered (regex, rule) entries plus the
    default rule and exported-header templates."""

    rules: list[tuple[str, rules_mod.Rule]]
    default_rule: rules_mod.Rule
    headers: dict[str, str]
    raw: dict = field(default_factory=dict)


def validate_rules_document(obj: object) -> tuple[RulesDocument | None, list[str]]:
    """Schema + grammar + regex + header-name validation.

    Collects every error rather than stopping at the first; the fetch path and
    check_devops share this single code path.
    """
    import re

    errors: list[str] = []
    if not isinstance(obj, dict):
        return None, ["document must be a JSON object"]
    rules_map = obj.get("rules")
    if rules_map is None:
        errors.append("rules: missing")
        rules_map = {}
    elif not isinstance(rules_map, dict):
        errors.append("rules: must be an object of uri-regex -> rule text")
        rules_map = {}
    headers_map = obj.get("headers", {})
    if not isinstance(headers_map, dict):
        errors.append("headers: must be an object of header-name -> template")
        headers_map = {}
    for key in obj:
        if key not in ("rules", "headers"):
            errors.append(f"unknown key {key!r}")

    parsed_rules: list[tuple[str, rules_mod.Rule]] = []
    default_rule: rules_mod.Rule | None = None
    for pattern, text in rules_map.items():
        if not isinstance(text, str):
            errors.append(f"rules.{pattern}: rule must be a string")
            continue
        try:
            rule = rules_mod.parse_rule(text)
        except rules_mod.RuleParseError as exc:
            errors.append(f"rules.{pattern}: {exc}")
            continue
        if pattern == "default":
            default_rule = rule
            continue
        try:
            re.compile(pattern)
        except re.error as exc:
            errors.append(f"rules.{pattern}: invalid regex: {exc}")
            continue
        parsed_rules.append((pattern, rule))
    if "default" not in rules_map and isinstance(obj.get("rules"), dict):
        errors.append("rules.default missing")

    headers: dict[str, str] = {}
    for name, template in headers_map.items():
        if not rules_mod.is_valid_header_name(name):
            errors.append(f"headers.{name!r}: invalid header name")
            continue
        if not isinstance(template, str):
            errors.append(f"headers.{name}: template must be a string")
            continue
        headers[name] = template

    if errors:
        return None, errors
    assert default_rule is not None
    return RulesDocument(rules=parsed_rules, default_rule=default_rule, headers=headers, raw=obj), []


def check_devops(document_text: str) -> list[str]:
    """Validate a rules.json payload; returns the full error list (empty = ok)."""
    try:
        obj = json.loads(document_text)
    except ValueError as exc:
        return [f"not valid JSON: {exc}"]
    _, errors = validate_rules_document(obj)
    return errors


@dataclass
class RulesCacheEntry:
    document: RulesDocument
    fetched_at: float
    etag: str | None = None


class DevOpsRulesCache:
    """Per-vhost rules.json cache with single-flight refresh.

    A stale entry inside the grace window keeps serving while one caller
    refreshes; with no usable entry the vhost fails closed (callers get None).
    """

    def __init__(
        self,
        http_client: HttpClient,
        default_ttl: float = DEFAULT_CACHE_TTL,
        clock: Clock = time.time,
    ):
        self.http_client = http_client
        self.default_ttl = default_ttl
        self.clock = clock
        self._entries: dict[str, RulesCacheEntry] = {}
        self._lock = threading.Lock()
        self._flights: dict[str, threading.Lock] = {}
        self.fetches = 0  # instrumentation
        self.on_invalid: Callable[[str, list[str]], None] | None = None

    def _flight(self, key: str) -> threading.Lock:
        with self._lock:
            lock = self._flights.get(key)
            if lock is None:
                lock = threading.Lock()
                self._flights[key] = lock
            return lock

    def _fetch(self, origin: str, etag: str | None) -> tuple[RulesDocument, str | None] | None:
        url = origin.rstrip("/") + "/rules.json"
        headers = [("Accept", "application/json")]
        if etag:
            headers.append(("If-None-Match", etag))
        self.fetches += 1
        try:
            result = self.http_client("GET", url, headers, None, FETCH_TIMEOUT)
        except Exception as exc:
            raise RulesFetchError(f"unreachable: {exc}") from exc
        if result.status == 304 and etag is not None:
            return None  # unchanged
        if result.status != 200:
            raise RulesFetchError(f"unreachable: HTTP {result.status}")
        try:
            obj = json.loads(result.body.decode("utf-8"))
        except ValueError as exc:
            raise RulesFetchError(f"invalid-document: not valid JSON: {exc}") from exc
        document, errors = validate_rules_document(obj)
        if document is None:
            raise RulesFetchError(f"invalid-document: {errors[0]}")
        new_etag = next((v for k, v in result.headers if k.lower() == "etag"), None)
        return document, new_etag

    def fetch_rules(self, origin: str) -> RulesDocument:
        """One-shot fetch+validate (no cache); raises RulesFetchError."""
        fetched = self._fetch(origin, None)
        assert fetched is not None
        return fetched[0]

    def get_document(self, vhost: str, origin: str, ttl: float | None = None) -> RulesDocument | None:
        ttl = self.default_ttl if ttl is None else ttl
        key = f"{vhost}|{origin}"
        now = self.clock()
        with self._lock:
            entry = self._entries.get(key)
        if entry is not None and now - entry.fetched_at <= ttl:
            return entry.document
        flight = self._flight(key)
        # cold start blocks every caller until a document exists; stale entries
        # are refreshed by a single caller while the rest keep serving stale
        if flight.acquire(blocking=entry is None):
            try:
                with self._lock:
                    entry = self._entries.get(key)
                now = self.clock()
                if entry is None or now - entry.fetched_at > ttl:
                    try:
                        fetched = self._fetch(origin, entry.etag if entry else None)
                        if fetched is None:
                            entry.fetched_at = now  # 304: revalidated
                        else:
                            entry = RulesCacheEntry(fetched[0], now, fetched[1])
                            with self._lock:
                                self._entries[key] = entry
                    except RulesFetchError as exc:
                        if self.on_invalid:
                            self.on_invalid(vhost, [str(exc)])
            finally:
                flight.release()
        with self._lock:
            entry = self._entries.get(key)
        if entry is None:
            return None
        if self.clock() - entry.fetched_at > ttl * GRACE_FACTOR:
            with self._lock:
                self._entries.pop(key, None)
            return None
        return entry.document

    def peek(self, vhost: str, origin: str, ttl: float | None = None) -> RulesDocument | None:
        """Cached document without triggering any fetch (check_user path)."""
        ttl = self.default_ttl if ttl is None else ttl
        with self._lock:
            entry = self._entries.get(f"{vhost}|{origin}")
        if entry is None:
            return None
        if self.clock() - entry.fetched_at > ttl * GRACE_FACTOR:
            return None
        return entry.document
