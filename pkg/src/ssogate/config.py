"""Global configuration: a single validated JSON document with a monotonically
increasing version number, plus the commit/reload machinery behind the
administration API."""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import re
import threading
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from . import rules as rules_mod
from .accounting import AuditEvent, AuditLog

HANDLER_TYPES = ("main", "authbasic", "securetoken", "servicetoken", "devops", "oauth2")

DEFAULT_COOKIE_NAME = "lemonldap"
SERVICE_TOKEN_HEADER = "X-LLNG-TOKEN"


class ConfigError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class VHostConfig:
    vhost: str
    handler_type: str = "main"
    upstream: str = ""
    rules: list[tuple[str, rules_mod.Rule]] = field(default_factory=list)
    default_rule: rules_mod.Rule = field(default_factory=lambda: rules_mod.Special("accept"))
    headers: dict[str, str] = field(default_factory=dict)
    required_auth_level: int = 0
    service_token_targets: list[str] = field(default_factory=list)
    service_token_max_age: float = 30.0
    devops_cache_ttl: float = 600.0

    def to_dict(self) -> dict:
        return {
            "vhost": self.vhost,
            "handler_type": self.handler_type,
            "upstream": self.upstream,
            "rules": [[pattern, rules_mod.unparse(rule)] for pattern, rule in self.rules],
            "default_rule": rules_mod.unparse(self.default_rule),
            "headers": dict(self.headers),
            "required_auth_level": self.required_auth_level,
            "service_token_targets": list(self.service_token_targets),
            "service_token_max_age": self.service_token_max_age,
            "devops_cache_ttl": self.devops_cache_ttl,
        }


@dataclass
class OidcClientConfig:
    client_id: str
    client_secret_hash: str  # sha256 hex
    redirect_uris: list[str]
    allowed_scopes: list[str] = field(default_factory=lambda: ["openid", "profile", "email"])
    id_token_ttl: int = 3600
    access_ttl: int = 3600
    refresh_ttl: int = 30 * 86400

    def check_secret(self, secret: str) -> bool:
        digest = hashlib.sha256(secret.encode("utf-8")).hexdigest()
        return hmac.compare_digest(digest, self.client_secret_hash)

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "client_secret_hash": self.client_secret_hash,
            "redirect_uris": list(self.redirect_uris),
            "allowed_scopes": list(self.allowed_scopes),
            "id_token_ttl": self.id_token_ttl,
            "access_ttl": self.access_ttl,
            "refresh_ttl": self.refresh_ttl,
        }


def hash_client_secret(secret: str) -> str:
    return hashlib.sha256(secret.encode("utf-8")).hexdigest()


@dataclass
class PluginSettings:
    bruteforce_max_failures: int = 5
    bruteforce_window_seconds: float = 300
    bruteforce_lock_seconds: float = 300
    level_rules: list[dict] = field(default_factory=list)  # {condition, delta|set}
    checkuser_admins: list[str] = field(default_factory=list)
    manager_admins: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bruteforce": {
                "max_failures": self.bruteforce_max_failures,
                "window_seconds": self.bruteforce_window_seconds,
                "lock_seconds": self.bruteforce_lock_seconds,
            },
            "level_rules": list(self.level_rules),
            "checkuser_admins": list(self.checkuser_admins),
            "manager_admins": list(self.manager_admins),
        }


@dataclass
class GlobalConfig:
    cfg_num: int = 1
    sso_domain: str = "example.com"
    cookie_name: str = DEFAULT_COOKIE_NAME
    portal_url: str = "https://auth.example.com"
    external_scheme: str = "https"
    dev_mode: bool = False
    token_key: bytes = b""
    jwt_key_path: str = "conf/oidc-signing-key.pem"
    session_backend_kind: str = "memory"
    session_backend_root: str = "conf/sessions"
    session_ttl: float = 3600
    handler_cache_ttl: float = 120
    authbasic_session_ttl: float = 300
    user_store_path: str = "conf/users.json"
    accounting_path: str | None = None
    listen: dict[str, str] = field(default_factory=lambda: {
        "portal": "127.0.0.1:8081", "gateway": "127.0.0.1:8080", "manager": "127.0.0.1:8082",
    })
    vhosts: list[VHostConfig] = field(default_factory=list)
    oidc_clients: list[OidcClientConfig] = field(default_factory=list)
    cas_services: list[str] = field(default_factory=list)
    plugins: PluginSettings = field(default_factory=PluginSettings)
    auth_levels: dict[str, int] = field(default_factory=lambda: {"password": 1, "totp": 2, "mail": 2})

    def find_vhost(self, host: str) -> VHostConfig | None:
        host = (host or "").lower()
        for vhost in self.vhosts:
            if vhost.vhost == host:
                return vhost
        return None

    def find_oidc_client(self, client_id: str) -> OidcClientConfig | None:
        for client in self.oidc_clients:
            if client.client_id == client_id:
                return client
        return None

    @property
    def portal_host(self) -> str:
        return (urlsplit(self.portal_url).hostname or "").lower()

    def known_hosts(self) -> set[str]:
        hosts = {v.vhost for v in self.vhosts}
        hosts.add(self.portal_host)
        return hosts

    def to_dict(self) -> dict:
        return {
            "cfg_num": self.cfg_num,
            "sso_domain": self.sso_domain,
            "cookie_name": self.cookie_name,
            "portal_url": self.portal_url,
            "external_scheme": self.external_scheme,
            "dev_mode": self.dev_mode,
            "key_material": {
                "token_key_hex": self.token_key.hex(),
                "jwt_key_path": self.jwt_key_path,
            },
            "session_backend": {"kind": self.session_backend_kind, "root": self.session_backend_root},
            "session_ttl": self.session_ttl,
            "handler_cache_ttl": self.handler_cache_ttl,
            "authbasic_session_ttl": self.authbasic_session_ttl,
            "user_store": self.user_store_path,
            "accounting": {"path": self.accounting_path},
            "listen": dict(self.listen),
            "vhosts": [v.to_dict() for v in self.vhosts],
            "oidc_clients": [c.to_dict() for c in self.oidc_clients],
            "cas_services": list(self.cas_services),
            "plugins": self.plugins.to_dict(),
            "auth_levels": dict(self.auth_levels),
        }


def _parse_vhost(data: dict, errors: list[str]) -> VHostConfig | None:
    name = str(data.get("vhost", "")).lower()
    prefix = f"vhost {name or '?'}"
    if not name:
        errors.append(f"{prefix}: vhost name missing")
        return None
    handler_type = data.get("handler_type", "main")
    if handler_type not in HANDLER_TYPES:
        errors.append(f"{prefix}: unknown handler_type {handler_type!r}")
        return None
    parsed_rules: list[tuple[str, rules_mod.Rule]] = []
    ok = True
    for entry in data.get("rules", []):
        if not (isinstance(entry, (list, tuple)) and len(entry) == 2):
            errors.append(f"{prefix}: rules entries must be [uri_regex, rule] pairs")
            ok = False
            continue
        pattern, text = entry
        try:
            re.compile(pattern)
        except re.error as exc:
            errors.append(f"{prefix}: rule regex {pattern!r}: {exc}")
            ok = False
            continue
        try:
            parsed_rules.append((pattern, rules_mod.parse_rule(text)))
        except rules_mod.RuleParseError as exc:
            errors.append(f"{prefix}: rule for {pattern!r}: {exc}")
            ok = False
    default_text = data.get("default_rule", "deny")
    try:
        default_rule = rules_mod.parse_rule(default_text)
    except rules_mod.RuleParseError as exc:
        errors.append(f"{prefix}: default_rule: {exc}")
        return None
    headers = data.get("headers", {})
    if not isinstance(headers, dict):
        errors.append(f"{prefix}: headers must be an object")
        return None
    for header_name in headers:
        if not rules_mod.is_valid_header_name(header_name):
            errors.append(f"{prefix}: invalid header name {header_name!r}")
            ok = False
    level = data.get("required_auth_level", 0)
    if not isinstance(level, int) or level < 0:
        errors.append(f"{prefix}: required_auth_level must be an integer >= 0")
        ok = False
    if not ok:
        return None
    return VHostConfig(
        vhost=name,
        handler_type=handler_type,
        upstream=data.get("upstream", ""),
        rules=parsed_rules,
        default_rule=default_rule,
        headers={k: str(v) for k, v in headers.items()},
        required_auth_level=level,
        service_token_targets=[str(t).lower() for t in data.get("service_token_targets", [])],
        service_token_max_age=float(data.get("service_token_max_age", 30.0)),
        devops_cache_ttl=float(data.get("devops_cache_ttl", 600.0)),
    )


def _parse_oidc_client(data: dict, dev_mode: bool, errors: list[str]) -> OidcClientConfig | None:
    client_id = data.get("client_id", "")
    prefix = f"oidc client {client_id or '?'}"
    if not client_id:
        errors.append(f"{prefix}: client_id missing")
        return None
    secret_hash = data.get("client_secret_hash")
    if not secret_hash:
        plain = data.get("client_secret")
        if not plain:
            errors.append(f"{prefix}: client_secret or client_secret_hash required")
            return None
        secret_hash = hash_client_secret(plain)
    redirect_uris = data.get("redirect_uris", [])
    if not redirect_uris:
        errors.append(f"{prefix}: at least one redirect_uri required")
        return None
    ok = True
    for uri in redirect_uris:
        parts = urlsplit(uri)
        loopback = parts.hostname in ("127.0.0.1", "localhost", "::1")
        if parts.scheme == "https" or (parts.scheme == "http" and loopback and dev_mode):
            continue
        errors.append(f"{prefix}: redirect_uri {uri!r} must be absolute https"
                      + (" (http loopback allowed in dev mode)" if not dev_mode else ""))
        ok = False
    if not ok:
        return None
    return OidcClientConfig(
        client_id=client_id,
        client_secret_hash=secret_hash,
        redirect_uris=list(redirect_uris),
        allowed_scopes=list(data.get("allowed_scopes", ["openid", "profile", "email"])),
        id_token_ttl=int(data.get("id_token_ttl", 3600)),
        access_ttl=int(data.get("access_ttl", 3600)),
        refresh_ttl=int(data.get("refresh_ttl", 30 * 86400)),
    )


def config_from_dict(data: dict) -> GlobalConfig:
    """Parse and fully validate; raises ConfigError listing every problem."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config must be a JSON object"])

    key_material = data.get("key_material", {})
    token_key = b""
    token_key_hex = key_material.get("token_key_hex", "")
    if not token_key_hex:
        errors.append("key_material.token_key_hex missing (64 hex chars)")
    else:
        try:
            token_key = bytes.fromhex(token_key_hex)
        except ValueError:
            errors.append("key_material.token_key_hex is not hex")
        if token_key and len(token_key) != 32:
            errors.append("key_material.token_key_hex must decode to 32 bytes")

    dev_mode = bool(data.get("dev_mode", False))
    vhosts: list[VHostConfig] = []
    seen = set()
    for raw in data.get("vhosts", []):
        vhost = _parse_vhost(raw, errors)
        if vhost is None:
            continue
        if vhost.vhost in seen:
            errors.append(f"duplicate vhost {vhost.vhost!r}")
            continue
        seen.add(vhost.vhost)
        vhosts.append(vhost)
    for vhost in vhosts:
        for target in vhost.service_token_targets:
            if target not in seen:
                errors.append(f"vhost {vhost.vhost}: service token target {target!r} is not a configured vhost")

    clients: list[OidcClientConfig] = []
    seen_clients = set()
    for raw in data.get("oidc_clients", []):
        client = _parse_oidc_client(raw, dev_mode, errors)
        if client is None:
            continue
        if client.client_id in seen_clients:
            errors.append(f"duplicate oidc client {client.client_id!r}")
            continue
        seen_clients.add(client.client_id)
        clients.append(client)

    plugin_data = data.get("plugins", {})
    bruteforce = plugin_data.get("bruteforce", {})
    level_rules = plugin_data.get("level_rules", [])
    for index, raw in enumerate(level_rules):
        condition = raw.get("condition", "")
        try:
            rules_mod.parse_rule(condition)
        except rules_mod.RuleParseError as exc:
            errors.append(f"plugins.level_rules[{index}].condition: {exc}")
        if "delta" not in raw and "set" not in raw:
            errors.append(f"plugins.level_rules[{index}]: needs 'delta' or 'set'")

    session_backend = data.get("session_backend", {})
    backend_kind = session_backend.get("kind", "memory")
    if backend_kind not in ("memory", "file"):
        errors.append(f"session_backend.kind must be memory or file, got {backend_kind!r}")

    cas_services = data.get("cas_services", [])
    for service in cas_services:
        if not isinstance(service, str) or not service.startswith(("http://", "https://")):
            errors.append(f"cas_services entry {service!r} must be an absolute URL prefix")

    if errors:
        raise ConfigError(errors)

    settings = PluginSettings(
        bruteforce_max_failures=int(bruteforce.get("max_failures", 5)),
        bruteforce_window_seconds=float(bruteforce.get("window_seconds", 300)),
        bruteforce_lock_seconds=float(bruteforce.get("lock_seconds", 300)),
        level_rules=list(level_rules),
        checkuser_admins=list(plugin_data.get("checkuser_admins", [])),
        manager_admins=list(plugin_data.get("manager_admins", [])),
    )
    return GlobalConfig(
        cfg_num=int(data.get("cfg_num", 1)),
        sso_domain=data.get("sso_domain", "example.com"),
        cookie_name=data.get("cookie_name", DEFAULT_COOKIE_NAME),
        portal_url=data.get("portal_url", "https://auth.example.com").rstrip("/"),
        external_scheme=data.get("external_scheme", "https"),
        dev_mode=dev_mode,
        token_key=token_key,
        jwt_key_path=key_material.get("jwt_key_path", "conf/oidc-signing-key.pem"),
        session_backend_kind=backend_kind,
        session_backend_root=session_backend.get("root", "conf/sessions"),
        session_ttl=float(data.get("session_ttl", 3600)),
        handler_cache_ttl=float(data.get("handler_cache_ttl", 120)),
        authbasic_session_ttl=float(data.get("authbasic_session_ttl", 300)),
        user_store_path=data.get("user_store", "conf/users.json"),
        accounting_path=(data.get("accounting", {}) or {}).get("path"),
        listen=dict(data.get("listen", {"portal": "127.0.0.1:8081",
                                        "gateway": "127.0.0.1:8080",
                                        "manager": "127.0.0.1:8082"})),
        vhosts=vhosts,
        oidc_clients=clients,
        cas_services=list(cas_services),
        plugins=settings,
        auth_levels={**{"password": 1, "totp": 2, "mail": 2}, **data.get("auth_levels", {})},
    )


def load_config(path: str) -> GlobalConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return config_from_dict(data)


class ConfigManager:
    """Holds the current immutable config snapshot; commits are validated,
    persisted, archived and swapped in atomically."""

    def __init__(self, config: GlobalConfig, path: str | None = None, audit: AuditLog | None = None):
        self._current = config
        self.path = path
        self.audit = audit
        self._commit_lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str, audit: AuditLog | None = None) -> "ConfigManager":
        return cls(load_config(path), path=path, audit=audit)

    def current(self) -> GlobalConfig:
        return self._current

    def commit(self, new_data: dict, actor: str | None = None) -> int:
        """Validate and swap in a new configuration; returns the new cfg_num."""
        with self._commit_lock:
            config = config_from_dict(new_data)
            config.cfg_num = self._current.cfg_num + 1
            if self.path:
                payload = json.dumps(config.to_dict(), indent=2)
                directory = os.path.dirname(self.path) or "."
                os.makedirs(os.path.join(directory, "archive"), exist_ok=True)
                tmp = f"{self.path}.tmp"
                with open(tmp, "w", encoding="utf-8") as fh:
                    fh.write(payload)
                os.replace(tmp, self.path)
                archive = os.path.join(directory, "archive", f"{config.cfg_num}.json")
                with open(archive, "w", encoding="utf-8") as fh:
                    fh.write(payload)
            self._current = config
            if self.audit:
                self.audit.emit(AuditEvent(kind="admin_change", uid=actor,
                                           detail={"cfg_num": config.cfg_num}))
            return config.cfg_num
