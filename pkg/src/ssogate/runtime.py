"""Builds the running service graph (stores, plugins, portal, gateway,
manager) from a configuration. Used by the CLI and by end-to-end tests."""

from __future__ import annotations

import time
from dataclasses import dataclass

from . import jws
from .accounting import AuditEvent, AuditLog
from .config import ConfigManager, GlobalConfig
from .devops import DevOpsRulesCache
from .gateway import Gateway
from .mail import MemoryMailTransport
from .manager import ManagerApp
from .plugins import (
    AFTER_SESSION_CREATE,
    AdaptativeAuthLevel,
    BruteForceProtection,
    CheckUser,
    LevelRule,
    NotificationStore,
    PluginEngine,
)
from .portal import Portal
from .rules import parse_rule
from .sessions import (
    CachedSessionReader,
    Clock,
    FileBackend,
    MemoryBackend,
    SessionCache,
    SessionStore,
)
from .users import UserRecord, UserStore
from .web import HttpClient, httpx_client


@dataclass
class Runtime:
    config_manager: ConfigManager
    audit: AuditLog
    sessions: SessionStore
    cache: SessionCache
    reader: CachedSessionReader
    users: UserStore
    engine: PluginEngine
    bruteforce: BruteForceProtection
    notifications: NotificationStore
    checkuser: CheckUser
    devops_cache: DevOpsRulesCache
    mail_transport: object
    portal: Portal
    gateway: Gateway
    manager: ManagerApp
    clock: Clock


def _level_rules(config: GlobalConfig) -> list[LevelRule]:
    out = []
    for raw in config.plugins.level_rules:
        out.append(LevelRule(
            condition=parse_rule(raw["condition"]),
            delta=raw.get("delta"),
            set_level=raw.get("set"),
        ))
    return out


def basic_authenticator(users: UserStore, bruteforce: BruteForceProtection, audit: AuditLog):
    """Password check for the Basic-auth handler, wired through the same
    brute-force protection as the portal login form."""

    def authenticate(uid: str, password: str, client_ip: str):
        if bruteforce.check(uid) is not None:
            audit.emit(AuditEvent(kind="auth_locked", uid=uid, client_ip=client_ip,
                                  detail={"via": "authbasic"}))
            return "locked", None
        if not users.check_password(uid, password):
            bruteforce.record_failure(uid)
            audit.emit(AuditEvent(kind="auth_failure", uid=uid, client_ip=client_ip,
                                  detail={"reason": "bad-credentials", "via": "authbasic"}))
            return "bad", None
        bruteforce.record_success(uid)
        return "ok", users.require(uid)

    return authenticate


def build_runtime(
    config_manager: ConfigManager,
    *,
    clock: Clock = time.time,
    http_client: HttpClient | None = None,
    mail_transport=None,
    audit: AuditLog | None = None,
    signing_key=None,
) -> Runtime:
    from .federation import CasServer, OidcProvider

    config = config_manager.current()
    if audit is None:
        audit = AuditLog(config.accounting_path, clock=clock)
    if config_manager.audit is None:
        config_manager.audit = audit
    if http_client is None:
        http_client = httpx_client()
    if mail_transport is None:
        mail_transport = MemoryMailTransport()
    if signing_key is None:
        signing_key = jws.load_or_create_keypair(config.jwt_key_path)

    backend = (
        FileBackend(config.session_backend_root)
        if config.session_backend_kind == "file"
        else MemoryBackend()
    )
    sessions = SessionStore(backend, clock=clock)
    cache = SessionCache(max_ttl=config.handler_cache_ttl, clock=clock)
    reader = CachedSessionReader(sessions, cache)
    users = UserStore(config.user_store_path)

    engine = PluginEngine(audit)
    bruteforce = BruteForceProtection(
        users,
        max_failures=config.plugins.bruteforce_max_failures,
        window_seconds=config.plugins.bruteforce_window_seconds,
        lock_seconds=config.plugins.bruteforce_lock_seconds,
        clock=clock,
    )
    notifications = NotificationStore(sessions, clock=clock)
    adaptative = AdaptativeAuthLevel(_level_rules(config), sessions)
    engine.register(AFTER_SESSION_CREATE, adaptative.entry_point, name="AdaptativeAuthLevel")

    devops_cache = DevOpsRulesCache(http_client, clock=clock)
    checkuser = CheckUser(
        sessions,
        users,
        config.plugins.checkuser_admins,
        find_vhost=lambda host: config_manager.current().find_vhost(host),
        devops_documents=lambda host: _peek_devops(config_manager.current(), devops_cache, host),
        clock=clock,
    )

    cas = CasServer(sessions, audit, clock=clock)
    oidc = OidcProvider(sessions, audit, signing_key, config.token_key, clock=clock)
    portal = Portal(
        config_manager, sessions, users, audit, engine, bruteforce,
        notifications, mail_transport, cas, oidc, clock=clock,
    )
    gateway = Gateway(
        config_manager, reader, audit, http_client,
        devops_cache=devops_cache,
        basic_auth=basic_authenticator(users, bruteforce, audit),
        clock=clock,
    )
    manager = ManagerApp(
        config_manager, sessions, cache, users, audit, notifications, checkuser, clock=clock,
    )
    return Runtime(
        config_manager=config_manager,
        audit=audit,
        sessions=sessions,
        cache=cache,
        reader=reader,
        users=users,
        engine=engine,
        bruteforce=bruteforce,
        notifications=notifications,
        checkuser=checkuser,
        devops_cache=devops_cache,
        mail_transport=mail_transport,
        portal=portal,
        gateway=gateway,
        manager=manager,
        clock=clock,
    )


def _peek_devops(config: GlobalConfig, cache: DevOpsRulesCache, host: str):
    vhost = config.find_vhost(host)
    if vhost is None or vhost.handler_type != "devops":
        return None
    return cache.peek(vhost.vhost, vhost.upstream, ttl=vhost.devops_cache_ttl)


def ensure_user(users: UserStore, uid: str, password: str, attributes=None, mail=None) -> UserRecord:
    existing = users.get(uid)
    if existing is not None:
        return existing
    return users.add(uid, password, attributes=attributes, mail=mail)
