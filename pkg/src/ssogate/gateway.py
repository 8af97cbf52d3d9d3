"""Reverse-proxy protection handler: resolves a session per vhost handler
type, enforces access rules, injects identity headers and relays the
upstream response."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from . import tokens
from .accounting import AuditEvent, AuditLog, redact
from .config import SERVICE_TOKEN_HEADER, ConfigManager, GlobalConfig, VHostConfig
from .devops import DevOpsRulesCache
from .rules import Decision, RequestCtx, evaluate_explain, render_headers, select_rule
from .sessions import CachedSessionReader, Clock, Session, is_valid_sid
from .users import UserRecord
from .web import (
    HOP_BY_HOP,
    HttpClient,
    Request,
    Response,
    b64url_encode,
    json_response,
    redirect_response,
    text_response,
)

UPSTREAM_TIMEOUT = 10.0

# (uid, password, client_ip) -> ("ok", user) | ("bad", None) | ("locked", None)
BasicAuthFn = Callable[[str, str, str], "tuple[str, UserRecord | None]"]


@dataclass
class AccessOutcome:
    decision: Decision
    matched_rule: str
    headers: dict[str, str]
    error: str | None = None


def decide_access(vhost: VHostConfig, rules_source, session: Session | None, ctx: RequestCtx) -> AccessOutcome:
    """Rule selection + evaluation + header rendering, shared with check_user.

    ``rules_source`` carries .rules/.default_rule/.headers: the vhost config
    itself, or the fetched rules document for devops vhosts.
    """
    pattern, rule = select_rule(rules_source, ctx.uri)
    decision, error = evaluate_explain(rule, session, ctx)
    if (
        decision is Decision.ALLOW
        and session is not None
        and session.auth_level < vhost.required_auth_level
    ):
        decision = Decision.DENY
        error = f"auth level {session.auth_level} below required {vhost.required_auth_level}"
    templates = getattr(rules_source, "headers", {}) or {}
    if decision is Decision.ALLOW:
        headers = render_headers(templates, session)
    elif decision is Decision.SKIP:
        headers = render_headers(templates, None)
    else:
        headers = {}
    return AccessOutcome(decision=decision, matched_rule=pattern, headers=headers, error=error)


@dataclass
class _ProxyPlan:
    inject: dict[str, str] = field(default_factory=dict)
    strip: set = field(default_factory=set)
    session: Session | None = None


class Gateway:
    def __init__(
        self,
        config_manager: ConfigManager,
        session_reader: CachedSessionReader,
        audit: AuditLog,
        http_client: HttpClient,
        devops_cache: DevOpsRulesCache | None = None,
        basic_auth: BasicAuthFn | None = None,
        clock: Clock = time.time,
    ):
        self.config_manager = config_manager
        self.reader = session_reader
        self.audit = audit
        self.http_client = http_client
        self.devops_cache = devops_cache
        self.basic_auth = basic_auth
        self.clock = clock
        self._lock = threading.Lock()
        self._basic_sessions: dict[str, tuple[str, float]] = {}  # uid -> (sid, created)

    # --- SID resolution per handler type -----------------------------------------

    def _resolve_main(self, request: Request, config: GlobalConfig) -> Session | None:
        sid = request.cookies.get(config.cookie_name, "")
        if not is_valid_sid(sid):
            return None
        return self.reader.get(sid)

    def _resolve_securetoken(self, request: Request, config: GlobalConfig) -> Session | None:
        blob = request.cookies.get(config.cookie_name + "s", "")
        if not blob:
            return None
        try:
            sid = tokens.unseal_sid(blob, config.token_key)
        except tokens.TokenError:
            return None
        if not is_valid_sid(sid):
            return None
        return self.reader.get(sid)

    def _resolve_authbasic(
        self, request: Request, config: GlobalConfig, vhost: VHostConfig
    ) -> tuple[Session | None, Response | None]:
        challenge = Response(status=401)
        challenge.headers.set("WWW-Authenticate", 'Basic realm="LLNG"')
        challenge.body = b"authentication required"
        header = request.headers.get("Authorization", "") or ""
        if not header.startswith("Basic ") or self.basic_auth is None:
            return None, challenge
        import base64

        try:
            decoded = base64.b64decode(header[6:]).decode("utf-8")
            uid, _, password = decoded.partition(":")
        except (ValueError, UnicodeDecodeError):
            return None, challenge
        status, user = self.basic_auth(uid, password, request.client_ip)
        if status != "ok" or user is None:
            return None, challenge
        now = self.clock()
        with self._lock:
            known = self._basic_sessions.get(uid)
        if known is not None:
            sid, created = known
            if now - created <= config.authbasic_session_ttl:
                session = self.reader.store.lookup(sid)
                if session is not None:
                    return session, None
        attributes = dict(user.attributes)
        if user.mail:
            attributes.setdefault("mail", user.mail)
        session = self.reader.store.create(
            uid, attributes, auth_level=config.auth_levels["password"],
            ttl_seconds=config.authbasic_session_ttl,
        )
        with self._lock:
            self._basic_sessions[uid] = (session.sid, now)
        self.audit.emit(AuditEvent(
            kind="auth_success", uid=uid, client_ip=request.client_ip,
            vhost=vhost.vhost, uri=request.uri, detail={"method": "password-basic"},
        ))
        self.audit.emit(AuditEvent(
            kind="session_create", uid=uid, sid=session.sid,
            client_ip=request.client_ip, vhost=vhost.vhost, uri=request.uri,
            detail={"method": "password-basic"},
        ))
        return session, None

    def _reject_token(self, request: Request, vhost: VHostConfig, reason: str, token: str) -> Response:
        self.audit.emit(AuditEvent(
            kind="token_reject", vhost=vhost.vhost, uri=request.uri,
            client_ip=request.client_ip,
            detail={"reason": reason, "token_prefix": redact(token)},
        ))
        return json_response(401, {"error": reason})

    def _resolve_servicetoken(
        self, request: Request, config: GlobalConfig, vhost: VHostConfig
    ) -> tuple[Session | None, dict[str, str], Response | None]:
        blob = request.headers.get(SERVICE_TOKEN_HEADER, "") or ""
        if not blob:
            return None, {}, self._reject_token(request, vhost, "missing-token", "")
        try:
            claims = tokens.verify_service_token(
                blob, vhost.vhost, self.clock(), config.token_key,
                max_age_seconds=vhost.service_token_max_age,
            )
        except tokens.TokenOutOfScope:
            return None, {}, self._reject_token(request, vhost, "out-of-scope", blob)
        except tokens.TokenExpired:
            return None, {}, self._reject_token(request, vhost, "expired", blob)
        except tokens.TokenError:
            return None, {}, self._reject_token(request, vhost, "tampered", blob)
        session = self.reader.get(claims.sid)
        if session is None:
            return None, {}, self._reject_token(request, vhost, "session-gone", blob)
        return session, dict(claims.service_headers), None

    def _resolve_oauth2(
        self, request: Request, config: GlobalConfig, vhost: VHostConfig
    ) -> tuple[Session | None, Response | None]:
        header = request.headers.get("Authorization", "") or ""
        if not header.startswith("Bearer "):
            return None, self._reject_token(request, vhost, "missing-bearer", "")
        blob = header[7:].strip()
        try:
            payload = tokens.unseal_access_token(blob, config.token_key)
        except tokens.TokenError:
            return None, self._reject_token(request, vhost, "tampered", blob)
        if self.clock() > float(payload.get("exp", 0)):
            return None, self._reject_token(request, vhost, "expired", blob)
        session = self.reader.get(payload.get("sid", ""))
        if session is None:
            return None, self._reject_token(request, vhost, "session-gone", blob)
        return session, None

    # --- main entry ------------------------------------------------------------------

    def handle(self, request: Request) -> Response:
        config = self.config_manager.current()  # one snapshot per request
        vhost = config.find_vhost(request.host)
        if vhost is None:
            return text_response(421, f"unknown vhost {request.host!r}")

        extra_inject: dict[str, str] = {}
        session: Session | None = None
        rules_source = vhost

        if vhost.handler_type == "devops":
            document = None
            if self.devops_cache is not None and vhost.upstream:
                document = self.devops_cache.get_document(
                    vhost.vhost, vhost.upstream, ttl=vhost.devops_cache_ttl
                )
            if document is None:
                # never forward a request this vhost cannot evaluate
                self._audit_authz(request, vhost, None, Decision.DENY, "no-rules-document", None)
                return text_response(403, "access rules unavailable")
            rules_source = document

        ctx = RequestCtx(uri=request.uri, ip=request.client_ip, vhost=vhost.vhost)
        _, rule = select_rule(rules_source, ctx.uri)
        needs_session = getattr(rule, "kind", None) not in ("unprotect", "skip")

        if needs_session:
            if vhost.handler_type in ("main", "devops"):
                session = self._resolve_main(request, config)
            elif vhost.handler_type == "securetoken":
                session = self._resolve_securetoken(request, config)
            elif vhost.handler_type == "authbasic":
                session, challenge = self._resolve_authbasic(request, config, vhost)
                if session is None:
                    return challenge
            elif vhost.handler_type == "servicetoken":
                session, extra_inject, reject = self._resolve_servicetoken(request, config, vhost)
                if session is None:
                    return reject
            elif vhost.handler_type == "oauth2":
                session, reject = self._resolve_oauth2(request, config, vhost)
                if session is None:
                    return reject

        if session is None and needs_session:
            if request.accepts_html():
                original = f"{config.external_scheme}://{request.host}{request.uri}"
                return redirect_response(
                    f"{config.portal_url}/login?url={b64url_encode(original)}"
                )
            return json_response(401, {"error": "authentication required"})

        outcome = decide_access(vhost, rules_source, session, ctx)
        self._audit_authz(request, vhost, session, outcome.decision, outcome.error, outcome.matched_rule)
        if outcome.decision is Decision.DENY:
            return text_response(403, "forbidden")

        inject = dict(outcome.headers)
        forward_session = session
        if outcome.decision is Decision.UNPROTECT:
            inject = {}
            forward_session = None
        elif outcome.decision is Decision.SKIP:
            forward_session = None
        inject.update(extra_inject)
        return self._forward(request, config, vhost, forward_session, inject)

    def _audit_authz(self, request, vhost, session, decision, error, matched) -> None:
        kind = "authz_deny" if decision is Decision.DENY else "authz_allow"
        detail = {"decision": decision.value, "matched_rule": matched or "-"}
        if error:
            detail["error"] = error
        self.audit.emit(AuditEvent(
            kind=kind,
            uid=session.uid if session else None,
            sid=session.sid if session else None,
            vhost=vhost.vhost, uri=request.uri, client_ip=request.client_ip,
            detail=detail,
        ))

    # --- forwarding --------------------------------------------------------------------

    def _forward(
        self,
        request: Request,
        config: GlobalConfig,
        vhost: VHostConfig,
        session: Session | None,
        inject: dict[str, str],
    ) -> Response:
        strip = {name.lower() for name in vhost.headers}
        strip |= {name.lower() for name in inject}
        strip |= HOP_BY_HOP
        strip |= {"host", SERVICE_TOKEN_HEADER.lower(), "content-length"}
        if vhost.handler_type in ("authbasic", "oauth2", "servicetoken"):
            strip.add("authorization")  # consumed as credentials, never relayed

        out_headers: list[tuple[str, str]] = [
            (name, value) for name, value in request.headers if name.lower() not in strip
        ]
        xff = request.headers.get("X-Forwarded-For")
        out_headers = [(n, v) for n, v in out_headers if n.lower() != "x-forwarded-for"]
        out_headers.append(("X-Forwarded-For", f"{xff}, {request.client_ip}" if xff else request.client_ip))
        out_headers.append(("X-Forwarded-Host", request.headers.get("Host", "") or ""))
        out_headers.append(("X-Forwarded-Proto", config.external_scheme))
        for name, value in inject.items():
            out_headers.append((name, value))

        if session is not None and vhost.service_token_targets:
            claims = tokens.ServiceTokenClaims(
                sid=session.sid,
                vhosts=list(vhost.service_token_targets),
                issued_at=self.clock(),
                service_headers={"X-Src-Host": vhost.vhost},
            )
            service_token = tokens.mint_service_token(claims, config.token_key)
            out_headers.append((SERVICE_TOKEN_HEADER, service_token))
            self.audit.emit(AuditEvent(
                kind="token_mint", uid=session.uid, sid=session.sid,
                vhost=vhost.vhost, uri=request.uri, client_ip=request.client_ip,
                detail={"type": "service_token", "targets": list(vhost.service_token_targets),
                        "token_prefix": redact(service_token)},
            ))

        url = vhost.upstream.rstrip("/") + request.uri
        try:
            result = self.http_client(
                request.method, url, out_headers, request.body or None, UPSTREAM_TIMEOUT
            )
        except Exception as exc:
            return text_response(503, f"upstream unreachable: {exc}")

        response = Response(status=result.status, body=result.body)
        for name, value in result.headers:
            if name.lower() in HOP_BY_HOP or name.lower() == "content-length":
                continue
            response.headers.add(name, value)
        return response
