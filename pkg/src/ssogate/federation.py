"""Identity-provider endpoints: a CAS v2 server and an OpenID Connect provider
restricted to the Authorization Code flow."""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field
from urllib.parse import urlencode, urlsplit
from xml.sax.saxutils import escape

from cryptography.hazmat.primitives.asymmetric import rsa

from . import jws, tokens
from .accounting import AuditEvent, AuditLog, redact
from .config import GlobalConfig
from .sessions import Clock, Session, SessionStore
from .web import Request, Response, json_response, redirect_response, text_response

CAS_TICKET_TTL = 60.0
AZC_TTL = 60.0

_CAS_XMLNS = "http://www.yale.edu/tp/cas"


@dataclass
class CasServiceTicket:
    ticket: str
    service: str
    sid: str
    uid: str
    attributes: dict[str, str]
    issued_at: float
    consumed: bool = False


def _append_query(url: str, params: dict[str, str]) -> str:
    sep = "&" if urlsplit(url).query else "?"
    return url + sep + urlencode(params)


class CasServer:
    def __init__(self, session_store: SessionStore, audit: AuditLog, clock: Clock = time.time):
        self.sessions = session_store
        self.audit = audit
        self.clock = clock
        self._lock = threading.Lock()
        self._tickets: dict[str, CasServiceTicket] = {}

    def _service_registered(self, config: GlobalConfig, service: str) -> bool:
        return any(service.startswith(prefix) for prefix in config.cas_services)

    def login(self, request: Request, config: GlobalConfig, session: Session | None) -> Response | None:
        """None means: authentication required, portal should bounce to /login."""
        service = request.query.get("service", "")
        if not service:
            return text_response(400, "missing service parameter")
        if not self._service_registered(config, service):
            return text_response(400, f"unknown CAS service: {service}")
        if session is None:
            return None
        ticket = CasServiceTicket(
            ticket="ST-" + secrets.token_hex(16),
            service=service,
            sid=session.sid,
            uid=session.uid,
            attributes=dict(session.attributes),
            issued_at=self.clock(),
        )
        with self._lock:
            self._tickets[ticket.ticket] = ticket
        self.audit.emit(AuditEvent(
            kind="token_mint", uid=session.uid, sid=session.sid,
            vhost=config.portal_host, uri=request.uri, client_ip=request.client_ip,
            detail={"type": "cas_ticket", "ticket_prefix": redact(ticket.ticket), "service": service},
        ))
        return redirect_response(_append_query(service, {"ticket": ticket.ticket}))

    def _consume(self, ticket_id: str, service: str) -> tuple[CasServiceTicket | None, str]:
        """Atomically consume; returns (ticket, failure_code)."""
        now = self.clock()
        with self._lock:
            ticket = self._tickets.get(ticket_id)
            if ticket is None or ticket.consumed or now - ticket.issued_at > CAS_TICKET_TTL:
                return None, "INVALID_TICKET"
            if ticket.service != service:
                return None, "INVALID_SERVICE"
            ticket.consumed = True
            return ticket, ""

    def service_validate(self, request: Request, config: GlobalConfig) -> Response:
        service = request.query.get("service", "")
        ticket_id = request.query.get("ticket", "")
        ticket, failure = ("", "INVALID_REQUEST") if not (service and ticket_id) else (None, "")
        if not failure:
            ticket, failure = self._consume(ticket_id, service)
        self.audit.emit(AuditEvent(
            kind="cas_validate",
            uid=ticket.uid if isinstance(ticket, CasServiceTicket) else None,
            vhost=config.portal_host, uri="/cas/serviceValidate", client_ip=request.client_ip,
            detail={"ticket_prefix": redact(ticket_id), "service": service,
                    "result": failure or "success"},
        ))
        if not isinstance(ticket, CasServiceTicket):
            body = (
                f'<cas:serviceResponse xmlns:cas="{_CAS_XMLNS}">\n'
                f'  <cas:authenticationFailure code="{failure}">'
                f"{escape(redact(ticket_id))} not recognized</cas:authenticationFailure>\n"
                f"</cas:serviceResponse>\n"
            )
            return text_response(200, body, "text/xml; charset=utf-8")
        attr_lines = []
        for name, value in sorted(ticket.attributes.items()):
            if name.replace("_", "").replace("-", "").isalnum() and name[0].isalpha():
                tag = name.replace("-", "_")
                attr_lines.append(f"      <cas:{tag}>{escape(value)}</cas:{tag}>")
        attributes_block = ""
        if attr_lines:
            attributes_block = "    <cas:attributes>\n" + "\n".join(attr_lines) + "\n    </cas:attributes>\n"
        body = (
            f'<cas:serviceResponse xmlns:cas="{_CAS_XMLNS}">\n'
            f"  <cas:authenticationSuccess>\n"
            f"    <cas:user>{escape(ticket.uid)}</cas:user>\n"
            f"{attributes_block}"
            f"  </cas:authenticationSuccess>\n"
            f"</cas:serviceResponse>\n"
        )
        return text_response(200, body, "text/xml; charset=utf-8")


@dataclass
class AuthorizationCode:
    code: str
    client_id: str
    redirect_uri: str
    sid: str
    scopes: list[str]
    nonce: str | None
    issued_at: float
    consumed: bool = False


@dataclass
class RefreshGrant:
    client_id: str
    sid: str
    scopes: list[str]
    expires_at: float


@dataclass
class TokenSet:
    id_token: str
    access_token: str
    refresh_token: str
    expires_in: int
    scopes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "access_token": self.access_token,
            "token_type": "Bearer",
            "expires_in": self.expires_in,
            "refresh_token": self.refresh_token,
            "id_token": self.id_token,
            "scope": " ".join(self.scopes),
        }


class OidcProvider:
    def __init__(
        self,
        session_store: SessionStore,
        audit: AuditLog,
        signing_key: rsa.RSAPrivateKey,
        token_key: bytes,
        clock: Clock = time.time,
    ):
        self.sessions = session_store
        self.audit = audit
        self.signing_key = signing_key
        self.token_key = token_key
        self.clock = clock
        self._lock = threading.Lock()
        self._codes: dict[str, AuthorizationCode] = {}
        self._refresh: dict[str, RefreshGrant] = {}

    # -- authorization endpoint ------------------------------------------------

    def authorize(self, request: Request, config: GlobalConfig, session: Session | None) -> Response | None:
        """None means: authentication required first."""
        params = request.query
        client = config.find_oidc_client(params.get("client_id", ""))
        if client is None:
            return text_response(400, "invalid_client: unknown client_id")
        redirect_uri = params.get("redirect_uri", "")
        if redirect_uri not in client.redirect_uris:
            # never redirect to an unregistered URI
            return text_response(400, "invalid_redirect_uri: not registered for this client")
        state = params.get("state")
        response_type = params.get("response_type", "")
        if response_type != "code":
            err = {"error": "unsupported_response_type"}
            if state is not None:
                err["state"] = state
            return redirect_response(_append_query(redirect_uri, err))
        if session is None:
            return None
        scopes = [s for s in (params.get("scope") or "openid").split() if s in client.allowed_scopes]
        if "openid" not in scopes:
            scopes.insert(0, "openid")
        code = AuthorizationCode(
            code=secrets.token_urlsafe(32),
            client_id=client.client_id,
            redirect_uri=redirect_uri,
            sid=session.sid,
            scopes=scopes,
            nonce=params.get("nonce"),
            issued_at=self.clock(),
        )
        with self._lock:
            self._codes[code.code] = code
        self.audit.emit(AuditEvent(
            kind="token_mint", uid=session.uid, sid=session.sid,
            vhost=config.portal_host, uri="/oauth2/authorize", client_ip=request.client_ip,
            detail={"type": "authorization_code", "client_id": client.client_id,
                    "code_prefix": redact(code.code)},
        ))
        out = {"code": code.code}
        if state is not None:
            out["state"] = state
        return redirect_response(_append_query(redirect_uri, out))

    # -- token endpoint ----------------------------------------------------------

    def _client_auth(self, request: Request, config: GlobalConfig, form: dict):
        client_id = form.get("client_id", "")
        client_secret = form.get("client_secret", "")
        header = request.headers.get("Authorization", "") or ""
        if header.startswith("Basic "):
            import base64

            try:
                decoded = base64.b64decode(header[6:]).decode("utf-8")
                client_id, _, client_secret = decoded.partition(":")
            except (ValueError, UnicodeDecodeError):
                return None
        client = config.find_oidc_client(client_id)
        if client is None or not client.check_secret(client_secret):
            return None
        return client

    def _mint_token_set(self, config: GlobalConfig, client, session: Session,
                        scopes: list[str], nonce: str | None) -> TokenSet:
        now = int(self.clock())
        claims = {
            "iss": config.portal_url,
            "sub": session.uid,
            "aud": client.client_id,
            "exp": now + client.id_token_ttl,
            "iat": now,
            "auth_level": session.auth_level,
        }
        if nonce:
            claims["nonce"] = nonce
        id_token = jws.sign_rs256(claims, self.signing_key)
        access_token = tokens.seal_access_token(
            {"sid": session.sid, "scopes": scopes, "client_id": client.client_id,
             "exp": now + client.access_ttl},
            self.token_key,
        )
        refresh_token = secrets.token_urlsafe(32)
        with self._lock:
            self._refresh[refresh_token] = RefreshGrant(
                client_id=client.client_id, sid=session.sid, scopes=scopes,
                expires_at=self.clock() + client.refresh_ttl,
            )
        return TokenSet(
            id_token=id_token, access_token=access_token, refresh_token=refresh_token,
            expires_in=client.access_ttl, scopes=scopes,
        )

    def _reject(self, request, config, error: str, status: int, detail: dict) -> Response:
        self.audit.emit(AuditEvent(
            kind="token_reject", vhost=config.portal_host, uri="/oauth2/token",
            client_ip=request.client_ip, detail={"error": error, **detail},
        ))
        resp = json_response(status, {"error": error})
        if status == 401:
            resp.headers.set("WWW-Authenticate", 'Basic realm="oauth2"')
        return resp

    def token(self, request: Request, config: GlobalConfig) -> Response:
        form = request.form()
        grant_type = form.get("grant_type", "")
        client = self._client_auth(request, config, form)
        if client is None:
            # a failed client authentication must not consume the code
            return self._reject(request, config, "invalid_client", 401,
                                {"client_id": form.get("client_id", "-")})
        if grant_type == "authorization_code":
            return self._token_code(request, config, client, form)
        if grant_type == "refresh_token":
            return self._token_refresh(request, config, client, form)
        return self._reject(request, config, "unsupported_grant_type", 400,
                            {"grant_type": grant_type})

    def _token_code(self, request, config, client, form) -> Response:
        code_value = form.get("code", "")
        redirect_uri = form.get("redirect_uri", "")
        now = self.clock()
        with self._lock:
            code = self._codes.get(code_value)
            if (
                code is None
                or code.consumed
                or now - code.issued_at > AZC_TTL
                or code.client_id != client.client_id
                or code.redirect_uri != redirect_uri
            ):
                code = None
            else:
                code.consumed = True  # single-use, atomic under the lock
        if code is None:
            return self._reject(request, config, "invalid_grant", 400,
                                {"code_prefix": redact(code_value), "client_id": client.client_id})
        session = self.sessions.lookup(code.sid)
        if session is None:
            return self._reject(request, config, "invalid_grant", 400,
                                {"reason": "session gone", "client_id": client.client_id})
        token_set = self._mint_token_set(config, client, session, code.scopes, code.nonce)
        self.audit.emit(AuditEvent(
            kind="oidc_token", uid=session.uid, sid=session.sid,
            vhost=config.portal_host, uri="/oauth2/token", client_ip=request.client_ip,
            detail={"grant": "authorization_code", "client_id": client.client_id,
                    "access_prefix": redact(token_set.access_token)},
        ))
        return json_response(200, token_set.to_dict())

    def _token_refresh(self, request, config, client, form) -> Response:
        refresh_value = form.get("refresh_token", "")
        now = self.clock()
        with self._lock:
            grant = self._refresh.get(refresh_value)
            if grant is None or grant.client_id != client.client_id or now > grant.expires_at:
                grant = None
            else:
                del self._refresh[refresh_value]  # rotation: old token dies now
        if grant is None:
            return self._reject(request, config, "invalid_grant", 400,
                                {"reason": "bad refresh token", "client_id": client.client_id})
        session = self.sessions.lookup(grant.sid)
        if session is None:
            return self._reject(request, config, "invalid_grant", 400,
                                {"reason": "session gone", "client_id": client.client_id})
        token_set = self._mint_token_set(config, client, session, grant.scopes, None)
        self.audit.emit(AuditEvent(
            kind="oidc_token", uid=session.uid, sid=session.sid,
            vhost=config.portal_host, uri="/oauth2/token", client_ip=request.client_ip,
            detail={"grant": "refresh_token", "client_id": client.client_id},
        ))
        return json_response(200, token_set.to_dict())

    # -- userinfo ------------------------------------------------------------------

    def resolve_access_token(self, blob: str) -> tuple[Session, list[str]] | None:
        try:
            payload = tokens.unseal_access_token(blob, self.token_key)
        except tokens.TokenError:
            return None
        if self.clock() > float(payload.get("exp", 0)):
            return None
        session = self.sessions.lookup(payload.get("sid", ""))
        if session is None:
            return None
        return session, list(payload.get("scopes", []))

    def userinfo(self, request: Request, config: GlobalConfig) -> Response:
        header = request.headers.get("Authorization", "") or ""
        resolved = None
        if header.startswith("Bearer "):
            resolved = self.resolve_access_token(header[7:].strip())
        if resolved is None:
            self.audit.emit(AuditEvent(
                kind="token_reject", vhost=config.portal_host, uri="/oauth2/userinfo",
                client_ip=request.client_ip, detail={"error": "invalid_token"},
            ))
            resp = json_response(401, {"error": "invalid_token"})
            resp.headers.set("WWW-Authenticate", 'Bearer error="invalid_token"')
            return resp
        session, scopes = resolved
        claims: dict = {"sub": session.uid}
        if "profile" in scopes:
            claims["preferred_username"] = session.uid
            if "cn" in session.attributes:
                claims["name"] = session.attributes["cn"]
        if "email" in scopes and "mail" in session.attributes:
            claims["email"] = session.attributes["mail"]
        return json_response(200, claims)

    # -- discovery -------------------------------------------------------------------

    def jwks(self) -> Response:
        return json_response(200, {"keys": [jws.public_jwk(self.signing_key)]})

    def discovery(self, config: GlobalConfig) -> Response:
        base = config.portal_url
        return json_response(200, {
            "issuer": base,
            "authorization_endpoint": f"{base}/oauth2/authorize",
            "token_endpoint": f"{base}/oauth2/token",
            "userinfo_endpoint": f"{base}/oauth2/userinfo",
            "jwks_uri": f"{base}/oauth2/jwks",
            "response_types_supported": ["code"],
            "grant_types_supported": ["authorization_code", "refresh_token"],
            "subject_types_supported": ["public"],
            "id_token_signing_alg_values_supported": ["RS256"],
            "scopes_supported": ["openid", "profile", "email"],
            "token_endpoint_auth_methods_supported": ["client_secret_basic", "client_secret_post"],
        })
