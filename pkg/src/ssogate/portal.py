"""User-facing authentication portal: login form, password + second factors,
SSO cookie issuance, applications menu, logout, and the federation endpoints
(CAS and OIDC) mounted on the same service."""

from __future__ import annotations

import html
import logging
import secrets
import threading
import time
from dataclasses import dataclass
from urllib.parse import urlsplit

from . import plugins as plugins_mod
from . import tokens, totp
from .accounting import AuditEvent, AuditLog
from .config import ConfigManager, GlobalConfig
from .federation import CasServer, OidcProvider
from .mail import MailMessage
from .plugins import PluginEngine
from .rules import RequestCtx
from .sessions import Clock, Session, SessionStore
from .users import UserRecord, UserStore
from .web import (
    Request,
    Response,
    b64url_decode,
    b64url_encode,
    html_response,
    redirect_response,
)

log = logging.getLogger("ssogate.portal")

PENDING_LOGIN_TTL = 300.0
MAIL_CODE_TTL = 600.0

_SEEN_ATTR = "notif_seen_"


class PortalError(Exception):
    pass


class NoMailAddress(PortalError):
    pass


class MailCodeExpired(PortalError):
    pass


@dataclass
class AuthResult:
    uid: str
    auth_level: int
    method: str  # password | password+totp | password+mail


@dataclass
class PendingLogin:
    token: str
    uid: str
    stage: str  # need_2f
    factor: str  # totp | mail
    created_at: float
    target_url: str | None


def _page(title: str, body: str) -> str:
    return (
        "<!doctype html><html><head><meta charset='utf-8'>"
        f"<title>{html.escape(title)}</title></head><body>{body}</body></html>"
    )


class Portal:
    def __init__(
        self,
        config_manager: ConfigManager,
        session_store: SessionStore,
        user_store: UserStore,
        audit: AuditLog,
        engine: PluginEngine,
        bruteforce: plugins_mod.BruteForceProtection,
        notifications: plugins_mod.NotificationStore,
        mail_transport,
        cas: CasServer,
        oidc: OidcProvider,
        clock: Clock = time.time,
    ):
        self.config_manager = config_manager
        self.sessions = session_store
        self.users = user_store
        self.audit = audit
        self.engine = engine
        self.bruteforce = bruteforce
        self.notifications = notifications
        self.mail_transport = mail_transport
        self.cas = cas
        self.oidc = oidc
        self.clock = clock
        self.totp_verifier = totp.TotpVerifier()
        self._lock = threading.Lock()
        self._pending_logins: dict[str, PendingLogin] = {}
        self._pending_totp: dict[str, str] = {}  # sid -> unconfirmed secret
        self._mail_codes: dict[str, tuple[str, float]] = {}

    # --- plumbing -------------------------------------------------------------

    def _session(self, request: Request, config: GlobalConfig) -> Session | None:
        sid = request.cookies.get(config.cookie_name, "")
        if not sid:
            return None
        return self.sessions.lookup(sid)

    def _set_sso_cookies(self, response: Response, config: GlobalConfig, sid: str) -> None:
        response.set_cookie(config.cookie_name, sid, domain=config.sso_domain)
        sealed = tokens.seal_sid(sid, config.token_key)
        response.set_cookie(config.cookie_name + "s", sealed, domain=config.sso_domain)

    def _clear_sso_cookies(self, response: Response, config: GlobalConfig) -> None:
        response.set_cookie(config.cookie_name, "", domain=config.sso_domain, max_age=0)
        response.set_cookie(config.cookie_name + "s", "", domain=config.sso_domain, max_age=0)

    def _decode_target(self, config: GlobalConfig, url_param: str | None) -> str | None:
        """base64url return-URL; dropped unless its host is a configured vhost
        or the portal itself (open-redirect guard)."""
        if not url_param:
            return None
        try:
            target = b64url_decode(url_param).decode("utf-8")
        except (ValueError, UnicodeDecodeError):
            log.warning("undecodable url parameter dropped")
            return None
        host = (urlsplit(target).hostname or "").lower()
        if host not in config.known_hosts():
            log.warning("return url host %r is not a configured vhost; dropped", host)
            return None
        return target

    def _login_redirect(self, request: Request, config: GlobalConfig) -> Response:
        original = f"{config.portal_url}{request.uri}"
        return redirect_response(f"{config.portal_url}/login?url={b64url_encode(original)}")

    # --- routing ----------------------------------------------------------------

    def handle(self, request: Request) -> Response:
        config = self.config_manager.current()
        route = (request.method, request.path)
        if route == ("GET", "/login"):
            return self.login_page(request, config)
        if route == ("POST", "/login"):
            return self.login_submit(request, config)
        if route == ("POST", "/2fa"):
            return self.second_factor_submit(request, config)
        if route == ("GET", "/menu"):
            return self.menu(request, config)
        if route == ("GET", "/logout"):
            return self.logout(request, config)
        if route == ("GET", "/2fa/register/totp"):
            return self.totp_register_page(request, config)
        if route == ("POST", "/2fa/register/totp"):
            return self.totp_register_confirm(request, config)
        if route == ("GET", "/notifications"):
            return self.notifications_page(request, config, None)
        if route == ("POST", "/notifications/accept"):
            return self.notifications_accept(request, config)
        if route == ("GET", "/cas/login"):
            response = self.cas.login(request, config, self._session(request, config))
            return response if response is not None else self._login_redirect(request, config)
        if route == ("GET", "/cas/serviceValidate"):
            return self.cas.service_validate(request, config)
        if route == ("GET", "/oauth2/authorize"):
            response = self.oidc.authorize(request, config, self._session(request, config))
            return response if response is not None else self._login_redirect(request, config)
        if route == ("POST", "/oauth2/token"):
            return self.oidc.token(request, config)
        if route == ("GET", "/oauth2/userinfo"):
            return self.oidc.userinfo(request, config)
        if route == ("GET", "/oauth2/jwks"):
            return self.oidc.jwks()
        if route == ("GET", "/.well-known/openid-configuration"):
            return self.oidc.discovery(config)
        if route == ("GET", "/"):
            return redirect_response("/menu")
        return html_response(404, _page("Not found", "<p>No such page.</p>"))

    # --- login -------------------------------------------------------------------

    def login_page(self, request: Request, config: GlobalConfig, error: str | None = None) -> Response:
        url_param = request.query.get("url")
        target = self._decode_target(config, url_param)
        session = self._session(request, config)
        if session is not None and error is None:
            # already signed on: bounce straight back to the application
            return redirect_response(target or f"{config.portal_url}/menu")
        return self._render_login(config, url_param if target else None, error)

    def _render_login(self, config: GlobalConfig, url_param: str | None, error: str | None = None) -> Response:
        hidden = f"<input type='hidden' name='url' value='{html.escape(url_param)}'>" if url_param else ""
        error_html = f"<p class='error'>{html.escape(error)}</p>" if error else ""
        body = (
            f"<h1>Sign in</h1>{error_html}"
            f"<form method='post' action='/login'>{hidden}"
            "<label>User <input name='uid' autofocus></label>"
            "<label>Password <input type='password' name='password'></label>"
            "<button type='submit'>Sign in</button></form>"
        )
        status = 401 if error else 200
        return html_response(status, _page("Sign in", body))

    def login_submit(self, request: Request, config: GlobalConfig) -> Response:
        form = request.form()
        uid = form.get("uid", "").strip()
        password = form.get("password", "")
        url_param = form.get("url") or None
        target = self._decode_target(config, url_param)
        ctx = {"uid": uid, "client_ip": request.client_ip, "config": config}

        abort = self.engine.run(plugins_mod.BEFORE_AUTH, ctx)
        if abort is not None:
            return html_response(403, _page("Sign-in refused", f"<p>{html.escape(abort.reason)}</p>"))

        locked_until = self.bruteforce.check(uid)
        if locked_until is not None:
            self.audit.emit(AuditEvent(
                kind="auth_locked", uid=uid, client_ip=request.client_ip,
                vhost=config.portal_host, uri="/login",
                detail={"locked_until": locked_until},
            ))
            return html_response(403, _page("Account locked",
                                            "<p>Account temporarily locked after repeated failures.</p>"))

        if not self.users.check_password(uid, password):
            lock = self.bruteforce.record_failure(uid)
            self.engine.run(plugins_mod.AFTER_AUTH_FAILURE, ctx)
            self.audit.emit(AuditEvent(
                kind="auth_failure", uid=uid, client_ip=request.client_ip,
                vhost=config.portal_host, uri="/login",
                detail={"reason": "bad-credentials", "locked": lock is not None},
            ))
            # same body whether the user exists or not
            return self._render_login(config, url_param, "Invalid credentials")

        self.bruteforce.record_success(uid)
        user = self.users.require(uid)
        abort = self.engine.run(plugins_mod.AFTER_AUTH_SUCCESS, {**ctx, "user": user})
        if abort is not None:
            return html_response(403, _page("Sign-in refused", f"<p>{html.escape(abort.reason)}</p>"))

        factor = self._required_second_factor(user)
        if factor is not None:
            return self._start_second_factor(request, config, user, factor, target)

        result = AuthResult(uid=uid, auth_level=config.auth_levels["password"], method="password")
        self._emit_auth_success(request, config, result)
        return self.complete_login(request, config, result, target)

    def _required_second_factor(self, user: UserRecord) -> str | None:
        if user.totp_secret:
            return "totp"
        if user.attributes.get("second_factor") == "mail" and user.mail:
            return "mail"
        return None

    def _start_second_factor(self, request: Request, config: GlobalConfig,
                             user: UserRecord, factor: str, target: str | None) -> Response:
        if factor == "mail":
            self.issue_mail_code(user.uid)
        pending = PendingLogin(
            token=secrets.token_urlsafe(24),
            uid=user.uid,
            stage="need_2f",
            factor=factor,
            created_at=self.clock(),
            target_url=target,
        )
        with self._lock:
            self._pending_logins[pending.token] = pending
        prompt = "Enter the code from your authenticator app" if factor == "totp" \
            else "Enter the code we just sent to your e-mail address"
        body = (
            f"<h1>Second factor</h1><p>{prompt}.</p>"
            f"<form method='post' action='/2fa'>"
            f"<input type='hidden' name='token' value='{html.escape(pending.token)}'>"
            "<label>Code <input name='code' autofocus></label>"
            "<button type='submit'>Verify</button></form>"
        )
        return html_response(200, _page("Second factor", body))

    def second_factor_submit(self, request: Request, config: GlobalConfig) -> Response:
        form = request.form()
        token = form.get("token", "")
        code = form.get("code", "").strip()
        now = self.clock()
        with self._lock:
            pending = self._pending_logins.pop(token, None)  # single-use
        if pending is None or now - pending.created_at > PENDING_LOGIN_TTL:
            return self._render_login(config, None, "Sign-in expired, start again")

        user = self.users.get(pending.uid)
        if user is None:
            return self._render_login(config, None, "Sign-in expired, start again")

        if pending.factor == "totp":
            ok = bool(user.totp_secret) and self.totp_verifier.verify(user.totp_secret, code, now)
            method = "password+totp"
            level = config.auth_levels["totp"]
        else:
            try:
                ok = self.verify_mail_code(pending.uid, code)
            except MailCodeExpired:
                ok = False
            method = "password+mail"
            level = config.auth_levels["mail"]

        if not ok:
            self.bruteforce.record_failure(pending.uid)
            self.engine.run(plugins_mod.AFTER_AUTH_FAILURE,
                            {"uid": pending.uid, "client_ip": request.client_ip})
            self.audit.emit(AuditEvent(
                kind="auth_failure", uid=pending.uid, client_ip=request.client_ip,
                vhost=config.portal_host, uri="/2fa",
                detail={"reason": "bad-second-factor", "factor": pending.factor},
            ))
            return self._render_login(config, None, "Invalid credentials")

        self.bruteforce.record_success(pending.uid)
        result = AuthResult(uid=pending.uid, auth_level=level, method=method)
        self._emit_auth_success(request, config, result)
        return self.complete_login(request, config, result, pending.target_url)

    def _emit_auth_success(self, request: Request, config: GlobalConfig, result: AuthResult) -> None:
        self.audit.emit(AuditEvent(
            kind="auth_success", uid=result.uid, client_ip=request.client_ip,
            vhost=config.portal_host, uri=request.path,
            detail={"method": result.method, "auth_level": result.auth_level},
        ))

    # --- session issuance -------------------------------------------------------------

    def complete_login(self, request: Request, config: GlobalConfig,
                       result: AuthResult, target: str | None) -> Response:
        user = self.users.require(result.uid)
        attributes = dict(user.attributes)
        if user.mail:
            attributes.setdefault("mail", user.mail)
        session = self.sessions.create(
            result.uid, attributes, auth_level=result.auth_level,
            ttl_seconds=config.session_ttl,
        )
        self.audit.emit(AuditEvent(
            kind="session_create", uid=result.uid, sid=session.sid,
            client_ip=request.client_ip, vhost=config.portal_host, uri=request.path,
            detail={"method": result.method},
        ))
        target_host = (urlsplit(target).hostname or "").lower() if target else config.portal_host
        request_ctx = RequestCtx(uri=request.uri, ip=request.client_ip, vhost=target_host)
        self.engine.run(plugins_mod.AFTER_SESSION_CREATE,
                        {"uid": result.uid, "session": session, "request_ctx": request_ctx})

        destination = target or f"{config.portal_url}/menu"
        pending = self._displayable_notifications(session)
        if pending:
            response = self.notifications_page(request, config, destination, session=session)
        else:
            response = redirect_response(destination)
        self._set_sso_cookies(response, config, session.sid)
        return response

    # --- notifications ------------------------------------------------------------------

    def _displayable_notifications(self, session: Session) -> list[plugins_mod.Notification]:
        pending = self.notifications.pending(session.uid)
        return [
            n for n in pending
            if n.require_accept or (_SEEN_ATTR + n.id) not in session.attributes
        ]

    def notifications_page(self, request: Request, config: GlobalConfig,
                           destination: str | None, session: Session | None = None) -> Response:
        if session is None:
            session = self._session(request, config)
        if session is None:
            return self._login_redirect(request, config)
        destination = destination or f"{config.portal_url}/menu"
        shown = self._displayable_notifications(session)
        changed = False
        parts = ["<h1>Notifications</h1>"]
        blocking = False
        for notification in shown:
            parts.append(f"<section><h2>{html.escape(notification.title)}</h2>"
                         f"<p>{html.escape(notification.body)}</p>")
            if notification.require_accept:
                blocking = True
                parts.append(
                    "<form method='post' action='/notifications/accept'>"
                    f"<input type='hidden' name='id' value='{notification.id}'>"
                    f"<input type='hidden' name='url' value='{html.escape(b64url_encode(destination))}'>"
                    "<button type='submit'>Accept</button></form>"
                )
            else:
                if (_SEEN_ATTR + notification.id) not in session.attributes:
                    session.attributes[_SEEN_ATTR + notification.id] = str(self.clock())
                    changed = True
            parts.append("</section>")
        if changed:
            self.sessions.update(session)
        if not shown:
            return redirect_response(destination)
        if not blocking:
            parts.append(f"<p><a href='{html.escape(destination)}'>Continue</a></p>")
        return html_response(200, _page("Notifications", "".join(parts)))

    def notifications_accept(self, request: Request, config: GlobalConfig) -> Response:
        session = self._session(request, config)
        if session is None:
            return self._login_redirect(request, config)
        form = request.form()
        self.notifications.accept(session.uid, form.get("id", ""))
        destination = None
        if form.get("url"):
            try:
                destination = b64url_decode(form["url"]).decode("utf-8")
            except (ValueError, UnicodeDecodeError):
                destination = None
        destination = destination or f"{config.portal_url}/menu"
        remaining = [n for n in self.notifications.pending(session.uid) if n.require_accept]
        if remaining:
            return self.notifications_page(request, config, destination, session=session)
        return redirect_response(destination)

    # --- menu / logout ---------------------------------------------------------------------

    def menu(self, request: Request, config: GlobalConfig) -> Response:
        session = self._session(request, config)
        if session is None:
            return self._login_redirect(request, config)
        blocking = [n for n in self.notifications.pending(session.uid) if n.require_accept]
        if blocking:
            return self.notifications_page(request, config, None, session=session)
        links = "".join(
            f"<li><a href='{config.external_scheme}://{v.vhost}/'>{html.escape(v.vhost)}</a></li>"
            for v in config.vhosts
        )
        body = (
            f"<h1>Applications</h1><p>Signed in as {html.escape(session.uid)} "
            f"(level {session.auth_level}).</p><ul>{links}</ul>"
            "<p><a href='/2fa/register/totp'>Register an authenticator app</a> | "
            "<a href='/logout'>Sign out</a></p>"
        )
        return html_response(200, _page("Applications", body))

    def logout(self, request: Request, config: GlobalConfig) -> Response:
        session = self._session(request, config)
        if session is not None:
            self.sessions.delete(session.sid)
            self.audit.emit(AuditEvent(
                kind="session_delete", uid=session.uid, sid=session.sid,
                client_ip=request.client_ip, vhost=config.portal_host, uri="/logout",
                detail={"reason": "logout"},
            ))
            self.engine.run(plugins_mod.END_SESSION,
                            {"uid": session.uid, "session": session})
        response = redirect_response(f"{config.portal_url}/login")
        self._clear_sso_cookies(response, config)
        return response

    # --- TOTP registration --------------------------------------------------------------------

    def totp_register_page(self, request: Request, config: GlobalConfig) -> Response:
        session = self._session(request, config)
        if session is None:
            return self._login_redirect(request, config)
        secret = totp.random_secret()
        with self._lock:
            self._pending_totp[session.sid] = secret
        uri = totp.otpauth_uri(session.uid, secret, issuer="SSO Portal")
        body = (
            "<h1>Register authenticator</h1>"
            f"<p>Secret: <code>{secret}</code></p>"
            f"<p>URI: <code>{html.escape(uri)}</code></p>"
            "<form method='post' action='/2fa/register/totp'>"
            "<label>Confirmation code <input name='code'></label>"
            "<button type='submit'>Confirm</button></form>"
        )
        return html_response(200, _page("Register authenticator", body))

    def totp_register_confirm(self, request: Request, config: GlobalConfig) -> Response:
        session = self._session(request, config)
        if session is None:
            return self._login_redirect(request, config)
        with self._lock:
            secret = self._pending_totp.get(session.sid)
        if secret is None:
            return html_response(400, _page("No registration in progress",
                                            "<p>Start again from the registration page.</p>"))
        code = request.form().get("code", "").strip()
        if not self.totp_verifier.verify(secret, code, self.clock()):
            return html_response(400, _page("Bad code",
                                            "<p>That code did not match; the secret was not stored.</p>"))
        with self._lock:
            self._pending_totp.pop(session.sid, None)
        self.users.set_totp_secret(session.uid, secret)
        return html_response(200, _page("Registered",
                                        "<p>Second factor registered; it is now required at sign-in.</p>"))

    # --- mail second factor -----------------------------------------------------------------------

    def issue_mail_code(self, uid: str) -> str:
        user = self.users.require(uid)
        if not user.mail:
            raise NoMailAddress(uid)
        code = f"{secrets.randbelow(10**6):06d}"
        with self._lock:
            self._mail_codes[uid] = (code, self.clock())  # latest code only
        self.mail_transport.send(MailMessage(
            to=user.mail,
            subject="Your sign-in code",
            body=f"Your one-time sign-in code is {code}. It expires in 10 minutes.",
        ))
        return code

    def verify_mail_code(self, uid: str, code: str) -> bool:
        now = self.clock()
        with self._lock:
            entry = self._mail_codes.get(uid)
            if entry is None:
                return False
            stored, issued_at = entry
            if now - issued_at > MAIL_CODE_TTL:
                del self._mail_codes[uid]
                raise MailCodeExpired(uid)
            if secrets.compare_digest(stored, code):
                del self._mail_codes[uid]  # single-use
                return True
            return False
