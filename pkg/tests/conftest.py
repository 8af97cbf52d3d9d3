from __future__ import annotations

import json
from collections import defaultdict
from urllib.parse import urlsplit

import pytest

from ssogate import jws
from ssogate.accounting import AuditLog
from ssogate.config import ConfigManager, config_from_dict, hash_client_secret
from ssogate.mail import MemoryMailTransport
from ssogate.runtime import Runtime, build_runtime
from ssogate.web import Headers, Request, UpstreamResult

TOKEN_KEY_HEX = "a3" * 32

TEST_SCRYPT_N = 2**12  # keep test logins fast; production default is stronger

# shared TOTP secret for the pre-enrolled user (base32 of ASCII digits key)
BOB_TOTP_SECRET = "GEZDGNBVGY3TQOJQGEZDGNBVGY3TQOJQ"


class FakeClock:
    """Deterministic clock: call it for now, advance() to move time."""

    def __init__(self, start: float = 1_700_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance.py::" not in report.nodeid:
        return
    import sys

    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else "FAIL"
    sys.stderr.write(f"ACCEPTANCE {outcome}: {name}\n")
    sys.stderr.flush()


@pytest.fixture(scope="session")
def signing_key():
    return jws.generate_keypair()


def make_config_dict(**overrides) -> dict:
    base = {
        "cfg_num": 1,
        "sso_domain": "example.com",
        "cookie_name": "lemonldap",
        "portal_url": "https://auth.example.com",
        "external_scheme": "https",
        "key_material": {"token_key_hex": TOKEN_KEY_HEX, "jwt_key_path": "unused.pem"},
        "session_backend": {"kind": "memory"},
        "session_ttl": 3600,
        "handler_cache_ttl": 120,
        "authbasic_session_ttl": 300,
        "vhosts": [
            {
                "vhost": "app1.example.com",
                "handler_type": "main",
                "upstream": "http://up-app1",
                "rules": [["^/admin", '$uid == "admin"'], ["^/public", "unprotect"]],
                "default_rule": "accept",
                "headers": {"Auth-User": "$uid", "Auth-Mail": "$mail"},
            },
            {
                "vhost": "app2.example.com",
                "handler_type": "servicetoken",
                "upstream": "http://up-app2",
                "rules": [],
                "default_rule": "accept",
                "headers": {"Auth-User": "$uid"},
                "service_token_max_age": 30,
            },
            {
                "vhost": "app3.example.com",
                "handler_type": "servicetoken",
                "upstream": "http://up-app3",
                "rules": [],
                "default_rule": "accept",
                "headers": {"Auth-User": "$uid"},
            },
            {
                "vhost": "chain.example.com",
                "handler_type": "main",
                "upstream": "http://up-chain",
                "rules": [],
                "default_rule": "accept",
                "headers": {"Auth-User": "$uid"},
                "service_token_targets": ["app2.example.com"],
            },
            {
                "vhost": "basic.example.com",
                "handler_type": "authbasic",
                "upstream": "http://up-basic",
                "rules": [],
                "default_rule": "accept",
                "headers": {"Auth-User": "$uid"},
            },
            {
                "vhost": "secure.example.com",
                "handler_type": "securetoken",
                "upstream": "http://up-secure",
                "rules": [],
                "default_rule": "accept",
                "headers": {"Auth-User": "$uid"},
            },
            {
                "vhost": "api.example.com",
                "handler_type": "oauth2",
                "upstream": "http://up-api",
                "rules": [],
                "default_rule": "accept",
                "headers": {"Auth-User": "$uid"},
            },
            {
                "vhost": "devops.example.com",
                "handler_type": "devops",
                "upstream": "http://up-devops",
                "rules": [],
                "default_rule": "deny",
                "devops_cache_ttl": 1,
            },
            {
                "vhost": "gate.example.com",
                "handler_type": "main",
                "upstream": "http://up-gate",
                "rules": [],
                "default_rule": "accept",
                "headers": {"Auth-User": "$uid"},
                "required_auth_level": 1,
            },
        ],
        "oidc_clients": [
            {
                "client_id": "rp1",
                "client_secret_hash": hash_client_secret("rp1-secret"),
                "redirect_uris": ["https://rp.example.com/cb"],
                "allowed_scopes": ["openid", "profile", "email"],
                "id_token_ttl": 600,
                "access_ttl": 3600,
                "refresh_ttl": 86400,
            },
            {
                "client_id": "rp2",
                "client_secret_hash": hash_client_secret("rp2-secret"),
                "redirect_uris": ["https://rp2.example.com/cb"],
            },
        ],
        "cas_services": ["https://casapp.example.com/"],
        "plugins": {
            "bruteforce": {"max_failures": 5, "window_seconds": 300, "lock_seconds": 300},
            "level_rules": [
                {"condition": 'ipInRange("10.0.0.0/8")', "delta": 1},
                {"condition": 'ipInRange("203.0.113.0/24")', "set": 0},
            ],
            "checkuser_admins": ["admin"],
            "manager_admins": ["admin"],
        },
    }
    base.update(overrides)
    return base


class StubUpstreams:
    """In-process HTTP client standing in for every upstream origin."""

    def __init__(self):
        self.hits: dict[str, list] = defaultdict(list)
        self.devops_document: dict | None = {
            "rules": {"default": "accept"},
            "headers": {"Auth-User": "$uid"},
        }
        self.devops_available = True
        self.down: set[str] = set()

    def client(self, method: str, url: str, headers, body, timeout) -> UpstreamResult:
        parts = urlsplit(url)
        origin = f"{parts.scheme}://{parts.netloc}"
        if origin in self.down:
            raise ConnectionError(f"{origin} is down")
        self.hits[origin].append({"method": method, "url": url, "headers": list(headers),
                                  "body": body})
        if parts.netloc == "up-devops" and parts.path == "/rules.json":
            if not self.devops_available or self.devops_document is None:
                return UpstreamResult(404, [("Content-Type", "text/plain")], b"missing")
            payload = json.dumps(self.devops_document).encode()
            return UpstreamResult(200, [("Content-Type", "application/json")], payload)
        echo = {
            "method": method,
            "path": parts.path + (f"?{parts.query}" if parts.query else ""),
            "headers": {k.lower(): v for k, v in headers},
        }
        return UpstreamResult(
            200, [("Content-Type", "application/json"), ("X-Upstream", parts.netloc)],
            json.dumps(echo).encode(),
        )


class SsoEnv:
    def __init__(self, runtime: Runtime, clock: FakeClock, upstreams: StubUpstreams,
                 audit_path: str):
        self.runtime = runtime
        self.clock = clock
        self.upstreams = upstreams
        self.audit_path = audit_path

    @property
    def portal(self):
        return self.runtime.portal

    @property
    def gateway(self):
        return self.runtime.gateway

    @property
    def manager(self):
        return self.runtime.manager

    @property
    def config(self):
        return self.runtime.config_manager.current()

    def request(
        self,
        method: str,
        path: str,
        *,
        host: str,
        query: str = "",
        headers: dict | None = None,
        cookies: dict | None = None,
        form: dict | None = None,
        body: bytes = b"",
        client_ip: str = "127.0.0.1",
        accept_html: bool = True,
    ) -> Request:
        header_list = [("Host", host)]
        if accept_html:
            header_list.append(("Accept", "text/html,application/xhtml+xml"))
        for name, value in (headers or {}).items():
            header_list.append((name, value))
        if cookies:
            header_list.append(("Cookie", "; ".join(f"{k}={v}" for k, v in cookies.items())))
        if form is not None:
            from urllib.parse import urlencode

            body = urlencode(form).encode()
            header_list.append(("Content-Type", "application/x-www-form-urlencoded"))
        return Request(
            method=method, path=path, query_string=query,
            headers=Headers(header_list), body=body, client_ip=client_ip,
        )

    def login(self, uid: str, password: str, url_param: str | None = None,
              client_ip: str = "127.0.0.1"):
        """POST /login; returns (response, sid or None)."""
        form = {"uid": uid, "password": password}
        if url_param:
            form["url"] = url_param
        response = self.portal.handle(self.request(
            "POST", "/login", host="auth.example.com", form=form, client_ip=client_ip,
        ))
        return response, extract_sid(response, self.config.cookie_name)

    def audit_kinds(self) -> list[str]:
        return [e["kind"] for e in read_audit(self.audit_path)]


def read_audit(path: str) -> list[dict]:
    import os

    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def extract_sid(response, cookie_name: str = "lemonldap") -> str | None:
    for name, value in response.headers.items():
        if name.lower() == "set-cookie" and value.startswith(f"{cookie_name}="):
            sid = value.split(";")[0].split("=", 1)[1]
            return sid or None
    return None


def cookie_header_value(response, cookie_name: str) -> str | None:
    for name, value in response.headers.items():
        if name.lower() == "set-cookie" and value.startswith(f"{cookie_name}="):
            return value.split(";")[0].split("=", 1)[1] or None
    return None


def seed_users(users, mail_domain: str = "example.org") -> None:
    users.add("alice", "alice-pw", attributes={"cn": "Alice Liddell", "groups": "staff"},
              mail=f"alice@{mail_domain}", scrypt_n=TEST_SCRYPT_N)
    users.add("bob", "bob-pw", attributes={"cn": "Bob Stone", "groups": "staff,ops"},
              mail=f"bob@{mail_domain}", scrypt_n=TEST_SCRYPT_N)
    users.set_totp_secret("bob", BOB_TOTP_SECRET)
    users.add("carol", "carol-pw", attributes={"second_factor": "mail"},
              mail=f"carol@{mail_domain}", scrypt_n=TEST_SCRYPT_N)
    users.add("admin", "admin-pw", attributes={"cn": "The Admin"},
              mail=f"admin@{mail_domain}", scrypt_n=TEST_SCRYPT_N)


@pytest.fixture
def env(tmp_path, clock, signing_key) -> SsoEnv:
    upstreams = StubUpstreams()
    audit_path = str(tmp_path / "audit.log")
    config = make_config_dict(
        user_store=str(tmp_path / "users.json"),
        accounting={"path": audit_path},
    )
    manager = ConfigManager(config_from_dict(config), path=str(tmp_path / "conf.json"))
    audit = AuditLog(audit_path, clock=clock)
    runtime = build_runtime(
        manager,
        clock=clock,
        http_client=upstreams.client,
        mail_transport=MemoryMailTransport(),
        audit=audit,
        signing_key=signing_key,
    )
    seed_users(runtime.users)
    return SsoEnv(runtime, clock, upstreams, audit_path)
