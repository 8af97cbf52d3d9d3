from __future__ import annotations

import json
import re

import pytest

from conftest import read_audit
from ssogate.accounting import AuditEvent, AuditLog, redact


def test_emit_writes_one_json_line(tmp_path, clock):
    path = str(tmp_path / "audit.log")
    log = AuditLog(path, clock=clock)
    log.emit(AuditEvent(kind="auth_failure", uid="alice", client_ip="192.0.2.1",
                        vhost="auth.example.com", uri="/login",
                        detail={"reason": "bad-credentials"}))
    lines = open(path).read().splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["kind"] == "auth_failure"
    assert record["uid"] == "alice"
    assert record["client_ip"] == "192.0.2.1"
    assert record["ts"] == int(clock() * 1000)


def test_key_order_is_fixed(tmp_path, clock):
    path = str(tmp_path / "audit.log")
    log = AuditLog(path, clock=clock)
    log.emit(AuditEvent(kind="authz_allow", uid="u", vhost="v", uri="/", client_ip="1.2.3.4"))
    line = open(path).read().strip()
    keys = list(json.loads(line).keys())
    assert keys == ["ts", "kind", "uid", "sid_prefix", "vhost", "uri", "client_ip", "detail"]


def test_sid_is_redacted_to_prefix(tmp_path, clock):
    path = str(tmp_path / "audit.log")
    log = AuditLog(path, clock=clock)
    sid = "abcdef0123456789" * 2
    log.emit(AuditEvent(kind="session_create", uid="u", sid=sid))
    record = read_audit(path)[0]
    assert record["sid_prefix"] == sid[:8]
    assert sid not in open(path).read()


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        AuditEvent(kind="made_up")


def test_redact():
    assert redact(None) == "-"
    assert redact("") == "-"
    assert redact("abcdefghij") == "abcdefgh"


def test_query_filters(tmp_path, clock):
    path = str(tmp_path / "audit.log")
    log = AuditLog(path, clock=clock)
    log.emit(AuditEvent(kind="auth_success", uid="alice"))
    clock.advance(10)
    log.emit(AuditEvent(kind="auth_failure", uid="bob"))
    clock.advance(10)
    log.emit(AuditEvent(kind="auth_success", uid="alice"))

    assert len(log.query()) == 3
    assert [e["uid"] for e in log.query(uid="alice")] == ["alice", "alice"]
    assert [e["kind"] for e in log.query(kind="auth_failure")] == ["auth_failure"]
    # newest first
    all_events = log.query()
    assert all_events[0]["ts"] >= all_events[-1]["ts"]


def test_query_time_bounds(tmp_path, clock):
    path = str(tmp_path / "audit.log")
    log = AuditLog(path, clock=clock)
    t0 = clock()
    log.emit(AuditEvent(kind="auth_success", uid="a"))
    clock.advance(100)
    log.emit(AuditEvent(kind="auth_success", uid="b"))
    assert len(log.query(since=t0 + 50)) == 1
    assert len(log.query(until=t0 + 50)) == 1
    assert log.query(since=t0 + 200, until=t0) == []


def test_query_empty_sink(tmp_path, clock):
    log = AuditLog(str(tmp_path / "never-written.log"), clock=clock)
    assert log.query() == []


def test_query_limit(tmp_path, clock):
    path = str(tmp_path / "audit.log")
    log = AuditLog(path, clock=clock)
    for _ in range(10):
        log.emit(AuditEvent(kind="authz_allow"))
    assert len(log.query(limit=3)) == 3


def test_stderr_fallback_without_path(capsys, clock):
    log = AuditLog(None, clock=clock)
    log.emit(AuditEvent(kind="auth_success", uid="x"))
    captured = capsys.readouterr()
    assert "auth_success" in captured.err


# --- scenario-level properties ------------------------------------------------------


def test_scenario_event_sequence_exact(env):
    """A scripted login + allowed request + logout yields exactly the expected
    kind sequence."""
    _, sid = env.login("alice", "alice-pw", url_param=None)
    env.gateway.handle(env.request(
        "GET", "/doc", host="app1.example.com", cookies={"lemonldap": sid}))
    env.portal.handle(env.request(
        "GET", "/logout", host="auth.example.com", cookies={"lemonldap": sid}))
    assert env.audit_kinds() == [
        "auth_success", "session_create", "authz_allow", "session_delete",
    ]


def test_no_full_sid_or_token_in_sink(env):
    from ssogate import tokens

    _, sid = env.login("alice", "alice-pw")
    token = tokens.mint_service_token(
        tokens.ServiceTokenClaims(sid=sid, vhosts=["app2.example.com"],
                                  issued_at=env.clock()),
        env.config.token_key)
    env.gateway.handle(env.request(
        "GET", "/x", host="app2.example.com", accept_html=False,
        headers={"X-LLNG-TOKEN": token}))
    env.gateway.handle(env.request(
        "GET", "/y", host="app2.example.com", accept_html=False,
        headers={"X-LLNG-TOKEN": token[:-4] + "AAAA"}))  # rejected: token_reject event
    content = open(env.audit_path).read()
    assert sid not in content
    assert token not in content
    assert re.search(r"\b[0-9a-f]{32}\b", content) is None  # no full sid anywhere


def test_responses_match_event_count_per_scenario(env):
    """Differential completeness: every authn/authz outcome emits exactly one
    event across a mixed scenario."""
    outcomes = 0
    # failed login -> auth_failure
    env.login("alice", "wrong"); outcomes += 1
    # successful login -> auth_success + session_create
    _, sid = env.login("alice", "alice-pw"); outcomes += 2
    # allowed request -> authz_allow
    env.gateway.handle(env.request(
        "GET", "/a", host="app1.example.com", cookies={"lemonldap": sid})); outcomes += 1
    # denied request -> authz_deny
    env.gateway.handle(env.request(
        "GET", "/admin/z", host="app1.example.com", cookies={"lemonldap": sid})); outcomes += 1
    # unauthenticated redirect -> no event
    env.gateway.handle(env.request("GET", "/b", host="app1.example.com"))
    assert len(read_audit(env.audit_path)) == outcomes
