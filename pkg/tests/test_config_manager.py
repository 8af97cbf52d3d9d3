from __future__ import annotations

import json
import threading

import pytest

from conftest import make_config_dict
from ssogate.config import ConfigError, ConfigManager, config_from_dict, load_config


# --- load/validate ------------------------------------------------------------


def test_valid_config_loads(tmp_path):
    path = tmp_path / "conf.json"
    path.write_text(json.dumps(make_config_dict()))
    config = load_config(str(path))
    assert config.cfg_num == 1
    assert config.find_vhost("app1.example.com") is not None
    assert config.find_vhost("APP1.example.com") is not None  # case-insensitive


def test_duplicate_vhost_rejected_by_name():
    data = make_config_dict()
    data["vhosts"].append(dict(data["vhosts"][0]))
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert any("duplicate vhost 'app1.example.com'" in e for e in err.value.errors)


def test_unparsable_rule_error_names_vhost_and_key():
    data = make_config_dict()
    data["vhosts"][0]["rules"] = [["^/x", "$uid =="]]
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert any("vhost app1.example.com" in e and "^/x" in e for e in err.value.errors)


def test_bad_regex_rejected():
    data = make_config_dict()
    data["vhosts"][0]["rules"] = [["(", "accept"]]
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_missing_token_key_rejected():
    data = make_config_dict()
    data["key_material"] = {}
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert any("token_key_hex" in e for e in err.value.errors)


def test_bad_header_name_rejected():
    data = make_config_dict()
    data["vhosts"][0]["headers"] = {"Bad Name": "$uid"}
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_http_redirect_uri_needs_dev_mode():
    data = make_config_dict()
    data["oidc_clients"][0]["redirect_uris"] = ["http://127.0.0.1:9000/cb"]
    with pytest.raises(ConfigError):
        config_from_dict(data)
    data["dev_mode"] = True
    config = config_from_dict(data)  # loopback http allowed in dev mode
    assert config.oidc_clients[0].redirect_uris == ["http://127.0.0.1:9000/cb"]


def test_unknown_handler_type_rejected():
    data = make_config_dict()
    data["vhosts"][0]["handler_type"] = "weird"
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_service_token_target_must_exist():
    data = make_config_dict()
    data["vhosts"][0]["service_token_targets"] = ["ghost.example.com"]
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_level_rule_condition_validated():
    data = make_config_dict()
    data["plugins"]["level_rules"] = [{"condition": "$x ==", "delta": 1}]
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_mutation_of_valid_config_is_atomic():
    """A rejected config leaves nothing half-applied."""
    data = make_config_dict()
    manager = ConfigManager(config_from_dict(data))
    before = manager.current()
    broken = make_config_dict()
    broken["vhosts"][0]["rules"] = [["^/x", "$bad =="]]
    with pytest.raises(ConfigError):
        manager.commit(broken)
    assert manager.current() is before


def test_round_trip_to_dict():
    config = config_from_dict(make_config_dict())
    again = config_from_dict(config.to_dict())
    assert again.to_dict() == config.to_dict()


# --- commit ----------------------------------------------------------------------


def test_commit_bumps_cfg_num_and_archives(tmp_path):
    path = tmp_path / "conf.json"
    manager = ConfigManager(config_from_dict(make_config_dict()), path=str(path))
    num = manager.commit(make_config_dict())
    assert num == 2
    assert manager.current().cfg_num == 2
    assert json.loads(path.read_text())["cfg_num"] == 2
    assert (tmp_path / "archive" / "2.json").exists()


def test_concurrent_commits_total_ordered(tmp_path):
    manager = ConfigManager(config_from_dict(make_config_dict()), path=str(tmp_path / "c.json"))
    results = []

    def committer():
        results.append(manager.commit(make_config_dict()))

    threads = [threading.Thread(target=committer) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results) == list(range(2, 10))  # distinct, consecutive


# --- manager API ---------------------------------------------------------------------


def admin_sid(env):
    _, sid = env.login("admin", "admin-pw")
    return sid


def api(env, method, path, *, sid=None, body=None, query="", headers=None):
    cookies = {"lemonldap": sid} if sid else None
    raw = json.dumps(body).encode() if body is not None else b""
    return env.manager.handle(env.request(
        method, path, host="manager.example.com", cookies=cookies,
        body=raw, query=query, headers=headers))


def test_api_requires_authentication(env):
    response = api(env, "GET", "/api/config")
    assert response.status == 401


def test_api_requires_admin(env):
    _, sid = env.login("alice", "alice-pw")
    response = api(env, "GET", "/api/config", sid=sid)
    assert response.status == 403


def test_get_config_carries_cfg_num_header(env):
    response = api(env, "GET", "/api/config", sid=admin_sid(env))
    assert response.status == 200
    assert response.headers.get("X-Cfg-Num") == "1"
    assert json.loads(response.body)["sso_domain"] == "example.com"


def test_put_vhost_with_bad_rule_422_lists_error(env):
    sid = admin_sid(env)
    vhost = json.loads(api(env, "GET", "/api/config/vhosts/app1.example.com", sid=sid).body)
    vhost["rules"] = [["^/x", "$uid =="]]
    response = api(env, "PUT", "/api/config/vhosts/app1.example.com", sid=sid, body=vhost)
    assert response.status == 422
    errors = json.loads(response.body)["errors"]
    assert any("^/x" in e for e in errors)
    # config untouched
    assert env.config.cfg_num == 1


def test_put_vhost_valid_bumps_cfg_num(env):
    sid = admin_sid(env)
    vhost = json.loads(api(env, "GET", "/api/config/vhosts/app1.example.com", sid=sid).body)
    vhost["rules"] = [["^/admin", '$uid == "admin"'], ["^/ops", 'inGroup("ops")']]
    response = api(env, "PUT", "/api/config/vhosts/app1.example.com", sid=sid, body=vhost)
    assert response.status == 200
    assert json.loads(response.body)["cfg_num"] == 2
    assert env.config.cfg_num == 2
    assert [p for p, _ in env.config.find_vhost("app1.example.com").rules] == ["^/admin", "^/ops"]
    assert "admin_change" in env.audit_kinds()


def test_put_preserves_rule_order_on_get(env):
    sid = admin_sid(env)
    vhost = json.loads(api(env, "GET", "/api/config/vhosts/app1.example.com", sid=sid).body)
    vhost["rules"] = [["^/b", "deny"], ["^/a", "accept"], ["^/c", "skip"]]
    api(env, "PUT", "/api/config/vhosts/app1.example.com", sid=sid, body=vhost)
    again = json.loads(api(env, "GET", "/api/config/vhosts/app1.example.com", sid=sid).body)
    assert [r[0] for r in again["rules"]] == ["^/b", "^/a", "^/c"]


def test_cfg_num_precondition_conflict(env):
    sid = admin_sid(env)
    vhost = json.loads(api(env, "GET", "/api/config/vhosts/app1.example.com", sid=sid).body)
    api(env, "PUT", "/api/config/vhosts/app1.example.com", sid=sid, body=vhost)  # now cfg 2
    stale = api(env, "PUT", "/api/config/vhosts/app1.example.com", sid=sid,
                body=vhost, headers={"X-Cfg-Num": "1"})
    assert stale.status == 409


def test_whole_config_put_roundtrip(env):
    sid = admin_sid(env)
    config = json.loads(api(env, "GET", "/api/config", sid=sid).body)
    config["session_ttl"] = 7200
    response = api(env, "PUT", "/api/config", sid=sid, body=config)
    assert response.status == 200
    assert env.config.session_ttl == 7200


def test_sessions_search_and_delete(env):
    sid = admin_sid(env)
    _, alice_sid = env.login("alice", "alice-pw")
    found = json.loads(api(env, "GET", "/api/sessions", sid=sid, query="uid=alice").body)
    assert [s["uid"] for s in found["sessions"]] == ["alice"]
    assert found["sessions"][0]["sid"] == alice_sid
    deleted = api(env, "DELETE", f"/api/sessions/{alice_sid}", sid=sid)
    assert deleted.status == 200
    missing = api(env, "DELETE", f"/api/sessions/{alice_sid}", sid=sid)
    assert missing.status == 404


def test_manager_session_kill_forces_relogin_after_cache_ttl(env):
    sid = admin_sid(env)
    _, alice_sid = env.login("alice", "alice-pw")
    ok = env.gateway.handle(env.request(
        "GET", "/", host="app1.example.com", cookies={"lemonldap": alice_sid}))
    assert ok.status == 200
    api(env, "DELETE", f"/api/sessions/{alice_sid}", sid=sid)
    # manager invalidated the local cache too: immediate re-login on this node
    env.clock.advance(121)
    gone = env.gateway.handle(env.request(
        "GET", "/", host="app1.example.com", cookies={"lemonldap": alice_sid}))
    assert gone.status == 302


def test_notifications_endpoints(env):
    sid = admin_sid(env)
    created = api(env, "POST", "/api/notifications", sid=sid,
                  body={"target": "_all", "title": "Hello", "body": "World"})
    assert created.status == 200
    listed = json.loads(api(env, "GET", "/api/notifications", sid=sid).body)
    assert [n["title"] for n in listed["notifications"]] == ["Hello"]


def test_checkuser_endpoint_mirrors_plugin(env):
    sid = admin_sid(env)
    response = api(env, "POST", "/api/checkuser", sid=sid,
                   body={"uid": "alice", "url": "https://app1.example.com/admin/x"})
    assert response.status == 200
    payload = json.loads(response.body)
    direct = env.runtime.checkuser.check("admin", "alice", "https://app1.example.com/admin/x")
    assert payload == direct.to_dict()


def test_checkuser_unknown_user_404(env):
    response = api(env, "POST", "/api/checkuser", sid=admin_sid(env),
                   body={"uid": "ghost", "url": "https://app1.example.com/"})
    assert response.status == 404


def test_checkdevops_endpoint(env):
    good = api(env, "POST", "/api/checkdevops", sid=admin_sid(env),
               body={"document": '{"rules": {"default": "accept"}}'})
    assert json.loads(good.body) == {"ok": True, "errors": []}
    bad = api(env, "POST", "/api/checkdevops", sid=admin_sid(env),
              body={"document": '{"rules": {}}'})
    payload = json.loads(bad.body)
    assert payload["ok"] is False and payload["errors"]


def test_audit_endpoint(env):
    sid = admin_sid(env)
    env.login("alice", "wrong")
    response = api(env, "GET", "/api/audit", sid=sid, query="kind=auth_failure")
    events = json.loads(response.body)["events"]
    assert events and all(e["kind"] == "auth_failure" for e in events)


def test_gateway_uses_new_config_after_commit(env):
    sid = admin_sid(env)
    _, alice_sid = env.login("alice", "alice-pw")
    assert env.gateway.handle(env.request(
        "GET", "/newly-denied", host="app1.example.com",
        cookies={"lemonldap": alice_sid})).status == 200
    vhost = json.loads(api(env, "GET", "/api/config/vhosts/app1.example.com", sid=sid).body)
    vhost["rules"] = [["^/newly-denied", "deny"]]
    api(env, "PUT", "/api/config/vhosts/app1.example.com", sid=sid, body=vhost)
    assert env.gateway.handle(env.request(
        "GET", "/newly-denied", host="app1.example.com",
        cookies={"lemonldap": alice_sid})).status == 403
