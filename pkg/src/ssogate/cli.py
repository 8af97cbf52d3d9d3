"""llngctl: operator command line for running the services and desk tasks.

Exit codes: 0 success, 1 validation/operation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import getpass
import json
import os
import sys

from . import tokens
from .config import ConfigError, ConfigManager, load_config
from .devops import check_devops
from .users import UserStore

DEFAULT_CONFIG_ENV = "LLNG_CONFIG"


def _config_path(args) -> str:
    path = args.config or os.environ.get(DEFAULT_CONFIG_ENV)
    if not path:
        raise SystemExit("no configuration: pass --config or set LLNG_CONFIG")
    return path


def _emit(args, payload: dict, human: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload))
    else:
        print(human)


def cmd_check_config(args) -> int:
    try:
        config = load_config(_config_path(args))
    except ConfigError as exc:
        for error in exc.errors:
            print(f"error: {error}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _emit(args, {"ok": True, "cfg_num": config.cfg_num, "vhosts": len(config.vhosts)},
          f"ok: cfg_num={config.cfg_num}, {len(config.vhosts)} vhosts")
    return 0


def cmd_check_devops(args) -> int:
    source = args.source
    if source.startswith(("http://", "https://")):
        import httpx

        try:
            response = httpx.get(source, timeout=2.0)
            response.raise_for_status()
            text = response.text
        except Exception as exc:
            print(f"error: fetch failed: {exc}", file=sys.stderr)
            return 1
    else:
        try:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    errors = check_devops(text)
    if errors:
        _emit(args, {"ok": False, "errors": errors}, "\n".join(f"error: {e}" for e in errors))
        return 1
    _emit(args, {"ok": True, "errors": []}, "ok")
    return 0


def cmd_sessions(args) -> int:
    runtime = _build_runtime(args)
    if args.action == "list":
        found = runtime.sessions.search(uid=args.uid)
        payload = {"sessions": [s.to_dict() for s in found]}
        if args.json:
            print(json.dumps(payload))
        else:
            for session in found:
                print(f"{session.sid}  {session.uid}  level={session.auth_level} kind={session.kind}")
        return 0
    if not args.sid:
        print("error: delete needs --sid", file=sys.stderr)
        return 2
    deleted = runtime.sessions.delete(args.sid)
    _emit(args, {"deleted": deleted}, "deleted" if deleted else "not found")
    return 0 if deleted else 1


def _token_key(args) -> bytes:
    if args.key:
        key = bytes.fromhex(args.key)
        if len(key) != 32:
            raise SystemExit("--key must be 64 hex chars (32 bytes)")
        return key
    return load_config(_config_path(args)).token_key


def cmd_token(args) -> int:
    key = _token_key(args)
    if args.action == "mint":
        if not args.sid or not args.vhosts:
            print("error: mint needs --sid and --vhosts", file=sys.stderr)
            return 2
        import time

        claims = tokens.ServiceTokenClaims(
            sid=args.sid, vhosts=args.vhosts.split(","), issued_at=time.time()
        )
        print(tokens.mint_service_token(claims, key))
        return 0
    blob = args.blob or sys.stdin.read().strip()
    if not blob:
        print("error: verify needs a token (argument or stdin)", file=sys.stderr)
        return 2
    import time

    vhost = args.vhost or ""
    try:
        claims = tokens.verify_service_token(
            blob, vhost or "-", time.time(), key,
            max_age_seconds=args.max_age,
        )
    except tokens.TokenOutOfScope as exc:
        if vhost:
            print(f"error: out-of-scope: {exc}", file=sys.stderr)
            return 1
        # without --vhost only integrity and age are checked; scope check is
        # ordered last so reaching it means both passed
        claims = None
    except tokens.TokenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if claims is not None:
        print(json.dumps(claims.to_dict()))
    else:
        print(json.dumps({"ok": True, "note": "integrity and age verified; no vhost given"}))
    return 0


def cmd_user(args) -> int:
    config = load_config(_config_path(args))
    users = UserStore(config.user_store_path)
    if args.action == "add":
        password = args.password or getpass.getpass("password: ")
        attributes = dict(kv.split("=", 1) for kv in (args.attr or []))
        users.add(args.uid, password, attributes=attributes, mail=args.mail)
        _emit(args, {"ok": True, "uid": args.uid}, f"user {args.uid} added")
        return 0
    if args.action == "set-password":
        password = args.password or getpass.getpass("password: ")
        users.set_password(args.uid, password)
        _emit(args, {"ok": True}, "password updated")
        return 0
    users.set_totp_secret(args.uid, None)
    _emit(args, {"ok": True}, "totp secret cleared")
    return 0


def _build_runtime(args):
    from .runtime import build_runtime

    manager = ConfigManager.from_file(_config_path(args))
    return build_runtime(manager)


def cmd_serve(args) -> int:
    from .web import HttpServer

    runtime = _build_runtime(args)
    config = runtime.config_manager.current()
    run_all = not (args.portal or args.gateway or args.manager)
    servers = []

    def listen_pair(name: str) -> tuple[str, int]:
        raw = config.listen.get(name, "127.0.0.1:0")
        host, _, port = raw.rpartition(":")
        return host or "127.0.0.1", int(port)

    if args.portal or run_all:
        host, port = listen_pair("portal")
        servers.append(("portal", HttpServer(runtime.portal.handle, host, port).start()))
    if args.gateway or run_all:
        host, port = listen_pair("gateway")
        servers.append(("gateway", HttpServer(runtime.gateway.handle, host, port).start()))
    if args.manager or run_all:
        host, port = listen_pair("manager")
        if args.ui_dist:
            runtime.manager.ui_dist = args.ui_dist
        servers.append(("manager", HttpServer(runtime.manager.handle, host, port).start()))

    for name, server in servers:
        print(f"{name}: listening on {server.url}")
    try:
        import threading

        threading.Event().wait()
    except KeyboardInterrupt:
        for _, server in servers:
            server.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llngctl", description=__doc__)
    parser.add_argument("--config", help="configuration file (or $LLNG_CONFIG)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the services")
    serve.add_argument("--portal", action="store_true")
    serve.add_argument("--gateway", action="store_true")
    serve.add_argument("--manager", action="store_true")
    serve.add_argument("--ui-dist", help="serve the manager UI from this directory")
    serve.set_defaults(fn=cmd_serve)

    check_config = sub.add_parser("check-config", help="validate a configuration file")
    check_config.set_defaults(fn=cmd_check_config)

    devops = sub.add_parser("check-devops", help="validate a rules.json file or URL")
    devops.add_argument("source", help="path or http(s) URL")
    devops.set_defaults(fn=cmd_check_devops)

    sessions = sub.add_parser("sessions", help="list or delete sessions")
    sessions.add_argument("action", choices=["list", "delete"])
    sessions.add_argument("--uid")
    sessions.add_argument("--sid")
    sessions.set_defaults(fn=cmd_sessions)

    token = sub.add_parser("token", help="mint or verify service tokens")
    token.add_argument("action", choices=["mint", "verify"])
    token.add_argument("--sid")
    token.add_argument("--vhosts", help="comma-separated authorized vhosts (mint)")
    token.add_argument("--vhost", help="requesting vhost to check scope against (verify)")
    token.add_argument("--key", help="32-byte key as hex (defaults to the config key)")
    token.add_argument("--max-age", type=float, default=30.0)
    token.add_argument("blob", nargs="?", help="token to verify (or stdin)")
    token.set_defaults(fn=cmd_token)

    user = sub.add_parser("user", help="manage the local user store")
    user.add_argument("action", choices=["add", "set-password", "totp-reset"])
    user.add_argument("uid")
    user.add_argument("--password")
    user.add_argument("--mail")
    user.add_argument("--attr", action="append", help="attribute as name=value (repeatable)")
    user.set_defaults(fn=cmd_user)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for error in exc.errors:
            print(f"error: {error}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
