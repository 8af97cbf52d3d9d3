"""Minimal HTTP plumbing shared by the portal, gateway and manager services.

Each service is a plain callable ``handle(Request) -> Response``; ``wsgi_app``
adapts it to WSGI so it can be served with the stdlib server or any WSGI host.
"""

from __future__ import annotations

import base64
import threading
import urllib.parse
from dataclasses import dataclass, field
from socketserver import ThreadingMixIn
from typing import Callable, Iterable, NamedTuple
from wsgiref.simple_server import WSGIRequestHandler, WSGIServer, make_server

HOP_BY_HOP = {
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
}

STATUS_REASONS = {
    200: "OK",
    204: "No Content",
    302: "Found",
    400: "Bad Request",
    401: "Unauthorized",
    403: "Forbidden",
    404: "Not Found",
    405: "Method Not Allowed",
    409: "Conflict",
    421: "Misdirected Request",
    422: "Unprocessable Entity",
    500: "Internal Server Error",
    503: "Service Unavailable",
}


def b64url_encode(data: bytes | str) -> str:
    """base64url without padding (the wire form of the return-URL parameter)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


def b64url_decode(text: str) -> bytes:
    pad = "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(text + pad)


class Headers:
    """Case-insensitive multi-value header collection."""

    def __init__(self, items: Iterable[tuple[str, str]] = ()):
        self._items: list[tuple[str, str]] = [(k, v) for k, v in items]

    def get(self, name: str, default: str | None = None) -> str | None:
        low = name.lower()
        for key, value in self._items:
            if key.lower() == low:
                return value
        return default

    def get_all(self, name: str) -> list[str]:
        low = name.lower()
        return [v for k, v in self._items if k.lower() == low]

    def add(self, name: str, value: str) -> None:
        self._items.append((name, value))

    def set(self, name: str, value: str) -> None:
        self.remove(name)
        self._items.append((name, value))

    def remove(self, name: str) -> None:
        low = name.lower()
        self._items = [(k, v) for k, v in self._items if k.lower() != low]

    def items(self) -> list[tuple[str, str]]:
        return list(self._items)

    def __contains__(self, name: str) -> bool:
        return self.get(name) is not None

    def __iter__(self):
        return iter(self._items)


@dataclass
class Request:
    method: str
    path: str
    query_string: str = ""
    headers: Headers = field(default_factory=Headers)
    body: bytes = b""
    client_ip: str = "127.0.0.1"

    @property
    def uri(self) -> str:
        """Path plus query, the unit access rules match on."""
        if self.query_string:
            return f"{self.path}?{self.query_string}"
        return self.path

    @property
    def host(self) -> str:
        """Host header without the port."""
        raw = self.headers.get("Host", "") or ""
        return raw.rsplit(":", 1)[0] if ":" in raw and not raw.endswith("]") else raw

    @property
    def query(self) -> dict[str, str]:
        return {k: v[0] for k, v in urllib.parse.parse_qs(self.query_string, keep_blank_values=True).items()}

    def form(self) -> dict[str, str]:
        parsed = urllib.parse.parse_qs(self.body.decode("utf-8", "replace"), keep_blank_values=True)
        return {k: v[0] for k, v in parsed.items()}

    @property
    def cookies(self) -> dict[str, str]:
        jar: dict[str, str] = {}
        raw = self.headers.get("Cookie")
        if not raw:
            return jar
        for part in raw.split(";"):
            if "=" in part:
                name, _, value = part.strip().partition("=")
                jar[name] = value
        return jar

    def accepts_html(self) -> bool:
        accept = self.headers.get("Accept", "") or ""
        return "text/html" in accept


@dataclass
class Response:
    status: int = 200
    headers: Headers = field(default_factory=Headers)
    body: bytes = b""

    def set_cookie(
        self,
        name: str,
        value: str,
        *,
        domain: str | None = None,
        path: str = "/",
        max_age: int | None = None,
        http_only: bool = True,
        secure: bool = True,
    ) -> None:
        parts = [f"{name}={value}"]
        if domain:
            parts.append(f"Domain={domain if domain.startswith('.') else '.' + domain}")
        parts.append(f"Path={path}")
        if max_age is not None:
            parts.append(f"Max-Age={max_age}")
        if http_only:
            parts.append("HttpOnly")
        if secure:
            parts.append("Secure")
        self.headers.add("Set-Cookie", "; ".join(parts))


def text_response(status: int, text: str, content_type: str = "text/plain; charset=utf-8") -> Response:
    body = text.encode("utf-8")
    resp = Response(status=status, body=body)
    resp.headers.set("Content-Type", content_type)
    return resp


def html_response(status: int, html: str) -> Response:
    return text_response(status, html, "text/html; charset=utf-8")


def json_response(status: int, payload: object) -> Response:
    import json

    return text_response(status, json.dumps(payload), "application/json")


def redirect_response(location: str, status: int = 302) -> Response:
    resp = Response(status=status)
    resp.headers.set("Location", location)
    return resp


Handler = Callable[[Request], Response]


class UpstreamResult(NamedTuple):
    status: int
    headers: list[tuple[str, str]]
    body: bytes


# (method, url, headers, body, timeout_seconds) -> UpstreamResult
HttpClient = Callable[[str, str, list[tuple[str, str]], bytes | None, float], UpstreamResult]


def httpx_client() -> HttpClient:
    """Outbound HTTP client used for upstream forwarding and rules fetching."""
    import httpx

    client = httpx.Client(follow_redirects=False)

    def send(method: str, url: str, headers: list[tuple[str, str]], body: bytes | None, timeout: float) -> UpstreamResult:
        resp = client.request(method, url, headers=headers, content=body, timeout=timeout)
        return UpstreamResult(resp.status_code, list(resp.headers.items()), resp.content)

    return send


def wsgi_app(handler: Handler) -> Callable:
    def app(environ, start_response):
        length = int(environ.get("CONTENT_LENGTH") or 0)
        body = environ["wsgi.input"].read(length) if length else b""
        headers = Headers()
        for key, value in environ.items():
            if key.startswith("HTTP_"):
                headers.add(key[5:].replace("_", "-").title(), value)
        if environ.get("CONTENT_TYPE"):
            headers.add("Content-Type", environ["CONTENT_TYPE"])
        if environ.get("CONTENT_LENGTH"):
            headers.add("Content-Length", environ["CONTENT_LENGTH"])
        request = Request(
            method=environ["REQUEST_METHOD"],
            path=environ.get("PATH_INFO", "/"),
            query_string=environ.get("QUERY_STRING", ""),
            headers=headers,
            body=body,
            client_ip=environ.get("REMOTE_ADDR", ""),
        )
        try:
            response = handler(request)
        except Exception:  # pragma: no cover - last-resort guard
            import traceback

            traceback.print_exc()
            response = text_response(500, "internal error")
        reason = STATUS_REASONS.get(response.status, "Unknown")
        out_headers = response.headers.items()
        if not any(k.lower() == "content-length" for k, _ in out_headers):
            out_headers.append(("Content-Length", str(len(response.body))))
        start_response(f"{response.status} {reason}", out_headers)
        return [response.body]

    return app


class _QuietHandler(WSGIRequestHandler):
    def log_message(self, *args):  # noqa: D102 - silence per-request stderr noise
        pass


class ThreadingWSGIServer(ThreadingMixIn, WSGIServer):
    daemon_threads = True


class HttpServer:
    """A threaded WSGI server wrapper; ``port`` is resolved after bind."""

    def __init__(self, handler: Handler, host: str = "127.0.0.1", port: int = 0):
        self._server = make_server(
            host, port, wsgi_app(handler), server_class=ThreadingWSGIServer, handler_class=_QuietHandler
        )
        self.host = host
        self.port = self._server.server_address[1]
        self._thread: threading.Thread | None = None

    def start(self) -> "HttpServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"
