"""Sealed tokens: the server-to-server service token and the ciphered SID cookie.

Both are AES-256-GCM blobs, base64url without padding, nonce prepended.
The two token families use distinct associated data so one can never be
presented as the other.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .web import b64url_decode, b64url_encode

KEY_BYTES = 32
NONCE_BYTES = 12

_AAD_SERVICE = b"ssogate:servicetoken:v1"
_AAD_SID = b"ssogate:sid:v1"
_AAD_ACCESS = b"ssogate:accesstoken:v1"

DEFAULT_MAX_AGE = 30  # seconds a service token stays valid


class TokenError(Exception):
    pass


class MalformedToken(TokenError):
    pass


class TamperedToken(TokenError):
    pass


class TokenExpired(TokenError):
    pass


class TokenOutOfScope(TokenError):
    pass


def new_key() -> bytes:
    return os.urandom(KEY_BYTES)


def _check_key(key: bytes) -> None:
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_BYTES:
        raise ValueError(f"key must be {KEY_BYTES} bytes")


def _seal(plaintext: bytes, key: bytes, aad: bytes) -> str:
    _check_key(key)
    nonce = os.urandom(NONCE_BYTES)
    ciphertext = AESGCM(key).encrypt(nonce, plaintext, aad)
    return b64url_encode(nonce + ciphertext)


def _unseal(blob: str, key: bytes, aad: bytes) -> bytes:
    _check_key(key)
    try:
        raw = b64url_decode(blob)
    except (ValueError, TypeError) as exc:
        raise MalformedToken("not base64url") from exc
    # python's decoder is lenient; insist on the canonical encoding so any
    # mutation of the blob text is detected
    if b64url_encode(raw) != blob:
        raise MalformedToken("non-canonical encoding")
    if len(raw) < NONCE_BYTES + 16:  # nonce + GCM tag
        raise MalformedToken("too short")
    nonce, ciphertext = raw[:NONCE_BYTES], raw[NONCE_BYTES:]
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, aad)
    except InvalidTag as exc:
        raise TamperedToken("authentication failed") from exc


@dataclass
class ServiceTokenClaims:
    sid: str
    vhosts: list[str]
    issued_at: float
    service_headers: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        payload = {"iat": self.issued_at, "sid": self.sid, "vhosts": list(self.vhosts)}
        if self.service_headers:
            payload["svc"] = dict(self.service_headers)
        return payload

    @classmethod
    def from_dict(cls, data: dict) -> "ServiceTokenClaims":
        return cls(
            sid=data["sid"],
            vhosts=list(data["vhosts"]),
            issued_at=float(data["iat"]),
            service_headers=dict(data.get("svc") or {}),
        )


def mint_service_token(claims: ServiceTokenClaims, key: bytes) -> str:
    if not claims.vhosts:
        raise ValueError("vhosts must be non-empty")
    plaintext = json.dumps(claims.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _seal(plaintext, key, _AAD_SERVICE)


def verify_service_token(
    blob: str,
    requesting_vhost: str,
    now: float,
    key: bytes,
    max_age_seconds: float = DEFAULT_MAX_AGE,
) -> ServiceTokenClaims:
    plaintext = _unseal(blob, key, _AAD_SERVICE)
    try:
        claims = ServiceTokenClaims.from_dict(json.loads(plaintext))
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedToken("bad claims payload") from exc
    if now - claims.issued_at > max_age_seconds:
        raise TokenExpired(f"token is {now - claims.issued_at:.0f}s old")
    if requesting_vhost not in claims.vhosts:
        raise TokenOutOfScope(f"{requesting_vhost} not in authorized vhosts")
    return claims


def seal_sid(sid: str, key: bytes) -> str:
    return _seal(sid.encode("utf-8"), key, _AAD_SID)


def unseal_sid(blob: str, key: bytes) -> str:
    plaintext = _unseal(blob, key, _AAD_SID)
    try:
        return plaintext.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedToken("sid is not text") from exc


def seal_access_token(payload: dict, key: bytes) -> str:
    """Opaque OAuth2 access token: a sealed reference to sid + scopes."""
    plaintext = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _seal(plaintext, key, _AAD_ACCESS)


def unseal_access_token(blob: str, key: bytes) -> dict:
    plaintext = _unseal(blob, key, _AAD_ACCESS)
    try:
        payload = json.loads(plaintext)
    except ValueError as exc:
        raise MalformedToken("bad access token payload") from exc
    if not isinstance(payload, dict):
        raise MalformedToken("bad access token payload")
    return payload
