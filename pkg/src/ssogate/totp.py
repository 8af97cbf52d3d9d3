"""HOTP/TOTP one-time passwords (HMAC-SHA1 with dynamic truncation)."""

from __future__ import annotations

import base64
import hashlib
import hmac
import secrets
import struct
import threading
import urllib.parse

DEFAULT_STEP = 30
DEFAULT_DIGITS = 6
DEFAULT_SKEW = 1


def _decode_base32(secret: str) -> bytes:
    cleaned = "".join(secret.split()).upper()
    cleaned += "=" * ((8 - len(cleaned) % 8) % 8)
    return base64.b32decode(cleaned)


def hotp(key: bytes, counter: int, digits: int = DEFAULT_DIGITS, algo: str = "sha1") -> str:
    mac = hmac.new(key, struct.pack(">Q", counter), getattr(hashlib, algo)).digest()
    offset = mac[-1] & 0x0F
    binary = struct.unpack(">L", mac[offset : offset + 4])[0] & 0x7FFFFFFF
    return str(binary % (10**digits)).zfill(digits)


def totp_at(secret_b32: str, now: float, step: int = DEFAULT_STEP, digits: int = DEFAULT_DIGITS) -> str:
    return hotp(_decode_base32(secret_b32), int(now // step), digits)


def random_secret(length: int = 20) -> str:
    return base64.b32encode(secrets.token_bytes(length)).decode("ascii").rstrip("=")


def otpauth_uri(uid: str, secret_b32: str, issuer: str, digits: int = DEFAULT_DIGITS, step: int = DEFAULT_STEP) -> str:
    label = urllib.parse.quote(f"{issuer}:{uid}")
    params = urllib.parse.urlencode(
        {"secret": secret_b32, "issuer": issuer, "digits": digits, "period": step}
    )
    return f"otpauth://totp/{label}?{params}"


class TotpVerifier:
    """Window-checked TOTP verification with a per-timestep replay guard."""

    def __init__(self):
        self._lock = threading.Lock()
        self._used: dict[tuple[str, int], float] = {}

    def verify(
        self,
        secret_b32: str,
        code: str,
        now: float,
        step: int = DEFAULT_STEP,
        digits: int = DEFAULT_DIGITS,
        skew: int = DEFAULT_SKEW,
    ) -> bool:
        try:
            key = _decode_base32(secret_b32)
        except (ValueError, TypeError):
            return False
        if not code or not code.isdigit() or len(code) != digits:
            return False
        center = int(now // step)
        key_id = hashlib.sha256(key).hexdigest()[:16]
        for counter in range(center - skew, center + skew + 1):
            if counter < 0:
                continue
            if hmac.compare_digest(hotp(key, counter, digits), code):
                with self._lock:
                    if (key_id, counter) in self._used:
                        return False
                    self._used[(key_id, counter)] = now
                    self._prune(now, step, skew)
                return True
        return False

    def _prune(self, now: float, step: int, skew: int) -> None:
        horizon = now - step * (skew + 2)
        stale = [k for k, ts in self._used.items() if ts < horizon]
        for k in stale:
            del self._used[k]
