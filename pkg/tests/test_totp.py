"""One-time password tests, anchored on an independent HOTP oracle."""

from __future__ import annotations

import base64
import hashlib
import hmac as hmac_mod

from ssogate import totp as totp_mod
from ssogate.totp import TotpVerifier, hotp, otpauth_uri, random_secret, totp_at


def oracle_hotp(key: bytes, counter: int, digits: int) -> str:
    """Independent RFC 4226 implementation: full HMAC-SHA1 by hand via hashlib,
    truncation done with explicit arithmetic rather than struct."""
    block = counter.to_bytes(8, "big")
    digest = hmac_mod.new(key, block, hashlib.sha1).digest()
    offset = digest[19] & 0xF
    code = (
        (digest[offset] & 0x7F) << 24
        | digest[offset + 1] << 16
        | digest[offset + 2] << 8
        | digest[offset + 3]
    )
    return str(code % 10**digits).rjust(digits, "0")


RFC6238_KEY = b"12345678901234567890"
RFC6238_KEY_B32 = base64.b32encode(RFC6238_KEY).decode()

# (unix time, expected 8-digit SHA-1 TOTP)
RFC6238_VECTORS = [
    (59, "94287082"),
    (1111111109, "07081804"),
    (1111111111, "14050471"),
    (1234567890, "89005924"),
    (2000000000, "69279037"),
    (20000000000, "65353130"),
]


def test_oracle_matches_rfc6238_vectors():
    for t, expected in RFC6238_VECTORS:
        assert oracle_hotp(RFC6238_KEY, t // 30, 8) == expected


def test_hotp_matches_oracle_across_counters():
    key = b"some-other-key-0123"
    for counter in list(range(0, 50)) + [10**6, 2**33]:
        for digits in (6, 8):
            assert hotp(key, counter, digits) == oracle_hotp(key, counter, digits)


def test_totp_at_reproduces_rfc6238_vectors():
    for t, expected in RFC6238_VECTORS:
        assert totp_at(RFC6238_KEY_B32, t, digits=8) == expected


def test_verifier_accepts_rfc6238_vectors():
    for t, expected in RFC6238_VECTORS:
        verifier = TotpVerifier()
        assert verifier.verify(RFC6238_KEY_B32, expected, now=t, digits=8) is True


def test_replay_within_same_step_rejected():
    verifier = TotpVerifier()
    code = totp_at(RFC6238_KEY_B32, 1000.0)
    assert verifier.verify(RFC6238_KEY_B32, code, now=1000.0) is True
    assert verifier.verify(RFC6238_KEY_B32, code, now=1010.0) is False


def test_skew_window_boundary():
    now = 90061.0  # arbitrary
    step = 30
    verifier = TotpVerifier()
    # code two steps in the past is outside skew=1
    stale = totp_at(RFC6238_KEY_B32, now - 2 * step)
    assert verifier.verify(RFC6238_KEY_B32, stale, now=now, skew=1) is False
    # one step back is inside the window
    recent = totp_at(RFC6238_KEY_B32, now - step)
    assert verifier.verify(RFC6238_KEY_B32, recent, now=now, skew=1) is True


def test_verify_rejects_malformed_inputs():
    verifier = TotpVerifier()
    assert verifier.verify("not!!base32", "123456", now=0) is False
    assert verifier.verify(RFC6238_KEY_B32, "12345", now=0) is False  # wrong length
    assert verifier.verify(RFC6238_KEY_B32, "abcdef", now=0) is False
    assert verifier.verify(RFC6238_KEY_B32, "", now=0) is False


def test_random_secret_and_uri():
    secret = random_secret()
    assert len(base64.b32decode(secret + "=" * ((8 - len(secret) % 8) % 8))) == 20
    uri = otpauth_uri("alice", secret, issuer="SSO Portal")
    assert uri.startswith("otpauth://totp/SSO%20Portal%3Aalice?")
    assert f"secret={secret}" in uri


def test_base32_decoding_tolerates_case_and_spaces():
    lowered = RFC6238_KEY_B32.lower()
    spaced = " ".join([lowered[:4], lowered[4:]])
    assert totp_mod._decode_base32(spaced) == RFC6238_KEY
