from __future__ import annotations

import random

import pytest

from ssogate import tokens
from ssogate.tokens import (
    MalformedToken,
    ServiceTokenClaims,
    TamperedToken,
    TokenExpired,
    TokenOutOfScope,
    mint_service_token,
    new_key,
    seal_access_token,
    seal_sid,
    unseal_access_token,
    unseal_sid,
    verify_service_token,
)

KEY = new_key()
OTHER_KEY = new_key()


def claims_at(t0: float, vhosts=None, headers=None) -> ServiceTokenClaims:
    return ServiceTokenClaims(
        sid="ab" * 16,
        vhosts=vhosts or ["app2.example.com"],
        issued_at=t0,
        service_headers=headers or {},
    )


def test_service_token_round_trip():
    t0 = 1_700_000_000.0
    blob = mint_service_token(claims_at(t0), KEY)
    got = verify_service_token(blob, "app2.example.com", t0 + 1, KEY, max_age_seconds=30)
    assert got == claims_at(t0)


def test_two_mints_differ():
    t0 = 1_700_000_000.0
    assert mint_service_token(claims_at(t0), KEY) != mint_service_token(claims_at(t0), KEY)


def test_hundred_mints_all_distinct():
    t0 = 0.0
    blobs = {mint_service_token(claims_at(t0), KEY) for _ in range(100)}
    assert len(blobs) == 100


def test_out_of_scope_vhost():
    blob = mint_service_token(claims_at(0.0, vhosts=["app2.example.com"]), KEY)
    with pytest.raises(TokenOutOfScope):
        verify_service_token(blob, "app3.example.com", 1.0, KEY)


def test_age_boundary_is_exclusive():
    blob = mint_service_token(claims_at(0.0), KEY)
    # exactly max_age is still valid, max_age+1 is not
    assert verify_service_token(blob, "app2.example.com", 30.0, KEY, max_age_seconds=30)
    with pytest.raises(TokenExpired):
        verify_service_token(blob, "app2.example.com", 31.0, KEY, max_age_seconds=30)


def test_single_byte_flip_always_rejected():
    t0 = 0.0
    blob = mint_service_token(claims_at(t0), KEY)
    raw = bytearray(blob.encode("ascii"))
    rng = random.Random(7)
    accepted = 0
    for pos in range(len(raw)):
        mutated = bytearray(raw)
        original = mutated[pos]
        while mutated[pos] == original:
            mutated[pos] = rng.randrange(33, 127)
        try:
            verify_service_token(mutated.decode("ascii"), "app2.example.com", t0 + 1, KEY)
            accepted += 1
        except (TamperedToken, MalformedToken):
            pass
    assert accepted == 0


def test_service_headers_survive_round_trip():
    claims = claims_at(5.0, headers={"X-Src-Host": "app1.example.com"})
    blob = mint_service_token(claims, KEY)
    got = verify_service_token(blob, "app2.example.com", 6.0, KEY)
    assert got.service_headers == {"X-Src-Host": "app1.example.com"}


def test_empty_vhosts_rejected_at_mint():
    with pytest.raises(ValueError):
        mint_service_token(ServiceTokenClaims(sid="ab" * 16, vhosts=[], issued_at=0.0), KEY)


def test_seal_unseal_sid_round_trip():
    sid = "0123456789abcdef" * 2
    assert unseal_sid(seal_sid(sid, KEY), KEY) == sid


def test_unseal_garbage_is_malformed():
    with pytest.raises(MalformedToken):
        unseal_sid("AAAA", KEY)
    with pytest.raises(MalformedToken):
        unseal_sid("!!%", KEY)


def test_unseal_wrong_key_is_tampered():
    blob = seal_sid("ab" * 16, KEY)
    with pytest.raises(TamperedToken):
        unseal_sid(blob, OTHER_KEY)


def test_token_families_are_domain_separated():
    sid = "ab" * 16
    sid_blob = seal_sid(sid, KEY)
    with pytest.raises(TamperedToken):
        verify_service_token(sid_blob, "app2.example.com", 0.0, KEY)
    svc_blob = mint_service_token(claims_at(0.0), KEY)
    with pytest.raises(TamperedToken):
        unseal_sid(svc_blob, KEY)


def test_access_token_round_trip_and_tamper():
    payload = {"sid": "ab" * 16, "scopes": ["openid", "email"], "client_id": "rp1"}
    blob = seal_access_token(payload, KEY)
    assert unseal_access_token(blob, KEY) == payload
    # mid-blob flip keeps the encoding canonical, so this is a true AEAD reject
    mutated = blob[:10] + ("A" if blob[10] != "A" else "B") + blob[11:]
    with pytest.raises(TamperedToken):
        unseal_access_token(mutated, KEY)


def test_bad_key_length_rejected():
    with pytest.raises(ValueError):
        seal_sid("ab" * 16, b"short")


def test_random_round_trip_property():
    rng = random.Random(42)
    for _ in range(50):
        vhosts = [f"app{rng.randrange(100)}.example.com" for _ in range(rng.randrange(1, 4))]
        headers = {f"X-H{j}": str(rng.randrange(1000)) for j in range(rng.randrange(3))}
        claims = ServiceTokenClaims(
            sid="%032x" % rng.getrandbits(128),
            vhosts=vhosts,
            issued_at=float(rng.randrange(10**9)),
            service_headers=headers,
        )
        blob = mint_service_token(claims, KEY)
        got = verify_service_token(blob, vhosts[0], claims.issued_at + 1, KEY)
        assert got == claims


def test_malformed_claims_payload():
    blob = tokens._seal(b"[1,2,3]", KEY, tokens._AAD_SERVICE)
    with pytest.raises(MalformedToken):
        verify_service_token(blob, "x", 0.0, KEY)
