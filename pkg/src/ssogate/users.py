"""Local user store: a JSON file of user records with scrypt password hashes."""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import secrets
import threading
from dataclasses import dataclass, field

SCRYPT_N = 2**14
SCRYPT_R = 8
SCRYPT_P = 1
_DK_LEN = 32


class UserStoreError(Exception):
    pass


class UnknownUser(UserStoreError):
    pass


def hash_password(password: str, *, n: int = SCRYPT_N) -> str:
    salt = secrets.token_bytes(16)
    dk = hashlib.scrypt(password.encode("utf-8"), salt=salt, n=n, r=SCRYPT_R, p=SCRYPT_P, dklen=_DK_LEN)
    return f"scrypt${n}${SCRYPT_R}${SCRYPT_P}${salt.hex()}${dk.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        scheme, n, r, p, salt_hex, dk_hex = stored.split("$")
        if scheme != "scrypt":
            return False
        dk = hashlib.scrypt(
            password.encode("utf-8"),
            salt=bytes.fromhex(salt_hex),
            n=int(n),
            r=int(r),
            p=int(p),
            dklen=len(dk_hex) // 2,
        )
    except (ValueError, TypeError):
        return False
    return hmac.compare_digest(dk.hex(), dk_hex)


# Hash verified against when the uid is unknown, so response timing does not
# reveal which of user/password was wrong.
_DUMMY_HASH = hash_password("dummy-password-for-timing")


@dataclass
class UserRecord:
    uid: str
    password_hash: str
    attributes: dict[str, str] = field(default_factory=dict)
    totp_secret: str | None = None
    mail: str | None = None
    locked_until: float | None = None

    def to_dict(self) -> dict:
        return {
            "uid": self.uid,
            "password_hash": self.password_hash,
            "attributes": dict(self.attributes),
            "totp_secret": self.totp_secret,
            "mail": self.mail,
            "locked_until": self.locked_until,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UserRecord":
        return cls(
            uid=data["uid"],
            password_hash=data["password_hash"],
            attributes=dict(data.get("attributes") or {}),
            totp_secret=data.get("totp_secret"),
            mail=data.get("mail"),
            locked_until=data.get("locked_until"),
        )


class UserStore:
    """JSON-file backed user records; writes rewrite the file atomically."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.RLock()
        self._users: dict[str, UserRecord] = {}
        if os.path.exists(path):
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            data = json.load(fh)
        self._users = {u["uid"]: UserRecord.from_dict(u) for u in data.get("users", [])}

    def _save(self) -> None:
        payload = {"users": [u.to_dict() for u in self._users.values()]}
        tmp = f"{self.path}.tmp"
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        os.replace(tmp, self.path)

    def add(
        self,
        uid: str,
        password: str,
        attributes: dict[str, str] | None = None,
        mail: str | None = None,
        *,
        scrypt_n: int = SCRYPT_N,
    ) -> UserRecord:
        with self._lock:
            if uid in self._users:
                raise UserStoreError(f"user {uid!r} already exists")
            record = UserRecord(
                uid=uid,
                password_hash=hash_password(password, n=scrypt_n),
                attributes=dict(attributes or {}),
                mail=mail,
            )
            self._users[uid] = record
            self._save()
            return record

    def get(self, uid: str) -> UserRecord | None:
        with self._lock:
            record = self._users.get(uid)
            return UserRecord.from_dict(record.to_dict()) if record else None

    def require(self, uid: str) -> UserRecord:
        record = self.get(uid)
        if record is None:
            raise UnknownUser(uid)
        return record

    def list_uids(self) -> list[str]:
        with self._lock:
            return sorted(self._users)

    def check_password(self, uid: str, password: str) -> bool:
        """Timing-safe: unknown users still cost one scrypt verification."""
        with self._lock:
            record = self._users.get(uid)
            stored = record.password_hash if record else _DUMMY_HASH
        ok = verify_password(password, stored)
        return ok and record is not None

    def set_password(self, uid: str, password: str, *, scrypt_n: int = SCRYPT_N) -> None:
        with self._lock:
            record = self._users.get(uid)
            if record is None:
                raise UnknownUser(uid)
            record.password_hash = hash_password(password, n=scrypt_n)
            self._save()

    def set_totp_secret(self, uid: str, secret: str | None) -> None:
        with self._lock:
            record = self._users.get(uid)
            if record is None:
                raise UnknownUser(uid)
            record.totp_secret = secret
            self._save()

    def set_locked_until(self, uid: str, until: float | None) -> None:
        with self._lock:
            record = self._users.get(uid)
            if record is None:
                raise UnknownUser(uid)
            record.locked_until = until
            self._save()

    def set_attributes(self, uid: str, attributes: dict[str, str]) -> None:
        with self._lock:
            record = self._users.get(uid)
            if record is None:
                raise UnknownUser(uid)
            record.attributes = dict(attributes)
            self._save()
