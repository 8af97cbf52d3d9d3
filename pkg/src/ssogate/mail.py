"""Mail transport interface for the one-time-code second factor.

Real deployments would plug an SMTP transport in; the bundled ones write to a
spool directory or keep messages in memory for tests.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass


@dataclass
class MailMessage:
    to: str
    subject: str
    body: str


class MemoryMailTransport:
    def __init__(self):
        self.sent: list[MailMessage] = []
        self._lock = threading.Lock()

    def send(self, message: MailMessage) -> None:
        with self._lock:
            self.sent.append(message)

    def last_for(self, address: str) -> MailMessage | None:
        with self._lock:
            for message in reversed(self.sent):
                if message.to == address:
                    return message
        return None


class SpoolMailTransport:
    """Writes each message as one JSON file into a spool directory."""

    def __init__(self, spool_dir: str):
        self.spool_dir = spool_dir
        os.makedirs(spool_dir, exist_ok=True)
        self._lock = threading.Lock()
        self._seq = 0

    def send(self, message: MailMessage) -> None:
        with self._lock:
            self._seq += 1
            name = f"{int(time.time() * 1000)}-{self._seq}.json"
            path = os.path.join(self.spool_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"to": message.to, "subject": message.subject, "body": message.body}, fh)
