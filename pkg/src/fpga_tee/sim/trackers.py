"""Scenario-wide invariant trackers: IV uniqueness and plaintext leakage."""

from __future__ import annotations

import numpy as np

_RECORD = 20  # 8-byte subkey id || 12-byte IV
_DTYPE = np.dtype([("k", ">u8"), ("hi", ">u8"), ("lo", ">u4")])


class IvTracker:
    """Multiset of ``(subkey id, IV)`` pairs handed to the CTR engine.

    Records are packed into one growing buffer (20 bytes each) so a million
    seals cost ~20 MB; duplicates are found at check time by sorting.
    """

    def __init__(self):
        self._buf = bytearray()
        self.count = 0

    def record(self, subkey_id: bytes, iv: bytes) -> None:
        if len(subkey_id) != 8 or len(iv) != 12:
            raise ValueError("expected 8-byte subkey id and 12-byte IV")
        self._buf += subkey_id
        self._buf += iv
        self.count += 1

    def duplicates(self) -> int:
        if self.count < 2:
            return 0
        arr = np.frombuffer(bytes(self._buf), dtype=_DTYPE)
        uniq = np.unique(arr)
        return self.count - len(uniq)

    def check(self) -> bool:
        return self.duplicates() == 0

    def inject_duplicate(self) -> None:
        """Test hook: re-record the most recent pair."""
        if not self.count:
            raise ValueError("nothing recorded yet")
        last = bytes(self._buf[-_RECORD:])
        self.record(last[:8], last[8:])


def iv_tracker_record(tracker: IvTracker, subkey_id: bytes, iv: bytes) -> None:
    tracker.record(subkey_id, iv)


def iv_tracker_check(tracker: IvTracker) -> bool:
    return tracker.check()


MIN_PROBE_BYTES = 16


class LeakProbe:
    """Collects secrets and written plaintexts, then scans untrusted storage for them.

    Needles shorter than 16 bytes are ignored (random short collisions), as
    are low-entropy payloads such as constant fills that trivially occur in
    zero-initialised memory.
    """

    def __init__(self, max_plaintexts: int = 256):
        self.secrets: dict[str, bytes] = {}
        self.plaintexts: list[bytes] = []
        self.max_plaintexts = max_plaintexts
        self._seen = 0

    def add_secret(self, label: str, value: bytes) -> None:
        self.secrets[label] = bytes(value)

    def add_plaintext(self, data: bytes) -> None:
        if len(data) < MIN_PROBE_BYTES or len(set(data)) < 8:
            return
        self._seen += 1
        if len(self.plaintexts) < self.max_plaintexts:
            self.plaintexts.append(bytes(data))

    def needles(self):
        for label, value in self.secrets.items():
            yield label, value
        for i, p in enumerate(self.plaintexts):
            yield f"plaintext[{i}]", p

    def scan(self, dram=None, transcripts=()) -> list[str]:
        """Return labels of every needle found in DRAM or any transcript."""
        hits = []
        blobs = [bytes(t) for t in transcripts]
        for label, needle in self.needles():
            if dram is not None and dram.contains(needle):
                hits.append(f"{label}@dram")
            if any(needle in b for b in blobs):
                hits.append(f"{label}@channel")
        return hits
