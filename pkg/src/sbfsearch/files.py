"""Binary file formats for client-side artifacts: master secrets,
user keyrings, and user indexes. Each format opens with an eight-byte
magic tag; integers are big-endian."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .filters import BitFilter, CountingFilter
from .index import MasterSecrets, UserIndex, UserKeyring

MASTER_MAGIC = b"SBFKEYS1"
KEYRING_MAGIC = b"SBFKRNG1"
INDEX_MAGIC = b"SBFINDX1"


class FileFormatError(Exception):
    pass


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, k: int) -> bytes:
        if self.off + k > len(self.data):
            raise FileFormatError("truncated file")
        out = self.data[self.off : self.off + k]
        self.off += k
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def done(self) -> None:
        if self.off != len(self.data):
            raise FileFormatError("trailing bytes")


def save_master_secrets(ms: MasterSecrets, path: str | Path) -> None:
    any_token = next(iter(ms.keyword_secrets))
    any_key = ms.keyword_secrets[any_token]
    parts = [
        MASTER_MAGIC,
        struct.pack(">BHHI", len(any_token), len(any_key), len(ms.init_vectors), len(ms.keyword_secrets)),
    ]
    for token in sorted(ms.keyword_secrets):
        parts.append(token + ms.keyword_secrets[token])
    parts.extend(ms.init_vectors)
    parts.append(ms.agent_public + ms.agent_private)
    Path(path).write_bytes(b"".join(parts))


def load_master_secrets(path: str | Path) -> MasterSecrets:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(8) != MASTER_MAGIC:
        raise FileFormatError("not a master secrets file")
    token_bytes, key_bytes, r, l = struct.unpack(">BHHI", rd.take(9))
    secrets_map = {}
    for _ in range(l):
        token = rd.take(token_bytes)
        secrets_map[token] = rd.take(key_bytes)
    vectors = tuple(rd.take(token_bytes) for _ in range(r))
    agent_pub = rd.take(32)
    agent_priv = rd.take(32)
    rd.done()
    return MasterSecrets(secrets_map, vectors, agent_pub, agent_priv)


def save_keyring(kr: UserKeyring, path: str | Path) -> None:
    token_bytes = len(kr.zone)
    parts = [KEYRING_MAGIC]
    if kr.keys:
        any_kw = next(iter(kr.keys))
        r = len(kr.keys[any_kw])
        key_bytes = len(kr.keys[any_kw][0])
    else:
        r, key_bytes = 0, 0
    parts.append(struct.pack(">BHHI", token_bytes, key_bytes, r, len(kr.keys)))
    parts.append(kr.zone)
    for token in kr.keys:
        parts.append(token + b"".join(kr.keys[token]))
    Path(path).write_bytes(b"".join(parts))


def load_keyring(path: str | Path) -> UserKeyring:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(8) != KEYRING_MAGIC:
        raise FileFormatError("not a keyring file")
    token_bytes, key_bytes, r, count = struct.unpack(">BHHI", rd.take(9))
    zone = rd.take(token_bytes)
    keys = {}
    for _ in range(count):
        token = rd.take(token_bytes)
        keys[token] = tuple(rd.take(key_bytes) for _ in range(r))
    rd.done()
    return UserKeyring(zone=zone, keys=keys)


def save_index(idx: UserIndex, path: str | Path) -> None:
    parts = [
        INDEX_MAGIC,
        struct.pack(">IB", idx.bf.m, len(idx.zone)),
        idx.zone,
        idx.bf.to_bytes(),
        idx.cbf.counters.astype(">u4").tobytes(),
        idx.obf.to_bytes(),
        struct.pack(">H", len(idx.obf_elements)),
    ]
    for value in idx.obf_elements:
        parts.append(struct.pack(">H", len(value)) + value)
    Path(path).write_bytes(b"".join(parts))


def load_index(path: str | Path) -> UserIndex:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(8) != INDEX_MAGIC:
        raise FileFormatError("not an index file")
    m, zone_len = struct.unpack(">IB", rd.take(5))
    zone = rd.take(zone_len)
    dense = 8 + (m + 7) // 8
    bf = BitFilter.from_bytes(rd.take(dense))
    counters = np.frombuffer(rd.take(4 * m), dtype=">u4").astype(np.int64)
    obf = BitFilter.from_bytes(rd.take(dense))
    count = rd.u16()
    elements = []
    for _ in range(count):
        elements.append(rd.take(rd.u16()))
    rd.done()
    return UserIndex(zone=zone, bf=bf, cbf=CountingFilter(m, counters), obf=obf, obf_elements=elements)
