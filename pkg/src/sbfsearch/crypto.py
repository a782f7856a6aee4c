"""Cryptographic envelope: keyed PRF, record sealing, transport wrapping,
and the sparse filter codec.

Primitive choices (sizes matter for the communication accounting):

- PRF: HMAC over SHA-256/384/512, output truncated to s bits. Keys are
  s/8-byte strings; PRF outputs double as keys for the next derivation
  stage.
- Record sealing: hybrid public-key encryption. X25519 ephemeral key
  agreement, HKDF-SHA256, AES-128-GCM over the serialized record.
  Overhead per record: 32-byte ephemeral public key + 12-byte nonce +
  16-byte tag = 60 bytes (480 bits). One asymmetric operation per record.
- Transport wrapping: AES-128-GCM under a per-session channel key.
  Overhead: 12-byte nonce + 16-byte tag = 28 bytes (224 bits).
- Tokens: free-text keywords/locations map to n-bit tokens via SHA-256
  truncated to n bits. This canonicalizes the vocabulary; it is not a
  security boundary.

All randomized operations accept an optional random.Random so callers can
reproduce runs from a seed; the default draws from the OS.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass
from pathlib import Path
from random import Random

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

HANDLE_BYTES = 16
SEAL_OVERHEAD_BYTES = 32 + 12 + 16   # ephemeral pub + nonce + tag
TRANSPORT_OVERHEAD_BYTES = 12 + 16   # nonce + tag


class CryptoError(Exception):
    """Sealing, opening, or codec failure."""


class PrfCallCounter:
    """Process-wide PRF invocation counter, used to assert the scheme's
    computation accounting in tests. Not synchronized; diagnostic only."""

    def __init__(self) -> None:
        self.count = 0

    def delta_since(self, mark: int) -> int:
        return self.count - mark


prf_calls = PrfCallCounter()


def _hash_for_width(s_bits: int):
    if s_bits <= 256:
        return hashlib.sha256
    if s_bits <= 384:
        return hashlib.sha384
    if s_bits <= 512:
        return hashlib.sha512
    raise CryptoError(f"no standard HMAC hash covers s_bits={s_bits} (max 512)")


def prf(key: bytes, message: bytes, s_bits: int) -> bytes:
    """Keyed PRF: HMAC truncated to s bits. Deterministic in (key, message)."""
    if len(key) != s_bits // 8:
        raise CryptoError(f"PRF key must be {s_bits // 8} bytes, got {len(key)}")
    prf_calls.count += 1
    digest = hmac.new(key, message, _hash_for_width(s_bits)).digest()
    return digest[: s_bits // 8]


def rand_bytes(rng: Random | None, k: int) -> bytes:
    return secrets.token_bytes(k) if rng is None else rng.getrandbits(k * 8).to_bytes(k, "big")


def token_from_text(text: str, n_bits: int) -> bytes:
    """Canonicalize a free-text keyword/location into an n-bit token."""
    return _truncate_bits(hashlib.sha256(text.encode("utf-8")).digest(), n_bits)


def random_token(rng: Random | None, n_bits: int) -> bytes:
    return _truncate_bits(rand_bytes(rng, (n_bits + 7) // 8), n_bits)


def _truncate_bits(data: bytes, n_bits: int) -> bytes:
    n_bytes = (n_bits + 7) // 8
    out = bytearray(data[:n_bytes])
    spare = n_bytes * 8 - n_bits
    if spare:
        out[0] &= 0xFF >> spare
    return bytes(out)


# --- meta record -----------------------------------------------------------

@dataclass(frozen=True)
class MetaInfo:
    """One user's sealed payload: pseudonym, health attribute tokens, the
    external server holding the full record, its memory index, and
    emergency info tokens. All fields are n-bit tokens."""

    user_pseudonym: bytes
    health_attrs: tuple[bytes, ...]
    server_id: bytes
    memory_index: bytes
    emergency_info: tuple[bytes, ...]

    def token_width(self) -> int:
        return len(self.user_pseudonym)

    def to_bytes(self) -> bytes:
        """Ordered concatenation pseudonym || attrs || server || index ||
        emergency, with a one-byte count prefix before each list."""
        width = self.token_width()
        for tok in (self.server_id, self.memory_index, *self.health_attrs, *self.emergency_info):
            if len(tok) != width:
                raise CryptoError("all tokens in a record must share one width")
        for lst in (self.health_attrs, self.emergency_info):
            if len(lst) > 255:
                raise CryptoError("token list exceeds one-byte count prefix")
        parts = [self.user_pseudonym, bytes([len(self.health_attrs)])]
        parts += list(self.health_attrs)
        parts += [self.server_id, self.memory_index, bytes([len(self.emergency_info)])]
        parts += list(self.emergency_info)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, n_bits: int) -> "MetaInfo":
        width = (n_bits + 7) // 8
        view = memoryview(data)
        off = 0

        def take(k: int) -> bytes:
            nonlocal off
            if off + k > len(view):
                raise CryptoError("truncated meta record")
            out = bytes(view[off : off + k])
            off += k
            return out

        pseudonym = take(width)
        attrs = tuple(take(width) for _ in range(take(1)[0]))
        server_id = take(width)
        memory_index = take(width)
        emergency = tuple(take(width) for _ in range(take(1)[0]))
        if off != len(view):
            raise CryptoError("trailing bytes after meta record")
        return cls(pseudonym, attrs, server_id, memory_index, emergency)


@dataclass(frozen=True)
class SealedRecord:
    """Encrypted meta record plus the random handle used as its identity
    in the server store (buffer intersection compares handles, never
    ciphertext bytes)."""

    handle: bytes
    ciphertext: bytes

    @property
    def size_bits(self) -> int:
        return (HANDLE_BYTES + len(self.ciphertext)) * 8


def generate_agent_keypair(rng: Random | None = None) -> tuple[bytes, bytes]:
    """Agent key pair as raw 32-byte strings: (public, private)."""
    priv = X25519PrivateKey.from_private_bytes(rand_bytes(rng, 32))
    pub_raw = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    priv_raw = priv.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    return pub_raw, priv_raw


def _session_key(shared: bytes, context: bytes) -> bytes:
    return HKDF(algorithm=SHA256(), length=16, salt=None, info=context).derive(shared)


def seal_record(
    agent_public: bytes,
    mi: MetaInfo,
    tau_bits: int,
    rng: Random | None = None,
) -> SealedRecord:
    """Seal a meta record under the agents' public key. Fresh random
    handle and ephemeral key per call; only the matching private key
    opens the result."""
    plain = mi.to_bytes()
    if len(plain) * 8 > tau_bits:
        raise CryptoError(f"meta record is {len(plain) * 8} bits, exceeds tau={tau_bits}")
    eph = X25519PrivateKey.from_private_bytes(rand_bytes(rng, 32))
    shared = eph.exchange(X25519PublicKey.from_public_bytes(agent_public))
    key = _session_key(shared, b"sbfsearch record seal")
    nonce = rand_bytes(rng, 12)
    ct = AESGCM(key).encrypt(nonce, plain, None)
    eph_pub = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return SealedRecord(handle=rand_bytes(rng, HANDLE_BYTES), ciphertext=eph_pub + nonce + ct)


def open_record(agent_private: bytes, rec: SealedRecord, n_bits: int) -> MetaInfo:
    """Invert seal_record. Raises CryptoError on wrong key, tamper, or
    truncation; never returns garbage."""
    ct = rec.ciphertext
    if len(ct) < 32 + 12 + 16:
        raise CryptoError("sealed record too short")
    eph_pub, nonce, body = ct[:32], ct[32:44], ct[44:]
    try:
        shared = X25519PrivateKey.from_private_bytes(agent_private).exchange(
            X25519PublicKey.from_public_bytes(eph_pub)
        )
        plain = AESGCM(_session_key(shared, b"sbfsearch record seal")).decrypt(nonce, body, None)
    except (InvalidTag, ValueError) as exc:
        raise CryptoError("record decryption failed") from exc
    return MetaInfo.from_bytes(plain, n_bits)


# --- transport -------------------------------------------------------------

@dataclass(frozen=True)
class TransportEnvelope:
    nonce: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes) -> "TransportEnvelope":
        if len(data) < 12 + 16:
            raise CryptoError("transport envelope too short")
        return cls(nonce=data[:12], ciphertext=data[12:])


def wrap_transport(channel_key: bytes, payload: bytes, rng: Random | None = None) -> TransportEnvelope:
    nonce = rand_bytes(rng, 12)
    return TransportEnvelope(nonce, AESGCM(channel_key).encrypt(nonce, payload, None))


def unwrap_transport(channel_key: bytes, env: TransportEnvelope) -> bytes:
    try:
        return AESGCM(channel_key).decrypt(env.nonce, env.ciphertext, None)
    except InvalidTag as exc:
        raise CryptoError("transport authentication failed") from exc


# --- sparse filter codec ---------------------------------------------------

def position_width(m: int) -> int:
    """Fixed bit width of one encoded position for an m-position filter."""
    return max(1, (m - 1).bit_length())


def compress_positions(positions: list[int], m: int) -> bytes:
    """Encode set-bit positions as a 4-byte big-endian popcount header
    followed by the positions ascending, each a fixed-width big-endian
    integer, bit-packed."""
    width = position_width(m)
    prev = -1
    acc = 0
    for p in positions:
        if p <= prev:
            raise CryptoError("positions must be strictly ascending")
        if p >= m:
            raise CryptoError(f"position {p} out of range for m={m}")
        acc = (acc << width) | p
        prev = p
    total_bits = len(positions) * width
    acc <<= (-total_bits) % 8
    return len(positions).to_bytes(4, "big") + acc.to_bytes((total_bits + 7) // 8, "big")


def decompress_positions(data: bytes, m: int) -> list[int]:
    """Invert compress_positions, validating range and ordering."""
    if len(data) < 4:
        raise CryptoError("sparse filter missing header")
    count = int.from_bytes(data[:4], "big")
    width = position_width(m)
    total_bits = count * width
    body = data[4:]
    if len(body) != (total_bits + 7) // 8:
        raise CryptoError("sparse filter length mismatch")
    acc = int.from_bytes(body, "big") >> ((-total_bits) % 8)
    positions = [0] * count
    mask = (1 << width) - 1
    for i in range(count - 1, -1, -1):
        positions[i] = acc & mask
        acc >>= width
    prev = -1
    for p in positions:
        if p <= prev:
            raise CryptoError("decoded positions not strictly ascending")
        if p >= m:
            raise CryptoError(f"decoded position {p} out of range for m={m}")
        prev = p
    return positions


# --- key files -------------------------------------------------------------

def write_key_file(path: str | Path, key: bytes) -> None:
    Path(path).write_text(key.hex() + "\n")


def read_key_file(path: str | Path) -> bytes:
    return bytes.fromhex(Path(path).read_text().strip())
