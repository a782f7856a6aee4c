"""Client-side secure index: key authority setup, user registration,
index building with obfuscation padding, removal requests, and agent
query generation.

The derivation chain per (keyword w, location g) is

    subkeys   k_i = PRF(secret_w, v_i)          i = 1..r   (registration)
    trapdoor  z_i = PRF(k_i, w)                            (per search/build)
    location  y_i = PRF(z_i, g)
    positions     = hash_positions(y_1..y_r)

so any party holding the per-keyword secret and the initial vectors maps
(w, g) to the same filter positions. That cross-user determinism is what
makes server-side buffer intersection return every matching record.

Every user's uploaded filter carries exactly q elements' worth of load:
d real keywords plus (q - d) random blinding elements inserted into a
separate obfuscating filter that is OR-ed in. A blinding value b is
expanded to r lane elements (b || lane) so its footprint matches a real
keyword's.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from random import Random

from .crypto import (
    CryptoError,
    MetaInfo,
    SealedRecord,
    generate_agent_keypair,
    prf,
    rand_bytes,
    random_token,
    seal_record,
)
from .filters import BitFilter, CountingFilter, hash_positions
from .params import SystemParams


class SchemeError(ValueError):
    """Scheme-level misuse: unknown keyword, quota exceeded, zone mismatch."""


@dataclass(frozen=True)
class MasterSecrets:
    """Authority-held material: one secret per vocabulary keyword, the r
    initial vectors, and the agents' key pair."""

    keyword_secrets: dict[bytes, bytes]
    init_vectors: tuple[bytes, ...]
    agent_public: bytes
    agent_private: bytes


@dataclass(frozen=True)
class UserKeyring:
    """Per-user master keys: r subkeys for each registered keyword, bound
    to one zone."""

    zone: bytes
    keys: dict[bytes, tuple[bytes, ...]]


@dataclass
class UserIndex:
    """The (counting filter, bit filter, obfuscating filter) triple a
    user maintains per zone. obf_elements retains the raw blinding values
    for later removal swaps; they are consumed, never replenished."""

    zone: bytes
    bf: BitFilter
    cbf: CountingFilter
    obf: BitFilter
    obf_elements: list[bytes] = field(default_factory=list)


@dataclass(frozen=True)
class UploadPacket:
    zone: bytes
    compressed_bf: bytes
    sealed: SealedRecord

    def to_bytes(self) -> bytes:
        ct = self.sealed.ciphertext
        return b"".join([
            self.zone,
            self.sealed.handle,
            struct.pack(">I", len(ct)), ct,
            struct.pack(">I", len(self.compressed_bf)), self.compressed_bf,
        ])

    @classmethod
    def from_bytes(cls, data: bytes, zone_width: int) -> "UploadPacket":
        try:
            off = 0
            zone = data[off : off + zone_width]; off += zone_width
            handle = data[off : off + 16]; off += 16
            (ct_len,) = struct.unpack_from(">I", data, off); off += 4
            ct = data[off : off + ct_len]; off += ct_len
            (bf_len,) = struct.unpack_from(">I", data, off); off += 4
            compressed = data[off : off + bf_len]; off += bf_len
            if off != len(data) or len(zone) != zone_width or len(handle) != 16 \
                    or len(ct) != ct_len or len(compressed) != bf_len:
                raise ValueError
        except (struct.error, ValueError):
            raise SchemeError("malformed upload packet") from None
        return cls(zone=zone, compressed_bf=compressed,
                   sealed=SealedRecord(handle=handle, ciphertext=ct))


@dataclass(frozen=True)
class RemovalRequest:
    zone: bytes
    rbf_prime: BitFilter
    handle: bytes
    replacement: UploadPacket | None = None


def generate_master_secrets(
    params: SystemParams, vocabulary: list[bytes], rng: Random | None = None
) -> MasterSecrets:
    """Fresh secrets for an l-keyword vocabulary: one s-bit key per
    keyword, r n-bit initial vectors, one agent key pair."""
    if len(vocabulary) != params.l:
        raise SchemeError(f"vocabulary has {len(vocabulary)} tokens, params say l={params.l}")
    if len(set(vocabulary)) != len(vocabulary):
        raise SchemeError("vocabulary tokens must be distinct")
    secrets_map = {w: rand_bytes(rng, params.s_bytes) for w in vocabulary}
    vectors = tuple(random_token(rng, params.n_bits) for _ in range(params.r))
    agent_pub, agent_priv = generate_agent_keypair(rng)
    return MasterSecrets(secrets_map, vectors, agent_pub, agent_priv)


def register_user(
    ms: MasterSecrets, user_keywords: list[bytes], zone: bytes, params: SystemParams
) -> UserKeyring:
    """Derive the user's per-keyword subkeys k_i = PRF(secret_w, v_i).
    Costs exactly len(user_keywords) * r PRF calls."""
    if len(user_keywords) > params.q:
        raise SchemeError(f"{len(user_keywords)} keywords exceed the padding quota q={params.q}")
    if len(set(user_keywords)) != len(user_keywords):
        raise SchemeError("duplicate keyword in registration")
    keys: dict[bytes, tuple[bytes, ...]] = {}
    for w in user_keywords:
        if w not in ms.keyword_secrets:
            raise SchemeError(f"keyword token {w.hex()} not in vocabulary")
        secret = ms.keyword_secrets[w]
        keys[w] = tuple(prf(secret, v, params.s_bits) for v in ms.init_vectors)
    return UserKeyring(zone=zone, keys=keys)


def keyword_trapdoor(kr: UserKeyring, w: bytes, params: SystemParams) -> list[bytes]:
    """z_i = PRF(k_i, w); r PRF calls."""
    if w not in kr.keys:
        raise SchemeError(f"keyword token {w.hex()} not registered")
    return [prf(k, w, params.s_bits) for k in kr.keys[w]]


def derive_location_vector(trapdoor: list[bytes], location: bytes, params: SystemParams) -> list[bytes]:
    """y_i = PRF(z_i, location); r PRF calls. Users and agents holding
    the same keyword material derive identical vectors for (w, location)."""
    return [prf(z, location, params.s_bits) for z in trapdoor]


def keyword_positions(kr: UserKeyring, w: bytes, location: bytes, params: SystemParams) -> list[int]:
    y = derive_location_vector(keyword_trapdoor(kr, w, params), location, params)
    return hash_positions(y, params.m, params.r)


def _blinding_lane_elements(value: bytes, r: int) -> list[bytes]:
    # footprint of a blinding value mirrors a real keyword: r lane elements
    return [value + i.to_bytes(4, "big") for i in range(1, r + 1)]


def blinding_positions(value: bytes, params: SystemParams) -> list[int]:
    return hash_positions(_blinding_lane_elements(value, params.r), params.m, params.r)


def build_user_index(
    kr: UserKeyring, location: bytes, params: SystemParams, rng: Random | None = None
) -> UserIndex:
    """Insert every registered keyword at `location` into the bit and
    counting filters, pad with (q - d) blinding elements in the
    obfuscating filter, and OR the two so the uploaded load is always q
    elements. Costs 2r PRF calls per real keyword."""
    d = len(kr.keys)
    bf = BitFilter(params.m)
    cbf = CountingFilter(params.m)
    obf = BitFilter(params.m)
    for w in kr.keys:
        ps = keyword_positions(kr, w, location, params)
        bf.insert(ps)
        cbf.add(ps)
    obf_elements: list[bytes] = []
    for _ in range(params.q - d):
        value = rand_bytes(rng, params.n_bytes)
        obf.insert(blinding_positions(value, params))
        obf_elements.append(value)
    return UserIndex(zone=kr.zone, bf=bf.union(obf), cbf=cbf, obf=obf, obf_elements=obf_elements)


def make_upload_packet(
    idx: UserIndex,
    mi: MetaInfo,
    agent_public: bytes,
    zone: bytes,
    params: SystemParams,
    rng: Random | None = None,
) -> UploadPacket:
    if zone != idx.zone:
        raise SchemeError("zone does not match the index")
    sealed = seal_record(agent_public, mi, params.tau_bits, rng)
    return UploadPacket(zone=zone, compressed_bf=idx.bf.compress(), sealed=sealed)


def build_removal_request(
    idx: UserIndex,
    kr: UserKeyring,
    w: bytes,
    location: bytes,
    handle: bytes,
    params: SystemParams,
    rng: Random | None = None,
    replacement: UploadPacket | None = None,
) -> RemovalRequest:
    """Build the pruning filter for one previously inserted keyword and
    update the index in place.

    Positions the keyword shares with other held keywords (counter > 1)
    must stay live on the server, so each such bit is swapped for a
    fresh position drawn from an unused blinding element; the element is
    consumed. Counters drop by one per original occurrence either way.
    """
    ps = keyword_positions(kr, w, location, params)
    occurrences: dict[int, int] = {}
    for p in ps:
        occurrences[p] = occurrences.get(p, 0) + 1
    for p, n in occurrences.items():
        if idx.cbf.counters[p] < n:
            raise SchemeError("keyword was never inserted at this location")

    rbf_prime = BitFilter(params.m)
    rbf_prime.insert(ps)
    pick = rng if rng is not None else Random()
    for p in sorted(occurrences):
        if idx.cbf.counters[p] <= occurrences[p]:
            continue  # no other keyword needs this buffer; prune it as is
        rbf_prime.bits[p] = False
        swap = _draw_swap_position(idx, rbf_prime, params, pick)
        rbf_prime.bits[swap] = True
    idx.cbf.subtract(ps)

    # rebuild obf from the surviving blinding elements, then restore the
    # set-relation invariants: bf = (cbf > 0) OR obf
    obf = BitFilter(params.m)
    for value in idx.obf_elements:
        obf.insert(blinding_positions(value, params))
    idx.obf = obf
    idx.bf = idx.cbf.nonzero_bits().union(obf)
    return RemovalRequest(zone=idx.zone, rbf_prime=rbf_prime, handle=handle, replacement=replacement)


def _draw_swap_position(
    idx: UserIndex, rbf_prime: BitFilter, params: SystemParams, rng: Random
) -> int:
    """Consume one blinding element owning a position with zero counter
    that is not already marked for pruning."""
    order = list(range(len(idx.obf_elements)))
    rng.shuffle(order)
    for i in order:
        positions = blinding_positions(idx.obf_elements[i], params)
        usable = [p for p in positions if idx.cbf.counters[p] == 0 and not rbf_prime.bits[p]]
        if usable:
            idx.obf_elements.pop(i)
            return rng.choice(usable)
    raise SchemeError("no unused blinding element available for a removal swap")


def build_conjunctive_query(
    kr: UserKeyring, keywords: list[bytes], location: bytes, params: SystemParams
) -> BitFilter:
    """Query filter for an AND over keywords at one location: the union
    of each keyword's positions. Queries carry no blinding padding."""
    if not keywords:
        raise SchemeError("conjunctive query needs at least one keyword")
    query = BitFilter(params.m)
    for w in keywords:
        query.insert(keyword_positions(kr, w, location, params))
    return query
