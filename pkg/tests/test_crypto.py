from random import Random

import pytest

from sbfsearch import crypto
from sbfsearch.crypto import (
    CryptoError,
    MetaInfo,
    TransportEnvelope,
    compress_positions,
    decompress_positions,
    generate_agent_keypair,
    open_record,
    prf,
    seal_record,
    token_from_text,
    unwrap_transport,
    wrap_transport,
)


def _mi(n_bits=64, attrs=2, emergency=1):
    tok = lambda s: token_from_text(s, n_bits)
    return MetaInfo(
        user_pseudonym=tok("alice"),
        health_attrs=tuple(tok(f"attr{i}") for i in range(attrs)),
        server_id=tok("cs-7"),
        memory_index=tok("slot-12"),
        emergency_info=tuple(tok(f"em{i}") for i in range(emergency)),
    )


class TestPrf:
    def test_deterministic(self):
        key = bytes(32)
        assert prf(key, b"msg", 256) == prf(key, b"msg", 256)

    def test_output_width(self):
        for s in (128, 256, 384, 512):
            assert len(prf(bytes(s // 8), b"x", s)) == s // 8
        with pytest.raises(CryptoError):
            prf(bytes(80), b"x", 640)

    def test_key_length_enforced(self):
        with pytest.raises(CryptoError):
            prf(bytes(31), b"x", 256)

    def test_no_collisions_across_messages(self):
        rng = Random(0)
        key = bytes(32)
        outputs = {prf(key, rng.randbytes(16), 256) for _ in range(10_000)}
        assert len(outputs) == 10_000

    def test_key_separation(self):
        rng = Random(1)
        msg = b"fixed message"
        outputs = {prf(rng.randbytes(32), msg, 256) for _ in range(10_000)}
        assert len(outputs) == 10_000

    def test_call_counter(self):
        mark = crypto.prf_calls.count
        prf(bytes(32), b"m", 256)
        prf(bytes(32), b"m", 256)
        assert crypto.prf_calls.delta_since(mark) == 2


class TestTokens:
    def test_deterministic_and_truncated(self):
        t = token_from_text("asthma", 160)
        assert t == token_from_text("asthma", 160)
        assert len(t) == 20

    def test_sub_byte_width_masks_high_bits(self):
        t = token_from_text("x", 12)
        assert len(t) == 2 and t[0] <= 0x0F


class TestSealing:
    def test_round_trip(self):
        pub, priv = generate_agent_keypair(Random(3))
        mi = _mi()
        rec = seal_record(pub, mi, 4096, Random(4))
        assert open_record(priv, rec, 64) == mi

    def test_randomized_encryption(self):
        pub, _ = generate_agent_keypair(Random(3))
        mi = _mi()
        a = seal_record(pub, mi, 4096)
        b = seal_record(pub, mi, 4096)
        assert a.ciphertext != b.ciphertext
        assert a.handle != b.handle

    def test_wrong_key_fails_loudly(self):
        pub, _ = generate_agent_keypair(Random(5))
        _, other_priv = generate_agent_keypair(Random(6))
        rec = seal_record(pub, _mi(), 4096)
        with pytest.raises(CryptoError):
            open_record(other_priv, rec, 64)

    def test_truncated_ciphertext_fails(self):
        pub, priv = generate_agent_keypair(Random(7))
        rec = seal_record(pub, _mi(), 4096)
        broken = crypto.SealedRecord(rec.handle, rec.ciphertext[:-3])
        with pytest.raises(CryptoError):
            open_record(priv, broken, 64)

    def test_oversize_record_rejected(self):
        pub, _ = generate_agent_keypair(Random(8))
        with pytest.raises(CryptoError):
            seal_record(pub, _mi(attrs=20), 128)

    def test_handles_unique_over_many_seals(self):
        pub, _ = generate_agent_keypair(Random(9))
        mi = _mi(attrs=0, emergency=0)
        handles = {seal_record(pub, mi, 4096).handle for _ in range(10_000)}
        assert len(handles) == 10_000

    def test_size_accounting(self):
        pub, _ = generate_agent_keypair(Random(10))
        mi = _mi()
        rec = seal_record(pub, mi, 4096)
        overhead = crypto.SEAL_OVERHEAD_BYTES + crypto.HANDLE_BYTES
        assert rec.size_bits == (len(mi.to_bytes()) + overhead) * 8


class TestMetaInfo:
    def test_serialization_round_trip(self):
        mi = _mi(n_bits=64, attrs=3, emergency=2)
        assert MetaInfo.from_bytes(mi.to_bytes(), 64) == mi

    def test_empty_lists(self):
        mi = _mi(attrs=0, emergency=0)
        assert MetaInfo.from_bytes(mi.to_bytes(), 64) == mi

    def test_mixed_widths_rejected(self):
        mi = MetaInfo(token_from_text("a", 64), (token_from_text("b", 160),),
                      token_from_text("c", 64), token_from_text("d", 64), ())
        with pytest.raises(CryptoError):
            mi.to_bytes()

    def test_trailing_bytes_rejected(self):
        data = _mi().to_bytes() + b"\x00"
        with pytest.raises(CryptoError):
            MetaInfo.from_bytes(data, 64)


class TestTransport:
    def test_round_trip(self):
        key = bytes(16)
        env = wrap_transport(key, b"payload", Random(1))
        assert unwrap_transport(key, env) == b"payload"

    def test_tamper_rejected(self):
        key = bytes(16)
        env = wrap_transport(key, b"payload")
        flipped = bytes([env.ciphertext[0] ^ 1]) + env.ciphertext[1:]
        with pytest.raises(CryptoError):
            unwrap_transport(key, TransportEnvelope(env.nonce, flipped))

    def test_envelope_bytes_round_trip(self):
        env = wrap_transport(bytes(16), b"data")
        again = TransportEnvelope.from_bytes(env.to_bytes())
        assert again == env

    def test_nonce_uniqueness(self):
        key = bytes(16)
        nonces = {wrap_transport(key, b"x").nonce for _ in range(10_000)}
        assert len(nonces) == 10_000


class TestSparseCodec:
    def test_empty_filter_is_header_only(self):
        assert compress_positions([], 30_000) == b"\x00\x00\x00\x00"
        assert decompress_positions(b"\x00\x00\x00\x00", 30_000) == []

    def test_reference_size(self):
        # 150 positions in a 30720-position filter: 15 bits each
        positions = list(range(0, 30_000, 200))
        data = compress_positions(positions, 30_720)
        assert len(data) == 4 + (150 * 15 + 7) // 8

    def test_round_trip_random_instances(self):
        rng = Random(17)
        for _ in range(1000):
            m = rng.randint(1, 4096)
            count = rng.randint(0, min(m, 64))
            positions = sorted(rng.sample(range(m), count))
            data = compress_positions(positions, m)
            assert decompress_positions(data, m) == positions

    def test_rejects_bad_positions(self):
        with pytest.raises(CryptoError):
            compress_positions([5, 5], 10)
        with pytest.raises(CryptoError):
            compress_positions([3, 2], 10)
        with pytest.raises(CryptoError):
            compress_positions([10], 10)
        good = compress_positions([1, 2], 10)
        with pytest.raises(CryptoError):
            decompress_positions(good, 2)  # decoded position out of range
        with pytest.raises(CryptoError):
            decompress_positions(good[:-1] + b"", 2)

    def test_decompress_rejects_non_ascending(self):
        # two 4-bit positions packed as (7, 3)
        data = (2).to_bytes(4, "big") + bytes([0x73])
        with pytest.raises(CryptoError):
            decompress_positions(data, 16)


def test_key_file_round_trip(tmp_path):
    path = tmp_path / "agent.key"
    crypto.write_key_file(path, b"\x01\x02\xff")
    assert crypto.read_key_file(path) == b"\x01\x02\xff"
