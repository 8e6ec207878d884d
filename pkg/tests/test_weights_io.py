"""Weight container tests: round trips, half-precision semantics, corruption."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driverwatch import graph as G
from driverwatch import weights as W
from driverwatch.weights import (
    BadMagicError,
    ChecksumError,
    TruncatedFileError,
    UnsupportedVersionError,
    WeightFormatError,
    WeightStore,
)


def small_store(seed=0, n_records=5):
    rng = np.random.default_rng(seed)
    store = WeightStore(metadata={"arch": "test", "nc": 3, "bn_eps": 1e-3,
                                  "normalization": "div255"})
    for i in range(n_records):
        shape = tuple(int(d) for d in rng.integers(1, 5, size=int(rng.integers(1, 4))))
        store.add(f"block.{i}.weight", rng.standard_normal(shape).astype(np.float32))
    return store


class TestScalarHalfConversion:
    def test_one_round_trips_through_0x3c00(self):
        assert W.f32_to_f16(1.0) == 0x3C00
        assert W.f16_to_f32(0x3C00) == 1.0

    def test_overflow_past_max_finite(self):
        assert W.f16_to_f32(W.f32_to_f16(65520.0)) == float("inf")
        assert W.f16_to_f32(W.f32_to_f16(65504.0)) == 65504.0

    def test_exactly_representable_values(self):
        for v in (1.0, 0.5, -2.0, 0.0, 0.25, -0.375):
            assert W.f16_to_f32(W.f32_to_f16(v)) == v

    @settings(deadline=None, max_examples=200)
    @given(st.floats(min_value=-8.0, max_value=8.0))
    def test_round_trip_precision_bound(self, x):
        rt = W.f16_to_f32(W.f32_to_f16(x))
        assert abs(x - rt) <= 2.0 ** -10 * abs(x) + 2.0 ** -24


class TestRoundTrip:
    def test_f32_round_trip_bit_exact(self):
        store = small_store(seed=1)
        back = W.load_dwt_bytes(W.dwt_bytes(store, "f32"))
        assert back.metadata == store.metadata
        assert back.names() == store.names()
        for name in store.names():
            assert back.records[name].dims == store.records[name].dims
            assert back.records[name].stored_dtype == "f32"
            assert np.array_equal(back[name], store[name])

    def test_f16_round_trip_is_quantize_once(self):
        store = small_store(seed=2)
        back = W.load_dwt_bytes(W.dwt_bytes(store, "f16"))
        for name in store.names():
            expect = store[name].astype(np.float16).astype(np.float32)
            assert np.array_equal(back[name], expect)
        # a second f16 save changes nothing
        again = W.load_dwt_bytes(W.dwt_bytes(back, "f16"))
        for name in store.names():
            assert np.array_equal(again[name], back[name])

    def test_empty_store_is_header_plus_crc(self):
        store = WeightStore(metadata={})
        data = W.dwt_bytes(store, "f16")
        # magic + version + meta length + "{}" + count + crc
        assert len(data) == 4 + 2 + 4 + 2 + 4 + 4
        back = W.load_dwt_bytes(data)
        assert back.names() == []

    def test_file_round_trip(self, tmp_path):
        store = small_store(seed=3)
        path = tmp_path / "weights.dwt"
        written = W.save_dwt(store, path, "f32")
        assert path.stat().st_size == written
        back = W.load_dwt(path)
        assert back.names() == store.names()

    def test_duplicate_name_rejected_on_add(self):
        store = WeightStore()
        store.add("a", np.zeros(3))
        with pytest.raises(ValueError, match="duplicate"):
            store.add("a", np.zeros(3))


class TestSizeAccounting:
    def test_empty_store_size(self):
        store = WeightStore(metadata={})
        assert W.model_size_bytes(store, "f16") == len(W.dwt_bytes(store, "f16"))

    def test_ten_element_record_payload(self):
        store = WeightStore(metadata={})
        store.add("t", np.zeros(10, dtype=np.float32))
        f32 = W.model_size_bytes(store, "f32")
        f16 = W.model_size_bytes(store, "f16")
        assert f32 - f16 == 10 * 2  # payload halves, header identical
        empty = W.model_size_bytes(WeightStore(metadata={}), "f32")
        assert f32 - empty == 2 + len(b"t") + 1 + 1 + 4 + 40

    def test_size_prediction_matches_written_file(self, tmp_path):
        store = small_store(seed=4)
        for dtype in ("f32", "f16"):
            path = tmp_path / f"s.{dtype}.dwt"
            W.save_dwt(store, path, dtype)
            assert path.stat().st_size == W.model_size_bytes(store, dtype)

    def test_f16_payload_is_half_of_f32(self):
        store = small_store(seed=5, n_records=8)
        f32_len = len(W.dwt_bytes(store, "f32"))
        f16_len = len(W.dwt_bytes(store, "f16"))
        payload = sum(r.num_values for r in store.records.values()) * 4
        header = f32_len - payload
        assert abs(f16_len - (header + payload // 2)) <= 4096


class TestErrors:
    def test_bad_magic(self):
        data = bytearray(W.dwt_bytes(small_store(), "f32"))
        data[0:4] = b"NOPE"
        with pytest.raises(BadMagicError):
            W.load_dwt_bytes(bytes(data))

    def test_version_mismatch(self):
        data = bytearray(W.dwt_bytes(small_store(), "f32"))
        data[4] = 99
        with pytest.raises(UnsupportedVersionError):
            W.load_dwt_bytes(bytes(data))

    def test_corrupt_payload_byte_fails_crc(self):
        data = bytearray(W.dwt_bytes(small_store(), "f32"))
        data[-20] ^= 0xFF
        with pytest.raises(ChecksumError):
            W.load_dwt_bytes(bytes(data))

    def test_truncated_stream(self):
        data = W.dwt_bytes(small_store(), "f32")
        with pytest.raises(TruncatedFileError):
            W.load_dwt_bytes(data[:7])

    def test_fuzz_1000_single_byte_mutations(self):
        data = bytearray(W.dwt_bytes(small_store(seed=6), "f16"))
        rng = np.random.default_rng(99)
        for _ in range(1000):
            pos = int(rng.integers(0, len(data)))
            delta = int(rng.integers(1, 256))
            mutated = bytearray(data)
            mutated[pos] = (mutated[pos] + delta) % 256
            with pytest.raises(WeightFormatError):
                W.load_dwt_bytes(bytes(mutated))


class TestBindContract:
    def test_full_store_binds(self, mini_model):
        store = G.random_weight_store(mini_model, seed=0)
        bound = mini_model.bind(store)
        assert bound.is_bound

    def test_store_survives_serialization_then_binds(self, mini_model, tmp_path):
        store = G.random_weight_store(mini_model, seed=1)
        path = tmp_path / "mini.dwt"
        W.save_dwt(store, path, "f16")
        assert mini_model.bind(W.load_dwt(path)).is_bound

    def test_missing_or_extra_tensor_fails_with_names(self, mini_model):
        store = G.random_weight_store(mini_model, seed=2)
        del store.records["head.linear.weight"]
        store.add("rogue.tensor", np.zeros(2))
        with pytest.raises(G.BindError) as err:
            mini_model.bind(store)
        message = str(err.value)
        assert "head.linear.weight" in message
        assert "rogue.tensor" in message


class TestFullModelSize:
    def test_f16_size_in_published_band(self, full_model, tmp_path):
        store = G.random_weight_store(full_model, seed=0)
        predicted = W.model_size_bytes(store, "f16")
        assert 2_700_000 <= predicted <= 3_000_000
        path = tmp_path / "full.dwt"
        W.save_dwt(store, path, "f16")
        assert path.stat().st_size == predicted

    def test_f16_file_roughly_half_of_f32(self, full_model):
        store = G.random_weight_store(full_model, seed=0)
        f32_len = W.model_size_bytes(store, "f32")
        f16_len = W.model_size_bytes(store, "f16")
        payload_f32 = sum(r.num_values for r in store.records.values()) * 4
        assert abs(f16_len - (f32_len - payload_f32 // 2)) <= 4096
