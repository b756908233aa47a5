from __future__ import annotations

import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from offgraph_vc.encoders import CachedEncoder, EncoderError, HashingEncoder, HttpEncoder, cosine


class CountingEncoder(HashingEncoder):
    def __init__(self, **kw):
        super().__init__(**kw)
        self.seen = []

    def encode_many(self, texts):
        self.seen.extend(texts)
        return super().encode_many(texts)


class TestHashingEncoder:
    def test_unit_norm_and_dim(self):
        v = HashingEncoder(dim=64).encode("payment software for retailers")
        assert v.shape == (64,)
        assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_deterministic_across_instances(self):
        a = HashingEncoder(seed=1).encode("freight marketplace")
        b = HashingEncoder(seed=1).encode("freight marketplace")
        assert np.array_equal(a, b)

    def test_similar_text_scores_higher(self):
        enc = HashingEncoder()
        q = enc.encode("payment software for small businesses")
        near = enc.encode("payment software for retailers and small businesses")
        far = enc.encode("gene therapy for rare diseases")
        assert cosine(q, near) > cosine(q, far)

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            HashingEncoder().encode("   ")

    def test_punctuation_only_text_still_encodes(self):
        v = HashingEncoder().encode("!!!")
        assert np.linalg.norm(v) == pytest.approx(1.0)

    @given(st.text(alphabet="abc xyz", min_size=1).filter(lambda s: s.strip()))
    def test_self_similarity_is_one(self, text):
        enc = HashingEncoder(dim=32)
        v = enc.encode(text)
        assert cosine(v, v) == pytest.approx(1.0)


class TestCosine:
    def test_zero_vector(self):
        with pytest.raises(ValueError):
            cosine(np.zeros(3), np.ones(3))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cosine(np.ones(3), np.ones(4))

    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
    def test_bounded(self, a, b):
        a, b = np.array(a), np.array(b)
        if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
            return
        assert -1.0 <= cosine(a, b) <= 1.0


class TestCachedEncoder:
    def test_hits_skip_inner(self, tmp_path):
        inner = CountingEncoder(dim=16)
        enc = CachedEncoder(inner, tmp_path / "cache.npz")
        enc.encode_many(["a b", "c d", "a b"])
        enc.encode_many(["a b"])
        assert inner.seen == ["a b", "c d"]

    def test_persists(self, tmp_path):
        path = tmp_path / "cache.npz"
        enc = CachedEncoder(HashingEncoder(dim=16), path)
        v = enc.encode("hello world")
        enc.flush()
        inner = CountingEncoder(dim=16)
        again = CachedEncoder(inner, path)
        assert np.array_equal(again.encode("hello world"), v)
        assert inner.seen == []


class TestHttpEncoder:
    def _client(self, handler):
        return httpx.Client(transport=httpx.MockTransport(handler))

    def test_round_trip(self):
        def handler(req):
            texts = json.loads(req.content)["texts"]
            return httpx.Response(200, json={"vectors": [[1.0, 0.0]] * len(texts)})

        enc = HttpEncoder("http://enc", dim=2, client=self._client(handler))
        assert enc.encode_many(["a", "b"]).shape == (2, 2)

    def test_wrong_shape(self):
        enc = HttpEncoder("http://enc", dim=3, client=self._client(lambda r: httpx.Response(200, json={"vectors": [[1.0]]})))
        with pytest.raises(EncoderError):
            enc.encode("a")

    def test_retryable_flag(self):
        enc = HttpEncoder("http://enc", dim=3, client=self._client(lambda r: httpx.Response(503)))
        with pytest.raises(EncoderError) as info:
            enc.encode("a")
        assert info.value.retryable
