from __future__ import annotations

import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from offgraph_vc.llm import (
    ContextOverflowError,
    HttpGateway,
    LabelLogLik,
    MockGateway,
    PermanentError,
    RetriesExhausted,
    RetryableError,
    RetryPolicy,
    binary_probability,
    estimate_tokens,
    log_sigmoid,
)


def no_sleep_policy(**kw):
    return RetryPolicy(sleep=lambda s: None, **kw)


class TestBinaryProbability:
    def test_equal_loglik_is_half(self):
        assert binary_probability(LabelLogLik(-2.3, -2.3)) == 0.5

    def test_extreme_gap_is_finite(self):
        p = binary_probability(LabelLogLik(0.0, -800.0))
        assert p == 1.0 or p > 1 - 1e-300
        assert binary_probability(LabelLogLik(-800.0, 0.0)) >= 0.0

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            binary_probability(LabelLogLik(float("nan"), -1.0))

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_matches_two_way_softmax(self, a, b):
        p = binary_probability(LabelLogLik(a, b))
        ref = math.exp(a) / (math.exp(a) + math.exp(b))
        assert abs(p - ref) <= 1e-12

    @given(st.floats(-700, 700))
    def test_log_sigmoid_consistent(self, x):
        assert log_sigmoid(x) <= 0.0
        assert abs(log_sigmoid(x) - log_sigmoid(-x) - x) <= 1e-9 * max(1.0, abs(x))


class TestMockGateway:
    def test_alpha_shift(self):
        ll = MockGateway().score_labels("the ALPHA fund leads")
        assert ll.l_true - ll.l_false == pytest.approx(2.0)

    def test_neutral_prompt(self):
        ll = MockGateway().score_labels("nothing planted here")
        assert ll.l_true == ll.l_false

    def test_occurrences_accumulate(self):
        gw = MockGateway()
        assert gw.logit("ALPHA ALPHA OMEGA (success)") == pytest.approx(2.5)

    def test_generate_follows_sign(self):
        gw = MockGateway()
        assert gw.generate("an ALPHA investor").text.startswith("Prediction: True")
        assert gw.generate("plain text").text.startswith("Prediction: False")

    def test_deterministic_with_noise(self):
        a = MockGateway(seed=4, noise=1.0)
        b = MockGateway(seed=4, noise=1.0)
        assert a.generate("x ALPHA").text == b.generate("x ALPHA").text
        assert a.logit("some prompt") != MockGateway(seed=5, noise=1.0).logit("some prompt")

    def test_manager_weighted_vote(self):
        prompt = (
            "Aggregate-weight advice\n    The historical importance of the three perspectives is\n"
            "    0.600, 0.200, 0.200\n"
            "• Prediction: True\n• Prediction: False\n• Prediction: False\n"
        )
        assert MockGateway().generate(prompt).text.startswith("Prediction: True")
        flipped = prompt.replace("0.600, 0.200, 0.200", "0.200, 0.400, 0.400")
        assert MockGateway().generate(flipped).text.startswith("Prediction: False")

    def test_context_budget(self):
        gw = MockGateway(max_context_tokens=10)
        with pytest.raises(ContextOverflowError):
            gw.generate("x" * 41)
        assert estimate_tokens("x" * 40) == 10

    def test_audit_log(self, tmp_path):
        path = tmp_path / "audit.jsonl"
        gw = MockGateway(audit_path=path)
        gw.generate("hello ALPHA")
        gw.score_labels("hello")
        recs = [json.loads(line) for line in path.read_text().splitlines()]
        assert [r["kind"] for r in recs] == ["generate", "score_labels"]
        assert "prompt" not in recs[0]
        assert all(r["ok"] for r in recs)


class FlakyGateway(MockGateway):
    def __init__(self, failures, **kw):
        super().__init__(**kw)
        self.failures = failures
        self.attempts = 0

    def _generate(self, prompt):
        self.attempts += 1
        if self.attempts <= self.failures:
            raise RetryableError("rate limited")
        return super()._generate(prompt)


class TestRetry:
    def test_recovers(self):
        gw = FlakyGateway(2, retry=no_sleep_policy())
        assert gw.generate("ALPHA").text.startswith("Prediction: True")
        assert gw.attempts == 3

    def test_gives_up(self):
        gw = FlakyGateway(10, retry=no_sleep_policy(max_attempts=3))
        with pytest.raises(RetriesExhausted):
            gw.generate("ALPHA")
        assert gw.attempts == 3

    def test_backoff_grows_and_caps(self):
        pol = no_sleep_policy(base_delay=1.0, max_delay=4.0, jitter=0.0)
        assert [pol.delay(i) for i in (1, 2, 3, 4, 5)] == [1.0, 2.0, 4.0, 4.0, 4.0]


def _transport(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


class TestHttpGateway:
    def test_chat_completion(self):
        def handler(req):
            body = json.loads(req.content)
            assert body["temperature"] == 0
            return httpx.Response(200, json={"choices": [{"message": {"content": "Prediction: True\nAnalysis: ok"}}]})

        gw = HttpGateway("http://llm", "m", client=_transport(handler), retry=no_sleep_policy())
        assert gw.generate("hi").text.startswith("Prediction: True")

    def test_label_logprobs(self):
        def handler(req):
            text = json.loads(req.content)["prompt"]
            prompt_len = len("question")
            lp = -0.1 if text.endswith("True") else -2.0
            return httpx.Response(
                200,
                json={"choices": [{"logprobs": {"text_offset": [0, prompt_len], "token_logprobs": [None, lp]}}]},
            )

        gw = HttpGateway("http://llm", "m", client=_transport(handler), retry=no_sleep_policy())
        ll = gw.score_labels("question")
        assert (ll.l_true, ll.l_false) == (-0.1, -2.0)

    def test_server_errors_retry_then_fail(self):
        calls = []

        def handler(req):
            calls.append(1)
            return httpx.Response(503)

        gw = HttpGateway("http://llm", "m", client=_transport(handler), retry=no_sleep_policy(max_attempts=2))
        with pytest.raises(RetriesExhausted):
            gw.generate("hi")
        assert len(calls) == 2

    def test_client_error_is_permanent(self):
        gw = HttpGateway(
            "http://llm", "m", client=_transport(lambda r: httpx.Response(400, text="bad")), retry=no_sleep_policy()
        )
        with pytest.raises(PermanentError):
            gw.generate("hi")

    def test_empty_text_is_error(self):
        gw = HttpGateway(
            "http://llm",
            "m",
            client=_transport(lambda r: httpx.Response(200, json={"choices": [{"message": {"content": ""}}]})),
            retry=no_sleep_policy(),
        )
        with pytest.raises(PermanentError):
            gw.generate("hi")


def test_probabilities_never_leave_unit_interval():
    rng = np.random.default_rng(0)
    for a, b in rng.normal(scale=200, size=(500, 2)):
        p = binary_probability(LabelLogLik(float(a), float(b)))
        assert 0.0 <= p <= 1.0
