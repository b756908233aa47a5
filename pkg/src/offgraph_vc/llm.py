"""Language-model gateway: label log-likelihoods and free-form generation.

Two providers share one wrapper that enforces the context budget, bounds
concurrency, retries transient failures and writes an audit log:

* ``MockGateway``: deterministic rule table keyed on planted substrings.
* ``HttpGateway``: OpenAI-compatible HTTP endpoints.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, TypeVar

import httpx

logger = logging.getLogger(__name__)

T = TypeVar("T")

CHARS_PER_TOKEN = 4
DEFAULT_CONTEXT_TOKENS = 12_000
MANAGER_MARKER = "Aggregate-weight advice"

DEFAULT_MOCK_RULES: tuple[tuple[str, float], ...] = (
    ("ALPHA", 2.0),
    ("OMEGA", -2.0),
    ("(success)", 0.5),
    ("(failure)", -0.5),
)


class GatewayError(RuntimeError):
    pass


class RetryableError(GatewayError):
    pass


class PermanentError(GatewayError):
    pass


class ContextOverflowError(PermanentError):
    pass


class RetriesExhausted(GatewayError):
    pass


@dataclass(frozen=True)
class LabelLogLik:
    l_true: float
    l_false: float


@dataclass(frozen=True)
class GenerationResult:
    text: str
    model: str = ""
    latency: float = 0.0


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def log_sigmoid(x: float) -> float:
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def binary_probability(ll: LabelLogLik) -> float:
    """p(True) after two-way normalization of the label log-likelihoods."""
    if not (math.isfinite(ll.l_true) and math.isfinite(ll.l_false)):
        raise ValueError(f"non-finite log-likelihoods: {ll}")
    return sigmoid(ll.l_true - ll.l_false)


def estimate_tokens(text: str) -> int:
    return -(-len(text) // CHARS_PER_TOKEN)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


@dataclass
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 0.5
    max_delay: float = 8.0
    jitter: float = 0.25
    sleep: Callable[[float], None] = time.sleep
    seed: int = 0
    _rng: random.Random = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._rng = random.Random(self.seed)

    def delay(self, attempt: int) -> float:
        d = min(self.max_delay, self.base_delay * 2 ** (attempt - 1))
        return d * (1.0 + self.jitter * self._rng.random())

    def run(self, fn: Callable[[], T]) -> T:
        for attempt in range(1, self.max_attempts + 1):
            try:
                return fn()
            except RetryableError as exc:
                if attempt == self.max_attempts:
                    raise RetriesExhausted(f"gave up after {attempt} attempts: {exc}") from exc
                wait = self.delay(attempt)
                logger.warning("retryable gateway error (attempt %d): %s; sleeping %.2fs", attempt, exc, wait)
                self.sleep(wait)
        raise AssertionError("unreachable")


class Gateway:
    """Budget, concurrency limit, retry and audit around a provider."""

    model = "base"

    def __init__(
        self,
        max_context_tokens: int = DEFAULT_CONTEXT_TOKENS,
        max_in_flight: int = 4,
        retry: Optional[RetryPolicy] = None,
        audit_path: str | Path | None = None,
        verbose_audit: bool = False,
    ):
        self.max_context_tokens = max_context_tokens
        self.retry = retry or RetryPolicy()
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self._audit_path = Path(audit_path) if audit_path else None
        self._audit_lock = threading.Lock()
        self.verbose_audit = verbose_audit
        self.calls = 0

    # provider hooks
    def _score_labels(self, prompt: str) -> LabelLogLik:
        raise NotImplementedError

    def _generate(self, prompt: str) -> str:
        raise NotImplementedError

    def check_budget(self, prompt: str) -> None:
        n = estimate_tokens(prompt)
        if n > self.max_context_tokens:
            raise ContextOverflowError(f"prompt ~{n} tokens exceeds budget {self.max_context_tokens}")

    def _call(self, kind: str, prompt: str, fn: Callable[[], T]) -> T:
        self.check_budget(prompt)
        start = time.perf_counter()
        ok, err = True, ""

        def limited() -> T:
            with self._sem:
                return fn()

        try:
            return self.retry.run(limited)
        except GatewayError as exc:
            ok, err = False, str(exc)
            raise
        finally:
            self.calls += 1
            self._audit(kind, prompt, time.perf_counter() - start, ok, err)

    def _audit(self, kind: str, prompt: str, latency: float, ok: bool, err: str) -> None:
        if self._audit_path is None:
            return
        rec = {
            "kind": kind,
            "model": self.model,
            "prompt_hash": prompt_hash(prompt),
            "prompt_tokens": estimate_tokens(prompt),
            "latency_s": round(latency, 6),
            "ok": ok,
        }
        if err:
            rec["error"] = err
        if self.verbose_audit:
            rec["prompt"] = prompt
        with self._audit_lock:
            self._audit_path.parent.mkdir(parents=True, exist_ok=True)
            with self._audit_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")

    def score_labels(self, prompt: str) -> LabelLogLik:
        return self._call("score_labels", prompt, lambda: self._score_labels(prompt))

    def generate(self, prompt: str) -> GenerationResult:
        start = time.perf_counter()
        text = self._call("generate", prompt, lambda: self._generate(prompt))
        if not text:
            raise PermanentError("provider returned empty text")
        return GenerationResult(text=text, model=self.model, latency=time.perf_counter() - start)


_VERDICT_LINE = re.compile(r"•\s*Prediction:\s*(\w+)")
_WEIGHTS_LINE = re.compile(r"perspectives is\s*\n?\s*([-0-9., ]+)")


class MockGateway(Gateway):
    """Deterministic stand-in for a frozen LLM.

    The logit ``L_true - L_false`` is the sum of the shifts of every
    occurrence of each rule substring (plus optional seeded noise). A prompt
    carrying the manager marker is answered by a weighted vote over the
    specialist predictions it contains.
    """

    def __init__(
        self,
        rules: Sequence[tuple[str, float]] = DEFAULT_MOCK_RULES,
        seed: int = 0,
        noise: float = 0.0,
        model: str = "mock",
        max_cue_repeats: int = 6,
        **kwargs,
    ):
        super().__init__(**kwargs)
        self.rules = tuple((str(s), float(v)) for s, v in rules)
        self.seed = int(seed)
        self.noise = float(noise)
        self.model = model
        self.max_cue_repeats = max_cue_repeats

    def cue_counts(self, prompt: str) -> list[tuple[str, float, int]]:
        return [(s, v, prompt.count(s)) for s, v in self.rules]

    def logit(self, prompt: str) -> float:
        total = sum(v * n for _, v, n in self.cue_counts(prompt))
        if self.noise:
            digest = hashlib.sha256(f"{self.seed}|{prompt}".encode("utf-8")).digest()
            total += self.noise * random.Random(digest).gauss(0.0, 1.0)
        return total

    def _score_labels(self, prompt: str) -> LabelLogLik:
        s = self.logit(prompt)
        return LabelLogLik(log_sigmoid(s), log_sigmoid(-s))

    def _generate(self, prompt: str) -> str:
        if MANAGER_MARKER in prompt:
            return self._manager_answer(prompt)
        s = self.logit(prompt)
        cues = []
        for sub, _, n in self.cue_counts(prompt):
            cues.extend([sub] * min(n, self.max_cue_repeats))
        lean = "positive" if s > 0 else "negative"
        cue_text = " ".join(cues) if cues else "none"
        return (
            f"Prediction: {s > 0}\n"
            f"Analysis: cues {cue_text}; net evidence {s:+.3f}, leaning {lean}."
        )

    def _manager_answer(self, prompt: str) -> str:
        votes = []
        for tok in _VERDICT_LINE.findall(prompt)[:3]:
            low = tok.lower()
            votes.append(1.0 if low == "true" else -1.0 if low == "false" else 0.0)
        weights = [1.0 / max(len(votes), 1)] * len(votes)
        m = _WEIGHTS_LINE.search(prompt)
        if m:
            parsed = [float(x) for x in re.findall(r"-?\d+(?:\.\d+)?", m.group(1))]
            if len(parsed) == len(votes):
                weights = parsed
        score = sum(w * v for w, v in zip(weights, votes))
        decision = score > 1e-12
        detail = ", ".join(f"{v:+.0f}x{w:.3f}" for v, w in zip(votes, weights))
        return f"Prediction: {decision}\nAnalysis: weighted vote {score:+.3f} over views ({detail})."


class HttpGateway(Gateway):
    """OpenAI-compatible provider.

    ``generate`` uses ``/chat/completions``. ``score_labels`` needs a
    completions endpoint that can echo prompt log-probabilities: it scores
    ``prompt + " True"`` and ``prompt + " False"`` and sums the log-probs of
    the label tokens.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "LLM_API_KEY",
        timeout: float = 60.0,
        client: httpx.Client | None = None,
        **kwargs,
    ):
        super().__init__(**kwargs)
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._client = client or httpx.Client(timeout=timeout)
        self._api_key = os.environ.get(api_key_env, "")

    def _post(self, path: str, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        try:
            resp = self._client.post(f"{self.base_url}{path}", json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise RetryableError(f"transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise RetryableError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            body = resp.text[:300]
            if "context" in body.lower() and "length" in body.lower():
                raise ContextOverflowError(body)
            raise PermanentError(f"HTTP {resp.status_code}: {body}")
        return resp.json()

    def _generate(self, prompt: str) -> str:
        data = self._post(
            "/chat/completions",
            {"model": self.model, "temperature": 0, "messages": [{"role": "user", "content": prompt}]},
        )
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise PermanentError(f"malformed chat response: {exc}") from exc

    def _label_logprob(self, prompt: str, label: str) -> float:
        text = f"{prompt} {label}"
        data = self._post(
            "/completions",
            {"model": self.model, "prompt": text, "max_tokens": 0, "echo": True, "logprobs": 0, "temperature": 0},
        )
        try:
            lp = data["choices"][0]["logprobs"]
            offsets = lp["text_offset"]
            token_lps = lp["token_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise PermanentError(f"malformed completion response: {exc}") from exc
        total = 0.0
        found = False
        for off, val in zip(offsets, token_lps):
            if off >= len(prompt) and val is not None:
                total += float(val)
                found = True
        if not found:
            raise PermanentError("no label tokens in echoed log-probs")
        return total

    def _score_labels(self, prompt: str) -> LabelLogLik:
        return LabelLogLik(self._label_logprob(prompt, "True"), self._label_logprob(prompt, "False"))
