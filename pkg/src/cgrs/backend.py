"""Model backends: the abstract interface, a deterministic toy model, and a
client for OpenAI-compatible completion endpoints.

The toy model is a suffix-matching state machine over an explicit vocabulary:
the distribution of the next token is selected by the longest rule suffix that
matches the tail of the context.  It is a pure function of the context, which
makes fork isolation trivial and every expected value in tests computable by
hand.

The remote client cannot see full distributions; it reconstructs them from
top-k log-probs with the leftover mass aggregated into a single residual
outcome, and it realizes trigger masking through the wire-level ``logit_bias``
field.
"""

from __future__ import annotations

import abc
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .certainty import TokenDistribution
from .lexicon import TriggerTokenSet, Vocabulary

#: Wire-level bias that effectively bans a token on OpenAI-compatible servers.
LOGIT_BIAS_BAN = -100.0

#: Tolerance on top-k probability overflow before the input is rejected.
TOP_K_OVERFLOW_TOL = 1e-3


class BackendError(RuntimeError):
    """A backend failed to produce a usable result."""


class RetryableBackendError(BackendError):
    """Transport-level failure; the identical request may be retried."""


class UnsupportedOperationError(BackendError):
    """The backend lacks the capability needed for the requested operation."""


@dataclass(frozen=True)
class BackendCapabilities:
    """What a backend can expose to the controller."""

    full_distribution: bool
    logit_bias: bool
    top_k_logprobs: int | None = None


class ModelBackend(abc.ABC):
    """Minimal surface the decoding controller needs from a model."""

    @property
    @abc.abstractmethod
    def vocabulary(self) -> Vocabulary: ...

    @property
    @abc.abstractmethod
    def capabilities(self) -> BackendCapabilities: ...

    @property
    @abc.abstractmethod
    def eos_token_id(self) -> int | None: ...

    @abc.abstractmethod
    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        """Distribution of the next token given the context so far."""

    def fork(self, context: Sequence[int]) -> list[int]:
        """Independent copy of a context; appends never leak back."""
        return list(context)

    def sample_token(
        self,
        context: Sequence[int],
        temperature: float,
        top_p: float,
        seed: int,
        logit_bias: Mapping[int, float] | None = None,
    ) -> int | None:
        """Backend-side sampling step; required when full_distribution is False.

        Returns the sampled token id, or None when the backend signals end of
        stream.
        """
        raise UnsupportedOperationError(
            f"{type(self).__name__} does not implement backend-side sampling"
        )


# ---------------------------------------------------------------------------
# Toy suffix-matching model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmissionRule:
    """One state of the toy machine: a context suffix and its emission probs."""

    name: str
    suffix: tuple[str, ...]
    probs: Mapping[str, float]

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "EmissionRule":
        emit = data["emit"]
        if emit.get("type") == "scripted":
            # scripted token with probability trigger_prob of the trigger token
            q = float(emit["trigger_prob"])
            if not 0.0 <= q < 1.0:
                raise ValueError(f"trigger_prob must lie in [0, 1), got {q}")
            probs = {emit["trigger"]: q, emit["token"]: 1.0 - q}
        elif emit.get("type") == "dist":
            probs = {str(k): float(v) for k, v in emit["probs"].items()}
        else:
            raise ValueError(f"unknown emission rule type: {emit.get('type')!r}")
        return cls(name=data["name"], suffix=tuple(data["suffix"]), probs=probs)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "suffix": list(self.suffix),
            "emit": {"type": "dist", "probs": dict(self.probs)},
        }


@dataclass(frozen=True)
class ToyModelSpec:
    """Declarative description of a toy suffix-matching model."""

    tokens: tuple[str, ...]
    eos_token: str
    rules: tuple[EmissionRule, ...]
    name: str = "toy"

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(rule.name for rule in self.rules)

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "ToyModelSpec":
        return cls(
            tokens=tuple(data["tokens"]),
            eos_token=data["eos_token"],
            rules=tuple(EmissionRule.from_json_dict(r) for r in data["rules"]),
            name=data.get("name", "toy"),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ToyModelSpec":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "tokens": list(self.tokens),
            "eos_token": self.eos_token,
            "rules": [r.to_json_dict() for r in self.rules],
        }


class ToyBackend(ModelBackend):
    """Deterministic toy model; next_distribution is a pure function of context."""

    def __init__(self, spec: ToyModelSpec):
        self._spec = spec
        self._vocab = Vocabulary(spec.tokens)
        if spec.eos_token not in self._vocab:
            raise ValueError(f"eos token {spec.eos_token!r} missing from vocabulary")
        names = [r.name for r in spec.rules]
        if len(set(names)) != len(names):
            raise ValueError("emission rule names must be unique")
        self._rules: list[tuple[tuple[int, ...], np.ndarray, str]] = []
        for rule in spec.rules:
            suffix = tuple(self._require_id(t, rule.name) for t in rule.suffix)
            vec = np.zeros(self._vocab.size)
            for token, prob in rule.probs.items():
                if prob < 0:
                    raise ValueError(f"rule {rule.name!r}: negative probability for {token!r}")
                vec[self._require_id(token, rule.name)] = prob
            if abs(vec.sum() - 1.0) > 1e-9:
                raise ValueError(f"rule {rule.name!r}: probabilities sum to {vec.sum()}")
            self._rules.append((suffix, vec, rule.name))
        # longest suffix first; ties keep spec order
        self._rules.sort(key=lambda r: -len(r[0]))
        self._max_order = max((len(r[0]) for r in self._rules), default=0)

    def _require_id(self, token: str, rule_name: str) -> int:
        if token not in self._vocab:
            raise ValueError(f"rule {rule_name!r} references unknown token {token!r}")
        return self._vocab.token_to_id[token]

    @property
    def spec(self) -> ToyModelSpec:
        return self._spec

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(full_distribution=True, logit_bias=False)

    @property
    def eos_token_id(self) -> int:
        return self._vocab.token_to_id[self._spec.eos_token]

    @property
    def max_order(self) -> int:
        """Longest rule suffix; the model is Markov in the last max_order tokens."""
        return self._max_order

    def match_rule(self, context: Sequence[int]) -> str:
        """Name of the rule that fires for this context (longest suffix wins)."""
        return self._match(context)[1]

    def _match(self, context: Sequence[int]) -> tuple[np.ndarray, str]:
        ctx = tuple(context)
        for suffix, vec, name in self._rules:
            if len(suffix) > len(ctx):
                continue
            if ctx[len(ctx) - len(suffix):] == suffix:
                return vec, name
        tail = ctx[-self._max_order:] if self._max_order else ()
        raise BackendError(
            f"no emission rule matches context tail "
            f"{[self._vocab.id_to_token[i] for i in tail]!r}"
        )

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        vec, _ = self._match(context)
        return TokenDistribution(probs=vec.copy(), log_space_available=True)

    def reachable_rule_names(self, seed_contexts: Iterable[Sequence[int]]) -> set[str]:
        """Rules that can ever fire starting from the given contexts.

        Explores the token-tail state graph (tails of length max_order), so it
        terminates even though contexts grow without bound.
        """
        eos = self.eos_token_id
        seen_tails: set[tuple[int, ...]] = set()
        fired: set[str] = set()
        frontier = [tuple(ctx)[-self._max_order:] for ctx in seed_contexts]
        while frontier:
            tail = frontier.pop()
            if tail in seen_tails:
                continue
            seen_tails.add(tail)
            try:
                vec, name = self._match(tail)
            except BackendError:
                continue
            fired.add(name)
            for token_id in np.flatnonzero(vec > 0):
                if int(token_id) == eos:
                    continue
                frontier.append((tail + (int(token_id),))[-self._max_order:])
        return fired


def overthinking_spec(trigger_prob: float = 0.3) -> ToyModelSpec:
    """The reference "overthinking" toy model.

    After each paragraph break the model either pivots back into another
    reasoning pass (emitting the trigger word with probability
    ``trigger_prob``) or concludes with a boxed answer.  Probing the tentative
    answer sees mildly uncertain distributions, so the certainty-guided
    schedule lands strictly between never-masking and always-masking.
    """
    tokens = (
        "<eos>",
        "Let me compute. ",
        "\n\n",
        "Wait",
        ", I should re-check. ",
        "**Final Answer: \\boxed",
        "42",
        "}",
        "Solve 6*7. ",
        "{",
        "So the answer: \\boxed",
    )
    rules = (
        EmissionRule("opening", ("Solve 6*7. ",), {"Let me compute. ": 1.0}),
        EmissionRule("pre_checkpoint", ("Let me compute. ",), {"\n\n": 1.0}),
        EmissionRule(
            "reflect_or_conclude",
            ("\n\n",),
            {"Wait": trigger_prob, "So the answer: \\boxed": 1.0 - trigger_prob},
        ),
        EmissionRule("reflection_body", ("Wait",), {", I should re-check. ": 1.0}),
        EmissionRule("resume_step", (", I should re-check. ",), {"Let me compute. ": 1.0}),
        EmissionRule("conclusion_open", ("So the answer: \\boxed",), {"{": 1.0}),
        EmissionRule("conclusion_value", ("So the answer: \\boxed", "{"), {"42": 1.0}),
        EmissionRule("probe_open", ("**Final Answer: \\boxed",), {"{": 0.98, "Wait": 0.02}),
        EmissionRule(
            "probe_value", ("**Final Answer: \\boxed", "{"), {"42": 0.96, "Let me compute. ": 0.04}
        ),
        EmissionRule("close_box", ("42",), {"}": 1.0}),
        EmissionRule("finish", ("}",), {"<eos>": 1.0}),
    )
    return ToyModelSpec(tokens=tokens, eos_token="<eos>", rules=rules, name="overthinking")


# ---------------------------------------------------------------------------
# Top-k reconstruction and remote suppression
# ---------------------------------------------------------------------------


def reconstruct_distribution(
    top_k_logprobs: Mapping[int, float], vocab_size: int
) -> TokenDistribution:
    """Rebuild a usable distribution from top-k log-probs.

    The k observed probabilities keep their ids; all unobserved mass becomes a
    single synthetic residual outcome appended last.  Aggregating the tail into
    one bucket can only lower the entropy, so certainty computed from the
    result is an upper bound of the full-distribution certainty.

    Raises:
        ValueError: empty input, non-finite log-probs, or observed mass
            exceeding 1 beyond the rounding guard.
    """
    if not top_k_logprobs:
        raise ValueError("top_k_logprobs must be nonempty")
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be at least 2, got {vocab_size}")
    ids = sorted(int(i) for i in top_k_logprobs)
    if len(ids) > vocab_size:
        raise ValueError("more top-k entries than vocabulary tokens")
    logprobs = np.array([float(top_k_logprobs[i]) for i in ids])
    if not np.all(np.isfinite(logprobs)):
        raise ValueError("top-k log-probs must be finite")
    probs = np.exp(logprobs)
    total = float(probs.sum())
    if total > 1.0 + TOP_K_OVERFLOW_TOL:
        raise ValueError(f"top-k probabilities sum to {total}, beyond the rounding guard")
    residual = 1.0 - total
    if residual < 0.0:
        residual = 0.0  # rounding overflow: clamp, then renormalize below
    full = np.append(probs, residual)
    full = full / full.sum()
    return TokenDistribution(
        probs=full,
        log_space_available=True,
        truncated=True,
        outcome_token_ids=tuple(ids),
    )


def apply_remote_suppression(
    request: Mapping,
    triggers: TriggerTokenSet | Iterable[int],
    capabilities: BackendCapabilities | None = None,
) -> dict:
    """Return a copy of a wire request with every trigger id banned.

    Raises:
        UnsupportedOperationError: the backend advertises no logit_bias
            support; callers fall back to reject-and-resample.
    """
    if capabilities is not None and not capabilities.logit_bias:
        raise UnsupportedOperationError("backend does not support logit_bias")
    ids = triggers.token_ids if isinstance(triggers, TriggerTokenSet) else triggers
    out = dict(request)
    bias = dict(out.get("logit_bias") or {})
    for token_id in sorted(ids):
        bias[str(int(token_id))] = LOGIT_BIAS_BAN
    out["logit_bias"] = bias
    return out


# ---------------------------------------------------------------------------
# Remote OpenAI-compatible client
# ---------------------------------------------------------------------------

API_BASE_ENV = "CGRS_API_BASE"
API_KEY_ENV = "CGRS_API_KEY"
MODEL_ENV = "CGRS_MODEL"


class RemoteBackend(ModelBackend):
    """Client for an OpenAI-compatible ``/v1/completions`` endpoint.

    The server does the sampling; this client reconstructs distributions from
    returned top-k log-probs for certainty probes and passes ``logit_bias``
    through for trigger masking.  A vocabulary file for the served tokenizer
    must be supplied so surfaces map onto stable ids.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        eos_token: str | None = None,
        top_k: int = 20,
        logit_bias_supported: bool = True,
        timeout: float = 60.0,
        max_retries: int = 2,
        retry_backoff: float = 0.2,
    ):
        base_url = base_url or os.environ.get(API_BASE_ENV)
        if not base_url:
            raise ValueError(f"no endpoint: pass base_url or set {API_BASE_ENV}")
        self._base_url = base_url.rstrip("/")
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._model = model if model is not None else os.environ.get(MODEL_ENV)
        self._vocab = vocab
        self._eos_id = vocab.token_to_id[eos_token] if eos_token else None
        self._top_k = top_k
        self._logit_bias_supported = logit_bias_supported
        self._timeout = timeout
        self._max_retries = max_retries
        self._retry_backoff = retry_backoff
        import requests  # local import keeps toy-only use dependency-light

        self._session = requests.Session()
        self._requests = requests

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            full_distribution=False,
            logit_bias=self._logit_bias_supported,
            top_k_logprobs=self._top_k,
        )

    @property
    def eos_token_id(self) -> int | None:
        return self._eos_id

    def _post(self, payload: dict) -> dict:
        url = self._base_url + "/v1/completions"
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        if self._model and "model" not in payload:
            payload = {**payload, "model": self._model}
        last_exc: Exception | None = None
        for attempt in range(self._max_retries + 1):
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=self._timeout
                )
            except (self._requests.ConnectionError, self._requests.Timeout) as exc:
                last_exc = exc
                if attempt < self._max_retries:
                    time.sleep(self._retry_backoff * (attempt + 1))
                continue
            if resp.status_code >= 500:
                last_exc = BackendError(f"server error {resp.status_code}: {resp.text[:200]}")
                if attempt < self._max_retries:
                    time.sleep(self._retry_backoff * (attempt + 1))
                continue
            if resp.status_code != 200:
                raise BackendError(f"request failed ({resp.status_code}): {resp.text[:200]}")
            return resp.json()
        raise RetryableBackendError(f"transport failure after retries: {last_exc}")

    def _first_choice(self, data: dict) -> dict:
        try:
            return data["choices"][0]
        except (KeyError, IndexError) as exc:
            raise BackendError(f"malformed completion response: {data!r:.200}") from exc

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        """One-step distribution, reconstructed from top-k log-probs.

        Requested at temperature 1 / top_p 1 so the log-probs describe the
        model distribution rather than the sampling-time reshaped one.
        """
        payload = {
            "prompt": self._vocab.decode(context),
            "max_tokens": 1,
            "temperature": 1.0,
            "top_p": 1.0,
            "logprobs": self._top_k,
        }
        choice = self._first_choice(self._post(payload))
        logprobs = (choice.get("logprobs") or {}).get("top_logprobs") or []
        if not logprobs:
            raise BackendError("response carries no top_logprobs")
        by_id: dict[int, float] = {}
        for surface, lp in logprobs[0].items():
            token_id = self._vocab.token_to_id.get(surface)
            if token_id is not None:
                by_id[token_id] = float(lp)
        if not by_id:
            raise BackendError("no top-k surface maps into the configured vocabulary")
        return reconstruct_distribution(by_id, self._vocab.size)

    def sample_token(
        self,
        context: Sequence[int],
        temperature: float,
        top_p: float,
        seed: int,
        logit_bias: Mapping[int, float] | None = None,
    ) -> int | None:
        payload: dict = {
            "prompt": self._vocab.decode(context),
            "max_tokens": 1,
            "temperature": temperature,
            "top_p": top_p,
            "seed": int(seed),
        }
        if logit_bias:
            if not self._logit_bias_supported:
                raise UnsupportedOperationError("backend does not support logit_bias")
            payload["logit_bias"] = {str(int(i)): float(b) for i, b in logit_bias.items()}
        choice = self._first_choice(self._post(payload))
        text = choice.get("text", "")
        if text == "":
            return None  # server signalled end of stream
        token_id = self._vocab.token_to_id.get(text)
        if token_id is None:
            raise BackendError(f"sampled surface not in vocabulary: {text!r}")
        return token_id

    def ban_bias(self, triggers: TriggerTokenSet) -> dict[int, float]:
        """logit_bias map that bans every trigger id."""
        return {int(i): LOGIT_BIAS_BAN for i in sorted(triggers.token_ids)}
