"""Reflection-trigger lexicon: vocabulary handling and trigger-token sets.

A small set of base words ("Wait", "But", "Alternatively", "Hmm") marks the
places where a model pivots back into re-checking its own reasoning.  This
module expands those base words into their tokenizer-level surface variants,
maps them onto vocabulary ids, and can rebuild the set from decoded traces by
frequency.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class TriggerCategory(str, Enum):
    """Behavioral family of a trigger word."""

    HESITATION_TRANSITION = "hesitation_transition"
    ALTERNATIVE_PROPOSAL = "alternative_proposal"
    CONTEMPLATION_CUE = "contemplation_cue"


#: Default trigger inventory: hesitation/transition words, alternative
#: proposal markers, and colloquial contemplation cues.
DEFAULT_BASE_WORDS: tuple[tuple[str, TriggerCategory], ...] = (
    ("Wait", TriggerCategory.HESITATION_TRANSITION),
    ("But", TriggerCategory.HESITATION_TRANSITION),
    ("Alternatively", TriggerCategory.ALTERNATIVE_PROPOSAL),
    ("Hmm", TriggerCategory.CONTEMPLATION_CUE),
)

DEFAULT_MIN_COUNT = 1


@dataclass(frozen=True)
class TriggerWord:
    """A base trigger word plus its category."""

    base: str
    category: TriggerCategory

    def __post_init__(self) -> None:
        if not self.base:
            raise ValueError("trigger base word must be nonempty")
        if self.base != self.base.strip():
            raise ValueError(
                f"trigger base word must carry no leading/trailing whitespace: {self.base!r}"
            )


class Vocabulary:
    """Bijective token-id table with greedy longest-match text encoding."""

    def __init__(self, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            dupes = sorted({t for t in tokens if list(tokens).count(t) > 1})
            raise ValueError(f"vocabulary tokens must be unique, duplicates: {dupes!r}")
        self._id_to_token: tuple[str, ...] = tuple(tokens)
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        # longest first so encode() prefers the longest matching surface
        self._by_length: list[str] = sorted(tokens, key=len, reverse=True)

    @classmethod
    def from_token_to_id(cls, mapping: Mapping[str, int]) -> "Vocabulary":
        """Build from a surface→id map; ids must be exactly 0..size-1."""
        size = len(mapping)
        ids = sorted(mapping.values())
        if ids != list(range(size)):
            raise ValueError("token ids must cover exactly the range [0, size)")
        inverse = {i: t for t, i in mapping.items()}
        return cls([inverse[i] for i in range(size)])

    @classmethod
    def from_json_file(cls, path: str | Path) -> "Vocabulary":
        """Load a vocabulary file: a JSON list of tokens, a surface→id map,
        or an object with a "tokens" list."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            return cls(data)
        if isinstance(data, dict):
            if "tokens" in data:
                return cls(data["tokens"])
            return cls.from_token_to_id(data)
        raise ValueError(f"unrecognized vocabulary file format: {path}")

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    @property
    def token_to_id(self) -> Mapping[str, int]:
        return self._token_to_id

    @property
    def id_to_token(self) -> tuple[str, ...]:
        return self._id_to_token

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self._id_to_token[i] for i in ids)

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match tokenization.

        Raises:
            ValueError: if some position of ``text`` matches no token.
        """
        out: list[int] = []
        pos = 0
        while pos < len(text):
            for tok in self._by_length:
                if text.startswith(tok, pos):
                    out.append(self._token_to_id[tok])
                    pos += len(tok)
                    break
            else:
                raise ValueError(
                    f"text not encodable at offset {pos}: {text[pos:pos + 20]!r}"
                )
        return out


@dataclass(frozen=True)
class TriggerTokenSet:
    """Immutable set of vocabulary ids treated as reflection triggers.

    ``provenance`` maps each id back to the surface form and base word it came
    from; ``skipped_forms`` lists candidate surfaces that the vocabulary does
    not encode as a single token (multi-token encodings are excluded by
    design).
    """

    token_ids: frozenset[int]
    provenance: Mapping[int, tuple[str, str]]  # id -> (surface form, base word)
    skipped_forms: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if set(self.provenance) != set(self.token_ids):
            raise ValueError("provenance must cover exactly the trigger token ids")

    def __contains__(self, token_id: int) -> bool:
        return token_id in self.token_ids

    def __len__(self) -> int:
        return len(self.token_ids)

    def union(self, other: "TriggerTokenSet") -> "TriggerTokenSet":
        prov = dict(other.provenance)
        prov.update(self.provenance)  # left operand wins on shared ids
        return TriggerTokenSet(
            token_ids=self.token_ids | other.token_ids,
            provenance=prov,
            skipped_forms=tuple(dict.fromkeys(self.skipped_forms + other.skipped_forms)),
        )

    def to_json_dict(self) -> dict:
        return {
            "token_ids": sorted(self.token_ids),
            "provenance": {
                str(i): {"surface_form": s, "base_word": b}
                for i, (s, b) in sorted(self.provenance.items())
            },
            "skipped_forms": list(self.skipped_forms),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "TriggerTokenSet":
        prov = {
            int(i): (entry["surface_form"], entry["base_word"])
            for i, entry in data.get("provenance", {}).items()
        }
        return cls(
            token_ids=frozenset(int(i) for i in data["token_ids"]),
            provenance=prov,
            skipped_forms=tuple(data.get("skipped_forms", ())),
        )


def expand_variants(word: str) -> set[str]:
    """Expand a base word into its case and leading-space surface variants.

    The closure of {identity, lower, upper} x {no prefix, single space prefix}
    yields at most six distinct forms ("But" -> "But", " But", "but", " but",
    "BUT", " BUT"); fewer when case folding collapses them.
    """
    if not word or word != word.strip():
        raise ValueError(f"base word must be nonempty with no surrounding whitespace: {word!r}")
    forms: set[str] = set()
    for cased in (word, word.lower(), word.upper()):
        forms.add(cased)
        forms.add(" " + cased)
    return forms


def map_to_token_ids(
    forms: Iterable[str],
    vocab: Vocabulary,
    base_by_form: Mapping[str, str] | None = None,
) -> TriggerTokenSet:
    """Map surface forms onto vocabulary ids.

    Only forms the vocabulary encodes as a single token are kept; absent forms
    are recorded as skipped rather than raised.  ``base_by_form`` optionally
    supplies the base word for provenance; a form is its own base otherwise.
    """
    ids: set[int] = set()
    provenance: dict[int, tuple[str, str]] = {}
    skipped: list[str] = []
    for form in sorted(set(forms)):
        token_id = vocab.token_to_id.get(form)
        if token_id is None:
            skipped.append(form)
            continue
        ids.add(token_id)
        base = base_by_form.get(form, form) if base_by_form else form
        provenance[token_id] = (form, base)
    return TriggerTokenSet(
        token_ids=frozenset(ids), provenance=provenance, skipped_forms=tuple(skipped)
    )


def build_trigger_set(
    words: Iterable[TriggerWord | str], vocab: Vocabulary
) -> TriggerTokenSet:
    """Expand base words and map every variant present in the vocabulary."""
    forms: set[str] = set()
    base_by_form: dict[str, str] = {}
    for word in words:
        base = word.base if isinstance(word, TriggerWord) else word
        for form in expand_variants(base):
            forms.add(form)
            base_by_form[form] = base
    return map_to_token_ids(forms, vocab, base_by_form)


def build_from_traces(
    traces: Sequence[Sequence[int]],
    vocab: Vocabulary,
    base_words: Iterable[TriggerWord | str],
    min_count: int,
) -> tuple[TriggerTokenSet, dict[int, int]]:
    """Build a trigger set from decoded traces by candidate frequency.

    Candidate ids come from the variant expansion of ``base_words``; an id is
    kept when its total occurrence count across all traces reaches
    ``min_count``.  ``min_count = 0`` keeps every candidate regardless of the
    traces.  Returns the set plus the per-id frequency table over candidates.

    Raises:
        ValueError: ``min_count > 0`` with no traces to count from.
    """
    if min_count < 0:
        raise ValueError(f"min_count must be nonnegative, got {min_count}")
    if min_count > 0 and not traces:
        raise ValueError("cannot apply a positive min_count to an empty trace set")
    candidates = build_trigger_set(base_words, vocab)
    counts: dict[int, int] = {i: 0 for i in sorted(candidates.token_ids)}
    for trace in traces:
        for token_id in trace:
            if token_id in counts:
                counts[token_id] += 1
    kept = {i for i, c in counts.items() if c >= min_count}
    provenance = {i: candidates.provenance[i] for i in kept}
    trigger_set = TriggerTokenSet(
        token_ids=frozenset(kept),
        provenance=provenance,
        skipped_forms=candidates.skipped_forms,
    )
    return trigger_set, counts


def load_trigger_config(path: str | Path) -> tuple[list[TriggerWord], int]:
    """Read a trigger config file: {"base_words": [{"base", "category"}], "min_count"}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    words = [
        TriggerWord(base=entry["base"], category=TriggerCategory(entry["category"]))
        for entry in data["base_words"]
    ]
    min_count = int(data.get("min_count", DEFAULT_MIN_COUNT))
    return words, min_count


def save_trigger_config(
    path: str | Path, words: Sequence[TriggerWord], min_count: int
) -> None:
    data = {
        "base_words": [{"base": w.base, "category": w.category.value} for w in words],
        "min_count": min_count,
    }
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def default_trigger_words() -> list[TriggerWord]:
    return [TriggerWord(base, cat) for base, cat in DEFAULT_BASE_WORDS]


def write_frequency_csv(
    path: str | Path, trigger_set: TriggerTokenSet, counts: Mapping[int, int]
) -> None:
    """Write the per-id frequency table (token_id, surface_form, base_word, count).

    One row per counted id, including candidates a ``min_count`` filter
    dropped, so pass the candidate set whose provenance covers all of them.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["token_id", "surface_form", "base_word", "count"])
        for token_id in sorted(counts):
            surface, base = trigger_set.provenance[token_id]
            writer.writerow([token_id, surface, base, counts[token_id]])
