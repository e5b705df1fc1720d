from __future__ import annotations

import pytest

from cgrs.backend import ToyBackend, overthinking_spec
from cgrs.lexicon import build_trigger_set, default_trigger_words


@pytest.fixture(scope="session")
def overthinking_backend() -> ToyBackend:
    return ToyBackend(overthinking_spec())


@pytest.fixture(scope="session")
def overthinking_triggers(overthinking_backend):
    return build_trigger_set(default_trigger_words(), overthinking_backend.vocabulary)


TOY_PROMPT = "Solve 6*7. "
