import numpy as np
import pytest
from hypothesis import settings, strategies as st

from seda.corpus import Document, Entity

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@st.composite
def entities(draw, n: int, labels=("ADR", "Drug"), max_fragments: int = 3):
    """One entity inside ``n`` tokens with up to ``max_fragments`` fragments."""
    tokens = draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=5, unique=True))
    ent = Entity.from_tokens(draw(st.sampled_from(labels)), sorted(tokens))
    if len(ent.spans) > max_fragments:
        ent = Entity(ent.label, ent.spans[:max_fragments])
    return ent


@st.composite
def documents(draw, min_len: int = 1, max_len: int = 40, max_entities: int = 4):
    n = draw(st.integers(min_len, max_len))
    words = [f"w{i % 7}" for i in range(n)]
    breaks = sorted(draw(st.sets(st.integers(1, max(1, n - 1)), max_size=4))) if n > 1 else []
    gold = draw(st.lists(entities(n), max_size=max_entities, unique=True))
    return Document.from_words("d", words, breaks, gold)


def random_entity(rng: np.random.Generator, n: int, labels=("ADR", "Drug"), discontinuous=None) -> Entity:
    """Random entity; ``discontinuous`` forces (True) or forbids (False) gaps."""
    label = labels[int(rng.integers(len(labels)))]
    if discontinuous is False or n < 3:
        start = int(rng.integers(0, n))
        end = int(rng.integers(start + 1, min(n, start + 4) + 1))
        return Entity.from_tokens(label, range(start, end))
    while True:
        k = int(rng.integers(2, min(5, n) + 1))
        toks = sorted(rng.choice(n, size=k, replace=False).tolist())
        ent = Entity.from_tokens(label, toks)
        if discontinuous is None or ent.discontinuous:
            return ent


@pytest.fixture
def knee_doc():
    """The two-line clinical example whose entities straddle the newline."""
    raw = (
        "A patient at the downtown health clinic reports severe muscle\n"
        "pain in their legs and ankles."
    )
    ann = (
        "T1\tADR 48 61;62 66;76 80\tsevere muscle pain legs\n"
        "T2\tADR 48 61;62 66;85 91\tsevere muscle pain ankles\n"
    )
    from seda.corpus import parse_standoff

    return parse_standoff(raw, ann, "fig1")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
