from __future__ import annotations

import hashlib
import math
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scripted
from sevln.errors import (
    ConfigError,
    DimensionMismatchError,
    EmbeddingError,
    ExtractionError,
    SevlnError,
)
from sevln.memory import DecisionTriple, ExperienceEntry, ExperienceRepo
from sevln.retrieval import (
    EXPERIENCE_CHAR_CAP,
    HashingEmbedder,
    LandmarkSet,
    QueryVector,
    cosine,
    embed,
    extract_landmarks,
    fallback_landmarks,
    hash_bucket,
    load_vocabulary,
    render_experience,
    retrieve,
    tokenize,
)
from sevln.world import Action


def _triple(action: str, thinking: str = "t", planning: str = "p") -> DecisionTriple:
    return DecisionTriple(thinking=thinking, planning=planning, action=Action.from_token(action))


def _entry_with_embedding(
    embedding: tuple[float, ...], landmarks: tuple[str, ...] = ("sofa",)
) -> ExperienceEntry:
    return ExperienceEntry(
        landmarks=landmarks,
        descriptions=("somewhere",),
        original=(_triple("stop"),),
        revised=(_triple("n1"),),
        embedding=embedding,
        source_episode="ep",
    )


# --- tokenizing and landmarks -----------------------------------------------


def test_tokenize() -> None:
    assert tokenize("Walk PAST the piano-forte, room 2!") == [
        "walk",
        "past",
        "the",
        "piano",
        "forte",
        "room",
        "2",
    ]
    assert tokenize("") == []


def test_fallback_landmarks_filters_glue_words() -> None:
    marks = fallback_landmarks("Walk past the piano and stop at the bathroom door")
    assert marks == ("piano", "bathroom", "door")


def test_fallback_landmarks_never_empty() -> None:
    # Only glue words: falls back to long tokens, then all tokens.
    assert fallback_landmarks("walk straight ahead then stop") == (
        "walk",
        "straight",
        "ahead",
        "then",
        "stop",
    )
    assert fallback_landmarks("go up") == ("go", "up")
    assert fallback_landmarks("!!") == ("!!",)


def test_landmark_set_normalizes() -> None:
    marks = LandmarkSet.from_terms(["  Sofa", "KITCHEN", "sofa", "", "  "])
    assert marks.landmarks == ("sofa", "kitchen")
    assert marks.text() == "sofa kitchen"
    with pytest.raises(SevlnError):
        LandmarkSet(landmarks=())


def test_extract_landmarks_json_passthrough() -> None:
    backend = scripted([(None, '["kitchen", "sofa"]')])
    marks = extract_landmarks(backend, "go to the kitchen")
    assert marks.landmarks == ("kitchen", "sofa")


def test_extract_landmarks_fenced_json() -> None:
    backend = scripted([(None, '```json\n["piano"]\n```')])
    assert extract_landmarks(backend, "find the piano").landmarks == ("piano",)


def test_extract_landmarks_non_json_falls_back() -> None:
    backend = scripted([(None, "I think the landmarks are piano and door")])
    marks = extract_landmarks(
        backend, "Walk past the piano and stop at the bathroom door"
    )
    assert marks.landmarks == ("piano", "bathroom", "door")


def test_extract_landmarks_vocabulary_filter(tmp_path: Path) -> None:
    vocab_file = tmp_path / "vocab.txt"
    vocab_file.write_text("piano  # an instrument\nsofa\n# full comment line\n", encoding="utf-8")
    vocab = load_vocabulary(vocab_file)
    assert vocab == frozenset({"piano", "sofa"})

    backend = scripted([(None, '["piano", "weird-token"]')])
    marks = extract_landmarks(backend, "walk to the piano", vocab)
    assert marks.landmarks == ("piano",)


def test_extract_landmarks_filter_empties_then_fallback() -> None:
    vocab = frozenset({"garden"})
    backend = scripted([(None, '["piano"]')])
    marks = extract_landmarks(backend, "Walk to the piano", vocab)
    # Nothing survives the vocabulary; fallback tokens apply unfiltered.
    assert marks.landmarks == ("piano",)


def test_extract_landmarks_empty_instruction() -> None:
    with pytest.raises(ExtractionError):
        extract_landmarks(scripted([(None, "[]")]), "   ")


def test_extract_landmarks_backend_failure() -> None:
    from sevln.backends import ChatRequest

    backend = scripted([(0, "x")], on_exhausted="error")
    backend.complete(ChatRequest(system="s", user="u"))
    with pytest.raises(ExtractionError):
        extract_landmarks(backend, "walk to the piano")


def test_load_vocabulary_missing_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        load_vocabulary(tmp_path / "absent.txt")


# --- embedding --------------------------------------------------------------


def test_hash_bucket_frozen_values() -> None:
    # blake2b(digest_size=8) big-endian, reduced mod dimension.
    assert hash_bucket("sofa", 64) == 44
    assert hash_bucket("sofa", 8) == 4
    assert hash_bucket("table", 8) == 7
    digest = hashlib.blake2b(b"sofa", digest_size=8).digest()
    assert hash_bucket("sofa", 64) == int.from_bytes(digest, "big") % 64


def test_hashing_embedder_frozen_vector() -> None:
    vec = HashingEmbedder(dimension=8).encode("sofa sofa table")
    expected = [0.0] * 8
    expected[4] = 2.0 / math.sqrt(5.0)
    expected[7] = 1.0 / math.sqrt(5.0)
    assert vec == pytest.approx(expected, abs=1e-12)
    assert math.fsum(v * v for v in vec) == pytest.approx(1.0, abs=1e-12)


def test_hashing_embedder_deterministic() -> None:
    embedder = HashingEmbedder(dimension=64)
    assert embedder.encode("piano hallway") == embedder.encode("piano hallway")
    with pytest.raises(EmbeddingError):
        embedder.encode("!!!")
    with pytest.raises(ConfigError):
        HashingEmbedder(dimension=0)


def test_embed_landmark_order_stable_after_dedup() -> None:
    embedder = HashingEmbedder(dimension=32)
    a = embed(embedder, LandmarkSet.from_terms(["kitchen", "sofa", "kitchen"]))
    b = embed(embedder, LandmarkSet.from_terms(["kitchen", "sofa"]))
    assert a.values == b.values
    assert a.dimension == 32


def test_query_vector_guards() -> None:
    with pytest.raises(EmbeddingError):
        QueryVector(values=())
    with pytest.raises(EmbeddingError):
        QueryVector(values=(0.0, 0.0))


# --- cosine -----------------------------------------------------------------


def test_cosine_frozen_cases() -> None:
    assert cosine((1.0, 2.0, 2.0), (2.0, 1.0, 2.0)) == pytest.approx(8.0 / 9.0, abs=1e-12)
    assert cosine((1.0, 0.0), (1.0, 0.0)) == pytest.approx(1.0, abs=1e-12)
    assert cosine((1.0, 0.0), (0.0, 3.0)) == pytest.approx(0.0, abs=1e-12)
    assert cosine((1.0, 0.0), (-2.0, 0.0)) == pytest.approx(-1.0, abs=1e-12)


def test_cosine_errors() -> None:
    with pytest.raises(DimensionMismatchError):
        cosine((1.0, 2.0), (1.0, 2.0, 3.0))
    with pytest.raises(EmbeddingError):
        cosine((0.0, 0.0), (1.0, 2.0))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(1e-6, 1e6),
)
def test_cosine_scale_invariant(a: list[float], b: list[float], alpha: float) -> None:
    if math.fsum(x * x for x in a) == 0.0 or math.fsum(x * x for x in b) == 0.0:
        return
    base = cosine(a, b)
    scaled = cosine([alpha * x for x in a], b)
    assert abs(scaled - base) <= 1e-9
    assert abs(cosine(a, b) - cosine(b, a)) <= 1e-12
    assert -1.0 - 1e-12 <= base <= 1.0 + 1e-12


# --- rendering --------------------------------------------------------------


def test_render_experience_template_shape() -> None:
    entry = _entry_with_embedding((1.0, 0.0), landmarks=("sofa", "fireplace"))
    text = render_experience(entry, 3)
    assert text.startswith("EXPERIENCE 3 - landmarks: sofa, fireplace; situation: somewhere;")
    assert "corrected decision: thinking t, planning p, action n1" in text


def test_render_experience_highlights_revised_triple() -> None:
    original = (_triple("stop"), _triple("n1"))
    revised = (_triple("stop"), _triple("n2", thinking="revised move"))
    entry = ExperienceEntry(
        landmarks=("sofa",),
        descriptions=("d0", "d1"),
        original=original,
        revised=revised,
        embedding=(1.0,),
        source_episode="ep",
    )
    text = render_experience(entry, 1)
    assert "thinking revised move" in text
    assert "action n2" in text


def test_render_experience_caps_by_dropping_oldest_descriptions() -> None:
    descriptions = tuple(f"scene {i:03d} " + "x" * 120 for i in range(20))
    entry = ExperienceEntry(
        landmarks=("sofa",),
        descriptions=descriptions,
        original=(_triple("stop"),),
        revised=(_triple("n1"),),
        embedding=(1.0,),
        source_episode="ep",
    )
    text = render_experience(entry, 1)
    assert len(text) <= EXPERIENCE_CHAR_CAP
    assert "scene 019" in text  # newest survives
    assert "scene 000" not in text  # oldest dropped first


def test_render_experience_hard_cut_on_single_huge_description() -> None:
    entry = ExperienceEntry(
        landmarks=("sofa",),
        descriptions=("y" * 5000,),
        original=(_triple("stop"),),
        revised=(_triple("n1"),),
        embedding=(1.0,),
        source_episode="ep",
    )
    assert len(render_experience(entry, 1)) == EXPERIENCE_CHAR_CAP


# --- retrieve ---------------------------------------------------------------


def _repo_with_embeddings(embeddings: list[tuple[float, ...]], dim: int) -> ExperienceRepo:
    repo = ExperienceRepo(dimension=dim)
    for vec in embeddings:
        repo.insert(_entry_with_embedding(vec))
    return repo


def test_retrieve_empty_repo() -> None:
    repo = ExperienceRepo(dimension=2)
    block = retrieve(repo, QueryVector(values=(1.0, 0.0)), 2)
    assert block.rendered == ""
    assert block.entries_used == ()


def test_retrieve_zero_shots() -> None:
    repo = _repo_with_embeddings([(1.0, 0.0)], 2)
    block = retrieve(repo, QueryVector(values=(1.0, 0.0)), 0)
    assert block.rendered == ""
    assert block.entries_used == ()


def test_retrieve_negative_shots() -> None:
    repo = _repo_with_embeddings([(1.0, 0.0)], 2)
    with pytest.raises(SevlnError):
        retrieve(repo, QueryVector(values=(1.0, 0.0)), -1)


def test_retrieve_dimension_mismatch() -> None:
    repo = _repo_with_embeddings([(1.0, 0.0)], 2)
    with pytest.raises(DimensionMismatchError):
        retrieve(repo, QueryVector(values=(1.0, 0.0, 0.0)), 1)


def test_retrieve_picks_top_by_score() -> None:
    # Scores against (1,0): 1.0, 0.0, ~0.707.
    repo = _repo_with_embeddings([(2.0, 0.0), (0.0, 1.0), (1.0, 1.0)], 2)
    block = retrieve(repo, QueryVector(values=(1.0, 0.0)), 2)
    assert [seq for seq, _ in block.entries_used] == [0, 2]
    scores = [score for _, score in block.entries_used]
    assert scores == sorted(scores, reverse=True)
    assert block.rendered.count("EXPERIENCE") == 2
    assert "EXPERIENCE 1 -" in block.rendered and "EXPERIENCE 2 -" in block.rendered


def test_retrieve_tie_breaks_to_older_entry() -> None:
    repo = _repo_with_embeddings([(1.0, 0.0), (3.0, 0.0)], 2)
    block = retrieve(repo, QueryVector(values=(1.0, 0.0)), 1)
    assert [seq for seq, _ in block.entries_used] == [0]


def test_retrieve_exact_landmark_prefilter() -> None:
    repo = ExperienceRepo(dimension=2)
    repo.insert(_entry_with_embedding((1.0, 0.0), landmarks=("sofa",)))
    repo.insert(_entry_with_embedding((1.0, 0.0), landmarks=("sofa", "fireplace")))
    query = QueryVector(values=(1.0, 0.0))
    wanted = LandmarkSet.from_terms(["fireplace", "sofa"])
    block = retrieve(repo, query, 5, exact_landmarks=wanted)
    assert [seq for seq, _ in block.entries_used] == [1]


def _brute_force_order(embeddings: list[tuple[float, ...]], query: tuple[float, ...]) -> list[int]:
    def score(vec: tuple[float, ...]) -> float:
        dot = math.fsum(x * y for x, y in zip(query, vec))
        na = math.sqrt(math.fsum(x * x for x in query))
        nb = math.sqrt(math.fsum(y * y for y in vec))
        return dot / (na * nb)

    return sorted(range(len(embeddings)), key=lambda i: (-score(embeddings[i]), i))


def test_retrieve_matches_brute_force_oracle() -> None:
    rng = random.Random(42)
    dim = 8
    for size in (1, 2, 7, 40, 160):
        embeddings = []
        for i in range(size):
            if i % 5 == 4:
                embeddings.append(embeddings[rng.randrange(i)])  # deliberate exact tie
            else:
                embeddings.append(
                    tuple(rng.uniform(-1, 1) for _ in range(dim))
                )
        embeddings = [e if any(e) else (1.0,) + (0.0,) * (dim - 1) for e in embeddings]
        repo = _repo_with_embeddings(embeddings, dim)
        query = tuple(rng.uniform(-1, 1) for _ in range(dim)) or (1.0,) * dim
        expected = _brute_force_order(embeddings, query)
        for n in (0, 1, 3, size, size + 10):
            block = retrieve(repo, QueryVector(values=query), n)
            assert [seq for seq, _ in block.entries_used] == expected[:n]


def test_retrieve_monotone_in_n() -> None:
    rng = random.Random(17)
    dim = 6
    embeddings = [tuple(rng.uniform(-1, 1) for _ in range(dim)) for _ in range(30)]
    repo = _repo_with_embeddings(embeddings, dim)
    query = QueryVector(values=tuple(rng.uniform(-1, 1) for _ in range(dim)))
    previous: list[int] = []
    for n in (1, 2, 5, 11, 30):
        block = retrieve(repo, query, n)
        picked = [seq for seq, _ in block.entries_used]
        assert picked[: len(previous)] == previous
        scores = [s for _, s in block.entries_used]
        assert scores == sorted(scores, reverse=True)
        previous = picked
