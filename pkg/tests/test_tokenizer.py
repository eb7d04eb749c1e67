"""Tokenization, vocabulary, and span-alignment tests."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spanmax.corpus import Corpus, make_post
from spanmax.tokenizer import (
    PAD_ID,
    UNK_ID,
    Token,
    TokenizedPost,
    TokenizerError,
    Vocab,
    align_span_labels,
    build_vocab,
    encode,
    is_punctuation_token,
    tokenize,
    tokenize_post,
    tokens_to_char_set,
)


def spans_of(tokens):
    return [(t.surface, t.start, t.end) for t in tokens]


class TestTokenize:
    def test_word_and_punct(self):
        assert spans_of(tokenize("You IDIOT!")) == [
            ("you", 0, 3),
            ("idiot", 4, 9),
            ("!", 9, 10),
        ]

    def test_empty(self):
        assert tokenize("") == []

    def test_interior_punctuation_splits(self):
        assert spans_of(tokenize("a-hole")) == [("a", 0, 1), ("-", 1, 2), ("hole", 2, 6)]

    def test_obfuscated_word(self):
        surfaces = [t.surface for t in tokenize("I.d.i.o.t.s")]
        assert surfaces == ["i", ".", "d", ".", "i", ".", "o", ".", "t", ".", "s"]

    def test_punctuation_run_is_single_char_tokens(self):
        assert [t.surface for t in tokenize("what?!")] == ["what", "?", "!"]

    @given(st.text(max_size=60))
    def test_round_trip_and_order(self, text):
        tokens = tokenize(text)
        prev_end = 0
        for t in tokens:
            assert text[t.start : t.end].lower() == t.surface
            assert t.start >= prev_end  # disjoint, in text order
            prev_end = t.end

    def test_punctuation_token_detector(self):
        tokens = tokenize("hi!")
        assert not is_punctuation_token(tokens[0])
        assert is_punctuation_token(tokens[1])


def tiny_corpus():
    return Corpus(
        posts=(
            make_post("a", "zorg zorg zorg likes tea", 0.1),
            make_post("b", "zorg and tea again tea", 0.1),
            make_post("c", "singleton word", 0.1),
        )
    )


class TestVocab:
    def test_build_and_reserved_ids(self):
        vocab = build_vocab(tiny_corpus(), min_freq=2)
        assert "zorg" in vocab and "tea" in vocab
        assert "singleton" not in vocab
        assert vocab.id_of("never-seen") == UNK_ID
        assert min(vocab.term_ids.values()) == 2  # 0/1 reserved for UNK/PAD
        assert PAD_ID == 1 and UNK_ID == 0

    def test_frequency_then_lexicographic_order(self):
        vocab = build_vocab(tiny_corpus(), min_freq=2)
        # zorg occurs 4x, tea 3x -> zorg gets the first id
        assert vocab.term_ids["zorg"] == 2
        assert vocab.term_ids["tea"] == 3

    def test_deterministic(self):
        a = build_vocab(tiny_corpus(), min_freq=1)
        b = build_vocab(tiny_corpus(), min_freq=1)
        assert a.term_ids == b.term_ids and a.sha256() == b.sha256()

    def test_empty_corpus(self):
        with pytest.raises(TokenizerError):
            build_vocab(Corpus(posts=()), min_freq=1)

    def test_tsv_round_trip(self):
        vocab = build_vocab(tiny_corpus(), min_freq=1)
        again = Vocab.from_tsv(vocab.to_tsv())
        assert again.term_ids == vocab.term_ids
        assert again.sha256() == vocab.sha256()

    def test_tsv_header_required(self):
        with pytest.raises(TokenizerError):
            Vocab.from_tsv("zorg\t2\n")


class TestEncode:
    def test_trim_to_max_len(self):
        text = " ".join(["word"] * 300)
        tokens = tokenize(text)
        vocab = build_vocab(Corpus(posts=(make_post("a", text, 0.0),)), min_freq=1)
        kept, ids = encode(tokens, vocab, max_len=256)
        assert len(ids) == 256 and len(kept) == 256
        assert kept == tokens[:256]  # relative order unchanged

    def test_unknown_token_maps_to_unk(self):
        vocab = build_vocab(tiny_corpus(), min_freq=2)
        kept, ids = encode(tokenize("martian zorg"), vocab)
        assert ids[0] == UNK_ID and ids[1] == vocab.term_ids["zorg"]

    def test_empty(self):
        vocab = build_vocab(tiny_corpus(), min_freq=2)
        assert encode([], vocab) == ([], [])


class TestAlignSpanLabels:
    def test_basic(self):
        tokens = tokenize("you idiot")
        assert align_span_labels(tokens, [(4, 9)]) == [0.0, 1.0]

    def test_empty_gold(self):
        assert align_span_labels(tokenize("you idiot"), []) == [0.0, 0.0]

    def test_any_overlap(self):
        tokens = tokenize("you idiot")
        assert align_span_labels(tokens, [(3, 5)]) == [0.0, 1.0]

    def test_out_of_bounds(self):
        with pytest.raises(TokenizerError):
            align_span_labels(tokenize("hey"), [(0, 10)], text_len=3)

    @given(
        st.text(alphabet="ab c.", min_size=1, max_size=30),
        st.lists(st.tuples(st.integers(0, 29), st.integers(1, 30)), max_size=4),
    )
    def test_matches_per_character_membership(self, text, raw):
        spans = [(min(s, e - 1), max(s + 1, e)) for s, e in raw]
        spans = [(s, e) for s, e in spans if e <= len(text) and s < e]
        tokens = tokenize(text)
        labels = align_span_labels(tokens, spans)
        gold_chars = {c for s, e in spans for c in range(s, e)}
        for token, label in zip(tokens, labels):
            touching = any(c in gold_chars for c in range(token.start, token.end))
            assert label == (1.0 if touching else 0.0)


class TestTokensToCharSet:
    def test_single(self):
        tokens = tokenize("you idiot")
        assert tokens_to_char_set(tokens, [1]) == {4, 5, 6, 7, 8}

    def test_none(self):
        assert tokens_to_char_set(tokenize("you idiot"), []) == set()

    def test_gap_preserved(self):
        tokens = tokenize("you idiot")
        assert tokens_to_char_set(tokens, [0, 1]) == {0, 1, 2, 4, 5, 6, 7, 8}

    def test_index_validation(self):
        with pytest.raises(TokenizerError):
            tokens_to_char_set(tokenize("hi"), [5])


class TestTokenizedPost:
    def test_alignment_from_post(self):
        post = make_post("p", "you idiot !", 0.9, spans=[[4, 9]])
        vocab = build_vocab(Corpus(posts=(post,)), min_freq=1)
        tp = tokenize_post(post, vocab)
        assert tp.token_labels == (0.0, 1.0, 0.0)

    def test_no_annotation_gives_none(self):
        post = make_post("p", "you idiot", 0.9)
        vocab = build_vocab(Corpus(posts=(post,)), min_freq=1)
        assert tokenize_post(post, vocab).token_labels is None

    def test_length_invariants(self):
        with pytest.raises(TokenizerError):
            TokenizedPost(post_id="x", tokens=(Token("a", 0, 1),), ids=(2, 3))
