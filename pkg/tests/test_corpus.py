"""Data model, loaders, curation, and generator tests."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spanmax.corpus import (
    Corpus,
    CorpusError,
    CurationConfig,
    SynthConfig,
    binarize,
    build_toxic_term_list,
    curate,
    generate_synthetic,
    iter_terms,
    load_jsonl,
    make_post,
    mine_ambiguous,
    normalize_spans,
    partition_span_annotations,
    save_jsonl,
    split_for_training,
    strip_spans,
    TermFrequencyList,
)


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")


class TestBinarize:
    def test_toxic_sample_score(self):
        # "tax the clueless, irresponsible idiots" rates 0.898 -> toxic
        assert binarize(0.898) == 1

    def test_non_toxic_sample_score(self):
        # "Don't take the bait of the troll" rates 0.167 -> non-toxic
        assert binarize(0.167) == 0

    def test_boundary_maps_to_toxic(self):
        assert binarize(0.5) == 1

    def test_range_validation(self):
        with pytest.raises(CorpusError):
            binarize(1.5)
        with pytest.raises(CorpusError):
            binarize(-0.1)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert binarize(lo) <= binarize(hi)


class TestSpans:
    def test_overlap_merge(self):
        assert normalize_spans([[4, 9], [6, 12]], 20) == ((4, 12),)

    def test_sorting(self):
        assert normalize_spans([[10, 12], [0, 3]], 20) == ((0, 3), (10, 12))

    def test_bounds(self):
        with pytest.raises(CorpusError):
            normalize_spans([[0, 25]], 20)
        with pytest.raises(CorpusError):
            normalize_spans([[5, 5]], 20)

    @given(
        st.lists(
            st.tuples(st.integers(0, 19), st.integers(1, 20)).map(
                lambda p: (min(p), max(p)) if p[0] != p[1] else (p[0], p[1] + 1)
            ),
            max_size=8,
        )
    )
    def test_normalized_invariants(self, raw):
        spans = normalize_spans([(s, min(e, 21)) for s, e in raw], 21)
        prev_end = -1
        for start, end in spans:
            assert 0 <= start < end <= 21
            assert start > prev_end
            prev_end = end
        # coverage is preserved
        want = {c for s, e in raw for c in range(s, min(e, 21))}
        got = {c for s, e in spans for c in range(s, e)}
        assert want == got


class TestLoadJsonl:
    def test_basic(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "a", "text": "hi", "toxicity": 0.0}])
        loaded = load_jsonl(path)
        post = loaded[0]
        assert post.label == 0 and post.spans is None

    def test_spans_merged(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(
            path,
            [{"id": "a", "text": "x" * 15, "toxicity": 0.9, "spans": [[4, 9], [6, 12]]}],
        )
        assert load_jsonl(path)[0].spans == ((4, 12),)

    def test_toxicity_out_of_range_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(
            path,
            [
                {"id": "a", "text": "ok", "toxicity": 0.2},
                {"id": "b", "text": "bad", "toxicity": 1.5},
            ],
        )
        with pytest.raises(CorpusError, match=r":2"):
            load_jsonl(path)

    def test_malformed_line_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "text": "hi", "toxicity": 0.1}\n{broken\n')
        with pytest.raises(CorpusError, match=r":2"):
            load_jsonl(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "a", "toxicity": 0.1}])
        with pytest.raises(CorpusError, match="text"):
            load_jsonl(path)

    def test_round_trip(self, tmp_path):
        corpus = generate_synthetic(SynthConfig(size=40), seed=3)
        path = tmp_path / "c.jsonl"
        save_jsonl(corpus, path)
        again = load_jsonl(path)
        assert again.posts == corpus.posts

    def test_duplicate_ids_rejected(self):
        p = make_post("a", "hi", 0.1)
        with pytest.raises(CorpusError, match="duplicate"):
            Corpus(posts=(p, p))


class TestTermList:
    def test_threshold_boundary(self):
        posts = []
        for term, count in (("grumble", 19), ("zorg", 20), ("wibble", 21)):
            for i in range(count):
                text = f"filler {term} trailer"
                posts.append(
                    make_post(f"{term}-{i}", text, 0.9, spans=[[7, 7 + len(term)]])
                )
        corpus = Corpus(posts=tuple(posts), role="span")
        tfl = build_toxic_term_list(corpus, min_count=20)
        assert tfl.counts() == {"zorg": 20, "wibble": 21}
        assert tfl.entries[0] == ("wibble", 21)  # descending count

    def test_exact_planted_count(self):
        posts = [
            make_post(f"p{i}", "aaa zorg bbb", 0.9, spans=[[4, 8]]) for i in range(25)
        ]
        tfl = build_toxic_term_list(Corpus(posts=tuple(posts)), min_count=1)
        assert tfl.counts()["zorg"] == 25

    def test_partial_span_overlap_not_counted(self):
        # span covers only part of the term's characters
        post = make_post("p", "aaa zorg bbb", 0.9, spans=[[4, 6]])
        tfl = build_toxic_term_list(Corpus(posts=(post,)), min_count=1)
        assert "zorg" not in tfl.counts()

    def test_no_annotations_error(self):
        corpus = Corpus(posts=(make_post("a", "hi", 0.2),))
        with pytest.raises(CorpusError, match="no span annotations"):
            build_toxic_term_list(corpus)

    def test_counts_match_brute_force(self):
        corpus = generate_synthetic(SynthConfig(size=300), seed=9)
        annotated = Corpus(
            posts=tuple(p for p in corpus if p.spans), role="span"
        )
        tfl = build_toxic_term_list(annotated, min_count=1)
        brute: dict[str, int] = {}
        for post in annotated:
            covered = post.span_char_set()
            for term, start, end in iter_terms(post.text):
                if set(range(start, end)) <= covered:
                    brute[term] = brute.get(term, 0) + 1
        assert tfl.counts() == brute

    def test_tsv_round_trip(self):
        tfl = TermFrequencyList(entries=(("zorg", 30), ("blarp", 21)))
        assert TermFrequencyList.from_tsv(tfl.to_tsv()) == tfl


class TestMineAmbiguous:
    TERMS = TermFrequencyList(entries=(("idiots", 25),))

    def test_selected(self):
        corpus = Corpus(posts=(make_post("a", "those idiots again", 0.2),))
        assert len(mine_ambiguous(corpus, self.TERMS)) == 1

    def test_no_listed_term(self):
        corpus = Corpus(posts=(make_post("a", "lovely weather", 0.2),))
        assert len(mine_ambiguous(corpus, self.TERMS)) == 0

    def test_below_lo(self):
        corpus = Corpus(posts=(make_post("a", "those idiots again", 0.05),))
        assert len(mine_ambiguous(corpus, self.TERMS)) == 0

    def test_case_insensitive_whole_term(self):
        corpus = Corpus(
            posts=(
                make_post("a", "you IDIOTS!", 0.25),
                make_post("b", "idiotsandmore", 0.25),  # not a whole-term match
            )
        )
        assert [p.id for p in mine_ambiguous(corpus, self.TERMS)] == ["a"]


def desk_scale_corpora(seed=21):
    corpus = generate_synthetic(
        SynthConfig(size=4000, frac_toxic=0.35, frac_context_toxic=0.08,
                    frac_context_benign=0.12),
        seed=seed,
    )
    span_corpus = Corpus(
        posts=tuple(p for p in corpus if p.spans), role="span"
    )
    return corpus, span_corpus


class TestCurate:
    def test_desk_scale_counts(self):
        corpus, span_corpus = desk_scale_corpora()
        config = CurationConfig.paper_proportions(scale=0.01, seed=5)
        assert (config.highly_toxic, config.non_toxic, config.ambiguous,
                config.extra_toxic, config.span_annotated) == (70, 70, 80, 80, 30)
        term_list = build_toxic_term_list(span_corpus, min_count=20)
        train, test = curate(corpus, span_corpus, config, term_list)
        assert len(train) == 140 and len(test) == 160
        assert not (train.ids() & test.ids())
        pool = list(train) + list(test)
        with_spans = [p for p in pool if p.spans is not None]
        assert len(with_spans) == 30
        toxic = [p for p in pool if p.toxicity > 0.8]
        assert len(toxic) == 70 + 80
        clean = [p for p in pool if p.toxicity < 0.1]
        assert len(clean) == 70
        ambiguous = [p for p in pool if 0.1 <= p.toxicity <= 0.3]
        assert len(ambiguous) == 80

    def test_deterministic(self):
        corpus, span_corpus = desk_scale_corpora()
        config = CurationConfig.paper_proportions(scale=0.01, seed=5)
        a = curate(corpus, span_corpus, config)
        b = curate(corpus, span_corpus, config)
        assert a[0].posts == b[0].posts and a[1].posts == b[1].posts

    def test_shortfall_names_stratum(self):
        corpus, span_corpus = desk_scale_corpora()
        config = CurationConfig(
            highly_toxic=50, non_toxic=10**6, ambiguous=10, extra_toxic=10,
            span_annotated=10, seed=0,
        )
        with pytest.raises(CorpusError, match="non-toxic"):
            curate(corpus, span_corpus, config)


class TestGenerateSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(SynthConfig(size=100), seed=7)
        b = generate_synthetic(SynthConfig(size=100), seed=7)
        assert a.posts == b.posts
        assert len(a) == 100

    def test_spans_match_planted_terms(self):
        corpus = generate_synthetic(SynthConfig(size=200), seed=13)
        lexicon = set(SynthConfig(size=1).toxic_lexicon) | {
            r.term for r in SynthConfig(size=1).context_rules
        }
        toxic = [p for p in corpus if p.label == 1]
        assert toxic
        for post in toxic:
            assert len(post.spans) == 1
            start, end = post.spans[0]
            assert post.text[start:end] in lexicon

    def test_label_mean_near_mixture(self):
        config = SynthConfig(size=2000, frac_toxic=0.4, frac_context_toxic=0.1,
                             frac_context_benign=0.1)
        corpus = generate_synthetic(config, seed=3)
        mean = np.mean([p.label for p in corpus])
        assert abs(mean - 0.5) < 0.05

    def test_toxicity_ranges_by_category(self):
        corpus = generate_synthetic(SynthConfig(size=500), seed=2)
        for post in corpus:
            kind = post.id.split("-")[0]
            if kind in ("tox", "ctxt"):
                assert post.toxicity > 0.8
            elif kind == "ctxb":
                assert 0.1 <= post.toxicity < 0.3
            else:
                assert post.toxicity < 0.1

    def test_empty_lexicon_error(self):
        with pytest.raises(CorpusError, match="lexicon"):
            SynthConfig(size=10, toxic_lexicon=())

    def test_context_trigram_only_in_toxic_context_posts(self):
        config = SynthConfig(size=800)
        corpus = generate_synthetic(config, seed=17)
        for post in corpus:
            words = post.text.rstrip(".!").split(" ")
            for rule in config.context_rules:
                has_trigram = any(
                    words[i : i + 3] == [rule.trigger[0], rule.trigger[1], rule.term]
                    for i in range(len(words) - 2)
                )
                if has_trigram:
                    assert post.id.startswith("ctxt-")


class TestSplits:
    def test_strip_spans(self):
        corpus = generate_synthetic(SynthConfig(size=30), seed=1)
        stripped = strip_spans(corpus)
        assert all(p.spans is None for p in stripped)

    def test_split_for_training_excludes_toxic_no_span(self):
        posts = (
            make_post("a", "zork here", 0.9, spans=[[0, 4]]),
            make_post("b", "toxic whole", 0.9, spans=[]),  # annotated span-free
            make_post("c", "fine text", 0.05),
        )
        cls_side, span_side = split_for_training(Corpus(posts=posts))
        assert [p.id for p in span_side] == ["a"]
        assert sorted(p.id for p in cls_side) == ["b", "c"]
        assert all(p.spans is None for p in cls_side)

    def test_partition_is_exclusive_and_exhaustive(self):
        corpus = generate_synthetic(SynthConfig(size=200), seed=4)
        cls_side, span_side = partition_span_annotations(corpus, 0.5, seed=0)
        assert len(cls_side) + len(span_side) == len(corpus)
        assert not (cls_side.ids() & span_side.ids())
        assert all(p.spans is not None and p.spans for p in span_side)
        assert all(p.label == 1 for p in span_side)
