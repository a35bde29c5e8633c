import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nearsub.dataset import (
    Sample,
    content_digest,
    dedup,
    jaccard,
    load_corpus,
    make_corpus,
    save_corpus,
    token_seq,
    tokenize,
)
from nearsub.errors import InputDataError


def write_corpus(tmp_path, rows, name="corpus.jsonl"):
    path = tmp_path / name
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


class TestTokenize:
    def test_code_line(self):
        assert tokenize("def f(x): return x") == {"def": 1, "f": 1, "x": 2, "return": 1}

    def test_empty(self):
        assert tokenize("") == {}

    def test_punctuation_dropped(self):
        assert sorted(tokenize("a+a + a").elements()) == ["a", "a", "a"]

    def test_case_preserved(self):
        assert set(tokenize("Foo foo FOO")) == {"Foo", "foo", "FOO"}

    def test_order_preserved_in_sequence(self):
        assert token_seq("b a c a") == ["b", "a", "c", "a"]


class TestJaccard:
    def test_identical(self):
        assert jaccard({"a", "b"}, {"a", "b"}) == 1.0

    def test_disjoint(self):
        assert jaccard({"a", "b"}, {"c", "d"}) == 0.0

    def test_half_overlap(self):
        # |{b,c}| / |{a,b,c,d}| = 2/4
        assert jaccard({"a", "b", "c"}, {"b", "c", "d"}) == 0.5

    def test_both_empty(self):
        assert jaccard(set(), set()) == 1.0

    def test_multiplicities_collapsed(self):
        assert jaccard(tokenize("a a a b"), tokenize("a b b")) == 1.0

    @given(
        st.sets(st.text(alphabet="abcdef", min_size=1, max_size=3), max_size=8),
        st.sets(st.text(alphabet="abcdef", min_size=1, max_size=3), max_size=8),
    )
    def test_symmetric_and_bounded(self, a, b):
        s = jaccard(a, b)
        assert s == jaccard(b, a)
        assert 0.0 <= s <= 1.0
        assert (s == 1.0) == (a == b)


class TestLoadCorpus:
    def test_round_trip_order(self, tmp_path):
        rows = [
            {"id": "a", "text": "x", "label": 0, "source": "s"},
            {"id": "b", "text": "y", "label": 1, "source": ""},
            {"id": "c", "text": "z", "label": 0, "source": ""},
        ]
        path = write_corpus(tmp_path, rows)
        corpus = load_corpus(path, "unrealistic")
        assert corpus.manifest.sample_count == 3
        assert corpus.ids() == ("a", "b", "c")

    def test_save_load_byte_identical(self, tmp_path):
        corpus = make_corpus(
            "realworld",
            [Sample("a", "def f():\n  pass", 1, "gh"), Sample("b", "unicode éü", 0)],
        )
        p1 = tmp_path / "one.jsonl"
        p2 = tmp_path / "two.jsonl"
        save_corpus(corpus, p1)
        save_corpus(load_corpus(p1, "realworld"), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_duplicate_id_reports_line(self, tmp_path):
        rows = [
            {"id": "a", "text": "1", "label": 0},
            {"id": "b", "text": "2", "label": 0},
            {"id": "c", "text": "3", "label": 0},
            {"id": "d", "text": "4", "label": 0},
            {"id": "a", "text": "5", "label": 0},
        ]
        path = write_corpus(tmp_path, rows)
        with pytest.raises(InputDataError, match=r"'a'.*line 5"):
            load_corpus(path, "unrealistic")

    def test_bad_label_reports_record(self, tmp_path):
        path = write_corpus(tmp_path, [{"id": "a", "text": "1", "label": 2}])
        with pytest.raises(InputDataError, match="'a'"):
            load_corpus(path, "unrealistic")

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a", "text": "x", "label": 0}\n{nope\n', encoding="utf-8")
        with pytest.raises(InputDataError, match="line 2"):
            load_corpus(path, "unrealistic")

    def test_invalid_utf8(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_bytes(b'{"id": "a", "text": "\xff\xfe", "label": 0}\n')
        with pytest.raises(InputDataError, match="UTF-8"):
            load_corpus(path, "unrealistic")

    def test_missing_field(self, tmp_path):
        path = write_corpus(tmp_path, [{"id": "a", "label": 0}])
        with pytest.raises(InputDataError, match="text"):
            load_corpus(path, "unrealistic")

    def test_digest_recomputes(self, tmp_path):
        path = write_corpus(tmp_path, [{"id": "a", "text": "x", "label": 0}])
        corpus = load_corpus(path, "unrealistic")
        assert content_digest(corpus.samples) == corpus.manifest.content_digest


class TestDedup:
    def test_byte_identical_removed(self):
        corpus = make_corpus(
            "unrealistic",
            [Sample("a", "int main() { return 0; }", 0), Sample("b", "int main() { return 0; }", 1)],
        )
        kept, removed = dedup(corpus, 0.8)
        assert kept.ids() == ("a",)
        assert removed == ["b"]
        assert kept.manifest.dedup_applied
        assert kept.manifest.dedup_threshold == 0.8

    def test_distinct_tokens_kept(self):
        corpus = make_corpus(
            "unrealistic",
            [Sample("a", "alpha beta", 0), Sample("b", "gamma delta", 0), Sample("c", "eps zeta", 1)],
        )
        kept, removed = dedup(corpus, 0.8)
        assert kept.ids() == ("a", "b", "c")
        assert removed == []

    def test_threshold_is_inclusive(self):
        # token sets overlap 4/5 = 0.8 exactly
        corpus = make_corpus(
            "unrealistic",
            [Sample("a", "t1 t2 t3 t4", 0), Sample("b", "t1 t2 t3 t4 t5", 0)],
        )
        kept, removed = dedup(corpus, 0.8)
        assert removed == ["b"]

    def test_labels_never_modified(self):
        corpus = make_corpus(
            "unrealistic", [Sample("a", "x y", 1), Sample("b", "p q", 0)]
        )
        kept, _ = dedup(corpus, 0.5)
        assert [s.label for s in kept.samples] == [1, 0]

    def test_empty_texts_are_mutual_duplicates(self):
        corpus = make_corpus(
            "unrealistic", [Sample("a", "", 0), Sample("b", "   ", 1), Sample("c", "x", 0)]
        )
        kept, removed = dedup(corpus, 0.9)
        assert kept.ids() == ("a", "c")
        assert removed == ["b"]

    def test_threshold_zero_keeps_only_first(self):
        corpus = make_corpus(
            "unrealistic", [Sample("a", "x", 0), Sample("b", "y", 0), Sample("c", "z", 0)]
        )
        kept, removed = dedup(corpus, 0.0)
        assert kept.ids() == ("a",)
        assert removed == ["b", "c"]

    @given(
        st.lists(
            st.text(alphabet="ab cd", min_size=0, max_size=12),
            min_size=0,
            max_size=12,
        ),
        st.floats(min_value=0.05, max_value=1.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, texts, threshold):
        corpus = make_corpus(
            "unrealistic", [Sample(f"s{i}", t, 0) for i, t in enumerate(texts)]
        )
        once, _ = dedup(corpus, threshold)
        twice, removed = dedup(once, threshold)
        assert removed == []
        assert twice.ids() == once.ids()

    @given(
        st.lists(st.text(alphabet="abc de", min_size=0, max_size=10), min_size=0, max_size=10),
        st.floats(min_value=0.05, max_value=0.95),
        st.floats(min_value=0.01, max_value=0.5),
    )
    @settings(max_examples=60, deadline=None)
    def test_lower_threshold_removes_at_least_as_much(self, texts, hi, delta):
        lo = max(hi - delta, 0.01)
        corpus = make_corpus(
            "unrealistic", [Sample(f"s{i}", t, 0) for i, t in enumerate(texts)]
        )
        kept_hi, _ = dedup(corpus, hi)
        kept_lo, _ = dedup(corpus, lo)
        assert len(kept_lo) <= len(kept_hi)
