import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairquant.core import (
    Corpus,
    Document,
    RankedList,
    load_corpus_jsonl,
    prevalence_of,
    project_to_simplex,
    save_corpus_jsonl,
    validate_prevalence,
)


def docs_with_groups(groups):
    return [Document(f"d{i}", ("tok",), group=g) for i, g in enumerate(groups)]


class TestPrevalenceOf:
    def test_direct_counting(self):
        docs = docs_with_groups([0, 0, 1, 1, 1, 2, 2, 2, 2, 2])
        np.testing.assert_allclose(prevalence_of(docs, 3), [0.2, 0.3, 0.5])

    def test_one_class_bag(self):
        docs = docs_with_groups([0, 0, 0, 0])
        np.testing.assert_allclose(prevalence_of(docs, 2), [1.0, 0.0])

    def test_symmetry(self):
        docs = docs_with_groups([0, 1, 2, 0, 1, 2])
        np.testing.assert_allclose(prevalence_of(docs, 3), [1 / 3, 1 / 3, 1 / 3])

    def test_unlabeled_raises(self):
        docs = docs_with_groups([0, 1]) + [Document("dx", ("tok",))]
        with pytest.raises(ValueError, match="unlabeled item"):
            prevalence_of(docs, 2)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            prevalence_of([], 2)

    @given(st.permutations(list(range(12))))
    def test_permutation_invariant(self, perm):
        groups = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2]
        docs = docs_with_groups(groups)
        shuffled = [docs[i] for i in perm]
        np.testing.assert_array_equal(prevalence_of(docs, 3), prevalence_of(shuffled, 3))


class TestProjectToSimplex:
    def test_already_on_simplex(self):
        np.testing.assert_allclose(project_to_simplex([0.5, 0.5]), [0.5, 0.5])

    def test_clip_and_renormalize(self):
        np.testing.assert_allclose(project_to_simplex([-0.2, 0.6, 0.6]), [0.0, 0.5, 0.5])

    def test_all_clipped_uniform_fallback(self):
        np.testing.assert_allclose(project_to_simplex([-1.0, -1.0]), [0.5, 0.5])

    def test_non_finite_raises(self):
        with pytest.raises(ValueError):
            project_to_simplex([np.nan, 0.5])
        with pytest.raises(ValueError):
            project_to_simplex([np.inf, 0.5])

    @given(st.lists(st.floats(min_value=-5, max_value=5, allow_nan=False), min_size=1, max_size=8))
    def test_idempotent_and_valid(self, raw):
        once = project_to_simplex(raw)
        validate_prevalence(once)
        twice = project_to_simplex(once)
        np.testing.assert_array_equal(once, twice)


class TestValidatePrevalence:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            validate_prevalence([-0.1, 1.1])

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            validate_prevalence([0.5, 0.6])

    def test_tolerance_is_tight(self):
        validate_prevalence([0.5, 0.5 + 5e-10])
        with pytest.raises(ValueError):
            validate_prevalence([0.5, 0.5 + 5e-9])


class TestDomainTypes:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Corpus((Document("a", ()), Document("a", ())), class_count=2)

    def test_group_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            Corpus((Document("a", (), group=5),), class_count=2)

    def test_ranked_list_enforces_order(self):
        with pytest.raises(ValueError, match="non-increasing"):
            RankedList("q", (("a", 1.0), ("b", 2.0)))

    def test_ranked_list_top_slices(self):
        rl = RankedList("q", (("a", 3.0), ("b", 2.0), ("c", 1.0)))
        assert rl.top(2).doc_ids() == ["a", "b"]


class TestCorpusJsonl:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        docs = (
            Document("a", ("red", "apple"), group=1, relevant=True),
            Document("b", ("blue", "sky"), group=0),
            Document("c", ("plain",), group=None),
        )
        corpus = Corpus(docs, class_count=2, group_names=("azul", "rojo"))
        save_corpus_jsonl(corpus, path)
        loaded = load_corpus_jsonl(path)
        assert loaded.group_names == ("azul", "rojo")
        by_id = {d.id: d for d in loaded.documents}
        assert by_id["a"].group == 1 and by_id["a"].relevant is True
        assert by_id["b"].group == 0
        assert by_id["c"].group is None

    def test_group_table_is_sorted_distinct_strings(self, tmp_path):
        path = tmp_path / "c.jsonl"
        lines = [
            {"id": "1", "text": "x", "group": "zeta"},
            {"id": "2", "text": "y", "group": "alpha"},
            {"id": "3", "text": "z", "group": "zeta"},
        ]
        path.write_text("\n".join(json.dumps(o) for o in lines))
        corpus = load_corpus_jsonl(path)
        assert corpus.group_names == ("alpha", "zeta")
        assert [d.group for d in corpus.documents] == [1, 0, 1]

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "1", "text": "ok"}\n{broken\n')
        with pytest.raises(ValueError, match="line 2"):
            load_corpus_jsonl(path)
