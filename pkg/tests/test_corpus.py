import numpy as np
import pytest

from conftest import PROJECT_ROOT, random_keywords
from core.errors import EmptySetError, KeywordParseError, TokenOutOfRangeError, UsageError
from core.tokens import Vocabulary
from corpus.constraint_set import (
    ConstraintSet,
    check_prefix_free,
    load_keywords,
    parse_keywords,
    save_keywords,
)
from corpus.index import PAD, build_index, get_bucket_policy


def test_parse_keywords_skips_comments_and_infers_vocab():
    s = parse_keywords(["# shopping", "0 2", "", "1 3", "1 0 4"])
    assert len(s) == 3
    assert s.vocab.vocab_size == 5
    assert s.sorted() == [(0, 2), (1, 0, 4), (1, 3)]


def test_parse_keywords_deduplicates():
    assert len(parse_keywords(["1 2", "1 2", "3"])) == 2


def test_parse_keywords_empty():
    with pytest.raises(EmptySetError, match="empty constraint set"):
        parse_keywords(["# nothing here", ""])


def test_parse_keywords_names_bad_line():
    with pytest.raises(TokenOutOfRangeError, match="line 3"):
        parse_keywords(["0 1", "1", "0 7"], vocab_size=5)
    with pytest.raises(KeywordParseError, match="line 2"):
        parse_keywords(["0 1", "zero"])


def test_constraint_set_rejects_empty_keyword():
    with pytest.raises(EmptySetError):
        ConstraintSet.from_sequences([(1,), ()], Vocabulary(3))


def test_check_prefix_free():
    assert check_prefix_free([(0, 2), (1, 3), (1, 0, 4)])
    assert not check_prefix_free([(1,), (1, 2)])
    assert not check_prefix_free([(1, 2), (0,), (1, 2, 0)])


def test_keyword_file_round_trip(tmp_path):
    s = random_keywords(np.random.default_rng(5), 20, 50, 6)
    path = tmp_path / "keywords.txt"
    save_keywords(s, path)
    assert load_keywords(path, 20) == s


def test_shipped_shopping_keywords():
    s = load_keywords(PROJECT_ROOT / "config" / "keywords" / "shopping.txt")
    assert s.sorted() == [(0, 2), (1, 0, 4), (1, 3)]
    assert check_prefix_free(s)


def test_build_index_layout_pow2():
    s = ConstraintSet.from_sequences([(3,), (0, 2), (1, 3), (1, 0, 4), (2, 2, 2, 2)], Vocabulary(5))
    idx = build_index(s)
    assert [(b.min_len, b.max_len, b.count) for b in idx.buckets] == [(1, 1, 1), (2, 3, 3), (4, 4, 1)]
    middle = idx.buckets[1]
    assert middle.rows.tolist() == [[0, 2, PAD], [1, 0, 4], [1, 3, PAD]]
    assert middle.keys.tolist() == [[0, 2, -1], [1, 0, 4], [1, 3, -1]]
    assert idx.max_len == 4
    assert idx.prefix_free
    assert sorted(idx.sequences()) == s.sorted()


def test_build_index_single_bucket():
    s = ConstraintSet.from_sequences([(1,), (1, 2), (0, 2, 2)], Vocabulary(3))
    idx = build_index(s, get_bucket_policy("single"))
    assert len(idx.buckets) == 1
    assert idx.buckets[0].width == 3
    # a proper prefix sorts before its extension
    assert [idx.buckets[0].row(i) for i in range(3)] == [(0, 2, 2), (1,), (1, 2)]
    assert not idx.prefix_free


@pytest.mark.parametrize(
    "seqs, vocab_size, policy, rows, lengths, prefix_free",
    [
        ([(1,), (1, 2), (2,)], 3, "single", [[1, PAD], [1, 2], [2, PAD]], [1, 2, 1], False),
        ([(3, 4)], 5, "pow2", [[3, 4]], [2], True),
        ([(3, 4)], 5, "single", [[3, 4]], [2], True),
    ],
)
def test_build_index_small_sets(seqs, vocab_size, policy, rows, lengths, prefix_free):
    idx = build_index(ConstraintSet.from_sequences(seqs, Vocabulary(vocab_size)), get_bucket_policy(policy))
    assert len(idx.buckets) == 1
    assert idx.buckets[0].rows.tolist() == rows
    assert idx.buckets[0].true_lengths.tolist() == lengths
    assert idx.prefix_free is prefix_free


def test_unknown_bucket_policy():
    with pytest.raises(UsageError):
        get_bucket_policy("fibonacci")


@pytest.mark.parametrize("policy", ["pow2", "single"])
def test_random_indexes_validate(policy):
    rng = np.random.default_rng(17)
    for _ in range(30):
        s = random_keywords(rng, 16, int(rng.integers(1, 80)), 10)
        idx = build_index(s, get_bucket_policy(policy))
        idx.validate()
        assert len(idx) == len(s)
        assert idx.to_constraint_set() == s
        assert idx.prefix_free == check_prefix_free(s)
