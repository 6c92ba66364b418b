import numpy as np
import pytest

from conftest import GLOVES, SHIRTS, SHOES, SOCCER, USED, random_keywords
from core.errors import PrefixTooLongError, TokenOutOfRangeError, UsageError
from core.tokens import Vocabulary
from corpus.constraint_set import ConstraintSet
from corpus.index import build_index, get_bucket_policy
from verifier.mask import Mask
from verifier.ppv import (
    ComparisonCounter,
    full_valid_set,
    is_member,
    ppv_verify,
    ppv_verify_batch,
    search_cost_bound,
)
from verifier.trie import load_trie, save_trie, trie_build, trie_verify


def test_only_gloves_continues_soccer(shopping):
    _, _, idx = shopping
    mask = ppv_verify(idx, [SOCCER], [GLOVES, SHOES])
    assert mask.valid_tokens() == [GLOVES]
    assert not mask.eok_allowed


def test_everything_valid_at_root():
    s = ConstraintSet.from_sequences([(t,) for t in range(6)], Vocabulary(6))
    mask = ppv_verify(build_index(s), [], range(6))
    assert mask.tokens.all()
    assert not mask.eok_allowed


def test_full_valid_set(shopping):
    _, _, idx = shopping
    assert full_valid_set(idx, [USED]).valid_tokens() == [SOCCER, SHIRTS]
    assert full_valid_set(idx, [USED, SOCCER]).valid_tokens() == [SHOES]


def test_leaf_allows_only_eok():
    s = ConstraintSet.from_sequences([(1, 2), (0, 1, 1)], Vocabulary(3))
    mask = full_valid_set(build_index(s), [1, 2])
    assert mask.valid_tokens() == []
    assert mask.eok_allowed


def test_is_member(shopping):
    _, s, idx = shopping
    assert is_member(idx, [USED, SHIRTS])
    assert not is_member(idx, [])
    assert not is_member(idx, [USED])
    assert not is_member(idx, [USED, SOCCER, SHOES, SHOES])


def test_is_member_matches_set_lookup():
    rng = np.random.default_rng(2)
    s = random_keywords(rng, 4, 60, 6)
    idx = build_index(s)
    for _ in range(500):
        seq = tuple(rng.integers(0, 4, size=rng.integers(0, 7)).tolist())
        assert is_member(idx, seq) == (seq in s)


def test_mask_format(shopping):
    _, _, idx = shopping
    assert ppv_verify(idx, [USED], [SOCCER, SHIRTS, SHOES]).format([0, 3, 4]) == "0:1 3:1 4:0 eok:0"


def test_prefix_too_long(shopping):
    _, _, idx = shopping
    with pytest.raises(PrefixTooLongError):
        ppv_verify(idx, [USED, SOCCER, SHOES], [GLOVES])


def test_bad_candidates(shopping):
    _, _, idx = shopping
    with pytest.raises(UsageError):
        ppv_verify(idx, [], [1, 1])
    with pytest.raises(TokenOutOfRangeError):
        ppv_verify(idx, [], [5])


def test_non_prefix_free_trie():
    s = ConstraintSet.from_sequences([(1,), (1, 2)], Vocabulary(3))
    mask = trie_verify(trie_build(s), [1], [0, 1, 2])
    assert mask.eok_allowed
    assert mask.valid_tokens() == [2]
    assert ppv_verify(build_index(s), [1], [0, 1, 2]) == mask


def random_query(rng, s, idx, vocab_size):
    keywords = s.sorted()
    if rng.random() < 0.7:
        keyword = keywords[rng.integers(0, len(keywords))]
        prefix = keyword[: rng.integers(0, len(keyword))]
    else:
        prefix = tuple(rng.integers(0, vocab_size, size=rng.integers(0, idx.max_len)).tolist())
    n = int(rng.integers(0, vocab_size + 1))
    candidates = rng.choice(vocab_size, size=n, replace=False)
    return prefix, candidates


def check_equivalence(n_cases, seed):
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        if case % 20 == 0:
            vocab_size = int(rng.integers(2, 65))
            s = random_keywords(rng, vocab_size, int(rng.integers(1, 513)), int(rng.integers(1, 9)))
            trie = trie_build(s)
            indexes = [build_index(s, get_bucket_policy(p)) for p in ("pow2", "single")]
        idx = indexes[0]
        prefix, candidates = random_query(rng, s, idx, vocab_size)
        expected = trie_verify(trie, prefix, candidates)
        for idx in indexes:
            assert ppv_verify(idx, prefix, candidates) == expected
        assert ppv_verify(indexes[0], prefix, candidates, comparison="full") == expected


def test_ppv_matches_trie():
    check_equivalence(1000, 41)


@pytest.mark.slow
def test_ppv_matches_trie_full():
    check_equivalence(10000, 43)


def test_monotone_restriction():
    rng = np.random.default_rng(8)
    s = random_keywords(rng, 10, 80, 5)
    idx = build_index(s)
    for _ in range(200):
        prefix, candidates = random_query(rng, s, idx, 10)
        subset = candidates[: len(candidates) // 2]
        assert ppv_verify(idx, prefix, subset) == ppv_verify(idx, prefix, candidates).restrict(subset)


def test_never_dead_end():
    rng = np.random.default_rng(12)
    for _ in range(20):
        s = random_keywords(rng, 5, int(rng.integers(1, 40)), 5)
        idx = build_index(s)
        stack = [()]
        while stack:
            prefix = stack.pop()
            if len(prefix) >= idx.max_len:
                assert is_member(idx, prefix)
                continue
            mask = full_valid_set(idx, prefix)
            assert mask.tokens.any() or mask.eok_allowed
            stack.extend(prefix + (t,) for t in mask.valid_tokens())


def test_comparison_count_bound():
    rng = np.random.default_rng(19)
    s = random_keywords(rng, 50, 400, 10)
    idx = build_index(s)
    for _ in range(100):
        prefix, candidates = random_query(rng, s, idx, 50)
        counter = ComparisonCounter()
        ppv_verify(idx, prefix, candidates, counter)
        assert counter.comparisons <= len(candidates) * search_cost_bound(idx, len(prefix))
        assert counter.queries == 1


def test_batch_keeps_input_order():
    rng = np.random.default_rng(4)
    s = random_keywords(rng, 12, 100, 6)
    idx = build_index(s)
    queries = [random_query(rng, s, idx, 12) for _ in range(64)]
    sequential = [ppv_verify(idx, p, c) for p, c in queries]
    counter = ComparisonCounter()
    assert ppv_verify_batch(idx, queries, workers=4, counter=counter) == sequential
    assert counter.queries == 64


def test_trie_json_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    s = random_keywords(rng, 8, 120, 7)
    trie = trie_build(s)
    path = tmp_path / "trie.json"
    save_trie(trie, path)
    loaded = load_trie(path)
    assert (loaded.size, loaded.max_len) == (trie.size, trie.max_len)
    for _ in range(200):
        prefix, candidates = random_query(rng, s, build_index(s), 8)
        assert trie_verify(loaded, prefix, candidates) == trie_verify(trie, prefix, candidates)


def test_mask_helpers():
    mask = Mask.from_tokens(4, [1, 3], eok_allowed=True)
    assert mask.restrict([0, 1]) == Mask.from_tokens(4, [1], eok_allowed=True)
    assert Mask.empty(4).valid_tokens() == []
