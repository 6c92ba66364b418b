"""Reference prefix tree: correctness oracle and timing baseline for PPV.

The JSON form is a plain nested mapping, which is how tries are commonly
shipped and is deliberately slow to load.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Sequence, Union

import numpy as np

from core.errors import PrefixTooLongError, TokenOutOfRangeError, UsageError
from corpus.constraint_set import ConstraintSet
from verifier.mask import Mask

logger = logging.getLogger(__name__)


class TrieNode:
    __slots__ = ("children", "terminal")

    def __init__(self):
        self.children: Dict[int, "TrieNode"] = {}
        self.terminal = False


class Trie:
    def __init__(self, vocab_size: int):
        self.root = TrieNode()
        self.vocab_size = vocab_size
        self.max_len = 0
        self.size = 0

    def insert(self, seq: Iterable[int]):
        node = self.root
        length = 0
        for token in seq:
            node = node.children.setdefault(int(token), TrieNode())
            length += 1
        if not node.terminal:
            node.terminal = True
            self.size += 1
        self.max_len = max(self.max_len, length)

    def find(self, prefix: Sequence[int]):
        node = self.root
        for token in prefix:
            node = node.children.get(int(token))
            if node is None:
                return None
        return node

    def to_dict(self) -> Dict:
        def encode(node: TrieNode) -> Dict:
            return {
                "terminal": node.terminal,
                "children": {str(t): encode(c) for t, c in sorted(node.children.items())},
            }

        return {"vocab_size": self.vocab_size, "root": encode(self.root)}

    @classmethod
    def from_dict(cls, data: Dict) -> "Trie":
        trie = cls(int(data["vocab_size"]))

        def decode(raw: Dict, depth: int) -> TrieNode:
            node = TrieNode()
            node.terminal = bool(raw["terminal"])
            if node.terminal:
                trie.size += 1
                trie.max_len = max(trie.max_len, depth)
            node.children = {int(t): decode(c, depth + 1) for t, c in raw["children"].items()}
            return node

        trie.root = decode(data["root"], 0)
        return trie


def trie_build(s: ConstraintSet) -> Trie:
    trie = Trie(s.vocab.vocab_size)
    for seq in s.sequences:
        trie.insert(seq)
    return trie


def trie_verify(t: Trie, prefix: Sequence[int], candidates: Sequence[int]) -> Mask:
    """Same contract as ``ppv_verify``, answered by walking the tree."""
    if len(prefix) >= t.max_len:
        raise PrefixTooLongError(
            f"prefix of length {len(prefix)} cannot be extended within keywords of length <= {t.max_len}"
        )
    candidates = [int(c) for c in candidates]
    if len(set(candidates)) != len(candidates):
        raise UsageError("candidate tokens must be distinct")
    if any(c < 0 or c >= t.vocab_size for c in candidates):
        raise TokenOutOfRangeError(f"candidate token outside vocabulary of size {t.vocab_size}")
    tokens = np.zeros(t.vocab_size, dtype=bool)
    node = t.find(prefix)
    if node is None:
        return Mask(tokens, False)
    for c in candidates:
        if c in node.children:
            tokens[c] = True
    return Mask(tokens, node.terminal)


def save_trie(t: Trie, path: Union[str, Path]):
    with open(path, "w") as f:
        json.dump(t.to_dict(), f)
    logger.info(f"Saved trie with {t.size} keywords to {path}")


def load_trie(path: Union[str, Path]) -> Trie:
    with open(path, "r") as f:
        trie = Trie.from_dict(json.load(f))
    logger.info(f"Loaded trie with {trie.size} keywords from {path}")
    return trie
