"""Exhaustive conditional-probability tables, the model the exact oracles use.

Table file format::

    vocab=<n> maxlen=<m> [mode=<eok|prefixfree>]
    <prefix tokens space-separated>|<probs space-separated>|<eok_prob>

The root distribution has an empty prefix field.
"""

import logging
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np

from core.distribution import TokenDistribution
from core.errors import DomainError, InvalidDistributionError, KeywordParseError
from core.tokens import TokenSeq, Vocabulary, format_tokens
from corpus.constraint_set import ConstraintSet
from models.base import LanguageModel, TerminationMode
from models.seeded import SeededRandomModel

logger = logging.getLogger(__name__)


class TabularModel(LanguageModel):
    """A model given by an explicit table of per-prefix distributions.

    Args:
        vocab: Token vocabulary.
        max_len: Distributions exist for prefixes shorter than this.
        table: Stored distributions keyed by prefix tuple.
        fallback: Generator for prefixes missing from ``table``; results are
            memoized. Without one, missing prefixes terminate (EOK = 1).
        mode: Termination convention the table was written for. ``None``
            leaves the choice to the caller.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        max_len: int,
        table: Optional[Dict[TokenSeq, TokenDistribution]] = None,
        fallback: Optional[LanguageModel] = None,
        mode: Optional[TerminationMode] = None,
    ):
        super().__init__(vocab, max_len)
        self.table: Dict[TokenSeq, TokenDistribution] = dict(table or {})
        self.fallback = fallback
        self.mode = TerminationMode.parse(mode) if mode is not None else None
        for prefix, dist in self.table.items():
            if dist.vocab_size != vocab.vocab_size:
                raise InvalidDistributionError(f"distribution for {prefix} has wrong size")
        self._terminal = TokenDistribution(np.zeros(vocab.vocab_size), 1.0)

    @classmethod
    def random(
        cls, vocab_size: int, max_len: int, seed: int, concentration: float = 1.0,
        mode: Optional[TerminationMode] = None,
    ) -> "TabularModel":
        """A table materialized lazily from a seeded random generator."""
        generator = SeededRandomModel(vocab_size, max_len, seed, concentration)
        return cls(generator.vocab, max_len, fallback=generator, mode=mode)

    def base_distribution(self, prefix: TokenSeq) -> TokenDistribution:
        dist = self.table.get(prefix)
        if dist is None:
            if self.fallback is None:
                return self._terminal
            dist = self.fallback.base_distribution(prefix)
            self.table[prefix] = dist
        return dist

    def reachable_prefixes(self) -> Iterator[Tuple[TokenSeq, float]]:
        """Every prefix with positive probability, paired with that probability."""
        stack = [((), 1.0)]
        while stack:
            prefix, mass = stack.pop()
            yield prefix, mass
            if len(prefix) + 1 >= self.max_len:
                continue
            dist = self.base_distribution(prefix)
            for token in np.flatnonzero(dist.probs > 0)[::-1]:
                stack.append((prefix + (int(token),), mass * float(dist.probs[token])))

    def total_measure(self) -> float:
        """EOK-weighted mass of complete sequences plus the mass reaching max_len."""
        total = 0.0
        for prefix, mass in self.reachable_prefixes():
            dist = self.base_distribution(prefix)
            total += mass * dist.eok_prob
            if len(prefix) + 1 == self.max_len:
                total += mass * float(dist.probs.sum())
        return total

    def materialize(self) -> "TabularModel":
        """Fill the table for every reachable prefix and drop the fallback."""
        for _ in self.reachable_prefixes():
            pass
        return TabularModel(self.vocab, self.max_len, self.table, None, self.mode)

    def to_lines(self) -> Iterator[str]:
        header = f"vocab={self.vocab_size} maxlen={self.max_len}"
        yield header if self.mode is None else f"{header} mode={self.mode.value}"
        for prefix in sorted(self.table):
            dist = self.table[prefix]
            probs = " ".join(repr(float(p)) for p in dist.probs)
            yield f"{format_tokens(prefix)}|{probs}|{dist.eok_prob!r}"


def parse_table(lines) -> TabularModel:
    """Parse the table text format.

    Raises:
        KeywordParseError: Naming the offending line.
    """
    lines = iter(lines)
    header = next(lines, "").split()
    try:
        fields = dict(item.split("=", 1) for item in header)
        vocab_size, max_len = int(fields["vocab"]), int(fields["maxlen"])
        mode = fields.get("mode")
        mode = TerminationMode.parse(mode) if mode is not None else None
    except (ValueError, KeyError):
        raise KeywordParseError(f"bad table header {' '.join(header)!r}", 1) from None
    vocab = Vocabulary(vocab_size)
    table = {}
    for lineno, raw in enumerate(lines, start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) != 3:
            raise KeywordParseError("expected '<prefix>|<probs>|<eok>'", lineno)
        try:
            prefix = vocab.validate(int(t) for t in parts[0].split())
            probs = [float(p) for p in parts[1].split()]
            eok = float(parts[2])
        except ValueError as e:
            raise KeywordParseError(str(e), lineno) from None
        if len(probs) != vocab_size:
            raise KeywordParseError(f"expected {vocab_size} probabilities, got {len(probs)}", lineno)
        try:
            table[prefix] = TokenDistribution(np.array(probs), eok)
        except InvalidDistributionError as e:
            raise KeywordParseError(str(e), lineno) from None
    return TabularModel(vocab, max_len, table, mode=mode)


def load_table(path: Union[str, Path]) -> TabularModel:
    with open(path, "r") as f:
        model = parse_table(f)
    logger.info(f"Loaded model table with {len(model.table)} prefixes from {path}")
    return model


def save_table(m: TabularModel, path: Union[str, Path]):
    with open(path, "w") as f:
        for line in m.to_lines():
            f.write(line + "\n")


def worst_case_model(p_b: float, eps: float) -> Tuple[TabularModel, ConstraintSet]:
    """Two tokens, length-2 sequences, S = {v1v1, v1v2, v2v1}.

    P(v1v1) = P(v1v2) = (1-p_b)/2, P(v2v1) = p_b*eps, P(v2v2) = p_b*(1-eps),
    and EOK follows every length-2 sequence with probability 1. Token ids are
    v1 = 0 and v2 = 1.

    Raises:
        DomainError: Unless 0 < p_b < 1 and 0 < eps < 1.
    """
    if not 0.0 < p_b < 1.0:
        raise DomainError(f"p_b must lie in (0, 1), got {p_b}")
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    vocab = Vocabulary(2, ("v1", "v2"))
    table = {
        (): TokenDistribution(np.array([1.0 - p_b, p_b]), 0.0),
        (0,): TokenDistribution(np.array([0.5, 0.5]), 0.0),
        (1,): TokenDistribution(np.array([eps, 1.0 - eps]), 0.0),
    }
    model = TabularModel(vocab, 3, table, mode=TerminationMode.EOK)
    constraints = ConstraintSet.from_sequences([(0, 0), (0, 1), (1, 0)], vocab)
    return model, constraints


SHOPPING_WORDS = ("soccer", "used", "gloves", "shirts", "shoes")


def shopping_example(shirts_prob: float = 0.1) -> Tuple[TabularModel, ConstraintSet]:
    """Three product keywords where greedy masking favours the wrong branch.

    Keywords: "soccer gloves", "used shirts", "used soccer shoes". The model
    prefers "soccer" (0.6) but then almost always wants "shoes" (0.9), which
    no keyword allows. ``shirts_prob`` is P(shirts | used).
    """
    vocab = Vocabulary(len(SHOPPING_WORDS), SHOPPING_WORDS)
    soccer, used, gloves, shirts, shoes = range(len(SHOPPING_WORDS))

    def dist(**weights) -> TokenDistribution:
        probs = np.zeros(vocab.vocab_size)
        for word, p in weights.items():
            probs[SHOPPING_WORDS.index(word)] = p
        return TokenDistribution(probs, 0.0)

    table = {
        (): dist(soccer=0.6, used=0.4),
        (soccer,): dist(gloves=0.1, shoes=0.9),
        (used,): dist(soccer=1.0 - shirts_prob, shirts=shirts_prob),
        (used, soccer): dist(gloves=0.1, shoes=0.9),
    }
    model = TabularModel(vocab, 4, table, mode=TerminationMode.PREFIX_FREE)
    constraints = ConstraintSet.from_sequences(
        [(soccer, gloves), (used, shirts), (used, soccer, shoes)], vocab
    )
    return model, constraints
