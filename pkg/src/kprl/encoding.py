"""Token feature encoding: word vectors, PoS one-hots, task feature layouts.

Word vectors come from an optional word2vec-style text file; any word not
in the table falls back to a deterministic subword hash — character
n-grams of the boundary-marked word are hashed into a fixed bucket space
of pseudo-random unit vectors and averaged. Similar surface forms share
n-grams and therefore land near each other, which is all the downstream
taggers need from out-of-vocabulary words.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ShapeError

DEFAULT_DIM = 50
DEFAULT_BUCKETS = 50_000
DEFAULT_NGRAM_RANGE = (3, 5)
DEFAULT_HASH_SEED = 2024


@dataclass
class EmbeddingTable:
    """Word → vector lookup that never fails."""

    dim: int = DEFAULT_DIM
    entries: dict = field(default_factory=dict)
    hash_buckets: int = DEFAULT_BUCKETS
    ngram_range: tuple = DEFAULT_NGRAM_RANGE
    hash_seed: int = DEFAULT_HASH_SEED
    _bucket_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for w, v in self.entries.items():
            if len(v) != self.dim:
                raise ShapeError(f"vector for {w!r} has length {len(v)} != dim {self.dim}")

    def _ngrams(self, word):
        marked = f"<{word}>"
        lo, hi = self.ngram_range
        return [
            marked[i : i + n]
            for n in range(lo, hi + 1)
            for i in range(len(marked) - n + 1)
        ]

    def _bucket_vector(self, gram):
        digest = hashlib.blake2b(
            gram.encode("utf-8"), digest_size=8, salt=b"kprl-emb"
        ).digest()
        bucket = int.from_bytes(digest, "little") % self.hash_buckets
        vec = self._bucket_cache.get(bucket)
        if vec is None:
            rng = np.random.default_rng((self.hash_seed, bucket))
            vec = rng.normal(size=self.dim)
            vec /= np.linalg.norm(vec)
            self._bucket_cache[bucket] = vec
        return vec

    def embed(self, word):
        """Stored vector if known, else the mean of hashed n-gram vectors."""
        hit = self.entries.get(word)
        if hit is not None:
            return np.asarray(hit, dtype=np.float64)
        grams = self._ngrams(word)
        if not grams:
            return np.zeros(self.dim)
        return np.mean([self._bucket_vector(g) for g in grams], axis=0)


def embed(word, table):
    return table.embed(word)


def load_embedding_file(path, dim=DEFAULT_DIM):
    """Read a word2vec-text file ("<count> <dim>" header, one word per row).

    ``path=None`` (or empty) yields an empty table of dimension ``dim``
    whose every lookup goes through the subword fallback.
    """
    if not path:
        return EmbeddingTable(dim=dim)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty embedding file", path=path, line=1)
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError(f"malformed header {lines[0]!r}", path=path, line=1)
    try:
        count, file_dim = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(f"malformed header {lines[0]!r}", path=path, line=1) from None
    if count < 0 or file_dim <= 0:
        raise ParseError("header counts must be positive", path=path, line=1)
    entries = {}
    for ln, row in enumerate(lines[1:], start=2):
        if not row.strip():
            continue
        parts = row.split()
        if len(parts) != file_dim + 1:
            raise ParseError(
                f"row has {len(parts) - 1} values, expected {file_dim}",
                path=path,
                line=ln,
            )
        try:
            vec = np.array([float(x) for x in parts[1:]])
        except ValueError:
            raise ParseError("non-numeric vector entry", path=path, line=ln) from None
        entries[parts[0]] = vec
    if len(entries) != count:
        raise ParseError(
            f"header declared {count} words, file has {len(entries)}",
            path=path,
            line=len(lines),
        )
    return EmbeddingTable(dim=file_dim, entries=entries)


@dataclass
class PosTagSet:
    """Ordered PoS inventory; one-hot width is tag count + 1 (unknown slot)."""

    tags: tuple

    def __post_init__(self):
        self.tags = tuple(self.tags)
        if len(set(self.tags)) != len(self.tags):
            raise ValueError("duplicate PoS tags")
        self.index = {t: i for i, t in enumerate(self.tags)}

    @property
    def width(self):
        return len(self.tags) + 1

    def one_hot(self, tag):
        v = np.zeros(self.width)
        v[self.index.get(tag, len(self.tags))] = 1.0
        return v

    @classmethod
    def from_corpus(cls, corpus):
        tags = sorted({t.pos for s in corpus.sentences for t in s.tokens})
        return cls(tuple(tags))


@dataclass(frozen=True)
class FeatureConfigB:
    """Fixed widths of the relation-model feature block."""

    kind_onehot_width: int = 5  # phrase classes 1..4 plus "none"
    source_flag_width: int = 1

    def total(self, dim, pos_width):
        return dim + pos_width + self.kind_onehot_width + self.source_flag_width


def assemble_features_a(words, pos, table, tagset):
    """Per-token concat(embedding, PoS one-hot) for the phrase taggers."""
    if len(words) != len(pos):
        raise ShapeError(f"{len(words)} tokens vs {len(pos)} PoS tags")
    if not words:
        return np.zeros((0, table.dim + tagset.width))
    rows = [np.concatenate([table.embed(w), tagset.one_hot(t)]) for w, t in zip(words, pos)]
    return np.array(rows)


def assemble_features_b(words, pos, kind_mask, source_mask, table, tagset,
                        config=FeatureConfigB()):
    """Relation-model features: word, PoS, phrase-kind one-hot, source bit."""
    n = len(words)
    if not (len(pos) == len(kind_mask) == len(source_mask) == n):
        raise ShapeError("words, PoS and masks must be aligned")
    kind_mask = np.asarray(kind_mask, dtype=int)
    if kind_mask.size and (kind_mask.min() < 0 or kind_mask.max() >= config.kind_onehot_width):
        raise ValueError(
            f"phrase kind values must lie in 0..{config.kind_onehot_width - 1}"
        )
    if n == 0:
        return np.zeros((0, config.total(table.dim, tagset.width)))
    base = assemble_features_a(words, pos, table, tagset)
    kinds = np.zeros((n, config.kind_onehot_width))
    kinds[np.arange(n), kind_mask] = 1.0
    source = np.asarray(source_mask, dtype=np.float64).reshape(n, 1)
    return np.concatenate([base, kinds, source], axis=1)
