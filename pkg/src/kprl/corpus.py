"""Shared corpus domain types: tokens, sentences, key phrases, relations.

Character offsets are global document offsets (the annotation files
reference one text file whose sentences are newline-separated), so every
span carries both a token view and a character view of the same thing.
"""

from dataclasses import dataclass, field

from .errors import KprlError


@dataclass(frozen=True)
class Token:
    text: str
    pos: str
    start: int  # global char offset, inclusive
    end: int  # global char offset, exclusive


@dataclass
class Sentence:
    sentence_id: int
    text: str
    start: int  # global char offset of the first character
    tokens: list

    @property
    def end(self):
        return self.start + len(self.text)

    def token_span_to_char(self, t0, t1):
        """Char span [start, end) covered by tokens [t0, t1)."""
        if not (0 <= t0 < t1 <= len(self.tokens)):
            raise KprlError(f"token span [{t0},{t1}) outside sentence {self.sentence_id}")
        return self.tokens[t0].start, self.tokens[t1 - 1].end

    def char_span_to_tokens(self, c0, c1):
        """Token index span aligned to char span [c0, c1), or None."""
        starts = [t.start for t in self.tokens]
        ends = [t.end for t in self.tokens]
        if c0 not in starts or c1 not in ends:
            return None
        t0 = starts.index(c0)
        t1 = ends.index(c1) + 1
        return (t0, t1) if t0 < t1 else None

    @property
    def words(self):
        return [t.text for t in self.tokens]

    @property
    def pos_tags(self):
        return [t.pos for t in self.tokens]


@dataclass(frozen=True)
class RelationType:
    name: str
    id: int


# the thirteen relation names, id = list position
RELATION_NAMES = (
    "in-context",
    "subject",
    "target",
    "domain",
    "arg",
    "is-a",
    "in-place",
    "has-property",
    "same-as",
    "in-time",
    "part-of",
    "causes",
    "entails",
)

DEFAULT_RELATIONS = tuple(RelationType(n, i) for i, n in enumerate(RELATION_NAMES))


def relation_by_name(name, relations=DEFAULT_RELATIONS):
    for r in relations:
        if r.name == name:
            return r
    raise KeyError(name)


@dataclass(frozen=True)
class KeyPhrase:
    id: int
    sentence_id: int
    class_id: int  # 1..4
    token_span: tuple  # [start, end) token indices
    char_span: tuple  # [start, end) global char offsets

    def __post_init__(self):
        if self.token_span[0] >= self.token_span[1]:
            raise KprlError(f"empty token span in phrase T{self.id}")
        if self.char_span[0] >= self.char_span[1]:
            raise KprlError(f"empty char span in phrase T{self.id}")


@dataclass(frozen=True)
class RelationInstance:
    relation: RelationType
    source: int  # KeyPhrase id
    target: int  # KeyPhrase id
    sentence_id: int

    def __post_init__(self):
        if self.source == self.target:
            raise KprlError(
                f"self-relation {self.relation.name} on phrase T{self.source}"
            )


@dataclass
class AnnotatedCorpus:
    """Tokenized, PoS-tagged sentences with gold spans and relations."""

    sentences: list = field(default_factory=list)
    kphrases: list = field(default_factory=list)
    relations: list = field(default_factory=list)

    def document_text(self):
        """The text file contents these offsets index into."""
        return "\n".join(s.text for s in self.sentences) + ("\n" if self.sentences else "")

    def kphrase_by_id(self, pid):
        for k in self.kphrases:
            if k.id == pid:
                return k
        raise KeyError(f"T{pid}")

    def kphrases_in(self, sentence_id):
        return [k for k in self.kphrases if k.sentence_id == sentence_id]

    def relations_in(self, sentence_id):
        return [r for r in self.relations if r.sentence_id == sentence_id]

    def class_ids(self):
        return sorted({k.class_id for k in self.kphrases})

    def validate(self):
        """Check every structural invariant; raise KprlError on the first hole."""
        by_id = {}
        sent_by_id = {}
        for s in self.sentences:
            if s.sentence_id in sent_by_id:
                raise KprlError(f"duplicate sentence id {s.sentence_id}")
            sent_by_id[s.sentence_id] = s
            pos = s.start
            for t in s.tokens:
                if not (s.start <= t.start < t.end <= s.end):
                    raise KprlError(
                        f"token '{t.text}' outside sentence {s.sentence_id} bounds"
                    )
                if t.start < pos:
                    raise KprlError(f"tokens out of order in sentence {s.sentence_id}")
                if s.text[t.start - s.start : t.end - s.start] != t.text:
                    raise KprlError(
                        f"token text '{t.text}' does not match sentence slice"
                    )
                pos = t.end
        for k in self.kphrases:
            if k.id in by_id:
                raise KprlError(f"duplicate phrase id T{k.id}")
            by_id[k.id] = k
            s = sent_by_id.get(k.sentence_id)
            if s is None:
                raise KprlError(f"phrase T{k.id} references missing sentence")
            t0, t1 = k.token_span
            if not (0 <= t0 < t1 <= len(s.tokens)):
                raise KprlError(f"phrase T{k.id} token span out of bounds")
            if s.token_span_to_char(t0, t1) != tuple(k.char_span):
                raise KprlError(f"phrase T{k.id} char span misaligned with tokens")
        seen = set()
        for r in self.relations:
            for pid in (r.source, r.target):
                if pid not in by_id:
                    raise KprlError(
                        f"relation {r.relation.name} references missing phrase T{pid}"
                    )
            if by_id[r.source].sentence_id != by_id[r.target].sentence_id:
                raise KprlError(
                    f"relation {r.relation.name} crosses sentences "
                    f"(T{r.source}, T{r.target})"
                )
            if r.sentence_id != by_id[r.source].sentence_id:
                raise KprlError(f"relation sentence id mismatch on T{r.source}")
            key = (r.relation.name, r.source, r.target)
            if key in seen:
                raise KprlError(f"duplicate relation {key}")
            seen.add(key)
        return self
