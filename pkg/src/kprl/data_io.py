"""Corpus and model persistence.

Three file shapes:
  * a text file, one sentence per line (offsets are global into this file);
  * a standoff annotation file: ``T<id>\\t<Label> <start> <end>\\t<surface>``
    lines for phrases, ``R<id>\\t<rel> Arg1:T<i> Arg2:T<j>`` for relations;
  * an optional token-column file: ``token\\tPoS\\tstart\\tend`` per line,
    blank-line separated sentences (when absent, the built-in tokenizer
    runs and PoS defaults to "X").

Models are stored in a small binary container: magic, version, a JSON
metadata blob, then named float64 little-endian tensors with explicit
shapes, so a save/load round trip is bit-identical.
"""

import json
import re
import struct
from pathlib import Path

import numpy as np

from .corpus import (
    AnnotatedCorpus,
    DEFAULT_RELATIONS,
    KeyPhrase,
    RelationInstance,
    RelationType,
    Sentence,
    Token,
)
from .errors import ParseError
from .synth import SynthGrammar, default_grammar, generate_synthetic  # noqa: F401

DEFAULT_CLASS_LABELS = ("C1", "C2", "C3", "C4")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

MAGIC = b"KPRL"
FORMAT_VERSION = 1


def tokenize(text, offset=0):
    """Split into word/punctuation tokens with [start, end) char offsets."""
    return [
        (m.group(), offset + m.start(), offset + m.end())
        for m in _TOKEN_RE.finditer(text)
    ]


# ---------------------------------------------------------------------------
# Token-column files
# ---------------------------------------------------------------------------


def parse_token_columns(path):
    """Blank-line separated sentences of ``token PoS start end`` rows."""
    sentences = []
    current = []
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh.read().splitlines(), start=1):
            if not raw.strip():
                if current:
                    sentences.append(current)
                    current = []
                continue
            cols = raw.split("\t")
            if len(cols) != 4:
                raise ParseError(
                    f"expected 4 tab-separated columns, got {len(cols)}",
                    path=path,
                    line=ln,
                )
            word, pos = cols[0], cols[1]
            try:
                start, end = int(cols[2]), int(cols[3])
            except ValueError:
                raise ParseError("offsets must be integers", path=path, line=ln) from None
            if end <= start:
                raise ParseError(f"empty span [{start},{end})", path=path, line=ln)
            if current and start < current[-1][3]:
                raise ParseError(
                    "token offsets must be nondecreasing within a sentence",
                    path=path,
                    line=ln,
                )
            current.append((word, pos, start, end))
    if current:
        sentences.append(current)
    return sentences


def write_token_columns(corpus, path):
    lines = []
    for s in corpus.sentences:
        for t in s.tokens:
            lines.append(f"{t.text}\t{t.pos}\t{t.start}\t{t.end}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Standoff annotations
# ---------------------------------------------------------------------------


def _build_sentences(text, tokens_path):
    """Sentence objects (newline-separated text) with tokens attached."""
    lines = text.split("\n")
    sentences = []
    offset = 0
    spans = []
    for line in lines:
        if line:
            spans.append((offset, line))
        offset += len(line) + 1
    if tokens_path is not None:
        token_sents = parse_token_columns(tokens_path)
        if len(token_sents) != len(spans):
            raise ParseError(
                f"token file has {len(token_sents)} sentences, text has {len(spans)}",
                path=tokens_path,
            )
    for sid, (start, line) in enumerate(spans):
        if tokens_path is not None:
            toks = []
            for word, pos, t0, t1 in token_sents[sid]:
                if text[t0:t1] != word:
                    raise ParseError(
                        f"token {word!r} does not match text slice {text[t0:t1]!r}",
                        path=tokens_path,
                    )
                toks.append(Token(word, pos, t0, t1))
        else:
            toks = [Token(w, "X", a, b) for w, a, b in tokenize(line, start)]
        sentences.append(Sentence(sid, line, start, toks))
    return sentences


def parse_standoff(text_path, ann_path, tokens_path=None,
                   class_labels=DEFAULT_CLASS_LABELS, relations=DEFAULT_RELATIONS,
                   base_kphrases=None):
    """Read a text + annotation file pair into an AnnotatedCorpus.

    ``base_kphrases`` pre-registers phrases the annotation file may
    reference without declaring (used to read relation-only prediction
    files against the gold phrase inventory of the same text).
    """
    text = Path(text_path).read_text(encoding="utf-8")
    sentences = _build_sentences(text, tokens_path)
    label_to_class = {lab: i + 1 for i, lab in enumerate(class_labels)}
    registry = list(relations)

    corpus = AnnotatedCorpus(sentences=sentences)
    phrase_ids = set()
    for k in base_kphrases or ():
        phrase_ids.add(k.id)
        corpus.kphrases.append(k)
    with open(ann_path, encoding="utf-8") as fh:
        ann_lines = fh.read().splitlines()
    pending_relations = []
    for ln, raw in enumerate(ann_lines, start=1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        tag = fields[0]
        if tag.startswith("T"):
            if len(fields) != 3:
                raise ParseError("T-line needs 3 tab fields", path=ann_path, line=ln)
            try:
                pid = int(tag[1:])
            except ValueError:
                raise ParseError(f"bad phrase id {tag!r}", path=ann_path, line=ln) from None
            if pid in phrase_ids:
                raise ParseError(f"duplicate phrase id {tag}", path=ann_path, line=ln)
            body = fields[1].split()
            if len(body) != 3:
                raise ParseError(
                    "T-line body must be '<Label> <start> <end>'", path=ann_path, line=ln
                )
            label = body[0]
            if label not in label_to_class:
                raise ParseError(f"unknown class label {label!r}", path=ann_path, line=ln)
            try:
                c0, c1 = int(body[1]), int(body[2])
            except ValueError:
                raise ParseError("offsets must be integers", path=ann_path, line=ln) from None
            if not (0 <= c0 < c1 <= len(text)):
                raise ParseError(
                    f"span [{c0},{c1}) outside text of length {len(text)}",
                    path=ann_path,
                    line=ln,
                )
            if text[c0:c1] != fields[2]:
                raise ParseError(
                    f"surface {fields[2]!r} != text slice {text[c0:c1]!r}",
                    path=ann_path,
                    line=ln,
                )
            home = next(
                (s for s in sentences if s.start <= c0 and c1 <= s.end), None
            )
            if home is None:
                raise ParseError(
                    f"span [{c0},{c1}) does not fit inside one sentence",
                    path=ann_path,
                    line=ln,
                )
            tok_span = home.char_span_to_tokens(c0, c1)
            if tok_span is None:
                raise ParseError(
                    f"span [{c0},{c1}) does not align to token boundaries",
                    path=ann_path,
                    line=ln,
                )
            phrase_ids.add(pid)
            corpus.kphrases.append(
                KeyPhrase(
                    id=pid,
                    sentence_id=home.sentence_id,
                    class_id=label_to_class[label],
                    token_span=tok_span,
                    char_span=(c0, c1),
                )
            )
        elif tag.startswith("R"):
            if len(fields) != 2:
                raise ParseError("R-line needs 2 tab fields", path=ann_path, line=ln)
            m = re.fullmatch(r"(\S+) Arg1:T(\d+) Arg2:T(\d+)", fields[1])
            if m is None:
                raise ParseError(
                    "R-line body must be '<rel> Arg1:T<i> Arg2:T<j>'",
                    path=ann_path,
                    line=ln,
                )
            pending_relations.append((ln, m.group(1), int(m.group(2)), int(m.group(3))))
        else:
            raise ParseError(f"unknown annotation line {raw!r}", path=ann_path, line=ln)

    by_id = {k.id: k for k in corpus.kphrases}
    for ln, name, src, tgt in pending_relations:
        for pid in (src, tgt):
            if pid not in by_id:
                raise ParseError(
                    f"relation references missing phrase T{pid}", path=ann_path, line=ln
                )
        if src == tgt:
            raise ParseError(f"self-relation on T{src}", path=ann_path, line=ln)
        if by_id[src].sentence_id != by_id[tgt].sentence_id:
            raise ParseError(
                f"relation endpoints T{src}, T{tgt} lie in different sentences",
                path=ann_path,
                line=ln,
            )
        rtype = next((r for r in registry if r.name == name), None)
        if rtype is None:
            rtype = RelationType(name, len(registry))
            registry.append(rtype)
        corpus.relations.append(
            RelationInstance(
                relation=rtype,
                source=src,
                target=tgt,
                sentence_id=by_id[src].sentence_id,
            )
        )
    return corpus.validate()


def write_standoff(corpus, text_path, ann_path, class_labels=DEFAULT_CLASS_LABELS,
                   include_phrases=True, include_relations=True):
    """Emit text + annotations; phrase/relation ids are renumbered T1../R1..

    With ``include_phrases=False`` only R-lines are written and they keep
    the corpus's original phrase ids (assumed shared with the reader).
    """
    text = corpus.document_text()
    Path(text_path).write_text(text, encoding="utf-8")
    lines = []
    remap = {}
    if include_phrases:
        for n, k in enumerate(corpus.kphrases, start=1):
            remap[k.id] = n
            c0, c1 = k.char_span
            lines.append(
                f"T{n}\t{class_labels[k.class_id - 1]} {c0} {c1}\t{text[c0:c1]}"
            )
    else:
        remap = {k.id: k.id for k in corpus.kphrases}
    if include_relations:
        for n, r in enumerate(corpus.relations, start=1):
            lines.append(
                f"R{n}\t{r.relation.name} Arg1:T{remap[r.source]} Arg2:T{remap[r.target]}"
            )
    Path(ann_path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_corpus_dir(corpus, directory, class_labels=DEFAULT_CLASS_LABELS,
                     include_phrases=True, include_relations=True):
    """Write text.txt, tokens.tsv and ann.tsv into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_standoff(corpus, d / "text.txt", d / "ann.tsv", class_labels,
                   include_phrases=include_phrases,
                   include_relations=include_relations)
    write_token_columns(corpus, d / "tokens.tsv")
    return d


def read_corpus_dir(directory, class_labels=DEFAULT_CLASS_LABELS,
                    relations=DEFAULT_RELATIONS, base_kphrases=None):
    d = Path(directory)
    tokens = d / "tokens.tsv"
    return parse_standoff(
        d / "text.txt",
        d / "ann.tsv",
        tokens_path=tokens if tokens.exists() else None,
        class_labels=class_labels,
        relations=relations,
        base_kphrases=base_kphrases,
    )


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------


def save_model(metadata, tensors, path):
    """Write a metadata dict plus named float64 tensors to ``path``."""
    blob = json.dumps(metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            # note: ascontiguousarray would silently promote 0-d to 1-d
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError(f"truncated file while reading {what}", path=path)
    return buf


def load_model(path):
    """Read back ``(metadata, tensors)``; bit-identical to what was saved."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path, "magic") != MAGIC:
            raise ParseError("bad magic, not a model container", path=path)
        version = struct.unpack("<I", _read_exact(fh, 4, path, "version"))[0]
        if version != FORMAT_VERSION:
            raise ParseError(f"unknown container version {version}", path=path)
        blob_len = struct.unpack("<Q", _read_exact(fh, 8, path, "metadata length"))[0]
        metadata = json.loads(_read_exact(fh, blob_len, path, "metadata"))
        count = struct.unpack("<I", _read_exact(fh, 4, path, "tensor count"))[0]
        tensors = {}
        for _ in range(count):
            name_len = struct.unpack("<H", _read_exact(fh, 2, path, "tensor name"))[0]
            name = _read_exact(fh, name_len, path, "tensor name").decode("utf-8")
            ndim = struct.unpack("<B", _read_exact(fh, 1, path, "tensor rank"))[0]
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, path, "tensor shape"))[0]
                for _ in range(ndim)
            )
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
            data = _read_exact(fh, n_bytes, path, f"tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise ParseError("trailing bytes after last tensor", path=path)
    return metadata, tensors
