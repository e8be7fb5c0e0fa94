"""Synthetic corpus generator.

A small Spanish-flavored grammar produces sentences with four phrase
classes and eight relation bindings of varying difficulty: lexically
anchored easy relations (is-a, same-as, in-place), structural ones
(subject/target around a verb), and one deliberately hard, rare relation
(entails) that shares its verb anchor with causes and differs only by a
single adverb. Multiword phrases exercise the span-joining rules;
adjacent single-word phrases in enumerations exercise the split rule;
noise tokens land only in the gaps between template parts, never inside
a phrase.
"""

from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    AnnotatedCorpus,
    KeyPhrase,
    RelationInstance,
    Sentence,
    Token,
    relation_by_name,
)
from .errors import GenerationError


def _lit(*tokens):
    return {"kind": "lit", "tokens": tuple(tokens)}


def _slot(name, pool):
    return {"kind": "slot", "name": name, "pool": pool}


@dataclass(frozen=True)
class SentenceTemplate:
    name: str
    weight: float
    parts: tuple  # _lit / _slot dicts
    relations: tuple  # (relation_name, source_slot, target_slot)


@dataclass
class SynthGrammar:
    """Lexicons, templates and noise settings for corpus generation."""

    lexicons: dict  # pool name -> tuple of phrases; phrase = ((word, pos), ...)
    pool_class: dict  # pool name -> class_id 1..4
    templates: tuple
    noise_words: tuple  # (word, pos)
    noise_rate: float = 0.1

    def validate(self):
        if not (0.0 <= self.noise_rate < 1.0):
            raise GenerationError(f"noise rate {self.noise_rate} outside [0, 1)")
        for pool, phrases in self.lexicons.items():
            if not phrases:
                raise GenerationError(f"empty lexicon {pool!r}")
            if pool not in self.pool_class:
                raise GenerationError(f"pool {pool!r} has no phrase class")
            if not 1 <= self.pool_class[pool] <= 4:
                raise GenerationError(f"pool {pool!r} class outside 1..4")
        for t in self.templates:
            if t.weight <= 0:
                raise GenerationError(f"template {t.name} weight must be positive")
            slots = {}
            for part in t.parts:
                if part["kind"] == "slot":
                    pool = part["pool"]
                    if pool not in self.lexicons:
                        raise GenerationError(
                            f"template {t.name} references unknown pool {pool!r}"
                        )
                    slots[part["name"]] = pool
                    # distinct phrases are drawn per sentence without replacement
                    uses = sum(
                        1 for p in t.parts if p["kind"] == "slot" and p["pool"] == pool
                    )
                    if uses > len(self.lexicons[pool]):
                        raise GenerationError(
                            f"template {t.name} needs {uses} distinct phrases "
                            f"from pool {pool!r} of size {len(self.lexicons[pool])}"
                        )
            for rel, src, tgt in t.relations:
                relation_by_name(rel)  # unknown name raises KeyError
                for slot in (src, tgt):
                    if slot not in slots:
                        raise GenerationError(
                            f"template {t.name} relation {rel} uses unknown slot {slot!r}"
                        )
                if src == tgt:
                    raise GenerationError(
                        f"template {t.name} relation {rel} is a self-relation"
                    )
        return self


def _phrases(*items):
    """Each item: 'word' or 'word/POS' or 'multi word phrase' with per-word tags."""
    out = []
    for words, tags in items:
        ws = words.split()
        ts = tags.split()
        out.append(tuple(zip(ws, ts)))
    return tuple(out)


def default_grammar(noise_rate=0.1):
    """The grammar used by the synthetic end-to-end runs."""
    conditions = _phrases(
        ("gripe", "NOUN"), ("tos", "NOUN"), ("fiebre", "NOUN"), ("asma", "NOUN"),
        ("anemia", "NOUN"), ("artritis", "NOUN"), ("migraña", "NOUN"),
        ("acidez", "NOUN"), ("insomnio", "NOUN"), ("mareo", "NOUN"),
        ("fatiga", "NOUN"), ("bronquitis", "NOUN"), ("sinusitis", "NOUN"),
        ("gastritis", "NOUN"), ("alergia", "NOUN"), ("náusea", "NOUN"),
        ("dolor de cabeza", "NOUN ADP NOUN"),
        ("dolor de espalda", "NOUN ADP NOUN"),
        ("dolor de pecho", "NOUN ADP NOUN"),
        ("infección de garganta", "NOUN ADP NOUN"),
        ("presión arterial", "NOUN ADJ"),
        ("congestión nasal", "NOUN ADJ"),
    )
    parts = _phrases(
        ("pecho", "NOUN"), ("abdomen", "NOUN"), ("garganta", "NOUN"),
        ("cabeza", "NOUN"), ("espalda", "NOUN"), ("estómago", "NOUN"),
        ("cuello", "NOUN"), ("hombro", "NOUN"),
    )
    generics = _phrases(
        ("enfermedad", "NOUN"), ("afección", "NOUN"), ("dolencia", "NOUN"),
        ("trastorno", "NOUN"), ("síntoma", "NOUN"),
    )
    treatments = _phrases(
        ("aspirina", "NOUN"), ("paracetamol", "NOUN"), ("ibuprofeno", "NOUN"),
        ("amoxicilina", "NOUN"), ("insulina", "NOUN"), ("cortisona", "NOUN"),
        ("morfina", "NOUN"), ("penicilina", "NOUN"), ("antibiótico", "NOUN"),
        ("analgésico", "NOUN"), ("antihistamínico", "NOUN"),
        ("jarabe para el resfriado", "NOUN ADP DET NOUN"),
        ("vacuna contra el sarampión", "NOUN ADP DET NOUN"),
    )
    treat_verbs = _phrases(
        ("alivia", "VERB"), ("trata", "VERB"), ("reduce", "VERB"),
        ("mejora", "VERB"), ("previene", "VERB"), ("cura", "VERB"),
        ("controla", "VERB"), ("combate", "VERB"),
    )
    cause_verbs = _phrases(
        ("causa", "VERB"), ("provoca", "VERB"), ("agrava", "VERB"),
        ("genera", "VERB"),
    )
    qualifiers = _phrases(
        ("crónica", "ADJ"), ("aguda", "ADJ"), ("leve", "ADJ"),
        ("severa", "ADJ"), ("persistente", "ADJ"), ("frecuente", "ADJ"),
        ("intensa", "ADJ"), ("recurrente", "ADJ"),
    )

    la = _lit(("la", "DET"))
    el = _lit(("el", "DET"))
    dot = _lit((".", "PUNCT"))
    templates = (
        # no determiner before the subject: determiners must touch treatment
        # vocabulary only inside multiword treatments, otherwise the gold
        # labels contradict themselves on the DET-next-to-treatment pattern
        SentenceTemplate(
            name="treat",
            weight=4.0,
            parts=(_slot("t", "treat"), _slot("v", "verb_t"), la,
                   _slot("c", "cond"), dot),
            relations=(("subject", "v", "t"), ("target", "v", "c")),
        ),
        SentenceTemplate(
            name="cause",
            weight=2.0,
            parts=(la, _slot("a", "cond"), _slot("v", "verb_c"),
                   _slot("b", "cond"), dot),
            relations=(("causes", "a", "b"),),
        ),
        SentenceTemplate(
            name="isa",
            weight=3.0,
            parts=(la, _slot("c", "cond"), _lit(("es", "VERB"), ("una", "DET")),
                   _slot("g", "generic"), _slot("q", "qual"), dot),
            relations=(("is-a", "c", "g"), ("has-property", "c", "q")),
        ),
        SentenceTemplate(
            name="place",
            weight=2.0,
            parts=(el, _lit(("paciente", "NOUN"), ("presenta", "VERB")),
                   _slot("c", "cond"), _lit(("en", "ADP"), ("el", "DET")),
                   _slot("p", "part"), dot),
            relations=(("in-place", "c", "p"),),
        ),
        SentenceTemplate(
            name="same",
            weight=2.0,
            parts=(la, _slot("a", "cond"),
                   _lit((",", "PUNCT"), ("también", "ADV"), ("llamada", "VERB")),
                   _slot("b", "cond"),
                   _lit((",", "PUNCT"), ("es", "VERB"), ("común", "ADJ")), dot),
            relations=(("same-as", "a", "b"),),
        ),
        SentenceTemplate(
            name="enum",
            weight=3.0,
            parts=(el, _lit(("paciente", "NOUN"), ("refiere", "VERB")),
                   _slot("a", "cond"), _slot("b", "cond"), _slot("c", "cond"), dot),
            relations=(),
        ),
        SentenceTemplate(
            name="entail",
            weight=1.0,
            parts=(la, _slot("a", "cond"), _slot("v", "verb_c"),
                   _lit(("además", "ADV")), _slot("b", "cond"), dot),
            relations=(("entails", "a", "b"),),
        ),
    )
    return SynthGrammar(
        lexicons={
            "cond": conditions,
            "part": parts,
            "generic": generics,
            "treat": treatments,
            "verb_t": treat_verbs,
            "verb_c": cause_verbs,
            "qual": qualifiers,
        },
        pool_class={
            "cond": 1, "part": 1, "generic": 1,
            "treat": 2,
            "verb_t": 3, "verb_c": 3,
            "qual": 4,
        },
        templates=templates,
        noise_words=(
            ("hoy", "ADV"), ("ayer", "ADV"), ("ahora", "ADV"), ("luego", "ADV"),
            ("pronto", "ADV"), ("aquí", "ADV"), ("claramente", "ADV"),
            ("generalmente", "ADV"),
        ),
        noise_rate=noise_rate,
    ).validate()


def _draw_sentence(grammar, rng):
    """One sentence draft: token list plus slot spans and relation bindings."""
    weights = np.array([t.weight for t in grammar.templates])
    template = grammar.templates[rng.choice(len(weights), p=weights / weights.sum())]
    # draw distinct phrases for all slots of each pool
    picks = {}
    by_pool = {}
    for part in template.parts:
        if part["kind"] == "slot":
            by_pool.setdefault(part["pool"], []).append(part["name"])
    for pool, names in by_pool.items():
        idx = rng.choice(len(grammar.lexicons[pool]), size=len(names), replace=False)
        for name, i in zip(names, idx):
            picks[name] = (pool, grammar.lexicons[pool][int(i)])

    tokens = []  # (word, pos)
    spans = {}  # slot name -> (class_id, tok_start, tok_end)
    for g, part in enumerate(template.parts):
        if g > 0 and grammar.noise_words and rng.random() < grammar.noise_rate:
            w, p = grammar.noise_words[rng.choice(len(grammar.noise_words))]
            tokens.append((w, p))
        if part["kind"] == "lit":
            tokens.extend(part["tokens"])
        else:
            pool, phrase = picks[part["name"]]
            spans[part["name"]] = (
                grammar.pool_class[pool],
                len(tokens),
                len(tokens) + len(phrase),
            )
            tokens.extend(phrase)
    return tokens, spans, template.relations


def _render(tokens, sentence_id, char_base):
    """Attach char offsets: space-separated words, punctuation glued left."""
    text = ""
    out = []
    for word, pos in tokens:
        sep = "" if (not text or pos == "PUNCT") else " "
        start = char_base + len(text) + len(sep)
        text += sep + word
        out.append(Token(word, pos, start, start + len(word)))
    return Sentence(sentence_id, text, char_base, out)


def generate_synthetic(grammar, seed, n_train=600, n_dev=100, n_test=100):
    """Three disjoint AnnotatedCorpus splits, deterministic by seed."""
    grammar.validate()
    rng = np.random.default_rng(seed)
    total = n_train + n_dev + n_test
    drafts = []
    seen = set()
    rejects = 0
    while len(drafts) < total:
        tokens, spans, rels = _draw_sentence(grammar, rng)
        key = " ".join(w for w, _ in tokens)
        if key in seen:
            rejects += 1
            if rejects > 200:
                raise GenerationError(
                    f"could not draw {total} distinct sentences "
                    f"(stuck after {len(drafts)})"
                )
            continue
        rejects = 0
        seen.add(key)
        drafts.append((tokens, spans, rels))

    corpora = []
    cursor = 0
    for size in (n_train, n_dev, n_test):
        corpus = AnnotatedCorpus()
        next_phrase = 1
        char_base = 0
        for sid in range(size):
            tokens, spans, rels = drafts[cursor]
            cursor += 1
            sentence = _render(tokens, sid, char_base)
            char_base = sentence.end + 1  # newline between sentences
            corpus.sentences.append(sentence)
            slot_to_id = {}
            for name, (class_id, t0, t1) in spans.items():
                kp = KeyPhrase(
                    id=next_phrase,
                    sentence_id=sid,
                    class_id=class_id,
                    token_span=(t0, t1),
                    char_span=sentence.token_span_to_char(t0, t1),
                )
                next_phrase += 1
                slot_to_id[name] = kp.id
                corpus.kphrases.append(kp)
            for rel, src, tgt in rels:
                corpus.relations.append(
                    RelationInstance(
                        relation=relation_by_name(rel),
                        source=slot_to_id[src],
                        target=slot_to_id[tgt],
                        sentence_id=sid,
                    )
                )
        corpora.append(corpus.validate())
    return tuple(corpora)
