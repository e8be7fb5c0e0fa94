"""Exact-match scoring for phrases, relations, and the combined pipeline.

A phrase prediction is correct iff its character span and class both match
a distinct gold phrase. A relation prediction is correct iff its name
matches and both endpoint phrases align to the gold pair's phrases by
exact span and class. Scenario-level conventions for empty sets follow
``loss.exact_f1``: empty/empty scores 1, empty against non-empty scores 0.
"""

import json
from collections import Counter
from dataclasses import asdict, dataclass


@dataclass
class Scores:
    precision: float
    recall: float
    f1: float
    correct: int
    spurious: int
    missing: int


def from_counts(correct, spurious, missing):
    pred = correct + spurious
    gold = correct + missing
    if pred == 0 and gold == 0:
        return Scores(1.0, 1.0, 1.0, correct, spurious, missing)
    precision = correct / pred if pred else 0.0
    recall = correct / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(precision, recall, f1, correct, spurious, missing)


def _phrase_key(k):
    return (k.sentence_id, tuple(k.char_span), k.class_id)


def _multiset_counts(gold_keys, pred_keys):
    gold = Counter(gold_keys)
    pred = Counter(pred_keys)
    correct = sum(min(n, pred[key]) for key, n in gold.items())
    return correct, sum(pred.values()) - correct, sum(gold.values()) - correct


def score_task_a(gold_kphrases, pred_kphrases):
    """Exact span+class phrase match with one-to-one pairing."""
    return from_counts(
        *_multiset_counts(
            [_phrase_key(k) for k in gold_kphrases],
            [_phrase_key(k) for k in pred_kphrases],
        )
    )


def _relation_keys(relations, kphrases):
    by_id = {k.id: k for k in kphrases}
    keys = []
    for r in relations:
        src = by_id.get(r.source)
        tgt = by_id.get(r.target)
        if src is None or tgt is None:
            # dangling reference: impossible to align, always spurious/missing
            keys.append((r.relation.name, ("<dangling>", r.source, r.target)))
            continue
        keys.append((r.relation.name, _phrase_key(src), _phrase_key(tgt)))
    return keys


def score_task_b(gold_relations, pred_relations, gold_kphrases, pred_kphrases):
    """Relation triples matched through exact span+class phrase alignment."""
    return from_counts(
        *_multiset_counts(
            _relation_keys(gold_relations, gold_kphrases),
            _relation_keys(pred_relations, pred_kphrases),
        )
    )


def score_pipeline(gold_kphrases, pred_kphrases, gold_relations, pred_relations):
    """Micro-average over the pooled counts of both subtasks."""
    a = score_task_a(gold_kphrases, pred_kphrases)
    b = score_task_b(gold_relations, pred_relations, gold_kphrases, pred_kphrases)
    return from_counts(
        a.correct + b.correct,
        a.spurious + b.spurious,
        a.missing + b.missing,
    )


def format_report(scores_by_name):
    """Plain-text block, one record per scenario."""
    lines = []
    for name, s in scores_by_name.items():
        lines.append(
            f"{name}: P={s.precision:.4f} R={s.recall:.4f} F1={s.f1:.4f} "
            f"correct={s.correct} spurious={s.spurious} missing={s.missing}"
        )
    return "\n".join(lines)


def report_json(scores_by_name):
    return json.dumps(
        {name: asdict(s) for name, s in scores_by_name.items()},
        indent=2,
        sort_keys=True,
    )
