"""Subtask B: semantic relations between key phrases.

For every relation type, a 15-member ensemble reads a sentence plus two
extra signals — the per-token phrase-kind mask and a source bit marking
one phrase — and emits per-token probabilities of belonging to a target
phrase of that relation. A phrase counts as a predicted target when at
least one of its tokens goes positive. Pairs claimed by several relations
keep the relation whose ensemble had the highest precision on dev;
relations are ranked by dev F1 and only the top k stay active.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import encoding, nn_core
from .corpus import (  # noqa: F401  (public types of this module)
    DEFAULT_RELATIONS,
    RELATION_NAMES,
    RelationInstance,
    RelationType,
    relation_by_name,
)
from .errors import ConfigError
from .tagger import prune_kept_indices
from .training import fit_members


class RelationExample(NamedTuple):
    """One training/prediction instance: a sentence seen from one source."""

    features: np.ndarray  # (len, feature_dim)
    target_mask: np.ndarray  # (len,) 1 on tokens of every gold target
    source: object  # the source KeyPhrase


@dataclass
class RelationMember:
    params: nn_core.NetworkParams
    seed: int
    dev_f1: float  # token-level, from early stopping
    epochs_trained: int


@dataclass
class RelationEnsemble:
    relation: RelationType
    members: list
    kept: list = None
    dev_precision: float = 0.0  # pair-level on dev
    dev_f1: float = 0.0  # pair-level on dev
    active: bool = True
    _stacked: nn_core.NetworkParams = field(default=None, repr=False)

    def __post_init__(self):
        if self.kept is None:
            self.kept = [True] * len(self.members)

    @property
    def kept_members(self):
        return [m for m, keep in zip(self.members, self.kept) if keep]

    @property
    def kept_count(self):
        return sum(self.kept)

    def stacked_kept(self):
        if self._stacked is None or self._stacked.stack_shape[0] != self.kept_count:
            self._stacked = nn_core.stack_params([m.params for m in self.kept_members])
        return self._stacked


# ---------------------------------------------------------------------------
# Instance construction
# ---------------------------------------------------------------------------


def kind_mask_from_phrases(phrases, n_tokens):
    """Per-token phrase class (1..4), 0 outside every phrase."""
    kinds = np.zeros(n_tokens, dtype=int)
    for k in phrases:
        kinds[k.token_span[0] : k.token_span[1]] = k.class_id
    return kinds


def build_instances(sentence, kphrases, gold_relations, relation, table, tagset):
    """One RelationExample per phrase acting as source.

    ``target_mask`` marks the tokens of every gold target phrase of
    ``(relation, source)`` and is all zeros when the source has none.
    """
    phrases = [k for k in kphrases if k.sentence_id == sentence.sentence_id]
    if not phrases:
        return []
    kinds = kind_mask_from_phrases(phrases, len(sentence.tokens))
    by_id = {k.id: k for k in phrases}
    instances = []
    for source in phrases:
        source_mask = np.zeros(len(sentence.tokens))
        source_mask[source.token_span[0] : source.token_span[1]] = 1.0
        feats = encoding.assemble_features_b(
            sentence.words, sentence.pos_tags, kinds, source_mask, table, tagset
        )
        target_mask = np.zeros(len(sentence.tokens))
        for r in gold_relations:
            if (
                r.relation.name == relation.name
                and r.source == source.id
                and r.target in by_id
            ):
                t = by_id[r.target]
                target_mask[t.token_span[0] : t.token_span[1]] = 1.0
        instances.append(RelationExample(feats, target_mask, source))
    return instances


def corpus_instances(corpus, relation, table, tagset, kphrases=None):
    """All instances of a corpus, with their sentences, in sentence order."""
    kphrases = corpus.kphrases if kphrases is None else kphrases
    out = []
    for s in corpus.sentences:
        rels = corpus.relations_in(s.sentence_id)
        for inst in build_instances(s, kphrases, rels, relation, table, tagset):
            out.append((s, inst))
    return out


# ---------------------------------------------------------------------------
# Pair-level scoring
# ---------------------------------------------------------------------------


def _pair_scores(pred_pairs, gold_pairs):
    """Precision/recall/F1 over (source_id, target_id) pair sets."""
    pred = set(pred_pairs)
    gold = set(gold_pairs)
    if not pred and not gold:
        return 1.0, 1.0, 1.0
    correct = len(pred & gold)
    p = correct / len(pred) if pred else 0.0
    r = correct / len(gold) if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def _vote_targets(ensemble, sentence_instances, threshold=0.5, batch_size=32):
    """Majority-vote target phrases for a list of (sentence, instance).

    Yields (sentence, source, [target phrases]) with whole-phrase
    projection: any positive token inside a phrase marks the phrase.
    """
    params = ensemble.stacked_kept()
    k = ensemble.kept_count
    results = []
    for i in range(0, len(sentence_instances), batch_size):
        chunk = sentence_instances[i : i + batch_size]
        batch = nn_core.SequenceBatch.from_sequences([inst.features for _, inst in chunk])
        y_hat = nn_core.network_forward(batch, params)
        votes = (y_hat >= threshold).sum(axis=0) * batch.mask
        bits = votes > k / 2.0
        for j, (sentence, inst) in enumerate(chunk):
            positive = bits[j, : len(sentence.tokens)]
            results.append((sentence, inst.source, positive))
    return results


def predict_targets(ensemble, sentence, kphrases, source, table, tagset,
                    threshold=0.5):
    """Target phrases of ``source`` under one relation ensemble."""
    phrases = [k for k in kphrases if k.sentence_id == sentence.sentence_id]
    kinds = kind_mask_from_phrases(phrases, len(sentence.tokens))
    source_mask = np.zeros(len(sentence.tokens))
    source_mask[source.token_span[0] : source.token_span[1]] = 1.0
    feats = encoding.assemble_features_b(
        sentence.words, sentence.pos_tags, kinds, source_mask, table, tagset
    )
    inst = RelationExample(feats, np.zeros(len(sentence.tokens)), source)
    (_, _, positive), = _vote_targets(ensemble, [(sentence, inst)], threshold)
    return _project_targets(positive, phrases, source)


def _project_targets(positive_bits, phrases, source):
    targets = []
    for k in phrases:
        if k.id == source.id:
            continue
        if np.any(positive_bits[k.token_span[0] : k.token_span[1]]):
            targets.append(k)
    return targets


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train_relation_ensemble(train, dev, relation, cfg, base_seed=0,
                            table=None, tagset=None, log=None):
    """Same regime as the phrase taggers, then pruning and dev pair scores."""
    if not any(r.relation.name == relation.name for r in train.relations):
        raise ConfigError(f"relation {relation.name!r} absent from the training gold")
    train_inst = corpus_instances(train, relation, table, tagset)
    dev_inst = corpus_instances(dev, relation, table, tagset)
    seeds = [base_seed + i for i in range(cfg.ensemble_size)]
    trained = fit_members(
        [inst.features for _, inst in train_inst],
        [inst.target_mask for _, inst in train_inst],
        seeds,
        cfg,
        dev_features=[inst.features for _, inst in dev_inst],
        dev_labels=[inst.target_mask for _, inst in dev_inst],
        log=log,
    )
    members = [
        RelationMember(m.params, m.seed, m.dev_f1, m.epochs_trained) for m in trained
    ]
    ensemble = RelationEnsemble(
        relation=relation,
        members=members,
        kept=prune_kept_indices([m.dev_f1 for m in members], cfg.prune_sigma),
    )
    p, _, f1 = score_ensemble_pairs(ensemble, dev, table, tagset,
                                    threshold=cfg.threshold,
                                    batch_size=cfg.batch_size,
                                    instances=dev_inst)
    ensemble.dev_precision = p
    ensemble.dev_f1 = f1
    return ensemble


def score_ensemble_pairs(ensemble, corpus, table, tagset, threshold=0.5,
                         batch_size=32, kphrases=None, instances=None):
    """Pair-level P/R/F1 of one relation ensemble against a corpus's gold."""
    if instances is None:
        instances = corpus_instances(corpus, ensemble.relation, table, tagset,
                                     kphrases=kphrases)
    pred_pairs = []
    for sentence, source, positive in _vote_targets(
        ensemble, instances, threshold, batch_size
    ):
        phrases = (
            [k for k in (kphrases or corpus.kphrases)
             if k.sentence_id == sentence.sentence_id]
        )
        for t in _project_targets(positive, phrases, source):
            pred_pairs.append((source.id, t.id))
    gold_pairs = [
        (r.source, r.target)
        for r in corpus.relations
        if r.relation.name == ensemble.relation.name
    ]
    return _pair_scores(pred_pairs, gold_pairs)


# ---------------------------------------------------------------------------
# Conflict resolution, ranking, prediction
# ---------------------------------------------------------------------------


def resolve_relation_conflicts(candidates):
    """Keep one relation per (source, target) pair: highest dev precision.

    ``candidates`` holds (RelationInstance, RelationEnsemble) pairs; exact
    precision ties go to the lower relation id. Duplicates collapse.
    """
    best = {}
    for inst, ensemble in candidates:
        key = (inst.sentence_id, inst.source, inst.target)
        rank = (-ensemble.dev_precision, inst.relation.id)
        if key not in best or rank < best[key][0]:
            best[key] = (rank, inst)
    return [inst for _, inst in sorted(
        best.values(), key=lambda pair: (pair[1].sentence_id, pair[1].source,
                                          pair[1].target)
    )]


def rank_and_filter(ensembles, k=7):
    """Activate the k ensembles with highest dev F1 (ties → lower id)."""
    if k > len(ensembles):
        raise ConfigError(f"top_k {k} exceeds {len(ensembles)} trained relations")
    order = sorted(ensembles, key=lambda e: (-e.dev_f1, e.relation.id))
    active = {id(e) for e in order[:k]}
    for e in ensembles:
        e.active = id(e) in active
    return ensembles


def predict_relations(sentence, kphrases, ensembles, table, tagset, threshold=0.5):
    """All relation predictions for one sentence (active ensembles only)."""
    candidates = []
    phrases = [k for k in kphrases if k.sentence_id == sentence.sentence_id]
    for e in ensembles:
        if not e.active:
            continue
        for source in phrases:
            for target in predict_targets(
                e, sentence, kphrases, source, table, tagset, threshold
            ):
                inst = RelationInstance(
                    relation=e.relation,
                    source=source.id,
                    target=target.id,
                    sentence_id=sentence.sentence_id,
                )
                candidates.append((inst, e))
    return resolve_relation_conflicts(candidates)


def predict_corpus_relations(corpus, kphrases, ensembles, table, tagset,
                             threshold=0.5, batch_size=32):
    """Batched whole-corpus relation prediction over given phrases."""
    # instances are relation-independent; build once and reuse per ensemble
    shared = []
    for s in corpus.sentences:
        phrases = [k for k in kphrases if k.sentence_id == s.sentence_id]
        if not phrases:
            continue
        kinds = kind_mask_from_phrases(phrases, len(s.tokens))
        for source in phrases:
            source_mask = np.zeros(len(s.tokens))
            source_mask[source.token_span[0] : source.token_span[1]] = 1.0
            feats = encoding.assemble_features_b(
                s.words, s.pos_tags, kinds, source_mask, table, tagset
            )
            shared.append((s, RelationExample(feats, source_mask * 0.0, source)))
    by_sentence = {}
    for k in kphrases:
        by_sentence.setdefault(k.sentence_id, []).append(k)
    candidates = []
    for e in ensembles:
        if not e.active:
            continue
        for sentence, source, positive in _vote_targets(
            e, shared, threshold, batch_size
        ):
            phrases = by_sentence[sentence.sentence_id]
            for t in _project_targets(positive, phrases, source):
                inst = RelationInstance(
                    relation=e.relation,
                    source=source.id,
                    target=t.id,
                    sentence_id=sentence.sentence_id,
                )
                candidates.append((inst, e))
    return resolve_relation_conflicts(candidates)


# ---------------------------------------------------------------------------
# Bundled model
# ---------------------------------------------------------------------------


@dataclass
class TaskBModel:
    """Serializable bundle of every relation ensemble plus encoders."""

    ensembles: list  # sorted by relation id
    table: encoding.EmbeddingTable
    tagset: encoding.PosTagSet
    cfg: object  # TrainConfig
    class_labels: tuple

    def predict_corpus(self, corpus, kphrases):
        return predict_corpus_relations(
            corpus, kphrases, self.ensembles, self.table, self.tagset,
            threshold=self.cfg.threshold, batch_size=self.cfg.batch_size,
        )

    def save(self, path):
        from . import data_io
        from .tagger import pack_embedding, pack_params
        from .training import TrainConfig  # noqa: F401

        tensors = {}
        metadata = {
            "kind": "task_b",
            "class_labels": list(self.class_labels),
            "cfg": self.cfg.__dict__ | {"weight_grid": list(self.cfg.weight_grid)},
            "tagset": list(self.tagset.tags),
            "ensembles": [],
        }
        pack_embedding(self.table, metadata, tensors)
        for e in self.ensembles:
            metadata["ensembles"].append({
                "relation": e.relation.name,
                "relation_id": e.relation.id,
                "kept": [bool(k) for k in e.kept],
                "dev_precision": e.dev_precision,
                "dev_f1": e.dev_f1,
                "active": bool(e.active),
                "members": [
                    {"seed": m.seed, "dev_f1": m.dev_f1, "epochs": m.epochs_trained}
                    for m in e.members
                ],
            })
            for i, m in enumerate(e.members):
                pack_params(f"rel{e.relation.id}/member{i}", m.params, tensors)
        data_io.save_model(metadata, tensors, path)

    @classmethod
    def load(cls, path):
        from . import data_io
        from .tagger import unpack_embedding, unpack_params
        from .training import TrainConfig

        metadata, tensors = data_io.load_model(path)
        if metadata.get("kind") != "task_b":
            raise ConfigError(f"{path} does not hold a subtask-B model")
        ensembles = []
        for entry in metadata["ensembles"]:
            rel = RelationType(entry["relation"], int(entry["relation_id"]))
            members = [
                RelationMember(
                    params=unpack_params(f"rel{rel.id}/member{i}", tensors),
                    seed=int(m["seed"]),
                    dev_f1=float(m["dev_f1"]),
                    epochs_trained=int(m["epochs"]),
                )
                for i, m in enumerate(entry["members"])
            ]
            ensembles.append(
                RelationEnsemble(
                    relation=rel,
                    members=members,
                    kept=[bool(k) for k in entry["kept"]],
                    dev_precision=float(entry["dev_precision"]),
                    dev_f1=float(entry["dev_f1"]),
                    active=bool(entry["active"]),
                )
            )
        cfg_fields = dict(metadata["cfg"])
        cfg_fields["weight_grid"] = tuple(cfg_fields["weight_grid"])
        return cls(
            ensembles=ensembles,
            table=unpack_embedding(metadata, tensors),
            tagset=encoding.PosTagSet(tuple(metadata["tagset"])),
            cfg=TrainConfig(**cfg_fields),
            class_labels=tuple(metadata["class_labels"]),
        )
