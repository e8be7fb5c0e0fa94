"""Subtask A: per-class binary phrase taggers with voting ensembles.

Pipeline: one 15-member ensemble per phrase class, trained on per-token
membership bits; prune members whose dev F1 falls below mean − σ; strict
majority vote per token; weighted conflict resolution when several class
ensembles claim the same token; span joining of adjacent positives ruled
by PoS-pair statistics learned from the training gold.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import encoding, evaluation, nn_core
from .corpus import KeyPhrase  # noqa: F401  (public type of this module)
from .errors import ConfigError
from .training import TrainConfig, fit_members  # noqa: F401


@dataclass
class BinaryTagger:
    """One trained member of a class ensemble."""

    params: nn_core.NetworkParams
    class_id: int
    seed: int
    dev_f1: float
    epochs_trained: int


@dataclass
class Ensemble:
    """All members for one phrase class plus the pruning/weight state."""

    class_id: int
    members: list
    kept: list = None
    weight: float = 1.0
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
        """Kept members' parameters stacked for one fused forward pass."""
        if self._stacked is None or self._stacked.stack_shape[0] != self.kept_count:
            self._stacked = nn_core.stack_params(
                [m.params for m in self.kept_members]
            )
        return self._stacked


# ---------------------------------------------------------------------------
# Corpus → features/labels
# ---------------------------------------------------------------------------


def encode_corpus_a(corpus, table, tagset):
    """Per-sentence feature matrices for the phrase taggers."""
    return [
        encoding.assemble_features_a(s.words, s.pos_tags, table, tagset)
        for s in corpus.sentences
    ]


def class_token_labels(corpus, class_id):
    """Per-sentence 0/1 vectors: token lies inside a gold phrase of the class."""
    out = []
    for s in corpus.sentences:
        bits = np.zeros(len(s.tokens))
        for k in corpus.kphrases_in(s.sentence_id):
            if k.class_id == class_id:
                bits[k.token_span[0] : k.token_span[1]] = 1.0
        out.append(bits)
    return out


def token_class_map(corpus, sentence):
    """Per-token (class_id, phrase_id) from the gold phrases, 0 when outside."""
    cls = np.zeros(len(sentence.tokens), dtype=int)
    pid = np.zeros(len(sentence.tokens), dtype=int)
    for k in corpus.kphrases_in(sentence.sentence_id):
        cls[k.token_span[0] : k.token_span[1]] = k.class_id
        pid[k.token_span[0] : k.token_span[1]] = k.id
    return cls, pid


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _require_class(corpus, class_id):
    if class_id not in {k.class_id for k in corpus.kphrases}:
        raise ConfigError(f"class {class_id} absent from the training gold")


def train_binary_tagger(train, dev, class_id, seed, cfg, table, tagset,
                        dev_scorer=None, log=None):
    """Train one member; returns the best-on-dev snapshot."""
    _require_class(train, class_id)
    members = fit_members(
        encode_corpus_a(train, table, tagset),
        class_token_labels(train, class_id),
        [seed],
        cfg,
        dev_features=encode_corpus_a(dev, table, tagset),
        dev_labels=class_token_labels(dev, class_id),
        dev_scorer=dev_scorer,
        log=log,
    )
    m = members[0]
    return BinaryTagger(m.params, class_id, m.seed, m.dev_f1, m.epochs_trained)


def train_ensemble(train, dev, class_id, cfg, base_seed=0, table=None, tagset=None,
                   train_features=None, dev_features=None, log=None):
    """Train ``cfg.ensemble_size`` members (seeds base..base+n−1) in one pass."""
    _require_class(train, class_id)
    if train_features is None:
        train_features = encode_corpus_a(train, table, tagset)
    if dev_features is None:
        dev_features = encode_corpus_a(dev, table, tagset)
    seeds = [base_seed + i for i in range(cfg.ensemble_size)]
    trained = fit_members(
        train_features,
        class_token_labels(train, class_id),
        seeds,
        cfg,
        dev_features=dev_features,
        dev_labels=class_token_labels(dev, class_id),
        log=log,
    )
    members = [
        BinaryTagger(m.params, class_id, m.seed, m.dev_f1, m.epochs_trained)
        for m in trained
    ]
    return Ensemble(class_id=class_id, members=members)


# ---------------------------------------------------------------------------
# Pruning and voting
# ---------------------------------------------------------------------------


def prune_kept_indices(dev_f1s, sigma=1.0):
    """Keep flags under the mean − σ·stddev rule, floor 3, odd parity."""
    f1s = np.asarray(dev_f1s, dtype=np.float64)
    cutoff = f1s.mean() - sigma * f1s.std()
    kept = f1s >= cutoff
    if kept.sum() < 3:
        # floor: keep the three best (ties resolved toward lower index)
        kept = np.zeros(len(f1s), dtype=bool)
        kept[np.argsort(-f1s, kind="stable")[:3]] = True
    if kept.sum() % 2 == 0:
        # drop the weakest kept member to restore an odd voting count
        kept_idx = np.flatnonzero(kept)
        weakest = kept_idx[np.argmin(f1s[kept_idx])]
        kept[weakest] = False
    return list(kept)


def prune_ensemble(ensemble, sigma=1.0):
    """Apply the pruning rule to the members' recorded dev F1 scores."""
    kept = prune_kept_indices([m.dev_f1 for m in ensemble.members], sigma)
    return Ensemble(
        class_id=ensemble.class_id,
        members=ensemble.members,
        kept=kept,
        weight=ensemble.weight,
    )


def vote_batch(ensemble, batch, threshold=0.5):
    """Majority vote over kept members for a padded batch.

    Returns ``(bits, counts)`` of shape (batch, max_len): counts are the
    positive votes per token, bits are 1 where votes exceed half the kept
    member count.
    """
    params = ensemble.stacked_kept()
    y_hat = nn_core.network_forward(batch, params)
    votes = (y_hat >= threshold).astype(np.float64)
    counts = votes.sum(axis=0) * batch.mask
    k = ensemble.kept_count
    bits = (counts > k / 2.0).astype(np.float64)
    return bits, counts


def vote(ensemble, features, threshold=0.5):
    """Single-sentence majority vote; returns per-token (bits, counts)."""
    batch = nn_core.SequenceBatch.from_sequences([features])
    bits, counts = vote_batch(ensemble, batch, threshold)
    return bits[0], counts[0]


# ---------------------------------------------------------------------------
# Span joining
# ---------------------------------------------------------------------------


@dataclass
class JoinRuleTable:
    """(pos_left, pos_right) → same-phrase statistics over gold adjacencies."""

    rules: dict  # (pos_left, pos_right) -> (joined_count, total_count)
    threshold: float = 0.5
    default_join: bool = True

    def join(self, pos_left, pos_right):
        stat = self.rules.get((pos_left, pos_right))
        if stat is None:
            return self.default_join
        joined, total = stat
        return joined / total >= self.threshold


def learn_join_rules(corpus, threshold=0.5):
    """Tally same-phrase ratios of adjacent same-class gold-positive pairs."""
    rules = {}
    for s in corpus.sentences:
        cls, pid = token_class_map(corpus, s)
        pos = s.pos_tags
        for t in range(len(s.tokens) - 1):
            if cls[t] != 0 and cls[t] == cls[t + 1]:
                key = (pos[t], pos[t + 1])
                joined, total = rules.get(key, (0, 0))
                rules[key] = (joined + int(pid[t] == pid[t + 1]), total + 1)
    return JoinRuleTable(rules=rules, threshold=threshold)


def segment(bits, pos_tags, rules):
    """Token spans: maximal positive runs, split where the PoS pair says so."""
    spans = []
    start = None
    bits = np.asarray(bits)
    for t in range(len(bits)):
        if bits[t] <= 0:
            if start is not None:
                spans.append((start, t))
                start = None
            continue
        if start is None:
            start = t
        elif not rules.join(pos_tags[t - 1], pos_tags[t]):
            spans.append((start, t))
            start = t
    if start is not None:
        spans.append((start, len(bits)))
    return spans


# ---------------------------------------------------------------------------
# Conflict resolution and prediction
# ---------------------------------------------------------------------------


def resolve_class_conflicts(class_votes, weights):
    """Per-token winning class id (0 = none) from (bits, counts) per class.

    A token positive in several classes goes to the class maximizing
    vote_count × weight; exact ties go to the lowest class id.
    """
    class_ids = sorted(class_votes)
    if not class_ids:
        raise ConfigError("no class votes to resolve")
    n = len(np.asarray(class_votes[class_ids[0]][0]))
    score = np.full((len(class_ids), n), -np.inf)
    for row, c in enumerate(class_ids):
        bits, counts = class_votes[c]
        bits = np.asarray(bits)
        score[row] = np.where(bits > 0, np.asarray(counts) * weights[c], -np.inf)
    winner_row = np.argmax(score, axis=0)  # first max → lowest class id
    any_positive = np.isfinite(score).any(axis=0)
    ids = np.array(class_ids)
    return np.where(any_positive, ids[winner_row], 0)


def _kphrases_from_classmap(sentence, winner, pos_tags, rules, next_id):
    phrases = []
    for c in sorted(set(winner[winner > 0])):
        for t0, t1 in segment((winner == c).astype(float), pos_tags, rules):
            phrases.append(
                KeyPhrase(
                    id=next_id,
                    sentence_id=sentence.sentence_id,
                    class_id=int(c),
                    token_span=(t0, t1),
                    char_span=sentence.token_span_to_char(t0, t1),
                )
            )
            next_id += 1
    return phrases, next_id


def predict_kphrases(sentence, ensembles, rules, weights, table, tagset,
                     threshold=0.5, next_id=1):
    """Full subtask-A prediction for one sentence."""
    feats = encoding.assemble_features_a(sentence.words, sentence.pos_tags, table, tagset)
    votes = {
        c: vote(e, feats, threshold) for c, e in ensembles.items()
    }
    winner = resolve_class_conflicts(votes, weights)
    phrases, _ = _kphrases_from_classmap(
        sentence, winner, sentence.pos_tags, rules, next_id
    )
    return phrases


def batched_class_votes(corpus, ensembles, features, threshold=0.5, batch_size=32):
    """Vote every ensemble over the whole corpus in fused batches.

    Returns {sentence_id: {class_id: (bits, counts)}}.
    """
    out = {s.sentence_id: {} for s in corpus.sentences}
    sentences = corpus.sentences
    for i in range(0, len(sentences), batch_size):
        chunk = sentences[i : i + batch_size]
        batch = nn_core.SequenceBatch.from_sequences(
            [features[i + j] for j in range(len(chunk))]
        )
        for c, e in ensembles.items():
            bits, counts = vote_batch(e, batch, threshold)
            for j, s in enumerate(chunk):
                n = len(s.tokens)
                out[s.sentence_id][c] = (bits[j, :n], counts[j, :n])
    return out


def predict_corpus_kphrases(corpus, ensembles, rules, weights, table, tagset,
                            threshold=0.5, batch_size=32, features=None):
    """Subtask-A predictions for a whole corpus, with fresh phrase ids."""
    if features is None:
        features = encode_corpus_a(corpus, table, tagset)
    votes = batched_class_votes(corpus, ensembles, features, threshold, batch_size)
    phrases = []
    next_id = 1
    for s in corpus.sentences:
        winner = resolve_class_conflicts(votes[s.sentence_id], weights)
        new, next_id = _kphrases_from_classmap(s, winner, s.pos_tags, rules, next_id)
        phrases.extend(new)
    return phrases


def grid_search_weights(ensembles, dev, rules, table, tagset,
                        grid=(0.6, 0.8, 1.0, 1.2, 1.4), threshold=0.5,
                        batch_size=32, features=None):
    """Exhaustive weight search maximizing exact span+class F1 on dev.

    The lowest class id's weight is pinned at 1.0 (only relative weights
    matter in an argmax); ties keep the first combination enumerated.
    """
    class_ids = sorted(ensembles)
    if features is None:
        features = encode_corpus_a(dev, table, tagset)
    votes = batched_class_votes(dev, ensembles, features, threshold, batch_size)
    gold = dev.kphrases
    first, rest = class_ids[0], class_ids[1:]

    best_weights = None
    best_f1 = -1.0
    for combo in itertools.product(grid, repeat=len(rest)):
        weights = {first: 1.0, **dict(zip(rest, combo))}
        phrases = []
        next_id = 1
        for s in dev.sentences:
            winner = resolve_class_conflicts(votes[s.sentence_id], weights)
            new, next_id = _kphrases_from_classmap(
                s, winner, s.pos_tags, rules, next_id
            )
            phrases.extend(new)
        f1 = evaluation.score_task_a(gold, phrases).f1
        if f1 > best_f1:
            best_f1 = f1
            best_weights = weights
    return best_weights


# ---------------------------------------------------------------------------
# Bundled pipeline model
# ---------------------------------------------------------------------------


@dataclass
class TaskAModel:
    """Everything subtask-A prediction needs, in one serializable bundle."""

    ensembles: dict  # class_id -> Ensemble
    rules: JoinRuleTable
    weights: dict  # class_id -> float
    table: encoding.EmbeddingTable
    tagset: encoding.PosTagSet
    cfg: TrainConfig
    class_labels: tuple

    def predict_corpus(self, corpus):
        return predict_corpus_kphrases(
            corpus, self.ensembles, self.rules, self.weights,
            self.table, self.tagset, threshold=self.cfg.threshold,
            batch_size=self.cfg.batch_size,
        )

    def save(self, path):
        from . import data_io

        metadata, tensors = _model_payload(self)
        data_io.save_model(metadata, tensors, path)

    @classmethod
    def load(cls, path):
        from . import data_io

        metadata, tensors = data_io.load_model(path)
        if metadata.get("kind") != "task_a":
            raise ConfigError(f"{path} does not hold a subtask-A model")
        return _model_from_payload(metadata, tensors)


def pack_params(prefix, params, tensors):
    for name, leaf in zip(nn_core.PARAM_LEAF_NAMES, nn_core.param_leaves(params)):
        tensors[f"{prefix}/{name}"] = leaf


def unpack_params(prefix, tensors):
    return nn_core.params_from_leaves(
        [tensors[f"{prefix}/{name}"] for name in nn_core.PARAM_LEAF_NAMES]
    )


def pack_embedding(table, metadata, tensors):
    words = sorted(table.entries)
    metadata["embed"] = {
        "dim": table.dim,
        "buckets": table.hash_buckets,
        "ngram_range": list(table.ngram_range),
        "hash_seed": table.hash_seed,
        "words": words,
    }
    if words:
        tensors["embed/vectors"] = np.stack([table.entries[w] for w in words])


def unpack_embedding(metadata, tensors):
    emb = metadata["embed"]
    entries = {}
    if emb["words"]:
        mat = tensors["embed/vectors"]
        entries = {w: mat[i] for i, w in enumerate(emb["words"])}
    return encoding.EmbeddingTable(
        dim=emb["dim"],
        entries=entries,
        hash_buckets=emb["buckets"],
        ngram_range=tuple(emb["ngram_range"]),
        hash_seed=emb["hash_seed"],
    )


def _model_payload(model):
    tensors = {}
    metadata = {
        "kind": "task_a",
        "class_labels": list(model.class_labels),
        "cfg": model.cfg.__dict__ | {"weight_grid": list(model.cfg.weight_grid)},
        "weights": {str(c): w for c, w in model.weights.items()},
        "join": {
            "threshold": model.rules.threshold,
            "default_join": model.rules.default_join,
            "rules": [
                [pl, pr, joined, total]
                for (pl, pr), (joined, total) in sorted(model.rules.rules.items())
            ],
        },
        "tagset": list(model.tagset.tags),
        "ensembles": {},
    }
    pack_embedding(model.table, metadata, tensors)
    for c, e in model.ensembles.items():
        metadata["ensembles"][str(c)] = {
            "kept": [bool(k) for k in e.kept],
            "weight": e.weight,
            "members": [
                {"seed": m.seed, "dev_f1": m.dev_f1, "epochs": m.epochs_trained}
                for m in e.members
            ],
        }
        for i, m in enumerate(e.members):
            pack_params(f"class{c}/member{i}", m.params, tensors)
    return metadata, tensors


def _model_from_payload(metadata, tensors):
    ensembles = {}
    for key, entry in metadata["ensembles"].items():
        c = int(key)
        members = [
            BinaryTagger(
                params=unpack_params(f"class{c}/member{i}", tensors),
                class_id=c,
                seed=int(m["seed"]),
                dev_f1=float(m["dev_f1"]),
                epochs_trained=int(m["epochs"]),
            )
            for i, m in enumerate(entry["members"])
        ]
        ensembles[c] = Ensemble(
            class_id=c,
            members=members,
            kept=[bool(k) for k in entry["kept"]],
            weight=float(entry["weight"]),
        )
    join = metadata["join"]
    rules = JoinRuleTable(
        rules={
            (pl, pr): (int(j), int(t)) for pl, pr, j, t in join["rules"]
        },
        threshold=join["threshold"],
        default_join=join["default_join"],
    )
    cfg_fields = dict(metadata["cfg"])
    cfg_fields["weight_grid"] = tuple(cfg_fields["weight_grid"])
    cfg = TrainConfig(**cfg_fields)
    return TaskAModel(
        ensembles=ensembles,
        rules=rules,
        weights={int(c): float(w) for c, w in metadata["weights"].items()},
        table=unpack_embedding(metadata, tensors),
        tagset=encoding.PosTagSet(tuple(metadata["tagset"])),
        cfg=cfg,
        class_labels=tuple(metadata["class_labels"]),
    )
