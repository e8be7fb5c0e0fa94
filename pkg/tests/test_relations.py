"""Tests for relation instance building, conflicts, ranking, and bundling."""

import numpy as np
import pytest

from kprl import data_io, encoding, nn_core, relations
from kprl.corpus import (
    AnnotatedCorpus,
    KeyPhrase,
    RelationInstance,
    Sentence,
    Token,
    relation_by_name,
)
from kprl.errors import ConfigError
from kprl.training import TrainConfig

TINY_CFG = TrainConfig(h1=6, h2=4, ensemble_size=3, max_epochs=2, patience=2,
                       batch_size=8)


def hand_sentence():
    """'la aspirina alivia la tos .' with three phrases."""
    words = ["la", "aspirina", "alivia", "la", "tos", "."]
    tags = ["DET", "NOUN", "VERB", "DET", "NOUN", "PUNCT"]
    tokens = []
    pos = 0
    text = ""
    for w, t in zip(words, tags):
        sep = "" if (not text or t == "PUNCT") else " "
        start = len(text) + len(sep)
        text += sep + w
        tokens.append(Token(w, t, start, start + len(w)))
    s = Sentence(0, text, 0, tokens)
    phrases = [
        KeyPhrase(id=1, sentence_id=0, class_id=2, token_span=(1, 2),
                  char_span=s.token_span_to_char(1, 2)),
        KeyPhrase(id=2, sentence_id=0, class_id=3, token_span=(2, 3),
                  char_span=s.token_span_to_char(2, 3)),
        KeyPhrase(id=3, sentence_id=0, class_id=1, token_span=(4, 5),
                  char_span=s.token_span_to_char(4, 5)),
    ]
    rels = [
        RelationInstance(relation_by_name("subject"), source=2, target=1, sentence_id=0),
        RelationInstance(relation_by_name("target"), source=2, target=3, sentence_id=0),
    ]
    return s, phrases, rels


def test_kind_mask_from_phrases():
    s, phrases, _ = hand_sentence()
    kinds = relations.kind_mask_from_phrases(phrases, len(s.tokens))
    np.testing.assert_array_equal(kinds, [0, 2, 3, 0, 1, 0])


def test_build_instances_one_per_source():
    s, phrases, rels = hand_sentence()
    table = encoding.EmbeddingTable(dim=6)
    tagset = encoding.PosTagSet(("DET", "NOUN", "VERB", "PUNCT"))
    inst = relations.build_instances(s, phrases, rels, relation_by_name("subject"),
                                     table, tagset)
    assert [i.source.id for i in inst] == [1, 2, 3]
    by_source = {i.source.id: i for i in inst}
    # only the verb (T2) sources a subject relation; its target is T1
    np.testing.assert_array_equal(by_source[2].target_mask, [0, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(by_source[1].target_mask, np.zeros(6))
    np.testing.assert_array_equal(by_source[3].target_mask, np.zeros(6))
    # source bit (last feature column) marks exactly the source tokens
    np.testing.assert_array_equal(by_source[2].features[:, -1], [0, 0, 1, 0, 0, 0])
    # feature width: embedding + PoS one-hot + kind one-hot + source bit
    assert by_source[2].features.shape == (6, 6 + 5 + 5 + 1)


def test_build_instances_empty_without_phrases():
    s, _, _ = hand_sentence()
    table = encoding.EmbeddingTable(dim=6)
    tagset = encoding.PosTagSet(("NOUN",))
    assert relations.build_instances(s, [], [], relation_by_name("subject"),
                                     table, tagset) == []


def test_target_projection_marks_whole_phrases(monkeypatch):
    s, phrases, _ = hand_sentence()
    positive = np.array([0, 0, 0, 0, 1, 0], dtype=bool)  # one token of T3
    targets = relations._project_targets(positive, phrases, source=phrases[1])
    assert [t.id for t in targets] == [3]
    # a positive bit on the source itself never yields a self-target
    positive = np.array([0, 0, 1, 0, 0, 0], dtype=bool)
    assert relations._project_targets(positive, phrases, source=phrases[1]) == []


def fake_ensemble(name, precision, f1):
    return relations.RelationEnsemble(
        relation=relation_by_name(name), members=[], kept=[],
        dev_precision=precision, dev_f1=f1,
    )


def test_conflicts_prefer_higher_dev_precision():
    e_subject = fake_ensemble("subject", 0.9, 0.5)
    e_target = fake_ensemble("target", 0.6, 0.5)
    i1 = RelationInstance(e_subject.relation, source=1, target=2, sentence_id=0)
    i2 = RelationInstance(e_target.relation, source=1, target=2, sentence_id=0)
    kept = relations.resolve_relation_conflicts([(i2, e_target), (i1, e_subject)])
    assert [r.relation.name for r in kept] == ["subject"]


def test_conflicts_tie_goes_to_lower_relation_id():
    e_subject = fake_ensemble("subject", 0.7, 0.5)  # id 1
    e_causes = fake_ensemble("causes", 0.7, 0.5)  # id 11
    i1 = RelationInstance(e_subject.relation, source=1, target=2, sentence_id=0)
    i2 = RelationInstance(e_causes.relation, source=1, target=2, sentence_id=0)
    kept = relations.resolve_relation_conflicts([(i2, e_causes), (i1, e_subject)])
    assert [r.relation.name for r in kept] == ["subject"]


def test_conflicts_distinct_pairs_all_survive():
    e = fake_ensemble("subject", 0.7, 0.5)
    a = RelationInstance(e.relation, source=1, target=2, sentence_id=0)
    b = RelationInstance(e.relation, source=2, target=1, sentence_id=0)
    c = RelationInstance(e.relation, source=1, target=2, sentence_id=1)
    kept = relations.resolve_relation_conflicts([(a, e), (b, e), (c, e), (a, e)])
    assert len(kept) == 3  # duplicate of `a` collapsed, direction kept distinct


def test_rank_and_filter_top_k():
    es = [fake_ensemble("subject", 0.5, 0.40),
          fake_ensemble("target", 0.5, 0.90),
          fake_ensemble("causes", 0.5, 0.70)]
    relations.rank_and_filter(es, k=2)
    assert [e.active for e in es] == [False, True, True]
    relations.rank_and_filter(es, k=3)
    assert all(e.active for e in es)
    with pytest.raises(ConfigError):
        relations.rank_and_filter(es, k=4)


def test_rank_ties_prefer_lower_relation_id():
    es = [fake_ensemble("causes", 0.5, 0.8),  # id 11
          fake_ensemble("subject", 0.5, 0.8)]  # id 1
    relations.rank_and_filter(es, k=1)
    active = [e.relation.name for e in es if e.active]
    assert active == ["subject"]


def test_pair_scores():
    p, r, f1 = relations._pair_scores([(1, 2), (3, 4)], [(1, 2)])
    assert (p, r) == (0.5, 1.0)
    np.testing.assert_allclose(f1, 2 / 3)
    assert relations._pair_scores([], []) == (1.0, 1.0, 1.0)
    assert relations._pair_scores([(1, 2)], []) == (0.0, 0.0, 0.0)


def test_absent_relation_is_config_error():
    g = data_io.default_grammar()
    train, dev, _ = data_io.generate_synthetic(g, 13, 12, 4, 2)
    table = encoding.EmbeddingTable(dim=8)
    tagset = encoding.PosTagSet.from_corpus(train)
    with pytest.raises(ConfigError, match="in-time"):
        relations.train_relation_ensemble(train, dev, relation_by_name("in-time"),
                                          TINY_CFG, table=table, tagset=tagset)


@pytest.fixture(scope="module")
def tiny_task_b():
    g = data_io.default_grammar()
    train, dev, _ = data_io.generate_synthetic(g, 17, 30, 10, 2)
    table = encoding.EmbeddingTable(dim=10)
    tagset = encoding.PosTagSet.from_corpus(train)
    ensembles = []
    for name in ("subject", "target"):
        ensembles.append(relations.train_relation_ensemble(
            train, dev, relation_by_name(name), TINY_CFG,
            base_seed=relation_by_name(name).id, table=table, tagset=tagset,
        ))
    relations.rank_and_filter(ensembles, k=2)
    model = relations.TaskBModel(ensembles=ensembles, table=table, tagset=tagset,
                                 cfg=TINY_CFG, class_labels=("C1", "C2", "C3", "C4"))
    return model, dev


def test_predictions_reference_given_phrases(tiny_task_b):
    model, dev = tiny_task_b
    preds = model.predict_corpus(dev, dev.kphrases)
    ids = {k.id for k in dev.kphrases}
    pairs = set()
    for r in preds:
        assert r.source in ids and r.target in ids
        assert r.source != r.target
        key = (r.sentence_id, r.source, r.target)
        assert key not in pairs  # conflict resolution leaves one relation per pair
        pairs.add(key)


def test_single_sentence_prediction_agrees_with_batched(tiny_task_b):
    model, dev = tiny_task_b
    preds = model.predict_corpus(dev, dev.kphrases)
    s = dev.sentences[0]
    single = relations.predict_relations(s, dev.kphrases, model.ensembles,
                                         model.table, model.tagset)
    batched = [r for r in preds if r.sentence_id == s.sentence_id]
    assert sorted((r.relation.name, r.source, r.target) for r in single) == \
        sorted((r.relation.name, r.source, r.target) for r in batched)


def test_task_b_round_trip_preserves_predictions(tiny_task_b, tmp_path):
    model, dev = tiny_task_b
    path = tmp_path / "b.kprl"
    model.save(path)
    again = relations.TaskBModel.load(path)
    assert [e.relation for e in again.ensembles] == [e.relation for e in model.ensembles]
    assert [e.active for e in again.ensembles] == [e.active for e in model.ensembles]
    assert [e.dev_precision for e in again.ensembles] == [
        e.dev_precision for e in model.ensembles
    ]
    for e0, e1 in zip(model.ensembles, again.ensembles):
        for m0, m1 in zip(e0.members, e1.members):
            for a, b in zip(nn_core.param_leaves(m0.params),
                            nn_core.param_leaves(m1.params)):
                np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
    before = [(r.relation.name, r.source, r.target)
              for r in model.predict_corpus(dev, dev.kphrases)]
    after = [(r.relation.name, r.source, r.target)
             for r in again.predict_corpus(dev, dev.kphrases)]
    assert before == after


def test_wrong_container_kind_rejected(tmp_path):
    path = tmp_path / "x.kprl"
    data_io.save_model({"kind": "task_a"}, {}, path)
    with pytest.raises(ConfigError):
        relations.TaskBModel.load(path)
