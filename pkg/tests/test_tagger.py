"""Tests for phrase tagging: pruning, voting, joining, conflicts, bundling."""

import numpy as np
import pytest

from kprl import data_io, encoding, nn_core, tagger
from kprl.corpus import AnnotatedCorpus, KeyPhrase, Sentence, Token
from kprl.errors import ConfigError
from kprl.training import TrainConfig

TINY_CFG = TrainConfig(h1=6, h2=4, ensemble_size=3, max_epochs=2, patience=2,
                       batch_size=8)


def tiny_corpora(seed=21, n_train=24, n_dev=8):
    g = data_io.default_grammar()
    train, dev, _ = data_io.generate_synthetic(g, seed, n_train, n_dev, 2)
    return train, dev


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------


def test_prune_cuts_outlier_then_restores_odd_parity():
    scores = [0.8] * 14 + [0.1]
    kept = tagger.prune_kept_indices(scores, sigma=1.0)
    # mean 0.753, std 0.175 -> cutoff 0.579: the 0.1 member is cut,
    # leaving 14; parity restoration drops one 0.8, leaving 13
    assert not kept[14]
    assert sum(kept) == 13


def test_prune_keeps_all_when_scores_are_flat():
    kept = tagger.prune_kept_indices([0.7] * 15)
    assert sum(kept) == 15


def test_prune_floor_keeps_top_three():
    kept = tagger.prune_kept_indices([0.9, 0.8, 0.1, 0.1], sigma=0.1)
    # cutoff 0.438 keeps only two members, so the floor pulls in the
    # best third (first 0.1 by stable order); three is already odd
    assert kept == [True, True, True, False]


def test_prune_even_survivors_drop_weakest():
    kept = tagger.prune_kept_indices([0.9, 0.9, 0.8, 0.8])
    # cutoff 0.8 keeps all four; parity drops the first 0.8
    assert kept == [True, True, False, True]


# ---------------------------------------------------------------------------
# Voting (network output stubbed to fixed vote patterns)
# ---------------------------------------------------------------------------


def stub_ensemble(n_members=3):
    dims = nn_core.NetworkDims(4, 3, 2)
    members = [
        tagger.BinaryTagger(nn_core.init_params(i, dims), 1, i, 0.5, 1)
        for i in range(n_members)
    ]
    return tagger.Ensemble(class_id=1, members=members)


def test_vote_majority_rule(monkeypatch):
    e = stub_ensemble(3)
    # per-member probabilities for 4 tokens: 3, 2, 1, 0 positive votes
    fixed = np.array([
        [[0.9, 0.9, 0.9, 0.1]],
        [[0.9, 0.9, 0.1, 0.1]],
        [[0.9, 0.1, 0.1, 0.1]],
    ])
    monkeypatch.setattr(tagger.nn_core, "network_forward", lambda b, p: fixed)
    batch = nn_core.SequenceBatch.from_sequences([np.zeros((4, 4))])
    bits, counts = tagger.vote_batch(e, batch)
    np.testing.assert_array_equal(counts, [[3, 2, 1, 0]])
    np.testing.assert_array_equal(bits, [[1, 1, 0, 0]])  # votes > 3/2


def test_vote_threshold_is_inclusive(monkeypatch):
    e = stub_ensemble(3)
    fixed = np.array([[[0.5]], [[0.5]], [[0.49]]])
    monkeypatch.setattr(tagger.nn_core, "network_forward", lambda b, p: fixed)
    batch = nn_core.SequenceBatch.from_sequences([np.zeros((1, 4))])
    bits, counts = tagger.vote_batch(e, batch, threshold=0.5)
    np.testing.assert_array_equal(counts, [[2]])
    np.testing.assert_array_equal(bits, [[1]])


def test_vote_respects_padding_mask(monkeypatch):
    e = stub_ensemble(3)
    fixed = np.full((3, 2, 5), 0.9)
    monkeypatch.setattr(tagger.nn_core, "network_forward", lambda b, p: fixed)
    batch = nn_core.SequenceBatch.from_sequences([np.zeros((5, 4)), np.zeros((2, 4))])
    bits, counts = tagger.vote_batch(e, batch)
    np.testing.assert_array_equal(counts[1], [3, 3, 0, 0, 0])
    np.testing.assert_array_equal(bits[1], [1, 1, 0, 0, 0])


# ---------------------------------------------------------------------------
# Join rules and segmentation
# ---------------------------------------------------------------------------


def test_join_rule_table_thresholding():
    rules = tagger.JoinRuleTable(
        rules={("NOUN", "NOUN"): (1, 4), ("NOUN", "ADP"): (3, 4)}
    )
    assert not rules.join("NOUN", "NOUN")  # 0.25 < 0.5
    assert rules.join("NOUN", "ADP")  # 0.75
    assert rules.join("ADJ", "VERB")  # unseen -> default join


def hand_corpus():
    """Two sentences covering a multiword phrase and an adjacent-phrase pair."""
    s0_text = "dolor de cabeza hoy"
    s0 = Sentence(0, s0_text, 0, [
        Token("dolor", "NOUN", 0, 5),
        Token("de", "ADP", 6, 8),
        Token("cabeza", "NOUN", 9, 15),
        Token("hoy", "ADV", 16, 19),
    ])
    s1_text = "gripe tos"
    s1 = Sentence(1, s1_text, 20, [
        Token("gripe", "NOUN", 20, 25),
        Token("tos", "NOUN", 26, 29),
    ])
    phrases = [
        KeyPhrase(id=1, sentence_id=0, class_id=1, token_span=(0, 3), char_span=(0, 15)),
        KeyPhrase(id=2, sentence_id=1, class_id=1, token_span=(0, 1), char_span=(20, 25)),
        KeyPhrase(id=3, sentence_id=1, class_id=1, token_span=(1, 2), char_span=(26, 29)),
    ]
    return AnnotatedCorpus(sentences=[s0, s1], kphrases=phrases).validate()


def test_learn_join_rules_from_gold_adjacencies():
    rules = tagger.learn_join_rules(hand_corpus())
    assert rules.rules[("NOUN", "ADP")] == (1, 1)
    assert rules.rules[("ADP", "NOUN")] == (1, 1)
    assert rules.rules[("NOUN", "NOUN")] == (0, 1)  # gripe|tos split
    assert rules.join("NOUN", "ADP")
    assert not rules.join("NOUN", "NOUN")


def test_segment_splits_on_rule_and_gaps():
    rules = tagger.learn_join_rules(hand_corpus())
    spans = tagger.segment([1, 1, 1, 0], ["NOUN", "ADP", "NOUN", "ADV"], rules)
    assert spans == [(0, 3)]
    spans = tagger.segment([1, 1], ["NOUN", "NOUN"], rules)
    assert spans == [(0, 1), (1, 2)]
    spans = tagger.segment([1, 0, 1, 1], ["NOUN", "X", "NOUN", "ADP"], rules)
    assert spans == [(0, 1), (2, 4)]
    assert tagger.segment([0, 0], ["NOUN", "NOUN"], rules) == []


# ---------------------------------------------------------------------------
# Class conflict resolution
# ---------------------------------------------------------------------------


def votes_of(*pairs):
    return {c: (np.asarray(b, float), np.asarray(n, float)) for c, (b, n) in pairs}


def test_conflicts_weighted_counts_decide():
    votes = votes_of((1, ([1], [9])), (2, ([1], [9])))
    np.testing.assert_array_equal(
        tagger.resolve_class_conflicts(votes, {1: 1.0, 2: 1.2}), [2]
    )
    np.testing.assert_array_equal(
        tagger.resolve_class_conflicts(votes, {1: 1.2, 2: 1.0}), [1]
    )


def test_conflicts_tie_goes_to_lowest_class_id():
    votes = votes_of((2, ([1], [8])), (4, ([1], [8])))
    np.testing.assert_array_equal(
        tagger.resolve_class_conflicts(votes, {2: 1.0, 4: 1.0}), [2]
    )


def test_conflicts_only_positive_classes_compete():
    votes = votes_of((1, ([1, 0, 0], [9, 5, 0])), (2, ([0, 1, 0], [3, 3, 0])))
    np.testing.assert_array_equal(
        tagger.resolve_class_conflicts(votes, {1: 0.6, 2: 1.4}), [1, 2, 0]
    )


def test_conflicts_weight_can_flip_a_majority():
    # class 2 has fewer votes but a high weight: 5*1.4 > 6*1.0
    votes = votes_of((1, ([1], [6])), (2, ([1], [5])))
    np.testing.assert_array_equal(
        tagger.resolve_class_conflicts(votes, {1: 1.0, 2: 1.4}), [2]
    )
    np.testing.assert_array_equal(
        tagger.resolve_class_conflicts(votes, {1: 1.0, 2: 1.2}), [1]
    )


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


def test_grid_search_enumerates_and_pins_first_class(monkeypatch):
    train, dev = tiny_corpora()
    classes = sorted({k.class_id for k in dev.kphrases})
    fake_votes = {
        s.sentence_id: {
            c: (np.zeros(len(s.tokens)), np.zeros(len(s.tokens))) for c in classes
        }
        for s in dev.sentences
    }
    monkeypatch.setattr(tagger, "batched_class_votes",
                        lambda *a, **k: fake_votes)
    evals = []
    real_score = tagger.evaluation.score_task_a
    monkeypatch.setattr(tagger.evaluation, "score_task_a",
                        lambda gold, pred: evals.append(1) or real_score(gold, pred))
    ensembles = {c: None for c in classes}
    weights = tagger.grid_search_weights(
        ensembles, dev, tagger.JoinRuleTable(rules={}), None, None,
        grid=(0.6, 1.0, 1.4), features=[],
    )
    assert len(evals) == 3 ** (len(classes) - 1)
    assert weights[classes[0]] == 1.0
    assert set(weights) == set(classes)


# ---------------------------------------------------------------------------
# End-to-end on a tiny real model
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_task_a():
    train, dev = tiny_corpora()
    table = encoding.EmbeddingTable(dim=12)
    tagset = encoding.PosTagSet.from_corpus(train)
    feats = tagger.encode_corpus_a(train, table, tagset)
    dev_feats = tagger.encode_corpus_a(dev, table, tagset)
    ensembles = {}
    for c in (1, 2):
        e = tagger.train_ensemble(train, dev, c, TINY_CFG, base_seed=10 * c,
                                  table=table, tagset=tagset,
                                  train_features=feats, dev_features=dev_feats)
        ensembles[c] = tagger.prune_ensemble(e)
    model = tagger.TaskAModel(
        ensembles=ensembles,
        rules=tagger.learn_join_rules(train),
        weights={1: 1.0, 2: 1.2},
        table=table,
        tagset=tagset,
        cfg=TINY_CFG,
        class_labels=("C1", "C2", "C3", "C4"),
    )
    return model, dev


def test_missing_class_is_config_error():
    train, dev = tiny_corpora()
    with pytest.raises(ConfigError):
        tagger.train_ensemble(train, dev, 9, TINY_CFG,
                              table=encoding.EmbeddingTable(dim=8),
                              tagset=encoding.PosTagSet.from_corpus(train))


def test_predictions_are_valid_phrases(tiny_task_a):
    model, dev = tiny_task_a
    phrases = model.predict_corpus(dev)
    by_sentence = {s.sentence_id: s for s in dev.sentences}
    seen = set()
    for k in phrases:
        assert k.id not in seen
        seen.add(k.id)
        s = by_sentence[k.sentence_id]
        assert 0 <= k.token_span[0] < k.token_span[1] <= len(s.tokens)
        assert s.token_span_to_char(*k.token_span) == k.char_span
        assert k.class_id in (1, 2)


def test_model_round_trip_preserves_predictions(tiny_task_a, tmp_path):
    model, dev = tiny_task_a
    path = tmp_path / "a.kprl"
    model.save(path)
    again = tagger.TaskAModel.load(path)

    assert again.weights == model.weights
    assert again.cfg == model.cfg
    assert again.class_labels == model.class_labels
    assert again.rules.rules == model.rules.rules
    assert again.ensembles[1].kept == model.ensembles[1].kept
    for c in model.ensembles:
        for m0, m1 in zip(model.ensembles[c].members, again.ensembles[c].members):
            assert m0.seed == m1.seed and m0.dev_f1 == m1.dev_f1
            for a, b in zip(nn_core.param_leaves(m0.params),
                            nn_core.param_leaves(m1.params)):
                np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    before = [(k.sentence_id, k.char_span, k.class_id) for k in model.predict_corpus(dev)]
    after = [(k.sentence_id, k.char_span, k.class_id) for k in again.predict_corpus(dev)]
    assert before == after


def test_wrong_container_kind_rejected(tiny_task_a, tmp_path):
    _, _ = tiny_task_a
    path = tmp_path / "x.kprl"
    data_io.save_model({"kind": "task_b"}, {}, path)
    with pytest.raises(ConfigError):
        tagger.TaskAModel.load(path)
