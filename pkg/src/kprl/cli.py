"""Command-line pipeline: synthesize, train, tune, predict, evaluate.

Every command is deterministic given its config and seed, never mutates
its inputs, and logs line-oriented progress to stdout. Exit codes:
0 success, 2 usage/config/parse problems, 3 numeric failure.
"""

import argparse
import sys
from pathlib import Path

from . import data_io, encoding, evaluation, relations, tagger
from .config import load_run_config
from .corpus import AnnotatedCorpus, RelationType
from .errors import ConfigError, GenerationError, NumericError, ParseError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _say(message):
    print(message, flush=True)


def _load_cfg(args, **extra):
    overrides = {"seed": getattr(args, "seed", None),
                 "workers": getattr(args, "workers", None)}
    overrides.update(extra)
    return load_run_config(getattr(args, "config", None), overrides)


def _build_table(cfg):
    if cfg.embedding_path:
        return encoding.load_embedding_file(cfg.embedding_path)
    return encoding.EmbeddingTable(dim=cfg.embed_dim)


def _read_split(data_dir, name, cfg):
    d = Path(data_dir) / name
    if not d.is_dir():
        raise ConfigError(f"missing corpus directory {d}")
    return data_io.read_corpus_dir(d, class_labels=cfg.class_labels,
                                   relations=_relation_registry(cfg))


def _relation_registry(cfg):
    return tuple(RelationType(n, i) for i, n in enumerate(cfg.relation_names))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    cfg = _load_cfg(args)
    grammar = data_io.default_grammar(cfg.noise_rate)
    corpora = data_io.generate_synthetic(
        grammar, cfg.seed, cfg.n_train, cfg.n_dev, cfg.n_test
    )
    out = Path(args.out)
    for name, corpus in zip(("train", "dev", "test"), corpora):
        data_io.write_corpus_dir(corpus, out / name, cfg.class_labels)
        _say(f"wrote {name}: {len(corpus.sentences)} sentences, "
             f"{len(corpus.kphrases)} phrases, {len(corpus.relations)} relations")
    return EXIT_OK


def cmd_train_a(args):
    cfg = _load_cfg(args)
    tc = cfg.train_config()
    train = _read_split(args.data, "train", cfg)
    dev = _read_split(args.data, "dev", cfg)
    table = _build_table(cfg)
    tagset = encoding.PosTagSet.from_corpus(train)
    train_feats = tagger.encode_corpus_a(train, table, tagset)
    dev_feats = tagger.encode_corpus_a(dev, table, tagset)
    ensembles = {}
    for class_id in range(1, len(cfg.class_labels) + 1):
        label = cfg.class_labels[class_id - 1]
        _say(f"training phrase class {label} ({cfg.ensemble_size} members)")
        ensemble = tagger.train_ensemble(
            train, dev, class_id, tc, base_seed=cfg.seed + 1000 * class_id,
            table=table, tagset=tagset, train_features=train_feats,
            dev_features=dev_feats, log=lambda line, lab=label: _say(f"[{lab}] {line}"),
        )
        ensemble = tagger.prune_ensemble(ensemble, sigma=tc.prune_sigma)
        _say(f"[{label}] kept {ensemble.kept_count}/{cfg.ensemble_size} members")
        ensembles[class_id] = ensemble
    model = tagger.TaskAModel(
        ensembles=ensembles,
        rules=tagger.learn_join_rules(train, tc.join_threshold),
        weights={c: 1.0 for c in ensembles},
        table=table,
        tagset=tagset,
        cfg=tc,
        class_labels=tuple(cfg.class_labels),
    )
    model.save(args.out)
    _say(f"saved phrase model to {args.out}")
    return EXIT_OK


def cmd_train_b(args):
    cfg = _load_cfg(args)
    tc = cfg.train_config()
    train = _read_split(args.data, "train", cfg)
    dev = _read_split(args.data, "dev", cfg)
    table = _build_table(cfg)
    tagset = encoding.PosTagSet.from_corpus(train)
    present = {r.relation.name for r in train.relations}
    ensembles = []
    for relation in _relation_registry(cfg):
        if relation.name not in present:
            _say(f"skipping relation {relation.name}: no training instances")
            continue
        _say(f"training relation {relation.name} ({cfg.ensemble_size} members)")
        ensemble = relations.train_relation_ensemble(
            train, dev, relation, tc, base_seed=cfg.seed + 1000 * (100 + relation.id),
            table=table, tagset=tagset,
            log=lambda line, name=relation.name: _say(f"[{name}] {line}"),
        )
        _say(f"[{relation.name}] kept {ensemble.kept_count}/{cfg.ensemble_size}, "
             f"dev precision {ensemble.dev_precision:.4f}, dev F1 {ensemble.dev_f1:.4f}")
        ensembles.append(ensemble)
    relations.rank_and_filter(ensembles, k=min(tc.top_k, len(ensembles))
                              if args.top_k is None else args.top_k)
    model = relations.TaskBModel(
        ensembles=ensembles,
        table=table,
        tagset=tagset,
        cfg=tc,
        class_labels=tuple(cfg.class_labels),
    )
    model.save(args.out)
    _say(f"saved relation model to {args.out}")
    return EXIT_OK


def cmd_tune(args):
    cfg = _load_cfg(args)
    dev = _read_split(args.data, "dev", cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model_a = tagger.TaskAModel.load(args.model_a)
    weights = tagger.grid_search_weights(
        model_a.ensembles, dev, model_a.rules, model_a.table, model_a.tagset,
        grid=model_a.cfg.weight_grid, threshold=model_a.cfg.threshold,
        batch_size=model_a.cfg.batch_size,
    )
    model_a.weights = weights
    model_a.save(out / "model_a.kprl")
    _say("tuned class weights: " + " ".join(
        f"{model_a.class_labels[c - 1]}={w:g}" for c, w in sorted(weights.items())
    ))

    if args.model_b:
        model_b = relations.TaskBModel.load(args.model_b)
        k = args.top_k if args.top_k is not None else model_b.cfg.top_k
        relations.rank_and_filter(model_b.ensembles, k=k)
        active = [e.relation.name for e in model_b.ensembles if e.active]
        model_b.save(out / "model_b.kprl")
        _say(f"active relations (top {k} by dev F1): " + " ".join(active))
    return EXIT_OK


def cmd_predict(args):
    scenario = args.scenario
    if scenario in (1, 2) and not args.model_a:
        raise ConfigError(f"scenario {scenario} needs --model-a")
    if scenario in (1, 3) and not args.model_b:
        raise ConfigError(f"scenario {scenario} needs --model-b")
    model_a = tagger.TaskAModel.load(args.model_a) if args.model_a else None
    model_b = relations.TaskBModel.load(args.model_b) if args.model_b else None
    labels = (model_a or model_b).class_labels
    corpus = data_io.read_corpus_dir(args.input, class_labels=labels)

    if scenario == 2:
        phrases = model_a.predict_corpus(corpus)
        result = AnnotatedCorpus(sentences=corpus.sentences, kphrases=phrases)
        data_io.write_corpus_dir(result, args.out, labels, include_relations=False)
    elif scenario == 3:
        if not corpus.kphrases:
            raise ConfigError("scenario 3 needs gold phrases in the input")
        rels = model_b.predict_corpus(corpus, corpus.kphrases)
        result = AnnotatedCorpus(sentences=corpus.sentences,
                                 kphrases=corpus.kphrases, relations=rels)
        data_io.write_corpus_dir(result, args.out, labels, include_phrases=False)
    else:
        phrases = model_a.predict_corpus(corpus)
        rels = model_b.predict_corpus(corpus, phrases)
        result = AnnotatedCorpus(sentences=corpus.sentences,
                                 kphrases=phrases, relations=rels)
        data_io.write_corpus_dir(result, args.out, labels)
    _say(f"scenario {scenario}: wrote {len(result.kphrases)} phrases, "
         f"{len(result.relations)} relations to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    gold = data_io.read_corpus_dir(args.gold)
    if args.scenario == 2:
        pred = data_io.read_corpus_dir(args.pred)
        scores = evaluation.score_task_a(gold.kphrases, pred.kphrases)
    elif args.scenario == 3:
        pred = data_io.read_corpus_dir(args.pred, base_kphrases=gold.kphrases)
        scores = evaluation.score_task_b(
            gold.relations, pred.relations, gold.kphrases, pred.kphrases
        )
    else:
        pred = data_io.read_corpus_dir(args.pred)
        scores = evaluation.score_pipeline(
            gold.kphrases, pred.kphrases, gold.relations, pred.relations
        )
    named = {f"scenario{args.scenario}": scores}
    _say(evaluation.format_report(named))
    report_path = Path(args.out) if args.out else Path(args.pred) / "report.json"
    report_path.write_text(evaluation.report_json(named) + "\n", encoding="utf-8")
    _say(f"report written to {report_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kprl",
        description="Key-phrase and relation extraction pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--workers", type=int, help="worker count (training)")

    p = sub.add_parser("synth", help="generate synthetic corpora")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-a", help="train the phrase taggers")
    common(p)
    p.add_argument("--data", required=True, help="directory with train/ and dev/")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train_a)

    p = sub.add_parser("train-b", help="train the relation models")
    common(p)
    p.add_argument("--data", required=True, help="directory with train/ and dev/")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--top-k", type=int, help="active relation count")
    p.set_defaults(func=cmd_train_b)

    p = sub.add_parser("tune", help="grid-search weights and rank relations on dev")
    common(p)
    p.add_argument("--data", required=True, help="directory with dev/")
    p.add_argument("--model-a", required=True, help="phrase model to tune")
    p.add_argument("--model-b", help="relation model to re-rank")
    p.add_argument("--out", required=True, help="directory for tuned models")
    p.add_argument("--top-k", type=int, help="active relation count")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("predict", help="annotate a corpus directory")
    p.add_argument("--input", required=True, help="corpus directory to annotate")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True,
                   help="1 = full pipeline, 2 = phrases only, 3 = relations on gold phrases")
    p.add_argument("--model-a", help="phrase model")
    p.add_argument("--model-b", help="relation model")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--gold", required=True, help="gold corpus directory")
    p.add_argument("--pred", required=True, help="predicted corpus directory")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--out", help="report file (default: <pred>/report.json)")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
