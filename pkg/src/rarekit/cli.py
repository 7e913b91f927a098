"""Command-line entry point for the full pipeline.

Subcommands: synth, split, prepend, train-retriever, retrieve, evaluate,
inspect. Every option can also come from a flat ``key = value`` config file
(``--config``); command-line flags override config values, and unknown
config keys are rejected. Data errors exit 1 with a one-line
``error: <category>: <message>``; usage errors exit 2. All artifacts are
written atomically, so failures never leave partial outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import corpus as corpus_mod
from . import embedding as embedding_mod
from . import metrics as metrics_mod
from . import prepender as prepender_mod
from . import retriever as retriever_mod
from . import splitter as splitter_mod
from . import synth as synth_mod
from .errors import ParseError, RarekitError, ValidationError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rarekit",
        description="Rare-word example retrieval and demonstration pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="flat key = value config file; flags override it")

    p = sub.add_parser("synth", help="generate a synthetic corpus with embeddings")
    add_config(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-utterances", type=int, default=synth_mod.SynthConfig.n_utterances)
    p.add_argument("--vocab-size", type=int, default=synth_mod.SynthConfig.vocab_size)
    p.add_argument("--n-rare-words", type=int, default=synth_mod.SynthConfig.n_rare_words)
    p.add_argument("--rare-frequency-mix", type=float,
                   default=synth_mod.SynthConfig.rare_frequency_mix)
    p.add_argument("--n-speakers", type=int, default=synth_mod.SynthConfig.n_speakers)
    p.add_argument("--dim", type=int, default=synth_mod.SynthConfig.dim)
    p.add_argument("--frames-per-token", type=int, default=synth_mod.SynthConfig.frames_per_token)
    p.add_argument("--noise-sigma", type=float, default=synth_mod.SynthConfig.noise_sigma)
    p.add_argument("--speaker-offset-sigma", type=float,
                   default=synth_mod.SynthConfig.speaker_offset_sigma)
    p.add_argument("--seed", type=int, default=synth_mod.SynthConfig.seed)

    p = sub.add_parser("split", help="re-split a corpus around its rare words")
    add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tst-size", type=int, default=None,
                   help="default: 2500, clamped to half the joint dev/tst set")

    p = sub.add_parser("prepend", help="build example-prepended pair datasets")
    add_config(p)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--tst-manifest", required=True)
    p.add_argument("--pool-manifest", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-retriever", help="train projection heads contrastively")
    add_config(p)
    p.add_argument("--pairs", required=True, help="pairs TSV from the prepend step")
    p.add_argument("--manifest", required=True, help="manifest covering main and example ids")
    p.add_argument("--query-store", required=True)
    p.add_argument("--candidate-store", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--out-dim", type=int, default=0, help="projection rows; 0 = store dim")
    p.add_argument("--pool-query", choices=["mean", "attention"], default="mean")
    p.add_argument("--pool-candidate", choices=["mean", "attention"], default="mean")
    p.add_argument("--pool-trainable", action="store_true",
                   help="train attention pooler query vectors too")
    p.add_argument("--batch-size", type=int, default=retriever_mod.TrainConfig.batch_size)
    p.add_argument("--learning-rate", type=float, default=retriever_mod.TrainConfig.learning_rate)
    p.add_argument("--epochs", type=int, default=retriever_mod.TrainConfig.epochs)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=retriever_mod.TrainConfig.optimizer)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("retrieve", help="exact top-k search over a candidate pool")
    add_config(p)
    p.add_argument("--model", required=True)
    p.add_argument("--query-manifest", required=True)
    p.add_argument("--query-store", required=True)
    p.add_argument("--candidate-manifest", nargs="+", required=True)
    p.add_argument("--candidate-store", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--exclude-same-speaker", action="store_true",
                   help="ignore candidates spoken by the query's speaker")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score hypotheses and retrieval results")
    add_config(p)
    p.add_argument("--tst-manifest", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--hyps", required=True, help="hypothesis TSV: id <TAB> text")
    p.add_argument("--align", default=None, help="alignment sidecar JSONL")
    p.add_argument("--lemmas", default=None, help="lemma sidecar TSV")
    p.add_argument("--results", default=None, help="retrieval results TSV")
    p.add_argument("--candidate-manifest", nargs="*", default=[],
                   help="manifests holding candidate transcripts for top-k scoring")
    p.add_argument("--gold-pairs", default=None, help="gold pairs TSV for the ceiling")
    p.add_argument("--pool-manifest", default=None, help="pool manifest backing gold pairs")
    p.add_argument("--k-values", default="1,5,10")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("inspect", help="describe a store, model, or manifest file")
    add_config(p)
    p.add_argument("path")

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse argv, honoring --config as a layer of defaults.

    Config values satisfy required options, so they are applied before the
    strict parse: a pre-pass extracts the subcommand and --config without
    enforcing anything, then the subparser's defaults are updated.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", default=None)
    pre_args, _ = pre.parse_known_args(argv)
    sub_actions = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    if pre_args.config is not None and pre_args.command in sub_actions.choices:
        overrides = _read_config(pre_args.config)
        subparser = sub_actions.choices[pre_args.command]
        known = {}
        for action in subparser._actions:
            for opt in action.option_strings:
                if opt.startswith("--"):
                    known[opt[2:]] = action
        defaults = {}
        for key, raw in overrides.items():
            action = known.get(key) or known.get(key.replace("_", "-"))
            if action is None:
                parser.error(
                    f"unknown config key {key!r} for subcommand {pre_args.command!r}"
                )
            defaults[action.dest] = _convert_config_value(action, raw, parser, key)
            action.required = False
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _convert_config_value(action, raw: str, parser, key: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return isinstance(action, argparse._StoreTrueAction)
        if lowered in ("false", "0", "no"):
            return not isinstance(action, argparse._StoreTrueAction)
        parser.error(f"config key {key!r} expects a boolean, got {raw!r}")
    if action.nargs in ("*", "+"):
        values = raw.split()
        return [action.type(v) if action.type else v for v in values]
    value = action.type(raw) if action.type else raw
    if action.choices and value not in action.choices:
        parser.error(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
    return value


def _read_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ParseError(f"expected 'key = value', got {stripped!r}", lineno)
                key, _, value = stripped.partition("=")
                key = key.strip()
                if not key:
                    raise ParseError("empty config key", lineno)
                if key in out:
                    raise ParseError(f"duplicate config key {key!r}", lineno)
                out[key] = value.strip()
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path!r}: {exc}") from None
    return out


def _cmd_synth(args) -> int:
    cfg = synth_mod.SynthConfig(
        n_utterances=args.n_utterances,
        vocab_size=args.vocab_size,
        n_rare_words=args.n_rare_words,
        rare_frequency_mix=args.rare_frequency_mix,
        n_speakers=args.n_speakers,
        dim=args.dim,
        frames_per_token=args.frames_per_token,
        noise_sigma=args.noise_sigma,
        speaker_offset_sigma=args.speaker_offset_sigma,
        seed=args.seed,
    )
    corpus = synth_mod.gen_corpus(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    corpus_mod.write_manifest(corpus, os.path.join(args.out_dir, "manifest.tsv"))
    for modality in (embedding_mod.SPEECH, embedding_mod.TEXT):
        store = synth_mod.gen_embeddings(corpus, cfg, modality)
        embedding_mod.write_store(store, os.path.join(args.out_dir, f"{modality}.rdke"))
    metrics_mod.write_alignment(
        synth_mod.gen_alignment(corpus), os.path.join(args.out_dir, "align.jsonl")
    )
    print(f"wrote {len(corpus)} utterances to {args.out_dir}")
    return 0


def _cmd_split(args) -> int:
    corpus = corpus_mod.parse_manifest(args.manifest)
    bundle = splitter_mod.partition(corpus, seed=args.seed, tst_size=args.tst_size)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, c in bundle.corpora.items():
        corpus_mod.write_manifest(c, os.path.join(args.out_dir, f"{name}.tsv"))
    splitter_mod.write_catalog(bundle.catalog, os.path.join(args.out_dir, "catalog.tsv"))
    sizes = {name: len(c) for name, c in bundle.corpora.items()}
    print(
        f"pool {sizes['pool']} / dev {sizes['dev']} / tst {sizes['tst']} / "
        f"train-reduced {sizes['train_reduced']}; catalog {len(bundle.catalog)} rare words"
    )
    return 0


def _cmd_prepend(args) -> int:
    train = corpus_mod.parse_manifest(args.train_manifest)
    tst = corpus_mod.parse_manifest(args.tst_manifest)
    pool = corpus_mod.parse_manifest(args.pool_manifest)
    catalog = splitter_mod.read_catalog(args.catalog)
    os.makedirs(args.out_dir, exist_ok=True)

    freqs = splitter_mod.count_frequencies(train)
    train_pairs = prepender_mod.build_prepended_train_set(train, freqs, seed=args.seed)
    prepender_mod.write_pairs(train_pairs, os.path.join(args.out_dir, "train_pairs.tsv"))

    gold_pairs, violations = prepender_mod.build_gold_test_set(tst, pool, catalog)
    prepender_mod.write_pairs(gold_pairs, os.path.join(args.out_dir, "gold_pairs.tsv"))
    # Copy-the-example hypotheses give evaluate a model-free baseline whose
    # rare-word accuracy exactly attains the oracle ceiling.
    hyps = {p.main.id: p.example.translation_raw for p in gold_pairs}
    metrics_mod.write_hyps(hyps, os.path.join(args.out_dir, "gold_copy_hyps.tsv"))
    for v in violations:
        print(f"warning: {v}", file=sys.stderr)
    print(f"wrote {len(train_pairs)} train pairs, {len(gold_pairs)} gold pairs")
    return 0


def _cmd_train_retriever(args) -> int:
    manifest = corpus_mod.parse_manifest(args.manifest)
    query_store = embedding_mod.read_store(args.query_store)
    candidate_store = embedding_mod.read_store(args.candidate_store)
    pairs = prepender_mod.read_pairs(args.pairs, manifest, manifest)
    if query_store.modality is None or candidate_store.modality is None:
        raise ValidationError("cannot train from an empty embedding store")
    out_dim = args.out_dim or query_store.dim
    if candidate_store.dim != query_store.dim:
        raise ValidationError(
            f"query store dim {query_store.dim} != candidate store dim {candidate_store.dim}"
        )

    def pool_cfg(kind: str) -> retriever_mod.PoolingConfig:
        if kind == "attention":
            return retriever_mod.PoolingConfig.attention(
                query_store.dim, trainable=args.pool_trainable
            )
        return retriever_mod.PoolingConfig.mean()

    model = retriever_mod.RetrieverModel.random_init(
        feature_dim=query_store.dim,
        out_dim=out_dim,
        seed=args.seed,
        pool_query=pool_cfg(args.pool_query),
        pool_candidate=pool_cfg(args.pool_candidate),
        query_modality=query_store.modality,
        candidate_modality=candidate_store.modality,
    )
    cfg = retriever_mod.TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        seed=args.seed,
        optimizer=args.optimizer,
    )
    resolved = retriever_mod.resolve_pairs(pairs, query_store, candidate_store)
    model, curve = retriever_mod.train(model, resolved, cfg)
    retriever_mod.save_model(model, args.model_out)

    curve_path = os.path.splitext(args.model_out)[0] + "_loss.tsv"
    from ._fileio import atomic_write

    with atomic_write(curve_path) as fh:
        fh.write("epoch\tmean_loss\n")
        for epoch, loss in enumerate(curve, start=1):
            fh.write(f"{epoch}\t{loss!r}\n")
    if not args.no_figures:
        from .report import plot_loss_curve

        plot_loss_curve(curve, os.path.splitext(args.model_out)[0] + "_loss.png")
    final = f"{curve[-1]:.6f}" if curve else "n/a"
    print(f"trained {cfg.epochs} epochs on {len(pairs)} pairs; final loss {final}")
    return 0


def _cmd_retrieve(args) -> int:
    model = retriever_mod.load_model(args.model)
    queries = corpus_mod.parse_manifest(args.query_manifest)
    query_store = embedding_mod.read_store(args.query_store)
    candidate_store = embedding_mod.read_store(args.candidate_store)
    speakers: dict[str, str] = {u.id: u.speaker_id for u in queries}
    # The candidate manifests define the pool; the store may cover more.
    cand_ids: list[str] = []
    for path in args.candidate_manifest:
        for u in corpus_mod.parse_manifest(path):
            speakers[u.id] = u.speaker_id
            cand_ids.append(u.id)
    restricted = embedding_mod.EmbeddingStore(
        dim=candidate_store.dim, modality=candidate_store.modality
    )
    for cid in cand_ids:
        restricted.add(candidate_store.get(cid))
    pool = retriever_mod.encode_pool(model, restricted)
    results = []
    for utt in queries:
        results.append(
            retriever_mod.retrieve_topk(
                model,
                query_store.get(utt.id),
                pool,
                k=args.k,
                exclude_speaker=utt.speaker_id if args.exclude_same_speaker else None,
                speakers=speakers if args.exclude_same_speaker else None,
            )
        )
    retriever_mod.write_results(results, args.out)
    print(f"retrieved top-{args.k} for {len(results)} queries")
    return 0


def _cmd_evaluate(args) -> int:
    tst = corpus_mod.parse_manifest(args.tst_manifest)
    catalog = splitter_mod.read_catalog(args.catalog)
    hyps = metrics_mod.read_hyps(args.hyps)
    refs = {u.id: u.translation_raw for u in tst}
    align = metrics_mod.read_alignment(args.align) if args.align else None
    lemmas = metrics_mod.read_lemmas(args.lemmas) if args.lemmas else None

    tst_ids = set(tst.ids)
    missing = [i for i in tst_ids if i not in hyps]
    if missing:
        raise ValidationError(f"hypotheses missing for {len(missing)} test utterances, "
                              f"e.g. {sorted(missing)[:3]}")
    ordered_ids = list(tst.ids)
    report = metrics_mod.EvalReport(
        bleu=metrics_mod.bleu([hyps[i] for i in ordered_ids], [refs[i] for i in ordered_ids]),
        wer=metrics_mod.wer([hyps[i] for i in ordered_ids], [refs[i] for i in ordered_ids]),
    )

    tst_catalog = splitter_mod.RareWordCatalog(
        {w: e for w, e in catalog.entries.items() if e.devtst_utt in tst_ids}
    )
    if len(tst_catalog):
        acc = metrics_mod.rare_word_accuracy(hyps, refs, tst_catalog, align, lemmas, tst)
        report.rare_overall_pct = acc.overall_pct
        report.rare_zero_shot_pct = acc.zero_shot_pct
        report.rare_one_shot_pct = acc.one_shot_pct
        for w in acc.warnings[:20]:
            print(f"warning: {w}", file=sys.stderr)

    speakers = {u.id: u.speaker_id for u in tst}
    candidate_corpora = [corpus_mod.parse_manifest(p) for p in args.candidate_manifest]
    for c in candidate_corpora:
        for u in c:
            speakers.setdefault(u.id, u.speaker_id)

    if args.results:
        results = retriever_mod.read_results(args.results)
        k_values = [int(k) for k in str(args.k_values).split(",") if k]
        if not candidate_corpora:
            raise ValidationError("--results requires --candidate-manifest for transcripts")
        report.retrieval_topk_pct = metrics_mod.retrieval_topk_accuracy(
            results, tst_catalog, candidate_corpora, k_values
        )
        try:
            report.same_speaker_top1_pct = retriever_mod.same_speaker_proportion(
                results, speakers
            )
        except ValidationError:
            pass  # speakers not fully covered; proportion stays unset

    if args.gold_pairs:
        if not args.pool_manifest:
            raise ValidationError("--gold-pairs requires --pool-manifest")
        pool = corpus_mod.parse_manifest(args.pool_manifest)
        gold = prepender_mod.read_pairs(args.gold_pairs, tst, pool)
        if gold:
            report.ceiling_pct = metrics_mod.oracle_ceiling(catalog, gold, refs, align, lemmas)

    metrics_mod.write_report(report, args.out)
    base = os.path.splitext(args.out)[0]
    metrics_mod.write_report_tsv(report, base + ".tsv")
    if not args.no_figures:
        from .report import render_report_figures

        render_report_figures(report, os.path.join(os.path.dirname(args.out) or ".", "figures"))
    bleu_txt = f"{report.bleu:.2f}" if report.bleu is not None else "n/a"
    print(f"report written to {args.out} (BLEU {bleu_txt})")
    return 0


def _cmd_inspect(args) -> int:
    with open(args.path, "rb") as fh:
        magic = fh.read(4)
    if magic == embedding_mod.STORE_MAGIC:
        store = embedding_mod.read_store(args.path)
        print(f"embedding store: dim {store.dim}, modality {store.modality or 'n/a'}, "
              f"{len(store)} records")
    elif magic == retriever_mod.MODEL_MAGIC:
        model = retriever_mod.load_model(args.path)
        print(
            f"retriever model: {model.out_dim} x {model.feature_dim} projections, "
            f"query {model.query_modality}/{model.pool_query.kind}, "
            f"candidate {model.candidate_modality}/{model.pool_candidate.kind}"
        )
    else:
        corpus = corpus_mod.parse_manifest(args.path)
        speakers = {u.speaker_id for u in corpus}
        print(f"manifest: {len(corpus)} utterances, {len(speakers)} speakers")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "prepend": _cmd_prepend,
    "train-retriever": _cmd_train_retriever,
    "retrieve": _cmd_retrieve,
    "evaluate": _cmd_evaluate,
    "inspect": _cmd_inspect,
}


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
        return _COMMANDS[args.command](args)
    except RarekitError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {exc.category}: {message}", file=sys.stderr)
        return 1
    except OSError as exc:
        message = " ".join(str(exc).split())
        print(f"error: io: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
