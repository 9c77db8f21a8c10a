"""Command-line pipeline: synth, featurize, train, embed, score, eval, sweep.

Every stage reads and writes files.  A ``--config`` file of ``key = value``
lines supplies defaults for any flag of the chosen subcommand; flags given
on the command line win.  Exit status is 0 on success, 1 for invalid input
and 2 for failures while running.
"""

import argparse
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from ._validation import check_unit_weight, weight_grid
from .corpus import (
    AudioStore,
    SegmentKind,
    atomic_write_bytes,
    augment_training_set,
    load_manifest,
    save_manifest,
    wav_bytes,
)
from .dsp import FeatureArchive, FeatureConfig, featurize_manifest
from .evaluation import report, save_report, sweep_text, sweeps_from_pairs
from .extractor import Checkpoint, EmbeddingTable, ExtractorConfig, embed_corpus, train
from .scoring import Relation, build_eval_pairs, load_pairs, save_pairs
from .synth import PRESETS, SynthConfig, preset, synth_cv_corpus

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
MANIFEST_NAME = "manifest.tsv"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; here that is an input error
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _factors(text):
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _unit(text):
    try:
        return check_unit_weight(float(text), "weight")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid_step(text):
    step = float(text)
    n = round(1.0 / step) if step > 0 else 0
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError(f"grid step must divide 1 evenly, got {text}")
    return step


def read_config(path):
    """Parse ``key = value`` lines (``#`` comments) into an ordered dict."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            out[key.replace("_", "-")] = value.strip()
    return out


def config_argv(mapping):
    argv = []
    for key, value in mapping.items():
        argv.extend([f"--{key}", value])
    return argv


# --- subcommands ---------------------------------------------------------------

_SYNTH_FIELDS = [f for f in fields(SynthConfig)]


def cmd_synth(args):
    overrides = {
        f.name: getattr(args, f.name) for f in _SYNTH_FIELDS if getattr(args, f.name) is not None
    }
    base = preset(args.preset)
    mapping = {f.name: getattr(base, f.name) for f in _SYNTH_FIELDS}
    mapping.update(overrides)
    cfg = SynthConfig.from_mapping(mapping)
    waveforms, manifest = synth_cv_corpus(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ref, w in waveforms.items():
        atomic_write_bytes(out / ref, wav_bytes(w))
    save_manifest(manifest, out / MANIFEST_NAME)
    return f"synth: {len(waveforms)} recordings, {len(manifest.records)} segments -> {out / MANIFEST_NAME}"


def _feature_config(args):
    cfg = FeatureConfig(**{f.name: getattr(args, f.name) for f in fields(FeatureConfig)})
    cfg.validate()
    return cfg


def cmd_featurize(args):
    manifest = load_manifest(args.manifest)
    root = Path(args.audio_root) if args.audio_root else Path(args.manifest).parent
    cfg = _feature_config(args)
    augmented = augment_training_set(manifest, args.speed_factors) if args.speed_factors else manifest
    archive = featurize_manifest(augmented, AudioStore(root), cfg)
    archive.save(args.out)
    return (f"featurize: {len(archive)} segments, {cfg.num_mels} mels, "
            f"cmvn={'yes' if archive.cmvn is not None else 'no'} -> {args.out}")


def cmd_train(args):
    manifest = load_manifest(args.manifest)
    features = FeatureArchive.load(args.features)
    if args.speed_factors:
        manifest = augment_training_set(manifest, args.speed_factors)
    cfg = ExtractorConfig(
        num_layers=args.num_layers,
        hidden_units=args.hidden_units,
        embedding_dim=args.embedding_dim,
        dropout=args.dropout,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        pairs_per_sample=args.pairs_per_sample,
        task_weight=args.task_weight,
        pooling=args.pooling,
        seed=args.seed,
    )
    ckpt = train(manifest, features, cfg, SegmentKind(args.kind))
    ckpt.save(args.out)
    log = ckpt.training_log
    return (f"train {args.kind}: {log['num_samples']} segments, {log['num_classes']} classes, "
            f"final loss {log['epochs'][-1]['loss']:.4f}, train accuracy {log['train_accuracy']:.3f} -> {args.out}")


def cmd_embed(args):
    ckpt = Checkpoint.load(args.checkpoint)
    table = embed_corpus(ckpt, load_manifest(args.manifest), FeatureArchive.load(args.features))
    table.save(args.out)
    return f"embed {table.kind.value}: {len(table)} segments, dim {table.dim} -> {args.out}"


def _load_tables(args):
    emb_c, emb_cv = EmbeddingTable.load(args.emb_c), EmbeddingTable.load(args.emb_cv)
    ck_c, ck_cv = Checkpoint.load(args.ckpt_c), Checkpoint.load(args.ckpt_cv)
    for path, obj, kind in ((args.emb_c, emb_c, "C"), (args.emb_cv, emb_cv, "CV"),
                            (args.ckpt_c, ck_c, "C"), (args.ckpt_cv, ck_cv, "CV")):
        if obj.kind.value != kind:
            raise UsageError(f"{path}: expected a {kind} file, found {obj.kind.value}")
    return emb_c, emb_cv, Relation.from_checkpoint(ck_c), Relation.from_checkpoint(ck_cv)


def _score(args):
    manifest = load_manifest(args.manifest)
    emb_c, emb_cv, rel_c, rel_cv = _load_tables(args)
    pairs, skipped = build_eval_pairs(manifest, emb_c, emb_cv, rel_c, rel_cv, args.lambda_c,
                                      args.lambda_cv, args.w, mode=args.mode, aggregate=args.aggregate)
    if not pairs:
        raise UsageError("no test token has an eligible reference")
    return pairs, skipped


def cmd_score(args):
    pairs, skipped = _score(args)
    params = {"lambda_c": args.lambda_c, "lambda_cv": args.lambda_cv, "w": args.w,
              "mode": args.mode, "aggregate": args.aggregate}
    save_pairs(args.out, pairs, params)
    return f"score: {len(pairs) // 2} comparisons, {skipped} tokens skipped -> {args.out}"


def _pairs_from_file(path):
    pairs, _ = load_pairs(path)
    if not pairs:
        raise UsageError(f"{path}: no scored pairs")
    return pairs


def cmd_eval(args):
    pairs = _pairs_from_file(args.pairs)
    rep = report(pairs, weight_grid(args.grid_step))
    save_report(rep, args.out)
    m = rep.overall
    return (f"eval: {len(pairs) // 2} comparisons, EER C {m['C']['eer']:.3f} CV {m['CV']['eer']:.3f} "
            f"C+CV {m['C+CV']['eer']:.3f} -> {args.out}.txt")


def cmd_sweep(args):
    if args.pairs:
        pairs = _pairs_from_file(args.pairs)
    else:
        missing = [n for n in ("manifest", "emb_c", "emb_cv", "ckpt_c", "ckpt_cv") if not getattr(args, n)]
        if missing:
            raise UsageError("sweep needs --pairs or all of " + ", ".join("--" + n.replace("_", "-") for n in missing))
        pairs, _ = _score(args)
    sweeps = sweeps_from_pairs(pairs, weight_grid(args.grid_step))
    names = list(sweeps) if args.param == "all" else [args.param]
    text = "\n\n".join(sweep_text(n, sweeps[n]) for n in names) + "\n"
    if args.out:
        atomic_write_bytes(f"{args.out}.txt", text.encode("utf-8"))
        blob = json.dumps({n: sweeps[n] for n in names}, indent=2, sort_keys=True) + "\n"
        atomic_write_bytes(f"{args.out}.json", blob.encode("utf-8"))
    else:
        sys.stdout.write(text)
    best = ", ".join(f"{n}={next(r['weight'] for r in sweeps[n] if r['best']):.2f}" for n in names)
    return f"sweep: best {best}" + (f" -> {args.out}.txt" if args.out else "")


# --- parser --------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", metavar="FILE", help="key = value file with defaults for these flags")
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness in this command")
    p.add_argument("--threads", type=int, default=1,
                   help="cap on BLAS threads; 1 guarantees reproducible output")


def _score_inputs(p, required):
    p.add_argument("--manifest", required=required)
    p.add_argument("--emb-c", required=required, help="C embedding table")
    p.add_argument("--emb-cv", required=required, help="CV embedding table")
    p.add_argument("--ckpt-c", required=required, help="C checkpoint (relation head)")
    p.add_argument("--ckpt-cv", required=required, help="CV checkpoint (relation head)")
    p.add_argument("--lambda-c", type=_unit, default=0.5,
                   help="cosine weight for C scores (best reported value: 0.9 child-only, 1.0 child+adult)")
    p.add_argument("--lambda-cv", type=_unit, default=0.5,
                   help="cosine weight for CV scores (best reported value: 0.2 child-only, 0.1 child+adult)")
    p.add_argument("--w", type=_unit, default=0.5,
                   help="C weight in the C/CV fusion (best reported value: 0.4 child-only, 0.5 child+adult)")
    p.add_argument("--mode", choices=("pair", "aggregate"), default="pair",
                   help="one comparison per reference token, or one per test token")
    p.add_argument("--aggregate", choices=("mean", "max"), default="mean",
                   help="reference aggregation in aggregate mode")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="cvdetect", description="Consonant error detection with C and CV embeddings.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic WAV corpus and manifest", formatter_class=fmt)
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default",
                   help="'corrupted' masks the consonant cue in most tokens")
    for f in _SYNTH_FIELDS:
        shown = ",".join(map(str, f.default)) if isinstance(f.default, tuple) else f.default
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       help=f"generator setting (preset value; default preset: {shown})")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="log-mel features and CMVN statistics", formatter_class=fmt)
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", help="directory holding the WAVs (default: the manifest's directory)")
    p.add_argument("--out", required=True, help="feature archive path")
    p.add_argument("--speed-factors", type=_factors, default=(0.9, 1.1),
                   help="speed perturbation of training segments; empty string disables (published: 0.9,1.1)")
    fc = FeatureConfig()
    p.add_argument("--frame-length", type=float, default=fc.frame_length, help="ms")
    p.add_argument("--frame-shift", type=float, default=fc.frame_shift, help="ms")
    p.add_argument("--num-mels", type=int, default=fc.num_mels, help="mel filters (published: 80)")
    p.add_argument("--fft-size", type=int, default=fc.fft_size)
    p.add_argument("--preemphasis", type=float, default=fc.preemphasis)
    p.add_argument("--low-freq", type=float, default=fc.low_freq, help="Hz")
    p.add_argument("--high-freq", type=float, default=fc.high_freq, help="Hz")
    p.add_argument("--log-floor", type=float, default=fc.log_floor)
    p.set_defaults(func=cmd_featurize)

    ec = ExtractorConfig()
    p = sub.add_parser("train", help="train a C or CV embedding extractor", formatter_class=fmt)
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="feature archive from 'featurize'")
    p.add_argument("--kind", choices=("C", "CV"), required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--speed-factors", type=_factors, default=(0.9, 1.1),
                   help="must match the factors used by 'featurize' (published: 0.9,1.1)")
    p.add_argument("--num-layers", type=int, default=ec.num_layers, help="Bi-GRU layers (published: 3)")
    p.add_argument("--hidden-units", type=int, default=ec.hidden_units, help="per direction (published: 400)")
    p.add_argument("--embedding-dim", type=int, default=ec.embedding_dim, help="(published: 128)")
    p.add_argument("--dropout", type=float, default=ec.dropout, help="(published: 0.5)")
    p.add_argument("--learning-rate", type=float, default=ec.learning_rate, help="Adam (published: 0.001)")
    p.add_argument("--weight-decay", type=float, default=ec.weight_decay, help="(published: 0.0005)")
    p.add_argument("--batch-size", type=int, default=ec.batch_size, help="(published: 256)")
    p.add_argument("--epochs", type=int, default=ec.epochs, help="(published: 5)")
    p.add_argument("--pairs-per-sample", type=int, default=ec.pairs_per_sample,
                   help="in-batch partners per sample for the relation loss")
    p.add_argument("--task-weight", type=_unit, default=ec.task_weight,
                   help="weight of the classification loss against the relation loss")
    p.add_argument("--pooling", choices=("last", "mean"), default=ec.pooling)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed every segment of the checkpoint's kind", formatter_class=fmt)
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="embedding table path")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("score", help="score test tokens against TD references", formatter_class=fmt)
    _common(p)
    _score_inputs(p, required=True)
    p.add_argument("--out", required=True, help="scored-pairs path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="EER/AUC report from scored pairs", formatter_class=fmt)
    _common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--grid-step", type=_grid_step, default=0.1, help="weight sweep step")
    p.add_argument("--out", required=True, help="report prefix; writes PREFIX.txt and PREFIX.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="EER/AUC as lambda or w moves from 0 to 1", formatter_class=fmt)
    _common(p)
    p.add_argument("--pairs", help="scored pairs; otherwise pairs are scored from the inputs below")
    _score_inputs(p, required=False)
    p.add_argument("--param", choices=("w", "lambda_C", "lambda_CV", "all"), default="w")
    p.add_argument("--grid-step", type=_grid_step, default=0.1)
    p.add_argument("--out", help="output prefix (PREFIX.txt, PREFIX.json); stdout when omitted")
    p.set_defaults(func=cmd_sweep)
    return parser


def _with_config(parser, argv):
    """Insert ``--config`` values ahead of the user's flags so the latter win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return argv
    if not rest or rest[0].startswith("-"):
        parser.error("the subcommand must come first")
    return [rest[0], *config_argv(read_config(known.config)), *rest[1:]]


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _with_config(parser, argv)
    except (OSError, UsageError) as exc:
        print(f"cvdetect: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    start = time.perf_counter()
    try:
        with threadpool_limits(limits=args.threads):
            summary = args.func(args)
    except (ValueError, KeyError, FileNotFoundError, IsADirectoryError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.filename}: {exc.strerror}"
        print(f"cvdetect {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"cvdetect {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{summary} ({time.perf_counter() - start:.1f}s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
