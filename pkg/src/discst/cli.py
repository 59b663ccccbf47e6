"""Command-line pipelines.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import collections
import json
import logging
import sys
from pathlib import Path
from typing import Iterator, Sequence, TextIO

from .ablation import LadderGrid, run_ablation
from .config import LoadedData, RunConfig, load_data, parse_override
from .corpus import (
    LabeledExample,
    Vocabulary,
    build_vocabulary,
    encode_words,
    label_histogram,
    read_text_corpus,
    read_tsv,
    read_unpunctuated,
    render,
    write_tsv,
)
from .decode import WindowSpec, decode_many
from .errors import ConfigError, DataError, TrainingError
from .labels import CHINESE5, ENGLISH4, LABEL_SETS, get_label_set
from .metrics import paired_significance, score
from .model import ModelParams, init_params, load_checkpoint, save_checkpoint
from .selftrain import (
    evaluate,
    labels_fingerprint,
    pseudo_label,
    self_train_loop,
    train_supervised,
    tune_hyperparams,
    tune_window,
)

logger = logging.getLogger("discst")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# shared helpers


def _overrides(args) -> list[dict]:
    out = [parse_override(s) for s in args.set or []]
    if args.seed is not None:
        out.append({"seeds": [args.seed]})
    if args.epochs is not None:
        out.append({"selftrain": {"epochs": args.epochs}})
    window = {k: v for k, v in (("window", args.window), ("left_overlap", args.left_overlap),
                                ("right_overlap", args.right_overlap)) if v is not None}
    if window:
        out.append({"window": window})
    return out


def _run_dir(args, cfg: RunConfig) -> Path:
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json())
    return run_dir


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _window_from_args(args, default: WindowSpec = WindowSpec()) -> WindowSpec:
    return WindowSpec(
        default.window if args.window is None else args.window,
        default.left_overlap if args.left_overlap is None else args.left_overlap,
        default.right_overlap if args.right_overlap is None else args.right_overlap,
    )


def _load_model(args) -> tuple[ModelParams, Vocabulary, WindowSpec]:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint {ckpt} does not exist")
    params = load_checkpoint(ckpt)
    vocab_path = Path(args.vocab) if args.vocab else ckpt.parent / "vocab.txt"
    if not vocab_path.exists():
        raise DataError(f"vocabulary {vocab_path} does not exist")
    vocab = Vocabulary.load(vocab_path)
    if params.vocab_fingerprint and params.vocab_fingerprint != vocab.fingerprint():
        raise DataError(f"{vocab_path} is not the vocabulary {ckpt} was trained with")
    # the run's own window is the default; explicit flags win
    default = WindowSpec(min(64, params.config.max_positions), 20, 8)
    cfg_path = ckpt.parent / "config.json"
    if cfg_path.exists():
        default = WindowSpec(**json.loads(cfg_path.read_text())["window"])
    return params, vocab, _window_from_args(args, default)


def _label_set_for(params: ModelParams, name: str | None):
    if name:
        ls = get_label_set(name)
    else:
        ls = CHINESE5 if params.config.num_classes == CHINESE5.num_classes else ENGLISH4
    if ls.num_classes != params.config.num_classes:
        raise ConfigError(f"label set {ls.name} has {ls.num_classes} classes, model has {params.config.num_classes}")
    return ls


def _save_model(run_dir: Path, name: str, params: ModelParams, data: LoadedData) -> None:
    save_checkpoint(params, run_dir / name)
    data.vocab.save(run_dir / "vocab.txt")


def _metrics_block(params, data: LoadedData, cfg: RunConfig) -> dict:
    td = data.training_data(cfg.label_set)
    out = {"dev": evaluate(params, td, cfg.window()).to_dict()}
    if data.test:
        out["test"] = evaluate(params, td, cfg.window(), data.test).to_dict()
    return out


def _optional_splits(cfg: RunConfig, base: tuple[str, ...]) -> tuple[str, ...]:
    extra = tuple(k for k in ("test",) if cfg.raw["data"][k] is not None)
    return base + extra


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    stats = collections.Counter()
    label_set = get_label_set(args.label_set)
    examples = read_text_corpus(args.corpus, label_set, not args.keep_case, stats)
    if not examples:
        raise DataError(f"{args.corpus}: no examples")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tsv(examples, out / "data.tsv")
    vocab = build_vocabulary((w for e in examples for w in e.words), max_size=args.vocab_size)
    vocab.save(out / "vocab.txt")
    summary = {
        "examples": len(examples),
        "words": sum(len(e.words) for e in examples),
        "skipped_empty": stats["skipped_empty"],
        "vocab_size": len(vocab),
        "labels": label_histogram(examples),
    }
    _write_json(out / "summary.json", summary)
    print(f"examples\t{summary['examples']}")
    print(f"words\t{summary['words']}")
    for name, n in summary["labels"].items():
        print(f"{name}\t{n}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    data = load_data(cfg, _optional_splits(cfg, ("train", "dev")))
    run_dir = _run_dir(args, cfg)
    seed = cfg.seeds[0]
    st = cfg.st_config(seed)
    init = init_params(cfg.model_config(len(data.vocab)), seed, data.vocab.fingerprint())
    params, report = train_supervised(data.training_data(cfg.label_set), init, st)
    _save_model(run_dir, "model.npz", params, data)
    _write_json(run_dir / "report.json", {"train": report.to_dict(), "metrics": _metrics_block(params, data, cfg)})
    print(f"best dev F1 {report.best_val_f1:.4f} ({report.chosen_checkpoint})")
    return EXIT_OK


def cmd_selftrain(args) -> int:
    overrides = _overrides(args)
    if args.vanilla:
        overrides.append({"selftrain": {"alpha": 1.0, "beta_human": 0.0, "beta_pseudo": 0.0}})
    cfg = RunConfig.load(args.config, overrides)
    data = load_data(cfg, _optional_splits(cfg, ("train", "dev", "unlabeled")))
    if not data.unlabeled:
        raise DataError("self-training needs unlabeled text")
    run_dir = _run_dir(args, cfg)
    seed = cfg.seeds[0]
    init = init_params(cfg.model_config(len(data.vocab)), seed, data.vocab.fingerprint())
    td = data.training_data(cfg.label_set)
    best, report, pseudo_sets = self_train_loop(td, data.unlabeled, cfg.st_config(seed), init, teacher_beta=0.0)
    _save_model(run_dir, "model.npz", best, data)
    write_tsv(pseudo_sets[-1], run_dir / "pseudo.tsv")
    _write_json(run_dir / "report.json", {"selftrain": report.to_dict(), "metrics": _metrics_block(best, data, cfg)})
    print(f"iteration dev F1: {' '.join(f'{f:.4f}' for f in report.iteration_f1)}; kept iteration {report.best_iteration}")
    return EXIT_OK


def cmd_pseudo_label(args) -> int:
    params, vocab, window = _load_model(args)
    _label_set_for(params, args.label_set)
    unlabeled = read_unpunctuated(args.input, not args.keep_case)
    if not unlabeled:
        raise DataError(f"{args.input}: no text")
    pseudo = pseudo_label(params, unlabeled, vocab, window, batch_size=args.batch_size)
    write_tsv(pseudo, args.out)
    print(f"labeled {len(pseudo)} sequences, {sum(len(p.words) for p in pseudo)} words; "
          f"labels {labels_fingerprint(pseudo)[:16]}")
    return EXIT_OK


def _line_batches(stream: TextIO, lowercase: bool, size: int) -> Iterator[list[list[str]]]:
    batch = []
    for line in stream:
        words = (line.lower() if lowercase else line).split()
        batch.append(words)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def cmd_decode(args) -> int:
    params, vocab, window = _load_model(args)
    label_set = _label_set_for(params, args.label_set)
    stream = sys.stdin if args.input in (None, "-") else open(args.input, encoding="utf-8")
    try:
        for lines in _line_batches(stream, not args.keep_case, args.lines_per_batch):
            nonempty = [w for w in lines if w]
            encoded = [encode_words(w, vocab) for w in nonempty]
            preds = iter(decode_many(params, encoded, window, pad_id=vocab.pad_id))
            for words in lines:
                if not words:
                    sys.stdout.write("\n")
                    continue
                labs = tuple(label_set.labels[int(c)] for c in next(preds))
                sys.stdout.write(render(LabeledExample(tuple(words), labs)) + "\n")
            sys.stdout.flush()
    finally:
        if stream is not sys.stdin:
            stream.close()
    return EXIT_OK


def _read_aligned(pred_path, gold_path) -> tuple[list, list]:
    pred, gold = read_tsv(pred_path), read_tsv(gold_path)
    if len(pred) != len(gold):
        raise DataError(f"{pred_path} has {len(pred)} sequences, {gold_path} has {len(gold)}")
    for k, (p, g) in enumerate(zip(pred, gold)):
        if p.words != g.words:
            raise DataError(f"sequence {k}: predicted and gold tokens differ")
    return [[int(x) for x in e.labels] for e in pred], [[int(x) for x in e.labels] for e in gold]


def cmd_eval(args) -> int:
    for p in [args.pred, args.gold] + ([args.compare] if args.compare else []):
        if not Path(p).exists():
            raise DataError(f"{p} does not exist")
    pred, gold = _read_aligned(args.pred, args.gold)
    metrics = score(pred, gold, args.label_set, average=args.average)
    if args.format == "json":
        out = metrics.to_dict()
    elif args.format == "table":
        out = metrics.table(args.name)
    else:
        out = metrics.to_text()
    p_value = None
    if args.compare:
        other, _ = _read_aligned(args.compare, args.gold)
        p_value = paired_significance(pred, other, gold, trials=args.trials, seed=0, label_set=args.label_set)
    if args.format == "json":
        if p_value is not None:
            out["p_value"] = p_value
        print(json.dumps(out, indent=2, sort_keys=True))
    else:
        print(out.rstrip("\n"))
        if p_value is not None:
            print(f"p_value = {p_value:.6f}")
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    need = ("train", "dev", "unlabeled") if args.what in ("hyper", "both") else ("train", "dev")
    data = load_data(cfg, need)
    run_dir = _run_dir(args, cfg)
    seed = cfg.seeds[0]
    st = cfg.st_config(seed)
    td = data.training_data(cfg.label_set)
    init = init_params(cfg.model_config(len(data.vocab)), seed, data.vocab.fingerprint())
    teacher, t_report = train_supervised(td, init, st, beta=0.0)
    _save_model(run_dir, "teacher.npz", teacher, data)
    result: dict = {"teacher_dev_f1": t_report.best_val_f1}
    if args.what in ("window", "both"):
        overlaps = [tuple(o) for o in cfg.raw["tune"]["overlaps"]]
        W = st.window.window
        valid = [(lo, ro) for lo, ro in overlaps if W - lo - ro >= 1]
        best_w, rows = tune_window(teacher, td, W, valid)
        result["window"] = {"best": best_w.__dict__,
                            "leaderboard": [{"left": s.left_overlap, "right": s.right_overlap, "dev_f1": f}
                                            for s, f in rows]}
        print(f"best overlaps: left {best_w.left_overlap} right {best_w.right_overlap}")
        st = st.replace(window=best_w)
    if args.what in ("hyper", "both"):
        pseudo = pseudo_label(teacher, data.unlabeled, data.vocab, st.window)
        write_tsv(pseudo, run_dir / "pseudo.tsv")
        best_cfg, rows = tune_hyperparams(td, pseudo, init, st, cfg.grid())
        result["hyper"] = [{"alpha": r.alpha, "beta_human": r.beta_human, "beta_pseudo": r.beta_pseudo,
                            "dev_f1": r.val_f1} for r in rows]
        print(f"{'alpha':>6} {'beta1':>6} {'beta2':>6} {'dev F1':>8}")
        for r in rows:
            print(f"{r.alpha:6g} {r.beta_human:6g} {r.beta_pseudo:6g} {r.val_f1:8.4f}")
    _write_json(run_dir / "tune.json", result)
    return EXIT_OK


def cmd_ablate(args) -> int:
    overrides = _overrides(args)
    if args.seeds:
        overrides.append({"seeds": args.seeds})
    cfg = RunConfig.load(args.config, overrides)
    data = load_data(cfg, ("train", "dev", "test", "unlabeled"))
    if not data.test:
        raise DataError("ablation needs a test split")
    run_dir = _run_dir(args, cfg)
    result = run_ablation(data.training_data(cfg.label_set), data.unlabeled, data.test,
                          cfg.model_config(len(data.vocab)), cfg.st_config(), cfg.seeds,
                          LadderGrid(**cfg.ladder_kwargs()), out_path=run_dir / "ablation.json")
    text = result.report()
    (run_dir / "ablation.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_window_flags(p) -> None:
    p.add_argument("--window", type=int, help="window size W in subwords")
    p.add_argument("--left-overlap", type=int, help="left overlap Lo")
    p.add_argument("--right-overlap", type=int, help="right overlap Ro")


def _add_run_flags(p) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--run-dir", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    _add_window_flags(p)


def _add_model_flags(p) -> None:
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt next to the checkpoint)")
    p.add_argument("--label-set", choices=sorted(LABEL_SETS))
    p.add_argument("--keep-case", action="store_true", help="do not lowercase input")
    _add_window_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="discst", description="Punctuation prediction with discriminative self-training.")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="punctuated text -> token/label TSV and vocabulary")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--label-set", default="english4", choices=sorted(LABEL_SETS))
    p.add_argument("--vocab-size", type=int, default=8000)
    p.add_argument("--keep-case", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="supervised baseline on human labels")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("selftrain", help="teacher, pseudo labels, student")
    _add_run_flags(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--vanilla", action="store_true", help="alpha 1, no label smoothing")
    mode.add_argument("--disc", action="store_true", help="alpha, beta_human, beta_pseudo from the config")
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("pseudo-label", help="label unpunctuated text with a trained model")
    _add_model_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("decode", help="punctuate text line by line (stdin or --input)")
    _add_model_flags(p)
    p.add_argument("--input", help="text file, or - for stdin (default)")
    p.add_argument("--lines-per-batch", type=int, default=32)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score predicted TSV against gold TSV")
    p.add_argument("pred")
    p.add_argument("gold")
    p.add_argument("--label-set", default="english4", choices=sorted(LABEL_SETS))
    p.add_argument("--average", default="micro", choices=["micro", "macro"])
    p.add_argument("--format", default="text", choices=["text", "table", "json"])
    p.add_argument("--name", default="model", help="row name for --format table")
    p.add_argument("--compare", help="second prediction TSV for a paired significance test")
    p.add_argument("--trials", type=int, default=10000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", help="grid search over overlaps and/or (alpha, beta_human, beta_pseudo)")
    _add_run_flags(p)
    p.add_argument("--what", default="both", choices=["hyper", "window", "both"])
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("ablate", help="baseline to discriminative self-training ladder")
    _add_run_flags(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
