"""Command-line interface.

Subcommands: train, eval, decode, gradcheck, synth, join-test.
Exit codes: 0 success, 1 numeric/training/data failure, 2 usage/config error.
Evaluation decoding parallelism is capped by the CORRBRIDGE_THREADS env var.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from ._version import __version__
from .checkpoint import CheckpointFormatError
from .data import (CorpusFormatError, SyntheticSpec, gen_synthetic_pivot,
                   join_on_pivot, read_pairs, tokenize, write_synthetic, write_tsv)
from .estimators import (CorrelationalEncoderDecoder, GuardError,
                         TwoStageEncoderDecoder, load_any)
from .gradcheck import run_gradcheck
from .metrics import (accuracy_grid_table, build_eval_report, compute_accuracy,
                      group_references)
from .networks import UNK, ConfigError
from .tensor import NumericError
from .trainer import TrainingError

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration: flat key = value text files
# ---------------------------------------------------------------------------

_CONFIG_SCHEMA = {
    # pipeline selection and data
    "pipeline": (str, None),
    "tokenizer": (str, "char"),
    "source_view": (str, "sequence"),
    "train_source_pivot": (str, None),
    "valid_source_pivot": (str, ""),
    "train_pivot_target": (str, None),
    "valid_pivot_target": (str, ""),
    "out_dir": (str, ""),
    # model and training hyperparameters
    "hidden_dim": (int, 64),
    "embed_dim": (int, 0),  # 0 = tied to hidden_dim
    "corr_weight": (float, 0.5),
    "learning_rate": (float, 1e-3),
    "batch_size": (int, 32),
    "max_epochs": (int, 30),
    "patience": (int, 5),
    "seed": (int, 0),
    "beam_width": (int, 1),
    "max_decode_len": (int, 0),  # 0 = derive from training data
    "grad_clip": (float, 5.0),
    "var_floor": (float, 1e-6),
    "valid_fraction": (float, 0.1),
    "inference_representation": (str, "raw"),
    "allow_corr_weight_outside_range": (bool, False),
    "allow_unequal_dims": (bool, False),
    "dtype": (str, "float32"),
}

_REQUIRED_KEYS = ("pipeline", "train_source_pivot", "train_pivot_target")


def _parse_bool(v):
    low = v.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise UsageError(f"not a boolean: {v!r}")


def parse_run_config(path):
    """Parse a flat key=value config file; unknown keys are rejected."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    values = {k: default for k, (_, default) in _CONFIG_SCHEMA.items()}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_SCHEMA:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            typ, _ = _CONFIG_SCHEMA[key]
            try:
                values[key] = _parse_bool(val) if typ is bool else typ(val)
            except (ValueError, UsageError) as e:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {e}") from None
    for key in _REQUIRED_KEYS:
        if not values[key]:
            raise UsageError(f"config is missing required key {key!r}")
    if values["pipeline"] not in ("two-stage", "correlational"):
        raise UsageError(f"pipeline must be 'two-stage' or 'correlational', "
                         f"got {values['pipeline']!r}")
    return values


def build_id():
    base = f"corrbridge-{__version__}"
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{base}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def _threads():
    raw = os.environ.get("CORRBRIDGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"CORRBRIDGE_THREADS must be an integer, got {raw!r}") from None


def _load_pairs_checked(path, key):
    if not path:
        return None
    if not os.path.exists(path):
        raise UsageError(f"data file for {key!r} not found: {path}")
    return read_pairs(path)


def _estimator_from_config(cfg):
    common = dict(
        hidden_dim=cfg["hidden_dim"],
        embed_dim=cfg["embed_dim"] or None,
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        seed=cfg["seed"],
        beam_width=cfg["beam_width"],
        max_decode_len=cfg["max_decode_len"] or None,
        grad_clip=cfg["grad_clip"],
        tokenizer=cfg["tokenizer"],
        source_view=cfg["source_view"],
        valid_fraction=cfg["valid_fraction"],
        allow_unequal_dims=cfg["allow_unequal_dims"],
        dtype=cfg["dtype"],
    )
    if cfg["pipeline"] == "two-stage":
        return TwoStageEncoderDecoder(**common)
    return CorrelationalEncoderDecoder(
        corr_weight=cfg["corr_weight"], var_floor=cfg["var_floor"],
        inference_representation=cfg["inference_representation"],
        allow_corr_weight_outside_range=cfg["allow_corr_weight_outside_range"],
        **common)


def _load_vector_pairs(path, key):
    pairs = _load_pairs_checked(path, key)
    out = []
    for src, tgt in pairs:
        try:
            out.append(([float(x) for x in src.split()], tgt))
        except ValueError:
            raise CorpusFormatError(f"{path}: source side is not a float vector") from None
    return out


def cmd_train(args):
    cfg = parse_run_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.beam is not None:
        cfg["beam_width"] = args.beam
    if args.pipeline:
        cfg["pipeline"] = args.pipeline
    out_dir = args.out or cfg["out_dir"] or "."
    os.makedirs(out_dir, exist_ok=True)

    loader = _load_vector_pairs if cfg["source_view"] == "vector" else _load_pairs_checked
    d1 = loader(cfg["train_source_pivot"], "train_source_pivot")
    d2 = _load_pairs_checked(cfg["train_pivot_target"], "train_pivot_target")
    d1_valid = (loader(cfg["valid_source_pivot"], "valid_source_pivot")
                if cfg["valid_source_pivot"] else None)
    d2_valid = _load_pairs_checked(cfg["valid_pivot_target"], "valid_pivot_target") \
        if cfg["valid_pivot_target"] else None

    est = _estimator_from_config(cfg)
    est.fit(d1, d2, source_pivot_valid=d1_valid, pivot_target_valid=d2_valid)

    ckpt_path = os.path.join(out_dir, "checkpoint.cbrg")
    est.save(ckpt_path)

    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    history = (est.history_ if isinstance(est.history_, list)
               else [dict(h, stage=name) for name, hist in est.history_.items()
                     for h in hist])
    with open(metrics_path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    report = {
        "pipeline": cfg["pipeline"],
        "config": cfg,
        "seed": cfg["seed"],
        "build_id": build_id(),
        "validation_accuracy": est.validation_accuracy_,
        "checkpoint": os.path.basename(ckpt_path),
        "metrics": os.path.basename(metrics_path),
    }
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {cfg['pipeline']} model: validation accuracy "
          f"{est.validation_accuracy_}", file=sys.stderr)
    print(ckpt_path)
    return EXIT_OK


def _decode_all(est, sources, beam, threads):
    """Decode in input order, optionally across threads; returns (texts, flags)."""
    if isinstance(est, TwoStageEncoderDecoder):
        def one(src):
            row = est.predict_detailed([src], beam_width=beam)[0]
            return row["output"], row.get("flags") or []
    else:
        def one(src):
            return est.predict([src], beam_width=beam)[0], []

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, sources))
    else:
        results = [one(s) for s in sources]
    return [r[0] for r in results], [r[1] for r in results]


def _eval_one_pair(ckpt, test_path, beam, threads):
    est = load_any(ckpt)
    pairs = read_pairs(test_path)
    _check_eval_vocab(est, pairs)
    grouped = group_references(pairs)
    sources = [src for src, _ in grouped]
    refs = [r for _, r in grouped]
    hyps, flags = _decode_all(est, sources, beam, threads)
    return est, grouped, sources, refs, hyps, flags


def _check_eval_vocab(est, pairs):
    tokenizer = est.tokenizer
    if isinstance(est, CorrelationalEncoderDecoder):
        if est.source_view == "vector":
            return
        vocab = est.model_.source_vocab
    else:
        vocab = est.stage1_.source_vocab
    total = unk = 0
    for src, _ in pairs:
        for tok in tokenize(src, tokenizer):
            total += 1
            unk += tok not in vocab.index
    if total and unk == total:
        raise UsageError(
            "checkpoint/vocabulary mismatch: every source token of the test set "
            "is unknown to the model")


def cmd_eval(args):
    threads = _threads()
    started = time.time()
    if args.pair:
        cells = {}
        for spec in args.pair:
            parts = spec.split(":", 3)
            if len(parts) != 4:
                raise UsageError(f"--pair expects SRC:TGT:CHECKPOINT:TEST, got {spec!r}")
            src_name, tgt_name, ckpt, test_path = parts
            _, _, _, refs, hyps, _ = _eval_one_pair(ckpt, test_path, args.beam, threads)
            cells[(src_name, tgt_name)] = compute_accuracy(hyps, refs)
        print(accuracy_grid_table(cells))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "eval_grid.json"), "w",
                      encoding="utf-8") as fh:
                json.dump({f"{s}->{t}": acc for (s, t), acc in cells.items()},
                          fh, indent=2, sort_keys=True)
                fh.write("\n")
        return EXIT_OK

    if not args.checkpoint or not args.test:
        raise UsageError("eval needs --checkpoint and --test (or --pair entries)")
    est, grouped, sources, refs, hyps, flags = _eval_one_pair(
        args.checkpoint, args.test, args.beam, threads)
    report = build_eval_report(
        sources, hyps, refs,
        config_echo=est.get_params(), seed=est.seed, build_id=build_id(),
        started_at=started, flags=flags)
    report["test_file"] = args.test
    report["checkpoint"] = args.checkpoint
    print(f"examples: {report['example_count']}")
    print(f"accuracy: {report['accuracy']:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval_report.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
    return EXIT_OK


def cmd_decode(args):
    est = load_any(args.checkpoint)
    if args.text is not None:
        inputs = [args.text]
    else:
        inputs = [line.rstrip("\n") for line in sys.stdin if line.strip()]
    texts, _ = _decode_all(est, inputs, args.beam, 1)
    for out in texts:
        print(out)
    return EXIT_OK


def cmd_gradcheck(args):
    results = run_gradcheck(seeds=args.seeds, tolerance=args.tolerance)
    failed = []
    for name, err, ok in results:
        print(f"{name:24s} worst_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    print(f"{len(results)} checks, {len(results) - len(failed)} passed, "
          f"{len(failed)} failed")
    return EXIT_OK if not failed else EXIT_FAILURE


def cmd_synth(args):
    spec = SyntheticSpec(
        alphabet_size=args.alphabet, min_len=args.min_len, max_len=args.max_len,
        transform_source=args.transform_source, transform_target=args.transform_target,
        n_source_pivot=args.n_source_pivot, n_pivot_target=args.n_pivot_target,
        n_test=args.n_test, n_source_pivot_valid=args.n_source_pivot_valid,
        n_pivot_target_valid=args.n_pivot_target_valid, seed=args.seed or 0)
    dataset = gen_synthetic_pivot(spec)
    files = write_synthetic(dataset, args.out)
    for name in files:
        print(os.path.join(args.out, name))
    return EXIT_OK


def cmd_join_test(args):
    pairs_a = _load_pairs_checked(args.a, "--a")
    pairs_b = _load_pairs_checked(args.b, "--b")
    joined, report = join_on_pivot(pairs_a, pairs_b)
    write_tsv(args.out, joined)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def make_parser():
    parser = argparse.ArgumentParser(
        prog="corrbridge",
        description="Pivot-based sequence generation: train, evaluate, decode.")
    parser.add_argument("--version", action="version", version=build_id())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a pipeline from a run config")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--pipeline", choices=["two-stage", "correlational"])
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test TSV")
    p.add_argument("--checkpoint")
    p.add_argument("--test")
    p.add_argument("--pair", action="append", default=[],
                   help="SRC:TGT:CHECKPOINT:TEST (repeatable; prints a grid)")
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="decode one input (or stdin lines) to stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("text", nargs="?", default=None)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every op")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic pivot dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--alphabet", type=int, default=20)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--transform-source", default="rot3")
    p.add_argument("--transform-target", default="reverse")
    p.add_argument("--n-source-pivot", type=int, default=3000)
    p.add_argument("--n-pivot-target", type=int, default=3000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--n-source-pivot-valid", type=int, default=0)
    p.add_argument("--n-pivot-target-valid", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("join-test", help="join two pivot-keyed test files")
    p.add_argument("--a", required=True, help="TSV of (pivot key, side A)")
    p.add_argument("--b", required=True, help="TSV of (pivot key, side B)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_join_test)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, CorpusFormatError, CheckpointFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, NumericError, GuardError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
