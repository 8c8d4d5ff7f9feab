"""Command-line entry point.

Subcommands: preprocess, train, eval, generate, gradcheck, report.
Exit codes: 0 ok; 2 preprocess found nothing usable (also argparse usage
errors); 3 non-finite gradient during training; 4 checkpoint/config
mismatch in eval; 5 invalid generation primer; 6 gradient check failure.

Heavy imports happen inside the command functions so --threads can pin the
BLAS pool sizes before numpy loads; --threads 1 guarantees bit-for-bit
reproducible runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path


def _int_list(text: str):
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biaxial",
        description="Train a bi-axial LSTM on MIDI corpora and generate new pieces.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=0,
        help="bound BLAS worker threads (1 = deterministic); 0 leaves the default",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="quantize a directory of MIDI files into a cache")
    p.add_argument("in_dir", type=Path)
    p.add_argument("out_cache", type=Path)
    p.add_argument("--steps-per-measure", type=int, default=16)
    p.add_argument("--low-note", type=int, default=21)
    p.add_argument("--n-notes", type=int, default=88)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="run the optimization loop over a cache")
    p.add_argument("cache", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None, help="flat key=value file; "
                   "defaults to $BIAXIAL_CONFIG when set")
    p.add_argument("--resume", type=Path, default=None, help="continue from a checkpoint")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--time-layer-sizes", type=_int_list)
    p.add_argument("--note-layer-sizes", type=_int_list)
    p.add_argument("--window-half-width", type=int)
    p.add_argument("--steps-per-measure", type=int)
    p.add_argument("--low-note", type=int)
    p.add_argument("--n-notes", type=int)
    p.add_argument("--keep-prob", type=float)
    p.add_argument("--optimizer", choices=("adadelta", "sgd"))
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--grad-clip-norm", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-step log-likelihood of a checkpoint on a cache")
    p.add_argument("cache", type=Path)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--rescale-to", type=int, default=None,
                   help="rescale values by N_REF/n_notes for cross-range comparison")
    p.add_argument("--batch-windows", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="sample a new piece from a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--primer", type=Path, default=None, help=".mid/.midi or .nsm file")
    p.add_argument("--ticks-per-step", type=int, default=120)
    p.add_argument("--probs-out", type=Path, default=None,
                   help="write per-cell sampling probabilities as CSV")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--notes", type=int, default=6)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--time-sizes", type=_int_list, default=(4,))
    p.add_argument("--note-sizes", type=_int_list, default=(3,))
    p.add_argument("--window-half-width", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="render training-curve figures from a metric log")
    p.add_argument("metrics", type=Path)
    p.add_argument("--out-dir", type=Path, default=None)
    p.set_defaults(func=cmd_report)

    return parser


def cmd_preprocess(args) -> int:
    from .midi_io import MidiError, parse_midi
    from .note_state import EmptyDocument, quantize, save_matrix

    files = sorted(
        p for p in args.in_dir.iterdir()
        if p.is_file() and p.suffix.lower() in (".mid", ".midi")
    ) if args.in_dir.is_dir() else []
    if not files:
        print(f"error: no MIDI files in {args.in_dir}", file=sys.stderr)
        return 2

    args.out_cache.mkdir(parents=True, exist_ok=True)
    n_ok = 0
    for path in files:
        try:
            doc = parse_midi(path.read_bytes())
            matrix = quantize(
                doc,
                steps_per_measure=args.steps_per_measure,
                low_note=args.low_note,
                n_notes=args.n_notes,
            )
        except (MidiError, EmptyDocument, ValueError) as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
            continue
        out = args.out_cache / f"{path.stem}.nsm"
        save_matrix(matrix, out)
        n_played = int(matrix.cells[..., 1].sum())
        print(
            f"{path.name}: {n_played} notes, {matrix.n_dropped_notes} dropped, "
            f"{matrix.n_steps} steps -> {out.name}"
        )
        n_ok += 1
    print(f"cached {n_ok}/{len(files)} files in {args.out_cache}")
    return 0 if n_ok else 2


def _resolved_values(args) -> dict:
    from . import config as config_mod

    cfg_path = args.config or (
        Path(os.environ[config_mod.ENV_VAR]) if os.environ.get(config_mod.ENV_VAR) else None
    )
    file_values = config_mod.load_config_file(cfg_path) if cfg_path else None
    overrides = {
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "seq_len": args.seq_len,
        "seed": args.seed,
        "log_every": args.log_every,
        "checkpoint_every": args.checkpoint_every,
        "time_layer_sizes": args.time_layer_sizes,
        "note_layer_sizes": args.note_layer_sizes,
        "window_half_width": args.window_half_width,
        "steps_per_measure": args.steps_per_measure,
        "low_note": args.low_note,
        "n_notes": args.n_notes,
        "keep_prob": args.keep_prob,
        "optimizer": args.optimizer,
        "learning_rate": args.learning_rate,
        "rho": args.rho,
        "epsilon": args.epsilon,
        "grad_clip_norm": args.grad_clip_norm,
    }
    return config_mod.resolve(file_values, overrides)


def cmd_train(args) -> int:
    from . import config as config_mod
    from .checkpoint import load_checkpoint, save_checkpoint
    from .input_kernel import KernelConfig
    from .model import ModelConfig
    from .note_state import NoEligibleSource, load_corpus
    from .trainer import NonFiniteGradient, OptimizerConfig, TrainSchedule, train

    values = _resolved_values(args)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        model_cfg = resume.model_config
        opt_cfg = resume.optimizer_config
    else:
        model_cfg = ModelConfig(
            time_layer_sizes=values["time_layer_sizes"],
            note_layer_sizes=values["note_layer_sizes"],
            kernel=KernelConfig(
                window_half_width=values["window_half_width"],
                steps_per_measure=values["steps_per_measure"],
            ),
            keep_prob=values["keep_prob"],
            low_note=values["low_note"],
            n_notes=values["n_notes"],
        )
        opt_cfg = OptimizerConfig(
            method=values["optimizer"],
            learning_rate=values["learning_rate"],
            rho=values["rho"],
            epsilon=values["epsilon"],
        )
    schedule = TrainSchedule(
        iterations=values["iterations"],
        batch_size=values["batch_size"],
        seq_len=values["seq_len"],
        log_every=values["log_every"],
        checkpoint_every=values["checkpoint_every"],
        seed=values["seed"],
    )

    corpus = load_corpus(args.cache)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = args.out_dir / "metrics.csv"
    cache_files = (
        sorted(args.cache.glob("*.nsm")) if args.cache.is_dir() else [args.cache]
    )
    manifest = config_mod.build_manifest(values, cache_files, schedule.seed)

    def save(ckpt, path):
        save_checkpoint(ckpt, path)
        config_mod.write_manifest(manifest, Path(str(path) + ".manifest.json"))

    with open(metrics_path, "a") as log:
        def on_record(rec):
            log.write(rec.as_line() + "\n")
            log.flush()

        def on_checkpoint(ckpt):
            save(ckpt, args.out_dir / f"checkpoint_{ckpt.iteration:06d}.bax")

        try:
            final, records = train(
                corpus,
                model_cfg,
                opt_cfg,
                schedule,
                resume=resume,
                grad_clip_norm=values["grad_clip_norm"],
                on_record=on_record,
                on_checkpoint=on_checkpoint,
            )
        except NonFiniteGradient as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        except NoEligibleSource as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1

    ckpt_path = args.out_dir / "checkpoint.bax"
    save(final, ckpt_path)
    last = records[-1].per_step_ll if records else float("nan")
    print(
        f"trained {schedule.iterations} iterations (now at {final.iteration}); "
        f"last per-step log-likelihood {last:.3f}"
    )
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics: {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import ChecksumMismatch, load_checkpoint
    from .note_state import NoEligibleSource, load_corpus
    from .trainer import evaluate

    try:
        ckpt = load_checkpoint(args.checkpoint)
        corpus = load_corpus(args.cache)
        result = evaluate(
            corpus,
            ckpt,
            args.seq_len,
            rescale_to=args.rescale_to,
            batch_windows=args.batch_windows,
        )
    except (ChecksumMismatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NoEligibleSource as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"windows: {result.n_windows}")
    print(f"per-step log-likelihood mean: {result.mean_ll:.4f}")
    print(f"per-step log-likelihood best: {result.best_ll:.4f}")
    print(f"per-step log-likelihood median: {result.median_ll:.4f}")
    print(f"play channel: {result.play_ll:.4f}  articulation channel: {result.artic_ll:.4f}")
    return 0


def cmd_generate(args) -> int:
    from .checkpoint import load_checkpoint
    from .generator import GenerationConfig, InvalidPrimer, emit_midi, generate, write_probabilities
    from .midi_io import MidiError, parse_midi
    from .note_state import EmptyDocument, load_matrix, quantize

    if args.steps <= 0:
        print("error: --steps must be positive", file=sys.stderr)
        return 2

    ckpt = load_checkpoint(args.checkpoint)
    primer = None
    if args.primer is not None:
        mdl = ckpt.model_config
        try:
            if args.primer.suffix.lower() == ".nsm":
                primer = load_matrix(args.primer)
            else:
                doc = parse_midi(args.primer.read_bytes())
                primer = quantize(
                    doc,
                    steps_per_measure=mdl.kernel.steps_per_measure,
                    low_note=mdl.low_note,
                    n_notes=mdl.n_notes,
                )
        except (MidiError, EmptyDocument, ValueError) as exc:
            print(f"error: unusable primer {args.primer}: {exc}", file=sys.stderr)
            return 5

    try:
        trace = generate(
            ckpt,
            GenerationConfig(
                n_steps=args.steps,
                seed=args.seed,
                primer=primer,
                temperature=args.temperature,
            ),
        )
    except InvalidPrimer as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5

    emit_midi(trace, args.ticks_per_step, args.out)
    if args.probs_out is not None:
        write_probabilities(trace, args.probs_out)
    n_notes = int(trace.matrix.cells[..., 1].sum())
    print(f"generated {args.steps} steps, {n_notes} notes, seed {args.seed} -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_report

    reports, passed = run_report(
        seed=args.seed,
        n_notes=args.notes,
        n_steps=args.steps,
        batch=args.batch,
        time_sizes=args.time_sizes,
        note_sizes=args.note_sizes,
        window_half_width=args.window_half_width,
        eps=args.eps,
        corrupt=args.corrupt_backward,
    )
    width = max(len(r.name) for r in reports)
    for r in reports:
        mark = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_rel_err:.3e}  ({r.size} params)  {mark}")
    print(f"{'PASS' if passed else 'FAIL'}: tolerance {TOLERANCE:g}")
    return 0 if passed else 6


def cmd_report(args) -> int:
    from .report import render

    written = render(args.metrics, args.out_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in (
            "OPENBLAS_NUM_THREADS",
            "OMP_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ[var] = str(args.threads)  # must precede the numpy import
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
