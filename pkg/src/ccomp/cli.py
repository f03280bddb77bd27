"""Command-line entry point.

Subcommands: fit, train, sample, beam, harmonize, sweep, eval, oracle,
serve. Exit codes: 0 success, 1 usage error, 2 runtime error (including
unsatisfiable constraints). Generation subcommands require an explicit
seed so no run is silently nondeterministic.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CcompError, UnsatisfiableConstraintError, ZeroWeightError
from .harmonizer import (
    ConstraintSpec,
    HarmonizationRequest,
    evaluate_harmonization,
    format_sweep_table,
    harmonize,
    marginal_heatmap,
    sweep_fixed_subsets,
)
from .model import fit_ngram, load_model, save_model, sequence_log_prob
from .recurrent import train_recurrent
from .score import order_events, parse_score, serialize_score

DEFAULT_PORT = 8080


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_score(path: str):
    return parse_score(Path(path).read_bytes())


def _read_constraints(path: str | None) -> ConstraintSpec | None:
    if path is None:
        return None
    return ConstraintSpec.parse(Path(path).read_bytes())


def _read_corpus(paths: list[str]):
    """Scores with concrete pitches, reduced to (features, pitch list) pairs."""
    corpus = []
    for path in paths:
        score = _read_score(path)
        seq = order_events(score)
        if any(p is None for p in seq.pitches):
            raise CcompError(f"{path}: corpus scores must have concrete pitches")
        corpus.append((seq.features, list(seq.pitches)))
    return corpus


def _write_result(result, out_path: str, diagnostics: bool = True):
    out = Path(out_path)
    out.write_text(serialize_score(result.best_score))
    diag_path = out.with_suffix(out.suffix + ".diag.jsonl")
    if diagnostics:
        with diag_path.open("w") as fh:
            for record in result.diagnostics:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        heat_path = out.with_suffix(out.suffix + ".heatmap.json")
        heat_path.write_text(json.dumps(marginal_heatmap(result), sort_keys=True) + "\n")


def _parse_parts(text: str) -> frozenset[int]:
    if not text:
        return frozenset()
    try:
        return frozenset(int(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"--fix-parts expects comma-separated integers, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="ccomp", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ccomp {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit an n-gram model on score files")
    p.add_argument("--corpus", nargs="+", required=True, help="score files")
    p.add_argument("--order", "-k", type=int, default=2)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--alphabet", help="pitch range LO:HI (default: corpus pitches)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the recurrent model on score files")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--alphabet", help="pitch range LO:HI (default: corpus pitches)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    for name, needs_seed in (("sample", True), ("beam", False)):
        p = sub.add_parser(name, help=f"constrained {name} over a score's free pitches")
        p.add_argument("--model", default=os.environ.get("CCOMP_MODEL_PATH"))
        p.add_argument("--score", required=True)
        p.add_argument("--constraints")
        p.add_argument("--fix-parts", default="")
        p.add_argument("--paths", "-S", type=int, default=512)
        p.add_argument("--out", required=True)
        if needs_seed:
            p.add_argument("--seed", type=int, required=True)
            p.add_argument("--resample-policy", default="always",
                           choices=["always", "ess", "never"])

    p = sub.add_parser("harmonize", help="fix parts and regenerate the rest")
    p.add_argument("--model", default=os.environ.get("CCOMP_MODEL_PATH"))
    p.add_argument("--score", required=True)
    p.add_argument("--constraints")
    p.add_argument("--fix-parts", required=True)
    p.add_argument("--method", choices=["smc", "beam"], default="smc")
    p.add_argument("--paths", "-S", type=int, default=512)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--resample-policy", default="always",
                   choices=["always", "ess", "never"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="harmonize over all C(4, m) fixed-part subsets")
    p.add_argument("--model", default=os.environ.get("CCOMP_MODEL_PATH"))
    p.add_argument("--score", required=True)
    p.add_argument("-m", type=int, required=True, dest="m")
    p.add_argument("--method", choices=["smc", "beam"], default="smc")
    p.add_argument("--paths", "-S", type=int, default=512)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="log probability of a fully pitched score")
    p.add_argument("--model", default=os.environ.get("CCOMP_MODEL_PATH"))
    p.add_argument("--score", required=True)

    p = sub.add_parser("oracle", help="small-instance cross-check of the exact oracles")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int,
                   default=int(os.environ.get("CCOMP_PORT", DEFAULT_PORT)))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--model-dir")
    p.add_argument("--model", default=os.environ.get("CCOMP_MODEL_PATH"))
    p.add_argument("--ui-dir")
    return parser


def _require_model(args) -> object:
    if not args.model:
        raise UsageError("--model is required (or set CCOMP_MODEL_PATH)")
    return load_model(args.model)


def _parse_alphabet(text: str | None, corpus) -> list[int]:
    if text is None:
        return sorted({p for _, pitches in corpus for p in pitches})
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"--alphabet expects LO:HI, got {text!r}")
    if not 0 <= lo <= hi <= 127:
        raise UsageError("--alphabet range must satisfy 0 <= LO <= HI <= 127")
    return list(range(lo, hi + 1))


def _cmd_fit(args) -> int:
    corpus = _read_corpus(args.corpus)
    model = fit_ngram([pitches for _, pitches in corpus],
                      order=args.order, smoothing=args.smoothing,
                      alphabet=_parse_alphabet(args.alphabet, corpus))
    save_model(model, args.out)
    print(f"fitted {args.order}-gram on {len(corpus)} scores "
          f"(alphabet {model.vocab_size}) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    corpus = _read_corpus(args.corpus)
    alphabet = _parse_alphabet(args.alphabet, corpus)
    model = train_recurrent(corpus, alphabet, hidden=args.hidden,
                            epochs=args.epochs, learning_rate=args.learning_rate,
                            seed=args.seed)
    save_model(model, args.out)
    first = model.loss_history[0] if model.loss_history else float("nan")
    last = model.loss_history[-1] if model.loss_history else float("nan")
    print(f"trained recurrent model: loss {first:.4f} -> {last:.4f} -> {args.out}")
    return 0


def _cmd_generate(args, method: str) -> int:
    model = _require_model(args)
    score = _read_score(args.score)
    request = HarmonizationRequest(
        score=score,
        fixed_parts=_parse_parts(args.fix_parts),
        extra=_read_constraints(args.constraints),
        method=method,
        paths=args.paths,
        seed=getattr(args, "seed", 0),
        resample_policy=getattr(args, "resample_policy", "always"),
    )
    result = harmonize(request, model)
    _write_result(result, args.out)
    metrics = evaluate_harmonization(result, model)
    print(json.dumps({k: v for k, v in metrics.items() if k != "wall_ms"},
                     sort_keys=True))
    return 0


def _cmd_harmonize(args) -> int:
    return _cmd_generate(args, args.method)


def _cmd_sweep(args) -> int:
    model = _require_model(args)
    score = _read_score(args.score)
    report = sweep_fixed_subsets(score, args.m, args.method, args.paths,
                                 args.seed, model)
    table = format_sweep_table(report)
    if args.out:
        Path(args.out).write_text(table)
    else:
        sys.stdout.write(table)
    return 0


def _cmd_eval(args) -> int:
    model = _require_model(args)
    score = _read_score(args.score)
    seq = order_events(score)
    logp = sequence_log_prob(model, seq)
    print(json.dumps({
        "log_prob": logp,
        "mean_logp_note": logp / seq.n if seq.n else 0.0,
        "notes": seq.n,
    }, sort_keys=True))
    return 0


def _cmd_oracle(args) -> int:
    from .constraints import build_no_repeat, build_unary, conjoin
    from .model import NGramModel
    from .oracle import enumerate_exact_posterior, markov_fsm_exact, total_variation

    rng = np.random.default_rng(args.seed)
    v, n = 3, 5
    counts = {(): rng.random(v) * 10}
    for a in range(v):
        counts[(a,)] = rng.random(v) * 10
    model = NGramModel(order=2, smoothing=0.5, alphabet=list(range(v)), counts=counts)
    sets = [set(range(v)) for _ in range(n)]
    sets[2] = {1}
    constraint = conjoin([build_unary(sets, v), build_no_repeat(v)])
    enum = enumerate_exact_posterior(model, constraint, n)
    from .constraints import FsmConstraint

    assert isinstance(constraint, FsmConstraint)
    exact = markov_fsm_exact(model, constraint.fsm, n)
    dp = {seq_: exact.posterior_of(seq_) for seq_ in enum.probs}
    tv = total_variation(enum.probs, dp)
    print(json.dumps({
        "instances": 1, "support": len(enum.probs),
        "tv_enumeration_vs_dp": tv, "ok": tv < 1e-10,
    }, sort_keys=True))
    return 0 if tv < 1e-10 else 2


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(model_dir=args.model_dir, default_model=args.model,
                     ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "train": _cmd_train,
    "sample": lambda args: _cmd_generate(args, "smc"),
    "beam": lambda args: _cmd_generate(args, "beam"),
    "harmonize": _cmd_harmonize,
    "sweep": _cmd_sweep,
    "eval": _cmd_eval,
    "oracle": _cmd_oracle,
    "serve": _cmd_serve,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UnsatisfiableConstraintError, ZeroWeightError) as exc:
        position = getattr(exc, "position", getattr(exc, "step", None))
        print(f"error: unsatisfiable constraint: {exc} (position {position})",
              file=sys.stderr)
        return 2
    except (CcompError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
