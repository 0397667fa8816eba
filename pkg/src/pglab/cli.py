"""Command-line front end: ``pglab <subcommand> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 1 invalid configuration or inconsistent inputs,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import config as config_mod
from .config import ConfigError, RunConfig
from .data import CorpusFormatError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _threads() -> None:
    raw = os.environ.get("PGLAB_THREADS")
    if raw is None:
        return
    try:
        if int(raw) < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"PGLAB_THREADS must be a positive integer, got {raw!r}") from None
    # keep BLAS from oversubscribing the cores the worker pool already uses
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def cmd_gen_data(cfg: RunConfig) -> int:
    from .pipeline import gen_data

    for name, path in gen_data(cfg).items():
        print(f"{name}\t{path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    from .pipeline import train_run

    res = train_run(cfg)
    last = res.log[-1] if res.log else None
    if last is not None:
        print(f"step {last[0]} nll {last[2]:.6g}")
    print(f"checkpoint\t{cfg.path('checkpoint')}")
    return EXIT_OK


def cmd_decode(cfg: RunConfig) -> int:
    from .pipeline import decode_run

    summaries = decode_run(cfg)
    print(f"decoded {len(summaries)} examples to {cfg.path('summaries_file')}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    from .pipeline import eval_run

    report = eval_run(cfg)
    sys.stdout.write(report.to_tsv())
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    from .pipeline import compare_run

    print(f"p_value\t{compare_run(cfg):.6g}")
    return EXIT_OK


def cmd_attn_kl(cfg: RunConfig) -> int:
    from .pipeline import attn_kl_run

    mat = attn_kl_run(cfg)
    sys.stdout.write((Path(cfg.output_dir) / "kl.tsv").read_text(encoding="utf-8"))
    return EXIT_OK if mat.size else EXIT_RUNTIME


def cmd_gradcheck(cfg: RunConfig) -> int:
    from .verify import check_all_modes

    worst = 0.0
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    rows = ["heads\tmode\tmax_rel_err"]
    for heads in (1, 4):
        for mode, err in check_all_modes(heads, seed=cfg.seed).items():
            rows.append(f"{heads}\t{mode}\t{err:.3e}")
            worst = max(worst, err)
    text = "\n".join(rows) + "\n"
    (Path(cfg.output_dir) / "gradcheck.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"max_rel_err\t{worst:.3e}")
    return EXIT_OK if worst < GRADCHECK_TOLERANCE else EXIT_RUNTIME


def cmd_experiment(cfg: RunConfig) -> int:
    from .experiment import format_table, run_experiment

    results = run_experiment(cfg)
    sys.stdout.write(format_table(results))
    return EXIT_OK


COMMANDS: dict[str, tuple[Callable[[RunConfig], int], str]] = {
    "gen-data": (cmd_gen_data, "write synthetic train/val/test corpora"),
    "train": (cmd_train, "two-phase training; writes checkpoints and the training log"),
    "decode": (cmd_decode, "beam-search the test corpus; writes summaries and trace"),
    "eval": (cmd_eval, "score summaries; writes report.tsv and scores.tsv"),
    "compare": (cmd_compare, "Wilcoxon signed-rank test between two per-example score files"),
    "attn-kl": (cmd_attn_kl, "pairwise head KL divergence on teacher-forced attention"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of a tiny model in every loss mode"),
    "experiment": (cmd_experiment, "run the head-count x extension grid and tabulate it"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pglab", description="Pointer-generator summarization lab.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
        group = p.add_argument_group("config keys (override the file)")
        for key, f in config_mod.FIELDS.items():
            group.add_argument(f"--{key}", f"--{key.replace('_', '-')}", dest=f"opt_{key}", metavar="VALUE",
                               help=f.metadata["doc"])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        _threads()
        args = build_parser().parse_args(argv)
        overrides = [(k[4:], v) for k, v in vars(args).items() if k.startswith("opt_") and v is not None]
        cfg = config_mod.load(args.config, overrides)
        if args.dump_config:
            sys.stdout.write(config_mod.dumps(cfg, with_docs=True))
            return EXIT_OK
        return COMMANDS[args.command][0](cfg)
    except (ConfigError, CorpusFormatError) as exc:
        print(f"pglab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        from .pipeline import ValidationError

        if isinstance(exc, ValidationError):
            print(f"pglab: error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print(f"pglab: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ArithmeticError) as exc:
        print(f"pglab: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
