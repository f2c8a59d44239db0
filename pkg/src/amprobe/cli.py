"""Command-line front end.

    amprobe synth|train-am|extract|probe|report|run-grid --config exp.yaml
    amprobe probe --config exp.yaml --task gender --layer 8
    amprobe score --scores scores.txt --trials trials.txt

Exit code 0 on success; any failure prints a single `error: ...` line on
stderr and exits nonzero.
"""

import argparse
import sys

import numpy as np

from .config import load_config
from .corpus import load_trial_list
from .harness import run_stage
from .metrics import ScoreSet, compute_eer, load_scores

_STAGE_COMMANDS = ("synth", "train-am", "extract", "probe", "report", "run-grid")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="amprobe",
        description="Layer-wise probing of a TDNN-F acoustic model with ECAPA-TDNN probes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--force", action="store_true", help="redo completed stages")
        if name == "probe":
            p.add_argument("--task", required=True, help="task name")
            p.add_argument("--layer", type=int, default=None, help="tap index (0 = MFCC)")
    score = sub.add_parser("score", help="EER from a score file and a trial list")
    score.add_argument("--scores", required=True, help="lines: <enroll> <test> <score>")
    score.add_argument("--trials", required=True, help="lines: <0|1> <enroll> <test>")
    return parser


def _cmd_score(args):
    entries = load_scores(args.scores)
    trials = load_trial_list(args.trials)
    labels = {(t.enroll_id, t.test_id): t.is_target for t in trials}
    scores, is_target = [], []
    for enroll, test, score in entries:
        if (enroll, test) not in labels:
            raise ValueError(f"score for ({enroll}, {test}) has no matching trial")
        scores.append(score)
        is_target.append(labels[(enroll, test)])
    eer, threshold = compute_eer(ScoreSet(np.array(scores), np.array(is_target)))
    print(f"eer={eer:.6f} threshold={threshold:.6f} n_trials={len(scores)}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "score":
            _cmd_score(args)
            return 0
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.out is not None:
            config.output_dir = args.out
        result = run_stage(
            config,
            args.command,
            task=getattr(args, "task", None),
            layer=getattr(args, "layer", None),
            force=args.force,
        )
        if args.command == "probe":
            for cell in result:
                print(
                    f"{cell.task} {cell.representation} {cell.metric}="
                    f"{cell.value:.6f} n_eval={cell.n_eval} status={cell.status}"
                )
        elif args.command == "run-grid":
            print(f"grid complete: results in {config.output_dir}")
        else:
            print(f"{args.command} done")
        return 0
    except Exception as exc:  # noqa: BLE001 - single-line CLI error contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
