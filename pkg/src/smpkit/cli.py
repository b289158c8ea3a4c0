"""Command-line pipeline around the movement engine.

Subcommands cover the full loop: synthesize or label price data, score
rollouts, derive curriculum records and group advantages, vote, and
evaluate. Every subcommand is deterministic for a given seed, so two
runs with the same inputs produce byte-identical outputs.

Settings resolve in precedence order: command-line flags, then a JSON
config file given via --config, then built-in defaults. Unknown config
keys are rejected rather than ignored.

Exit codes: 0 success, 2 validation or usage error, 3 I/O error,
4 internal error.
"""

import argparse
import json
import random
import sys
import traceback

from . import formats
from .curriculum import DifficultyRecord, curriculum_order
from .errors import EngineError, ValidationError
from .grpo import GrpoConfig, group_advantages
from .labeling import DateRange, MovementLabel, assign_splits, label_series
from .parsing import parse
from .rewards import RewardWeights, shape
from .service import DEFAULT_BATCH_CAP, DEFAULT_PORT, ServiceConfig, run_service
from .synth import synth_prices, synth_rollouts
from .voting import (
    DEFAULT_VOTE_KS,
    Ballot,
    grouped_report,
    macro_f1,
    majority_vote,
    random_bound,
    vote_curve,
)


def _num(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"config key {key!r} must be a number, got {value!r}")
    return float(value)


def _int(value, key):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"config key {key!r} must be an integer, got {value!r}")
    return value


def _text(value, key):
    if not isinstance(value, str):
        raise ValidationError(f"config key {key!r} must be a string, got {value!r}")
    return value


def _int_list(value, key):
    if not isinstance(value, list) or not value:
        raise ValidationError(f"config key {key!r} must be a non-empty list of integers")
    return [_int(v, key) for v in value]


def _accuracy_cfg(value, key):
    if isinstance(value, dict):
        return {_text(k, key): _num(v, key) for k, v in value.items()}
    return _num(value, key)


_CONFIG_SCHEMA = {
    "seed": _int,
    "alpha": _num,
    "beta": _num,
    "gamma": _num,
    "epsilon": _num,
    "kl_coef": _num,
    "std_guard": _num,
    "n_rollouts": _int,
    "vote_ks": _int_list,
    "ood_stock_count": _int,
    "ood_days": _int,
    "batch_cap": _int,
    "host": _text,
    "port": _int,
    "correct_rule": _text,
    "average": _text,
    "n_stocks": _int,
    "n_days": _int,
    "volatility": _num,
    "accuracy": _accuracy_cfg,
}

_DEFAULTS = {
    "seed": 0,
    "alpha": 1.0,
    "beta": 2.0,
    "gamma": 1.0,
    "epsilon": 0.2,
    "kl_coef": 0.001,
    "std_guard": 1e-8,
    "n_rollouts": 8,
    "vote_ks": list(DEFAULT_VOTE_KS),
    "ood_stock_count": 0,
    "ood_days": 0,
    "batch_cap": DEFAULT_BATCH_CAP,
    "host": "127.0.0.1",
    "port": DEFAULT_PORT,
    "correct_rule": "accuracy+format",
    "average": "macro",
    "n_stocks": 8,
    "n_days": 30,
    "volatility": 0.04,
    "accuracy": 0.6,
}


def _load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    unknown = sorted(set(raw) - set(_CONFIG_SCHEMA))
    if unknown:
        raise ValidationError(f"{path}: unknown config keys: {', '.join(unknown)}")
    return {key: _CONFIG_SCHEMA[key](value, key) for key, value in raw.items()}


class _Settings:
    """Flag > config file > default resolution for one invocation."""

    def __init__(self, args):
        self._args = args
        self._file = _load_config(getattr(args, "config", None))

    def get(self, key):
        flag = getattr(self._args, key, None)
        if flag is not None:
            return flag
        if key in self._file:
            return self._file[key]
        return _DEFAULTS[key]


def _weights(settings):
    return RewardWeights(
        alpha=settings.get("alpha"),
        beta=settings.get("beta"),
        gamma=settings.get("gamma"),
    )


def _grpo_config(settings):
    return GrpoConfig(
        epsilon=settings.get("epsilon"),
        kl_coef=settings.get("kl_coef"),
        std_guard=settings.get("std_guard"),
    )


def _parse_ks(value):
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        if not parts:
            raise ValidationError(f"invalid vote ks: {value!r}")
        try:
            return [int(p) for p in parts]
        except ValueError:
            raise ValidationError(f"invalid vote ks: {value!r}") from None
    return list(value)


def _parse_accuracy(value):
    """Accept a scalar in [0, 1] or a per-label spec like up=1.0,down=0.5,hold=0.2."""
    if isinstance(value, str):
        if "=" in value:
            profile = {}
            for part in value.split(","):
                name, _, raw = part.partition("=")
                label = MovementLabel.from_str(name.strip())
                try:
                    profile[label] = float(raw)
                except ValueError:
                    raise ValidationError(f"invalid accuracy spec: {value!r}") from None
            return profile
        try:
            return float(value)
        except ValueError:
            raise ValidationError(f"invalid accuracy spec: {value!r}") from None
    if isinstance(value, dict):
        return {MovementLabel.from_str(k): float(v) for k, v in value.items()}
    return float(value)


def _labeled_samples(bars_by_stock):
    samples = []
    for stock_id in sorted(bars_by_stock):
        samples.extend(label_series(bars_by_stock[stock_id]))
    return samples


def _group_by_prefix(ids_and_values):
    """Group (rollout_id, value) pairs by the sample id before '#'."""
    grouped = {}
    for rollout_id, value in ids_and_values:
        sample_id = rollout_id.split("#", 1)[0]
        grouped.setdefault(sample_id, []).append(value)
    return grouped


def _ballots_from_rollouts(rows):
    """Parse rollout texts into per-sample ballots.

    Unparseable rollouts are skipped and counted; a sample whose every
    rollout fails to parse is a validation error because it would
    otherwise silently drop out of the evaluation.
    """
    votes_by_sample = {}
    truths = {}
    skipped = 0
    for row in rows:
        sample_id = row["sample_id"]
        votes_by_sample.setdefault(sample_id, [])
        truth = MovementLabel.from_str(row["truth_label"])
        if sample_id in truths and truths[sample_id] is not truth:
            raise ValidationError(f"sample {sample_id!r} has conflicting truth labels")
        truths[sample_id] = truth
        parsed, _report = parse(row["text"])
        if parsed is None:
            skipped += 1
            continue
        votes_by_sample[sample_id].append(parsed.answer)
    ballots = []
    for sample_id, votes in votes_by_sample.items():
        if not votes:
            raise ValidationError(f"sample {sample_id!r} has no parseable votes")
        ballots.append(Ballot(sample_id=sample_id, votes=tuple(votes)))
    return ballots, truths, skipped


def _cmd_label(args):
    settings = _Settings(args)
    bars_by_stock = formats.read_price_csv(args.prices)
    samples = _labeled_samples(bars_by_stock)

    seed = settings.get("seed")
    stock_count = settings.get("ood_stock_count")
    if stock_count < 0:
        raise ValidationError(f"ood stock count must be >= 0, got {stock_count}")
    pool = sorted(bars_by_stock)
    k = min(stock_count, len(pool) // 2)
    ood_stocks = set()
    if k > 0:
        ood_stocks = set(random.Random(f"{seed}:ood-stocks").sample(pool, k))

    days = settings.get("ood_days")
    if days < 0:
        raise ValidationError(f"ood days must be >= 0, got {days}")
    dates = sorted({s.date for s in samples})
    days = min(days, len(dates))
    ood_dates = DateRange(dates[-days], dates[-1]) if days > 0 else None

    tagged = assign_splits(samples, ood_stocks, ood_dates)
    tagged.sort(key=lambda s: (s.stock_id, s.date))
    formats.write_samples(args.out, tagged)
    return 0


def _cmd_synth(args):
    settings = _Settings(args)
    seed = settings.get("seed")
    prices = synth_prices(
        seed,
        settings.get("n_stocks"),
        settings.get("n_days"),
        settings.get("volatility"),
    )
    formats.write_price_csv(args.out_prices, prices)
    samples = _labeled_samples(prices)
    rows = synth_rollouts(
        seed,
        samples,
        settings.get("n_rollouts"),
        _parse_accuracy(settings.get("accuracy")),
    )
    formats.write_rollouts(args.out_rollouts, rows)
    return 0


def _cmd_score(args):
    settings = _Settings(args)
    weights = _weights(settings)
    rows = formats.read_rollouts(args.rollouts)
    scored = [
        (row["id"], shape(row["text"], MovementLabel.from_str(row["truth_label"]), weights))
        for row in rows
    ]
    formats.write_scores(args.out, scored)
    return 0


def _cmd_advantage(args):
    settings = _Settings(args)
    std_guard = settings.get("std_guard")
    if args.groups is not None:
        groups = formats.read_reward_groups(args.groups)
    else:
        scores = formats.read_scores(args.from_scores)
        grouped = _group_by_prefix((rid, b.total) for rid, b in scores)
        groups = list(grouped.items())
    out_rows = []
    for group_id, rewards in groups:
        if len(rewards) < 2:
            raise ValidationError(
                f"group {group_id!r} has {len(rewards)} reward(s), needs at least 2"
            )
        out_rows.append((group_id, group_advantages(rewards, std_guard)))
    formats.write_advantages(args.out, out_rows)
    return 0


def _is_correct(breakdown, rule):
    if rule == "accuracy":
        return breakdown.accuracy == 1
    if rule == "accuracy+format":
        return breakdown.accuracy == 1 and breakdown.format == 1
    if rule == "full":
        return (
            breakdown.accuracy == 1
            and breakdown.format == 1
            and breakdown.consistency == 1
        )
    raise ValidationError(f"unknown correct rule {rule!r}")


def _cmd_curriculum(args):
    settings = _Settings(args)
    if args.records is not None:
        records = formats.read_difficulty_records(args.records)
    else:
        n_rollouts = settings.get("n_rollouts")
        rule = settings.get("correct_rule")
        scores = formats.read_scores(args.from_scores)
        grouped = _group_by_prefix(scores)
        records = []
        for sample_id, breakdowns in grouped.items():
            if len(breakdowns) < n_rollouts:
                raise ValidationError(
                    f"sample {sample_id!r} has {len(breakdowns)} scored rollouts, "
                    f"needs {n_rollouts}"
                )
            n_correct = sum(
                1 for b in breakdowns[:n_rollouts] if _is_correct(b, rule)
            )
            records.append(
                DifficultyRecord(
                    sample_id=sample_id, n_correct=n_correct, n_rollouts=n_rollouts
                )
            )
    ranks = {sid: i + 1 for i, sid in enumerate(curriculum_order(records))}
    formats.write_curriculum_rows(
        args.out, ((record, ranks.get(record.sample_id)) for record in records)
    )
    return 0


def _cmd_vote(args):
    if args.ballots is not None:
        ballots = formats.read_ballots(args.ballots)
    else:
        rows = formats.read_rollouts(args.from_rollouts)
        ballots, _truths, skipped = _ballots_from_rollouts(rows)
        if skipped:
            print(f"note: skipped {skipped} unparseable rollout(s)", file=sys.stderr)
    winners = [(b.sample_id, majority_vote(b.votes)) for b in ballots]
    formats.write_winners(args.out, winners)
    return 0


def _cmd_eval(args):
    settings = _Settings(args)
    seed = settings.get("seed")
    ks = _parse_ks(settings.get("vote_ks"))
    average = settings.get("average")

    rows = formats.read_rollouts(args.rollouts)
    samples = formats.read_samples(args.samples)
    by_id = {s.sample_id: s for s in samples}

    ballots, truths, skipped = _ballots_from_rollouts(rows)
    if skipped:
        print(f"note: skipped {skipped} unparseable rollout(s)", file=sys.stderr)
    for ballot in ballots:
        if ballot.sample_id not in by_id:
            raise ValidationError(f"rollouts reference unknown sample {ballot.sample_id!r}")
    for sample_id, truth in truths.items():
        if by_id[sample_id].label is not truth:
            raise ValidationError(
                f"sample {sample_id!r}: rollout truth {truth.value!r} disagrees "
                f"with labeled {by_id[sample_id].label.value!r}"
            )
    missing = sorted(s.sample_id for s in samples if s.sample_id not in truths)
    if missing:
        raise ValidationError(f"samples without rollouts: {missing[:5]}")

    truth_map = {s.sample_id: s.label for s in samples}
    per_k = vote_curve(ballots, truth_map, ks, seed)
    predictions = {b.sample_id: majority_vote(b.votes) for b in ballots}
    grouped = grouped_report(predictions, samples)
    bound = random_bound(samples)

    def section(report):
        doc = formats.report_to_dict(report)
        if average != "macro":
            doc[f"{average}_f1"] = macro_f1(report.confusion, average)
        return doc

    doc = {
        "global": section(grouped),
        "per_k": {str(k): section(per_k[k]) for k in sorted(per_k)},
        "per_split": {name: section(r) for name, r in grouped.per_split.items()},
        "per_label": {name: section(r) for name, r in grouped.per_label.items()},
        "random_bound": formats.random_bound_to_dict(bound),
    }
    formats.write_json(args.out, doc)
    if args.csv is not None:
        formats.write_report_csv(args.csv, doc)
    return 0


def _cmd_serve(args):
    settings = _Settings(args)
    config = ServiceConfig(
        host=settings.get("host"),
        port=settings.get("port"),
        batch_cap=settings.get("batch_cap"),
        weights=_weights(settings),
        grpo=_grpo_config(settings),
    )
    run_service(config)
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="smpkit",
        description=(
            "Deterministic pipeline for stock-movement labeling, response "
            "scoring, curriculum construction, and majority-vote evaluation."
        ),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="base seed for all randomized steps")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", required=True)

    p = sub.add_parser("label", parents=[common], help="label price bars into movement samples")
    p.add_argument("--prices", required=True, help="input OHLCV CSV")
    p.add_argument("--out", required=True, help="output samples JSONL")
    p.add_argument("--ood-stocks", type=int, dest="ood_stock_count",
                   help="number of stocks to hold out entirely")
    p.add_argument("--ood-days", type=int, dest="ood_days",
                   help="number of trailing sample dates to hold out")
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic prices and rollouts")
    p.add_argument("--out-prices", required=True, dest="out_prices")
    p.add_argument("--out-rollouts", required=True, dest="out_rollouts")
    p.add_argument("--n-stocks", type=int, dest="n_stocks")
    p.add_argument("--n-days", type=int, dest="n_days")
    p.add_argument("--n-rollouts", type=int, dest="n_rollouts")
    p.add_argument("--volatility", type=float)
    p.add_argument("--accuracy",
                   help="scalar in [0,1] or per-label spec up=X,down=Y,hold=Z")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("score", parents=[common], help="score rollouts against truth labels")
    p.add_argument("--rollouts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, help="format weight")
    p.add_argument("--beta", type=float, help="accuracy weight")
    p.add_argument("--gamma", type=float, help="consistency weight")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("advantage", parents=[common],
                       help="normalize rewards into within-group advantages")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--groups", help="JSONL of {group_id, rewards}")
    src.add_argument("--from-scores", dest="from_scores",
                     help="scores JSONL; rollouts group by the id prefix before '#'")
    p.add_argument("--out", required=True)
    p.add_argument("--std-guard", type=float, dest="std_guard")
    p.set_defaults(func=_cmd_advantage)

    p = sub.add_parser("curriculum", parents=[common],
                       help="bin samples by difficulty and rank the medium bin")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--records", help="JSONL of {sample_id, n_correct, n_rollouts}")
    src.add_argument("--from-scores", dest="from_scores",
                     help="scores JSONL; correctness counted per sample")
    p.add_argument("--out", required=True)
    p.add_argument("--n-rollouts", type=int, dest="n_rollouts")
    p.add_argument("--correct-rule", dest="correct_rule",
                   choices=("accuracy", "accuracy+format", "full"),
                   help="which score components must be 1 to count as correct")
    p.set_defaults(func=_cmd_curriculum)

    p = sub.add_parser("vote", parents=[common], help="majority-vote each sample's ballots")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ballots", help="JSONL of {sample_id, votes}")
    src.add_argument("--from-rollouts", dest="from_rollouts",
                     help="rollouts JSONL; votes are parsed answers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_vote)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate rollouts against labeled samples")
    p.add_argument("--rollouts", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--csv", help="also write flattened CSV rows here")
    p.add_argument("--ks", dest="vote_ks", help="comma-separated vote counts, e.g. 1,2,4,8")
    p.add_argument("--average", choices=("macro", "micro", "weighted"),
                   help="extra F1 averaging mode to report alongside macro")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", parents=[common], help="run the batch scoring HTTP service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--batch-cap", type=int, dest="batch_cap")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--kl-coef", type=float, dest="kl_coef")
    p.add_argument("--std-guard", type=float, dest="std_guard")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
