"""Command-line pipeline: simulate -> pool -> evaluate / groups.

Exit codes: 0 success, 1 usage, 2 data validation, 3 non-convergence.
Every subcommand accepts ``--config FILE.json`` whose keys mirror the long
flag names (dashes or underscores); explicit flags win over the file.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import NonConvergenceError, NumericalError, ValidationError
from .io import atomic_write, load_dataset, read_ranks_csv, write_logits_jsonl, write_ranks_csv
from .metrics import best_f1_threshold, format_table, kendall_tau, report
from .model import HyperPriors, build_index
from .posterior import (export_boxplot_csv, read_summary_json, select_groups, summarize_all,
                        write_summary_json)
from .sampler import SamplerConfig, run_chains, write_diagnostics_json
from .simkit import TruthConfig, simulate, write_truth_json
from .upstream.features import ScoreTable, gamer_mean_scores

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3

# leaderboard sections from best to worst
RANK_SECTIONS = ("S", "G", "A", "B", "C", "D")
_AT_LEAST_A = {"S", "G", "A"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _per_modality(values, m: int, name: str) -> tuple[float, ...]:
    values = list(values) if isinstance(values, (list, tuple)) else [float(values)]
    if len(values) == 1:
        values = values * m
    if len(values) != m:
        raise ValidationError(f"--{name} needs 1 or {m} values, got {len(values)}")
    return tuple(float(v) for v in values)


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON file with default values for any flag")
    p.add_argument("--seed", type=int, default=0, help="single source of all randomness")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skillpool", description="Bayesian pooling of per-modality skill evidence.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate logits and ranks from known hyperparameters")
    _add_common(p)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--gamers", type=int, default=50)
    p.add_argument("--modalities", type=int, default=3)
    p.add_argument("--mu", type=_float_list, default=[0.0])
    p.add_argument("--sigma", type=_float_list, default=[0.5])
    p.add_argument("--tau", type=_float_list, default=[1.0])
    p.add_argument("--logits-per-pair", type=int, default=None,
                   help="logits per (gamer, modality); default: uneven coverage pattern")
    p.add_argument("--validation-fraction", type=float, default=0.25)

    p = sub.add_parser("pool", help="sample the pooling posterior and summarize skills")
    _add_common(p)
    p.add_argument("--logits", type=Path, required=True)
    p.add_argument("--ranks", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iters", type=int, default=20000, help="iterations per chain, warmup included")
    p.add_argument("--warmup", type=int, default=10000)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-treedepth", type=int, default=10)
    p.add_argument("--init-radius", type=float, default=2.0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for chains")
    p.add_argument("--mu-loc", type=float, default=0.0)
    p.add_argument("--mu-scale", type=float, default=2.5)
    p.add_argument("--sigma-scale", type=float, default=1.0)
    p.add_argument("--tau-scale", type=float, default=1.0)
    p.add_argument("--centered", action="store_true", help="centered parameterization")
    p.add_argument("--strict-rhat", type=float, default=None,
                   help="exit 3 when any split-Rhat exceeds this value")

    p = sub.add_parser("evaluate", help="gamer-level classification metrics of score files")
    _add_common(p)
    p.add_argument("--scores", type=Path, required=True, help="CSV gamer,modality,datapoint,score")
    p.add_argument("--ranks", type=Path, required=True)
    p.add_argument("--summary", type=Path, default=None, help="summary.json; adds a pooled MAP row")
    p.add_argument("--out", type=Path, default=Path("."))

    p = sub.add_parser("groups", help="decile and below-A group selection from skill summaries")
    _add_common(p)
    p.add_argument("--summary", type=Path, required=True)
    p.add_argument("--ranks", type=Path, required=True)
    p.add_argument("--future-ranks", type=Path, default=None, help="CSV gamer,rank_section")
    p.add_argument("--rounding", choices=("ceil", "floor"), default="ceil")
    p.add_argument("--out", type=Path, default=Path("."))
    return parser


def _apply_config(parser, argv):
    # find the subcommand and config file before the full parse, so that
    # required flags may come from the file
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    commands = parser._subparsers._group_actions[0].choices
    if known.config is None or known.command not in commands:
        return parser.parse_args(argv)
    try:
        with open(known.config, encoding="utf-8") as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(values, dict):
        raise ValidationError(f"config {known.config} must hold a JSON object")
    subparser = commands[known.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest in ("config", "help") or dest not in actions:
            raise UsageError(f"unknown config key {key!r} for {known.command}")
        action = actions[dest]
        action.required = False
        if action.type is Path and value is not None:
            value = Path(value)
        elif action.type is _float_list and not isinstance(value, list):
            value = [value]
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {path}: {exc}") from None
    return path


def _require_file(path: Path, what: str):
    if not Path(path).is_file():
        raise ValidationError(f"{what} file not found: {path}")


def cmd_simulate(args) -> int:
    m = args.modalities
    if args.gamers < 1 or m < 1:
        raise ValidationError("--gamers and --modalities must be at least 1")
    config = TruthConfig(
        n_gamers=args.gamers, n_modalities=m,
        mu=_per_modality(args.mu, m, "mu"), sigma=_per_modality(args.sigma, m, "sigma"),
        tau=_per_modality(args.tau, m, "tau"), logits_per_pair=args.logits_per_pair,
        validation_fraction=args.validation_fraction, seed=args.seed,
    )
    dataset, truth = simulate(config)
    out = _ensure_dir(args.out)
    write_logits_jsonl(out / "logits.jsonl", dataset.logits)
    write_ranks_csv(out / "ranks.csv", dataset.ranks)
    write_truth_json(out / "truth.json", truth)
    print(f"wrote {len(dataset.logits)} logits and {len(dataset.ranks)} ranks to {out}")
    return EXIT_OK


def cmd_pool(args) -> int:
    _require_file(args.logits, "logits")
    _require_file(args.ranks, "ranks")
    dataset = load_dataset(args.logits, args.ranks)
    if dataset.validation_ranks()[0].size == 0:
        warnings.warn("no validation-split ranks: skills are driven by logits and priors only",
                      RuntimeWarning, stacklevel=2)
    priors = HyperPriors(args.mu_loc, args.mu_scale, args.sigma_scale, args.tau_scale)
    config = SamplerConfig(chains=args.chains, iterations=args.iters, warmup=args.warmup, seed=args.seed,
                           target_accept=args.target_accept, max_treedepth=args.max_treedepth,
                           init_radius=args.init_radius, n_jobs=args.jobs)
    if args.strict_rhat is not None and config.chains < 2:
        raise ValidationError("--strict-rhat needs at least 2 chains")
    out = _ensure_dir(args.out)

    draws = run_chains(dataset, priors, config, centered=args.centered)
    draws.write_csv(out)
    diagnostics = draws.diagnostics() if config.chains >= 2 and config.draws_per_chain >= 4 else None
    if diagnostics is not None:
        write_diagnostics_json(out / "diagnostics.json", diagnostics)
    summaries = summarize_all(draws.pooled(), build_index(dataset), dataset, centered=args.centered)
    write_summary_json(summaries, out / "summary.json")
    export_boxplot_csv(summaries, dataset.ranks, out / "boxplot.csv")

    n_div = int(draws.divergent.sum())
    print(f"{draws.n_chains} chains x {draws.n_draws} draws; {n_div} divergent transitions")
    if diagnostics is not None:
        worst = diagnostics.max_rhat()
        print(f"max split-Rhat {worst:.4f}")
        if args.strict_rhat is not None and not worst <= args.strict_rhat:
            print(f"split-Rhat {worst:.4f} exceeds --strict-rhat {args.strict_rhat}", file=sys.stderr)
            return EXIT_CONVERGENCE
    return EXIT_OK


def _split_labels(ranks):
    return ({r.gamer: r.rank_a for r in ranks if r.split == "train"},
            {r.gamer: r.rank_a for r in ranks if r.split == "validation"})


def _evaluate_row(scores: dict[str, float], train: dict, valid: dict):
    tr = sorted(g for g in scores if g in train)
    va = sorted(g for g in scores if g in valid)
    if len({valid[g] for g in va}) < 2:
        raise ValidationError("validation split needs both classes among scored gamers")
    if not any(train[g] == 1 for g in tr):
        raise ValidationError("training split needs at least one rank-A gamer among scored gamers")
    threshold = best_f1_threshold([scores[g] for g in tr], [train[g] for g in tr])
    return report([scores[g] for g in va], [valid[g] for g in va], threshold)


def cmd_evaluate(args) -> int:
    _require_file(args.scores, "scores")
    _require_file(args.ranks, "ranks")
    table = ScoreTable.read_csv(args.scores)
    ranks = read_ranks_csv(args.ranks)
    train, valid = _split_labels(ranks)

    per_modality = {m: dict(gamer_mean_scores(table, m)) for m in table.modalities}
    gamers = sorted(set().union(*per_modality.values())) if per_modality else []
    # gamer-level average of the modality-specific means
    averaged = {g: float(np.mean([per_modality[m][g] for m in table.modalities if g in per_modality[m]]))
                for g in gamers}
    rows = {m: _evaluate_row(per_modality[m], train, valid) for m in table.modalities}
    rows["Averaged"] = _evaluate_row(averaged, train, valid)
    if args.summary is not None:
        _require_file(args.summary, "summary")
        pooled = {s.gamer: s.map for s in read_summary_json(args.summary)}
        rows["Pooled"] = _evaluate_row(pooled, train, valid)

    out = _ensure_dir(args.out)
    text = format_table(rows)
    with atomic_write(out / "evaluation.json") as fh:
        json.dump({name: r.to_json() for name, r in rows.items()}, fh, indent=2)
        fh.write("\n")
    with atomic_write(out / "evaluation.txt") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


def read_future_ranks(path) -> dict[str, str]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["gamer", "rank_section"]:
            raise ValidationError(f"{path}: line 1: header must be gamer,rank_section")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or row[1] not in RANK_SECTIONS:
                raise ValidationError(f"{path}: line {lineno}: expected gamer and a section in {RANK_SECTIONS}")
            if row[0] in out:
                raise ValidationError(f"{path}: line {lineno}: duplicate gamer {row[0]!r}")
            out[row[0]] = row[1]
    return out


def rank_improved(rank_a: int, future_section: str) -> int:
    """1 when the later section is strictly better than the current status."""
    if rank_a == 1:
        return int(future_section in ("S", "G"))
    return int(future_section in _AT_LEAST_A)


def _write_group(path, gamers, by_gamer, rank_a):
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gamer", "map", "rank_a"])
        for g in gamers:
            r = rank_a.get(g)
            writer.writerow([g, repr(float(by_gamer[g].map)), "" if r is None else r])


def cmd_groups(args) -> int:
    _require_file(args.summary, "summary")
    _require_file(args.ranks, "ranks")
    summaries = read_summary_json(args.summary)
    ranks = read_ranks_csv(args.ranks)
    by_gamer = {s.gamer: s for s in summaries}
    unknown = sorted({r.gamer for r in ranks} - by_gamer.keys())
    if unknown:
        raise ValidationError(f"ranks reference gamers missing from the summary: {unknown[:5]}")
    groups = select_groups(summaries, ranks, rounding=args.rounding)
    rank_a = {r.gamer: r.rank_a for r in ranks}

    future = None
    if args.future_ranks is not None:
        _require_file(args.future_ranks, "future ranks")
        future = read_future_ranks(args.future_ranks)
        unknown = sorted(future.keys() - by_gamer.keys())
        if unknown:
            raise ValidationError(f"future ranks reference unknown gamers: {unknown[:5]}")

    out = _ensure_dir(args.out)
    _write_group(out / "top_decile.csv", groups.top_decile, by_gamer, rank_a)
    _write_group(out / "bottom_decile.csv", groups.bottom_decile, by_gamer, rank_a)
    _write_group(out / "below_a_high_skill.csv", groups.below_a_high_skill, by_gamer, rank_a)
    result = {
        "n_gamers": len(summaries),
        "rounding": args.rounding,
        "below_a_threshold": groups.threshold,
        "sizes": {"top_decile": len(groups.top_decile), "bottom_decile": len(groups.bottom_decile),
                  "below_a_high_skill": len(groups.below_a_high_skill)},
    }
    if future is not None:
        result["kendall"] = _kendall_section(groups, by_gamer, rank_a, future)
    with atomic_write(out / "groups.json") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    print(json.dumps(result["sizes"]))
    if "kendall" in result:
        k = result["kendall"]
        print(f"Kendall tau {k['tau']} p-value {k['p_value']} (n={k['n']})")
    return EXIT_OK


def _kendall_section(groups, by_gamer, rank_a, future) -> dict:
    """Kendall tau between MAP skill and rank improvement over the top and below-A groups."""
    members = list(dict.fromkeys(groups.top_decile + groups.below_a_high_skill))
    used = [g for g in members if g in future and g in rank_a]
    maps = [by_gamer[g].map for g in used]
    improved = [rank_improved(rank_a[g], future[g]) for g in used]
    section = {"n": len(used), "n_improved": int(sum(improved)), "tau": None, "p_value": None}
    if len(used) >= 3 and len(set(improved)) == 2:
        tau, p = kendall_tau(maps, improved)
        section["tau"], section["p_value"] = tau, p
    else:
        warnings.warn("Kendall test needs at least 3 gamers with both outcomes", RuntimeWarning, stacklevel=2)
    return section


COMMANDS = {"simulate": cmd_simulate, "pool": cmd_pool, "evaluate": cmd_evaluate, "groups": cmd_groups}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonConvergenceError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
