"""Command-line pipeline: gen-data, train, run, search, analyze, defend.

Every subcommand reads a TOML run configuration, honors --seed / --out /
--jobs overrides, writes only under the output directory, and exits 0 on
success, 1 on a validation error, 2 on an execution error. Outputs carry
no timestamps; a rerun with the same config and seed is byte-identical.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, dataset, defense, model
from .campaign import CampaignContext, run_config as run_campaign, write_log
from .config import ConfigError, RunConfig
from .dataset import generate, load_split_csv, one_per_class, save_split_csv
from .faults import IDENTITY_GLITCH
from .search import export_report_csv, search
from .seeding import derive_seed


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage text on stderr, exit 1
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="glitchsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in [
        ("gen-data", "generate the synthetic labeled dataset"),
        ("train", "train the readout-correction network"),
        ("run", "run one glitch campaign and write the trial log"),
        ("search", "search the glitch parameter space"),
        ("analyze", "compute statistics from a campaign log"),
        ("defend", "evaluate a defense policy against the configured attack"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, type=Path,
                         help="TOML run configuration")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override protocol.seed")
        cmd.add_argument("--out", type=Path, default=None,
                         help="override the output directory")
        cmd.add_argument("--jobs", type=int, default=1,
                         help="worker cap for parallel trials")
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    return RunConfig.load(args.config, seed_override=args.seed,
                          out_override=args.out, jobs=args.jobs)


def _load_dataset(cfg: RunConfig) -> dataset.Dataset:
    train_path, test_path = cfg.dataset_paths()
    cfg.require(train_path, "dataset train split (run gen-data first)")
    cfg.require(test_path, "dataset test split (run gen-data first)")
    with open(train_path) as fp:
        train_x, train_y = load_split_csv(fp)
    with open(test_path) as fp:
        test_x, test_y = load_split_csv(fp)
    return dataset.Dataset(train_x, train_y, test_x, test_y, cfg.gen_config())


def _load_params(cfg: RunConfig) -> model.ModelParams:
    path = cfg.require(cfg.weights_path(), "weights file (run train first)")
    with open(path) as fp:
        return model.load_params(fp)


def _context(cfg: RunConfig) -> CampaignContext:
    params = _load_params(cfg)
    ds = _load_dataset(cfg)
    trace = cfg.compiled_trace()
    if params.dims != trace_dims_of(cfg):
        raise ConfigError(
            f"weights were trained for dims {params.dims}, "
            "but the configured trace uses different dimensions"
        )
    inputs = one_per_class(ds, derive_seed("slice", cfg.seed))
    return CampaignContext(
        params=params, inputs=inputs, trace=trace, profile=cfg.profile(),
        reps=cfg.reps, jobs=cfg.jobs,
    )


def trace_dims_of(cfg: RunConfig) -> model.ModelDims:
    dims, _ = cfg.trace_setup()
    return dims


def cmd_gen_data(cfg: RunConfig) -> int:
    gen = cfg.gen_config()
    ds = generate(gen, cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    train_path, test_path = cfg.out_dir / "train.csv", cfg.out_dir / "test.csv"
    with open(train_path, "w") as fp:
        save_split_csv(ds.train_features, ds.train_labels, fp)
    with open(test_path, "w") as fp:
        save_split_csv(ds.test_features, ds.test_labels, fp)
    print(f"wrote {train_path} and {test_path} "
          f"({gen.samples_per_class} samples/class per split)")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    params = model.train(ds.train_features, ds.train_labels,
                         cfg.train_config(), cfg.seed)
    train_acc = model.accuracy(params, ds.train_features, ds.train_labels)
    test_acc = model.accuracy(params, ds.test_features, ds.test_labels)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    weights_path = cfg.out_dir / "weights.txt"
    with open(weights_path, "w") as fp:
        model.save_params(params, fp)
    with open(cfg.out_dir / "metrics.txt", "w") as fp:
        fp.write(f"train_accuracy = {train_acc!r}\n")
        fp.write(f"test_accuracy = {test_acc!r}\n")
    print(f"wrote {weights_path} (train acc {train_acc:.4f}, "
          f"test acc {test_acc:.4f})")
    return 0


def cmd_run(cfg: RunConfig) -> int:
    ctx = _context(cfg)
    glitch = cfg.glitch() or IDENTITY_GLITCH
    result = run_campaign(ctx, glitch, cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    log_path = cfg.out_dir / "campaign.jsonl"
    with open(log_path, "w") as fp:
        write_log(result, fp)
    print(f"wrote {log_path} (faults {result.fault_count}/"
          f"{len(result.trials)}, resets {result.reset_count})")
    return 0


def cmd_search(cfg: RunConfig) -> int:
    ctx = _context(cfg)
    space, objective, budget, strategy, layer = cfg.search_settings(ctx.trace)
    report = search(space, objective, budget, strategy, ctx, cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report_path = cfg.out_dir / "report.csv"
    with open(report_path, "w") as fp:
        export_report_csv(report, fp)
    if layer is not None:
        with open(cfg.out_dir / f"topk_{layer.value}.csv", "w") as fp:
            analysis.export_topk_csv(report, 5, fp)
    best = report.best
    summary = (f"best score {best.score:.4f} at width={best.glitch.width} "
               f"offset={best.glitch.offset} eo={best.glitch.external_offset} "
               f"repeat={best.glitch.repeat}" if best else "no evaluations")
    print(f"wrote {report_path} ({len(report.evaluated)} evaluations; {summary})")
    return 0


def cmd_analyze(cfg: RunConfig) -> int:
    from .campaign import read_log
    log_path = cfg.require(cfg.campaign_log_path(),
                           "campaign log (run `run` first)")
    with open(log_path) as fp:
        result = read_log(fp)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    stats = analysis.bit_flip_stats(result.trials)
    with open(cfg.out_dir / "bitflips.csv", "w") as fp:
        analysis.export_bitflips_csv(stats, fp)
    classes = sorted({t.true_class for t in result.trials})
    for k in classes:
        hist = analysis.class_histogram(result.trials, true_class=k)
        with open(cfg.out_dir / f"histogram_{k}.csv", "w") as fp:
            analysis.export_histogram_csv(hist, fp)
    mean = "n/a" if stats.mean_hamming is None else f"{stats.mean_hamming:.4f}"
    print(f"wrote bitflips.csv and {len(classes)} class histograms "
          f"(mean hamming {mean}, resets {stats.n_reset})")
    return 0


def cmd_defend(cfg: RunConfig) -> int:
    ctx = _context(cfg)
    glitch = cfg.glitch() or IDENTITY_GLITCH
    attack = defense.AttackSpec(glitch=glitch, profile=ctx.profile,
                                trace=ctx.trace)
    policy = _policy_from_config(cfg, ctx)
    report = defense.evaluate_defense(policy, attack, ctx, cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = cfg.out_dir / "defense.csv"
    with open(out_path, "w") as fp:
        defense.export_defense_csv([report], fp)
    print(f"wrote {out_path} (baseline {report.baseline_fault_rate:.4f} -> "
          f"defended {report.defended_fault_rate:.4f}, "
          f"flagged {report.flagged_rate:.4f})")
    return 0


def _policy_from_config(cfg: RunConfig, ctx: CampaignContext) -> defense.DefensePolicy:
    section = cfg.raw.get("defense", {})
    kind_name = section.get("kind", "majority_vote")
    action = section.get("action_on_flag", "reject")
    try:
        if kind_name == "majority_vote":
            kind = defense.MajorityVote(shots=int(section.get("shots", 3)))
        elif kind_name == "entropy_check":
            kind = defense.EntropyCheck(
                threshold=float(section.get("threshold", 2.0)))
        elif kind_name == "activation_range":
            margin = float(section.get("margin", 0.5))
            bounds = defense.calibrate_bounds(
                ctx.params, [x for _, _, x in ctx.inputs], margin)
            kind = defense.ActivationRangeCheck(bounds=bounds)
        elif kind_name == "timing_jitter":
            kind = defense.TimingJitter(
                max_jitter=int(section.get("max_jitter", 2000)))
        elif kind_name == "cross_check":
            gen = cfg.gen_config()
            centroids = np.stack(
                [dataset.centroid(k, gen) for k in range(model.NUM_CLASSES)])
            kind = defense.CrossCheck(centroids=centroids)
        else:
            raise ConfigError(f"unknown defense kind {kind_name!r}")
        return defense.DefensePolicy(kind=kind, action_on_flag=action)
    except ValueError as exc:
        raise ConfigError(f"invalid defense policy: {exc}")


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "run": cmd_run,
    "search": cmd_search,
    "analyze": cmd_analyze,
    "defend": cmd_defend,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # execution failure, not an input problem
        print(f"execution error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run_cli())
