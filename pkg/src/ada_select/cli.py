"""Command-line front end: config parsing, experiments, verification.

Subcommands
-----------
gen-data   Generate the synthetic source/target pools and write them as CSV.
run        Run the configured strategy for each seed; write result CSVs.
compare    Run a strategy grid and write summary + sign-test CSVs.
verify     Run built-in numerical self-checks; print PASS/FAIL per check.

Exit codes: 0 success; 1 a verify check failed; 2 missing input file;
3 unparseable input; 4 constraint violation (bad value or unknown key);
5 output I/O failure.

Configuration is TOML; every key is optional and defaults are echoed to
`config_echo.toml` in the output directory so runs are auditable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .density import GmmModel, log_density_batch, sample_gmm
from .errors import InvalidInput
from .harness import (
    ExperimentConfig,
    Strategy,
    run_comparison,
    run_experiment,
    write_histogram_csv,
    write_results_csv,
    write_score_dump_csv,
    write_sign_tests_csv,
    write_summary_csv,
)
from .schedule import ScheduleParams, SchedulePolicy, density_fraction, split_budget
from .selection import ClassKl, class_budgets, verify_kl_decomposition
from .simulate import generate
from .pool import save_pool_csv
from .util import derive_rng

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_MISSING_FILE = 2
EXIT_PARSE_ERROR = 3
EXIT_CONSTRAINT = 4
EXIT_IO = 5


@dataclass(frozen=True)
class CliConfig:
    experiment: ExperimentConfig
    compare_strategies: tuple[Strategy, ...]
    dump_scores: bool


# section -> key -> (kind, default); kind in {bool, int, float, str,
# int_list, str_list}. Defaults mirror ExperimentConfig.
_DEFAULT = ExperimentConfig()
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "experiment": {
        "strategy": ("str", _DEFAULT.strategy.value),
        "class_balance": ("bool", _DEFAULT.class_balance),
        "per_pixel_uncertainty": ("bool", _DEFAULT.per_pixel_uncertainty),
        "rho": ("float", _DEFAULT.rho),
        "kappa": ("float", _DEFAULT.kappa),
        "weight_floor": ("float", _DEFAULT.weight_floor),
        "seeds": ("int_list", list(_DEFAULT.seeds)),
    },
    "schedule": {
        "alpha": ("float", _DEFAULT.alpha),
        "beta": ("float", _DEFAULT.beta),
        "policy": ("str", _DEFAULT.policy.value),
        "rounds": ("int", _DEFAULT.rounds),
        "budget_pct": ("float", _DEFAULT.budget_pct),
    },
    "train": {
        "arch": ("str", _DEFAULT.arch),
        "hidden_units": ("int", _DEFAULT.hidden_units),
        "learning_rate": ("float", _DEFAULT.learning_rate),
        "batch_size": ("int", _DEFAULT.batch_size),
        "warmup_epochs": ("int", _DEFAULT.warmup_epochs),
        "finetune_epochs": ("int", _DEFAULT.finetune_epochs),
    },
    "shift": {
        "class_count": ("int", _DEFAULT.class_count),
        "feature_dim": ("int", _DEFAULT.feature_dim),
        "components_per_class": ("int", _DEFAULT.components_per_class),
        "shift_magnitude": ("float", _DEFAULT.shift_magnitude),
        "novel_mode_classes": ("int_list", sorted(_DEFAULT.novel_mode_classes)),
        "samples_per_domain": ("int", _DEFAULT.samples_per_domain),
        "eval_fraction": ("float", _DEFAULT.eval_fraction),
        "region_size": ("int", _DEFAULT.region_size),
        "center_scale": ("float", _DEFAULT.center_scale),
        "component_spread": ("float", _DEFAULT.component_spread),
        "novel_offset": ("float", _DEFAULT.novel_offset),
    },
    "compare": {
        "strategies": ("str_list", ["full", "random"]),
    },
    "output": {
        "dump_scores": ("bool", False),
    },
}


def _coerce(section: str, key: str, kind: str, value):
    where = f"{section}.{key}"
    if kind == "bool":
        if not isinstance(value, bool):
            raise InvalidInput(f"{where} must be a boolean")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidInput(f"{where} must be an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidInput(f"{where} must be a number")
        return float(value)
    if kind == "int_list":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in value
        ):
            raise InvalidInput(f"{where} must be a list of integers")
        return list(value)
    if kind == "str_list":
        if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
            raise InvalidInput(f"{where} must be a list of strings")
        return list(value)
    if not isinstance(value, str):
        raise InvalidInput(f"{where} must be a string")
    return value


def _enum_value(enum_cls, raw: str, where: str):
    try:
        return enum_cls(raw)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise InvalidInput(f"{where} must be one of: {allowed}; got {raw!r}") from None


def parse_config(path) -> CliConfig:
    """Parse a TOML experiment config, applying documented defaults.

    Unknown sections or keys are constraint violations, as are values of
    the wrong type or out of range.
    """
    with open(path, "rb") as f:
        raw = tomllib.load(f)

    values: dict[tuple[str, str], object] = {}
    for section, entries in raw.items():
        if section not in _SCHEMA:
            raise InvalidInput(f"unknown config section [{section}]")
        if not isinstance(entries, dict):
            raise InvalidInput(f"config section [{section}] must be a table")
        for key, value in entries.items():
            if key not in _SCHEMA[section]:
                raise InvalidInput(f"unknown config key {section}.{key}")
            kind, _ = _SCHEMA[section][key]
            values[(section, key)] = _coerce(section, key, kind, value)

    def get(section: str, key: str):
        if (section, key) in values:
            return values[(section, key)]
        return _SCHEMA[section][key][1]

    experiment = ExperimentConfig(
        class_count=get("shift", "class_count"),
        feature_dim=get("shift", "feature_dim"),
        components_per_class=get("shift", "components_per_class"),
        shift_magnitude=get("shift", "shift_magnitude"),
        novel_mode_classes=frozenset(get("shift", "novel_mode_classes")),
        samples_per_domain=get("shift", "samples_per_domain"),
        eval_fraction=get("shift", "eval_fraction"),
        region_size=get("shift", "region_size"),
        center_scale=get("shift", "center_scale"),
        component_spread=get("shift", "component_spread"),
        novel_offset=get("shift", "novel_offset"),
        strategy=_enum_value(Strategy, get("experiment", "strategy"), "experiment.strategy"),
        class_balance=get("experiment", "class_balance"),
        per_pixel_uncertainty=get("experiment", "per_pixel_uncertainty"),
        alpha=get("schedule", "alpha"),
        beta=get("schedule", "beta"),
        policy=_enum_value(SchedulePolicy, get("schedule", "policy"), "schedule.policy"),
        rounds=get("schedule", "rounds"),
        budget_pct=get("schedule", "budget_pct"),
        rho=get("experiment", "rho"),
        kappa=get("experiment", "kappa"),
        weight_floor=get("experiment", "weight_floor"),
        arch=get("train", "arch"),
        hidden_units=get("train", "hidden_units"),
        learning_rate=get("train", "learning_rate"),
        batch_size=get("train", "batch_size"),
        warmup_epochs=get("train", "warmup_epochs"),
        finetune_epochs=get("train", "finetune_epochs"),
        seeds=tuple(get("experiment", "seeds")),
    )
    strategies = tuple(
        _enum_value(Strategy, s, "compare.strategies")
        for s in get("compare", "strategies")
    )
    if not strategies:
        raise InvalidInput("compare.strategies must not be empty")
    if len(set(strategies)) != len(strategies):
        raise InvalidInput("compare.strategies must be distinct")
    return CliConfig(
        experiment=experiment,
        compare_strategies=strategies,
        dump_scores=get("output", "dump_scores"),
    )


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise InvalidInput(f"cannot serialize config value {value!r}")


def serialize_config(cfg: CliConfig) -> str:
    """Render the effective configuration back to TOML (full echo)."""
    e = cfg.experiment
    current = {
        ("experiment", "strategy"): e.strategy.value,
        ("experiment", "class_balance"): e.class_balance,
        ("experiment", "per_pixel_uncertainty"): e.per_pixel_uncertainty,
        ("experiment", "rho"): e.rho,
        ("experiment", "kappa"): e.kappa,
        ("experiment", "weight_floor"): e.weight_floor,
        ("experiment", "seeds"): list(e.seeds),
        ("schedule", "alpha"): e.alpha,
        ("schedule", "beta"): e.beta,
        ("schedule", "policy"): e.policy.value,
        ("schedule", "rounds"): e.rounds,
        ("schedule", "budget_pct"): e.budget_pct,
        ("train", "arch"): e.arch,
        ("train", "hidden_units"): e.hidden_units,
        ("train", "learning_rate"): e.learning_rate,
        ("train", "batch_size"): e.batch_size,
        ("train", "warmup_epochs"): e.warmup_epochs,
        ("train", "finetune_epochs"): e.finetune_epochs,
        ("shift", "class_count"): e.class_count,
        ("shift", "feature_dim"): e.feature_dim,
        ("shift", "components_per_class"): e.components_per_class,
        ("shift", "shift_magnitude"): e.shift_magnitude,
        ("shift", "novel_mode_classes"): sorted(e.novel_mode_classes),
        ("shift", "samples_per_domain"): e.samples_per_domain,
        ("shift", "eval_fraction"): e.eval_fraction,
        ("shift", "region_size"): e.region_size,
        ("shift", "center_scale"): e.center_scale,
        ("shift", "component_spread"): e.component_spread,
        ("shift", "novel_offset"): e.novel_offset,
        ("compare", "strategies"): [s.value for s in cfg.compare_strategies],
        ("output", "dump_scores"): cfg.dump_scores,
    }
    lines: list[str] = []
    for section, entries in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key in entries:
            lines.append(f"{key} = {_toml_scalar(current[(section, key)])}")
        lines.append("")
    return "\n".join(lines)


def _load_cli_config(args) -> CliConfig:
    cfg = parse_config(args.config)
    if args.seed:
        cfg = replace(cfg, experiment=replace(cfg.experiment, seeds=tuple(args.seed)))
    return cfg


def _progress(args, message: str) -> None:
    if args.verbose:
        print(message, file=sys.stderr)


def _echo_config(cfg: CliConfig, outdir: Path) -> None:
    (outdir / "config_echo.toml").write_text(serialize_config(cfg), encoding="utf-8")


def cmd_gen_data(args) -> int:
    cfg = _load_cli_config(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for seed in cfg.experiment.seeds:
        spec = cfg.experiment.shift_spec(int(seed))
        source, target_train, target_eval = generate(spec)
        seed_dir = outdir / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        save_pool_csv(source, seed_dir / "source.csv")
        save_pool_csv(target_train, seed_dir / "target_train.csv")
        save_pool_csv(target_eval, seed_dir / "target_eval.csv")
        _progress(args, f"gen-data: wrote pools for seed {seed}")
    _echo_config(cfg, outdir)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_cli_config(args)
    exp = cfg.experiment
    dump = cfg.dump_scores or args.dump_scores
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    per_run = {}
    for seed in exp.seeds:
        sink = [] if dump else None
        metrics = run_experiment(exp, int(seed), score_sink=sink)
        per_run[(exp.strategy.value, int(seed))] = metrics
        if sink is not None:
            for round_index, rows in sink:
                write_score_dump_csv(
                    rows, outdir / f"scores_seed{seed}_round{round_index}.csv"
                )
        _progress(args, f"run: strategy={exp.strategy.value} seed={seed} done")
    write_results_csv(per_run, exp.class_count, outdir / "results.csv")
    write_histogram_csv(per_run, outdir / "histogram.csv")
    _echo_config(cfg, outdir)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_cli_config(args)
    exp = cfg.experiment
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    configs = [replace(exp, strategy=s) for s in cfg.compare_strategies]
    result = run_comparison(configs, [int(s) for s in exp.seeds])
    write_results_csv(result.per_run, exp.class_count, outdir / "results.csv")
    write_histogram_csv(result.per_run, outdir / "histogram.csv")
    write_summary_csv(result.summary, outdir / "summary.csv")
    write_sign_tests_csv(result.sign_tests, outdir / "sign_tests.csv")
    _echo_config(cfg, outdir)
    _progress(args, f"compare: {len(configs)} strategies x {len(exp.seeds)} seeds done")
    return EXIT_OK


def _check_schedule_values() -> tuple[bool, str]:
    params = ScheduleParams(alpha=1.0, beta=1.0, rounds=5, round_budget_px=100)
    got = tuple(density_fraction(params, n) for n in range(1, 6))
    want = (1.0, 0.5, 0.25, 0.125, 0.0625)
    return got == want, f"lambda sequence {got}, expected {want}"


def _check_kl_chain_rule() -> tuple[bool, str]:
    rng = derive_rng(7, "verify-chain")
    worst = 0.0
    for _ in range(25):
        c = int(rng.integers(2, 9))
        m = int(rng.integers(2, 9))
        pt = rng.uniform(0.05, 1.0, size=(c, m))
        ps = rng.uniform(0.05, 1.0, size=(c, m))
        pt /= pt.sum()
        ps /= ps.sum()
        _, _, residual = verify_kl_decomposition(pt, ps)
        worst = max(worst, abs(residual))
    return worst <= 1e-9, f"max |residual| = {worst:.3e} (tolerance 1e-9)"


def _check_gaussian_kl() -> tuple[bool, str]:
    target = GmmModel(
        weights=np.array([1.0]), means=np.array([[1.0]]), variances=np.array([[1.0]])
    )
    source = GmmModel(
        weights=np.array([1.0]), means=np.array([[0.0]]), variances=np.array([[1.0]])
    )
    draws = sample_gmm(target, 100_000, seed=11)
    estimate = float(
        np.mean(log_density_batch(target, draws) - log_density_batch(source, draws))
    )
    ok = abs(estimate - 0.5) <= 0.01
    return ok, f"mean log-ratio {estimate:.5f} vs exact 0.5 (tolerance 2%)"


def _check_budget_conservation() -> tuple[bool, str]:
    rng = derive_rng(13, "verify-budget")
    for _ in range(200):
        c = int(rng.integers(1, 9))
        budget = int(rng.integers(0, 1_000_000))
        kls = []
        for class_id in range(c):
            kl = None if rng.random() < 0.15 else float(rng.uniform(-5.0, 30.0))
            kls.append(ClassKl(class_id=class_id, kl_estimate=kl, region_count=1))
        class_budgets(kls, budget)
        if sum(e.budget_px for e in kls) != budget:
            return False, f"class budgets sum {sum(e.budget_px for e in kls)} != {budget}"
        params = ScheduleParams(
            alpha=float(rng.uniform(0.0, 1.0)),
            beta=float(rng.uniform(0.0, 3.0)),
            rounds=5,
            round_budget_px=budget,
        )
        plan = split_budget(params, int(rng.integers(1, 6)))
        if plan.density_px + plan.uncertainty_px != budget:
            return False, f"split {plan.density_px}+{plan.uncertainty_px} != {budget}"
    return True, "all 200 random instances conserved exactly"


def cmd_verify(args) -> int:
    checks = [
        ("schedule-values", _check_schedule_values),
        ("kl-chain-rule", _check_kl_chain_rule),
        ("gaussian-mc-kl", _check_gaussian_kl),
        ("budget-conservation", _check_budget_conservation),
    ]
    failed = False
    for name, check in checks:
        ok, detail = check()
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed = failed or not ok
    return EXIT_VERIFY_FAILED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ada-select",
        description=(
            "Density-aware active domain adaptation selection on synthetic "
            "domain-shifted pools."
        ),
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="progress lines on stderr"
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--config", required=True, help="TOML experiment config")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--seed",
            type=int,
            action="append",
            default=[],
            help="override config seeds (repeatable)",
        )

    p_gen = sub.add_parser("gen-data", help="generate synthetic pools as CSV")
    add_common(p_gen)
    p_gen.set_defaults(func=cmd_gen_data)

    p_run = sub.add_parser("run", help="run the configured strategy")
    add_common(p_run)
    p_run.add_argument(
        "--dump-scores", action="store_true", help="write per-round region score CSVs"
    )
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run a strategy grid")
    add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_ver = sub.add_parser("verify", help="run built-in numerical self-checks")
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except tomllib.TOMLDecodeError as exc:
        print(f"error: cannot parse config: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except ValueError as exc:
        print(f"error: cannot parse input: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
