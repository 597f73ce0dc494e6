"""Command-line entry point for every workflow.

Subcommands: ``gen-data``, ``train``, ``eval``, ``ablate``,
``oracle-check``, ``serve``, ``report``. Each resolves its settings from
built-in defaults, an optional flat key=value config file (``--config``
or the path named by the environment variable), and explicit flags, in
that order; the resolved precedence is printed at startup and hashed
into a fingerprint that reports embed.

Exit codes: 0 success, 1 task failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as runconfig
from .config import ENV_VAR, RunConfig
from .errors import ConfigError, VisteerError

EXIT_OK = 0
EXIT_TASK = 1
EXIT_CONFIG = 2

FAMILIES = ("sorting", "attribute_pick", "grid_place", "pnp_close")

# Episodes per distinct target variant, per family: training colors for the
# block families, waste categories for sorting, container objects for
# pick-and-place-and-close.
TARGET_VARIANTS = {"sorting": 3, "attribute_pick": 4, "grid_place": 4, "pnp_close": 3}

SUITE_NAMES = ("id", "ood", "ood_color", "ood_position", "all")

COMMON_DEFAULTS = {"json": False, "dry_run": False, "workers": 1, "config": ""}

GEN_DATA_DEFAULTS = {
    **COMMON_DEFAULTS,
    "family": "all",
    "per_object": 50,
    "count": 0,  # direct episode count per family; 0 = derive from per_object
    "ood": "none",
    "seed": 0,
    "max_steps": 0,  # 0 = simulator default cap
    "validate": False,
    "out": "",
}

TRAIN_DEFAULTS = {
    **COMMON_DEFAULTS,
    "dataset": "",
    "out": "",
    "variant": "full",
    "steps": 2000,
    "batch_size": 16,
    "lambda_grounding": 0.1,
    "lr_encoder": 1e-4,
    "lr_action": 1e-3,
    "gate": "",  # empty = the variant's own grounding gate
    "chunk_size": 16,
    "image_size": 64,
    "augment_shift": 0,
    "token_dropout": 0.0,
    "max_episodes": 0,  # 0 = use every episode
    "seed": 0,
    "log_every": 25,
}

EVAL_DEFAULTS = {
    **COMMON_DEFAULTS,
    "suite": "id",
    "families": "all",
    "checkpoint": "",
    "policy": "",  # "oracle" runs the scripted controller instead of a checkpoint
    "variant": "full",
    "trials": 50,
    "seed_base": 10_000_000,
    "style": "crosshair",
    "backend": "ground_truth",
    "out": "",
    "emit_csv": "",
}

ABLATE_DEFAULTS = {
    **COMMON_DEFAULTS,
    "dataset": "",
    "out": "",
    "variants": "full,no_grounding,point",
    "seeds": "0,1,2",
    "suite": "ood",
    "families": "attribute_pick",
    "trials": 25,
    "seed_base": 10_000_000,
    "steps": 6000,
    "batch_size": 32,
    "lambda_grounding": 0.1,
    "lr_encoder": 5e-4,
    "lr_action": 5e-4,
    "chunk_size": 8,
    "augment_shift": 10,
    "token_dropout": 0.5,
    "reuse_checkpoints": True,
    "emit_csv": "",
}

ORACLE_CHECK_DEFAULTS = {
    **COMMON_DEFAULTS,
    "families": "all",
    "scenes": 250,
    "seed_base": 10_000_000,
    "threshold": 95.0,  # minimum mean success, percent
    "style": "crosshair",
    "out": "",
}

SERVE_DEFAULTS = {
    **COMMON_DEFAULTS,
    "host": "127.0.0.1",
    "port": 8071,
    "queue_size": 256,
    "max_sessions": 64,
    "expose_ground_truth": False,
    "dataset_root": "",
}

REPORT_DEFAULTS = {
    **COMMON_DEFAULTS,
    "inputs": "",
    "emit_csv": "",
    "out": "",
}

COMMAND_DEFAULTS = {
    "gen-data": GEN_DATA_DEFAULTS,
    "train": TRAIN_DEFAULTS,
    "eval": EVAL_DEFAULTS,
    "ablate": ABLATE_DEFAULTS,
    "oracle-check": ORACLE_CHECK_DEFAULTS,
    "serve": SERVE_DEFAULTS,
    "report": REPORT_DEFAULTS,
}

for _defaults in COMMAND_DEFAULTS.values():
    runconfig.register_keys(_defaults)


# ---- argument parsing ----------------------------------------------------


def _add_option(parser: argparse.ArgumentParser, key: str, default, **kwargs) -> None:
    """Add one flag whose absence is detectable (default None)."""
    flag = "--" + key.replace("_", "-")
    if isinstance(default, bool):
        parser.add_argument(flag, dest=key, action="store_true", default=None, **kwargs)
    else:
        parser.add_argument(
            flag, dest=key, type=type(default), default=None, **kwargs
        )


def build_parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(
        prog="visteer",
        description="desk-scale visual-prompting manipulation workbench",
        epilog=f"set {ENV_VAR} to point at a default config file",
    )
    sub = root.add_subparsers(dest="command", required=True, metavar="command")

    helps = {
        "json": "emit one machine-readable JSON object",
        "dry_run": "resolve and print settings, then exit without side effects",
        "workers": "cap worker pools for parallel stages",
        "config": "flat key=value config file (overrides defaults, beaten by flags)",
    }

    def command(name: str, description: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=description, description=description)
        for key, default in COMMAND_DEFAULTS[name].items():
            extra = {"help": helps.get(key, f"(default: {default!r})")}
            if key == "lambda_grounding":
                p.add_argument(
                    "--lambda",
                    dest="lambda_grounding",
                    type=float,
                    default=None,
                    help="grounding loss weight",
                )
                continue
            _add_option(p, key, default, **extra)
        return p

    command("gen-data", "generate a demonstration dataset and write its manifest")
    command("train", "train one policy variant from a dataset")
    command("eval", "run a seeded evaluation suite against a checkpoint or the oracle")
    command("ablate", "train and evaluate a variant grid on shared datasets")
    command("oracle-check", "measure scripted-oracle success over seeded scenes")
    command("serve", "run the live session service")
    command("report", "verify and merge evaluation reports")
    return root


def _resolve(args: argparse.Namespace) -> RunConfig:
    defaults = COMMAND_DEFAULTS[args.command]
    flags = {
        key: value
        for key, value in vars(args).items()
        if key != "command" and value is not None
    }
    config_path = flags.get("config") or None
    return runconfig.resolve(args.command, defaults, flags, config_path=config_path)


# ---- shared helpers ------------------------------------------------------


def _families(cfg: RunConfig, key: str = "families") -> list[str]:
    raw = cfg[key]
    if raw in ("all", ""):
        return list(FAMILIES)
    names = [f.strip() for f in raw.split(",") if f.strip()]
    for name in names:
        if name not in FAMILIES:
            raise ConfigError(f"unknown family {name!r}; choose from {FAMILIES}")
    return names


def _suite(cfg: RunConfig, name_key: str = "suite"):
    from .evalharness import OOD_TAGS, EvalCondition, EvalSuite

    suite_name = cfg[name_key]
    if suite_name not in SUITE_NAMES:
        raise ConfigError(f"unknown suite {suite_name!r}; choose from {SUITE_NAMES}")
    wanted = {
        "id": lambda tag: tag == "none",
        "ood": lambda tag: tag != "none",
        "ood_color": lambda tag: tag == "novel_color",
        "ood_position": lambda tag: tag == "novel_position",
        "all": lambda tag: True,
    }[suite_name]
    conditions = tuple(
        EvalCondition(family, tag)
        for family in _families(cfg)
        for tag in OOD_TAGS[family]
        if wanted(tag)
    )
    if not conditions:
        raise ConfigError(f"no selected family provides suite {suite_name!r}")
    return EvalSuite(
        suite_name, conditions, trials=cfg["trials"], seed_base=cfg["seed_base"]
    )


def _write_json(path: str, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# ---- subcommand handlers -------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> tuple[int, dict]:
    from .data.generate import generate_dataset
    from .data.validate import validate_dataset

    if not cfg["out"]:
        raise ConfigError("gen-data requires --out")
    families = _families(cfg, "family") if cfg["family"] != "all" else list(FAMILIES)
    if cfg["count"] > 0:
        counts = {fam: cfg["count"] for fam in families}
    else:
        counts = {fam: cfg["per_object"] * TARGET_VARIANTS[fam] for fam in families}
    manifest = generate_dataset(
        cfg["out"],
        counts=counts,
        ood=cfg["ood"],
        seed=cfg["seed"],
        max_steps=cfg["max_steps"] or None,
    )
    payload = {
        "out": cfg["out"],
        "episodes": len(manifest.episodes),
        "counts": counts,
        "discarded": manifest.discarded,
        "config_hash": manifest.config_hash,
    }
    if cfg["validate"]:
        report = validate_dataset(cfg["out"])
        payload["validation"] = {
            "summary": report.summary(),
            "violations": [str(v) for v in report.violations],
        }
        if not report.ok:
            return EXIT_TASK, payload
    return EXIT_OK, payload


def cmd_train(cfg: RunConfig) -> tuple[int, dict]:
    from .policy.model import PolicyConfig
    from .trainer import TrainConfig, train_variant

    if not cfg["dataset"] or not cfg["out"]:
        raise ConfigError("train requires --dataset and --out")
    policy_cfg = PolicyConfig(chunk_size=cfg["chunk_size"], image_size=cfg["image_size"])
    train_kwargs = dict(
        steps=cfg["steps"],
        batch_size=cfg["batch_size"],
        lambda_grounding=cfg["lambda_grounding"],
        lr_encoder=cfg["lr_encoder"],
        lr_action=cfg["lr_action"],
        augment_shift=cfg["augment_shift"],
        token_dropout=cfg["token_dropout"],
        seed=cfg["seed"],
        log_every=cfg["log_every"],
    )
    if cfg["gate"]:
        train_kwargs["grounding_gate"] = cfg["gate"]
    result = train_variant(
        cfg["dataset"],
        cfg["variant"],
        cfg["out"],
        policy_cfg=policy_cfg,
        train_cfg=TrainConfig(**train_kwargs),
        max_episodes=cfg["max_episodes"] or None,
    )
    payload = {
        "checkpoint": result.checkpoint_path,
        "log": result.log_path,
        "steps": result.steps,
        "final_total_loss": result.final_total,
        "variant": cfg["variant"],
    }
    _write_json(str(Path(cfg["out"]) / "run.json"), {**payload, "settings": cfg.to_dict()})
    return EXIT_OK, payload


def _eval_runner(cfg: RunConfig):
    from .evalharness import OracleRunner, PolicyRunner

    if cfg["checkpoint"] and cfg["policy"]:
        raise ConfigError("pass either --checkpoint or --policy, not both")
    if cfg["checkpoint"]:
        return PolicyRunner(cfg["checkpoint"], cfg["variant"])
    if cfg["policy"] == "oracle":
        return OracleRunner(backend=cfg["backend"], style=cfg["style"])
    if cfg["policy"]:
        raise ConfigError(f"unknown policy {cfg['policy']!r}; use a checkpoint or 'oracle'")
    raise ConfigError("eval requires --checkpoint or --policy oracle")


def cmd_eval(cfg: RunConfig) -> tuple[int, dict]:
    from .evalharness import run_suite

    runner = _eval_runner(cfg)
    suite = _suite(cfg)
    report = run_suite(runner, suite, workers=cfg["workers"])
    payload = {"report": report.to_dict(), "settings_fingerprint": cfg.fingerprint}
    if cfg["out"]:
        _write_json(cfg["out"], {**payload, "settings": cfg.to_dict()})
        payload["out"] = cfg["out"]
    if cfg["emit_csv"]:
        Path(cfg["emit_csv"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["emit_csv"]).write_text(report.to_csv())
        payload["emit_csv"] = cfg["emit_csv"]
    payload["text"] = report.to_text()
    return EXIT_OK, payload


def cmd_ablate(cfg: RunConfig) -> tuple[int, dict]:
    from .evalharness import PolicyRunner, run_ablation_grid, run_suite
    from .policy.model import PolicyConfig
    from .trainer import TrainConfig, train_variant
    from .variants import get_variant

    if not cfg["dataset"] or not cfg["out"]:
        raise ConfigError("ablate requires --dataset and --out")
    variants = [v.strip() for v in cfg["variants"].split(",") if v.strip()]
    for name in variants:
        get_variant(name)
    try:
        seeds = [int(s) for s in cfg["seeds"].split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value {cfg['seeds']!r}") from exc
    if not variants or not seeds:
        raise ConfigError("ablate needs at least one variant and one seed")
    suite = _suite(cfg)
    out_root = Path(cfg["out"])
    from fractions import Fraction

    def evaluate(variant: str) -> Fraction:
        rates = []
        for seed in seeds:
            run_dir = out_root / f"{variant}-r{seed}"
            ckpt = run_dir / "policy.ckpt"
            if not (cfg["reuse_checkpoints"] and ckpt.exists()):
                train_variant(
                    cfg["dataset"],
                    variant,
                    run_dir,
                    policy_cfg=PolicyConfig(chunk_size=cfg["chunk_size"]),
                    train_cfg=TrainConfig(
                        steps=cfg["steps"],
                        batch_size=cfg["batch_size"],
                        lambda_grounding=cfg["lambda_grounding"],
                        lr_encoder=cfg["lr_encoder"],
                        lr_action=cfg["lr_action"],
                        augment_shift=cfg["augment_shift"],
                        token_dropout=cfg["token_dropout"],
                        seed=seed,
                        log_every=max(cfg["steps"] // 10, 1),
                        checkpoint_every=0,
                    ),
                )
            report = run_suite(
                PolicyRunner(ckpt, variant), suite, workers=cfg["workers"]
            )
            rates.append(report.aggregate_rate())
        return sum(rates, Fraction(0)) / len(rates)

    grid = run_ablation_grid(evaluate, variants)
    payload = {
        "report": grid.to_dict(),
        "text": grid.to_text(),
        "settings_fingerprint": cfg.fingerprint,
    }
    _write_json(str(out_root / "ablation.json"), {**payload, "settings": cfg.to_dict()})
    if cfg["emit_csv"]:
        lines = ["variant,rate,failed"]
        for cell in grid.cells:
            lines.append(f"{cell.variant},{cell.display()},{cell.failed}")
        Path(cfg["emit_csv"]).write_text("\n".join(lines) + "\n")
        payload["emit_csv"] = cfg["emit_csv"]
    failed = [c.variant for c in grid.cells if c.failed]
    return (EXIT_TASK if failed else EXIT_OK), payload


def cmd_oracle_check(cfg: RunConfig) -> tuple[int, dict]:
    from .evalharness import OracleRunner, display_rate, run_suite, suite_from_tags

    families = _families(cfg)
    suite = suite_from_tags(
        "oracle-check",
        families,
        ("none",),
        trials=cfg["scenes"],
        seed_base=cfg["seed_base"],
    )
    report = run_suite(
        OracleRunner(style=cfg["style"]), suite, workers=cfg["workers"]
    )
    rate = report.aggregate_rate()
    payload = {
        "rate": display_rate(rate),
        "threshold": cfg["threshold"],
        "per_family": {
            c.condition.family: display_rate(c.rate) for c in report.conditions
        },
        "scenes": cfg["scenes"] * len(families),
        "settings_fingerprint": cfg.fingerprint,
    }
    if cfg["out"]:
        _write_json(cfg["out"], {**payload, "settings": cfg.to_dict()})
    ok = float(rate) >= cfg["threshold"]
    return (EXIT_OK if ok else EXIT_TASK), payload


def cmd_serve(cfg: RunConfig) -> tuple[int, dict]:
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(
        ServiceConfig(
            queue_size=cfg["queue_size"],
            max_sessions=cfg["max_sessions"],
            expose_ground_truth=cfg["expose_ground_truth"],
            dataset_root=cfg["dataset_root"] or None,
        )
    )
    uvicorn.run(app, host=cfg["host"], port=cfg["port"], log_level="info")
    return EXIT_OK, {"host": cfg["host"], "port": cfg["port"]}


def cmd_report(cfg: RunConfig) -> tuple[int, dict]:
    from fractions import Fraction

    from .evalharness import display_rate, mean_rate

    if not cfg["inputs"]:
        raise ConfigError("report requires --inputs (comma-separated report JSON files)")
    paths = [p.strip() for p in cfg["inputs"].split(",") if p.strip()]
    merged = []
    problems = []
    for path in paths:
        try:
            body = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read report {path}: {exc}") from exc
        report = body.get("report", body)
        conditions = report.get("conditions", [])
        if not report.get("fingerprint"):
            problems.append(f"{path}: missing fingerprint")
        rates = [Fraction(*c["rate_exact"]) for c in conditions]
        recomputed = display_rate(mean_rate(rates)) if rates else None
        if recomputed != report.get("aggregate_rate"):
            problems.append(
                f"{path}: stored average {report.get('aggregate_rate')} != "
                f"recomputed {recomputed}"
            )
        merged.append(
            {
                "path": path,
                "suite": report.get("suite"),
                "fingerprint": report.get("fingerprint"),
                "aggregate_rate": recomputed,
                "conditions": conditions,
            }
        )
    payload = {
        "reports": merged,
        "problems": problems,
        "settings_fingerprint": cfg.fingerprint,
    }
    if cfg["out"]:
        _write_json(cfg["out"], {**payload, "settings": cfg.to_dict()})
    if cfg["emit_csv"]:
        lines = ["suite,condition,trials,successes,rate"]
        for rep in merged:
            for c in rep["conditions"]:
                lines.append(
                    f"{rep['suite']},{c['family']}/{c['ood']},{c['trials']},"
                    f"{c['successes']},{c['rate']}"
                )
        Path(cfg["emit_csv"]).write_text("\n".join(lines) + "\n")
    return (EXIT_TASK if problems else EXIT_OK), payload


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "oracle-check": cmd_oracle_check,
    "serve": cmd_serve,
    "report": cmd_report,
}


# ---- dispatch ------------------------------------------------------------


def _describe_plan(cfg: RunConfig) -> str:
    doing = {
        "gen-data": f"would write a dataset under {cfg.get('out') or '<unset>'}",
        "train": f"would train variant {cfg.get('variant')} into {cfg.get('out') or '<unset>'}",
        "eval": f"would run suite {cfg.get('suite')} with {cfg.get('trials')} trials per condition",
        "ablate": f"would train/evaluate variants {cfg.get('variants')} over seeds {cfg.get('seeds')}",
        "oracle-check": f"would roll out {cfg.get('scenes')} scenes per family",
        "serve": f"would listen on {cfg.get('host')}:{cfg.get('port')}",
        "report": f"would verify reports {cfg.get('inputs') or '<unset>'}",
    }
    return doing[cfg.command]


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags and 0 on --help; normalize the former
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG

    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    as_json = bool(cfg.get("json"))
    if not as_json:
        print(cfg.describe())

    if cfg.get("dry_run"):
        if as_json:
            print(json.dumps({"ok": True, "dry_run": True, "plan": _describe_plan(cfg), **cfg.to_dict()}, indent=2))
        else:
            print(f"dry run: {_describe_plan(cfg)}; nothing written")
        return EXIT_OK

    try:
        code, payload = HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        if as_json:
            print(json.dumps({"ok": False, "error": "config", "message": str(exc)}))
        else:
            print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VisteerError as exc:
        if as_json:
            print(json.dumps({"ok": False, "error": "task", "message": str(exc)}))
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK

    if as_json:
        print(
            json.dumps(
                {"ok": code == EXIT_OK, **cfg.to_dict(), "result": payload}, indent=2
            )
        )
    else:
        text = payload.pop("text", None)
        for key, value in payload.items():
            print(f"{key}: {value}")
        if text:
            print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
