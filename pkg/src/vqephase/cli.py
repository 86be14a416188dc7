"""``vqephase`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 gradient check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

logger = logging.getLogger("vqephase")


def _set_threads(n: int | None) -> None:
    # must run before numpy/BLAS initialise their pools
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    logger.info("wrote %s", path)


def _write_csv(path: Path, text: str, cfg) -> None:
    """CSV with a leading ``#`` provenance line (format version, layout, config hash)."""
    from .dataset import FORMAT_VERSION

    s = _meta_stamp(cfg)
    head = (f"# format_version={FORMAT_VERSION} layout_id={s['layout_id']} "
            f"config_hash={s['config_hash']}\n")
    _write(path, head + text)


def _require(value, what: str):
    from .config import ConfigError

    if not value:
        raise ConfigError(f"{what} is required (set it under paths: in the config)")
    return value


def _meta_stamp(cfg) -> dict:
    from . import __version__
    from .pipeline import template_for

    return {"config_hash": cfg.config_hash(), "layout_id": template_for(cfg).layout_id,
            "code_version": __version__}


def cmd_sweep(cfg, out: Path) -> None:
    from .analysis import to_csv
    from .dataset import save_dataset
    from .pipeline import run_sweep

    ds = run_sweep(cfg)
    ds.metadata.update({"config_hash": cfg.config_hash(), "seed": cfg.seed})
    save_dataset(out / "dataset.jsonl", ds)
    energies = [r.final_energy for r in ds.records]
    conv = sum(r.converged for r in ds.records)
    rows = [("n_records", len(ds)), ("n_converged", conv),
            ("n_failed", sum(1 for r in ds.records if r.error))]
    if energies:
        rows += [("energy_min", min(energies)), ("energy_max", max(energies))]
    _write_csv(out / "sweep_summary.csv", to_csv(["quantity", "value"], rows), cfg)


def _load_checked_dataset(cfg):
    from .dataset import load_dataset
    from .pipeline import check_layout

    ds = load_dataset(_require(cfg.paths.dataset, "paths.dataset"))
    check_layout(ds, cfg)
    return ds


def _load_model(path, cfg):
    from .generative import MODEL_TYPES
    from .pipeline import StageError, template_for
    from .tensor.checkpoint import load_checkpoint

    _, meta = load_checkpoint(path)
    cls = MODEL_TYPES.get(meta.get("model"))
    if cls is None:
        raise StageError(f"{path}: unknown model type {meta.get('model')!r}")
    lid = meta.get("layout_id")
    if lid is not None and lid != template_for(cfg).layout_id:
        raise StageError(f"{path}: checkpoint layout_id {lid} does not match the config")
    return cls.load(path)


def cmd_train(cfg, out: Path) -> None:
    from .analysis import to_csv
    from .pipeline import train_diffusion, train_vae

    ds = _load_checked_dataset(cfg)
    stamp = _meta_stamp(cfg)
    if cfg.variant == "diffusion":
        vae = _load_model(_require(cfg.paths.vae_checkpoint, "paths.vae_checkpoint"), cfg)
        model = train_diffusion(vae, ds, cfg)
        stamp["vae_hash"] = model.vae_hash_
        path = out / "diffusion.ckpt"
    else:
        model = train_vae(ds, cfg)
        path = out / f"{cfg.variant}.ckpt"
    model.save(path, stamp)
    logger.info("wrote %s", path)
    hist = [(i, v) for i, v in enumerate(model.loss_history_)]
    _write_csv(out / f"{cfg.variant}_loss.csv", to_csv(["epoch", "loss"], hist), cfg)


def cmd_analyze(cfg, out: Path) -> None:
    from .pipeline import analyze

    ds = _load_checked_dataset(cfg)
    vae = _load_model(_require(cfg.paths.checkpoint or cfg.paths.vae_checkpoint,
                               "paths.checkpoint"), cfg)
    res = analyze(vae, ds, cfg)
    for name, text in res["csvs"].items():
        _write_csv(out / name, text, cfg)


def cmd_generate(cfg, out: Path) -> None:
    from .dataset import save_dataset
    from .pipeline import generate

    ds = _load_checked_dataset(cfg)
    diffusion = None
    if cfg.generate.method == "diffusion":
        vae = _load_model(_require(cfg.paths.vae_checkpoint, "paths.vae_checkpoint"), cfg)
        diffusion = _load_model(_require(cfg.paths.checkpoint, "paths.checkpoint"), cfg)
    else:
        vae = _load_model(_require(cfg.paths.checkpoint, "paths.checkpoint"), cfg)
    gen = generate(cfg, vae, diffusion, ds.metadata)
    gen.metadata["config_hash"] = cfg.config_hash()
    save_dataset(out / f"generated_label{cfg.generate.label}.jsonl", gen)


def cmd_eval(cfg, out: Path) -> None:
    from .analysis import to_csv
    from .pipeline import evaluate

    ds = _load_checked_dataset(cfg)
    header, rows, agg = evaluate(ds, cfg)
    _write_csv(out / "metrics.csv", to_csv(header, rows), cfg)
    _write_csv(out / "metrics_summary.csv", to_csv(["column", "statistic", "value"], agg), cfg)


def cmd_exact(cfg, out: Path) -> None:
    from .analysis import to_csv
    from .pipeline import exact_rows

    header, rows = exact_rows(cfg)
    _write_csv(out / "exact.csv", to_csv(header, rows), cfg)
    meta = {"family": cfg.model.family, "n_qubits": cfg.model.n_qubits,
            "boundary": cfg.model.boundary, "penalty": cfg.vqe.penalty, **_meta_stamp(cfg)}
    _write(out / "exact_meta.json", json.dumps(meta, sort_keys=True, indent=1) + "\n")


def cmd_gradcheck(cfg, out: Path) -> bool:
    from .analysis import to_csv
    from .pipeline import gradcheck

    report = gradcheck(cfg.seed)
    _write_csv(out / "gradcheck.csv", to_csv(["check", "error", "passed"], report), cfg)
    for name, err, ok in report:
        print(f"{'PASS' if ok else 'FAIL'} {name} {err:.3e}")
    return all(ok for _, _, ok in report)


COMMANDS = {"sweep": cmd_sweep, "train": cmd_train, "analyze": cmd_analyze,
            "generate": cmd_generate, "eval": cmd_eval, "exact": cmd_exact,
            "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqephase", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None)
        if name == "train":
            p.add_argument("--variant", choices=("vae", "cvae", "diffusion"), default=None)
        if name == "generate":
            p.add_argument("--label", type=int, default=None)
            p.add_argument("-n", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)

    from .config import ConfigError, load_config

    try:
        cfg = load_config(args.config)
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if getattr(args, "variant", None):
            updates["variant"] = args.variant
        gen = {}
        if getattr(args, "label", None) is not None:
            gen["label"] = args.label
        if getattr(args, "n", None) is not None:
            gen["n"] = args.n
        if gen:
            updates["generate"] = cfg.generate.model_copy(update=gen)
        cfg = cfg.model_copy(update=updates)
        out = _out_dir(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("stage failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.command == "gradcheck" and not result:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
