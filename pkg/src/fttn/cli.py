"""Command-line front end: train / eval / anneal / bench.

Configuration is plain ``key=value`` lines plus flags, flags winning.
Every run echoes its effective configuration into ``config.echo`` in
the output directory; that file alone reruns the experiment via
``--config``. All randomness derives from the single top-level seed
through tagged sub-seeds. Exit codes: 0 success, 2 configuration
error, 3 data error.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import engine
from .anneal import AnnealConfig, AnnealError, accuracy_objective, anneal_beta
from .data import (
    Dataset,
    IdxFormatError,
    downscale_dataset,
    load_dataset,
)
from .features import FEATURE_MAPS, embed_images
from .model import (
    CheckpointFormatError,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .seeding import derive_seed
from .training import TrainConfig, forward_values, train

__all__ = ["main"]


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


_SHARED_DEFAULTS = {
    "seed": 0,
    "out": "out",
    "threads": 1,
    "chi": 8,
    "beta": 0.0,
    "feature_map": "linear",
    "downscale": 28,
    "label_site": None,
    "num_classes": 10,
}

_DEFAULTS = {
    "train": {
        **_SHARED_DEFAULTS,
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "epochs": 10,
        "batch_size": 50,
        "learning_rate": 1e-4,
        "noise_scale": 1e-2,
        "grad_mode": "mean",
        "clip_grad": None,
        "baseline": False,
        "temper_label": True,
    },
    "eval": {
        **_SHARED_DEFAULTS,
        "checkpoint": None,
        "images": None,
        "labels": None,
        "baseline": False,
        "temper_label": True,
    },
    "anneal": {
        **_SHARED_DEFAULTS,
        "train_images": None,
        "train_labels": None,
        "objective": "accuracy",
        "beta_init": 0.5,
        "step_width": 0.05,
        "anneal_temp_init": 1.0,
        "cooling_rate": 0.95,
        "iterations": 100,
        "proxy_epochs": 2,
        "proxy_subset": 400,
        "learning_rate": 1e-4,
        "batch_size": 50,
        "noise_scale": 1e-2,
    },
    "bench": {
        **_SHARED_DEFAULTS,
        "sizes": "64,128,256,512,1024",
        "repeats": 3,
        "backend": "active",
        "noise_scale": 0.05,
    },
}

_TYPES = {
    "seed": int, "threads": int, "chi": int, "downscale": int,
    "label_site": int, "num_classes": int, "epochs": int,
    "batch_size": int, "iterations": int, "proxy_epochs": int,
    "proxy_subset": int, "repeats": int,
    "beta": float, "learning_rate": float, "noise_scale": float,
    "clip_grad": float, "beta_init": float, "step_width": float,
    "anneal_temp_init": float, "cooling_rate": float,
    "baseline": bool, "temper_label": bool,
}


def _coerce(key: str, raw: str):
    if raw.lower() in ("none", ""):
        return None
    typ = _TYPES.get(key, str)
    if typ is bool:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _read_config_file(path, known):
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if key == "command":
            continue  # meta line from an echoed config
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fttn",
        description="Finite-temperature tensor network classifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, defaults in _DEFAULTS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key=value config file")
        for key in defaults:
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, default=None)
    return parser


def _effective_config(args) -> dict:
    defaults = _DEFAULTS[args.command]
    cfg = dict(defaults)
    if args.config:
        cfg.update(_read_config_file(args.config, set(defaults)))
    for key in defaults:
        raw = getattr(args, key)
        if raw is not None:
            cfg[key] = _coerce(key, str(raw))
    if cfg["feature_map"] not in FEATURE_MAPS:
        raise ConfigError(f"feature_map must be one of {sorted(FEATURE_MAPS)}")
    if cfg["downscale"] not in (14, 28):
        raise ConfigError("downscale must be 14 or 28")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    return cfg


def _echo_config(cfg: dict, command: str, out_dir: Path) -> None:
    lines = [f"command={command}"]
    for key in sorted(cfg):
        value = cfg[key]
        lines.append(f"{key}={'none' if value is None else value}")
    (out_dir / "config.echo").write_text("\n".join(lines) + "\n")


def _load_pair(images_path, labels_path, cfg) -> Dataset:
    if images_path is None or labels_path is None:
        raise DataError("dataset paths are required")
    try:
        ds = load_dataset(images_path, labels_path, cfg["num_classes"])
    except (OSError, IdxFormatError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if cfg["downscale"] != ds.image_shape[0]:
        try:
            ds = downscale_dataset(ds, cfg["downscale"])
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    return ds


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(str(x) for x in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        epochs=cfg.get("epochs", 1),
        beta=cfg["beta"],
        seed=cfg["seed"],
        feature_map=cfg["feature_map"],
        grad_mode=cfg.get("grad_mode", "mean"),
        clip_grad=cfg.get("clip_grad"),
        baseline=cfg.get("baseline", False),
        temper_label=cfg.get("temper_label", True),
    )


def cmd_train(cfg: dict) -> int:
    train_ds = _load_pair(cfg["train_images"], cfg["train_labels"], cfg)
    if len(train_ds) == 0:
        raise DataError("training dataset is empty")
    test_ds = None
    if cfg["test_images"] is not None:
        test_ds = _load_pair(cfg["test_images"], cfg["test_labels"], cfg)
    model = init_model(
        n_sites=train_ds.images.shape[1],
        chi=cfg["chi"],
        num_classes=train_ds.num_classes,
        seed=derive_seed(cfg["seed"], "model-init"),
        noise_scale=cfg["noise_scale"],
        label_site=cfg["label_site"],
    )
    tc = _train_config(cfg)
    model, metrics = train(model, train_ds, tc, test_ds, threads=cfg["threads"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "metrics.csv",
        "epoch,step,train_loss,train_acc,test_acc,beta,wall_time_s",
        [
            (
                r.epoch, r.step, f"{r.train_loss:.10g}", f"{r.train_acc:.6f}",
                f"{r.test_acc:.6f}", f"{r.beta:.10g}", f"{r.wall_time_s:.4f}",
            )
            for r in metrics
        ],
    )
    save_checkpoint(model, out / "model.fttn")
    _echo_config(cfg, "train", out)
    last = metrics[-1]
    print(
        f"trained {tc.epochs} epochs: train_acc={last.train_acc:.4f} "
        f"test_acc={last.test_acc:.4f}"
    )
    return 0


def cmd_eval(cfg: dict) -> int:
    if cfg["checkpoint"] is None:
        raise ConfigError("--checkpoint is required")
    try:
        model = load_checkpoint(cfg["checkpoint"])
    except (OSError, CheckpointFormatError) as exc:
        raise DataError(str(exc)) from exc
    ds = _load_pair(cfg["images"], cfg["labels"], cfg)
    if len(ds) == 0:
        raise DataError("evaluation dataset is empty")
    if ds.images.shape[1] != model.n_sites:
        raise DataError(
            f"dataset has {ds.images.shape[1]} pixels per image but the "
            f"model has {model.n_sites} sites"
        )
    values, _ = forward_values(
        model, ds.images, cfg["beta"], feature_map=cfg["feature_map"],
        baseline=cfg.get("baseline", False),
        temper_label=cfg.get("temper_label", True), threads=cfg["threads"],
    )
    preds = np.argmax(values, axis=1)
    acc = float(np.mean(preds == ds.labels))
    L = model.num_classes
    confusion = np.zeros((L, L), dtype=np.int64)
    np.add.at(confusion, (ds.labels, preds), 1)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "confusion.csv",
        "true," + ",".join(f"pred_{c}" for c in range(L)),
        [(c, *confusion[c]) for c in range(L)],
    )
    _echo_config(cfg, "eval", out)
    print(f"accuracy={acc:.6f}")
    return 0


def cmd_anneal(cfg: dict) -> int:
    anneal_cfg = AnnealConfig(
        beta_init=cfg["beta_init"],
        step_width=cfg["step_width"],
        anneal_temp_init=cfg["anneal_temp_init"],
        cooling_rate=cfg["cooling_rate"],
        iterations=cfg["iterations"],
        seed=derive_seed(cfg["seed"], "anneal-chain"),
        proxy_epochs=cfg["proxy_epochs"],
        proxy_subset=cfg["proxy_subset"],
    )
    if cfg["objective"] == "synthetic":
        objective = lambda beta: -((beta - 0.4) ** 2)  # noqa: E731
    elif cfg["objective"] == "accuracy":
        dataset = _load_pair(cfg["train_images"], cfg["train_labels"], cfg)
        tc = replace(_train_config(cfg), epochs=cfg["proxy_epochs"])
        template = {
            "chi": cfg["chi"],
            "seed": derive_seed(cfg["seed"], "model-init"),
            "noise_scale": cfg["noise_scale"],
            "label_site": cfg["label_site"],
        }
        objective = lambda beta: accuracy_objective(  # noqa: E731
            dataset, template, tc, beta,
            proxy_epochs=cfg["proxy_epochs"], proxy_subset=cfg["proxy_subset"],
        )
    else:
        raise ConfigError("objective must be 'accuracy' or 'synthetic'")
    out = Path(cfg["out"])
    try:
        beta_star, trace = anneal_beta(objective, anneal_cfg)
    except AnnealError as exc:
        out.mkdir(parents=True, exist_ok=True)
        _write_trace(out, exc.trace)
        print(f"anneal aborted: {exc}", file=sys.stderr)
        return 1
    out.mkdir(parents=True, exist_ok=True)
    _write_trace(out, trace)
    _echo_config(cfg, "anneal", out)
    print(f"beta_star={beta_star:.6f}")
    return 0


def _write_trace(out: Path, trace) -> None:
    _write_csv(
        out / "trace.csv",
        "iter,beta,score,accepted,anneal_temp",
        [
            (
                p.iteration, f"{p.beta:.10g}", f"{p.score:.10g}",
                int(p.accepted), f"{p.anneal_temp:.10g}",
            )
            for p in trace
        ],
    )


def cmd_bench(cfg: dict) -> int:
    try:
        sizes = [int(s) for s in str(cfg["sizes"]).split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"sizes: {exc}") from exc
    if not sizes or min(sizes) < 2:
        raise ConfigError("sizes must be integers >= 2")
    try:
        kernels = engine.get_kernels(cfg["backend"])
    except (ImportError, ValueError) as exc:
        raise ConfigError(f"backend {cfg['backend']!r} unavailable: {exc}") from exc
    chi = cfg["chi"]
    L = cfg["num_classes"]
    rows = []
    for n in sizes:
        model = init_model(
            n, chi, L, seed=derive_seed(cfg["seed"], f"bench-model-{n}"),
            noise_scale=cfg["noise_scale"], label_site=cfg["label_site"],
        )
        rng = np.random.default_rng(derive_seed(cfg["seed"], f"bench-image-{n}"))
        psi = embed_images(rng.uniform(0, 1, (1, n)), cfg["feature_map"])
        cores, label_core = engine.pack_model(model)
        results = {}
        for order, fn in (
            ("sequential", kernels.seq_forward),
            ("parallel_tree", kernels.tree_forward),
        ):
            best = None
            for _ in range(cfg["repeats"]):
                t0 = time.perf_counter_ns()
                values, kout = fn(cores, label_core, model.label_site, psi)
                dt = time.perf_counter_ns() - t0
                best = dt if best is None else min(best, dt)
            results[order] = (values[0], kout[0])
            flops = engine.count_flops(n, chi, model.local_dim, L, order)
            rows.append((order, n, chi, flops, best))
        v_seq, k_seq = results["sequential"]
        v_par, k_par = results["parallel_tree"]
        aligned = v_par * np.ldexp(1.0, int(k_par - k_seq))
        scale = max(np.max(np.abs(v_seq)), np.max(np.abs(aligned)))
        if np.max(np.abs(v_seq - aligned)) > 1e-10 * scale:
            print(f"bench cross-check failed at n={n}", file=sys.stderr)
            return 1
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "bench.csv", "order,n_sites,chi,flops,wall_time_ns", rows)
    _echo_config(cfg, "bench", out)
    print(f"benchmarked sizes {sizes} at chi={chi} [{cfg['backend']} kernels]")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "anneal": cmd_anneal,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _effective_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
