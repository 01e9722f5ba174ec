"""``sigkan`` command line: train, evaluate, predict, sigcheck, gradcheck.

Experiments are described by an INI file with ``[data]``, ``[model]``,
``[train]`` and ``[run]`` sections; command-line flags override single
values.  Every command validates its inputs before computing anything, so a
bad config never leaves partial output behind.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import MlpConfig, MlpNetwork, moving_average_sweep
from .checkpoint import ContainerError, load_model, save_model
from .data import (
    PIPELINES,
    POLICIES,
    TWO_WEEKS_HOURLY,
    ScalingState,
    default_seq_len,
    load_csv,
    prepare_dataset,
    read_header,
)
from .errors import ConfigError, DataError, NumericalError
from .gradcheck import DEFAULT_TOLERANCE, run_gradchecks
from .model import NetworkConfig, SigKanNetwork
from .sigcheck import run_suite
from .train import TrainConfig, evaluate, evaluate_loss, fit, score

log = logging.getLogger("sigkan")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
MODELS = ("sigkan", "sigdense", "mlp", "bench")
THREADS_ENV = "SIGKAN_THREADS"
ORACLE_NOTE = "window chosen by best test-set R2 (oracle selection, optimistic)"


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class DataSection:
    task: str = "volume"
    path: str = ""
    target: str = ""
    n_ahead: int = 1
    median_window: int = TWO_WEEKS_HOURLY
    policy: str = "error"
    seq_len: int = 0  # 0 means max(45, 5 * n_ahead)


@dataclass
class ModelSection:
    model: str = "sigkan"
    units: int = 100
    layers: int = 1
    sig_level: int = 2
    grid_size: int = 5
    spline_degree: int = 3
    grid_lo: float = -1.0
    grid_hi: float = 1.0
    hidden: int = 100
    sig_basepoint: bool = False
    sig_time: bool = False


@dataclass
class RunSection:
    output_dir: str = "runs"
    seeds: list[int] = field(default_factory=lambda: [0])


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def seq_len(self) -> int:
        return self.data.seq_len or default_seq_len(self.data.n_ahead)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section in ("data", "model", "train", "run"):
            values = dataclasses.asdict(getattr(self, section))
            parser[section] = {k: _format_value(v) for k, v in values.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


SECTIONS = {"data": DataSection, "model": ModelSection, "train": TrainConfig, "run": RunSection}


def _format_value(v) -> str:
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def _convert(path: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in ("list[int]",):
            items = [s for s in raw.replace(" ", "").split(",") if s]
            if not items:
                raise ValueError
            return [int(s) for s in items]
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r} as {kind if isinstance(kind, str) else kind.__name__}") from None
    return raw


def _field_kinds(cls) -> dict[str, object]:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _apply(cfg: RunConfig, section: str, key: str, raw: str) -> None:
    cls = SECTIONS[section]
    kinds = _field_kinds(cls)
    if key not in kinds:
        raise ConfigError(f"{section}.{key}: unknown setting; expected one of {sorted(kinds)}")
    value = _convert(f"{section}.{key}", raw, kinds[key])
    setattr(getattr(cfg, section), key, value)


def load_config(path: str | None, overrides: list[tuple[str, str, str]] = ()) -> RunConfig:
    """Parse an INI file (if given), then apply ``(section, key, value)`` overrides."""
    cfg = RunConfig()
    base = Path(".")
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: malformed config: {exc}") from None
        base = Path(path).parent
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"[{section}]: unknown section; expected {sorted(SECTIONS)}")
            for key, raw in parser[section].items():
                _apply(cfg, section, key, raw)
        # relative paths in a config file are relative to that file
        for section, key in (("data", "path"), ("run", "output_dir")):
            value = getattr(getattr(cfg, section), key)
            if value and parser.has_option(section, key) and not Path(value).is_absolute():
                setattr(getattr(cfg, section), key, str(base / value))
    for section, key, raw in overrides:
        _apply(cfg, section, key, raw)
    return cfg


def validate(cfg: RunConfig, *, need_data: bool = True) -> None:
    """Check every field; raises :class:`ConfigError` naming the field path."""
    d, m, r = cfg.data, cfg.model, cfg.run
    if d.task not in PIPELINES:
        raise ConfigError(f"data.task: {d.task!r} is not one of {PIPELINES}")
    if d.policy not in POLICIES:
        raise ConfigError(f"data.policy: {d.policy!r} is not one of {POLICIES}")
    if m.model not in MODELS:
        raise ConfigError(f"model.model: {m.model!r} is not one of {MODELS}")
    positive = {"data.n_ahead": d.n_ahead, "data.median_window": d.median_window,
                "model.units": m.units, "model.layers": m.layers, "model.sig_level": m.sig_level,
                "model.grid_size": m.grid_size, "model.hidden": m.hidden}
    for name, value in positive.items():
        if value < 1:
            raise ConfigError(f"{name}: must be >= 1, got {value}")
    if d.seq_len < 0:
        raise ConfigError(f"data.seq_len: must be >= 0, got {d.seq_len}")
    if m.spline_degree < 0:
        raise ConfigError(f"model.spline_degree: must be >= 0, got {m.spline_degree}")
    if not m.grid_lo < m.grid_hi:
        raise ConfigError(f"model.grid_lo/grid_hi: need lo < hi, got [{m.grid_lo}, {m.grid_hi}]")
    try:
        cfg.train = TrainConfig(**dataclasses.asdict(cfg.train))
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    if not r.seeds:
        raise ConfigError("run.seeds: at least one seed is required")
    if len(set(r.seeds)) != len(r.seeds):
        raise ConfigError(f"run.seeds: duplicate seeds in {r.seeds}")
    if not r.output_dir:
        raise ConfigError("run.output_dir: must be set")
    if need_data:
        if not d.path:
            raise ConfigError("data.path: must be set")
        if not Path(d.path).is_file():
            raise ConfigError(f"data.path: file {d.path} does not exist")
        if not d.target:
            raise ConfigError("data.target: must be set")
        header = read_header(d.path)
        if d.target not in header[1:]:
            raise ConfigError(f"data.target: column {d.target!r} not found in {d.path}; "
                              f"columns are {header[1:]}")


def network_config(cfg: RunConfig, d_in: int):
    m = cfg.model
    if m.model == "mlp":
        return MlpConfig(d_in=d_in, seq_len=cfg.seq_len, n_ahead=cfg.data.n_ahead, hidden=m.hidden)
    return NetworkConfig(d_in=d_in, seq_len=cfg.seq_len, n_ahead=cfg.data.n_ahead,
                         variant=m.model, units=m.units, n_layers=m.layers,
                         sig_level=m.sig_level, grid_size=m.grid_size,
                         spline_degree=m.spline_degree, grid_lo=m.grid_lo, grid_hi=m.grid_hi,
                         hidden=m.hidden, sig_basepoint=m.sig_basepoint, sig_time=m.sig_time)


def build_network(cfg: RunConfig, d_in: int, seed: int):
    net_cfg = network_config(cfg, d_in)
    if isinstance(net_cfg, MlpConfig):
        return MlpNetwork.init(net_cfg, seed)
    return SigKanNetwork.init(net_cfg, seed)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def metrics_report(header: dict, r2: float, r2_h, mse: float, mse_h) -> str:
    lines = [f"{k}: {v}" for k, v in header.items()]
    lines += [f"r2: {_fmt(r2)}", f"mse: {_fmt(mse)}", "", "horizon,r2,mse"]
    lines += [f"{h},{_fmt(a)},{_fmt(b)}" for h, (a, b) in enumerate(zip(r2_h, mse_h), start=1)]
    return "\n".join(lines) + "\n"


def write_per_step(path, r2_h, mse_h) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "r2", "mse"])
        for h, (a, b) in enumerate(zip(r2_h, mse_h), start=1):
            w.writerow([h, _fmt(a), _fmt(b)])


def write_summary(path, per_seed: list[tuple[int, object]]) -> None:
    """Mean and (population) standard deviation over seeds, per horizon and pooled."""
    r2 = np.array([ev.r2_per_horizon for _, ev in per_seed])
    mse = np.array([ev.mse_per_horizon for _, ev in per_seed])
    pooled_r2 = np.array([ev.r2 for _, ev in per_seed])
    pooled_mse = np.array([ev.mse for _, ev in per_seed])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "r2_mean", "r2_std", "mse_mean", "mse_std", "runs"])
        for h in range(r2.shape[1]):
            w.writerow([h + 1, _fmt(r2[:, h].mean()), _fmt(r2[:, h].std()),
                        _fmt(mse[:, h].mean()), _fmt(mse[:, h].std()), len(per_seed)])
        w.writerow(["all", _fmt(pooled_r2.mean()), _fmt(pooled_r2.std()),
                    _fmt(pooled_mse.mean()), _fmt(pooled_mse.std()), len(per_seed)])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _load_dataset(cfg: RunConfig, state: ScalingState | None = None):
    raw = load_csv(cfg.data.path, cfg.data.target, cfg.data.policy)
    ds, stamps = prepare_dataset(raw, cfg.data.task, cfg.data.n_ahead,
                                 median_window=cfg.data.median_window, seq_len=cfg.seq_len,
                                 state=state)
    for name in ("train", "val", "test"):
        if len(ds.split(name)[0]) == 0:
            raise DataError(f"{cfg.data.path}: the {name} split has no complete windows; "
                            f"the series is too short for seq_len {cfg.seq_len}")
    return raw, ds, stamps


def cmd_train(cfg: RunConfig) -> int:
    validate(cfg)
    raw, ds, _ = _load_dataset(cfg)
    out = Path(cfg.run.output_dir)
    if cfg.model.model == "bench":
        x_te_origins = ds.origins[ds.test_idx]
        bench = moving_average_sweep(ds.series[:, ds.target_col], x_te_origins, cfg.data.n_ahead)
        preds_truth = ds.targets[ds.test_idx]
        out.mkdir(parents=True, exist_ok=True)
        mse_h = _bench_mse(ds, bench.window, x_te_origins)
        header = {"model": "bench", "task": cfg.data.task, "target": cfg.data.target,
                  "n_ahead": cfg.data.n_ahead, "n_test": len(preds_truth),
                  "window": bench.window, "selection": ORACLE_NOTE}
        (out / "metrics.txt").write_text(metrics_report(
            header, bench.r2, bench.per_horizon, float(np.mean(mse_h)), mse_h))
        print(f"bench: window {bench.window}, test R2 {bench.r2:.6f} ({ORACLE_NOTE})")
        return EXIT_OK

    # build every model before writing anything, so shape problems surface first
    nets = {seed: build_network(cfg, ds.d_in, seed) for seed in cfg.run.seeds}
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    results = []
    for seed, net in nets.items():
        train_cfg = dataclasses.replace(cfg.train, seed=seed)
        res = fit(net, ds, train_cfg)
        ev = evaluate(net, *ds.split("test"))
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        extra = {"data": dataclasses.asdict(cfg.data), "columns": raw.names,
                 "scaling": ds.state.meta(), "maxima": [float(v) for v in ds.state.maxima],
                 "best_val_loss": res.best_val_loss, "best_epoch": res.best_epoch, "seed": seed}
        save_model(seed_dir / "model.ckpt", net, extra)
        res.write_csv(seed_dir / "history.csv")
        header = {"model": cfg.model.model, "task": cfg.data.task, "target": cfg.data.target,
                  "n_ahead": cfg.data.n_ahead, "seed": seed, "n_test": ev.n,
                  "epochs": len(res.history), "best_epoch": res.best_epoch,
                  "best_val_loss": _fmt(res.best_val_loss)}
        (seed_dir / "metrics.txt").write_text(
            metrics_report(header, ev.r2, ev.r2_per_horizon, ev.mse, ev.mse_per_horizon))
        print(f"seed {seed}: {len(res.history)} epochs, best val {res.best_val_loss:.6g}, "
              f"test R2 {ev.r2:.6f}")
        results.append((seed, ev))
    write_summary(out / "summary.csv", results)
    return EXIT_OK


def _bench_mse(ds, window: int, origins) -> np.ndarray:
    from .baselines import moving_average_predict

    preds, truth, _ = moving_average_predict(ds.series[:, ds.target_col], window,
                                             ds.n_ahead, origins)
    return ((preds - truth) ** 2).mean(axis=0)


def _checkpoint_config(meta: dict, data_path: str | None, target: str | None) -> RunConfig:
    cfg = RunConfig()
    for key, value in meta["extra"]["data"].items():
        setattr(cfg.data, key, value)
    if data_path:
        cfg.data.path = data_path
    if target:
        cfg.data.target = target
    return cfg


def _open_checkpoint(args):
    model, meta = load_model(args.checkpoint)
    if "data" not in meta.get("extra", {}):
        raise ConfigError(f"{args.checkpoint}: checkpoint lacks its data settings")
    cfg = _checkpoint_config(meta, args.data, args.target)
    validate(cfg)
    header = read_header(cfg.data.path)[1:]
    columns = meta["extra"]["columns"] if cfg.data.task == "volume" else [cfg.data.target]
    missing = [c for c in columns if c not in header]
    if missing:
        raise DataError(f"{cfg.data.path}: missing column(s) {missing} needed by the checkpoint")
    state = ScalingState.from_parts(meta["extra"]["scaling"], {"maxima": meta["extra"]["maxima"]})
    raw = load_csv(cfg.data.path, cfg.data.target, cfg.data.policy)
    if cfg.data.task == "volume" and raw.names != columns:
        raise DataError(f"dimension mismatch: checkpoint expects columns {columns}, "
                        f"found {raw.names}")
    ds, stamps = prepare_dataset(raw, cfg.data.task, cfg.data.n_ahead,
                                 median_window=cfg.data.median_window, seq_len=cfg.seq_len,
                                 state=state)
    want = (model.config.seq_len, model.config.d_in)
    found = (ds.seq_len, ds.d_in)
    if want != found:
        raise DataError(f"dimension mismatch: checkpoint expects (seq_len, d_in) = {want}, "
                        f"data gives {found}")
    return model, meta, cfg, ds, stamps


def cmd_evaluate(args) -> int:
    model, meta, cfg, ds, _ = _open_checkpoint(args)
    if len(ds.test_idx) == 0:
        raise DataError("no complete test windows in the data")
    ev = evaluate(model, *ds.split("test"))
    val_loss = evaluate_loss(model, *ds.split("val")) if len(ds.val_idx) else float("nan")
    header = {"model": meta["model"], "checkpoint": Path(args.checkpoint).name,
              "task": cfg.data.task, "target": cfg.data.target, "n_ahead": cfg.data.n_ahead,
              "n_test": ev.n, "val_loss": _fmt(val_loss),
              "recorded_best_val_loss": _fmt(meta["extra"].get("best_val_loss", float("nan")))}
    report = metrics_report(header, ev.r2, ev.r2_per_horizon, ev.mse, ev.mse_per_horizon)
    if args.output:
        Path(args.output).write_text(report)
    else:
        sys.stdout.write(report)
    if args.per_step:
        write_per_step(args.per_step, ev.r2_per_horizon, ev.mse_per_horizon)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _, cfg, ds, stamps = _open_checkpoint(args)
    preds = model.predict(ds.inputs)
    split = np.full(len(ds), "none", dtype=object)
    for name, idx in (("train", ds.train_idx), ("val", ds.val_idx), ("test", ds.test_idx)):
        split[idx] = name
    # one more forecast from the final seq_len rows, whose targets lie in the future
    tail = model.predict(ds.series[None, -ds.seq_len:])
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n = cfg.data.n_ahead
        w.writerow(["timestamp", "split"] + [f"pred_{h}" for h in range(1, n + 1)]
                   + [f"true_{h}" for h in range(1, n + 1)])
        for i, t in enumerate(ds.origins):
            w.writerow([_fmt(stamps[t]), split[i]] + [_fmt(v) for v in preds[i]]
                       + [_fmt(v) for v in ds.targets[i]])
        w.writerow([_fmt(stamps[-1]), "future"] + [_fmt(v) for v in tail[0]] + [""] * n)
    print(f"wrote {len(ds) + 1} rows to {args.output}")
    return EXIT_OK


def cmd_sigcheck(args) -> int:
    if not 1 <= args.level <= 5:
        raise ConfigError(f"--level: must lie in [1, 5], got {args.level}")
    if not 1 <= args.dim <= 4:
        raise ConfigError(f"--dim: must lie in [1, 4], got {args.dim}")
    if args.trials < 1:
        raise ConfigError(f"--trials: must be >= 1, got {args.trials}")
    results = run_suite(args.level, args.dim, args.trials, args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_NUMERICAL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if not args.tolerance > 0:
        raise ConfigError(f"--tolerance: must be positive, got {args.tolerance}")
    results = run_gradchecks(args.seed, args.tolerance)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_NUMERICAL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

# flag name -> (section, key)
TRAIN_FLAGS = {
    "task": ("data", "task"), "data": ("data", "path"), "target": ("data", "target"),
    "n_ahead": ("data", "n_ahead"), "median_window": ("data", "median_window"),
    "policy": ("data", "policy"), "model": ("model", "model"), "units": ("model", "units"),
    "layers": ("model", "layers"), "sig_level": ("model", "sig_level"),
    "learning_rate": ("train", "learning_rate"), "batch_size": ("train", "batch_size"),
    "max_epochs": ("train", "max_epochs"), "output_dir": ("run", "output_dir"),
    "seeds": ("run", "seeds"),
}


def _env_threads() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV}: must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigkan", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a model for each seed and write reports")
    train.add_argument("--config", help="INI run configuration")
    for flag in TRAIN_FLAGS:
        train.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None)
    train.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: config, then ${THREADS_ENV}, then 1)")
    train.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                       help="ordered gradient reduction (default on)")

    for name, help_text in (("evaluate", "score a checkpoint on the test split"),
                            ("predict", "write forecasts for every window")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="CSV to use instead of the one recorded in the checkpoint")
        p.add_argument("--target", help="target column override")
        p.add_argument("--output", required=name == "predict",
                       help="write the report/forecasts here")
        if name == "evaluate":
            p.add_argument("--per-step", help="CSV with one R2/MSE row per forecast step")

    sig = sub.add_parser("sigcheck", help="randomised signature property suite")
    sig.add_argument("--level", type=int, default=2)
    sig.add_argument("--dim", type=int, default=2)
    sig.add_argument("--trials", type=int, default=100)
    sig.add_argument("--seed", type=int, default=0)

    grad = sub.add_parser("gradcheck", help="finite-difference checks of every layer")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    return parser


def _train_config_from_args(args) -> RunConfig:
    overrides = [(*TRAIN_FLAGS[k], getattr(args, k)) for k in TRAIN_FLAGS
                 if getattr(args, k) is not None]
    cfg = load_config(args.config, overrides)
    config_sets_threads = False
    if args.config:
        parser = configparser.ConfigParser()
        parser.read(args.config)
        config_sets_threads = parser.has_option("train", "threads")
    if args.threads is not None:
        cfg.train.threads = args.threads
    elif not config_sets_threads:
        cfg.train.threads = _env_threads() or 1
    if args.deterministic is not None:
        cfg.train.deterministic = args.deterministic
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return cmd_train(_train_config_from_args(args))
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "sigcheck":
            return cmd_sigcheck(args)
        return cmd_gradcheck(args)
    except ContainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
