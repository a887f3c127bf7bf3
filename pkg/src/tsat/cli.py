"""Command-line entry point: ``tsat <command> [options]``.

Every run resolves its configuration as defaults < ``--config`` JSON file <
explicit flags, and writes the resolved configuration to
``resolved_config.json`` in the output directory. Exit codes: 0 success,
1 internal error, 2 bad user input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import data as dio
from .emd import decompose
from .errors import ConfigError, InputError
from .model import TsatConfig, forward, load_checkpoint, save_checkpoint
from .training import (VARIANTS, TrainConfig, ablation_run, evaluate, persistence_baseline,
                       report_from_predictions, train, write_curve_csv, write_reports_csv)

logger = logging.getLogger("tsat")

OUTPUT_ENV = "TSAT_OUTPUT_DIR"


@dataclass
class RunConfig:
    data: str = ""
    output_dir: str = ""
    backcast: int = 48
    horizon: int = 12
    stride: int = 1
    n_imfs: int = 4
    threshold: float = 0.5
    sd_threshold: float = 0.2
    max_sift_iter: int = 100
    d_model: int = 16
    d_k: int = 8
    d_v: int = 8
    n_heads: int = 4
    n_blocks: int = 1
    ffn_width: int = 0
    dropout: float = 0.1
    imf_activation: str = "softmax"
    use_edge: bool = True
    use_adjacency: bool = True
    batch_size: int = 64
    initial_lr: float = 1e-4
    decay_gamma: float = 5e-3
    max_epochs: int = 2000
    patience: int = 20
    seed: int = 0

    def model_config(self, n_series) -> TsatConfig:
        return TsatConfig(
            n_series=n_series, backcast=self.backcast, horizon=self.horizon, n_imfs=self.n_imfs,
            d_model=self.d_model, d_k=self.d_k, d_v=self.d_v, n_heads=self.n_heads,
            n_blocks=self.n_blocks, ffn_width=self.ffn_width, dropout=self.dropout,
            imf_activation=self.imf_activation, use_edge=self.use_edge,
            use_adjacency=self.use_adjacency, threshold=self.threshold, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.initial_lr, self.decay_gamma, self.max_epochs,
                           self.patience, self.seed)


def _field_types():
    return {f.name: f.type for f in fields(RunConfig)}


def load_run_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(raw) - set(_field_types())
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return raw


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_run_config(args.config))
    for name in _field_types():
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    rc = RunConfig(**values)
    if not rc.output_dir:
        rc.output_dir = os.environ.get(OUTPUT_ENV, "tsat_runs")
    return rc


def echo_config(rc: RunConfig, out_dir: Path):
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(asdict(rc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(rc):
    path = Path(rc.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_frame(rc):
    if not rc.data:
        raise ConfigError("no input data given (use --data or the config's \"data\" key)")
    return dio.load_csv(rc.data)


# --- commands ----------------------------------------------------------------

def cmd_decompose(args):
    frame = dio.load_csv(args.input)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "component", "t", "value"])
        for name, row in zip(frame.series_names, frame.values):
            d = decompose(row, args.k_max, args.sd_threshold, args.max_iter)
            parts = [(f"imf{k + 1}", f) for k, f in enumerate(d.imfs)] + [("residual", d.residual)]
            for label, comp in parts:
                for t, v in enumerate(comp):
                    w.writerow([name, label, t, repr(float(v))])
    return 0


def cmd_build_graph(args):
    rc = resolve_config(args)
    frame = _load_frame(rc)
    out = _out_dir(rc)
    splits = dio.split_sequential(frame, rc.backcast, rc.horizon)
    stats = dio.normalization_stats(frame.values, splits.train)
    values = frame.values if args.raw else dio.apply_normalization(frame.values, stats)
    windows = []
    graphs = []
    for name, r in splits.as_dict().items():
        w = dio.make_windows(values[:, r.start:r.stop], rc.backcast, rc.horizon, rc.stride, r.start, name)
        windows.append((name, w))
        graphs.extend(dio.build_window_graphs(w, rc.n_imfs, rc.threshold, frame.series_names,
                                              rc.sd_threshold, rc.max_sift_iter))
    dio.export_archive(graphs, out / "graphs.jsonl")
    dio.write_manifest(windows, out / "manifest.csv")
    echo_config(rc, out)
    return 0


def _portable(rc):
    """Run config minus where it was written, so checkpoints do not depend on their location."""
    d = asdict(rc)
    d.pop("output_dir")
    return d


def _prepare(rc, frame, stats=None):
    return dio.prepare_splits(frame, rc.backcast, rc.horizon, rc.stride, rc.n_imfs, rc.threshold,
                              rc.sd_threshold, rc.max_sift_iter, stats=stats)


def cmd_train(args):
    rc = resolve_config(args)
    frame = _load_frame(rc)
    out = _out_dir(rc)
    echo_config(rc, out)
    started = time.perf_counter()
    datasets, stats, _ = _prepare(rc, frame)
    cfg = rc.model_config(frame.n_series)
    params, val_report, curve = train(cfg, datasets["train"], datasets["val"], rc.train_config())
    test_report = evaluate(params, cfg, datasets["test"], "TSAT", epochs_run=val_report.epochs_run,
                           best_val_rmse=val_report.best_val_rmse, seed=rc.seed)
    base = persistence_baseline(datasets["test"].batch.X, rc.horizon)
    persist = report_from_predictions(base, datasets["test"].Y, "persistence", seed=rc.seed)
    save_checkpoint(out / "checkpoint.json", params, cfg,
                    extra={"normalization": stats.to_dict(), "run_config": _portable(rc)})
    write_curve_csv(curve, out / "loss_curve.csv")
    write_reports_csv([test_report, persist], out / "metrics.csv")
    # wall-clock goes to stdout only, so output files stay byte-identical across reruns
    print(f"test rmse {test_report.rmse:.6f} mae {test_report.mae:.6f} "
          f"(persistence rmse {persist.rmse:.6f}); epochs {val_report.epochs_run}; "
          f"{time.perf_counter() - started:.1f} s")
    return 0


def _checkpoint_inputs(args):
    params, cfg, extra = load_checkpoint(args.checkpoint)
    rc = RunConfig(**extra.get("run_config", {}))
    stats = dio.NormStats.from_dict(extra["normalization"])
    frame = dio.load_csv(args.data)
    if frame.n_series != cfg.n_series:
        raise ConfigError(f"data has {frame.n_series} series, checkpoint expects {cfg.n_series}")
    return params, cfg, rc, stats, frame


def cmd_evaluate(args):
    params, cfg, rc, stats, frame = _checkpoint_inputs(args)
    out = Path(args.out or Path(args.checkpoint).parent / "evaluation")
    out.mkdir(parents=True, exist_ok=True)
    datasets, _, _ = _prepare(rc, frame, stats)
    test = datasets["test"]
    report = evaluate(params, cfg, test, "TSAT", seed=rc.seed)
    write_reports_csv([report], out / "metrics.csv")
    pred = forward(test.batch, params, cfg).forecasts.data
    pred_raw, target_raw = dio.denormalize(pred, stats), dio.denormalize(test.Y, stats)
    with open(out / "forecasts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_index", "node", "step", "pred", "target", "pred_denorm", "target_denorm"])
        for i in range(pred.shape[0]):
            for n, name in enumerate(frame.series_names):
                for h in range(pred.shape[2]):
                    w.writerow([i, name, h + 1, repr(pred[i, n, h]), repr(test.Y[i, n, h]),
                                repr(pred_raw[i, n, h]), repr(target_raw[i, n, h])])
    print(f"test rmse {report.rmse:.6f} mae {report.mae:.6f}")
    return 0


def cmd_ablate(args):
    rc = resolve_config(args)
    frame = _load_frame(rc)
    out = _out_dir(rc)
    echo_config(rc, out)
    datasets, _, _ = _prepare(rc, frame)
    result = ablation_run(datasets["train"], datasets["val"], datasets["test"],
                          rc.model_config(frame.n_series), rc.train_config(), VARIANTS,
                          dataset=Path(rc.data).stem)
    write_reports_csv(result.reports, out / "ablation.csv")
    table = result.table()
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    failed = [r.variant for r in result.reports if r.error]
    return 1 if failed else 0


def cmd_embed(args):
    params, cfg, rc, stats, frame = _checkpoint_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datasets, _, _ = _prepare(rc, frame, stats)
    ds = datasets[args.split]
    result = forward(ds.batch, params, cfg)
    nodes, pooled = result.node_embeddings.data, result.graph_embedding.data
    dims = [f"dim_{j}" for j in range(nodes.shape[-1])]
    with open(out / "node_embeddings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_index", "node"] + dims)
        for i in range(nodes.shape[0]):
            for n, name in enumerate(frame.series_names):
                w.writerow([i, name] + [repr(v) for v in nodes[i, n].tolist()])
    with open(out / "pooled_embeddings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_index"] + dims)
        for i in range(pooled.shape[0]):
            w.writerow([i] + [repr(v) for v in pooled[i].tolist()])
    return 0


def cmd_synth(args):
    frame = dio.synth_coupled_sinusoids(args.n_series, args.length, args.groups, args.noise_std, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dio.write_csv(frame, out)
    return 0


# --- parser ------------------------------------------------------------------

_FLAG_HELP = {
    "data": "input CSV", "output_dir": f"output directory (default ${OUTPUT_ENV} or ./tsat_runs)",
    "backcast": "backcast length L_x", "horizon": "forecast length L_y", "n_imfs": "IMF slots K",
    "threshold": "adjacency threshold c",
}


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run configuration")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = {"int": int, "float": float, "str": str, "bool": bool}[f.type if isinstance(f.type, str)
                                                                       else f.type.__name__]
        if kind is bool:
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=f.name, type=kind, default=None, help=_FLAG_HELP.get(f.name))


def build_parser():
    parser = argparse.ArgumentParser(prog="tsat", description="Forecasting with attention over EMD dynamic graphs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="EMD of every series into IMFs + residual")
    p.add_argument("--input", required=True)
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--sd-threshold", type=float, default=0.2)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; decomposition is deterministic")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("build-graph", help="dynamic graphs for every window, plus a manifest")
    _add_run_flags(p)
    p.add_argument("--input", dest="data", help="alias of --data")
    p.add_argument("--raw", action="store_true", help="skip z-score normalization")
    p.set_defaults(func=cmd_build_graph)

    for name, func, text in (("train", cmd_train, "train TSAT and evaluate on the test split"),
                             ("ablate", cmd_ablate, "train the four ablation variants")):
        p = sub.add_parser(name, help=text)
        _add_run_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="test-split metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="export node and pooled embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("synth", help="write a coupled-sinusoid CSV")
    p.add_argument("--n-series", type=int, default=6)
    p.add_argument("--length", type=int, default=4096)
    p.add_argument("--groups", type=int, default=2)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"tsat {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        logger.debug("internal error", exc_info=True)
        print(f"tsat {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
