"""Command-line pipeline: prepare, train, evaluate, diagnose, sweep-k, graph-stats.

Exit codes: 0 success, 2 input/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys

import numpy as np

from . import data as data_mod
from .config import ConfigError, RunConfig, load_config_file, resolve, write_config
from .evaluation import evaluate, smoothness
from .graph import build_graph, degree_histogram
from .model import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .seeding import derive_seed
from .trainer import NumericalError, TrainConfig, train

log = logging.getLogger("lrgccf")

EXIT_INPUT = 2
EXIT_NUMERIC = 3

PREPARE_KEYS = ["input", "format", "kcore", "ratios", "seed", "out"]
MODEL_KEYS = ["k", "dim", "mode", "residual", "learn_transform"]
TRAIN_KEYS = ["lr", "reg", "epochs", "batch_size", "negatives", "patience", "eval_every"]


class UsageError(Exception):
    pass


def _fmt(x: float) -> str:
    return f"{x:.8f}"


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", dest="config_file", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def _add_model_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data")
    p.add_argument("--k", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--lambda", dest="reg", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--mode", choices=["paper", "sqrt"])
    p.add_argument("--residual", choices=["on", "off"])
    p.add_argument("--learn-transform", dest="learn_transform", choices=["on", "off"])
    p.add_argument("--negatives", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrgccf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="k-core filter and split raw interactions")
    _add_shared(p)
    p.add_argument("--input")
    p.add_argument("--format", choices=["tsv", "csv"])
    p.add_argument("--kcore", type=int)
    p.add_argument("--ratios")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_shared(p)
    _add_model_train(p)

    p = sub.add_parser("evaluate", help="HR@N / NDCG@N of a checkpoint")
    _add_shared(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", choices=["val", "test"])
    p.add_argument("--topn")

    p = sub.add_parser("diagnose", help="per-layer cosine-similarity statistics")
    _add_shared(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--k", type=int)
    p.add_argument("--pairs", type=int)

    p = sub.add_parser("sweep-k", help="train and test one model per depth K")
    _add_shared(p)
    _add_model_train(p)
    p.add_argument("--ks")

    p = sub.add_parser("graph-stats", help="training-graph size and degree histogram")
    _add_shared(p)
    p.add_argument("--data")
    return parser


def _resolve(args: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config_file", "verbose") and v is not None}
    file_values = load_config_file(args.config_file) if args.config_file else {}
    given = set(flags) | set(file_values)
    return resolve(file_values, flags), given


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required")


@contextlib.contextmanager
def _output(path: str | None):
    if path:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
    else:
        yield sys.stdout


def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(K=cfg.k, D=cfg.dim, mode=cfg.mode, residual=cfg.residual,
                       learn_transform=cfg.learn_transform)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, reg=cfg.reg, epochs=cfg.epochs, batch_size=cfg.batch_size,
                       negatives_per_positive=cfg.negatives, seed=cfg.seed,
                       early_stop_patience=cfg.patience, eval_every=cfg.eval_every)


def _val_hook(dataset, residual: bool):
    def hook(state, epoch):
        rep = evaluate(state, dataset, "val", residual=residual, topn=(20,))
        return rep.hr[20], rep.ndcg[20]
    return hook


def _load_data(path: str | None) -> data_mod.IndexedDataset:
    if not path or not os.path.isdir(path):
        raise UsageError(f"dataset directory not found: {path}")
    return data_mod.read_dataset(path)


def _load_model(cfg: RunConfig, dataset):
    _require(cfg, "checkpoint")
    if not os.path.exists(cfg.checkpoint):
        raise UsageError(f"checkpoint not found: {cfg.checkpoint}")
    state, residual = load_checkpoint(cfg.checkpoint)
    if (state.M, state.N) != (dataset.M, dataset.N):
        raise CheckpointError(f"checkpoint is for M={state.M}, N={state.N}; dataset has M={dataset.M}, N={dataset.N}")
    return state, residual


def cmd_prepare(cfg: RunConfig, given: set[str]) -> int:
    _require(cfg, "input", "out")
    if not os.path.exists(cfg.input):
        raise UsageError(f"input not found: {cfg.input}")
    records = data_mod.read_interactions(cfg.input, cfg.format)
    filtered = data_mod.k_core_filter(records, cfg.kcore)
    ds = data_mod.split_dataset(filtered, cfg.ratio_tuple(), seed=derive_seed(cfg.seed, "data"),
                                threshold=cfg.kcore)
    ds.seed = cfg.seed
    data_mod.write_dataset(ds, cfg.out)
    write_config(os.path.join(cfg.out, "config.txt"), cfg, "prepare", PREPARE_KEYS)
    log.info("prepared M=%d N=%d train=%d val=%d test=%d -> %s",
             ds.M, ds.N, len(ds.train), len(ds.val), len(ds.test), cfg.out)
    return 0


def _write_history(path: str, history) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss,val_hr20,val_ndcg20\n")
        for rec in history:
            hr = "" if rec.val_hr20 is None else _fmt(rec.val_hr20)
            nd = "" if rec.val_ndcg20 is None else _fmt(rec.val_ndcg20)
            fh.write(f"{rec.epoch},{rec.loss:.10f},{hr},{nd}\n")


def _fit(cfg: RunConfig, dataset):
    graph = build_graph(dataset)
    mc = _model_config(cfg)
    result = train(dataset, graph, mc, _train_config(cfg), _val_hook(dataset, mc.residual))
    result.state.refresh(graph)
    return result, mc


def cmd_train(cfg: RunConfig, given: set[str]) -> int:
    _require(cfg, "data", "out")
    dataset = _load_data(cfg.data)
    result, mc = _fit(cfg, dataset)
    parent = os.path.dirname(os.path.abspath(cfg.out))
    os.makedirs(parent, exist_ok=True)
    save_checkpoint(cfg.out, result.state, mc.residual)
    _write_history(cfg.out + ".history.csv", result.history)
    write_config(cfg.out + ".config", cfg, "train", ["data", "seed", "out"] + MODEL_KEYS + TRAIN_KEYS)
    log.info("best epoch %s val ndcg@20 %s -> %s", result.best_epoch, result.best_ndcg20, cfg.out)
    return 0


def cmd_evaluate(cfg: RunConfig, given: set[str]) -> int:
    _require(cfg, "data")
    dataset = _load_data(cfg.data)
    state, residual = _load_model(cfg, dataset)
    state.refresh(build_graph(dataset))
    report = evaluate(state, dataset, cfg.split, residual=residual, topn=cfg.topn)
    with _output(cfg.out) as fh:
        fh.write("N,hr,ndcg\n")
        for n, hr, nd in report.rows():
            fh.write(f"{n},{_fmt(hr)},{_fmt(nd)}\n")
    if cfg.out:
        write_config(cfg.out + ".config", cfg, "evaluate", ["checkpoint", "data", "split", "topn", "out"])
    return 0


def cmd_diagnose(cfg: RunConfig, given: set[str]) -> int:
    _require(cfg, "data")
    dataset = _load_data(cfg.data)
    state, _ = _load_model(cfg, dataset)
    if "k" not in given:
        cfg.k = state.K
    if cfg.k < 0:
        raise UsageError("--k must be >= 0")
    if state.transforms is not None and cfg.k != state.K:
        raise UsageError("--k must equal the checkpoint depth when learned transforms are present")
    state.K = cfg.k
    state.refresh(build_graph(dataset))
    rng = np.random.default_rng(derive_seed(cfg.seed, "diagnostics"))
    report = smoothness(state, cfg.k, cfg.pairs, rng)
    with _output(cfg.out) as fh:
        fh.write("layer,group,sim_mean,sim_var\n")
        for layer, group, mean, var in report.rows():
            fh.write(f"{layer},{group},{_fmt(mean)},{_fmt(var)}\n")
    if cfg.out:
        write_config(cfg.out + ".config", cfg, "diagnose", ["checkpoint", "data", "k", "pairs", "seed", "out"])
    return 0


def cmd_sweep_k(cfg: RunConfig, given: set[str]) -> int:
    _require(cfg, "data")
    dataset = _load_data(cfg.data)
    rows = []
    for k in cfg.ks:
        run = resolve({}, {**vars(cfg), "k": k})
        result, mc = _fit(run, dataset)
        rep = evaluate(result.state, dataset, "test", residual=mc.residual, topn=(20,))
        log.info("K=%d test hr@20 %.5f ndcg@20 %.5f", k, rep.hr[20], rep.ndcg[20])
        rows.append((k, rep.hr[20], rep.ndcg[20]))
    with _output(cfg.out) as fh:
        fh.write("k,hr20,ndcg20\n")
        for k, hr, nd in rows:
            fh.write(f"{k},{_fmt(hr)},{_fmt(nd)}\n")
    if cfg.out:
        write_config(cfg.out + ".config", cfg, "sweep-k",
                     ["data", "seed", "out", "ks"] + [k for k in MODEL_KEYS if k != "k"] + TRAIN_KEYS)
    return 0


def cmd_graph_stats(cfg: RunConfig, given: set[str]) -> int:
    _require(cfg, "data")
    graph = build_graph(_load_data(cfg.data))
    with _output(cfg.out) as fh:
        fh.write(f"# M={graph.M} N={graph.N} edges={graph.n_edges}\n")
        fh.write("group,degree,count\n")
        for group, deg in (("user", graph.d_user - 1), ("item", graph.d_item - 1)):
            for d, c in degree_histogram(deg):
                fh.write(f"{group},{d},{c}\n")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "diagnose": cmd_diagnose,
    "sweep-k": cmd_sweep_k,
    "graph-stats": cmd_graph_stats,
}


def _threads(cfg: RunConfig) -> int | None:
    if cfg.threads:
        return cfg.threads
    env = os.environ.get("LRGCCF_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"LRGCCF_THREADS must be an integer, got {env!r}") from None
    return None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg, given = _resolve(args)
        n_threads = _threads(cfg)
        if n_threads:
            from threadpoolctl import threadpool_limits
            ctx = threadpool_limits(limits=n_threads)
        else:
            ctx = contextlib.nullcontext()
        with ctx:
            return COMMANDS[args.command](cfg, given)
    except NumericalError as exc:
        print(f"lrgccf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, CheckpointError, data_mod.DataError, OSError, ValueError) as exc:
        print(f"lrgccf: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
