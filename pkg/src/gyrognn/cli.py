"""Command-line interface: train, eval, bench-midpoint, bench-transform,
energy-trace, gen-synthetic.

Config precedence: command-line flags > config file (flat `key = value`
lines) > built-in defaults. Every resolved key is logged with its source.
Exit codes: 0 success, 1 parse/usage error, 2 training divergence,
3 I/O failure.
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import graphdata, layers, manifold, midpoint, model
from .autodiff import Tensor
from .model import DivergenceError, ModelConfig

DEFAULTS = {
    "dataset_dir": "",
    "out_dir": "runs",
    "layers": 2,
    "hidden_dim": 16,
    "kappa": -1.0,
    "alpha": 0.1,
    "lambda": 0.5,
    "gamma": 1e-4,
    "dropout": 0.1,
    "weight_decay": 5e-4,
    "lr": 1e-2,
    "epochs": 5000,
    "patience": 200,
    "task": "nc",
    "seed": 0,
    "use_relu": True,
    "use_residual": True,
    "use_alignment": True,
    "residual_target": "initial",
    "fd_r": 2.0,
    "fd_t": 1.0,
}

_BOOL_KEYS = ("use_relu", "use_residual", "use_alignment")
_INT_KEYS = ("layers", "hidden_dim", "epochs", "patience", "seed")
_STR_KEYS = ("dataset_dir", "out_dir", "task", "residual_target")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are parse errors: exit 1
        self.print_usage(sys.stderr)
        sys.stderr.write("error: %s\n" % message)
        sys.exit(1)


def _coerce(key, raw):
    if key in _STR_KEYS:
        return str(raw)
    if key in _BOOL_KEYS:
        if isinstance(raw, bool):
            return raw
        v = str(raw).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError("key %r expects a boolean, got %r" % (key, raw))
    try:
        return int(raw) if key in _INT_KEYS else float(raw)
    except ValueError:
        raise ConfigError("key %r expects a number, got %r" % (key, raw))


def read_config_file(path):
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: expected 'key = value'" % (path, ln))
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError("%s:%d: unknown config key %r" % (path, ln, key))
        out[key] = _coerce(key, val)
    return out


def resolve_config(args, log):
    """Merge defaults < config file < explicit command-line flags."""
    merged = dict(DEFAULTS)
    source = {k: "default" for k in merged}
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            merged[k] = v
            source[k] = "config"
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = _coerce(k, v)
            source[k] = "command line"
    for k in sorted(merged):
        log("config: %-16s = %-22r (%s)" % (k, merged[k], source[k]))
    return merged


def model_config(cfg, d_f, d_c):
    return ModelConfig(
        L=cfg["layers"], d_f=d_f, d_h=cfg["hidden_dim"], d_c=d_c,
        kappa=cfg["kappa"], alpha=cfg["alpha"], lam=cfg["lambda"],
        gamma=cfg["gamma"], dropout=cfg["dropout"],
        weight_decay=cfg["weight_decay"], lr=cfg["lr"], epochs=cfg["epochs"],
        patience=cfg["patience"], task=cfg["task"], use_relu=cfg["use_relu"],
        use_residual=cfg["use_residual"], use_alignment=cfg["use_alignment"],
        residual_target=cfg["residual_target"], fd_r=cfg["fd_r"],
        fd_t=cfg["fd_t"], seed=cfg["seed"])


def _config_comment(cfg):
    return "# config: " + " ".join("%s=%r" % (k, cfg[k]) for k in sorted(cfg))


def _write_csv(path, header, rows, comment):
    with open(path, "w", newline="") as f:
        f.write(comment + "\n")
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _load_dataset(cfg):
    if not cfg["dataset_dir"]:
        raise ConfigError("--dataset-dir is required for this command")
    return graphdata.load_dataset(cfg["dataset_dir"])


def _make_split(g, mcfg, dataset_dir):
    if mcfg.task == "lp":
        return graphdata.split_lp(g, seed=mcfg.seed)
    fixed = graphdata.read_split_files(dataset_dir)
    if fixed is not None:
        return fixed
    return graphdata.split_nc(g, (0.70, 0.15, 0.15), seed=mcfg.seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args, log):
    cfg = resolve_config(args, log)
    g = _load_dataset(cfg)
    d_c = 2 if g.labels is None else int(g.labels.max()) + 1
    mcfg = model_config(cfg, g.features.shape[1], d_c)
    split = _make_split(g, mcfg, cfg["dataset_dir"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    res = model.train(g, mcfg, split, log=log)
    comment = _config_comment(cfg)
    model.save_checkpoint(out / "checkpoint.npz", res.params, mcfg)
    with open(out / "metrics.csv", "w", newline="") as f:
        f.write(comment + "\n")
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_metric", "test_metric",
                    "energy_first", "energy_last"])
        for row in res.history:
            w.writerow([row[0]] + ["%.10g" % x for x in row[1:]])
    ev = model.evaluate(g, mcfg, res.params, split=split)
    _write_csv(out / "energy_trace.csv", ["layer", "energy"],
               [(i, "%.10g" % e) for i, e in enumerate(ev["energy_trace"])],
               comment)
    metric = "accuracy" if mcfg.task == "nc" else "roc_auc"
    log("best epoch %d  val %.4f" % (res.best_epoch, res.best_val))
    print("test_%s: %.4f" % (metric, res.best_test))
    return 0


def cmd_eval(args, log):
    cfg = resolve_config(args, log)
    ckpt = args.checkpoint or str(Path(cfg["out_dir"]) / "checkpoint.npz")
    params, mcfg = model.load_checkpoint(ckpt)
    g = _load_dataset(cfg)
    split = _make_split(g, mcfg, cfg["dataset_dir"])
    ev = model.evaluate(g, mcfg, params, split=split)
    metric = "accuracy" if mcfg.task == "nc" else "roc_auc"
    print("val_%s: %.4f" % (metric, ev["val_metric"]))
    print("test_%s: %.4f" % (metric, ev["test_metric"]))
    print("energy_trace: %s" % " ".join("%.6g" % e for e in ev["energy_trace"]))
    return 0


def cmd_bench_midpoint(args, log):
    cfg = resolve_config(args, log)
    dims = [int(d) for d in args.dims.split(",")]
    n, trials, k = args.n_points, args.trials, cfg["kappa"]
    warm = graphdata.gen_synthetic(
        graphdata.SyntheticSpec("uniform", 8, 2, k, 0)).points
    wones = np.ones(8)
    midpoint.gyromidpoint(warm, wones, k)          # trigger any jit compile
    midpoint.tangential_midpoint(warm, wones, k)
    midpoint.frechet_mean_oracle(warm, wones, k, max_iters=5)
    rows = []
    for dim in dims:
        errs = {"tangential": [], "gyro": []}
        times = {"tangential": [], "gyro": [], "frechet_oracle": []}
        for t in range(trials):
            spec = graphdata.SyntheticSpec("uniform", n, dim, k,
                                           cfg["seed"] + 1000 * t)
            pts = graphdata.gen_synthetic(spec).points
            w = np.ones(n)
            t0 = time.perf_counter()
            mid = midpoint.gyromidpoint(pts, w, k)
            times["gyro"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            tan = midpoint.tangential_midpoint(pts, w, k)
            times["tangential"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            oracle = midpoint.frechet_mean_oracle(pts, w, k, max_iters=1000).point
            times["frechet_oracle"].append(time.perf_counter() - t0)
            errs["gyro"].append(np.sum((mid - oracle) ** 2) / dim)
            errs["tangential"].append(np.sum((tan - oracle) ** 2) / dim)
        for method in ("tangential", "gyro", "frechet_oracle"):
            mse = np.mean(errs[method]) if method in errs else 0.0
            rows.append((method, dim, "%.6g" % mse,
                         "%.3f" % (1e3 * np.mean(times[method]))))
            log("bench-midpoint: %-14s dim %-3d mse %-12s wall %s ms"
                % (method, dim, rows[-1][2], rows[-1][3]))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench_midpoint.csv"
    _write_csv(path, ["method", "dim", "mse_vs_1000iter_oracle", "wall_ms"],
               rows, _config_comment(cfg))
    print("wrote %s" % path)
    return 0


def _transform_tasks(n, dim, k, seed):
    t1 = graphdata.gen_synthetic(graphdata.SyntheticSpec(
        "two-blob", n, dim, k, seed, center_dist=2.0, sigma=0.5))
    t2 = graphdata.gen_synthetic(graphdata.SyntheticSpec(
        "two-blob", n, dim, k, seed + 1, center_dist=0.0, sigma=0.3, sigma2=1.6))
    return [("separated", t1), ("curved", t2)]


def _train_transform(kind, pts, labels, d_out, k, steps, seed, log):
    """Single transform layer + affine readout, full-batch Adam."""
    rng = np.random.default_rng(seed)
    d_in = pts.shape[1]
    x = Tensor(pts)
    y = np.asarray(labels)
    fc = layers.FcParams(d_in, d_out, rng, name="fc")
    W2 = Tensor(rng.uniform(-0.5, 0.5, (2, d_out)), requires_grad=True, name="W2")
    b2 = Tensor(np.zeros(2), requires_grad=True, name="b2")
    if kind == "euclidean":
        params = [fc.W, fc.b1, W2, b2]
    elif kind == "hnn":
        params = [fc.W, fc.b1, W2, b2]
    else:
        params = fc.params() + [W2, b2]
    opt = ad.Adam(params, lr=1e-2)
    idx = np.arange(len(y))
    t0 = time.perf_counter()
    for _ in range(steps):
        if kind == "euclidean":
            hid = ad.add(ad.matmul(x, ad.transpose(fc.W)), fc.b1)
        elif kind == "hnn":
            hid = layers.log0(layers.hnn_transform(x, fc.W, fc.b1, k), k)
        else:
            hid = layers.log0(layers.fc_transform(x, fc, k), k)
        logits = ad.add(ad.matmul(hid, ad.transpose(W2)), b2)
        m = np.max(logits.data, axis=1)
        lse = ad.add(ad.log(ad.sum(ad.exp(ad.sub(logits, Tensor(m[:, None]))),
                                   axis=1)), Tensor(m))
        loss = ad.mean(ad.sub(lse, ad.take(logits, (idx, y))))
        opt.zero_grad()
        loss.backward()
        opt.step()
    wall = time.perf_counter() - t0
    if kind == "euclidean":
        hid = ad.add(ad.matmul(x, ad.transpose(fc.W)), fc.b1)
    elif kind == "hnn":
        hid = layers.log0(layers.hnn_transform(x, fc.W, fc.b1, k), k)
    else:
        hid = layers.log0(layers.fc_transform(x, fc, k), k)
    logits = ad.add(ad.matmul(hid, ad.transpose(W2)), b2).data
    acc = float(np.mean(logits.argmax(axis=1) == y))
    return acc, 1e3 * wall


def cmd_bench_transform(args, log):
    cfg = resolve_config(args, log)
    k = cfg["kappa"]
    rows = []
    for task_name, ps in _transform_tasks(args.batch, args.dim_in, k,
                                          cfg["seed"]):
        for kind in ("euclidean", "hnn", "ours"):
            acc, wall = _train_transform(kind, ps.points, ps.labels,
                                         args.dim_out, k, args.steps,
                                         cfg["seed"], log)
            rows.append((kind, task_name, "%.4f" % acc, "%.1f" % wall))
            log("bench-transform: %-10s %-10s acc %s wall %s ms"
                % (kind, task_name, rows[-1][2], rows[-1][3]))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench_transform.csv"
    _write_csv(path, ["layer", "task", "accuracy", "wall_ms"], rows,
               _config_comment(cfg))
    print("wrote %s" % path)
    return 0


def cmd_energy_trace(args, log):
    cfg = resolve_config(args, log)
    g = _load_dataset(cfg)
    d_c = 2 if g.labels is None else int(g.labels.max()) + 1
    mcfg = model_config(cfg, g.features.shape[1], d_c)
    split = _make_split(g, mcfg, cfg["dataset_dir"])
    k = mcfg.kappa
    h0 = model.embed_features(g.features, k)
    pure = model.aggregation_energy_profile(g, h0, k, mcfg.L + 1)
    log("energy-trace: training full model (gamma=%g)" % mcfg.gamma)
    full = model.train(g, mcfg, split, log=log)
    ev_full = model.evaluate(g, mcfg, full.params, split=split)
    cfg0 = dataclass_replace(mcfg, gamma=0.0)
    log("energy-trace: training gamma=0 ablation")
    ab = model.train(g, cfg0, split, log=log)
    ev_ab = model.evaluate(g, cfg0, ab.params, split=split)
    rows = []
    for i in range(mcfg.L + 2):
        rows.append((i, "%.10g" % pure[i], "%.10g" % ev_full["energy_trace"][i],
                     "%.10g" % ev_ab["energy_trace"][i]))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "energy_trace.csv"
    _write_csv(path, ["layer", "pure_aggregation", "full_model",
                      "gamma0_ablation"], rows, _config_comment(cfg))
    print("wrote %s" % path)
    return 0


def dataclass_replace(cfg, **kw):
    import dataclasses
    return dataclasses.replace(cfg, **kw)


def cmd_gen_synthetic(args, log):
    cfg = resolve_config(args, log)
    spec = graphdata.SyntheticSpec(args.kind, args.n, args.dim, cfg["kappa"],
                                   cfg["seed"], center_dist=args.center_dist,
                                   sigma=args.sigma, sigma2=args.sigma2)
    ps = graphdata.gen_synthetic(spec)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "features.csv", ps.points, delimiter=",", fmt="%.17g")
    (out / "edges.txt").write_text("")
    if ps.labels is not None:
        np.savetxt(out / "labels.csv", ps.labels, fmt="%d")
    log("gen-synthetic: wrote %d points (dim %d) to %s"
        % (ps.points.shape[0], ps.points.shape[1], out))
    print("wrote %s" % (out / "features.csv"))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--config", help="flat key = value config file")
    sp.add_argument("--dataset-dir", dest="dataset_dir")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--layers", type=int)
    sp.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--task", choices=("nc", "lp"))
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--lambda", dest="lambda", type=float)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--dropout", type=float)
    sp.add_argument("--weight-decay", dest="weight_decay", type=float)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--use-relu", dest="use_relu", choices=("true", "false"))
    sp.add_argument("--use-residual", dest="use_residual",
                    choices=("true", "false"))
    sp.add_argument("--use-alignment", dest="use_alignment",
                    choices=("true", "false"))
    sp.add_argument("--residual-target", dest="residual_target",
                    choices=("initial", "previous"))
    sp.add_argument("--fd-r", dest="fd_r", type=float)
    sp.add_argument("--fd-t", dest="fd_t", type=float)
    sp.add_argument("--quiet", action="store_true",
                    help="suppress progress logging")


def build_parser():
    ap = _Parser(prog="gyrognn",
                 description="Poincare-ball graph network toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("train", help="train a model; writes checkpoint, "
                        "metrics CSV, energy-trace CSV")
    _add_common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(sp)
    sp.add_argument("--checkpoint", help="path to checkpoint.npz")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench-midpoint",
                        help="midpoint accuracy/speed vs the Frechet oracle")
    _add_common(sp)
    sp.add_argument("--dims", default="8,16,64")
    sp.add_argument("--n-points", dest="n_points", type=int, default=4000)
    sp.add_argument("--trials", type=int, default=5)
    sp.set_defaults(func=cmd_bench_midpoint)

    sp = sub.add_parser("bench-transform",
                        help="FC-layer accuracy/speed benchmark")
    _add_common(sp)
    sp.add_argument("--batch", type=int, default=2000)
    sp.add_argument("--dim-in", dest="dim_in", type=int, default=2)
    sp.add_argument("--dim-out", dest="dim_out", type=int, default=16)
    sp.add_argument("--steps", type=int, default=1000)
    sp.set_defaults(func=cmd_bench_transform)

    sp = sub.add_parser("energy-trace",
                        help="per-layer Dirichlet energies: pure aggregation "
                        "vs full model vs gamma=0 ablation")
    _add_common(sp)
    sp.set_defaults(func=cmd_energy_trace)

    sp = sub.add_parser("gen-synthetic", help="write a synthetic dataset")
    _add_common(sp)
    sp.add_argument("--kind", choices=("two-blob", "uniform"),
                    default="two-blob")
    sp.add_argument("--n", type=int, default=4000)
    sp.add_argument("--dim", type=int, default=2)
    sp.add_argument("--center-dist", dest="center_dist", type=float,
                    default=2.0)
    sp.add_argument("--sigma", type=float, default=0.5)
    sp.add_argument("--sigma2", type=float, default=None)
    sp.set_defaults(func=cmd_gen_synthetic)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    log = (lambda *a: None) if args.quiet else (lambda m: print(m, flush=True))
    try:
        return args.func(args, log)
    except DivergenceError as e:
        sys.stderr.write("divergence: %s\n" % e)
        return 2
    except ConfigError as e:
        sys.stderr.write("config error: %s\n" % e)
        return 1
    except ValueError as e:
        sys.stderr.write("error: %s\n" % e)
        return 1
    except OSError as e:
        sys.stderr.write("i/o error: %s\n" % e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
