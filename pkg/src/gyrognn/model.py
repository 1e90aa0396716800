"""Deep Poincare-ball GCN: forward pass, task losses, Dirichlet-energy
diagnostics, training / evaluation loops, checkpoints.

Forward structure (depth L): the input FC maps exp-mapped features d_f -> d_h
producing the anchor state; then for l = 0..L the working state is
aggregated (gyromidpoint under the normalized adjacency) and mixed with the
anchor (initial residual, weight alpha); the loop exits after the residual at
l == L; otherwise an FC transform within d_h produces the next state, blended
with its input by the alignment weight beta_{l+1} = ln(lambda/(l+1) + 1).
There are L+1 weight matrices (input + L in-loop); only in-loop FCs carry
trainable biases.
"""

import csv
import dataclasses
import json
import time

import numpy as np

from . import autodiff as ad
from . import graphdata, layers, manifold
from ._accel import as_csr
from .autodiff import Tensor
from .layers import FcParams

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or activation."""


@dataclasses.dataclass
class ModelConfig:
    L: int
    d_f: int
    d_h: int = 16
    d_c: int = 2
    kappa: float = -1.0
    alpha: float = 0.1
    lam: float = 0.5
    gamma: float = 1e-4
    dropout: float = 0.1
    weight_decay: float = 5e-4
    lr: float = 1e-2
    epochs: int = 5000
    patience: int = 200
    task: str = "nc"
    use_relu: bool = True
    use_residual: bool = True
    use_alignment: bool = True
    residual_target: str = "initial"
    fd_r: float = 2.0
    fd_t: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("depth L must be >= 1")
        if min(self.d_f, self.d_h, self.d_c) < 1:
            raise ValueError("dims must be positive")
        if not (0.0 <= self.alpha < 1.0 and 0.0 <= self.dropout < 1.0):
            raise ValueError("alpha and dropout must lie in [0, 1)")
        if self.gamma < 0 or self.weight_decay < 0:
            raise ValueError("gamma and weight_decay must be >= 0")
        if self.kappa >= 0:
            raise ValueError("curvature must be negative")
        if self.task not in ("nc", "lp"):
            raise ValueError("task must be 'nc' or 'lp'")
        if self.residual_target not in ("initial", "previous"):
            raise ValueError("residual_target must be 'initial' or 'previous'")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.fd_t <= 0:
            raise ValueError("Fermi-Dirac temperature must be positive")


def init_params(cfg, rng):
    params = {
        "fc_in": FcParams(cfg.d_f, cfg.d_h, rng, name="fc_in"),
        "fc": [FcParams(cfg.d_h, cfg.d_h, rng, name="fc.%d" % l)
               for l in range(1, cfg.L + 1)],
    }
    # only in-loop layers carry trainable biases
    params["fc_in"].b1.requires_grad = False
    params["fc_in"].b2.requires_grad = False
    if cfg.task == "nc":
        lim = np.sqrt(6.0 / (cfg.d_h + cfg.d_c))
        params["dec_W"] = Tensor(rng.uniform(-lim, lim, (cfg.d_c, cfg.d_h)),
                                 requires_grad=True, name="decoder.W")
        params["dec_b"] = Tensor(np.zeros(cfg.d_c), requires_grad=True,
                                 name="decoder.b")
    return params


def trainable(params):
    out = []
    for p in [params["fc_in"]] + params["fc"]:
        out.extend(t for t in p.params() if t.requires_grad)
    for key in ("dec_W", "dec_b"):
        if key in params:
            out.append(params[key])
    return out


def named_tensors(params):
    out = {params["fc_in"].W.name: params["fc_in"].W}
    for p in params["fc"]:
        for t in p.params():
            out[t.name] = t
    for key in ("dec_W", "dec_b"):
        if key in params:
            out[params[key].name] = params[key]
    return out


def _assert_ball(h, k, where):
    if not ad.finite_checks_enabled():
        return
    r = manifold.ball_radius(k)
    mx = float(np.linalg.norm(h.data, axis=-1).max()) if h.data.size else 0.0
    if mx >= r:
        raise FloatingPointError("%s: embedding norm %.17g outside the ball"
                                 % (where, mx))


def embed_features(features, k):
    """Constant input embedding: exp-map the L1-normalized features."""
    return manifold.exp_map0(graphdata.normalize_features(features), k)


def forward(adj, h0, cfg, params, training=False, rng=None):
    """Run the network on the ball embedding h0 = embed_features(...);
    returns (H_L, hidden states).

    hidden[0] is the post-input-FC anchor, hidden[1+l] the state after loop
    iteration l (post-residual / post-alignment), so len(hidden) == L + 2 and
    hidden[-1] is H_L.
    """
    k = cfg.kappa
    adj = as_csr(adj)
    h = layers.fc_transform(Tensor(h0), params["fc_in"], k,
                            dropout_p=cfg.dropout, training=training, rng=rng)
    _assert_ball(h, k, "input transform")
    anchor = h
    hidden = [h]
    for l in range(cfg.L + 1):
        try:
            h_agg = layers.aggregate(adj, h, k)
            if cfg.use_residual:
                target = anchor if cfg.residual_target == "initial" else h
                h = layers.initial_residual(target, h_agg, cfg.alpha, k)
            else:
                h = h_agg
            if l == cfg.L:
                hidden.append(h)
                break
            p = params["fc"][l]
            out = layers.fc_transform(h, p, k, dropout_p=cfg.dropout,
                                      training=training, rng=rng)
            if cfg.use_relu:
                out = ad.relu(out)
            if cfg.use_alignment:
                beta = layers.beta_schedule(cfg.lam, l + 1)
                h = layers.residual(out, h, beta, 1.0 - beta, k)
            else:
                h = out
            _assert_ball(h, k, "layer %d" % (l + 1))
            hidden.append(h)
        except FloatingPointError as e:
            raise FloatingPointError("layer %d: %s" % (l, e)) from e
    return h, hidden


# ---------------------------------------------------------------------------
# Dirichlet energy
# ---------------------------------------------------------------------------

def dirichlet_energy(H, g, k):
    """(1/2) sum over ordered adjacent pairs of squared distance between
    degree-normalized embeddings exp_0(log_0(h_i)/sqrt(1+d_i))."""
    H = np.asarray(H, dtype=np.float64)
    if g.num_edges == 0:
        return 0.0
    scale = 1.0 / np.sqrt(1.0 + g.degrees.astype(np.float64))
    Hn = manifold.exp_map0(manifold.log_map0(H, k) * scale[:, None], k)
    u, v = g.edges[:, 0], g.edges[:, 1]
    d = manifold.poincare_distance(Hn[u], Hn[v], k)
    return float(np.sum(d * d))


def energy_trace(hidden, g, k):
    return np.array([dirichlet_energy(h.data, g, k) for h in hidden])


def aggregation_energy_profile(g, H0, k, num_layers):
    """Energies of a pure aggregation stack: e_0 for the input embedding and
    e_l after l gyromidpoint aggregations."""
    from . import midpoint
    H = np.asarray(H0, dtype=np.float64)
    out = [dirichlet_energy(H, g, k)]
    for _ in range(num_layers):
        H = midpoint.aggregate(g.adj_norm, H, k)
        out.append(dirichlet_energy(H, g, k))
    return np.array(out)


# ---------------------------------------------------------------------------
# losses and metrics
# ---------------------------------------------------------------------------

def nc_logits(H, params, k):
    z = layers.log0(H, k)
    return ad.add(ad.matmul(z, ad.transpose(params["dec_W"])), params["dec_b"])


def nc_loss(H, labels, train_idx, cfg, params):
    if len(train_idx) == 0:
        raise ValueError("empty training index set")
    logits = nc_logits(ad.take(H, np.asarray(train_idx)), params, cfg.kappa)
    m = np.max(logits.data, axis=1)  # detached shift for a stable logsumexp
    lse = ad.add(ad.log(ad.sum(ad.exp(ad.sub(logits, Tensor(m[:, None]))), axis=1)),
                 Tensor(m))
    correct = ad.take(logits, (np.arange(len(train_idx)),
                               np.asarray(labels)[np.asarray(train_idx)]))
    loss = ad.mean(ad.sub(lse, correct))
    if cfg.gamma != 0.0:
        loss = ad.add(loss, ad.mul(layers.feature_reg_loss(H, cfg.kappa),
                                   cfg.gamma))
    return loss


def _softplus(t):
    mag = ad.add(ad.relu(t), ad.relu(ad.mul(t, -1.0)))
    return ad.add(ad.relu(t), ad.log(ad.add(ad.exp(ad.mul(mag, -1.0)), 1.0)))


def _fd_z(H, edges, cfg):
    x = ad.take(H, np.asarray(edges[:, 0]))
    y = ad.take(H, np.asarray(edges[:, 1]))
    d = layers.distance(x, y, cfg.kappa)
    return ad.mul(ad.sub(ad.mul(d, d), cfg.fd_r), 1.0 / cfg.fd_t)


def lp_loss(H, pos_edges, neg_edges, cfg):
    loss = ad.add(ad.mean(_softplus(_fd_z(H, pos_edges, cfg))),
                  ad.mean(_softplus(ad.mul(_fd_z(H, neg_edges, cfg), -1.0))))
    if cfg.gamma != 0.0:
        loss = ad.add(loss, ad.mul(layers.feature_reg_loss(H, cfg.kappa),
                                   cfg.gamma))
    return loss


def lp_score(H, edges, cfg):
    """Fermi-Dirac edge probabilities 1/(exp((d^2 - r)/t) + 1)."""
    H = np.asarray(H, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    d = manifold.poincare_distance(H[edges[:, 0]], H[edges[:, 1]], cfg.kappa)
    z = (d * d - cfg.fd_r) / cfg.fd_t
    return 1.0 / (np.exp(np.clip(z, -700, 700)) + 1.0)


def accuracy(pred, labels, idx):
    idx = np.asarray(idx)
    if idx.size == 0:
        return float("nan")
    return float(np.mean(np.asarray(pred)[idx] == np.asarray(labels)[idx]))


def roc_auc(pos_scores, neg_scores):
    """Trapezoid AUC over the score ranking (ties grouped)."""
    s = np.concatenate([pos_scores, neg_scores])
    y = np.concatenate([np.ones(len(pos_scores)), np.zeros(len(neg_scores))])
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # threshold boundaries: last index of each tied block
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[last]
    fp = np.cumsum(1.0 - y)[last]
    tpr = np.r_[0.0, tp / max(tp[-1], 1.0)]
    fpr = np.r_[0.0, fp / max(fp[-1], 1.0)]
    return float(np.trapezoid(tpr, fpr))


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------

class TrainResult:
    def __init__(self, params, history, best_epoch, best_val, best_test):
        self.params = params
        self.history = history
        self.best_epoch = best_epoch
        self.best_val = best_val
        self.best_test = best_test


def _default_split(g, cfg):
    if cfg.task == "nc":
        return graphdata.split_nc(g, (0.70, 0.15, 0.15), seed=cfg.seed)
    return graphdata.split_lp(g, seed=cfg.seed)


def _nc_metrics(H, g, split, cfg, params):
    logits = manifold.log_map0(H, cfg.kappa) @ params["dec_W"].data.T \
        + params["dec_b"].data
    pred = logits.argmax(axis=1)
    return (accuracy(pred, g.labels, split.val_idx),
            accuracy(pred, g.labels, split.test_idx))


def _lp_metrics(H, split, cfg):
    val = roc_auc(lp_score(H, split.val_pos, cfg),
                  lp_score(H, split.val_neg, cfg))
    test = roc_auc(lp_score(H, split.test_pos, cfg),
                   lp_score(H, split.test_neg, cfg))
    return val, test


def train(g, cfg, split=None, log=None):
    """Full training loop; returns best-validation checkpoint and history.

    history rows: (epoch, train_loss, val_metric, test_metric,
    energy_first, energy_last).
    """
    rng = np.random.default_rng(cfg.seed)
    if split is None:
        split = _default_split(g, cfg)
    h0 = embed_features(g.features, cfg.kappa)
    if cfg.task == "nc":
        adj = g.adj_norm
    else:
        adj = split.adj_train
        all_pos = g.edge_set()
    params = init_params(cfg, rng)
    opt_params = trainable(params)
    # decay shrinks only the weight matrices; biases stay unregularized
    decay = [t for name, t in named_tensors(params).items()
             if t.requires_grad and name.endswith(".W")]
    opt = ad.Adam(opt_params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                  decay_params=decay)
    history = []
    best_val, best_test, best_epoch, wait = -np.inf, np.nan, -1, 0
    best_state = None
    t0 = time.time()
    for epoch in range(1, cfg.epochs + 1):
        try:
            H, _ = forward(adj, h0, cfg, params, training=True, rng=rng)
            if cfg.task == "nc":
                loss = nc_loss(H, g.labels, split.train_idx, cfg, params)
            else:
                train_neg = graphdata.sample_negatives(
                    g.num_nodes, len(split.train_pos), all_pos, rng)
                loss = lp_loss(H, split.train_pos, train_neg, cfg)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError("epoch %d: non-finite loss" % epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
        except FloatingPointError as e:
            raise DivergenceError("epoch %d: %s" % (epoch, e)) from e
        He, hidden = forward(adj, h0, cfg, params, training=False)
        if cfg.task == "nc":
            val, test = _nc_metrics(He.data, g, split, cfg, params)
        else:
            val, test = _lp_metrics(He.data, split, cfg)
        e_first = dirichlet_energy(hidden[1].data, g, cfg.kappa)
        e_last = dirichlet_energy(hidden[-1].data, g, cfg.kappa)
        He.release()
        history.append((epoch, loss_val, val, test, e_first, e_last))
        if log is not None and (epoch == 1 or epoch % 50 == 0):
            log("epoch %5d  loss %.4f  val %.4f  test %.4f  [%.1fs]"
                % (epoch, loss_val, val, test, time.time() - t0))
        if val > best_val:
            best_val, best_test, best_epoch, wait = val, test, epoch, 0
            best_state = {n: t.data.copy() for n, t in named_tensors(params).items()}
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    if best_state is not None:
        for name, t in named_tensors(params).items():
            t.data = best_state[name]
    return TrainResult(params, history, best_epoch, best_val, best_test)


def evaluate(g, cfg, params, split=None, adj=None):
    """Metrics of a frozen checkpoint; returns a dict including the
    full per-layer energy trace."""
    if split is None:
        split = _default_split(g, cfg)
    if adj is None:
        adj = g.adj_norm if cfg.task == "nc" else split.adj_train
    H, hidden = forward(adj, embed_features(g.features, cfg.kappa), cfg,
                       params, training=False)
    trace = energy_trace(hidden, g, cfg.kappa)
    if cfg.task == "nc":
        val, test = _nc_metrics(H.data, g, split, cfg, params)
    else:
        val, test = _lp_metrics(H.data, split, cfg)
    return {"val_metric": val, "test_metric": test, "energy_trace": trace,
            "embeddings": H.data}


# ---------------------------------------------------------------------------
# checkpoints and history files
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, cfg):
    arrays = {name: t.data for name, t in named_tensors(params).items()}
    meta = json.dumps({"version": CHECKPOINT_VERSION,
                       "config": dataclasses.asdict(cfg)})
    np.savez_compressed(path, __meta__=np.array(meta), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version %r"
                             % (meta.get("version"),))
        cfg = ModelConfig(**meta["config"])
        params = init_params(cfg, np.random.default_rng(0))
        for name, t in named_tensors(params).items():
            t.data = np.array(z[name], dtype=np.float64)
    return params, cfg


def write_history(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_metric", "test_metric",
                    "energy_first", "energy_last"])
        for row in history:
            w.writerow(["%r" % row[0]] + ["%.10g" % x for x in row[1:]])
