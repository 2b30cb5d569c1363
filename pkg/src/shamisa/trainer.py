"""Self-supervised pretraining loop.

Each step: sample references from the corpus (reshuffled epochs),
synthesize a distorted batch, forward the encoder/projector, build the
five relation-graph sources from metadata and current features, balance
the cluster assignments, aggregate the graphs under stop-gradient, and
take one SGD step over every trainable group (encoder, projector,
prototypes, mixture network) with shared optimizer settings.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .engine.batch import EngineConfig, build_batch
from .graphs import build_gdd, build_gknn, build_grd, build_grr, dump_edges
from .model import ModelConfig, encode, encode_nodes, init_params, param_nodes, project_nodes
from .numgrad import Graph, SGDConfig, init_state, save_checkpoint, sgd_step
from .numgrad.optim import cosine_lr
from .objective import (
    SOURCE_IDS,
    LossWeights,
    aggregate_graphs,
    init_phi,
    total_loss,
)
from .ot import (
    build_go,
    cross_content_pairs,
    init_prototypes,
    sinkhorn_targets,
    soft_assign,
)
from .rng import substream


@dataclass(frozen=True)
class TrainConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: SGDConfig = field(default_factory=SGDConfig)
    # relation graphs
    kappa: float = 2.0
    weight_map: str = "exp"
    k_n: int = 7
    K_d: int = 256
    k_g_mult: int = 8
    w_rr: float = 0.5766
    sources: tuple = SOURCE_IDS
    binary_graph: bool = False
    fixed_mixture: bool = False
    inv_reduction: str = "mean"
    # assignment guidance
    K: int = 8
    tau_c: float = 0.1
    eps_sk: float = 0.05
    sinkhorn_iterations: int = 3
    ot_row_topk: int = 0
    # run control
    steps: int = 200
    checkpoint_interval: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one training step")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint interval must be positive")
        if not self.sources:
            raise ValueError("need at least one graph source")
        seen = set()
        for s in self.sources:
            if s not in SOURCE_IDS:
                raise ValueError(f"unknown graph source: {s!r}")
            if s in seen:
                raise ValueError(f"duplicate graph source: {s!r}")
            seen.add(s)
        if self.engine.crop != self.model.input_size:
            raise ValueError("engine crop size must match model input size")
        if self.k_g_mult < 0:
            raise ValueError("k_g_mult must be non-negative")

    @property
    def n_rows(self):
        return self.engine.n_rows


@dataclass
class StepRecord:
    step: int
    parts: dict  # loss components + omega_<source> entries
    edges: dict  # stored-edge count per source + "agg"
    lr: float
    wall_time: float


@dataclass
class PretrainResult:
    params: dict
    opt_state: dict
    history: list
    z_last: np.ndarray
    config: TrainConfig


def init_train(cfg):
    """All trainable groups from the master seed's "init" stream."""
    rng = substream(cfg.seed, "init")
    params = init_params(cfg.model, rng)
    params["ot.prototypes"] = init_prototypes(cfg.K, cfg.model.d_h, rng)
    if not cfg.fixed_mixture:
        params.update(init_phi(len(cfg.sources), rng))
    return params, init_state(params)


def calibrate_projection(params, model_cfg, x, target_std=0.25):
    """Rescale the projector output per dimension on one batch.

    Freshly initialized projections have per-dimension batch std far
    below the unit target of the variance hinge, which makes the first
    gradients enormous and the loop oscillate; rescaling all the way to
    std 1 instead explodes the covariance term, because a small batch
    only spans a few independent directions. A moderate target keeps
    both terms in their stable basin. The affine output layer absorbs
    the rescale exactly; returns a new param dict.
    """
    g = Graph()
    pn = param_nodes(g, params, requires_grad=False)
    h = encode_nodes(g, pn, g.input("x", x), model_cfg)
    z = project_nodes(g, pn, h).value
    mu = z.mean(axis=0)
    scale = target_std / np.maximum(z.std(axis=0, ddof=1), 1e-8)
    out = dict(params)
    out["proj.fc1.w"] = params["proj.fc1.w"] * scale[None, :]
    out["proj.fc1.b"] = (params["proj.fc1.b"] - mu) * scale
    return out


def _reference_indices(n_images, seed):
    """Endless reference stream: one shuffled pass per epoch."""
    epoch = 0
    while True:
        order = substream(seed, "sampling", epoch).permutation(n_images)
        for idx in order:
            yield int(idx)
        epoch += 1


def build_source_graphs(cfg, meta, h_value, a_value=None):
    """Source graphs in canonical order, from metadata and current features."""
    n = meta.config.n_rows
    built = {}
    for sid in cfg.sources:
        if sid == "rd":
            built[sid] = build_grd(meta, kappa=cfg.kappa, weight_map=cfg.weight_map)
        elif sid == "dd":
            built[sid] = build_gdd(
                meta, kappa=cfg.kappa, K_d=cfg.K_d, weight_map=cfg.weight_map
            )
        elif sid == "rr":
            built[sid] = build_grr(meta, w_rr=cfg.w_rr)
        elif sid == "knn":
            built[sid] = build_gknn(h_value, cfg.k_n)
        elif sid == "ot":
            if a_value is None:
                raise ValueError("assignment matrix required for the 'ot' source")
            built[sid] = build_go(
                a_value, K_g=cfg.k_g_mult * n, row_topk=cfg.ot_row_topk
            )
    return [built[sid] for sid in cfg.sources]


def build_step_graph(cfg, params, x, meta, edge_matrix_node=None):
    """The full per-step computation graph on a prepared batch.

    Returns (graph, param nodes, total-loss node, parts, sources,
    aggregate, extras). Construction order is fixed: forward H and Z,
    then metadata graphs, the feature k-NN graph, the balanced
    assignment targets and their affinity graph — all from the same H
    snapshot — then aggregation and the loss.
    """
    g = Graph()
    pnodes = param_nodes(g, params)
    x_node = g.input("x", x)
    h = encode_nodes(g, pnodes, x_node, cfg.model)
    z = project_nodes(g, pnodes, h)

    needs_assign = ("ot" in cfg.sources) or cfg.weights.eta != 0.0
    a_node = targets = None
    pairs = []
    if needs_assign:
        a_node = soft_assign(h, pnodes["ot.prototypes"], cfg.tau_c)
        targets = sinkhorn_targets(
            a_node.value,
            eps_sk=cfg.eps_sk,
            iterations=cfg.sinkhorn_iterations,
            tau_c=cfg.tau_c,
        )
        pairs = cross_content_pairs(meta)

    sources = build_source_graphs(
        cfg, meta, h.value, a_value=None if a_node is None else a_node.value
    )
    aggregate = aggregate_graphs(
        g,
        sources,
        phi_nodes=None if cfg.fixed_mixture else pnodes,
        fixed_mixture=cfg.fixed_mixture,
        binary=cfg.binary_graph,
        source_ids=cfg.sources,
        edge_matrix_node=edge_matrix_node,
    )
    total, parts = total_loss(
        g,
        z,
        aggregate,
        cfg.weights,
        a_node=a_node,
        targets=targets,
        pairs=pairs,
        inv_reduction=cfg.inv_reduction,
    )
    extras = {"h": h, "z": z, "a": a_node, "targets": targets, "pairs": pairs}
    return g, pnodes, total, parts, sources, aggregate, extras


def train_step(cfg, params, opt_state, x, meta):
    """One full optimization step on a prepared batch.

    Returns (new params, new optimizer state, loss parts, edge counts,
    Z values). Non-finite loss components abort with the component
    named.
    """
    step = opt_state["step"]
    g, pnodes, total, parts, sources, aggregate, step_extras = build_step_graph(
        cfg, params, x, meta
    )
    for name, val in parts.items():
        if not np.isfinite(val):
            raise ArithmeticError(
                f"non-finite loss component {name!r} at step {step}"
            )

    g.backward(total)
    grads = {}
    for name, ref in pnodes.items():
        node = g.nodes[ref.idx]
        grads[name] = node.grad if node.grad is not None else np.zeros_like(node.value)
    new_params, new_state = sgd_step(params, grads, opt_state, cfg.optimizer)

    edges = {sid: s.nnz for sid, s in zip(cfg.sources, sources)}
    edges["agg"] = aggregate.nnz
    extras = {
        "sources": sources,
        "aggregate": aggregate,
        "h": step_extras["h"].value,
        "z": step_extras["z"].value,
    }
    return new_params, new_state, parts, edges, extras


def checkpoint_entries(cfg, params, opt_state):
    entries = dict(params)
    for name, v in opt_state["velocity"].items():
        entries[f"opt.velocity.{name}"] = v
    entries["meta.step"] = float(opt_state["step"])
    entries["meta.seed"] = float(cfg.seed)
    return entries


def split_checkpoint(entries):
    """Invert checkpoint_entries -> (params, velocity, step, seed)."""
    params, velocity = {}, {}
    for name, v in entries.items():
        if name.startswith("opt.velocity."):
            velocity[name[len("opt.velocity."):]] = v
        elif not name.startswith("meta."):
            params[name] = v
    step = int(entries["meta.step"])
    seed = int(entries["meta.seed"])
    return params, velocity, step, seed


_CSV_PARTS = ("total", "var", "cov", "inv", "reg", "ot")


def _csv_header(cfg):
    cols = ["step"]
    cols += [f"loss_{p}" for p in _CSV_PARTS]
    cols.append("lr")
    cols += [f"edges_{sid}" for sid in cfg.sources]
    cols.append("edges_agg")
    cols += [f"omega_{sid}" for sid in cfg.sources]
    return ",".join(cols)


def _csv_row(cfg, rec):
    cols = [str(rec.step)]
    cols += [repr(rec.parts[p]) for p in _CSV_PARTS]
    cols.append(repr(rec.lr))
    cols += [str(rec.edges[sid]) for sid in cfg.sources]
    cols.append(str(rec.edges["agg"]))
    cols += [repr(rec.parts[f"omega_{sid}"]) for sid in cfg.sources]
    return ",".join(cols)


def pretrain(cfg, corpus, out_dir=None, dump_graphs=False, progress=None):
    """Run the full loop over an in-memory corpus of pristine images.

    `corpus` is a sequence of (3, H, W) arrays in [0, 1], each at least
    crop-sized. With `out_dir` set, writes `steps.csv`, interval
    checkpoints, a final checkpoint, and (optionally) per-step edge
    dumps. The step log intentionally excludes wall time so identical
    runs produce identical files.
    """
    corpus = [np.asarray(im, dtype=np.float64) for im in corpus]
    if not corpus:
        raise ValueError("corpus is empty")
    c = cfg.engine
    for i, im in enumerate(corpus):
        if im.ndim != 3 or im.shape[0] != 3:
            raise ValueError(f"corpus image {i} is not a (3, H, W) array")
        if im.shape[1] < c.crop or im.shape[2] < c.crop:
            raise ValueError(
                f"corpus image {i} is smaller than the {c.crop}-pixel crop"
            )

    params, opt_state = init_train(cfg)
    cal_refs = _reference_indices(len(corpus), cfg.seed)
    cal_x, _ = build_batch(
        [corpus[next(cal_refs)] for _ in range(c.n_ref)],
        c,
        base_key=(cfg.seed, "calibration"),
    )
    params = calibrate_projection(params, cfg.model, cal_x)
    opt_state = init_state(params)
    refs = _reference_indices(len(corpus), cfg.seed)
    history = []
    z_last = None

    log_fh = graph_fh = None
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "steps.csv"), "w")
        log_fh.write(_csv_header(cfg) + "\n")
        if dump_graphs:
            graph_fh = open(os.path.join(out_dir, "graph_edges.csv"), "w")
            graph_fh.write("step,graph,src,dst,weight\n")
    try:
        for step in range(cfg.steps):
            t0 = time.perf_counter()
            picked = [corpus[next(refs)] for _ in range(c.n_ref)]
            x, meta = build_batch(picked, c, base_key=(cfg.seed, "batch", step))
            lr = cosine_lr(step, cfg.optimizer)
            params, opt_state, parts, edges, extras = train_step(
                cfg, params, opt_state, x, meta
            )
            rec = StepRecord(step, parts, edges, lr, time.perf_counter() - t0)
            history.append(rec)
            z_last = extras["z"]
            if log_fh is not None:
                log_fh.write(_csv_row(cfg, rec) + "\n")
            if graph_fh is not None:
                by_id = dict(zip(cfg.sources, extras["sources"]))
                by_id["agg"] = extras["aggregate"].to_sparse()
                dump_edges(by_id, step, graph_fh)
            done = step + 1
            if out_dir is not None and done % cfg.checkpoint_interval == 0 and done < cfg.steps:
                save_checkpoint(
                    f"{out_dir}/checkpoint_{done:07d}.shck",
                    checkpoint_entries(cfg, params, opt_state),
                )
            if progress is not None:
                progress(rec)
        if out_dir is not None:
            save_checkpoint(
                f"{out_dir}/checkpoint_final.shck",
                checkpoint_entries(cfg, params, opt_state),
            )
    finally:
        if log_fh is not None:
            log_fh.close()
        if graph_fh is not None:
            graph_fh.close()
    return PretrainResult(params, opt_state, history, z_last, cfg)


def diagnostics(h, z, pairs):
    """Logged-only proxies: (decorrelation, effective rank, invariance).

    corr: mean absolute off-diagonal correlation of the representation
    columns (constant columns are excluded rather than fatal). rank:
    singular values above 1e-3 of the largest. inv: mean squared
    distance over the given row pairs of Z.
    """
    h = np.asarray(h, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if h.shape[0] < 2:
        raise ValueError("need at least two rows")
    stds = h.std(axis=0)
    live = stds > 0
    if live.sum() >= 2:
        corrmat = np.corrcoef(h[:, live], rowvar=False)
        off = ~np.eye(corrmat.shape[0], dtype=bool)
        corr = float(np.mean(np.abs(corrmat[off])))
    else:
        corr = 0.0
    sv = np.linalg.svd(h, compute_uv=False)
    rank = int(np.sum(sv > 1e-3 * sv[0])) if sv.size and sv[0] > 0 else 0
    if pairs:
        u = np.array([p[0] for p in pairs])
        v = np.array([p[1] for p in pairs])
        inv = float(np.mean(np.sum((z[u] - z[v]) ** 2, axis=1)))
    else:
        inv = 0.0
    return corr, rank, inv


def trajectory_score(params, cfg, corpus, probe_key=("probe",)):
    """Median rank correlation between varying severity and feature
    distance-to-reference across one probe batch's trajectories.

    Higher is better: a quality-aware representation moves farther from
    the pristine anchor as the varying distortion coordinate grows.
    """
    from .evaluation import srcc

    c = cfg.engine
    corpus = [np.asarray(im, dtype=np.float64) for im in corpus]
    refs = _reference_indices(len(corpus), cfg.seed)
    picked = [corpus[next(refs)] for _ in range(c.n_ref)]
    x, meta = build_batch(picked, c, base_key=(cfg.seed, *probe_key))
    h = encode(params, x, cfg.model)
    scores = []
    for i in range(c.B):
        for j in range(c.R):
            anchor = h[meta.ref_row(i, j)]
            for k in range(c.C):
                rows = [meta.row_of(i, j, k, l) for l in range(c.L)]
                sev = np.array([meta.varying_severity(r) for r in rows])
                dist = np.array([np.linalg.norm(h[r] - anchor) for r in rows])
                if np.all(sev == sev[0]) or np.all(dist == dist[0]):
                    continue  # degenerate trajectory: no ranking signal
                scores.append(srcc(sev, dist))
    if not scores:
        return 0.0
    return float(np.median(scores))
