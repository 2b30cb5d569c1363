"""Training loop: init, calibration, stepping, logging, checkpoints."""

import numpy as np
import pytest

from shamisa.dataio import generate_fixture_images
from shamisa.engine.batch import EngineConfig, build_batch
from shamisa.model import ModelConfig
from shamisa.numgrad.checkpoint import load_checkpoint
from shamisa.numgrad.optim import SGDConfig, cosine_lr, init_state
from shamisa.objective import LossWeights
from shamisa.trainer import (
    TrainConfig,
    _reference_indices,
    calibrate_projection,
    checkpoint_entries,
    diagnostics,
    pretrain,
    split_checkpoint,
    train_step,
    trajectory_score,
    init_train,
)


def tiny_config(**kw):
    base = dict(
        engine=EngineConfig(B=1, R=2, C=2, L=2, M_d=2, crop=16),
        model=ModelConfig(blocks=(4, 8), d_h=8, d_z=6, input_size=16),
        optimizer=SGDConfig(lr=1e-4, momentum=0.5),
        K=4,
        steps=2,
        seed=3,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    return generate_fixture_images(4, 32, seed=9)


def _batch(cfg, corpus, key=("batch", 0)):
    refs = _reference_indices(len(corpus), cfg.seed)
    picked = [corpus[next(refs)] for _ in range(cfg.engine.n_ref)]
    return build_batch(picked, cfg.engine, base_key=(cfg.seed, *key))


# ------------------------------------------------------------------- init


def test_init_groups_and_determinism():
    cfg = tiny_config()
    p1, s1 = init_train(cfg)
    p2, _ = init_train(cfg)
    assert "ot.prototypes" in p1
    assert p1["ot.prototypes"].shape == (cfg.K, cfg.model.d_h)
    assert any(k.startswith("phi.") for k in p1)  # learned mixture by default
    assert s1["step"] == 0
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])
        np.testing.assert_array_equal(s1["velocity"][k], 0.0)


def test_fixed_mixture_has_no_mixture_parameters():
    p, _ = init_train(tiny_config(fixed_mixture=True))
    assert not any(k.startswith("phi.") for k in p)


# ------------------------------------------------------------- calibration


def _project(params, x, model_cfg):
    from shamisa.numgrad.graph import Graph
    from shamisa.model import encode_nodes, param_nodes, project_nodes

    g = Graph()
    pn = param_nodes(g, params, requires_grad=False)
    return project_nodes(g, pn, encode_nodes(g, pn, g.input("x", x), model_cfg)).value


def test_calibration_hits_target_scale(corpus):
    cfg = tiny_config()
    params, _ = init_train(cfg)
    x, _ = _batch(cfg, corpus, key=("calibration",))
    out = calibrate_projection(params, cfg.model, x, target_std=0.3)
    z = _project(out, x, cfg.model)
    np.testing.assert_allclose(z.std(axis=0, ddof=1), 0.3, atol=1e-8)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-8)


def test_calibration_touches_only_projector_output(corpus):
    cfg = tiny_config()
    params, _ = init_train(cfg)
    x, _ = _batch(cfg, corpus, key=("calibration",))
    out = calibrate_projection(params, cfg.model, x)
    changed = {k for k in params if not np.array_equal(params[k], out[k])}
    assert changed == {"proj.fc1.w", "proj.fc1.b"}
    assert params is not out  # input map untouched


# ---------------------------------------------------------------- stepping


def test_train_step_moves_parameters_and_counts(corpus):
    cfg = tiny_config()
    params, state = init_train(cfg)
    x, meta = _batch(cfg, corpus)
    new_params, new_state, parts, edges, extras = train_step(
        cfg, params, state, x, meta
    )
    assert new_state["step"] == 1
    assert any(
        not np.array_equal(params[k], new_params[k]) for k in params
    )
    for key in ("total", "var", "cov", "inv", "reg", "ot"):
        assert key in parts and np.isfinite(parts[key])
    for sid in cfg.sources:
        assert f"omega_{sid}" in parts
        assert sid in edges
    assert "agg" in edges
    assert extras["z"].shape == (cfg.engine.n_rows, cfg.model.d_z)
    assert extras["h"].shape == (cfg.engine.n_rows, cfg.model.d_h)


def test_train_step_is_pure(corpus):
    cfg = tiny_config()
    params, state = init_train(cfg)
    before = {k: v.copy() for k, v in params.items()}
    x, meta = _batch(cfg, corpus)
    train_step(cfg, params, state, x, meta)
    for k, v in before.items():
        np.testing.assert_array_equal(params[k], v)
    assert state["step"] == 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_names_the_component(corpus):
    cfg = tiny_config()
    params, state = init_train(cfg)
    params["enc.conv0.w"] = params["enc.conv0.w"] * 1e200
    x, meta = _batch(cfg, corpus)
    with pytest.raises(ArithmeticError, match="non-finite loss component"):
        train_step(cfg, params, state, x, meta)


# ------------------------------------------------------------- checkpoints


def test_checkpoint_entries_round_trip():
    cfg = tiny_config()
    params, state = init_train(cfg)
    state = {"velocity": state["velocity"], "step": 17}
    entries = checkpoint_entries(cfg, params, state)
    p2, v2, step, seed = split_checkpoint(entries)
    assert step == 17 and seed == cfg.seed
    assert set(p2) == set(params) and set(v2) == set(params)
    for k in params:
        np.testing.assert_array_equal(p2[k], params[k])


# ----------------------------------------------------------------- pretrain


def test_pretrain_writes_log_and_checkpoints(tmp_path, corpus):
    cfg = tiny_config(steps=4, checkpoint_interval=2)
    out = tmp_path / "run"
    result = pretrain(cfg, corpus, out_dir=out)
    assert len(result.history) == 4
    assert result.z_last.shape == (cfg.engine.n_rows, cfg.model.d_z)

    lines = (out / "steps.csv").read_text().strip().split("\n")
    header = lines[0].split(",")
    assert lines[0].startswith("step,loss_total,loss_var,loss_cov,loss_inv")
    assert "lr" in header and "edges_agg" in header
    assert len(lines) == 1 + 4
    # log row reproduces the recorded floats exactly
    row0 = lines[1].split(",")
    assert int(row0[0]) == 0
    assert float(row0[1]) == result.history[0].parts["total"]
    assert float(row0[header.index("lr")]) == result.history[0].lr
    assert result.history[0].lr == cosine_lr(0, cfg.optimizer)

    assert (out / "checkpoint_0000002.shck").exists()
    assert not (out / "checkpoint_0000004.shck").exists()  # final covers it
    entries = load_checkpoint(out / "checkpoint_final.shck")
    params, velocity, step, seed = split_checkpoint(entries)
    assert step == 4 and seed == cfg.seed
    for k, v in result.params.items():
        np.testing.assert_array_equal(params[k], v)
    for k, v in result.opt_state["velocity"].items():
        np.testing.assert_array_equal(velocity[k], v)


def test_pretrain_is_bit_deterministic(tmp_path, corpus):
    cfg = tiny_config(steps=3)
    a = pretrain(cfg, corpus, out_dir=tmp_path / "a")
    b = pretrain(cfg, corpus, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "steps.csv").read_bytes() == (
        tmp_path / "b" / "steps.csv"
    ).read_bytes()
    assert (tmp_path / "a" / "checkpoint_final.shck").read_bytes() == (
        tmp_path / "b" / "checkpoint_final.shck"
    ).read_bytes()
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_pretrain_starts_from_calibrated_parameters(corpus):
    cfg = tiny_config(steps=1)
    result = pretrain(cfg, corpus)
    raw, _ = init_train(cfg)
    cal_refs = _reference_indices(len(corpus), cfg.seed)
    cal_x, _ = build_batch(
        [np.asarray(corpus[next(cal_refs)], dtype=np.float64)
         for _ in range(cfg.engine.n_ref)],
        cfg.engine,
        base_key=(cfg.seed, "calibration"),
    )
    calibrated = calibrate_projection(raw, cfg.model, cal_x)
    refs = _reference_indices(len(corpus), cfg.seed)
    picked = [np.asarray(corpus[next(refs)], dtype=np.float64)
              for _ in range(cfg.engine.n_ref)]
    x, meta = build_batch(picked, cfg.engine, base_key=(cfg.seed, "batch", 0))
    manual, _, _, _, _ = train_step(
        cfg, calibrated, init_state(calibrated), x, meta
    )
    for k in result.params:
        np.testing.assert_array_equal(result.params[k], manual[k])


def test_pretrain_graph_dump(tmp_path, corpus):
    cfg = tiny_config(steps=1)
    pretrain(cfg, corpus, out_dir=tmp_path / "g", dump_graphs=True)
    lines = (tmp_path / "g" / "graph_edges.csv").read_text().strip().split("\n")
    assert lines[0] == "step,graph,src,dst,weight"
    assert len(lines) > 1
    names = {ln.split(",")[1] for ln in lines[1:]}
    assert "agg" in names


def test_pretrain_progress_callback(corpus):
    cfg = tiny_config(steps=2)
    seen = []
    pretrain(cfg, corpus, progress=seen.append)
    assert [r.step for r in seen] == [0, 1]
    assert all(r.wall_time >= 0.0 for r in seen)


def test_pretrain_validates_corpus():
    cfg = tiny_config()
    with pytest.raises(ValueError, match="corpus is empty"):
        pretrain(cfg, [])
    with pytest.raises(ValueError, match=r"image 0 is not a \(3, H, W\)"):
        pretrain(cfg, [np.zeros((32, 32))])
    with pytest.raises(ValueError, match="smaller than the 16-pixel crop"):
        pretrain(cfg, [np.zeros((3, 8, 8))])


# -------------------------------------------------------------- monitoring


def test_diagnostics_known_values():
    rng = np.random.default_rng(0)
    # duplicated column -> |corr| = 1 on the off-diagonal
    col = rng.normal(size=32)
    h = np.stack([col, col], axis=1)
    corr, rank, inv = diagnostics(h, np.zeros((32, 3)), [(0, 1)])
    assert corr == pytest.approx(1.0)
    assert rank == 1
    assert inv == 0.0
    # orthogonal columns decorrelate; distinct rows give positive inv
    q, _ = np.linalg.qr(rng.normal(size=(32, 4)))
    z = np.array([[0.0, 0.0], [3.0, 4.0]])
    corr, rank, inv = diagnostics(q, z, [(0, 1)])
    assert corr < 0.2
    assert rank == 4
    assert inv == pytest.approx(25.0)


def test_diagnostics_edge_cases():
    with pytest.raises(ValueError, match="at least two rows"):
        diagnostics(np.zeros((1, 3)), np.zeros((1, 2)), [])
    corr, rank, inv = diagnostics(np.zeros((4, 3)), np.zeros((4, 2)), [])
    assert corr == 0.0 and rank == 0 and inv == 0.0


def test_trajectory_score_properties(corpus):
    cfg = tiny_config()
    params, _ = init_train(cfg)
    a = trajectory_score(params, cfg, corpus)
    b = trajectory_score(params, cfg, corpus)
    assert a == b
    assert -1.0 <= a <= 1.0
    # a distance-preserving severity encoding scores exactly 1: fake an
    # encoder whose distance to the anchor equals the varying severity
    # by checking the probe batch directly is out of scope here; the
    # bounds and determinism are the contract.


def test_reference_stream_cycles_epochs():
    refs = _reference_indices(3, seed=1)
    first = [next(refs) for _ in range(3)]
    second = [next(refs) for _ in range(3)]
    assert sorted(first) == [0, 1, 2]
    assert sorted(second) == [0, 1, 2]
    refs2 = _reference_indices(3, seed=1)
    assert [next(refs2) for _ in range(6)] == first + second
