"""Configuration resolution and the command-line entry points."""

import numpy as np
import pytest

from shamisa import cli
from shamisa.config import (
    ConfigError,
    DESK,
    PAPER_A0,
    load_config,
    parse_config_text,
    to_train_config,
    write_snapshot,
)
from shamisa.dataio import load_features, parse_manifest, write_manifest, write_ppm
from shamisa.dataio import Manifest, generate_fixture_images

TINY_SET = [
    "engine.B=1", "engine.R=2", "engine.C=2", "engine.L=2", "engine.M_d=2",
    "engine.crop=16", "model.blocks=4,8", "model.d_h=8", "model.d_z=6",
    "ot.K=4", "run.steps=2",
]


def _tiny_args(*extra):
    out = []
    for kv in TINY_SET + list(extra):
        out += ["--set", kv]
    return out


# ---------------------------------------------------------------- resolve


def test_defaults_resolve_to_desk_preset():
    cfg = load_config(env={})
    assert cfg == DESK


def test_parse_config_text_lines_and_comments():
    cfg = parse_config_text(
        """
        # full-line comment
        engine.B = 4   # trailing comment
        model.blocks = 8, 16
        graphs.fixed_mixture = true
        graphs.sources = rd, dd
        loss.alpha = 3.5
        """
    )
    assert cfg["engine.B"] == 4
    assert cfg["model.blocks"] == (8, 16)
    assert cfg["graphs.fixed_mixture"] is True
    assert cfg["graphs.sources"] == ("rd", "dd")
    assert cfg["loss.alpha"] == 3.5


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="unknown config key: graphs.kapa"):
        parse_config_text("graphs.kapa = 1.0")


def test_bad_value_and_missing_equals():
    with pytest.raises(ConfigError, match="engine.B: cannot parse 'x' as int"):
        parse_config_text("engine.B = x")
    with pytest.raises(ConfigError, match="line 2: expected"):
        parse_config_text("engine.B = 1\njust words\n")
    with pytest.raises(ConfigError, match="cannot parse 'yes' as bool"):
        parse_config_text("graphs.binary = yes")


def test_resolution_order_file_then_overrides_then_env(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("run.seed = 5\nengine.B = 3\n")
    cfg = load_config(
        path=p, overrides=["run.seed=9"], env={"SHAMISA_SEED": "123"}
    )
    assert cfg["engine.B"] == 3  # from file
    assert cfg["run.seed"] == 123  # env wins last (over the 9 override)
    cfg = load_config(path=p, overrides=["run.seed=9"], env={})
    assert cfg["run.seed"] == 9  # overrides beat the file


def test_bad_override_and_preset():
    with pytest.raises(ConfigError, match="expected key=value"):
        load_config(overrides=["run.seed:9"], env={})
    with pytest.raises(ConfigError, match="unknown preset"):
        load_config(preset="bench", env={})


def test_snapshot_round_trip(tmp_path):
    cfg = load_config(overrides=["loss.alpha=0.1", "model.blocks=4,8"], env={})
    path = tmp_path / "config.snapshot"
    write_snapshot(cfg, path)
    back = parse_config_text(path.read_text(), base={})
    assert back == cfg


def test_paper_preset_restores_published_scale():
    cfg = load_config(preset="paper-a0", env={})
    assert cfg["engine.crop"] == 224
    assert cfg["model.d_h"] == 2048
    assert cfg["model.d_z"] == 256
    assert cfg["graphs.k_n"] == 31
    assert cfg["graphs.K_d"] == 4096
    assert cfg["ot.K"] == 32
    assert cfg["loss.alpha"] == 11.98
    assert cfg["loss.beta"] == 57.21
    assert cfg["loss.gamma"] == 88.37
    assert cfg["loss.eta"] == 0.4906
    assert cfg["loss.xi"] == 0.0342
    assert cfg["optimizer.lr"] == 1.5e-3
    assert cfg["optimizer.momentum"] == 0.9
    assert cfg["graphs.kappa"] == 2.0
    assert cfg["engine.B"] == 2 and cfg["engine.R"] == 3
    assert cfg["engine.C"] == 4 and cfg["engine.L"] == 5
    assert cfg["engine.M_d"] == 7


def test_to_train_config_field_mapping():
    cfg = load_config(
        overrides=[
            "engine.B=1", "engine.crop=32", "loss.alpha=2.5",
            "ot.iterations=7", "run.seed=42", "graphs.sources=rd,rr",
        ],
        env={},
    )
    tc = to_train_config(cfg)
    assert tc.engine.B == 1
    assert tc.model.input_size == 32  # model follows the crop size
    assert tc.weights.alpha == 2.5
    assert tc.sinkhorn_iterations == 7
    assert tc.seed == 42
    assert tc.sources == ("rd", "rr")


def test_to_train_config_range_errors_become_config_errors():
    cfg = load_config(overrides=["model.d_z=1"], env={})
    with pytest.raises(ConfigError):
        to_train_config(cfg)
    cfg = load_config(overrides=["engine.severity_sampling=gauss"], env={})
    with pytest.raises(ConfigError):
        to_train_config(cfg)


# --------------------------------------------------------------------- CLI


def test_cli_unknown_key_exits_2(tmp_path, capsys):
    rc = cli.main(
        ["distort", "--fixtures", "2", "--out", str(tmp_path / "o"),
         "--set", "graphs.kapa=1.0"]
    )
    assert rc == 2
    assert "graphs.kapa" in capsys.readouterr().err


def test_cli_missing_required_argument_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["probe", "--images", "x", "--manifest", "y", "--out", "z"])
    assert exc.value.code == 2


def test_cli_runtime_failure_exits_1(tmp_path, capsys):
    rc = cli.main(
        ["probe", "--checkpoint", str(tmp_path / "missing.shck"),
         "--images", str(tmp_path), "--manifest", str(tmp_path / "m.csv"),
         "--out", str(tmp_path / "o")]
    )
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_pretrain_needs_a_corpus_source(tmp_path, capsys):
    rc = cli.main(["pretrain", "--out", str(tmp_path / "o")] + _tiny_args())
    assert rc == 2
    assert "corpus" in capsys.readouterr().err


def test_cli_gradcheck_passes():
    assert cli.main(["gradcheck", "--seed", "2026"]) == 0


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One tiny end-to-end pretrain + distort reused by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    run_dir = root / "run"
    rc = cli.main(
        ["pretrain", "--fixtures", "3", "--fixture-size", "32",
         "--log-every", "0", "--out", str(run_dir)] + _tiny_args()
    )
    assert rc == 0
    ev_dir = root / "ev"
    rc = cli.main(
        ["distort", "--fixtures", "4", "--fixture-size", "32",
         "--count", "25", "--out", str(ev_dir)] + _tiny_args()
    )
    assert rc == 0
    return root, run_dir, ev_dir


def test_cli_pretrain_outputs(cli_run):
    _root, run_dir, _ev = cli_run
    assert (run_dir / "steps.csv").exists()
    assert (run_dir / "checkpoint_final.shck").exists()
    assert (run_dir / "config.snapshot").exists()
    assert (run_dir / "corpus" / "manifest.csv").exists()
    snap = parse_config_text((run_dir / "config.snapshot").read_text(), base={})
    assert snap["engine.crop"] == 16 and snap["run.steps"] == 2


def test_cli_distort_outputs(cli_run):
    _root, _run, ev_dir = cli_run
    man = parse_manifest(ev_dir / "manifest.csv")
    assert len(man) == 25
    assert man.ref_ids is not None
    assert (ev_dir / "dist_00024.ppm").exists()
    meta_lines = (ev_dir / "metadata.jsonl").read_text().strip().split("\n")
    assert len(meta_lines) == 25


def test_cli_probe_outputs(cli_run):
    root, run_dir, ev_dir = cli_run
    out = root / "probe"
    rc = cli.main(
        ["probe", "--checkpoint", str(run_dir / "checkpoint_final.shck"),
         "--images", str(ev_dir), "--manifest", str(ev_dir / "manifest.csv"),
         "--out", str(out)]
        + _tiny_args("eval.n_splits=3", "eval.split_mode=random")
    )
    assert rc == 0
    results = (out / "results.csv").read_text().strip().split("\n")
    assert results[0] == "split,srcc,plcc,alpha,plcc_converged"
    assert len(results) == 1 + 3
    summary = (out / "summary.csv").read_text().strip().split("\n")
    assert summary[0] == "median_srcc,median_plcc,alpha"
    med = float(summary[1].split(",")[0])
    assert -1.0 <= med <= 1.0
    preds = (out / "predictions.csv").read_text().strip().split("\n")
    assert len(preds) == 1 + 25


def test_cli_export_features_round_trip(cli_run):
    root, run_dir, ev_dir = cli_run
    out = root / "feats"
    rc = cli.main(
        ["export-features", "--checkpoint", str(run_dir / "checkpoint_final.shck"),
         "--images", str(ev_dir), "--manifest", str(ev_dir / "manifest.csv"),
         "--out", str(out)] + _tiny_args()
    )
    assert rc == 0
    mat, paths = load_features(out / "features.shaf")
    assert mat.shape == (25, 2 * 8)  # crop-averaged two-scale features
    assert paths == list(parse_manifest(ev_dir / "manifest.csv").paths)


def test_cli_gmad_outputs(tmp_path):
    rng = np.random.default_rng(0)
    paths = [f"im_{i}.ppm" for i in range(40)]
    defender = Manifest(paths, np.linspace(0, 1, 40))
    attacker = Manifest(paths, rng.uniform(size=40))
    write_manifest(tmp_path / "d.csv", defender)
    write_manifest(tmp_path / "a.csv", attacker)
    out = tmp_path / "gmad"
    rc = cli.main(
        ["gmad", "--defender", str(tmp_path / "d.csv"),
         "--attacker", str(tmp_path / "a.csv"), "--n-bins", "4",
         "--out", str(out)]
    )
    assert rc == 0
    lines = (out / "pairs.csv").read_text().strip().split("\n")
    assert lines[0] == "bin,index_a,index_b,path_a,path_b,attacker_gap"
    assert len(lines) == 1 + 2  # default bins: lowest and highest
    assert lines[1].split(",")[0] == "0"
    assert lines[2].split(",")[0] == "3"


def test_cli_gmad_rejects_mismatched_manifests(tmp_path, capsys):
    write_manifest(tmp_path / "d.csv", Manifest(["a"], np.array([1.0])))
    write_manifest(tmp_path / "a.csv", Manifest(["b"], np.array([1.0])))
    rc = cli.main(
        ["gmad", "--defender", str(tmp_path / "d.csv"),
         "--attacker", str(tmp_path / "a.csv"), "--out", str(tmp_path / "o")]
    )
    assert rc == 1
    assert "different images" in capsys.readouterr().err


def test_cli_fr_probe(cli_run, tmp_path):
    _root, run_dir, _ev = cli_run
    refs = generate_fixture_images(2, 32, seed=21)
    rng = np.random.default_rng(3)
    paths, scores, ref_ids = [], [], []
    for r, ref in enumerate(refs):
        name = f"ref_{r}.ppm"
        write_ppm(tmp_path / name, ref)
        for d in range(13):
            sev = (d + 1) / 13
            img = np.clip(ref + rng.normal(0, 0.3 * sev, ref.shape), 0, 1)
            dname = f"dist_{r}_{d}.ppm"
            write_ppm(tmp_path / dname, img)
            paths.append(dname)
            scores.append(1.0 - sev)
            ref_ids.append(name)
    write_manifest(
        tmp_path / "m.csv", Manifest(paths, np.array(scores), ref_ids)
    )
    out = tmp_path / "fr"
    rc = cli.main(
        ["fr-probe", "--checkpoint", str(run_dir / "checkpoint_final.shck"),
         "--images", str(tmp_path), "--manifest", str(tmp_path / "m.csv"),
         "--out", str(out)]
        + _tiny_args("eval.n_splits=2", "eval.split_mode=random")
    )
    assert rc == 0
    assert (out / "results.csv").exists()
    assert not (out / "predictions.csv").exists()  # no per-image predictions


def test_cli_seed_env_override(cli_run, monkeypatch, tmp_path):
    monkeypatch.setenv("SHAMISA_SEED", "77")
    out = tmp_path / "seeded"
    rc = cli.main(
        ["distort", "--fixtures", "2", "--fixture-size", "32", "--count", "4",
         "--out", str(out)] + _tiny_args()
    )
    assert rc == 0
    snap = parse_config_text((out / "config.snapshot").read_text(), base={})
    assert snap["run.seed"] == 77


def test_cli_cross(cli_run):
    root, run_dir, ev_dir = cli_run
    ev2 = root / "ev2"
    rc = cli.main(
        ["distort", "--fixtures", "4", "--fixture-size", "32",
         "--count", "25", "--out", str(ev2)]
        + _tiny_args("run.seed=9")
    )
    assert rc == 0
    out = root / "cross"
    rc = cli.main(
        ["cross", "--checkpoint", str(run_dir / "checkpoint_final.shck"),
         "--source-images", str(ev_dir),
         "--source-manifest", str(ev_dir / "manifest.csv"),
         "--target-images", str(ev2),
         "--target-manifest", str(ev2 / "manifest.csv"),
         "--out", str(out)]
        + _tiny_args("eval.n_splits=2", "eval.split_mode=random")
    )
    assert rc == 0
    lines = (out / "results.csv").read_text().strip().split("\n")
    assert lines[0] == "split,srcc"
    assert len(lines) == 1 + 2
