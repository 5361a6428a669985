import hashlib
import json
import math

import numpy as np
import pytest

from perturbed_lk import ConfigError, CovarianceModel, GridSpec, PerturbationSpec, gaussian_tail
from perturbed_lk.harness import (
    INFERENCE_HEADER,
    ExperimentConfig,
    run_clt_experiment,
    run_curvature_sweep,
    run_experiment,
    run_histogram_experiment,
    run_inference_experiment,
)

MODEL = CovarianceModel(1.0, 0.25)
GRID = GridSpec(48, 48)


def cfg(**kw):
    base = dict(model=MODEL, grid=GRID, replicas=6, levels=[0.5, 1.5], theta_samples=2000, density_points=11)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.parametrize(
    "kw",
    [
        {"replicas": 0},
        {"levels": []},
        {"kind": "plot"},
        {"kind": "inference", "levels": [0.0, 1.0]},
        {"kind": "clt"},
        {"threads": 0},
        {"perturbations": []},
    ],
)
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        cfg(**kw)


def test_config_files_agree(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({
        "kind": "inference", "levels": [1.5], "replicas": 3,
        "grid": {"nx": 32, "ny": 32}, "perturbation": {"law": "skellam", "mu": 1.0}, "epsilons": [0.1, 0.5],
    }))
    (tmp_path / "c.toml").write_text(
        'kind = "inference"\nlevels = [1.5]\nreplicas = 3\nepsilons = [0.1, 0.5]\n'
        "[grid]\nnx = 32\nny = 32\n[perturbation]\nlaw = \"skellam\"\nmu = 1.0\n"
    )
    a = ExperimentConfig.from_file(tmp_path / "c.json")
    b = ExperimentConfig.from_file(tmp_path / "c.toml", seed=4)
    assert a.perturbations == b.perturbations == [PerturbationSpec.skellam(0.1), PerturbationSpec.skellam(0.5)]
    assert b.seed == 4 and a.seed == 0
    assert ExperimentConfig.from_dict(a.to_dict()).to_dict() == a.to_dict()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"grid": {"nx": 0, "ny": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"unknown_key": 1})


def test_curvature_sweep_single_replica():
    rows = run_curvature_sweep(cfg(replicas=1)).table("curvature_sweep.csv")
    assert len(rows) == 2
    for r in rows:
        assert r["n_replicas"] == 1
        for i in range(3):
            assert r[f"min_c{i}_hat"] == r[f"max_c{i}_hat"] == r[f"mean_c{i}_hat"]
            assert math.isnan(r[f"se_c{i}_hat"])


def test_replicas_are_prefix_stable():
    # replica seeds depend on the index only, so fewer replicas give a prefix
    a = run_inference_experiment(cfg(kind="inference", replicas=7)).table("inference_replicas.csv")
    b = run_inference_experiment(cfg(kind="inference", replicas=4)).table("inference_replicas.csv")
    pick = lambda rows, n: [r["eps_hat"] for r in rows if r["u"] == 0.5][:n]
    assert pick(a, 4) == pick(b, 4)


def test_threads_do_not_change_results():
    one = run_curvature_sweep(cfg(threads=1))
    three = run_curvature_sweep(cfg(threads=3))
    assert one.tables == three.tables


def test_byte_identical_reruns(tmp_path):
    c = cfg(kind="histogram", perturbations=[PerturbationSpec.skellam(0.5)], out=str(tmp_path / "a"))
    run_experiment(c)
    c2 = cfg(kind="histogram", perturbations=[PerturbationSpec.skellam(0.5)], out=str(tmp_path / "b"))
    run_experiment(c2)
    for name in ("histogram_records.csv", "histogram_density.csv", "histogram_summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "histogram_manifest.json").read_text())
    data = (tmp_path / "a" / "histogram_summary.csv").read_bytes()
    assert man["outputs"]["histogram_summary.csv"] == hashlib.sha256(data).hexdigest()
    assert man["config"]["replicas"] == 6
    assert man["wall_time_s"] >= 0


def test_histogram_records_use_realized_shift():
    c = cfg(kind="histogram", perturbations=[PerturbationSpec.skellam(0.5), PerturbationSpec.skellam(0.0)])
    res = run_histogram_experiment(c)
    recs = res.table("histogram_records.csv")
    sq = math.sqrt(GRID.area)
    for r in recs:
        assert r["shift"] == r["epsilon"] * r["x"]
        assert r["z"] == pytest.approx(sq * (r["c2_over_T"] - gaussian_tail(r["level"] - r["shift"])))
        if r["epsilon"] == 0:
            assert r["z"] == pytest.approx(r["y"])
    summary = res.table("histogram_summary.csv")
    assert {s["n_replicas"] for s in summary} == {6}
    dens = res.table("histogram_density.csv")
    assert list(dens[0])[3:] == ["y", "h_tilde", "h_exact", "f_bep0", "f_bep2", "f_bep4"]


def test_inference_table():
    c = cfg(kind="inference", perturbations=[PerturbationSpec.skellam(0.0), PerturbationSpec.skellam(0.3)])
    res = run_inference_experiment(c)
    header, rows = res.tables["inference.csv"]
    assert header[:6] == ["epsilon_true", "u", "eps_hat_mean", "ci_low", "ci_high", "n_replicas"]
    assert header == INFERENCE_HEADER
    table = res.table("inference.csv")
    assert len(table) == 4
    for r in table:
        assert r["ci_low"] < r["epsilon_true"] < r["ci_high"]
        assert r["covered"] == (r["ci_low"] <= r["eps_hat_mean"] <= r["ci_high"])
    zero = [r for r in table if r["epsilon"] == 0.0]
    assert all(r["eps_target_exact"] == 0.0 for r in zero)


def test_clt_single_scale():
    c = cfg(kind="clt", replicas=1, levels=[1.0], schedule=[(32, 0.0)])
    rows = run_clt_experiment(c).table("clt.csv")
    assert len(rows) == 1
    assert rows[0]["n"] == 32 and rows[0]["n_replicas"] == 1


def test_clt_schedule_rows():
    c = cfg(kind="clt", replicas=4, levels=[0.0, 1.0], schedule=[(32, 0.0), (48, 1 / 48**2)],
            perturbations=[PerturbationSpec.skellam(0.1)])
    rows = run_clt_experiment(c).table("clt.csv")
    assert [(r["n"], r["level"]) for r in rows] == [(32, 0.0), (32, 1.0), (48, 0.0), (48, 1.0)]
    assert all(r["v_u"] > 0 and 0 <= r["ks_distance"] <= 1 for r in rows)
