import json

import pytest
import yaml

from vqephase.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from vqephase.analysis import read_csv
from vqephase.dataset import load_dataset

BASE = {
    "seed": 3,
    "model": {"family": "tfim", "n_qubits": 3, "start": 0.0, "stop": 2.0, "step": 0.25},
    "ansatz": {"kind": "tfim", "blocks": 1},
    "vqe": {"max_iters": 30, "with_exact": True},
    "vae": {"d_latent": 2, "epochs": 3, "hidden": 16, "batch_size": 4},
    "diffusion": {"T": 20, "epochs": 5, "hidden": 16},
    "labels": [{"min": 0.0, "max": 0.8, "label": 0}, {"min": 1.2, "max": 2.0, "label": 1}],
    "analysis": {"n_clusters": 2, "window": 3, "stride": 1},
}


def write_cfg(path, **updates):
    cfg = json.loads(json.dumps(BASE))
    for k, v in updates.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(d / "sweep.yaml")
    assert main(["sweep", "--config", cfg, "--out", str(d)]) == EXIT_OK
    return d


def test_sweep_outputs(workdir):
    ds = load_dataset(workdir / "dataset.jsonl")
    assert len(ds) == 9
    assert len(ds.records[0].theta_star) == 18
    lines = (workdir / "sweep_summary.csv").read_text().splitlines()
    assert lines[0].startswith("# format_version=1 layout_id=")
    assert "config_hash=" in lines[0] and lines[1] == "quantity,value"
    header, rows = read_csv(workdir / "sweep_summary.csv")
    assert header == ["quantity", "value"] and rows[0] == ["n_records", "9"]


def test_train_analyze_deterministic(workdir, tmp_path):
    ds = str(workdir / "dataset.jsonl")
    cfg = write_cfg(tmp_path / "t.yaml", paths={"dataset": ds})
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
        cfg2 = write_cfg(tmp_path / f"an_{run}.yaml",
                         paths={"dataset": ds, "checkpoint": str(out / "vae.ckpt")})
        assert main(["analyze", "--config", cfg2, "--out", str(out)]) == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    assert outs[0] == outs[1]
    assert {"latent_scatter.csv", "kpca.csv", "variance.csv", "transitions.csv"} <= set(outs[0])


def test_cvae_generate_eval(workdir, tmp_path):
    ds = str(workdir / "dataset.jsonl")
    cfg = write_cfg(tmp_path / "c.yaml", variant="cvae", paths={"dataset": ds})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    gcfg = write_cfg(tmp_path / "g.yaml", paths={"dataset": ds,
                                                 "checkpoint": str(tmp_path / "cvae.ckpt")})
    assert main(["generate", "--config", gcfg, "--out", str(tmp_path), "--label", "1",
                 "-n", "5"]) == EXIT_OK
    gen = load_dataset(tmp_path / "generated_label1.jsonl")
    assert len(gen) == 5 and all(r.generated and r.label == 1 for r in gen.records)
    assert main(["generate", "--config", gcfg, "--out", str(tmp_path / "z"), "--label", "1",
                 "-n", "0"]) == EXIT_OK
    assert len(load_dataset(tmp_path / "z" / "generated_label1.jsonl")) == 0
    assert main(["generate", "--config", gcfg, "--out", str(tmp_path), "--label", "9"]) \
        == EXIT_RUNTIME
    ecfg = write_cfg(tmp_path / "e.yaml", paths={"dataset": str(tmp_path / "generated_label1.jsonl")},
                     eval={"observables": ["magnetization", "string_order", "z_profile"]})
    assert main(["eval", "--config", ecfg, "--out", str(tmp_path)]) == EXIT_OK
    summary = (tmp_path / "metrics_summary.csv").read_text()
    assert "magnetization,q1," in summary and "magnetization,cdf_q0.9," in summary


def test_aggregate_string_order_fractions():
    from vqephase.pipeline import aggregate

    rows = {(c, s): v for c, s, v in aggregate({"string_order": [0.1, 0.3, 0.5, -0.6]})}
    assert rows[("string_order", "frac_gt_0.4")] == 0.25
    assert rows[("string_order", "frac_gt_0.2")] == 0.5
    assert rows[("string_order", "frac_abs_gt_0.4")] == 0.5
    assert rows[("string_order", "median")] == pytest.approx(0.2)


def test_eval_exact_state(workdir, tmp_path):
    cfg = write_cfg(tmp_path / "e.yaml", paths={"dataset": str(workdir / "dataset.jsonl")},
                    eval={"observables": ["fidelity", "energy_discrepancy"]})
    assert main(["eval", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    assert "energy_discrepancy" in read_csv(tmp_path / "metrics.csv")[0]


def test_diffusion_needs_vae_checkpoint(workdir, tmp_path):
    cfg = write_cfg(tmp_path / "d.yaml", variant="diffusion",
                    paths={"dataset": str(workdir / "dataset.jsonl")})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_diffusion_pipeline(workdir, tmp_path):
    ds = str(workdir / "dataset.jsonl")
    cfg = write_cfg(tmp_path / "v.yaml", paths={"dataset": ds})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    dcfg = write_cfg(tmp_path / "d.yaml", variant="diffusion",
                     paths={"dataset": ds, "vae_checkpoint": str(tmp_path / "vae.ckpt")})
    assert main(["train", "--config", dcfg, "--out", str(tmp_path)]) == EXIT_OK
    gcfg = write_cfg(tmp_path / "g.yaml", generate={"method": "diffusion", "label": 0, "n": 4},
                     paths={"dataset": ds, "vae_checkpoint": str(tmp_path / "vae.ckpt"),
                            "checkpoint": str(tmp_path / "diffusion.ckpt")})
    assert main(["generate", "--config", gcfg, "--out", str(tmp_path)]) == EXIT_OK
    assert len(load_dataset(tmp_path / "generated_label0.jsonl")) == 4


def test_layout_mismatch(workdir, tmp_path):
    cfg = write_cfg(tmp_path / "m.yaml", ansatz={"kind": "tfim", "blocks": 2},
                    paths={"dataset": str(workdir / "dataset.jsonl")})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_exact_and_gradcheck(tmp_path):
    cfg = write_cfg(tmp_path / "x.yaml")
    assert main(["exact", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    meta = json.loads((tmp_path / "exact_meta.json").read_text())
    assert meta["penalty"] == 0.01
    assert main(["gradcheck", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("vqe: {lr: 1}\n")
    assert main(["sweep", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["sweep", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["sweep"]) == EXIT_CONFIG
    assert main(["nope", "--config", str(bad)]) == EXIT_CONFIG


def test_empty_grid(tmp_path):
    cfg = write_cfg(tmp_path / "e.yaml", model={"values": []})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    assert len(load_dataset(tmp_path / "dataset.jsonl")) == 0


def test_seed_override(workdir, tmp_path):
    cfg = write_cfg(tmp_path / "s.yaml", model={"stop": 0.5})
    main(["sweep", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "11"])
    assert load_dataset(tmp_path / "a" / "dataset.jsonl").metadata["seed"] == 11
