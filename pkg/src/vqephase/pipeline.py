"""Stage implementations shared by the command line and the acceptance suite."""
from __future__ import annotations

import logging

import numpy as np

from . import analysis as an
from . import models
from .ansatz import build_ansatz
from .config import RunConfig, label_for
from .generative import AttentionVAE, ConditionalVAE, LatentDiffusion
from .statevec import StateVector
from .vqe import SweepDataset, VqeRecord, final_states, linear_grid, make_grid, sweep

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


def template_for(cfg_or_meta):
    if isinstance(cfg_or_meta, RunConfig):
        return build_ansatz(cfg_or_meta.ansatz.kind, cfg_or_meta.model.n_qubits,
                            cfg_or_meta.ansatz.blocks)
    a = cfg_or_meta["ansatz"]
    return build_ansatz(a["kind"], cfg_or_meta["n_qubits"], a["blocks"])


def grid_values(cfg: RunConfig) -> np.ndarray:
    m = cfg.model
    if m.values is not None:
        return np.asarray(m.values, dtype=np.float64)
    if m.segments is not None:
        return np.concatenate([linear_grid(g.start, g.stop, g.step) for g in m.segments])
    return linear_grid(m.start, m.stop, m.step)


def run_sweep(cfg: RunConfig) -> SweepDataset:
    m = cfg.model
    template = template_for(cfg)
    values = grid_values(cfg)
    grid = make_grid(m.family, m.scan, values, m.fixed)
    spec = {"scan": m.scan, "fixed": dict(m.fixed), "values": [float(v) for v in values]}
    return sweep(m.family, grid, template, cfg.vqe.to_vqe(cfg.seed), boundary=m.boundary,
                 with_exact=cfg.vqe.with_exact, penalty=cfg.vqe.penalty,
                 ansatz={"kind": cfg.ansatz.kind, "blocks": cfg.ansatz.blocks}, grid_spec=spec)


def check_layout(ds: SweepDataset, cfg: RunConfig) -> None:
    expected = template_for(cfg).layout_id
    if ds.layout_id != expected:
        raise StageError(f"dataset layout_id {ds.layout_id} does not match config layout {expected}")


def training_indices(n: int, n_train: int | None, seed: int) -> np.ndarray:
    """Seeded subset (sorted) of ``n_train`` record indices; all of them if ``None``."""
    if n_train is None or n_train >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=n_train, replace=False))


def dataset_labels(ds: SweepDataset, cfg: RunConfig) -> np.ndarray:
    """Label rule applied to the scan coordinate; ``-1`` marks unlabelled points."""
    xs = ds.xs(cfg.model.scan)
    return np.array([(lambda v: -1 if v is None else v)(label_for(x, cfg.labels)) for x in xs])


def train_vae(ds: SweepDataset, cfg: RunConfig, *, variant: str | None = None, **overrides):
    variant = variant or cfg.variant
    params = cfg.vae.estimator_params()
    params.update(overrides)
    params["seed"] = params.get("seed", cfg.seed)
    X = ds.thetas()
    idx = training_indices(len(X), cfg.vae.n_train, cfg.seed)
    if variant == "cvae":
        if not cfg.labels:
            raise StageError("cvae training needs a label rule in the config")
        y = dataset_labels(ds, cfg)
        idx = idx[y[idx] >= 0]
        return ConditionalVAE(**params).fit(X[idx], y[idx])
    return AttentionVAE(**params).fit(X[idx])


def train_diffusion(vae: AttentionVAE, ds: SweepDataset, cfg: RunConfig) -> LatentDiffusion:
    if not cfg.labels:
        raise StageError("diffusion training needs a label rule in the config")
    before = vae.params_hash()
    y = dataset_labels(ds, cfg)
    keep = y >= 0
    Z = vae.transform(ds.thetas()[keep])
    dm = LatentDiffusion(**cfg.diffusion.model_dump(), seed=cfg.seed).fit(Z, y[keep])
    if vae.params_hash() != before:
        raise StageError("VAE parameters changed during diffusion training")
    dm.vae_hash_ = before
    return dm


def generate(cfg: RunConfig, vae, diffusion: LatentDiffusion | None, source_meta: dict,
             label: int | None = None, n: int | None = None, seed: int | None = None):
    label = cfg.generate.label if label is None else label
    n = cfg.generate.n if n is None else n
    seed = cfg.seed if seed is None else seed
    if cfg.generate.method == "diffusion":
        if diffusion is None:
            raise StageError("diffusion generation needs a diffusion checkpoint")
        Z = diffusion.sample(label, n, seed=seed)
        thetas = vae.decode(Z)
    else:
        if not isinstance(vae, ConditionalVAE):
            raise StageError("cvae generation needs a ConditionalVAE checkpoint")
        if label not in set(vae.classes_.tolist()):
            raise StageError(f"label {label} outside trained labels {vae.classes_.tolist()}")
        Z = np.random.default_rng(seed).standard_normal((n, vae.d_latent))
        thetas = vae.decode(Z, np.full(n, label))
    records = []
    for i, th in enumerate(thetas):
        records.append(VqeRecord(x={"sample": float(i)}, theta_star=th, final_energy=float("nan"),
                                 iters_used=0, converged=False, generated=True, label=int(label)))
    meta = dict(source_meta)
    meta.update({"generated": True, "generate": {"method": cfg.generate.method, "label": label,
                                                 "n": n, "seed": seed},
                 "grid": {"scan": "sample", "n_points": n}})
    return SweepDataset(meta, records)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _string_order(psi) -> float:
    # the string needs at least five sites
    return models.string_order(psi) if psi.n_qubits >= 5 else float("nan")


def _hamiltonian(meta: dict, x: dict):
    names = models.FAMILIES[meta["family"]]
    if not set(names) <= set(x):
        return None
    spec = models.HamiltonianSpec(meta["family"], meta["n_qubits"], {k: x[k] for k in names},
                                  meta.get("boundary", "periodic"))
    return spec.build()


def evaluate(ds: SweepDataset, cfg: RunConfig):
    """Per-record observables plus aggregate statistics."""
    template = template_for(ds.metadata)
    obs = cfg.eval.observables
    n = template.n_qubits
    header = ["index"] + sorted(ds.records[0].x) if ds.records else ["index"]
    cols = []
    if "magnetization" in obs:
        cols.append("magnetization")
    if "string_order" in obs:
        cols.append("string_order")
    if "z_profile" in obs:
        cols.extend(f"z_{i}" for i in range(n))
    if "fidelity" in obs:
        cols.append("fidelity")
    if "energy_discrepancy" in obs:
        cols.extend(["energy", "exact_energy", "energy_discrepancy"])
    header = header + cols
    rows, values = [], {c: [] for c in cols}
    if ds.records:
        states = final_states(template, ds.thetas())
    for i, rec in enumerate(ds.records):
        psi = StateVector(n, states[i])
        row = [i] + [rec.x[k] for k in sorted(rec.x)]
        vals = {}
        if "magnetization" in obs:
            vals["magnetization"] = models.magnetization(psi)
        if "string_order" in obs:
            vals["string_order"] = _string_order(psi)
        if "z_profile" in obs:
            for j, z in enumerate(models.z_profile(psi)):
                vals[f"z_{j}"] = float(z)
        h = _hamiltonian(ds.metadata, rec.x)
        if "fidelity" in obs:
            if h is None:
                vals["fidelity"] = float("nan")
            else:
                gs = models.exact_ground(h, ds.metadata.get("penalty") or models.DEFAULT_PENALTY)
                vals["fidelity"] = float(abs(np.vdot(gs.state.amplitudes, psi.amplitudes)) ** 2)
        if "energy_discrepancy" in obs:
            if h is None:
                vals.update(energy=float("nan"), exact_energy=float("nan"),
                            energy_discrepancy=float("nan"))
            else:
                from .statevec import expectation

                e = expectation(psi, h)
                ex = rec.exact_energy if rec.exact_energy is not None else models.ground_energy(h)
                vals.update(energy=e, exact_energy=ex, energy_discrepancy=e - ex)
        for c in cols:
            values[c].append(vals[c])
        rows.append(row + [vals[c] for c in cols])
    return header, rows, aggregate(values)


def aggregate(values: dict) -> list[tuple]:
    """Summary rows ``(column, statistic, value)``."""
    out = []
    for c, v in values.items():
        a = np.asarray(v, dtype=np.float64)
        a = a[np.isfinite(a)]
        if a.size == 0:
            continue
        stats = [("mean", a.mean()), ("mean_abs", np.abs(a).mean()),
                 ("q1", np.quantile(a, 0.25)), ("median", np.quantile(a, 0.5)),
                 ("q3", np.quantile(a, 0.75))]
        stats += [(f"cdf_q{q}", np.quantile(a, q)) for q in (0.1, 0.3, 0.5, 0.7, 0.9)]
        if c == "string_order":
            stats += [("frac_gt_0.4", float(np.mean(a > 0.4))), ("frac_gt_0.2", float(np.mean(a > 0.2))),
                      ("frac_abs_gt_0.4", float(np.mean(np.abs(a) > 0.4))),
                      ("frac_abs_gt_0.2", float(np.mean(np.abs(a) > 0.2)))]
        out.extend((c, name, float(val)) for name, val in stats)
    return out


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------


def analyze(vae: AttentionVAE, ds: SweepDataset, cfg: RunConfig) -> dict:
    """Encode every record and run PCA -> GMM (+ KPCA, window variance).

    Returns a mapping ``filename -> CSV text`` and the intermediate results.
    """
    a = cfg.analysis
    x = ds.xs(cfg.model.scan)
    Z = vae.transform(ds.thetas())
    res = an.latent_pipeline(Z, x, n_clusters=a.n_clusters, pca_depth=a.pca_depth, seed=cfg.seed)
    return finish_analysis(res, cfg)


def finish_analysis(res: dict, cfg: RunConfig) -> dict:
    a = cfg.analysis
    x = res["x"]
    csvs = {
        "latent_scatter.csv": an.to_csv(["x", "pc1", "pc2", "label"],
                                        an.latent_scatter_rows(x, res["pcs"], res["labels"])),
        "kpca.csv": an.to_csv(["x", "score"], list(zip(x, res["kpca"]))),
    }
    summary = [("silhouette", res["silhouette"])]
    if a.n_clusters == 2:
        summary.append(("gmm_boundary", an.boundary_estimate(res["labels"], x)))
        summary.append(("kpca_jump", an.largest_jump(x, res["kpca"])[0]))
    if a.window is not None:
        curve = an.window_variance(res["labels"], x, a.window, a.stride)
        peaks = an.find_peaks(curve, a.rel_height)
        res["curve"], res["peaks"] = curve, peaks
        csvs["variance.csv"] = an.to_csv(["center", "variance"], an.variance_rows(curve))
        for i, (c, hgt) in enumerate(sorted(peaks)):
            summary.append((f"peak_{i}", c))
            summary.append((f"peak_{i}_height", hgt))
    if a.label_map:
        csvs["label_map.csv"] = an.to_csv(["label", "phase"], sorted(a.label_map.items()))
    csvs["transitions.csv"] = an.to_csv(["quantity", "value"], summary)
    res["summary"] = dict(summary)
    res["csvs"] = csvs
    return res


def exact_rows(cfg: RunConfig):
    m = cfg.model
    values = grid_values(cfg)
    rows = []
    for x in make_grid(m.family, m.scan, values, m.fixed):
        h = models.HamiltonianSpec(m.family, m.n_qubits, x, m.boundary).build()
        gs = models.exact_ground(h, cfg.vqe.penalty)
        psi = gs.state
        rows.append((x[m.scan], gs.energy_unpenalized, gs.energy, cfg.vqe.penalty,
                     models.magnetization(psi), _string_order(psi)))
    header = [m.scan, "energy", "energy_penalized", "penalty", "magnetization", "string_order"]
    return header, rows


def gradcheck(seed: int = 0, n_instances: int = 5) -> list[tuple[str, float, bool]]:
    """Adjoint / parameter-shift / finite-difference agreement plus layer gradients."""
    from .statevec import PauliSum, grad_adjoint, grad_parameter_shift
    from .statevec import expectation as ev
    from .statevec import run_circuit
    from .tensor import autograd as ag
    from .tensor import layers as L

    rng = np.random.default_rng(seed)
    report = []
    for i in range(n_instances):
        kind = ("tfim", "cluster")[i % 2]
        t = build_ansatz(kind, 4, 1 + i % 2)
        h = models.build_cluster_yy(4, rng.uniform(0, 2)) if i % 3 == 0 else \
            models.build_tfim(4, rng.uniform(0, 2))
        th = rng.uniform(-np.pi, np.pi, t.n_params)
        ga, gp = grad_adjoint(t, th, h), grad_parameter_shift(t, th, h)
        fd = np.array([(ev(run_circuit(t, th + e), h) - ev(run_circuit(t, th - e), h)) / 2e-6
                       for e in np.eye(t.n_params) * 1e-6])
        err = float(np.max(np.abs(ga - gp)))
        report.append((f"circuit[{i}] adjoint-vs-shift", err, err < 1e-8))
        rel = float(np.max(np.abs(ga - fd)) / max(np.max(np.abs(fd)), 1e-12))
        report.append((f"circuit[{i}] adjoint-vs-fd", rel, rel < 1e-4))

    def fd_check(name, f, params):
        for p in params.values():
            p.grad = None
        f().backward()
        worst = 0.0
        for p in params.values():
            num = np.zeros_like(p.data)
            flat, nflat = p.data.reshape(-1), num.reshape(-1)
            for j in range(flat.size):
                o = flat[j]
                flat[j] = o + 1e-5
                a = f().item()
                flat[j] = o - 1e-5
                b = f().item()
                flat[j] = o
                nflat[j] = (a - b) / 2e-5
            worst = max(worst, float(np.max(np.abs(p.grad - num)) / max(np.max(np.abs(num)), 1e-12)))
        report.append((name, worst, worst < 1e-4))

    x = ag.parameter(rng.normal(size=(2, 5, 8)))
    p = {"x": x, **L.init_attention(rng, 8)}
    fd_check("attention", lambda: ag.tsum(ag.tanh(L.attention(x, p, 2))), p)
    c = {"x": x, **L.init_conv1d(rng, 8, 3, 3)}
    fd_check("conv1d", lambda: ag.tsum(ag.tanh(L.conv1d(x, c)) ** 2), c)
    fd_check("conv1d_transposed", lambda: ag.tsum(ag.tanh(L.conv1d_transposed(x, c)) ** 2), c)
    r = {"x": x, **L.init_resnet_block(rng, 8)}
    fd_check("resnet_block", lambda: ag.tsum(ag.tanh(L.resnet_block(x, r))), r)
    y = ag.parameter(rng.normal(size=(4, 6)))
    m = {"y": y, **L.init_mlp(rng, (6, 5, 3))}
    fd_check("mlp", lambda: ag.tsum(L.mlp(y, m, 2) ** 2), m)
    mu, lv = ag.parameter(rng.normal(size=(4, 3))), ag.parameter(rng.normal(size=(4, 3)))
    fd_check("losses", lambda: L.kl_gauss(mu, lv) + L.mse_loss(mu, lv * 2.0), {"mu": mu, "lv": lv})
    return report
