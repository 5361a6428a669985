"""Monte Carlo experiment drivers.

Every replica gets its own Philox stream keyed by
``(master_seed, index, crc32(experiment_name), stream)``, so results do not
depend on execution order or thread count.  Replicas ``2k`` and ``2k+1``
share one complex FFT (real and imaginary parts).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import __version__
from .covariance import CovarianceModel
from .exceptions import ConfigError
from .excursion import area_fraction, measure
from .field_sim import (
    GridSpec,
    PerturbationSpec,
    experiment_key,
    make_rng,
    perturb,
    plan_embedding,
    sample_perturbation,
    simulate_pair,
)
from .gkf import gaussian_lk_densities, gaussian_tail, perturbed_lk_densities
from .inference import (
    confidence_interval,
    epsilon_asymptotic_variance,
    epsilon_target_exact,
    estimate_epsilon,
)
from .limit_law import (
    TABULATED,
    bep_density,
    exact_area_mean,
    exact_mixture_cdf,
    exact_mixture_density,
    limit_law_params,
    sample_limit_law,
    truncated_limit_density,
    variance_v,
)

KINDS = ("curvature_sweep", "histogram", "inference", "clt")
FIELD_STREAM, X_STREAM, THETA_STREAM = 0, 1, 2


def read_config_file(path) -> dict:
    """Parse a JSON or TOML (by ``.toml`` suffix) configuration file."""
    path = str(path)
    try:
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


@dataclass
class ExperimentConfig:
    kind: str = "curvature_sweep"
    model: CovarianceModel = field(default_factory=CovarianceModel)
    grid: GridSpec = field(default_factory=GridSpec)
    perturbations: list = field(default_factory=lambda: [PerturbationSpec.degenerate()])
    levels: list = field(default_factory=lambda: [0.0])
    replicas: int = 100
    seed: int = 0
    out: str = "out"
    threads: int = 1
    perimeter: str = "pixel"
    clip_tol: float = 1e-6
    theta_samples: int = 100_000
    density_points: int = 201
    schedule: list = field(default_factory=list)
    gamma_convention: str = TABULATED
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise ConfigError("replicas must be a positive integer")
        if not self.levels:
            raise ConfigError("level grid is empty")
        if not self.perturbations:
            raise ConfigError("at least one perturbation is required")
        if self.kind == "inference" and any(u == 0 for u in self.levels):
            raise ConfigError("inference needs non-zero levels")
        if self.kind == "clt" and not self.schedule:
            raise ConfigError("clt experiment needs a schedule of (n, epsilon) pairs")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.levels = [float(u) for u in self.levels]
        self.schedule = [(int(n), float(e)) for n, e in self.schedule]

    @property
    def experiment_name(self) -> str:
        return self.name or self.kind

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            kw = {}
            if "model" in d:
                kw["model"] = CovarianceModel(**d.pop("model"))
            if "grid" in d:
                kw["grid"] = GridSpec(**d.pop("grid"))
            base = d.pop("perturbation", None)
            perts = d.pop("perturbations", None)
            eps_list = d.pop("epsilons", None)
            if perts is not None:
                kw["perturbations"] = [PerturbationSpec(**p) for p in perts]
            elif base is not None or eps_list is not None:
                base = dict(base or {})
                if eps_list is None:
                    kw["perturbations"] = [PerturbationSpec(**base)]
                else:
                    base.pop("epsilon", None)
                    kw["perturbations"] = [PerturbationSpec(epsilon=e, **base) for e in eps_list]
            kw.update(d)
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment configuration: {exc}") from exc

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        d = read_config_file(path)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "model": self.model.to_dict(),
            "grid": self.grid.to_dict(),
            "perturbations": [p.to_dict() for p in self.perturbations],
            "levels": list(self.levels),
            "replicas": self.replicas,
            "seed": self.seed,
            "perimeter": self.perimeter,
            "clip_tol": self.clip_tol,
            "theta_samples": self.theta_samples,
            "density_points": self.density_points,
            "schedule": [list(s) for s in self.schedule],
            "gamma_convention": self.gamma_convention,
            "name": self.experiment_name,
        }
        return d


@dataclass(frozen=True)
class HistogramRecord:
    """One replica of the histogram experiment.

    ``z`` centres the area fraction on ``Psi((u - eps X)/sigma_g)`` (needs the
    realized X); ``y`` centres it on the unconditional mean; ``r = y - z``.
    """

    level: float
    epsilon: float
    law: str
    replica: int
    x: float
    shift: float
    c2_over_T: float
    z: float
    y: float

    @property
    def r(self) -> float:
        return self.y - self.z


def _parallel_map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def replica_fields(plan, cfg_seed, key, n_replicas, fn, threads=1):
    """Apply ``fn(replica_index, field)`` to ``n_replicas`` Gaussian fields.

    Returns results ordered by replica index.
    """

    def unit(k):
        pair = simulate_pair(plan, (cfg_seed, k, key, FIELD_STREAM))
        out = []
        for part in (0, 1):
            i = 2 * k + part
            if i < n_replicas:
                out.append(fn(i, pair[part]))
        return out

    chunks = _parallel_map(unit, range((n_replicas + 1) // 2), threads)
    return [r for chunk in chunks for r in chunk]


def replica_x(cfg_seed, key, i, pspec):
    return sample_perturbation(pspec, make_rng(cfg_seed, i, key, X_STREAM))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


@dataclass
class ExperimentResult:
    name: str
    tables: dict  # file name -> (header, rows)
    summary: dict = field(default_factory=dict)

    def table(self, fname):
        header, rows = self.tables[fname]
        return [dict(zip(header, r)) for r in rows]

    def write(self, out_dir, config: ExperimentConfig | None = None, wall_time: float | None = None) -> dict:
        os.makedirs(out_dir, exist_ok=True)
        hashes = {}
        for fname, (header, rows) in self.tables.items():
            text = csv_text(header, rows)
            with open(os.path.join(out_dir, fname), "w", newline="") as fh:
                fh.write(text)
            hashes[fname] = hashlib.sha256(text.encode()).hexdigest()
        manifest = {
            "experiment": self.name,
            "package_version": __version__,
            "config": config.to_dict() if config else None,
            "outputs": hashes,
            "content_hash": hashlib.sha256("".join(hashes[k] for k in sorted(hashes)).encode()).hexdigest(),
            "summary": _jsonable(self.summary),
            "wall_time_s": wall_time,
        }
        with open(os.path.join(out_dir, f"{self.name}_manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def run_curvature_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Mean and spread of the bias-corrected curvature densities per level,
    with the perturbed and Gaussian theory curves alongside."""
    key = experiment_key(cfg.experiment_name)
    plan = plan_embedding(cfg.model, cfg.grid, cfg.clip_tol)
    pspec = cfg.perturbations[0]

    def one(i, g):
        f = perturb(g, pspec, replica_x(cfg.seed, key, i, pspec))
        hat, over = [], []
        for u in cfg.levels:
            est = measure(f, u, cfg.perimeter)
            hat.append(est.c_hat)
            over.append(est.c_over_T)
        return np.array(hat), np.array(over)

    res = replica_fields(plan, cfg.seed, key, cfg.replicas, one, cfg.threads)
    hat = np.stack([r[0] for r in res])  # (M, L, 3)
    over = np.stack([r[1] for r in res])
    M = hat.shape[0]
    header = ["level", "n_replicas"]
    for stat in ("mean", "se", "min", "max", "q025", "q975"):
        header += [f"{stat}_c{i}_hat" for i in range(3)]
    header += [f"mean_c{i}_over_T" for i in range(3)]
    header += [f"theory_c{i}_f" for i in range(3)] + [f"theory_c{i}_g" for i in range(3)]
    rows = []
    for j, u in enumerate(cfg.levels):
        h = hat[:, j, :]
        se = h.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.full(3, np.nan)
        row = [u, M]
        row += list(h.mean(axis=0)) + list(se) + list(h.min(axis=0)) + list(h.max(axis=0))
        row += list(np.quantile(h, 0.025, axis=0)) + list(np.quantile(h, 0.975, axis=0))
        row += list(over[:, j, :].mean(axis=0))
        row += list(perturbed_lk_densities(cfg.model, u, pspec).as_tuple())
        row += list(gaussian_lk_densities(cfg.model, u).as_tuple())
        rows.append(row)
    name = cfg.experiment_name
    return ExperimentResult(name, {f"{name}.csv": (header, rows)}, {"n_replicas": M})


def _label(pspec):
    return f"{pspec.law}_eps{pspec.epsilon:g}"


def run_histogram_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Replicas of Z = |T|^{1/2} (C2 over T(f,u) - Psi((u - eps X)/sigma_g))
    against the limit law, per (level, perturbation)."""
    key = experiment_key(cfg.experiment_name)
    plan = plan_embedding(cfg.model, cfg.grid, cfg.clip_tol)
    sq_area = math.sqrt(cfg.grid.area)
    s = cfg.model.sigma_g
    combos = [(u, p) for u in cfg.levels for p in cfg.perturbations]
    means = {(u, p): exact_area_mean(cfg.model, u, p) for u, p in combos}

    def one(i, g):
        recs = []
        xs = {}
        for u, p in combos:
            k = (p.law, p.mu, p.nu)
            if k not in xs:
                xs[k] = replica_x(cfg.seed, key, i, p)
            x = xs[k]
            f = perturb(g, p, x)
            c2 = area_fraction(f.values, u)
            z = sq_area * (c2 - gaussian_tail((u - f.shift) / s))
            y = sq_area * (c2 - means[u, p])
            recs.append(HistogramRecord(u, p.epsilon, p.law, i, x, f.shift, c2, z, y))
        return recs

    res = replica_fields(plan, cfg.seed, key, cfg.replicas, one, cfg.threads)
    records = [r for rs in res for r in rs]
    rec_header = ["level", "epsilon", "law", "replica", "x", "shift", "c2_over_T", "z", "y"]
    rec_rows = [[getattr(r, k) for k in rec_header] for r in records]

    dens_header = ["level", "epsilon", "law", "y", "h_tilde", "h_exact", "f_bep0", "f_bep2", "f_bep4"]
    dens_rows, sum_rows = [], []
    sum_header = [
        "level", "epsilon", "law", "scale", "v", "gamma1", "gamma2", "n_replicas",
        "z_mean", "z_var", "theta_var", "ks_theta", "ks_exact", "h_tilde_min",
    ]
    for ci, (u, p) in enumerate(combos):
        zs = np.array([r.z for r in records if r.level == u and r.epsilon == p.epsilon and r.law == p.law])
        prm = limit_law_params(cfg.model, u, p, cfg.gamma_convention)
        theta = sample_limit_law(cfg.model, u, p, (cfg.seed, ci, key, THETA_STREAM), cfg.theta_samples)
        ks_theta = stats.ks_2samp(zs, theta).statistic
        ks_exact = stats.kstest(zs, lambda t: exact_mixture_cdf(cfg.model, u, p, t)).statistic
        ygrid = np.linspace(-5, 5, cfg.density_points) * math.sqrt(prm.v)
        ht = truncated_limit_density(cfg.model, u, p, ygrid, params=prm)
        he = exact_mixture_density(cfg.model, u, p, ygrid)
        b = [bep_density(prm.v, d, ygrid) for d in (0, 2, 4)]
        for k in range(len(ygrid)):
            dens_rows.append([u, p.epsilon, p.law, ygrid[k], ht[k], he[k], b[0][k], b[1][k], b[2][k]])
        fine = np.linspace(-8, 8, 4001) * math.sqrt(prm.v)
        sum_rows.append([
            u, p.epsilon, p.law, p.scale, prm.v, prm.gamma1, prm.gamma2, len(zs),
            zs.mean(), zs.var(ddof=1) if len(zs) > 1 else float("nan"), float(np.var(theta)),
            ks_theta, ks_exact,
            float(np.min(truncated_limit_density(cfg.model, u, p, fine, params=prm))),
        ])
    name = cfg.experiment_name
    tables = {
        f"{name}_records.csv": (rec_header, rec_rows),
        f"{name}_density.csv": (dens_header, dens_rows),
        f"{name}_summary.csv": (sum_header, sum_rows),
    }
    return ExperimentResult(name, tables, {"n_replicas": cfg.replicas})


INFERENCE_HEADER = ["epsilon_true", "u", "eps_hat_mean", "ci_low", "ci_high", "n_replicas",
                    "epsilon", "law", "eps_target_exact", "eps_hat_sd", "covered"]


def run_inference_experiment(cfg: ExperimentConfig, confidence: float = 0.95) -> ExperimentResult:
    """Mean of the scale estimator over replicas against the theoretical
    confidence interval around eps^2 E[X^2]."""
    key = experiment_key(cfg.experiment_name)
    plan = plan_embedding(cfg.model, cfg.grid, cfg.clip_tol)
    area = cfg.grid.area
    combos = [(u, p) for u in cfg.levels for p in cfg.perturbations]

    def one(i, g):
        out = []
        xs = {}
        for u, p in combos:
            k = (p.law, p.mu, p.nu)
            if k not in xs:
                xs[k] = replica_x(cfg.seed, key, i, p)
            f = perturb(g, p, xs[k])
            out.append(estimate_epsilon(area_fraction(f.values, u), u))
        return out

    res = np.array(replica_fields(plan, cfg.seed, key, cfg.replicas, one, cfg.threads))  # (M, combos)
    M = res.shape[0]
    rows, rep_rows = [], []
    for c, (u, p) in enumerate(combos):
        sigma2 = epsilon_asymptotic_variance(cfg.model, u)
        lo, hi = confidence_interval(p.scale, sigma2, area, confidence)
        mean = float(res[:, c].mean())
        sd = float(res[:, c].std(ddof=1)) if M > 1 else float("nan")
        rows.append([p.scale, u, mean, lo, hi, M, p.epsilon, p.law,
                     epsilon_target_exact(cfg.model, u, p), sd, bool(lo <= mean <= hi)])
        for i in range(M):
            rep_rows.append([u, p.epsilon, p.law, i, res[i, c]])
    name = cfg.experiment_name
    tables = {
        f"{name}.csv": (INFERENCE_HEADER, rows),
        f"{name}_replicas.csv": (["u", "epsilon", "law", "replica", "eps_hat"], rep_rows),
    }
    return ExperimentResult(name, tables, {"n_replicas": M, "confidence": confidence})


def run_clt_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Y = |T|^{1/2}(C2 over T(f,u) - E C2) along a schedule (n, eps) of
    square n x n domains, against N(0, v(u))."""
    key = experiment_key(cfg.experiment_name)
    base = cfg.perturbations[0]
    header = ["n", "epsilon", "level", "n_replicas", "mean_y", "var_y", "v_u", "ks_distance"]
    rows, rep_rows = [], []
    for si, (n, eps) in enumerate(cfg.schedule):
        grid = GridSpec(n, n, cfg.grid.delta)
        plan = plan_embedding(cfg.model, grid, cfg.clip_tol)
        p = replace(base, epsilon=eps) if eps > 0 else PerturbationSpec(0.0, base.law, base.mu, base.nu)
        sq_area = math.sqrt(grid.area)
        means = {u: exact_area_mean(cfg.model, u, p) for u in cfg.levels}
        skey = experiment_key(f"{cfg.experiment_name}/n{n}/eps{eps!r}")

        def one(i, g, p=p, skey=skey, means=means, sq_area=sq_area):
            f = perturb(g, p, replica_x(cfg.seed, skey, i, p))
            return [sq_area * (area_fraction(f.values, u) - means[u]) for u in cfg.levels]

        ys = np.array(replica_fields(plan, cfg.seed, skey, cfg.replicas, one, cfg.threads))
        for j, u in enumerate(cfg.levels):
            v = variance_v(cfg.model, u)
            y = ys[:, j]
            ks = stats.kstest(y, stats.norm(scale=math.sqrt(v)).cdf).statistic
            rows.append([n, eps, u, len(y), y.mean(), y.var(ddof=1) if len(y) > 1 else float("nan"), v, ks])
            rep_rows += [[n, eps, u, i, y[i]] for i in range(len(y))]
    name = cfg.experiment_name
    tables = {
        f"{name}.csv": (header, rows),
        f"{name}_replicas.csv": (["n", "epsilon", "level", "replica", "y"], rep_rows),
    }
    return ExperimentResult(name, tables, {"n_replicas": cfg.replicas})


RUNNERS = {
    "curvature_sweep": run_curvature_sweep,
    "histogram": run_histogram_experiment,
    "inference": run_inference_experiment,
    "clt": run_clt_experiment,
}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    t0 = time.perf_counter()
    result = RUNNERS[cfg.kind](cfg)
    if write:
        result.write(cfg.out, cfg, time.perf_counter() - t0)
    return result
