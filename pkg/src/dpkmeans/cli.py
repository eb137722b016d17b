"""Command-line front end.

Subcommands: mixture, sensitivity, cluster, synth, audit. Settings come from
defaults, then an optional flat ``key = value`` config file (--config), then
command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from .core import (
    BudgetLedger,
    Dataset,
    IngestionError,
    PrivacyBudget,
    Rng,
    dump_json,
    fmt,
    load_dataset,
)
from .kmeans import KmeansConfig, clustering_loss, cluster, dp_accuracy_loss
from .mechanisms import (
    ColoredNoiseSpec,
    centroid_spec_for,
    dp_kmeans,
    label_delta_worst,
)
from .sensitivity import SensitivityReport, analyze
from .synth import SynthBudgets, allocate_counts, default_alpha, generate_all, write_samples_csv


@dataclass
class ExperimentConfig:
    input: str = ""
    out: str = "out"
    k: int = 6
    eps_c: float = 1.0
    delta_c: float = 0.1
    eps_l: float = 10.0
    delta_l: float = 0.0
    rho: float | None = None
    noise: str = "colored"
    alpha: float | None = None
    seed: int = 0
    max_iters: int = 300
    tol: float = 1e-9
    # synthesis
    n_samples: int = 100
    counts: str = ""
    eps_mean: float = 1.0
    delta_mean: float = 0.1
    eps_cov: float = 1.0
    wishart_const: float = 1.5
    # audit
    n_trials: int = 100_000
    sigma_scale: float = 1.0
    # mixture
    n: int = 1000
    d: int = 2
    spread: float = 5.0
    min_sep: float = 3.0

    def kmeans(self) -> KmeansConfig:
        return KmeansConfig(self.k, self.max_iters, self.tol, self.seed)

    def settings(self) -> dict:
        # the output directory does not affect results
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "out"}

    def canonical(self) -> str:
        return "\n".join(f"{k}={v!r}" for k, v in self.settings().items())

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _convert(name: str, raw: str):
    f = {f.name: f for f in fields(ExperimentConfig)}[name]
    default = f.default
    if raw.lower() in ("none", ""):
        return None
    if name in ("rho", "alpha"):
        return float(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config_file(path) -> dict:
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = ExperimentConfig(**values)
    if cfg.noise not in ("white", "colored"):
        raise ValueError("noise must be white or colored")
    return cfg


# --- output helpers ----------------------------------------------------------


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, ledger: BudgetLedger | None, files) -> None:
    dump_json(
        out / "manifest.json",
        {
            "command": command,
            "config_sha256": cfg.digest(),
            "config": cfg.settings(),
            "seed": cfg.seed,
            "input_sha256": _file_sha(Path(cfg.input)) if cfg.input else None,
            "budget_ledger": ledger.to_dict() if ledger else None,
            "files": {p.name: _file_sha(p) for p in sorted(files)},
        },
    )


def _load(cfg: ExperimentConfig) -> Dataset:
    if not cfg.input:
        raise ValueError("--input is required")
    return load_dataset(cfg.input)


def _budgets(cfg):
    return PrivacyBudget(cfg.eps_c, cfg.delta_c), PrivacyBudget(cfg.eps_l, cfg.delta_l)


def _check(cond: bool, what: str, failures: list):
    if not cond:
        failures.append(what)


# --- commands ----------------------------------------------------------------


def cmd_mixture(cfg: ExperimentConfig) -> int:
    from .datasets import gaussian_mixture

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.n > 0:
        X, comp, means = gaussian_mixture(cfg.n, cfg.k, cfg.d, cfg.spread, cfg.seed, min_sep=cfg.min_sep)
    else:
        X, comp, means = np.zeros((0, cfg.d)), np.zeros(0, dtype=int), np.zeros((0, cfg.d))
    data_path, truth_path = out / "mixture.csv", out / "mixture_truth.csv"
    with data_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"x{j}" for j in range(cfg.d)])
        for i, row in enumerate(X):
            w.writerow([f"p{i}"] + [fmt(v) for v in row])
    with truth_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "component"])
        for i, c in enumerate(comp):
            w.writerow([f"p{i}", int(c)])
    dump_json(out / "mixture_means.json", {"means": means})
    write_manifest(out, cfg, "mixture", None, [data_path, truth_path, out / "mixture_means.json"])
    print(f"wrote {cfg.n} points to {data_path}")
    return 0


def cmd_sensitivity(cfg: ExperimentConfig) -> int:
    data = _load(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    base = cluster(data, cfg.kmeans())
    report = analyze(data, base, cfg.kmeans())
    dump_json(out / "clustering.json", base)
    dump_json(out / "sensitivity.json", report)
    write_manifest(out, cfg, "sensitivity", None, [out / "clustering.json", out / "sensitivity.json"])
    print(f"delta_c={report.delta_c:.6g} delta_l={report.delta_l} |L|={len(report.sensitive_set)}")
    return 0


def _centroid_audit(report: SensitivityReport, spec, budget: PrivacyBudget, n_trials: int, rng) -> dict:
    if getattr(spec, "sigma", 1.0) == 0:
        return {"epsilon": budget.epsilon, "delta_claimed": budget.delta, "prob_exceed": 0.0,
                "stderr": 0.0, "n_trials": 0, "worst_neighbor_index": None, "certified": True}
    return audit_mod.certify_centroids(report.neighbor_diffs, spec, budget.epsilon, budget.delta, n_trials, rng)


def _label_audit(res, budget_l: PrivacyBudget, n_trials: int, rng) -> dict:
    """Audit neighbors differing in every count 1..delta_l of sensitive labels."""
    spec = res.label_spec
    if spec is None:
        return {"epsilon": budget_l.epsilon, "delta_claimed": 0.0, "prob_exceed": 0.0, "stderr": 0.0,
                "n_trials": 0, "worst_n_changed": None, "worst_neighbor_index": None, "certified": True}
    claimed = label_delta_worst(spec.rho, spec.k, spec.delta_l, budget_l.epsilon)
    ests = [audit_mod.label_leakage(spec, m, budget_l.epsilon, n_trials, rng.split(str(m)))
            for m in range(1, spec.delta_l + 1)]
    worst = int(np.argmax([e.prob_exceed for e in ests]))
    sizes = [len(c) for c in res.sensitivity.changed_labels]
    at_worst = [p for p, n in enumerate(sizes) if n == worst + 1]
    return {**ests[worst].to_dict(), "delta_claimed": claimed, "worst_n_changed": worst + 1,
            "worst_neighbor_index": at_worst[0] if at_worst else None,
            "rho": spec.rho, "certified": all(e.certifies(claimed) for e in ests)}


def cmd_cluster(cfg: ExperimentConfig) -> int:
    data = _load(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    budget_c, budget_l = _budgets(cfg)
    rng = Rng(cfg.seed)
    res = dp_kmeans(data, cfg.kmeans(), budget_c, budget_l, cfg.noise, cfg.rho, rng.split("mechanism"))

    failures: list[str] = []
    if isinstance(res.centroid_spec, ColoredNoiseSpec):
        _check(res.centroid_spec.slack(res.sensitivity.neighbor_diffs).min() >= -1e-9, "Gamma feasibility", failures)
    _check(res.private.labels.max() < res.private.k, "label range", failures)
    _check(res.ledger.total == res.budget, "budget ledger", failures)

    loss = clustering_loss(data, res.base)
    summary = {
        "clustering_loss": loss,
        "private_clustering_loss": clustering_loss(data, res.private),
        "dp_accuracy_loss": dp_accuracy_loss(data, res.base, res.private) if loss > 0 else None,
        "expected_label_error_pct": (res.label_spec.rho * len(res.sensitivity.sensitive_set) * 100 / data.n_points
                                     if res.label_spec else 0.0),
    }
    audit_rng = rng.split("audit")
    report = {
        "centroids": _centroid_audit(res.sensitivity, res.centroid_spec, budget_c, cfg.n_trials, audit_rng.split("c")),
        "labels": _label_audit(res, budget_l, cfg.n_trials, audit_rng.split("l")),
    }
    files = {
        "private_clustering.json": {**res.private.to_dict(), **summary},
        "sensitivity.json": res.sensitivity,
        "noise_spec.json": {"centroids": res.centroid_spec, "labels": res.label_spec},
        "audit.json": report,
        "budget.json": res.ledger,
    }
    for name, obj in files.items():
        dump_json(out / name, obj)
    write_manifest(out, cfg, "cluster", res.ledger, [out / n for n in files])
    for k, v in report.items():
        if not v["certified"]:
            print(f"warning: {k} release not certified at the claimed budget "
                  f"(exceedance {v['prob_exceed']:.4g} > delta {v['delta_claimed']:.4g})", file=sys.stderr)
    if failures:
        print("invariant checks failed: " + ", ".join(failures), file=sys.stderr)
        return 2
    b = res.budget
    print(f"released K={res.private.k} clustering at (eps, delta) = ({b.epsilon:.6g}, {b.delta:.6g})")
    return 0


def _parse_counts(cfg: ExperimentConfig, populations) -> list[int]:
    if cfg.counts:
        return [int(c) for c in cfg.counts.split(",")]
    return allocate_counts(cfg.n_samples, populations)


def cmd_synth(cfg: ExperimentConfig) -> int:
    data = _load(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.alpha is None and np.min(data.points) <= 0:
        raise ValueError(
            f"data has nonpositive values (min {np.min(data.points):g}); pass --alpha greater than "
            f"{-np.min(data.points):g}, e.g. --alpha {default_alpha(data.points):g}"
        )
    budget_c, budget_l = _budgets(cfg)
    rng = Rng(cfg.seed)
    res = dp_kmeans(data, cfg.kmeans(), budget_c, budget_l, cfg.noise, cfg.rho, rng.split("mechanism"))
    counts = _parse_counts(cfg, np.bincount(res.private.labels, minlength=res.private.k))
    budgets = SynthBudgets(
        PrivacyBudget(cfg.eps_mean, cfg.delta_mean),
        PrivacyBudget(cfg.eps_cov, 0.0),
        tuple(b for _, b in res.ledger.entries),
    )
    syn = generate_all(data, res.private, counts, cfg.alpha, budgets, rng.split("synth"), cfg.wishart_const)
    samples_path = out / "samples.csv"
    write_samples_csv(samples_path, syn, data.dim)
    alpha = cfg.alpha if cfg.alpha is not None else default_alpha(data.points)
    dump_json(out / "synth_meta.json", {
        "alpha": alpha,
        "counts": counts,
        "models": syn.models,
        "wishart": {"df": data.dim + 1, "const": cfg.wishart_const},
        "budget": syn.ledger,
    })
    dump_json(out / "budget.json", syn.ledger)
    write_manifest(out, cfg, "synth", syn.ledger, [samples_path, out / "synth_meta.json", out / "budget.json"])
    b = syn.budget
    print(f"wrote {syn.samples.shape[0]} profiles to {samples_path}; total (eps, delta) = ({b.epsilon:.6g}, {b.delta:.6g})")
    return 0


def cmd_audit(cfg: ExperimentConfig) -> int:
    """Certify the centroid and label releases, then run both attack demos.

    ``sigma_scale`` < 1 shrinks white noise below its calibrated level, which
    the certification is expected to flag.
    """
    data = _load(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    budget_c, budget_l = _budgets(cfg)
    rng = Rng(cfg.seed)
    base = cluster(data, cfg.kmeans())
    report = analyze(data, base, cfg.kmeans())
    spec = centroid_spec_for(report, budget_c, cfg.noise)
    if cfg.sigma_scale != 1.0:
        if cfg.noise != "white":
            raise ValueError("sigma_scale applies to white noise only")
        spec = dataclasses.replace(spec, sigma=spec.sigma * cfg.sigma_scale)
    res = dp_kmeans(data, cfg.kmeans(), budget_c, budget_l, cfg.noise, cfg.rho, rng.split("mechanism"),
                    base=base, report=report)
    result = {
        "centroids": {**_centroid_audit(report, spec, budget_c, cfg.n_trials, rng.split("audit-c")),
                      "noise": cfg.noise, "sigma_scale": cfg.sigma_scale},
        "labels": _label_audit(res, budget_l, cfg.n_trials, rng.split("audit-l")),
        "differencing_attack": audit_mod.differencing_demo(data.points, 0),
        "filtering_attack": audit_mod.filtering_demo(rng=rng.split("filter").generator),
    }
    result["all_certified"] = bool(result["centroids"]["certified"] and result["labels"]["certified"])
    dump_json(out / "audit.json", result)
    write_manifest(out, cfg, "audit", None, [out / "audit.json"])
    dem = result["differencing_attack"]
    print(f"differencing attack: dropped {dem['dropped_record']} recovered {dem['recovered']} "
          f"(15/15 compliant: {dem['complies_15_15']})")
    fil = result["filtering_attack"]
    print(f"filtering attack: RMSE {fil['rmse_noisy']:.4g} -> {fil['rmse_filtered']:.4g}")
    for k in ("centroids", "labels"):
        v = result[k]
        status = "PASS" if v["certified"] else "FAIL"
        print(f"{status} {k}: Pr(L > {v['epsilon']:g}) = {v['prob_exceed']:.4g} "
              f"(+/- {v['stderr']:.2g}), claimed delta {v['delta_claimed']:.4g}")
    return 0 if result["all_certified"] else 3


COMMANDS = {
    "mixture": cmd_mixture,
    "sensitivity": cmd_sensitivity,
    "cluster": cmd_cluster,
    "synth": cmd_synth,
    "audit": cmd_audit,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpkmeans", description="Differentially private K-means for meter data")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value config file")
        s.add_argument("--input")
        s.add_argument("--out")
        s.add_argument("--k", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--eps-c", dest="eps_c", type=float)
        s.add_argument("--delta-c", dest="delta_c", type=float)
        s.add_argument("--eps-l", dest="eps_l", type=float)
        s.add_argument("--delta-l", dest="delta_l", type=float, help="target delta for the labels (default 0)")
        s.add_argument("--rho", type=float)
        s.add_argument("--noise", choices=["white", "colored"])
        s.add_argument("--alpha", type=float)
        s.add_argument("--max-iters", dest="max_iters", type=int)
        s.add_argument("--tol", type=float)
        if name == "synth":
            s.add_argument("--n-samples", dest="n_samples", type=int)
            s.add_argument("--counts", help="comma-separated per-cluster sample counts")
            s.add_argument("--eps-mean", dest="eps_mean", type=float)
            s.add_argument("--delta-mean", dest="delta_mean", type=float)
            s.add_argument("--eps-cov", dest="eps_cov", type=float)
            s.add_argument("--wishart-const", dest="wishart_const", type=float)
        if name in ("audit", "cluster"):
            s.add_argument("--n-trials", dest="n_trials", type=int)
        if name == "audit":
            s.add_argument("--sigma-scale", dest="sigma_scale", type=float)
        if name == "mixture":
            s.add_argument("--n", type=int)
            s.add_argument("--d", type=int)
            s.add_argument("--spread", type=float)
            s.add_argument("--min-sep", dest="min_sep", type=float)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (IngestionError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
