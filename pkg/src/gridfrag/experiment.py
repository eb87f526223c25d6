"""Scenario grid configuration and the generate/fit/select/evaluate/upgrade/report pipeline."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingPrerequisiteError, ValidationError
from .evaluation import (
    kl_divergence,
    predictive_failure_distribution,
    signed_pointwise_divergence,
    write_divergence_rows,
)
from .fragility import FragilityParams
from .inference import (
    EmpiricalPrior,
    LogLikelihoodContext,
    bootstrap_prior,
    fit_mle,
    posterior_summary,
    read_chain,
    run_metropolis_hastings,
    write_chain,
)
from .policy import NormalThresholds, RiskTarget, compare_policies, write_plan_table
from .population import (
    PopulationSpec,
    draw_population,
    load_failure_csv,
    simulate_failures,
    write_failure_csv,
)
from .selection import bic_score, fit_candidate, marginal_likelihood_mc, select_model, write_score_table
from .stress import StressDistribution, fit_stress_distribution, load_stress_csv, synthesize_stress, write_stress_csv

log = logging.getLogger(__name__)

WIND = "wind_speed"
PRECIP = "precipitation"
SEED_STAGES = ("stress", "population", "failures", "bootstrap", "mcmc", "selection", "evaluation", "policy")

DEFAULT_CONFIG = {
    "output_dir": "runs/default",
    "alpha_means": [65.0, 70.0, 75.0],
    "covs": [0.0, 0.1, 0.2, 0.3],
    "n_components": 10_000,
    "beta": 0.2,
    "stress": {
        "source": "synthetic",
        "n_hours": 87_600,
        "start_hour": 0,
        "features": {
            WIND: {"mu_ln": 2.0, "sigma_ln": 0.4, "resolution": 0.1},
            PRECIP: {"mu_ln": -1.0, "sigma_ln": 1.0, "resolution": 0.1},
        },
    },
    "sampler": {"n_steps": 50_000, "burn_in": 10_000, "target_accept": 0.25, "n_boot": 50, "block_hours": 168},
    "selection": {"candidates": [[WIND], [WIND, PRECIP]], "marginal_draws": 0, "n_boot": 20},
    "evaluation": {"n_mc": 20_000, "n_theta": 2000, "empirical_stress": False},
    "risk": {"delta_fraction": 0.1, "epsilon": 0.05, "horizon": 8760, "n_mc": 200, "solver_tol": 0.01},
    "seed": 0,
    "workers": 1,
}


def derive_seeds(base: int) -> dict:
    """Deterministic per-stage seeds from one base seed."""
    return {
        stage: int(np.random.SeedSequence([int(base), i]).generate_state(1)[0])
        for i, stage in enumerate(SEED_STAGES)
    }


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "features":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict | None = None, seed: int | None = None) -> dict:
    """Fill defaults, apply a seed override and validate. The result is fully explicit."""
    cfg = _merge(DEFAULT_CONFIG, raw or {})
    if seed is not None:
        cfg["seed"] = int(seed)
        cfg.pop("seeds", None)
    seeds = derive_seeds(cfg["seed"])
    seeds.update(cfg.get("seeds") or {})
    cfg["seeds"] = seeds
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise ValidationError(f"config: {msg}")

    need(cfg["alpha_means"] and all(a > 0 for a in cfg["alpha_means"]), "alpha_means must be positive")
    need(cfg["covs"] and all(c >= 0 for c in cfg["covs"]), "covs must be non-negative")
    need(int(cfg["n_components"]) >= 1, "n_components must be >= 1")
    need(cfg["beta"] > 0, "beta must be positive")
    s = cfg["sampler"]
    need(0 <= s["burn_in"] < s["n_steps"], "need 0 <= burn_in < n_steps")
    need(0 < s["target_accept"] < 1, "target_accept must lie in (0, 1)")
    need(s["n_boot"] >= 10, "n_boot must be >= 10")
    r = cfg["risk"]
    need(0 < r["epsilon"] <= 1 and r["delta_fraction"] >= 0, "bad risk target")
    need(cfg["stress"]["source"] in ("synthetic", "csv"), "stress.source must be 'synthetic' or 'csv'")
    if cfg["stress"]["source"] == "csv":
        need("path" in cfg["stress"], "stress.path required for csv source")
    need(set(SEED_STAGES) <= set(cfg["seeds"]), "every stage needs a seed")
    need(all(isinstance(v, int) for v in cfg["seeds"].values()), "seeds must be integers")


def load_config(path, seed: int | None = None) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingPrerequisiteError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path}: {exc}") from None
    return resolve_config(raw, seed)


@dataclass(frozen=True)
class Scenario:
    alpha_mean: float
    cov: float

    @property
    def id(self) -> str:
        return f"a{self.alpha_mean:g}_cov{self.cov:g}"


def scenarios(cfg: dict) -> list[Scenario]:
    return [Scenario(float(a), float(c)) for a in cfg["alpha_means"] for c in cfg["covs"]]


def find_scenario(cfg: dict, scenario_id: str) -> Scenario:
    for sc in scenarios(cfg):
        if sc.id == scenario_id:
            return sc
    raise ValidationError(f"unknown scenario {scenario_id!r}; have {[s.id for s in scenarios(cfg)]}")


def population_spec(cfg: dict, sc: Scenario) -> PopulationSpec:
    return PopulationSpec(int(cfg["n_components"]), (WIND,), (sc.alpha_mean,), (sc.cov,), (float(cfg["beta"]),))


def build_stress(cfg: dict):
    """Stress series shared by every scenario (one site's weather record)."""
    s = cfg["stress"]
    if s["source"] == "csv":
        path = Path(s["path"])
        if not path.exists():
            raise MissingPrerequisiteError(f"stress file {path} not found")
        return load_stress_csv(path, s.get("schema"))
    feats = s["features"]
    dists = [StressDistribution(name, float(f["mu_ln"]), float(f["sigma_ln"])) for name, f in feats.items()]
    res = [f.get("resolution") for f in feats.values()]
    return synthesize_stress(dists, int(s["n_hours"]), cfg["seeds"]["stress"], int(s.get("start_hour", 0)), res)


# ---------------------------------------------------------------- stages


def generate_data(cfg: dict, sc: Scenario, stress=None):
    stress = build_stress(cfg) if stress is None else stress
    spec = population_spec(cfg, sc)
    pop = draw_population(spec, cfg["seeds"]["population"])
    record = simulate_failures(pop, stress, cfg["seeds"]["failures"])
    return stress, spec, record


@dataclass
class FitResult:
    mle: object
    prior: EmpiricalPrior
    chain: object
    summary: dict


def fit_data(cfg: dict, stress, record, features: Sequence[str] = (WIND,)) -> FitResult:
    ctx = LogLikelihoodContext(stress, record, int(cfg["n_components"]), features)
    s = cfg["sampler"]
    mle = fit_mle(ctx)
    prior = bootstrap_prior(ctx, s["n_boot"], s["block_hours"], cfg["seeds"]["bootstrap"], init=mle.params)
    chain = run_metropolis_hastings(
        ctx, prior, s["n_steps"], s["burn_in"], s["target_accept"], cfg["seeds"]["mcmc"], init=mle.params
    )
    return FitResult(mle, prior, chain, posterior_summary(chain))


def select_data(cfg: dict, stress, record):
    cands = []
    n = int(cfg["n_components"])
    sel = cfg["selection"]
    for feats in sel["candidates"]:
        cand = fit_candidate(stress, record, n, feats)
        if sel.get("marginal_draws"):
            prior = bootstrap_prior(cand.context, sel["n_boot"], cfg["sampler"]["block_hours"],
                                    cfg["seeds"]["selection"], init=cand.mle)
            ml = marginal_likelihood_mc(cand, prior, int(sel["marginal_draws"]), cfg["seeds"]["selection"])
            cand.log_marginal = ml.log_value
        cands.append(cand)
    return select_model(cands)


def stress_model(cfg: dict, stress):
    if cfg["evaluation"].get("empirical_stress"):
        return stress
    return fit_stress_distribution(stress, WIND)


def evaluate_fit(cfg: dict, sc: Scenario, spec: PopulationSpec, mle: FragilityParams, chain, stress) -> list[dict]:
    ev = cfg["evaluation"]
    seed = cfg["seeds"]["evaluation"]
    n = int(cfg["n_components"])
    source = stress_model(cfg, stress)
    p_true = predictive_failure_distribution(spec, source, n, ev["n_mc"], seed, "true")
    rows = []
    for name, fitted in (("bhm", chain), ("mle", mle)):
        q = predictive_failure_distribution(fitted, source, n, ev["n_mc"], seed, name)
        rows.append(_div_row(sc, f"kl_{name}", "system", kl_divergence(p_true, q)))
    for name, fitted in (("bhm", chain), ("mle", mle)):
        val = signed_pointwise_divergence(spec, fitted, source, ev["n_mc"], seed, ev["n_theta"])
        rows.append(_div_row(sc, f"signed_{name}", "component", val))
    return rows


def _div_row(sc, metric, level, value):
    return {"scenario": sc.id, "cov": sc.cov, "alpha_mean": sc.alpha_mean, "metric": metric, "level": level, "value": value}


def upgrade_fit(cfg: dict, spec: PopulationSpec, mle: FragilityParams, chain, stress) -> list[dict]:
    r = cfg["risk"]
    n = int(cfg["n_components"])
    target = RiskTarget.from_fraction(r["delta_fraction"], n, r["epsilon"], int(r["horizon"]))
    return compare_policies(spec, chain, mle, fit_stress_distribution(stress, WIND), target,
                            r["solver_tol"], int(r["n_mc"]), cfg["seeds"]["policy"], WIND)


# ---------------------------------------------------------------- files and manifest


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Manifest:
    """``manifest.json`` recording seeds and a SHA-256 for every artifact."""

    def __init__(self, outdir: Path):
        self.outdir = Path(outdir)
        self.path = self.outdir / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {"files": {}}

    def record(self, paths: Sequence[Path]) -> None:
        for p in paths:
            self.data["files"][Path(p).relative_to(self.outdir).as_posix()] = sha256(p)

    def set_meta(self, **kw) -> None:
        self.data.update(kw)

    def save(self) -> None:
        self.outdir.mkdir(parents=True, exist_ok=True)
        dump_json(self.data, self.path)

    def has(self, rel: str) -> bool:
        return rel in self.data["files"] and (self.outdir / rel).exists()

    def verify(self, rel: str) -> Path:
        """Return the path of ``rel`` after checking it exists and matches its recorded hash."""
        path = self.outdir / rel
        if not path.exists():
            raise MissingPrerequisiteError(f"missing {path}")
        want = self.data["files"].get(rel)
        if want is None:
            raise MissingPrerequisiteError(f"{rel} is not recorded in {self.path}")
        if sha256(path) != want:
            raise ValidationError(f"{path} does not match its manifest hash (corrupted or edited)")
        return path


# per-scenario artifact names written by each stage
STAGE_FILES = {
    "generate": ("stress.csv", "failures.csv", "population.json"),
    "fit": ("mle.json", "prior.json", "chain.csv", "chain.json", "summary.json"),
    "select": ("selection.csv",),
    "evaluate": ("divergence.csv", "divergence.json"),
    "upgrade": ("upgrade.json", "upgrade.csv"),
}


def stage_done(manifest: Manifest, sc: Scenario, stage: str) -> bool:
    return all(manifest.has(f"{sc.id}/{name}") for name in STAGE_FILES[stage])


def run_stage(cfg: dict, stage: str, sc: Scenario, manifest_data: dict) -> list[str]:
    """Execute one stage for one scenario; returns written paths relative to the output dir."""
    outdir = Path(cfg["output_dir"])
    manifest = Manifest(outdir)
    manifest.data = manifest_data
    sdir = outdir / sc.id
    sdir.mkdir(parents=True, exist_ok=True)
    written = [sdir / name for name in STAGE_FILES[stage]]

    if stage == "generate":
        stress, spec, record = generate_data(cfg, sc)
        write_stress_csv(stress, sdir / "stress.csv")
        write_failure_csv(record, sdir / "failures.csv")
        dump_json(spec.to_dict(), sdir / "population.json")
    else:
        stress = load_stress_csv(manifest.verify(f"{sc.id}/stress.csv"))
        record = load_failure_csv(manifest.verify(f"{sc.id}/failures.csv"))
        spec = PopulationSpec.from_dict(json.loads(manifest.verify(f"{sc.id}/population.json").read_text()))
        if stage == "fit":
            fit = fit_data(cfg, stress, record)
            dump_json({**fit.mle.params.to_dict(), "log_lik": fit.mle.log_lik, "converged": fit.mle.converged,
                       "n_iter": fit.mle.n_iter}, sdir / "mle.json")
            dump_json(fit.prior.to_dict(), sdir / "prior.json")
            write_chain(fit.chain, sdir / "chain.csv", {"scenario": sc.id})
            dump_json({"scenario": sc.id, "acceptance_rate": fit.chain.acceptance_rate(),
                       "parameters": fit.summary}, sdir / "summary.json")
        elif stage == "select":
            result = select_data(cfg, stress, record)
            write_score_table(result.table, sdir / "selection.csv")
        else:
            mle = FragilityParams.from_dict(json.loads(manifest.verify(f"{sc.id}/mle.json").read_text()))
            manifest.verify(f"{sc.id}/chain.json")
            chain = read_chain(manifest.verify(f"{sc.id}/chain.csv"))
            if stage == "evaluate":
                rows = evaluate_fit(cfg, sc, spec, mle, chain, stress)
                write_divergence_rows(rows, sdir / "divergence.csv")
                dump_json({"scenario": sc.id, "stress_model": "empirical" if cfg["evaluation"].get("empirical_stress")
                           else "lognormal",
                           "component_metric": "signed pointwise divergence of fragility curves "
                                               "(reconstruction; may be negative)"}, sdir / "divergence.json")
            elif stage == "upgrade":
                rows = upgrade_fit(cfg, spec, mle, chain, stress)
                write_plan_table(rows, sdir / "upgrade.csv")
                plans = [{"scenario": sc.id, "source": r["source"], "tau": r["tau"], "M": r["M"],
                          "M_over_N": r["M_over_N"], "achieved_prob": r["achieved_prob"],
                          "feasible": r["feasible"], "seed": cfg["seeds"]["policy"]} for r in rows]
                dump_json(plans, sdir / "upgrade.json")
            else:
                raise ValidationError(f"unknown stage {stage!r}")
    return [p.relative_to(outdir).as_posix() for p in written]


# ---------------------------------------------------------------- report

REPORT_FILES = ("parameters.csv", "beta_table.csv", "divergence.csv", "upgrades.csv", "violins.csv")


def _fmt(v):
    if v is None:
        return "missing"
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def build_report(cfg: dict) -> list[str]:
    """Write the consolidated tables; returns the ids of scenarios with missing inputs."""
    outdir = Path(cfg["output_dir"])
    rdir = outdir / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(outdir)
    params, betas, divs, ups, violins, missing = [], [], [], [], [], []
    for sc in scenarios(cfg):
        spec = population_spec(cfg, sc)
        base = [sc.id, sc.alpha_mean, sc.cov]
        try:
            summary = json.loads(manifest.verify(f"{sc.id}/summary.json").read_text())
            mle = json.loads(manifest.verify(f"{sc.id}/mle.json").read_text())
            chain = read_chain(manifest.verify(f"{sc.id}/chain.csv"))
            div = {}
            with manifest.verify(f"{sc.id}/divergence.csv").open() as fh:
                for r in csv.DictReader(fh):
                    div[r["metric"]] = float(r["value"])
            plans = {p["source"]: p for p in json.loads(manifest.verify(f"{sc.id}/upgrade.json").read_text())}
        except (MissingPrerequisiteError, ValidationError) as exc:
            log.warning("report: %s incomplete (%s)", sc.id, exc)
            missing.append(sc.id)
            params.append(base + [None] * 8)
            betas.append(base + [spec.beta[0], None, None])
            divs.append(base + [None] * 4)
            ups.append(base + [None] * 6)
            continue
        a = summary["parameters"][f"alpha_{WIND}"]
        b = summary["parameters"][f"beta_{WIND}"]
        params.append(base + [sc.alpha_mean, spec.alpha_sd(0), a["mean"], a["p5"], a["p50"], a["p95"],
                              mle["alpha"][0], summary["acceptance_rate"]])
        betas.append(base + [spec.beta[0], b["mean"], mle["beta"][0]])
        divs.append(base + [div["kl_bhm"], div["kl_mle"], div["signed_bhm"], div["signed_mle"]])
        ups.append(base + [plans[s][k] for s in ("true", "bhm", "mle") for k in ("tau", "M_over_N")])
        for v in NormalThresholds(sc.alpha_mean, spec.alpha_sd(0)).quantiles(200):
            violins.append(base + ["true", float(v)])
        post = chain.post_burn_in()[0][:, 0]
        for v in post[np.linspace(0, post.size - 1, 200).astype(int)]:
            violins.append(base + ["bhm", float(v)])
        violins.append(base + ["mle", float(mle["alpha"][0])])

    head = ["scenario", "alpha_mean", "cov"]
    _write_csv(rdir / "parameters.csv", head + ["true_alpha_mean", "true_alpha_sd", "bhm_alpha_mean", "bhm_alpha_p5",
                                                "bhm_alpha_p50", "bhm_alpha_p95", "mle_alpha", "acceptance_rate"], params)
    _write_csv(rdir / "beta_table.csv", head + ["true_beta", "bhm_beta", "mle_beta"], betas)
    _write_csv(rdir / "divergence.csv", head + ["kl_system_bhm", "kl_system_mle", "signed_component_bhm",
                                                "signed_component_mle"], divs)
    _write_csv(rdir / "upgrades.csv", head + ["tau_true", "frac_true", "tau_bhm", "frac_bhm", "tau_mle", "frac_mle"], ups)
    _write_csv(rdir / "violins.csv", head + ["source", "alpha"], violins)
    files = [rdir / f for f in REPORT_FILES]
    # rows are threshold means, columns follow the COV grid in config order
    wide = {f"{a:g}": [r[4] for r in betas if r[1] == a] for a in cfg["alpha_means"]}
    meta = {
        "scenarios": [s.id for s in scenarios(cfg)],
        "missing": missing,
        "bhm_beta_by_alpha_mean": {"covs": list(cfg["covs"]), "rows": wide},
        "seeds": cfg["seeds"],
        "config": cfg,
        "component_divergence_note": "signed pointwise divergence of fragility curves; a reconstruction",
        "files": {f.name: sha256(f) for f in files},
    }
    dump_json(meta, rdir / "run_metadata.json")
    manifest.record(files + [rdir / "run_metadata.json"])
    manifest.save()
    return missing
