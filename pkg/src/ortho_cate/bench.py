"""Monte Carlo simulation runs and train/test analysis of a CSV dataset.

Every replication owns an independently seeded generator, results are
sorted before writing, and so output files depend only on the configuration,
never on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselearners import fit_propensity, parse_learner_specs
from .core import dataset_from_csv, folds_to_csv, synthetic_to_csv
from .dgp import DgpParams, generate
from .errors import InvalidParams, OrthoCateError
from .metalearners import (
    DEFAULT_K,
    DEFAULT_OUTCOME_SPECS,
    DEFAULT_PROPENSITY_SPECS,
    DEFAULT_SECOND_STAGE_SPECS,
    OrthogonalFitConfig,
    crossfit_nuisances,
    fit_learner,
    parse_learner,
)
from .metrics import METRICS

MASK64 = (1 << 64) - 1
THREADS_ENV = "ORTHO_CATE_THREADS"
RESULT_COLUMNS = ("rep", "learner", "metric", "value", "status", "seed")


def splitmix64(x: int) -> int:
    """One output of the SplitMix64 generator started at state ``x``."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replication_seed(master_seed: int, rep: int) -> int:
    return (int(master_seed) ^ splitmix64(int(rep))) & MASK64


def _spec_tuple(value, default):
    if value is None:
        return tuple(default)
    if isinstance(value, str):
        return tuple(parse_learner_specs(value))
    return tuple(parse_learner_specs(",".join(value)))


@dataclass(frozen=True)
class SimConfig:
    """Configuration of :func:`run_simulation`.

    ``dgp`` holds :class:`~ortho_cate.dgp.DgpParams` fields other than ``n``
    and ``seed``, which are set per replication. The ``*_specs`` fields are
    learner-spec strings such as ``"logistic{l2=1},stumps{rounds=100}"``;
    ``None`` selects the default rosters.
    """

    setup: int = 1
    dgp: dict = field(default_factory=dict)
    learners: tuple = ("t", "ipw", "dr", "r")
    n_per_split: int = 500
    replications: int = 1000
    K: int = DEFAULT_K
    master_seed: int = 0
    metrics: tuple = ("mse",)
    output: str | None = None
    parallelism: int = 1
    propensity_specs: object = None
    outcome_specs: object = None
    second_stage_specs: object = None
    psdr_treated_only: bool = True

    def __post_init__(self):
        object.__setattr__(self, "learners", tuple(self.learners))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if not self.learners:
            raise InvalidParams("learners must be nonempty")
        for name in self.learners:
            parse_learner(name)
        if not self.metrics or any(m not in METRICS for m in self.metrics):
            raise InvalidParams(f"metrics must be a nonempty subset of {sorted(METRICS)}, got {self.metrics}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise InvalidParams(f"replications must be >= 1, got {self.replications}")
        if int(self.n_per_split) != self.n_per_split or self.n_per_split < 2:
            raise InvalidParams(f"n_per_split must be an integer >= 2, got {self.n_per_split}")
        if int(self.parallelism) != self.parallelism or self.parallelism < 1:
            raise InvalidParams(f"parallelism must be >= 1, got {self.parallelism}")
        if not 0 <= int(self.master_seed) <= MASK64:
            raise InvalidParams(f"master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        if {"n", "seed"} & set(self.dgp):
            raise InvalidParams("dgp must not set n or seed; use n_per_split and master_seed")
        DgpParams.from_dict(dict(self.dgp))
        self.fit_config(0)

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParams(f"unknown simulation config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["learners"] = list(self.learners)
        out["metrics"] = list(self.metrics)
        return out

    def with_(self, **changes) -> "SimConfig":
        raw = self.to_dict()
        raw.update(changes)
        return SimConfig.from_dict(raw)

    def effective_parallelism(self) -> int:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                val = int(env)
            except ValueError:
                raise InvalidParams(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
            if val < 1:
                raise InvalidParams(f"{THREADS_ENV} must be a positive integer, got {env!r}")
            return val
        return int(self.parallelism)

    def fit_config(self, seed: int) -> OrthogonalFitConfig:
        return OrthogonalFitConfig(
            K=self.K,
            propensity_specs=_spec_tuple(self.propensity_specs, DEFAULT_PROPENSITY_SPECS),
            outcome_specs=_spec_tuple(self.outcome_specs, DEFAULT_OUTCOME_SPECS),
            second_stage_specs=_spec_tuple(self.second_stage_specs, DEFAULT_SECOND_STAGE_SPECS),
            seed=seed,
        )

    def metrics_for(self, learner: str) -> tuple:
        if self.psdr_treated_only and learner.strip().lower() == "ps-dr":
            return ("mse_treated",)
        return self.metrics


def _format_value(value: float) -> str:
    return "nan" if not math.isfinite(value) else f"{value:.17g}"


def run_replication(config: SimConfig, rep: int, dump_dir=None) -> list[tuple]:
    """All result rows of replication ``rep``."""
    seed = replication_seed(config.master_seed, rep)
    n = config.n_per_split
    params = DgpParams.from_dict(dict(config.dgp)).with_(n=3 * n, seed=seed)
    sd = generate(config.setup, params)
    train = sd.subset(np.arange(2 * n))
    test = sd.subset(np.arange(2 * n, 3 * n))
    fit_cfg = config.fit_config(seed)

    nuisances, shared_error = None, None
    if any(parse_learner(name) != "t" for name in config.learners):
        try:
            nuisances = crossfit_nuisances(train.data, fit_cfg)
        except OrthoCateError as exc:
            shared_error = exc
    if dump_dir is not None:
        dump = Path(dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        synthetic_to_csv(train, dump / f"rep{rep}_train.csv")
        synthetic_to_csv(test, dump / f"rep{rep}_test.csv")
        if nuisances is not None:
            folds_to_csv(nuisances.folds, dump / f"rep{rep}_folds.csv")

    rows = []
    for name in config.learners:
        metrics = config.metrics_for(name)
        tau_hat, error = None, None
        try:
            if shared_error is not None and parse_learner(name) != "t":
                raise shared_error
            model = fit_learner(name, train.data, fit_cfg, nuisances)
            tau_hat = model.predict(test.data.v)
        except OrthoCateError as exc:
            error = exc
        for metric in metrics:
            status, value = "ok", float("nan")
            if error is not None:
                status = "error"
            else:
                try:
                    value = METRICS[metric](tau_hat, test.tau, test.data.a, test.pi0)
                except OrthoCateError:
                    status = "error"
            rows.append((rep, name, metric, value, status, seed))
    return rows


def _run_chunk(args):
    config_dict, reps, dump_dir = args
    config = SimConfig.from_dict(config_dict)
    out = []
    for rep in reps:
        out.extend(run_replication(config, rep, dump_dir))
    return out


def run_simulation(config: SimConfig, *, workers: int | None = None, dump_dir=None) -> list[tuple]:
    """Run every replication and return result rows sorted by ``(rep, learner, metric)``.

    Writes the CSV to ``config.output`` when set. ``workers`` overrides the
    configured parallelism; results do not depend on it.
    """
    workers = config.effective_parallelism() if workers is None else int(workers)
    reps = list(range(config.replications))
    if workers <= 1 or len(reps) == 1:
        rows = _run_chunk((config.to_dict(), reps, dump_dir))
    else:
        chunks = [reps[i::workers] for i in range(workers) if reps[i::workers]]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = pool.map(_run_chunk, [(config.to_dict(), c, dump_dir) for c in chunks])
            rows = [row for part in parts for row in part]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    if config.output:
        write_results(rows, config.output)
    return rows


def write_results(rows, path) -> None:
    path = Path(path)
    if path.parent:
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for rep, learner, metric, value, status, seed in rows:
            w.writerow([rep, learner, metric, _format_value(value), status, seed])


def read_results(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [(int(r["rep"]), r["learner"], r["metric"], float(r["value"]), r["status"], int(r["seed"]))
                for r in reader]


def summarize(rows) -> dict:
    """Mean, standard deviation and counts of successful values per ``(learner, metric)``."""
    groups: dict = {}
    errors: dict = {}
    for _, learner, metric, value, status, _ in rows:
        key = (learner, metric)
        if status == "ok":
            groups.setdefault(key, []).append(value)
        else:
            errors[key] = errors.get(key, 0) + 1
    out = {}
    for key in sorted(set(groups) | set(errors)):
        vals = np.array(groups.get(key, []))
        out[key] = {
            "mean": float(vals.mean()) if vals.size else float("nan"),
            "sd": float(vals.std(ddof=1)) if vals.size > 1 else float("nan"),
            "n_ok": int(vals.size),
            "n_error": errors.get(key, 0),
        }
    return out


# ---------------------------------------------------------------------------
# Analysis of a user dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisOutput:
    predictions_path: Path
    summary_path: Path
    summary: dict


def train_test_split(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random 2:1 split; the test part has ``ceil(n/3)`` rows. Both index arrays are sorted."""
    if n < 3:
        raise InvalidParams(f"need at least 3 rows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = math.ceil(n / 3)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def analyze(data_csv, v_names, learners, K: int = DEFAULT_K, seed: int = 0, output_dir=".",
            config: OrthogonalFitConfig | None = None) -> AnalysisOutput:
    """Fit ``learners`` on a random two-thirds of ``data_csv`` and predict on the rest.

    Writes ``predictions.csv`` (``row_id, learner, tau_hat, pi_hat, a``; one
    row per test observation and learner, ``row_id`` being the 0-based data
    row) and ``summary.json`` (mean and standard deviation of ``tau_hat`` per
    learner, overall and among treated test rows). ``pi_hat`` comes from the
    selected propensity spec refitted on the whole training part.
    """
    learners = list(learners)
    if not learners:
        raise InvalidParams("learners must be nonempty")
    for name in learners:
        parse_learner(name)
    data = dataset_from_csv(data_csv, v_names)
    train_rows, test_rows = train_test_split(data.n, seed)
    train, test = data.subset(train_rows), data.subset(test_rows)
    cfg = (config or OrthogonalFitConfig()).with_(K=K, seed=seed)
    nuisances = None
    if any(parse_learner(name) != "t" for name in learners):
        nuisances = crossfit_nuisances(train, cfg)
        prop_spec = nuisances.propensity_spec
    else:
        prop_spec = cfg.propensity_specs[0]
    pi_model = fit_propensity(prop_spec, train.x, train.a, cfg.eps)
    pi_test = pi_model.predict(test.x)

    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_path = out_dir / "predictions.csv"
    summary = {"n_train": int(train.n), "n_test": int(test.n), "seed": int(seed), "K": int(K),
               "v_columns": [data.feature_names[c] for c in data.v_columns],
               "propensity_spec": str(prop_spec), "learners": {}}
    treated = test.a == 1
    with open(pred_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "learner", "tau_hat", "pi_hat", "a"])
        for name in learners:
            model = fit_learner(name, train, cfg, nuisances)
            tau_hat = model.predict(test.v)
            for rid, th, ph, av in zip(test_rows, tau_hat, pi_test, test.a):
                w.writerow([int(rid), name, f"{th:.17g}", f"{ph:.17g}", int(av)])
            entry = {
                "mean": float(tau_hat.mean()),
                "sd": float(tau_hat.std(ddof=1)) if tau_hat.size > 1 else 0.0,
                "second_stage_specs": [str(s) for s in model.second_stage_specs],
            }
            if treated.any():
                entry["mean_treated"] = float(tau_hat[treated].mean())
                entry["sd_treated"] = float(tau_hat[treated].std(ddof=1)) if treated.sum() > 1 else 0.0
            summary["learners"][name] = entry
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return AnalysisOutput(pred_path, summary_path, summary)


# ---------------------------------------------------------------------------
# Theory diagnostics on synthetic data
# ---------------------------------------------------------------------------

DIAGNOSE_DEFAULTS = {
    "setup": 2,
    "dgp": {},
    "n": 2000,
    "seed": 0,
    "kinds": ["dr", "ps-dr", "r"],
    "K": DEFAULT_K,
    "t": 0.5,
    "probe_t": 1e-3,
    "probe_n": 100000,
    "n_directions": 5,
    "propensity_specs": None,
    "outcome_specs": None,
    "second_stage_specs": None,
}


def run_diagnosis(raw: dict) -> dict:
    """Fit each weight kind on one synthetic draw and report bound terms and orthogonality probes.

    The probes use a separate draw of ``probe_n`` rows, oracle nuisances and
    the conditional-mode risk; each is paired with the same probe under the
    IPW risk for scale.
    """
    from .diagnostics import bound_report, orthogonality_probe, random_directions
    from .weights import parse_weight_kind

    unknown = set(raw) - set(DIAGNOSE_DEFAULTS)
    if unknown:
        raise InvalidParams(f"unknown diagnose config keys: {sorted(unknown)}")
    cfg = {**DIAGNOSE_DEFAULTS, **raw}
    base = DgpParams.from_dict(dict(cfg["dgp"]))
    sd = generate(cfg["setup"], base.with_(n=int(cfg["n"]), seed=int(cfg["seed"])))
    probe_sd = generate(cfg["setup"], base.with_(n=int(cfg["probe_n"]), seed=replication_seed(cfg["seed"], 1)))
    fit_cfg = OrthogonalFitConfig(
        K=int(cfg["K"]), seed=int(cfg["seed"]),
        propensity_specs=_spec_tuple(cfg["propensity_specs"], DEFAULT_PROPENSITY_SPECS),
        outcome_specs=_spec_tuple(cfg["outcome_specs"], DEFAULT_OUTCOME_SPECS),
        second_stage_specs=_spec_tuple(cfg["second_stage_specs"], DEFAULT_SECOND_STAGE_SPECS),
    )
    nuisances = crossfit_nuisances(sd.data, fit_cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    directions = [random_directions(probe_sd.data.x, rng) for _ in range(int(cfg["n_directions"]))]
    t_probe = float(cfg["probe_t"])
    ipw = [orthogonality_probe(probe_sd, None, probe_sd.tau, h, d, t_probe, risk="ipw")
           for h, d in directions]
    out = {"setup": cfg["setup"], "n": int(cfg["n"]), "seed": int(cfg["seed"]),
           "probe_t": t_probe, "probe_ipw": ipw, "kinds": {}}
    for name in cfg["kinds"]:
        kind = parse_weight_kind(name)
        model = fit_learner(name, sd.data, fit_cfg, nuisances)
        g_hat = model.predict(sd.data.v)
        report = bound_report(sd, nuisances.eta, g_hat, sd.tau, kind, t=float(cfg["t"]), seed=int(cfg["seed"]))
        probes = [orthogonality_probe(probe_sd, kind, probe_sd.tau, h, d, t_probe) for h, d in directions]
        out["kinds"][name] = {"bound": report.to_dict(), "probe": probes}
    return out
