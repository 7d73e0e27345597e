"""Variant runs over seeds, on-disk artifacts and cross-variant comparison."""

from __future__ import annotations

import csv
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from dtmssl import dtm
from dtmssl.dataflow import DEFAULT_CLASS_COUNTS, AugmentConfig, ImbalanceSpec, generate_synthetic
from dtmssl.errors import ConfigError, ValidationError
from dtmssl.postprocess import DEFAULT_WINDOW, write_sequence_csv
from dtmssl.ssl_core import EpochReport, Pools, RunResult, TrainConfig, train_run

VARIANTS = ("baseline", "ssl_fixed_threshold", "ssl_dtm", "ssl_dtm_post")

EPOCH_COLUMNS = ["epoch", "loss_total", "loss_labeled", "loss_unlabeled", "accepted_fraction",
                 "pseudo_label_accuracy", "heldout_macro_f1"]


@dataclass
class ExperimentConfig:
    """Flat experiment description; every key has a desk-scale default."""

    # training
    lambda1: float = 1.0
    lambda2: float = 0.8
    labeled_batch: int = 32
    unlabeled_batch: int = 32
    steps_per_epoch: int = 200
    epochs: int = 15
    mu: float = 0.9
    ema_decay: float = 0.999
    lr: float = 5e-4
    hidden: int = 32
    labeled_per_class: int = 50
    unlabeled_loss_target: str = "strong_view"
    # data
    class_counts: list[int] = field(default_factory=lambda: list(DEFAULT_CLASS_COUNTS))
    d: int = 16
    class_sep: float = 2.5
    noise_sigma: float = 1.0
    n_unlabeled: int = 5000
    unlabeled_distribution: str = "balanced"  # or "labeled": same skew as class_counts
    heldout_runs_per_class: int = 20
    weak_noise_sigma: float = 0.3
    strong_noise_sigma: float = 0.8
    strong_dropout_prob: float = 0.2
    # experiment
    variant: str = "all"
    fixed_threshold: float = 0.95
    window: int = DEFAULT_WINDOW
    out_dir: str = "runs"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    jobs: int = 1

    def __post_init__(self):
        if self.variant != "all" and self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS + ('all',)}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.unlabeled_distribution not in ("balanced", "labeled"):
            raise ConfigError("unlabeled_distribution must be 'balanced' or 'labeled'")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        # surface config errors before any run starts
        self.imbalance()
        self.augment()
        self.train_config(self.variants()[0], self.seeds[0])

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def variants(self) -> list[str]:
        return list(VARIANTS) if self.variant == "all" else [self.variant]

    def imbalance(self) -> ImbalanceSpec:
        return ImbalanceSpec(tuple(self.class_counts))

    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.weak_noise_sigma, self.strong_noise_sigma, self.strong_dropout_prob)

    def train_config(self, variant: str, seed: int) -> TrainConfig:
        base = dict(
            lambda1=self.lambda1, lambda2=self.lambda2, labeled_batch=self.labeled_batch,
            unlabeled_batch=self.unlabeled_batch, steps_per_epoch=self.steps_per_epoch, epochs=self.epochs,
            mu=self.mu, ema_decay=self.ema_decay, seed=seed, lr=self.lr, hidden=self.hidden,
            labeled_per_class=self.labeled_per_class, unlabeled_loss_target=self.unlabeled_loss_target,
            fixed_threshold=self.fixed_threshold,
        )
        if variant == "baseline":
            base.update(use_unlabeled=False, lambda2=0.0, threshold_mode="fixed")
        elif variant == "ssl_fixed_threshold":
            base.update(threshold_mode="fixed")
        elif variant == "ssl_dtm_post":
            base.update(smoothing_window=self.window)
        return TrainConfig(**base)

    def pools(self, seed: int) -> Pools:
        lab, unl, held = generate_synthetic(
            self.imbalance(), self.d, self.class_sep, seed,
            n_unlabeled=self.n_unlabeled, heldout_runs_per_class=self.heldout_runs_per_class,
            noise_sigma=self.noise_sigma,
            unlabeled_proportions=(1.0,) * len(self.class_counts) if self.unlabeled_distribution == "balanced" else None,
        )
        return Pools(lab, unl, held, self.augment())


def _fmt(x: float) -> str:
    return repr(float(x))


def epoch_row(rep: EpochReport) -> list[str]:
    vals = [rep.losses.total, rep.losses.labeled_loss, rep.losses.unlabeled_loss, rep.accepted_fraction,
            rep.pseudo_label_accuracy, rep.heldout_macro_f1, *rep.thresholds]
    return [str(rep.epoch)] + [_fmt(v) for v in vals]


def write_epoch_csv(path: Path, reports: list[EpochReport], k: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_COLUMNS + [f"tau_{c}" for c in range(k)])
        for rep in reports:
            w.writerow(epoch_row(rep))


def read_epoch_csv(path: Path) -> list[dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def run_single(cfg: ExperimentConfig, variant: str, seed: int) -> dict:
    """Train one (variant, seed) pair and write its artifacts."""
    pools = cfg.pools(seed)
    result: RunResult = train_run(cfg.train_config(variant, seed), pools)
    k = pools.labeled.class_count
    run_dir = Path(cfg.out_dir) / variant / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    write_epoch_csv(run_dir / "epochs.csv", result.reports, k)
    dtm.write_threshold_csv(run_dir / "thresholds.csv", result.threshold_history)
    (run_dir / "metrics.json").write_text(result.final_metrics.to_json() + "\n", encoding="utf-8")
    write_sequence_csv(run_dir / "predictions.csv", result.final_predictions, pools.heldout.segment_ids)
    return {"seed": seed, "macro_f1": result.final_metrics.macro_f1}


def _run_single_star(args):
    return run_single(*args)


def summarize(variant: str, per_seed: list[dict]) -> dict:
    scores = [r["macro_f1"] for r in per_seed]
    return {
        "variant": variant,
        "seeds": [r["seed"] for r in per_seed],
        "macro_f1": scores,
        "macro_f1_mean": statistics.fmean(scores),
        "macro_f1_std": statistics.stdev(scores) if len(scores) > 1 else 0.0,
    }


def run_experiment(cfg: ExperimentConfig) -> dict[str, dict]:
    """Run every selected variant over every seed; return summaries by variant."""
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    # out_dir is left out so that reruns into different directories stay byte-identical
    resolved = {k: v for k, v in asdict(cfg).items() if k != "out_dir"}
    (out / "config.json").write_text(json.dumps(resolved, indent=2) + "\n", encoding="utf-8")

    jobs = [(cfg, v, s) for v in cfg.variants() for s in cfg.seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_run_single_star, jobs))
    else:
        results = [run_single(*j) for j in jobs]

    summaries = {}
    for v in cfg.variants():
        per_seed = [r for (_, jv, _), r in zip(jobs, results) if jv == v]
        summaries[v] = summarize(v, per_seed)
        (out / v / "summary.json").write_text(json.dumps(summaries[v], indent=2) + "\n", encoding="utf-8")
    if len(summaries) > 1:
        rows = compare_variants([out / v for v in summaries])
        write_comparison(out, rows)
    return summaries


def load_summary(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "summary.json"
    if not path.is_file():
        raise ValidationError(f"missing run artifact {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def compare_variants(run_dirs: list[str | Path]) -> list[dict]:
    """One row per variant directory with mean, std and delta against the
    baseline (the ``baseline`` variant if present, otherwise the first row)."""
    if not run_dirs:
        raise ValidationError("nothing to compare")
    summaries = [load_summary(d) for d in run_dirs]
    ref = next((s for s in summaries if s["variant"] == "baseline"), summaries[0])
    return [
        {
            "variant": s["variant"],
            "macro_f1_mean": s["macro_f1_mean"],
            "macro_f1_std": s["macro_f1_std"],
            "delta_vs_baseline": s["macro_f1_mean"] - ref["macro_f1_mean"],
        }
        for s in summaries
    ]


def format_table(rows: list[dict]) -> str:
    lines = [f"{'variant':<22}{'macro-F1 (%)':>20}{'delta':>10}"]
    for r in rows:
        score = f"{100 * r['macro_f1_mean']:.2f} ± {100 * r['macro_f1_std']:.2f}"
        lines.append(f"{r['variant']:<22}{score:>20}{100 * r['delta_vs_baseline']:>+10.2f}")
    return "\n".join(lines) + "\n"


def write_comparison(out: Path, rows: list[dict]) -> None:
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "macro_f1_mean", "macro_f1_std", "delta_vs_baseline"])
        for r in rows:
            w.writerow([r["variant"], _fmt(r["macro_f1_mean"]), _fmt(r["macro_f1_std"]), _fmt(r["delta_vs_baseline"])])
    (out / "comparison.txt").write_text(format_table(rows), encoding="utf-8")
