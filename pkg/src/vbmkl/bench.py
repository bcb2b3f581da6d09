"""Benchmark harness: the UCI-style replication protocol end to end.

Each replication randomly takes a stratified 70 percent of the rows for
training, standardizes both parts with the training statistics, builds the
full 13*(D+1) kernel bank, trains one binary model and records test
accuracy, selected-kernel count, AUC/EER and the training time.  Sparse and
non-sparse named scenarios reproduce the two published hyperprior settings.

Wall-clock timings are inherently non-reproducible, so they are kept out of
the result table (which is byte-identical across reruns for a fixed config)
and reported in the summary instead.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.stats import rankdata

from .engine import HyperParams, fit
from .kernels import FeatureMatrix, build_feature_bank
from .predict import predict_proba, selected_kernels

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "ReplicationRecord",
    "load_dataset",
    "split_train_test",
    "standardize",
    "scenario_hyperparams",
    "run_benchmark",
    "metric_accuracy",
    "metric_auc",
    "metric_eer",
]

SCENARIOS = ("sparse", "non-sparse")


def load_dataset(path):
    """Parse a delimited text dataset: one row per instance, label last.

    Feature cells must be finite numbers; the label column may be any
    string.  Commas are used as the delimiter when present, otherwise
    whitespace.  Parse failures name the offending row and column
    (1-based).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"dataset file {path} is empty")
    rows, labels = [], []
    width = None
    for r, ln in enumerate(lines, start=1):
        cells = ln.split(",") if "," in ln else ln.split()
        if width is None:
            width = len(cells)
            if width < 2:
                raise ValueError("rows need at least one feature and a label")
        elif len(cells) != width:
            raise ValueError(f"row {r} has {len(cells)} columns, expected {width}")
        feats = []
        for c, cell in enumerate(cells[:-1], start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ValueError(
                    f"row {r}, column {c}: cannot parse {cell!r} as a number"
                ) from None
            if not np.isfinite(v):
                raise ValueError(f"row {r}, column {c}: non-finite value {cell!r}")
            feats.append(v)
        rows.append(feats)
        labels.append(cells[-1].strip())
    return FeatureMatrix(np.asarray(rows, dtype=float), np.asarray(labels))


def split_train_test(data, seed, fraction=0.7):
    """Seeded stratified split; both classes appear in both parts.

    Per-class training counts follow the largest-remainder rule so the
    total training size is round(fraction * N) whenever feasible, with each
    class keeping at least one row on each side.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    labels = data.labels
    if labels is None:
        raise ValueError("split requires labeled data")
    classes, codes = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise ValueError("single-class data cannot be split for classification")
    counts = np.bincount(codes)
    if np.any(counts < 2):
        small = classes[np.argmin(counts)]
        raise ValueError(f"class {small!r} has fewer than 2 rows; cannot stratify")

    target_total = int(round(fraction * data.n))
    raw = fraction * counts
    take = np.floor(raw).astype(int)
    take = np.clip(take, 1, counts - 1)
    remainder = raw - np.floor(raw)
    order = np.argsort(-remainder)
    i = 0
    while take.sum() < target_total and i < len(order):
        c = order[i]
        if take[c] < counts[c] - 1:
            take[c] += 1
        i += 1

    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(classes.size):
        members = np.flatnonzero(codes == c)
        perm = rng.permutation(members)
        train_idx.append(perm[: take[c]])
        test_idx.append(perm[take[c]:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return (
        FeatureMatrix(data.X[train_idx], labels[train_idx]),
        FeatureMatrix(data.X[test_idx], labels[test_idx]),
    )


def standardize(train, test=None):
    """Per-feature z-score with training statistics applied to both parts.

    Zero-variance features are centered and divided by 1 instead of 0.
    Returns (train', test', stats) with stats = (mean, divisor).
    """
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    divisor = np.where(std > 0, std, 1.0)
    tr = FeatureMatrix((train.X - mean) / divisor, train.labels)
    te = None
    if test is not None:
        te = FeatureMatrix((test.X - mean) / divisor, test.labels)
    return tr, te, (mean, divisor)


def scenario_hyperparams(name, nu=1.0, iterations=200, elbo_rel_tol=0.0):
    """Named hyperprior settings for the two published sparsity levels."""
    if name == "sparse":
        omega = (1e-10, 1e10)
    elif name == "non-sparse":
        omega = (1.0, 1.0)
    else:
        raise ValueError(
            f"unknown scenario {name!r}; valid scenarios: {', '.join(SCENARIOS)}"
        )
    return HyperParams(
        alpha_lambda=1.0,
        beta_lambda=1.0,
        alpha_gamma=1.0,
        beta_gamma=1.0,
        alpha_omega=omega[0],
        beta_omega=omega[1],
        nu=nu,
        max_iterations=iterations,
        elbo_rel_tol=elbo_rel_tol,
    )


def metric_accuracy(predictions, truth):
    """Fraction of matching entries."""
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ValueError("prediction/truth length mismatch")
    return float(np.mean(predictions == truth))


def metric_auc(scores, truth):
    """Area under the ROC curve via the rank statistic, ties averaged."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    pos = truth == 1
    n_pos = int(pos.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes in the truth labels")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def metric_eer(scores, truth):
    """Equal error rate: ROC point with false-positive = false-negative
    rate, linearly interpolated between thresholds."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    pos = truth == 1
    n_pos = int(pos.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("EER needs both classes in the truth labels")
    order = np.argsort(-scores, kind="stable")
    sorted_pos = pos[order]
    tp = np.concatenate(([0], np.cumsum(sorted_pos)))
    fp = np.concatenate(([0], np.cumsum(~sorted_pos)))
    fpr = fp / n_neg
    fnr = 1.0 - tp / n_pos
    diff = fpr - fnr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(fpr[k])
    # crossing lies between k-1 and k
    d0, d1 = diff[k - 1], diff[k]
    t = d0 / (d0 - d1)
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run: dataset, protocol knobs and the scenario."""

    dataset: str
    replications: int = 20
    train_fraction: float = 0.7
    scenario: str = "non-sparse"
    base_seed: int = 0
    iterations: int = 200
    nu: float = 1.0
    threads: int = 1
    hyperparams: HyperParams | None = None  # overrides scenario when given

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.hyperparams is None and self.scenario not in SCENARIOS:
            raise ValueError(
                f"unknown scenario {self.scenario!r}; valid scenarios: "
                f"{', '.join(SCENARIOS)}"
            )

    def resolve_hyperparams(self):
        if self.hyperparams is not None:
            return self.hyperparams
        return scenario_hyperparams(self.scenario, nu=self.nu, iterations=self.iterations)


@dataclass
class ReplicationRecord:
    replication: int
    seed: int
    accuracy_pct: float
    selected_count: int
    auc: float
    eer: float
    train_seconds: float
    precompute_seconds: float


def _mean_std(values):
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return mean, std


@dataclass
class ExperimentResult:
    """Per-replication rows plus aggregates recomputable from them."""

    config: ExperimentConfig
    rows: list = field(default_factory=list)

    def aggregates(self):
        out = {}
        for key in ("accuracy_pct", "selected_count", "auc", "eer",
                    "train_seconds", "precompute_seconds"):
            mean, std = _mean_std([getattr(r, key) for r in self.rows])
            out[key] = {"mean": mean, "std": std}
        return out

    def table_text(self):
        """Deterministic result table: header, one row per replication,
        trailing aggregate rows.  Timing is excluded here by design (it is
        wall-clock and would break byte-reproducibility); see the summary.
        """
        cols = ("replication", "seed", "accuracy_pct", "selected_count", "auc", "eer")
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(
                ",".join(
                    (
                        str(r.replication),
                        str(r.seed),
                        repr(r.accuracy_pct),
                        str(r.selected_count),
                        repr(r.auc),
                        repr(r.eer),
                    )
                )
            )
        agg = self.aggregates()
        for stat in ("mean", "std"):
            lines.append(
                ",".join(
                    (
                        stat,
                        "",
                        repr(agg["accuracy_pct"][stat]),
                        repr(agg["selected_count"][stat]),
                        repr(agg["auc"][stat]),
                        repr(agg["eer"][stat]),
                    )
                )
            )
        return "\n".join(lines) + "\n"

    def summary_dict(self):
        """Machine-readable mirror of the three protocol measures."""
        agg = self.aggregates()
        cfg = asdict(self.config)
        if self.config.hyperparams is not None:
            cfg["hyperparams"] = asdict(self.config.hyperparams)
        return {
            "config": cfg,
            "replications_completed": len(self.rows),
            "training_time_seconds": agg["train_seconds"],
            "precompute_seconds": agg["precompute_seconds"],
            "test_accuracy_pct": agg["accuracy_pct"],
            "selected_kernels": agg["selected_count"],
            "auc": agg["auc"],
            "eer": agg["eer"],
        }


def _binary_labels(labels):
    """Map a two-class label vector to +/-1 (first-appearance class -> +1);
    returns the vector and the positive class tag."""
    seen = []
    for v in labels.tolist():
        if v not in seen:
            seen.append(v)
    if len(seen) != 2:
        raise ValueError(f"binary benchmark needs exactly 2 classes, got {len(seen)}")
    return np.where(labels == seen[0], 1, -1), seen[0]


def _run_replication(data, config, hp, rep):
    seed = config.base_seed + rep
    train, test = split_train_test(data, seed, config.train_fraction)
    train, test, _ = standardize(train, test)

    t0 = time.perf_counter()
    bundle = build_feature_bank(train, test)
    bank_seconds = time.perf_counter() - t0

    y_train, positive = _binary_labels(train.labels)
    y_test = np.where(test.labels == positive, 1, -1)
    model = fit(bundle, y_train, hp)

    p_pos = predict_proba(model, bundle.cross_kernels)
    pred = np.where(p_pos > 0.5, 1, -1)
    count, _ = selected_kernels(model)
    return ReplicationRecord(
        replication=rep,
        seed=seed,
        accuracy_pct=100.0 * metric_accuracy(pred, y_test),
        selected_count=count,
        auc=metric_auc(p_pos, y_test),
        eer=metric_eer(p_pos, y_test),
        train_seconds=model.meta["inference_seconds"],
        precompute_seconds=bank_seconds + model.meta["precompute_seconds"],
    )


def run_benchmark(config, data=None, progress=None):
    """Execute the full replication protocol for one configuration.

    ``data`` short-circuits file loading (used by tests); replications are
    independent and run on up to ``config.threads`` workers, with rows
    merged in replication order so the result is schedule-independent.
    """
    if data is None:
        data = load_dataset(config.dataset)
    hp = config.resolve_hyperparams()
    result = ExperimentResult(config=config)
    reps = range(config.replications)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            rows = list(pool.map(lambda r: _run_replication(data, config, hp, r), reps))
    else:
        rows = []
        for r in reps:
            rows.append(_run_replication(data, config, hp, r))
            if progress is not None:
                progress(rows[-1])
    result.rows = rows
    return result
