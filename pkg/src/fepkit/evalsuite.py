"""Split construction, metrics, the 3-NN baseline, stratified reports,
cross-scrimmage training, and training profilers.

Positive class everywhere is the frame error. Weighted accuracy is the mean
of sensitivity and specificity; when the evaluated set contains only one
class, the recall of the present class is returned and the row is flagged
degenerate rather than erroring, since small SNR bins can be single-class.
"""

from __future__ import annotations

import csv
import json
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .datamodel import FeatureView, FrameTable, assemble_features
from .numcore import ConfigurationError, InputError


# ----------------------------------------------------------------------
# splits
# ----------------------------------------------------------------------

LINK_DISJOINT = "link_disjoint"
PILOT = "pilot"


@dataclass(frozen=True)
class SplitSpec:
    mode: str = LINK_DISJOINT
    ratios: tuple[int, int, int] = (40, 10, 50)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (LINK_DISJOINT, PILOT):
            raise ConfigurationError(f"unknown split mode {self.mode!r}")
        if sum(self.ratios) != 100 or any(r < 0 for r in self.ratios):
            raise ConfigurationError(f"ratios must be nonnegative and sum to 100, "
                                     f"got {self.ratios}")


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    mode: str

    def masks(self):
        return self.train, self.val, self.test


def largest_remainder_counts(n: int, ratios: Sequence[int]) -> list[int]:
    """Floor n*ratio/100 per part, then hand out the remainder by largest
    fractional part (ties to the earlier part)."""
    exact = [n * r / 100.0 for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    leftover = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_links(link_ids: Sequence[str], ratios: Sequence[int],
                seed: int) -> tuple[list, list, list]:
    """Shuffle whole links by seed and assign by cumulative ratio counts."""
    links = sorted(set(str(l) for l in link_ids))
    needed = sum(1 for r in ratios if r > 0)
    if len(links) < needed:
        raise InputError(f"need at least {needed} links for a link-disjoint split, "
                         f"got {len(links)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(links))
    shuffled = [links[i] for i in perm]
    a, b, _ = largest_remainder_counts(len(links), ratios)
    return shuffled[:a], shuffled[a:a + b], shuffled[a + b:]


def make_split(table, spec: SplitSpec) -> Split:
    """Assign every row of a frame table (or feature view) to train/val/test.

    link_disjoint: whole links land in exactly one split.
    pilot: each link's frames are cut contiguously in time order; the
    earliest 40% train, the next 10% validate, the rest test (counts
    floored, remainder to test).
    """
    link_ids = np.asarray(table.link_ids)
    t_ms = np.asarray(table.t_ms)
    n = len(link_ids)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    if spec.mode == LINK_DISJOINT:
        tr, va, te = split_links(link_ids, spec.ratios, spec.seed)
        train[np.isin(link_ids, tr)] = True
        val[np.isin(link_ids, va)] = True
        test[np.isin(link_ids, te)] = True
    else:
        order = np.lexsort((t_ms, link_ids))
        ids = link_ids[order]
        start = 0
        for i in range(1, n + 1):
            if i == n or ids[i] != ids[start]:
                rows = order[start:i]
                m = len(rows)
                n_tr = int(np.floor(m * spec.ratios[0] / 100.0))
                n_va = int(np.floor(m * spec.ratios[1] / 100.0))
                train[rows[:n_tr]] = True
                val[rows[n_tr:n_tr + n_va]] = True
                test[rows[n_tr + n_va:]] = True
                start = i
    return Split(train, val, test, spec.mode)


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def has_both_classes(self) -> bool:
        return (self.tp + self.fn) > 0 and (self.tn + self.fp) > 0


def confusion_counts(y_true, y_pred) -> ConfusionMatrix:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise InputError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    pos = y_true == 1
    pred_pos = y_pred == 1
    return ConfusionMatrix(
        tp=int(np.sum(pos & pred_pos)),
        fp=int(np.sum(~pos & pred_pos)),
        tn=int(np.sum(~pos & ~pred_pos)),
        fn=int(np.sum(pos & ~pred_pos)),
    )


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        return float("nan")
    return (cm.tp + cm.tn) / cm.total


def weighted_accuracy(cm: ConfusionMatrix) -> float:
    """(sensitivity + specificity) / 2; falls back to the present class's
    recall when the other class is absent (see weighted_accuracy_flagged)."""
    return weighted_accuracy_flagged(cm)[0]


def weighted_accuracy_flagged(cm: ConfusionMatrix) -> tuple[float, bool]:
    pos = cm.tp + cm.fn
    neg = cm.tn + cm.fp
    if pos > 0 and neg > 0:
        return (cm.tp / pos + cm.tn / neg) / 2.0, False
    if pos > 0:
        return cm.tp / pos, True
    if neg > 0:
        return cm.tn / neg, True
    return float("nan"), True


# ----------------------------------------------------------------------
# stratified reports
# ----------------------------------------------------------------------

@dataclass
class LinkRow:
    link_id: str
    count: int
    accuracy: float
    weighted_accuracy: float
    degenerate: bool


@dataclass
class SnrWindowRow:
    center_db: float
    lo_db: float
    hi_db: float
    count: int
    accuracy: float
    weighted_accuracy: float
    error_ratio: float
    low_confidence: bool
    degenerate: bool


def per_link_report(y_true, y_pred, link_ids) -> list[LinkRow]:
    """Per-link metrics sorted by link id; frame-weighted mean of the
    accuracies equals the overall accuracy by construction."""
    link_ids = np.asarray(link_ids)
    rows = []
    for link in np.unique(link_ids):
        m = link_ids == link
        cm = confusion_counts(np.asarray(y_true)[m], np.asarray(y_pred)[m])
        wacc, degen = weighted_accuracy_flagged(cm)
        rows.append(LinkRow(str(link), int(m.sum()), accuracy(cm), wacc, degen))
    return rows


def snr_window_report(y_true, y_pred, snr_db, window_db: float = 10.0,
                      low_count: int = 100) -> list[SnrWindowRow]:
    """Metrics over non-overlapping SNR bins of width window_db, aligned to
    multiples of the width starting at the floor of the minimum SNR. Empty
    bins are omitted; bins under low_count frames are flagged."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    snr = np.asarray(snr_db, dtype=np.float64)
    if snr.size == 0:
        return []
    lo0 = window_db * np.floor(snr.min() / window_db)
    idx = np.floor((snr - lo0) / window_db).astype(np.int64)
    rows = []
    for b in np.unique(idx):
        m = idx == b
        cm = confusion_counts(y_true[m], y_pred[m])
        wacc, degen = weighted_accuracy_flagged(cm)
        lo = lo0 + b * window_db
        rows.append(SnrWindowRow(
            center_db=lo + window_db / 2.0,
            lo_db=lo,
            hi_db=lo + window_db,
            count=int(m.sum()),
            accuracy=accuracy(cm),
            weighted_accuracy=wacc,
            error_ratio=float(y_true[m].mean()),
            low_confidence=bool(m.sum() < low_count),
            degenerate=degen,
        ))
    return rows


# ----------------------------------------------------------------------
# kNN baseline
# ----------------------------------------------------------------------

def knn3_predict(train_X, train_y, query) -> int:
    """Majority label of the 3 nearest training points by Euclidean distance;
    distance ties break toward the lower training index."""
    train_X = np.asarray(train_X, dtype=np.float64)
    train_y = np.asarray(train_y)
    if train_X.shape[0] < 3:
        raise InputError("knn3 needs at least 3 training points")
    d2 = ((train_X - np.asarray(query, dtype=np.float64)) ** 2).sum(axis=1)
    nearest = np.argsort(d2, kind="stable")[:3]
    votes = train_y[nearest]
    return int(np.sum(votes == 1) >= 2)


def knn3_predict_many(train_X, train_y, queries, block: int = 256) -> np.ndarray:
    """Vectorized knn3_predict over query rows."""
    train_X = np.asarray(train_X, dtype=np.float64)
    train_y = np.asarray(train_y)
    if train_X.shape[0] < 3:
        raise InputError("knn3 needs at least 3 training points")
    queries = np.asarray(queries, dtype=np.float64)
    out = np.empty(queries.shape[0], dtype=np.int64)
    sq_train = (train_X ** 2).sum(axis=1)
    for s in range(0, queries.shape[0], block):
        q = queries[s:s + block]
        d2 = sq_train[None, :] - 2.0 * (q @ train_X.T) + (q ** 2).sum(axis=1)[:, None]
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :3]
        votes = train_y[nearest]
        out[s:s + block] = (votes == 1).sum(axis=1) >= 2
    return out


# ----------------------------------------------------------------------
# evaluation reports
# ----------------------------------------------------------------------

@dataclass
class ProfileData:
    epoch_seconds: list[float] = field(default_factory=list)
    peak_rss_bytes: int = 0


@dataclass
class EvalReport:
    dataset: str
    split_mode: str
    architecture: str
    seed: int
    features: tuple[str, ...]
    n_frames: int
    confusion: ConfusionMatrix
    accuracy: float
    weighted_accuracy: float
    weighted_degenerate: bool
    per_link: list[LinkRow]
    snr_windows: list[SnrWindowRow]
    profile: Optional[ProfileData] = None


def build_report(y_true, y_pred, link_ids, snr_db, *, dataset: str = "",
                 split_mode: str = "", architecture: str = "", seed: int = 0,
                 features: Iterable[str] = (), profile: Optional[ProfileData] = None,
                 ) -> EvalReport:
    cm = confusion_counts(y_true, y_pred)
    wacc, degen = weighted_accuracy_flagged(cm)
    return EvalReport(
        dataset=dataset,
        split_mode=split_mode,
        architecture=architecture,
        seed=seed,
        features=tuple(features),
        n_frames=cm.total,
        confusion=cm,
        accuracy=accuracy(cm),
        weighted_accuracy=wacc,
        weighted_degenerate=degen,
        per_link=per_link_report(y_true, y_pred, link_ids),
        snr_windows=snr_window_report(y_true, y_pred, snr_db),
        profile=profile,
    )


def report_to_dict(report: EvalReport, include_profile: bool = False) -> dict:
    doc = {
        "dataset": report.dataset,
        "split_mode": report.split_mode,
        "architecture": report.architecture,
        "seed": report.seed,
        "features": list(report.features),
        "n_frames": report.n_frames,
        "confusion": asdict(report.confusion),
        "accuracy": report.accuracy,
        "weighted_accuracy": report.weighted_accuracy,
        "weighted_degenerate": report.weighted_degenerate,
        "per_link": [asdict(r) for r in report.per_link],
        "snr_windows": [asdict(r) for r in report.snr_windows],
    }
    if include_profile and report.profile is not None:
        doc["profile"] = asdict(report.profile)
    return doc


def save_report(report: EvalReport, out_dir):
    """Write report.json plus per_link.csv and snr_windows.csv (the plot data
    for Figs. of the accuracy-per-link / accuracy-per-SNR-window style).
    Volatile profiling data goes to a separate profile.json so the main
    artifacts are byte-identical across reruns with the same seeds."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")
    with (out / "per_link.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["link_id", "count", "accuracy", "weighted_accuracy", "degenerate"])
        for r in report.per_link:
            wr.writerow([r.link_id, r.count, f"{r.accuracy:.10f}",
                         f"{r.weighted_accuracy:.10f}", int(r.degenerate)])
    with (out / "snr_windows.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["center_db", "lo_db", "hi_db", "count", "accuracy",
                     "weighted_accuracy", "error_ratio", "low_confidence",
                     "degenerate"])
        for r in report.snr_windows:
            wr.writerow([f"{r.center_db:.1f}", f"{r.lo_db:.1f}", f"{r.hi_db:.1f}",
                         r.count, f"{r.accuracy:.10f}", f"{r.weighted_accuracy:.10f}",
                         f"{r.error_ratio:.10f}", int(r.low_confidence),
                         int(r.degenerate)])
    if report.profile is not None:
        (out / "profile.json").write_text(
            json.dumps(asdict(report.profile), indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# profiling
# ----------------------------------------------------------------------

_PAGE_SIZE = 4096


def _current_rss_bytes() -> int:
    try:
        with open("/proc/self/statm") as fh:
            return int(fh.read().split()[1]) * _PAGE_SIZE
    except OSError:
        import resource
        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


class _RssSampler(threading.Thread):
    """Samples resident set size at >= 10 Hz while a job runs."""

    def __init__(self, interval: float = 0.05):
        super().__init__(daemon=True)
        self.interval = interval
        self.peak = _current_rss_bytes()
        self._stop = threading.Event()

    def run(self):
        while not self._stop.is_set():
            self.peak = max(self.peak, _current_rss_bytes())
            self._stop.wait(self.interval)

    def stop(self) -> int:
        self._stop.set()
        self.join()
        return max(self.peak, _current_rss_bytes())


def profile_run(job: Callable[[], object]):
    """Run a training job under a memory sampler.

    Returns (result, ProfileData); per-epoch wall seconds come from the
    result's training history when present (empty for a 0-epoch job).
    """
    sampler = _RssSampler()
    sampler.start()
    try:
        result = job()
    finally:
        peak = sampler.stop()
    history = getattr(result, "history", None)
    epoch_seconds = list(getattr(history, "wall_seconds", []) or [])
    return result, ProfileData(epoch_seconds=epoch_seconds, peak_rss_bytes=peak)


# ----------------------------------------------------------------------
# end-to-end cells
# ----------------------------------------------------------------------

def train_and_evaluate(table: FrameTable, split_spec: SplitSpec, arch_kind: str,
                       features: Sequence[str], config, *, dataset: str = "",
                       with_profile: bool = False):
    """Split, standardize on the training rows, train one architecture, and
    evaluate on the test rows. Returns (model, EvalReport)."""
    from . import models

    split = make_split(table, split_spec)
    view = assemble_features(table, features, split.train)
    train_view = view.select(split.train)
    val_view = view.select(split.val)
    test_view = view.select(split.test)
    spec = models.ArchitectureSpec(arch_kind, len(view.feature_names),
                                   allow_nonstandard_input=True)
    model = models.build(spec, seed=config.seed)

    def job():
        return models.train(model, train_view, val_view, config)

    if with_profile:
        _, prof = profile_run(job)
    else:
        job()
        prof = None
    y_pred = models.predict_labels(model, test_view, config.test_batch)
    report = build_report(
        test_view.y, y_pred, test_view.link_ids, test_view.snr_db,
        dataset=dataset, split_mode=split_spec.mode, architecture=arch_kind,
        seed=config.seed, features=view.feature_names, profile=prof)
    return model, report


def cross_train(train_dataset, test_dataset, split_spec: SplitSpec, arch_kind: str,
                config=None, *, features: Optional[Sequence[str]] = None,
                seed: int = 0, rfe_subsample: int = 20000) -> EvalReport:
    """Train on all of dataset A (40:10 internal train/val via an 80:20 split
    of the same mode), test on dataset B's test portion. Datasets are frame
    tables, or preset names generated on the fly. Feature schema is the
    intersection of each side's RFE selection unless given explicitly."""
    from . import featsel, models, tracegen

    def to_table(ds, side_seed):
        if isinstance(ds, FrameTable):
            return ds
        cfg = tracegen.preset(ds) if isinstance(ds, str) else ds
        from .datamodel import build_frame_table
        return build_frame_table(tracegen.generate_scrimmage(cfg, side_seed))

    same = (isinstance(train_dataset, str) and isinstance(test_dataset, str)
            and train_dataset == test_dataset) or train_dataset is test_dataset
    table_a = to_table(train_dataset, seed)
    table_b = table_a if same else to_table(test_dataset, seed + 1)

    if config is None:
        config = models.TrainConfig.for_architecture(arch_kind, seed=seed)

    def select_features(table):
        split = make_split(table, split_spec)
        rows = np.flatnonzero(split.train)
        if len(rows) > rfe_subsample:
            rng = np.random.default_rng(split_spec.seed)
            rows = rows[rng.permutation(len(rows))[:rfe_subsample]]
            rows.sort()
        from .datamodel import FEATURE_NAMES
        X = np.column_stack([table.features[n][rows] for n in FEATURE_NAMES])
        res = featsel.rfe(X, table.labels[rows], FEATURE_NAMES, seed=split_spec.seed)
        return set(res.selected)

    if features is None:
        chosen = select_features(table_a) & select_features(table_b)
        if not chosen:
            raise ConfigurationError("feature intersection of the two presets is empty")
        features = sorted(chosen)
    features = list(features)

    if same:
        _, report = train_and_evaluate(table_a, split_spec, arch_kind, features,
                                       config, dataset=str(train_dataset))
        return report

    inner = SplitSpec(mode=split_spec.mode, ratios=(80, 20, 0), seed=split_spec.seed)
    split_a = make_split(table_a, inner)
    view_a = assemble_features(table_a, features, split_a.train)
    spec = models.ArchitectureSpec(arch_kind, len(view_a.feature_names),
                                   allow_nonstandard_input=True)
    model = models.build(spec, seed=config.seed)
    models.train(model, view_a.select(split_a.train), view_a.select(split_a.val), config)

    split_b = make_split(table_b, split_spec)
    from .datamodel import view_with_constants
    view_b = view_with_constants(table_b, view_a.feature_names, view_a.mean, view_a.std)
    test_view = view_b.select(split_b.test)
    y_pred = models.predict_labels(model, test_view, config.test_batch)
    return build_report(
        test_view.y, y_pred, test_view.link_ids, test_view.snr_db,
        dataset=f"{train_dataset}->{test_dataset}", split_mode=split_spec.mode,
        architecture=arch_kind, seed=config.seed, features=view_a.feature_names)
