"""Frame and match records, the on-disk match-log format, channel-event
joining, SNR derivation, and feature assembly with train-split standardization.

A match log is a line-delimited file: one JSON object per line, tagged
"meta", "event" or "frame". See docs/match_log_schema.md for field units.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .numcore import InputError

log = logging.getLogger(__name__)

MIN_TOTAL_BANDWIDTH_HZ = 20e6   # matches at or below this are dropped at ingest

FEATURE_NAMES = ("noise_variance", "mcs", "bandwidth", "channel_index",
                 "psd_measured", "psd_estimated")


class IngestError(ValueError):
    """A match-log file violates the record schema or record invariants."""


@dataclass
class FrameRecord:
    """One transmitted frame. decoded=True means the receiver decoded it;
    the prediction target is the frame *error* (not decoded)."""
    src: int
    dst: int
    t_ms: int
    noise_variance: float      # linear power relative to the reference signal
    mcs: int
    bandwidth_hz: float
    psd_measured: float        # in-band mean dB, active measurement
    psd_estimated: float       # in-band mean dB, peer-report derived
    decoded: bool
    channel_index: Optional[int] = None   # filled by join_channel_events

    @property
    def link_key(self) -> tuple[int, int]:
        return (self.src, self.dst)


@dataclass
class ChannelEvent:
    node: int
    t_ms: int
    channel_index: int


@dataclass
class MatchMeta:
    match_id: str
    total_bandwidth_hz: float
    allocation: str            # "randomized" | "fixed"
    ref_power: float = 1.0
    initial_channel: int = 0
    n_channels: int = 1
    mcs_count: int = 1


@dataclass
class MatchLog:
    meta: MatchMeta
    frames: list[FrameRecord] = field(default_factory=list)
    events: list[ChannelEvent] = field(default_factory=list)


_LINE_FIELDS = {
    "meta": {"match_id": str, "total_bandwidth_hz": (int, float), "allocation": str,
             "ref_power": (int, float), "initial_channel": int, "n_channels": int,
             "mcs_count": int},
    "event": {"node": int, "t_ms": int, "channel_index": int},
    "frame": {"src": int, "dst": int, "t_ms": int, "noise_variance": (int, float),
              "mcs": int, "bandwidth_hz": (int, float), "psd_measured": (int, float),
              "psd_estimated": (int, float), "decoded": bool,
              "channel_index": (int, type(None))},
}


def _type_ok(val, want) -> bool:
    wants = want if isinstance(want, tuple) else (want,)
    if isinstance(val, bool):
        return bool in wants
    return isinstance(val, wants)


def _check_line(obj: dict, lineno: int, problems: list[str]) -> Optional[str]:
    kind = obj.get("type")
    if kind not in _LINE_FIELDS:
        problems.append(f"line {lineno}: unknown record type {kind!r}")
        return None
    fields = _LINE_FIELDS[kind]
    for key, val in obj.items():
        if key == "type":
            continue
        if key not in fields:
            problems.append(f"line {lineno}: unknown field {key!r} for {kind}")
            return None
        if not _type_ok(val, fields[key]):
            problems.append(f"line {lineno}: field {key!r} has wrong type "
                            f"{type(val).__name__}")
            return None
    missing = [k for k in fields if k not in obj and k != "channel_index"]
    if missing:
        problems.append(f"line {lineno}: missing fields {missing} for {kind}")
        return None
    return kind


def load_match_log(path) -> MatchLog:
    """Parse one match-log file; raises IngestError listing every offending line."""
    path = Path(path)
    problems: list[str] = []
    meta: Optional[MatchMeta] = None
    frames: list[FrameRecord] = []
    events: list[ChannelEvent] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            if not isinstance(obj, dict):
                problems.append(f"line {lineno}: record is not an object")
                continue
            kind = _check_line(obj, lineno, problems)
            if kind is None:
                continue
            body = {k: v for k, v in obj.items() if k != "type"}
            if kind == "meta":
                if meta is not None:
                    problems.append(f"line {lineno}: duplicate meta record")
                    continue
                meta = MatchMeta(**body)
            elif kind == "event":
                events.append(ChannelEvent(**body))
            else:
                if body.get("noise_variance", 1.0) <= 0:
                    problems.append(f"line {lineno}: noise_variance must be > 0")
                    continue
                frames.append(FrameRecord(**body))
    if meta is None:
        problems.append("no meta record found")
    else:
        for rec, where in _invariant_problems(meta, frames, events):
            problems.append(f"{where}: {rec}")
    if problems:
        shown = "; ".join(problems[:20])
        more = f" (+{len(problems) - 20} more)" if len(problems) > 20 else ""
        raise IngestError(f"{path.name}: {shown}{more}")
    return MatchLog(meta=meta, frames=frames, events=events)


def _invariant_problems(meta: MatchMeta, frames, events):
    last_t: dict[tuple[int, int], int] = {}
    for i, f in enumerate(frames):
        prev = last_t.get(f.link_key)
        if prev is not None and f.t_ms < prev:
            yield (f"non-monotone t_ms on link {f.link_key}: {f.t_ms} after {prev}",
                   f"frame {i}")
        last_t[f.link_key] = f.t_ms
        if not (0 <= f.mcs < meta.mcs_count):
            yield (f"mcs {f.mcs} outside table range [0, {meta.mcs_count})", f"frame {i}")
    last_e: dict[int, int] = {}
    for i, e in enumerate(events):
        prev = last_e.get(e.node)
        if prev is not None and e.t_ms < prev:
            yield (f"non-monotone event time for node {e.node}", f"event {i}")
        last_e[e.node] = e.t_ms


def save_match_log(match: MatchLog, path):
    """Write meta, then events, then frames; load_match_log round-trips losslessly."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"type": "meta", **asdict(match.meta)}) + "\n")
        for e in match.events:
            fh.write(json.dumps({"type": "event", **asdict(e)}) + "\n")
        for f in match.frames:
            fh.write(json.dumps({"type": "frame", **asdict(f)}) + "\n")


def passes_bandwidth_filter(match: MatchLog) -> bool:
    return match.meta.total_bandwidth_hz > MIN_TOTAL_BANDWIDTH_HZ


def load_corpus(paths: Iterable) -> list[MatchLog]:
    """Load many match logs, dropping matches whose scenario total bandwidth
    does not exceed 20 MHz. Paths are sorted for deterministic ordering."""
    logs = []
    for p in sorted(Path(p) for p in paths):
        match = load_match_log(p)
        if passes_bandwidth_filter(match):
            logs.append(match)
        else:
            log.info("skipping %s: total bandwidth %.1f MHz below ingest floor",
                     match.meta.match_id, match.meta.total_bandwidth_hz / 1e6)
    return logs


# ----------------------------------------------------------------------
# channel-event joining and SNR
# ----------------------------------------------------------------------

def join_channel_events(frames: Sequence[FrameRecord], events: Sequence[ChannelEvent],
                        initial_channel: int = 0) -> list[FrameRecord]:
    """Annotate each frame with the transmitter's channel at transmit time.

    A frame carries the most recent event for its src node with event
    t_ms <= frame t_ms (boundary inclusive); frames before any event get
    initial_channel. Re-annotating is idempotent.
    """
    by_node: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    tmp: dict[int, list[ChannelEvent]] = {}
    for e in events:
        tmp.setdefault(e.node, []).append(e)
    for node, evs in tmp.items():
        ts = np.array([e.t_ms for e in evs], dtype=np.int64)
        if np.any(np.diff(ts) < 0):
            raise InputError(f"events for node {node} are not time-ordered")
        by_node[node] = (ts, np.array([e.channel_index for e in evs], dtype=np.int64))
    out = []
    for f in frames:
        pair = by_node.get(f.src)
        if pair is None:
            ch = initial_channel
        else:
            ts, chans = pair
            i = int(np.searchsorted(ts, f.t_ms, side="right")) - 1
            ch = initial_channel if i < 0 else int(chans[i])
        out.append(replace(f, channel_index=ch))
    return out


def annotate_channels(match: MatchLog) -> MatchLog:
    frames = join_channel_events(match.frames, match.events,
                                 match.meta.initial_channel)
    return MatchLog(meta=match.meta, frames=frames, events=match.events)


def snr_db(noise_variance, ref_power) -> np.ndarray:
    """10*log10(ref_power / noise_variance); both inputs must be positive."""
    nv = np.asarray(noise_variance, dtype=np.float64)
    rp = np.asarray(ref_power, dtype=np.float64)
    if np.any(nv <= 0) or np.any(rp <= 0):
        raise InputError("snr_db requires positive noise variance and reference power")
    return 10.0 * np.log10(rp / nv)


# ----------------------------------------------------------------------
# frame table and feature views
# ----------------------------------------------------------------------

@dataclass
class FrameTable:
    """All frames of a corpus flattened to arrays, sorted by (link, time).

    features holds the raw (unstandardized) per-frame values for every
    feature in FEATURE_NAMES; labels are 1 for frame error, 0 for success.
    """
    link_ids: np.ndarray       # unicode array, "match:src->dst"
    t_ms: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    features: dict[str, np.ndarray]

    @property
    def n(self) -> int:
        return self.link_ids.shape[0]


def build_frame_table(logs: Sequence[MatchLog]) -> FrameTable:
    """Join channel events, derive SNR, and flatten a corpus to one table."""
    link_ids, t_ms, labels, snr = [], [], [], []
    cols: dict[str, list] = {name: [] for name in FEATURE_NAMES}
    for match in logs:
        annotated = annotate_channels(match)
        rp = match.meta.ref_power
        for f in annotated.frames:
            link_ids.append(f"{match.meta.match_id}:{f.src}->{f.dst}")
            t_ms.append(f.t_ms)
            labels.append(0 if f.decoded else 1)
            snr.append(10.0 * np.log10(rp / f.noise_variance))
            cols["noise_variance"].append(f.noise_variance)
            cols["mcs"].append(float(f.mcs))
            cols["bandwidth"].append(f.bandwidth_hz)
            cols["channel_index"].append(float(f.channel_index))
            cols["psd_measured"].append(f.psd_measured)
            cols["psd_estimated"].append(f.psd_estimated)
    if not link_ids:
        raise InputError("no frames in corpus")
    link_arr = np.array(link_ids)
    t_arr = np.array(t_ms, dtype=np.int64)
    order = np.lexsort((t_arr, link_arr))
    return FrameTable(
        link_ids=link_arr[order],
        t_ms=t_arr[order],
        labels=np.array(labels, dtype=np.int64)[order],
        snr_db=np.array(snr, dtype=np.float64)[order],
        features={k: np.array(v, dtype=np.float64)[order] for k, v in cols.items()},
    )


@dataclass
class FeatureView:
    """Standardized feature matrix plus everything needed downstream.

    X is (n, k) with columns in feature_names order (canonical FEATURE_NAMES
    ordering); mean/std are the train-split standardization constants that
    produced it. Positive label = frame error.
    """
    X: np.ndarray
    y: np.ndarray
    link_ids: np.ndarray
    t_ms: np.ndarray
    snr_db: np.ndarray
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def select(self, mask: np.ndarray) -> "FeatureView":
        """Row subset sharing the same standardization constants."""
        return FeatureView(self.X[mask], self.y[mask], self.link_ids[mask],
                           self.t_ms[mask], self.snr_db[mask],
                           self.feature_names, self.mean, self.std)


def canonical_subset(subset: Iterable[str]) -> tuple[str, ...]:
    names = list(subset)
    unknown = [s for s in names if s not in FEATURE_NAMES]
    if unknown:
        raise InputError(f"unknown features {unknown}; pick from {FEATURE_NAMES}")
    if not names:
        raise InputError("feature subset must be nonempty")
    return tuple(s for s in FEATURE_NAMES if s in names)


def view_with_constants(table: FrameTable, names: Iterable[str], mean: np.ndarray,
                        std: np.ndarray) -> FeatureView:
    """Standardize a table with externally supplied constants (e.g. the ones a
    trained model carries), never consulting this table's own statistics."""
    names = tuple(names)
    X = np.column_stack([table.features[n] for n in names])
    return FeatureView(
        X=(X - mean) / std,
        y=table.labels.copy(),
        link_ids=table.link_ids,
        t_ms=table.t_ms,
        snr_db=table.snr_db,
        feature_names=names,
        mean=np.asarray(mean, dtype=np.float64),
        std=np.asarray(std, dtype=np.float64),
    )


def assemble_features(table: FrameTable, subset: Iterable[str],
                      train_mask: np.ndarray) -> FeatureView:
    """Z-score features using statistics of the training rows only.

    MCS and channel index enter as ordinal numerics. A feature that is
    constant on the training split is passed through centered (divisor 1)
    with a warning.
    """
    names = canonical_subset(subset)
    train_mask = np.asarray(train_mask, dtype=bool)
    if train_mask.shape != (table.n,):
        raise InputError("train_mask must have one entry per table row")
    if not train_mask.any():
        raise InputError("training split is empty")
    X = np.column_stack([table.features[name] for name in names])
    mean = X[train_mask].mean(axis=0)
    std = X[train_mask].std(axis=0)
    flat = std == 0.0
    if flat.any():
        bad = [names[i] for i in np.flatnonzero(flat)]
        warnings.warn(f"features {bad} are constant on the training split; "
                      "passing through centered", stacklevel=2)
    safe = np.where(flat, 1.0, std)
    return FeatureView(
        X=(X - mean) / safe,
        y=table.labels.copy(),
        link_ids=table.link_ids,
        t_ms=table.t_ms,
        snr_db=table.snr_db,
        feature_names=names,
        mean=mean,
        std=safe,
    )
