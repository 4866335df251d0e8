"""Synthetic scrimmage generator: match logs statistically calibrated to the
real dataset's headline numbers, with ground-truth error mechanics.

The error model is an invented stand-in (the original data came from a
hardware emulator): per link, SNR follows an AR(1) process in dB plus a
per-channel offset; channel switches arrive at a target per-link rate and,
under the randomized allocation strategy, redraw the offset table (an SNR
jump); MCS tracks SNR through a threshold table with a fixed adaptation
lag; errors are logistic in the SNR margin plus a Gilbert-Elliott burst
term whose bad state is usually entered right after a switch. Every knob
exists to make the qualitative findings testable, not to claim fidelity.

Determinism: each (config, seed, match, link) owns an independent RNG
stream, so changing one link's draw count never alters another link.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .datamodel import ChannelEvent, FrameRecord, MatchLog, MatchMeta
from .numcore import ConfigurationError, InputError, sigmoid

GOOD, BAD = 0, 1


@dataclass(frozen=True)
class SnrProcess:
    """AR(1) fading in dB plus per-channel offsets.

    The stationary std is std_db; per-link means are drawn from
    N(mean_db, link_mean_spread_db^2) so links differ in operating point.
    A fraction of links is additionally "impaired" (near an interferer or
    obstruction) and shifted by impaired_offset_db: most low-SNR frames
    then belong to a small set of links.
    """
    mean_db: float
    std_db: float
    rho: float
    channel_offset_range_db: float
    link_mean_spread_db: float = 0.0
    impaired_fraction: float = 0.0
    impaired_offset_db: float = 0.0
    link_margin_spread_db: float = 0.0    # hidden per-link decode-margin miscalibration
    impaired_margin_bias_db: float = 0.0  # extra +-bias (random sign) on impaired links


@dataclass(frozen=True)
class BurstModel:
    """Gilbert-Elliott burst chain with delayed, observable radio reaction.

    Interference bursts start spontaneously (p_good_to_bad per frame in the
    good state). The radio notices and reacts with a channel switch
    reaction_delay_min..max frames later; frames between burst onset and the
    reaction carry elevated error risk with no causal signature, which is
    the window only a bidirectional model can exploit. Once reacted, link
    adaptation hunts: the MCS flaps down mcs_hunt_depth levels on
    alternating frames while the bad state lasts, a sequence signature with
    almost no framewise value. Exogenous switches can also drag a link into
    the bad state (switch_trigger_prob), with the switch visible up front.

    bandwidth_exposure scales the onset hazard by (bw / 20 MHz)^exposure;
    link_boost_spread is a lognormal sigma on a per-link boost multiplier and
    link_rate_spread one on a per-link hazard/trigger multiplier: hidden
    per-link severity that a pilot training phase can exploit.
    """
    p_good_to_bad: float
    p_bad_to_good: float
    error_boost: float
    switch_trigger_prob: float = 0.0
    link_boost_spread: float = 0.0
    link_rate_spread: float = 0.0
    bandwidth_exposure: float = 0.0
    mcs_hunt_depth: int = 0
    reaction_delay_min: int = 3
    reaction_delay_max: int = 8


@dataclass(frozen=True)
class ScenarioConfig:
    matches: int
    links_per_match: int
    frames_per_link: int
    allocation: str                       # "randomized" | "fixed"
    target_switches_per_link: float
    snr: SnrProcess
    mcs_thresholds_db: tuple[float, ...]  # index i usable from thresholds[i] dB up
    mcs_lag_frames: int
    mcs_backoff_db: float                 # link-adaptation margin
    burst: BurstModel
    logistic_scale_db: float
    link_backoff_spread_db: float = 0.0   # per-link policy spread on top of the base
    bw_margin_db_per_octave: float = 0.0  # decode-margin penalty for wide bands
    n_channels: int = 8
    total_bandwidth_hz: float = 40e6
    bandwidth_choices_hz: tuple[float, ...] = (5e6, 10e6, 20e6)
    ref_power: float = 1.0
    frame_interval_ms: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.allocation not in ("randomized", "fixed"):
            raise ConfigurationError(f"unknown allocation {self.allocation!r}")
        for name in ("p_good_to_bad", "p_bad_to_good", "switch_trigger_prob"):
            v = getattr(self.burst, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"burst.{name}={v} outside [0, 1]")
        th = self.mcs_thresholds_db
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ConfigurationError("mcs thresholds must be strictly increasing")
        if not 0.0 <= self.snr.rho < 1.0:
            raise ConfigurationError(f"rho={self.snr.rho} outside [0, 1)")
        if min(self.matches, self.links_per_match, self.frames_per_link) < 1:
            raise ConfigurationError("matches/links/frames must all be >= 1")


def frame_error_probability(snr_db, mcs, burst_state, config: ScenarioConfig,
                            boost_multiplier=1.0, threshold_offset_db=0.0):
    """Ground-truth error probability: logistic in the margin below the MCS
    threshold, plus the burst boost (capped at 1) in the bad state.

    boost_multiplier and threshold_offset_db carry per-link severity and
    decode-margin miscalibration through the same formula.
    """
    snr = np.asarray(snr_db, dtype=np.float64)
    mcs_arr = np.asarray(mcs, dtype=np.int64)
    th = np.asarray(config.mcs_thresholds_db, dtype=np.float64)
    if mcs_arr.min() < 0 or mcs_arr.max() >= len(th):
        raise InputError(f"mcs outside table range [0, {len(th)})")
    z = (th[mcs_arr] + threshold_offset_db - snr) / config.logistic_scale_db
    p = sigmoid(np.atleast_1d(z).astype(np.float64)).reshape(z.shape)
    bad = np.asarray(burst_state, dtype=bool)
    boost = config.burst.error_boost * np.asarray(boost_multiplier, dtype=np.float64)
    p = np.where(bad, np.minimum(1.0, p + boost), p)
    return float(p) if p.ndim == 0 else p


def _link_rng(seed: int, match_index: int, link_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, match_index, 1, link_index]))


def _generate_link(cfg: ScenarioConfig, rng: np.random.Generator, link_index: int,
                   occupancy_db: np.ndarray):
    n = cfg.frames_per_link
    snr_cfg = cfg.snr
    half = snr_cfg.channel_offset_range_db / 2.0

    link_mean = snr_cfg.mean_db + (
        rng.normal(0.0, snr_cfg.link_mean_spread_db) if snr_cfg.link_mean_spread_db else 0.0)
    impaired = rng.random() < snr_cfg.impaired_fraction
    bias_sign = 1.0 if rng.random() < 0.5 else -1.0
    if impaired:
        link_mean += snr_cfg.impaired_offset_db
    offsets = rng.uniform(-half, half, size=cfg.n_channels)
    channel = int(rng.integers(cfg.n_channels))
    bw = float(cfg.bandwidth_choices_hz[int(rng.integers(len(cfg.bandwidth_choices_hz)))])
    if cfg.burst.link_boost_spread:
        boost_mult = float(np.clip(np.exp(rng.normal(0.0, cfg.burst.link_boost_spread)),
                                   0.2, 3.0))
    else:
        boost_mult = 1.0
    if cfg.burst.link_rate_spread:
        rate_mult = float(np.clip(np.exp(rng.normal(0.0, cfg.burst.link_rate_spread)),
                                  0.2, 4.0))
    else:
        rate_mult = 1.0
    if snr_cfg.link_margin_spread_db:
        margin_delta = float(np.clip(rng.normal(0.0, snr_cfg.link_margin_spread_db),
                                     -4.0, 4.0))
    else:
        margin_delta = 0.0
    if impaired:
        margin_delta += bias_sign * snr_cfg.impaired_margin_bias_db
    backoff = cfg.mcs_backoff_db
    if cfg.link_backoff_spread_db:
        backoff += float(rng.uniform(0.0, cfg.link_backoff_spread_db))

    innov = rng.normal(0.0, snr_cfg.std_db * np.sqrt(1.0 - snr_cfg.rho ** 2), size=n)
    ar0 = rng.normal(0.0, snr_cfg.std_db)
    switch_u = rng.random(n)
    gb_u = rng.random(n)
    bg_u = rng.random(n)
    trig_u = rng.random(n)
    label_u = rng.random(n)
    psd_noise = rng.normal(0.0, 2.5, size=n)
    psd_noise2 = rng.normal(0.0, 2.0, size=n)
    burst = cfg.burst
    delays = rng.integers(burst.reaction_delay_min, burst.reaction_delay_max + 1, size=n)

    # exogenous switch rate: whatever the reactive switches leave of the target
    p_gb = burst.p_good_to_bad * rate_mult
    p_bg = burst.p_bad_to_good
    trig = min(1.0, burst.switch_trigger_prob * rate_mult)
    exposure = burst.bandwidth_exposure
    if exposure:
        haz_by_bw = {b: (b / 20e6) ** exposure for b in cfg.bandwidth_choices_hz}
        haz_mean = float(np.mean(list(haz_by_bw.values())))
    else:
        haz_by_bw = {b: 1.0 for b in cfg.bandwidth_choices_hz}
        haz_mean = 1.0
    mean_len = 1.0 / max(p_bg, 1e-9)
    # fixed allocation keeps this link's bandwidth, so its own hazard applies
    haz_est = haz_mean if cfg.allocation == "randomized" else haz_by_bw[bw]
    est_onsets = p_gb * haz_est * n / (1.0 + p_gb * haz_est * mean_len)
    p_switch = max(0.0, cfg.target_switches_per_link - est_onsets) / n

    # merged channel/burst walk: interference starts silently, the radio
    # reacts with a visible switch a few frames later, then hunts its MCS
    t0 = link_index
    step = cfg.frame_interval_ms
    channels = np.empty(n, dtype=np.int64)
    offs = np.empty(n)
    bws = np.empty(n)
    bad = np.empty(n, dtype=np.int64)
    hunting = np.zeros(n, dtype=bool)
    events = [(t0, channel)]
    state = GOOD
    reacted = True
    pending = -1
    for k in range(n):
        exo = k > 0 and switch_u[k] < p_switch
        if exo or pending == k:
            if cfg.allocation == "randomized":
                offsets = rng.uniform(-half, half, size=cfg.n_channels)
                bw = float(cfg.bandwidth_choices_hz[
                    int(rng.integers(len(cfg.bandwidth_choices_hz)))])
            new = int(rng.integers(cfg.n_channels - 1)) if cfg.n_channels > 1 else 0
            if cfg.n_channels > 1 and new >= channel:
                new += 1
            channel = new
            events.append((t0 + k * step, channel))
            if pending == k:
                reacted = True
                pending = -1
        if state == GOOD:
            if gb_u[k] < p_gb * haz_by_bw[bw]:
                state = BAD
                reacted = False
                pending = k + int(delays[k])
            elif exo and trig_u[k] < trig:
                state = BAD
                reacted = True
                pending = -1
        else:
            if bg_u[k] < p_bg:
                state = GOOD
        bad[k] = state
        hunting[k] = state == BAD and reacted
        channels[k] = channel
        offs[k] = offsets[channel]
        bws[k] = bw

    # AR(1) around the per-link mean
    ar = np.empty(n)
    prev = ar0
    rho = snr_cfg.rho
    for k in range(n):
        prev = rho * prev + innov[k]
        ar[k] = prev
    snr = link_mean + ar + offs

    # MCS follows lagged SNR through the threshold table
    lag = cfg.mcs_lag_frames
    if lag > 0:
        k = min(lag, n)
        sel = np.concatenate([np.full(k, snr[0]), snr[:n - k]])
    else:
        sel = snr
    th = np.asarray(cfg.mcs_thresholds_db)
    mcs = np.searchsorted(th, sel - backoff, side="right") - 1
    np.clip(mcs, 0, len(th) - 1, out=mcs)

    if burst.mcs_hunt_depth > 0:
        flap = (np.arange(n) % 2) * burst.mcs_hunt_depth * hunting
        mcs = np.maximum(mcs - flap, 0)

    threshold_offset = margin_delta
    if cfg.bw_margin_db_per_octave:
        threshold_offset = margin_delta + cfg.bw_margin_db_per_octave * np.log2(bws / 10e6)
    true_p = frame_error_probability(snr, mcs, bad, cfg, boost_multiplier=boost_mult,
                                     threshold_offset_db=threshold_offset)
    errors = label_u < true_p
    noise_var = cfg.ref_power / np.power(10.0, snr / 10.0)
    psd_measured = occupancy_db[channels] + psd_noise
    psd_estimated = psd_measured + psd_noise2

    t_ms = t0 + np.arange(n, dtype=np.int64) * step
    frames = [
        FrameRecord(
            src=link_index, dst=1000 + link_index, t_ms=int(t_ms[k]),
            noise_variance=float(noise_var[k]), mcs=int(mcs[k]),
            bandwidth_hz=float(bws[k]), psd_measured=float(psd_measured[k]),
            psd_estimated=float(psd_estimated[k]), decoded=bool(~errors[k]),
        )
        for k in range(n)
    ]
    ch_events = [ChannelEvent(node=link_index, t_ms=int(t), channel_index=int(c))
                 for t, c in events]
    details = {
        "snr_db": snr, "mcs": mcs, "bad": bad, "true_p": true_p,
        "error": errors.astype(np.int64), "switches": len(events) - 1,
        "boost_multiplier": boost_mult, "rate_multiplier": rate_mult,
        "margin_delta_db": margin_delta,
    }
    return frames, ch_events, details


def generate_match_details(config: ScenarioConfig, seed: int, match_index: int = 0):
    """Generate one match plus per-frame ground-truth diagnostics."""
    match_rng = np.random.default_rng(np.random.SeedSequence([seed, match_index, 0]))
    occupancy = match_rng.uniform(-20.0, -5.0, size=config.n_channels)
    meta = MatchMeta(
        match_id=f"m{match_index:03d}",
        total_bandwidth_hz=config.total_bandwidth_hz,
        allocation=config.allocation,
        ref_power=config.ref_power,
        initial_channel=0,
        n_channels=config.n_channels,
        mcs_count=len(config.mcs_thresholds_db),
    )
    frames: list[FrameRecord] = []
    events: list[ChannelEvent] = []
    per_link = []
    for link in range(config.links_per_match):
        rng = _link_rng(seed, match_index, link)
        fr, ev, details = _generate_link(config, rng, link, occupancy)
        frames.extend(fr)
        events.extend(ev)
        per_link.append(details)
    return MatchLog(meta=meta, frames=frames, events=events), per_link


def generate_match(config: ScenarioConfig, seed: int, match_index: int = 0) -> MatchLog:
    return generate_match_details(config, seed, match_index)[0]


def generate_scrimmage(config: ScenarioConfig, seed: int) -> list[MatchLog]:
    return [generate_match(config, seed, i) for i in range(config.matches)]


# ----------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------

# Frozen after grid calibration against the headline targets (error rates
# 32.9% / 27.4%, switch rates 35 / 21 per link); see scripts/calibrate_presets.py
# and the shipped calibration reports.

_MCS_THRESHOLDS = tuple(float(-2 + 3 * i) for i in range(11))

_PRESETS = {
    "scr4": ScenarioConfig(
        matches=8, links_per_match=11, frames_per_link=2300,
        allocation="randomized", target_switches_per_link=35.0,
        snr=SnrProcess(mean_db=20.0, std_db=3.0, rho=0.97,
                       channel_offset_range_db=16.0, link_mean_spread_db=4.0,
                       impaired_fraction=0.09, impaired_offset_db=-16.0,
                       link_margin_spread_db=1.0),
        mcs_thresholds_db=_MCS_THRESHOLDS, mcs_lag_frames=4, mcs_backoff_db=0.55,
        burst=BurstModel(p_good_to_bad=0.009, p_bad_to_good=0.045, error_boost=0.57,
                         switch_trigger_prob=0.4, link_boost_spread=1.0,
                         link_rate_spread=1.0, bandwidth_exposure=0.3,
                         mcs_hunt_depth=2),
        logistic_scale_db=1.7,
        link_backoff_spread_db=1.5,
        bw_margin_db_per_octave=0.15,
    ),
    "scr5": ScenarioConfig(
        matches=9, links_per_match=11, frames_per_link=2100,
        allocation="fixed", target_switches_per_link=21.0,
        snr=SnrProcess(mean_db=20.0, std_db=3.0, rho=0.97,
                       channel_offset_range_db=10.0, link_mean_spread_db=4.0,
                       impaired_fraction=0.09, impaired_offset_db=-16.0,
                       link_margin_spread_db=1.0),
        mcs_thresholds_db=_MCS_THRESHOLDS, mcs_lag_frames=4, mcs_backoff_db=0.6,
        burst=BurstModel(p_good_to_bad=0.006, p_bad_to_good=0.045, error_boost=0.55,
                         switch_trigger_prob=0.4, link_boost_spread=1.0,
                         link_rate_spread=0.4, bandwidth_exposure=1.5,
                         mcs_hunt_depth=2),
        logistic_scale_db=1.7,
        link_backoff_spread_db=1.5,
        bw_margin_db_per_octave=1.2,
    ),
}

# Full-scale variants approximate the source dataset's shape (25 matches x ~11
# links for scr4, 59 x ~11 for scr5, ~20k frames per link); desk scale keeps
# the links-per-match ratio and trims matches and frames per link to land just
# over 200k frames per preset.
_FULL_SCALE = {
    "scr4": {"matches": 25, "links_per_match": 11, "frames_per_link": 23000},
    "scr5": {"matches": 59, "links_per_match": 11, "frames_per_link": 18600},
}

PRESET_TARGETS = {
    "scr4": {"error_rate": 0.329, "switches_per_link": 35.0},
    "scr5": {"error_rate": 0.274, "switches_per_link": 21.0},
}


def preset(name: str, full_scale: bool = False) -> ScenarioConfig:
    """Frozen scenario constants for scr4 (randomized) and scr5 (fixed)."""
    if name not in _PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from "
                                 f"{sorted(_PRESETS)}")
    cfg = _PRESETS[name]
    if full_scale:
        cfg = dataclasses.replace(cfg, **_FULL_SCALE[name])
    return cfg


def scaled_config(config: ScenarioConfig, frame_fraction: float,
                  matches: Optional[int] = None) -> ScenarioConfig:
    """Shrink frames per link while preserving per-frame rates: the switch
    target scales with the frame count so switch and burst dynamics are
    unchanged per frame. Used for runtime-bounded experiment variants."""
    if frame_fraction <= 0:
        raise ConfigurationError("frame_fraction must be positive")
    fpl = max(64, int(round(config.frames_per_link * frame_fraction)))
    rate = config.target_switches_per_link / config.frames_per_link
    return dataclasses.replace(
        config,
        frames_per_link=fpl,
        target_switches_per_link=rate * fpl,
        matches=config.matches if matches is None else matches,
    )


# ----------------------------------------------------------------------
# calibration measurement
# ----------------------------------------------------------------------

def calibration_summary(config: ScenarioConfig, seed: int,
                        preset_name: str = "") -> dict:
    """Generate a scrimmage and measure the statistics the presets are frozen
    against; written out as the calibration report."""
    n_frames = 0
    n_errors = 0
    true_p_sum = 0.0
    bad_frames = 0
    switch_counts = []
    snr_lo, snr_hi = np.inf, -np.inf
    for m in range(config.matches):
        _, per_link = generate_match_details(config, seed, m)
        for d in per_link:
            n_frames += d["error"].size
            n_errors += int(d["error"].sum())
            true_p_sum += float(d["true_p"].sum())
            bad_frames += int(d["bad"].sum())
            switch_counts.append(d["switches"])
            snr_lo = min(snr_lo, float(d["snr_db"].min()))
            snr_hi = max(snr_hi, float(d["snr_db"].max()))
    summary = {
        "preset": preset_name,
        "seed": seed,
        "matches": config.matches,
        "links": config.matches * config.links_per_match,
        "frames": n_frames,
        "error_rate": n_errors / n_frames,
        "expected_error_rate": true_p_sum / n_frames,
        "mean_switches_per_link": float(np.mean(switch_counts)),
        "bad_state_fraction": bad_frames / n_frames,
        "snr_range_db": [snr_lo, snr_hi],
    }
    if preset_name in PRESET_TARGETS:
        t = PRESET_TARGETS[preset_name]
        summary["targets"] = t
        summary["within_tolerance"] = bool(
            abs(summary["error_rate"] - t["error_rate"]) <= 0.02
            and abs(summary["mean_switches_per_link"] - t["switches_per_link"]) <= 5.0)
    return summary
