"""Ideal-learner diagnostic for the pilot advantage: per-link memorization
of binned error rates vs cross-link binned rates, no neural net involved.
Upper-bounds what a pilot phase can buy at low SNR for a given generator
config, without training noise.
"""
import dataclasses
import sys

import numpy as np

from fepkit import evalsuite, tracegen
from fepkit.datamodel import build_frame_table
from tune_scr4 import variant


def oracle_gap(cfg, seed, low_db=10.0):
    table = build_frame_table(tracegen.generate_scrimmage(cfg, 300 + seed))
    snr = table.snr_db
    mcs = table.features["mcs"].astype(int)
    y = table.labels
    links = table.link_ids
    snr_bin = np.floor(snr / 2.0).astype(int)
    keys = (snr_bin + 50) * 100 + mcs

    def bin_rates(mask):
        rates = {}
        for k in np.unique(keys[mask]):
            rates[k] = y[mask & (keys == k)].mean()
        return rates

    out = {}
    # pilot: per-link rates from that link's first 40%, applied to its last 50%
    spec = evalsuite.SplitSpec(mode="pilot", seed=seed)
    split = evalsuite.make_split(table, spec)
    pred = np.zeros(table.n, dtype=int)
    global_rates = bin_rates(split.train)
    for link in np.unique(links):
        lm = links == link
        own = bin_rates(split.train & lm)
        te = np.flatnonzero(split.test & lm)
        for i in te:
            r = own.get(keys[i], global_rates.get(keys[i], y[split.train].mean()))
            pred[i] = int(r > 0.5)
    low = split.test & (snr < low_db)
    out["pilot"] = float((pred[low] == y[low]).mean())

    # link-disjoint: rates from train links only
    spec = evalsuite.SplitSpec(mode="link_disjoint", seed=seed)
    split = evalsuite.make_split(table, spec)
    rates = bin_rates(split.train)
    base = y[split.train].mean()
    te = np.flatnonzero(split.test)
    pred = np.zeros(table.n, dtype=int)
    for i in te:
        pred[i] = int(rates.get(keys[i], base) > 0.5)
    low = split.test & (snr < low_db)
    out["link_disjoint"] = float((pred[low] == y[low]).mean())
    return out


def main():
    kw = {}
    for arg in sys.argv[1:]:
        k, v = arg.split("=", 1)
        kw[k] = float(v) if "." in v or "e" in v else int(v)
    seeds = kw.pop("seeds", 6)
    scale = kw.pop("scale", 0.25)
    matches = kw.pop("matches", 8)
    cfg = dataclasses.replace(tracegen.scaled_config(variant(**kw), scale),
                              matches=matches)
    gaps = []
    for seed in range(1, seeds + 1):
        o = oracle_gap(cfg, seed)
        g = (o["pilot"] - o["link_disjoint"]) * 100
        gaps.append(g)
        print(f"  seed {seed}: pilot={o['pilot']:.4f} link={o['link_disjoint']:.4f} gap={g:.1f}pp")
    print(f"ORACLE MEAN gap: {np.mean(gaps):.2f}pp (min {min(gaps):.1f})")


if __name__ == "__main__":
    main()
