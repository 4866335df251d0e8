"""Scratch harness for iterating on scr4 constants against the qualitative
acceptance properties (architecture gap, pilot advantage) plus calibration.
"""
import dataclasses
import sys
import time

import numpy as np

from fepkit import evalsuite, models, tracegen
from fepkit.datamodel import assemble_features, build_frame_table


def variant(**kw):
    base = tracegen.preset("scr4")
    snr_kw = {k[4:]: v for k, v in kw.items() if k.startswith("snr_")}
    burst_kw = {k[6:]: v for k, v in kw.items() if k.startswith("burst_")}
    top = {k: v for k, v in kw.items() if not k.startswith(("snr_", "burst_"))}
    return dataclasses.replace(
        base,
        snr=dataclasses.replace(base.snr, **snr_kw),
        burst=dataclasses.replace(base.burst, **burst_kw),
        **top,
    )


def arch_gap(cfg, seed, epochs=12):
    table = build_frame_table(tracegen.generate_scrimmage(cfg, 100 + seed))
    split_spec = evalsuite.SplitSpec(mode="link_disjoint", seed=seed)
    feats = ["noise_variance", "mcs"]
    out = {}
    for arch, over in [("mlp", dict(epochs=30)),
                       ("gru", dict(epochs=epochs, learning_rate=5e-3,
                                    train_batch=128, chunks_per_step=16)),
                       ("bgru", dict(epochs=epochs, learning_rate=5e-3,
                                     train_batch=128, chunks_per_step=16))]:
        config = models.TrainConfig.for_architecture(arch, seed=seed, **over)
        _, rep = evalsuite.train_and_evaluate(table, split_spec, arch, feats,
                                              config, dataset="scr4")
        out[arch] = rep.weighted_accuracy
    return out


def pilot_gap(cfg, seed, epochs=12):
    table = build_frame_table(tracegen.generate_scrimmage(cfg, 300 + seed))
    feats = ["noise_variance", "mcs"]
    accs = {}
    for mode in ("pilot", "link_disjoint"):
        split_spec = evalsuite.SplitSpec(mode=mode, seed=seed)
        config = models.TrainConfig.for_architecture(
            "bgru", seed=seed, epochs=epochs, learning_rate=5e-3,
            train_batch=128, chunks_per_step=16)
        split = evalsuite.make_split(table, split_spec)
        view = assemble_features(table, feats, split.train)
        model = models.build(models.ArchitectureSpec("bgru", 2), seed=seed)
        models.train(model, view.select(split.train), view.select(split.val), config)
        test_view = view.select(split.test)
        pred = models.predict_labels(model, test_view, 128)
        low = test_view.snr_db < 10.0
        accs[mode] = float((pred[low] == test_view.y[low]).mean())
    return accs


def main():
    kw = {}
    for arg in sys.argv[1:]:
        k, v = arg.split("=", 1)
        kw[k] = float(v) if "." in v or "e" in v else int(v)
    seeds = kw.pop("seeds", 2)
    scale = kw.pop("scale", 0.25)
    pilot_matches = kw.pop("pilot_matches", None)
    cfg_full = variant(**kw)
    s = tracegen.calibration_summary(cfg_full, seed=7, preset_name="scr4")
    print(f"desk calib: err={s['error_rate']:.4f} switches={s['mean_switches_per_link']:.1f} "
          f"bad={s['bad_state_fraction']:.3f}")
    cfg = tracegen.scaled_config(cfg_full, scale)
    gaps, pgaps = [], []
    for seed in range(1, seeds + 1):
        t0 = time.perf_counter()
        g = arch_gap(cfg, seed)
        gaps.append(g)
        print(f"  seed {seed}: mlp={g['mlp']:.4f} gru={g['gru']:.4f} bgru={g['bgru']:.4f} "
              f"gap={100 * (g['bgru'] - g['mlp']):.1f}pp bg-g={100 * (g['bgru'] - g['gru']):.1f}pp "
              f"({time.perf_counter() - t0:.0f}s)")
        t0 = time.perf_counter()
        pcfg = cfg if pilot_matches is None else dataclasses.replace(cfg, matches=pilot_matches)
        p = pilot_gap(pcfg, seed)
        pgaps.append(p)
        print(f"  seed {seed}: pilot={p['pilot']:.4f} link={p['link_disjoint']:.4f} "
              f"gap={100 * (p['pilot'] - p['link_disjoint']):.1f}pp "
              f"({time.perf_counter() - t0:.0f}s)")
    mg = np.mean([g["bgru"] - g["mlp"] for g in gaps]) * 100
    mr = np.mean([g["bgru"] - g["gru"] for g in gaps]) * 100
    mp = np.mean([p["pilot"] - p["link_disjoint"] for p in pgaps]) * 100
    print(f"MEAN: bgru-mlp={mg:.1f}pp bgru-gru={mr:.1f}pp pilot={mp:.1f}pp")


if __name__ == "__main__":
    main()
