"""One-shot verification of the qualitative acceptance properties against the
frozen presets, mirroring what tests/test_acceptance.py asserts."""
import dataclasses
import time

import numpy as np

from fepkit import evalsuite, models, tracegen
from fepkit.datamodel import assemble_features, build_frame_table


def rnn_config(arch, seed, epochs=16, window=128, group=16):
    return models.TrainConfig.for_architecture(
        arch, seed=seed, epochs=epochs, learning_rate=5e-3,
        train_batch=window, chunks_per_step=group)


def criterion5():
    cfg = tracegen.scaled_config(tracegen.preset("scr4"), 0.25)
    feats = ["noise_variance", "mcs"]
    split_spec = evalsuite.SplitSpec(mode="link_disjoint", seed=0)
    gaps, rel = [], []
    t0 = time.perf_counter()
    for seed in range(1, 6):
        table = build_frame_table(tracegen.generate_scrimmage(cfg, 100 + seed))
        wacc = {}
        for arch in ("mlp", "gru", "bgru"):
            config = models.TrainConfig.for_architecture("mlp", seed=seed, epochs=30) \
                if arch == "mlp" else rnn_config(arch, seed)
            _, rep = evalsuite.train_and_evaluate(
                table, dataclasses.replace(split_spec, seed=seed), arch, feats,
                config, dataset="scr4")
            wacc[arch] = rep.weighted_accuracy
        gaps.append(wacc["bgru"] - wacc["mlp"])
        rel.append(wacc["bgru"] - wacc["gru"])
        print(f"  seed {seed}: mlp={wacc['mlp']:.4f} gru={wacc['gru']:.4f} "
              f"bgru={wacc['bgru']:.4f}", flush=True)
    print(f"C5: bgru-mlp={100*np.mean(gaps):.1f}pp (need >=3) "
          f"bgru-gru={100*np.mean(rel):.1f}pp (need >=0) "
          f"[{time.perf_counter()-t0:.0f}s]", flush=True)


def criterion6():
    cfg = dataclasses.replace(
        tracegen.scaled_config(tracegen.preset("scr4"), 0.25), matches=4)
    feats = ["noise_variance", "mcs"]
    gaps = []
    t0 = time.perf_counter()
    for seed in range(1, 6):
        table = build_frame_table(tracegen.generate_scrimmage(cfg, 300 + seed))
        accs = {}
        for mode in ("pilot", "link_disjoint"):
            split_spec = evalsuite.SplitSpec(mode=mode, seed=seed)
            config = rnn_config("bgru", seed, window=64, group=8)
            split = evalsuite.make_split(table, split_spec)
            view = assemble_features(table, feats, split.train)
            model = models.build(models.ArchitectureSpec("bgru", 2), seed=seed)
            models.train(model, view.select(split.train), view.select(split.val), config)
            test_view = view.select(split.test)
            pred = models.predict_labels(model, test_view, 128)
            low = test_view.snr_db < 10.0
            accs[mode] = float((pred[low] == test_view.y[low]).mean())
        gaps.append(accs["pilot"] - accs["link_disjoint"])
        print(f"  seed {seed}: pilot={accs['pilot']:.4f} link={accs['link_disjoint']:.4f}",
              flush=True)
    print(f"C6: pilot gap={100*np.mean(gaps):.2f}pp (need >=2) "
          f"[{time.perf_counter()-t0:.0f}s]", flush=True)


def criterion7():
    cfg = dataclasses.replace(
        tracegen.scaled_config(tracegen.preset("scr4"), 0.12), matches=3)
    table = build_frame_table(tracegen.generate_scrimmage(cfg, 7))
    feats = ["noise_variance", "mcs"]
    split_spec = evalsuite.SplitSpec(mode="link_disjoint", seed=0)
    times = {}
    for arch in ("bgru", "bsru"):
        config = rnn_config(arch, 1, epochs=3)
        model, _ = evalsuite.train_and_evaluate(table, split_spec, arch, feats,
                                                config, dataset="scr4")
        times[arch] = float(np.median(model.history.wall_seconds))
    print(f"C7: bgru epoch {times['bgru']:.2f}s, bsru {times['bsru']:.2f}s, "
          f"ratio {times['bgru']/times['bsru']:.2f} (need >=1.5)", flush=True)


def criterion8():
    t0 = time.perf_counter()
    accs_cross, accs_same = [], []
    for seed in (1, 2, 3):
        scr4 = tracegen.scaled_config(tracegen.preset("scr4"), 0.25)
        scr5 = tracegen.scaled_config(tracegen.preset("scr5"), 0.25)
        spec = evalsuite.SplitSpec(mode="link_disjoint", seed=seed)
        config = models.TrainConfig.for_architecture("mlp", seed=seed, epochs=30)
        rep_cross = evalsuite.cross_train(scr5, scr4, spec, "mlp", config,
                                          features=["noise_variance", "mcs"], seed=seed)
        rep_same = evalsuite.cross_train(scr4, scr4, spec, "mlp", config,
                                         features=["noise_variance", "mcs"], seed=seed)
        accs_cross.append(rep_cross.accuracy)
        accs_same.append(rep_same.accuracy)
        print(f"  seed {seed}: scr5->scr4={rep_cross.accuracy:.4f} "
              f"scr4->scr4={rep_same.accuracy:.4f}", flush=True)
    diff = abs(np.mean(accs_cross) - np.mean(accs_same))
    print(f"C8: |diff|={100*diff:.2f}pp (need <=5) [{time.perf_counter()-t0:.0f}s]",
          flush=True)


if __name__ == "__main__":
    criterion7()
    criterion8()
    criterion6()
    criterion5()
