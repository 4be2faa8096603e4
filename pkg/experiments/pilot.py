"""Desk-scale pilot: check adaptation direction and pretext learnability.

Not part of the test suite; used to pick/verify toy-shift defaults.
"""

import json
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from rotadapt.toyshift import (ToyShiftSpec, default_source_appearance,
                               generate_toy_shift)
from rotadapt.training import TrainConfig, train, evaluate, evaluate_pretext
from rotadapt.rotation import RELATIVE, ABSOLUTE


def split(samples, test_n=400):
    return samples[:-test_n], samples[-test_n:]


def main():
    seeds = [int(s) for s in sys.argv[1].split(",")] if len(sys.argv) > 1 else [0]
    methods = sys.argv[2].split(",") if len(sys.argv) > 2 else ["source-only", "relative-rotation"]
    epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 30
    lam_ent = float(sys.argv[4]) if len(sys.argv) > 4 else 0.1
    batch = int(sys.argv[5]) if len(sys.argv) > 5 else 64
    lr = float(sys.argv[6]) if len(sys.argv) > 6 else 3e-4
    lam_p = float(sys.argv[7]) if len(sys.argv) > 7 else 1.0
    drop = float(sys.argv[8]) if len(sys.argv) > 8 else 0.5
    wd = float(sys.argv[9]) if len(sys.argv) > 9 else 0.05
    size = int(sys.argv[10]) if len(sys.argv) > 10 else 64

    src_app = default_source_appearance()
    if len(sys.argv) > 11:
        src_app.depth_noise = float(sys.argv[11])
    spec = ToyShiftSpec(num_classes=4, samples_per_domain=2000, image_size=size,
                        seed=0, source=src_app)
    t0 = time.time()
    source, target = generate_toy_shift(spec)
    print(f"generated in {time.time()-t0:.1f}s", flush=True)
    src_train, src_test = split(source)
    tgt_train, tgt_test = split(target)

    results = {}
    for method in methods:
        pretext_domains = "both"
        real_method = method
        if method == "target-only":
            real_method = "relative-rotation"
            pretext_domains = "target-only"
        for seed in seeds:
            cfg = TrainConfig(method=real_method, pretext_domains=pretext_domains,
                              lambda_ent=lam_ent, batch_size=batch, lr=lr,
                              lambda_p=lam_p, dropout=drop, weight_decay=wd,
                              epochs=epochs, eval_every=epochs, seed=seed)
            t0 = time.time()
            bundle, metrics = train(cfg, src_train, tgt_train,
                                    source_eval=src_test, target_eval=tgt_test)
            wall = time.time() - t0
            row = metrics.rows[-1]
            rng = np.random.default_rng([seed, 555])
            pre_rel = evaluate_pretext(bundle, tgt_test, rng, task=RELATIVE, episodes=3)
            pre_abs = None
            if real_method == "absolute-rotation":
                rng = np.random.default_rng([seed, 556])
                pre_abs = evaluate_pretext(bundle, tgt_test, rng, task=ABSOLUTE, episodes=3)
            results[f"{method}/s{seed}"] = {
                "acc_target": row["acc_target"], "acc_source": row["acc_source"],
                "pretext_rel": pre_rel, "pretext_abs": pre_abs,
                "wall_s": round(wall, 1)}
            print(json.dumps({f"{method}/s{seed}": results[f"{method}/s{seed}"]}), flush=True)
    print("FINAL " + json.dumps(results), flush=True)


if __name__ == "__main__":
    main()
