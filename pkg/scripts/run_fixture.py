"""Train every sharing mode on the pinned synthetic fixture and compare against baselines.

    python scripts/run_fixture.py [--modes 1QKV,1QK-1V] [--epochs 12] [--pos-weight 0.1]
"""
import argparse
import time

import numpy as np

from qcluster import clusterset, metrics, qtransformer, trainer
from qcluster.config import TrainConfig
from qcluster.datagen import SynthSpec, synth_blobs

FIXTURE = SynthSpec(n_classes=20, samples_per_class=50, dim=16, sigma=0.25, min_separation=0.6, seed=7)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", default=",".join(qtransformer.SHARING_MODES))
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--pos-weight", type=float, default=0.1)
    ap.add_argument("--lr", type=float, default=0.02)
    ap.add_argument("--fusion-mode", default="per-position", choices=qtransformer.FUSION_MODES)
    args = ap.parse_args()

    fs = synth_blobs(FIXTURE)
    clusters = clusterset.knn_clusters(fs, 8)
    masks = np.concatenate([c.mask[1:] for c in clusters])
    print(f"fixture n={fs.n} dim={fs.dim} neighbor_positive_rate={masks.mean():.4f}")
    keep = metrics.evaluate_labels(fs.labels, trainer.link_with_constant(clusters, fs.n, 1.0))
    oracle = metrics.evaluate_labels(fs.labels, trainer.link_with_masks(clusters, fs.n))
    km = metrics.evaluate_labels(fs.labels, trainer.kmeans_baseline(fs, FIXTURE.n_classes, FIXTURE.seed))
    print(f"allkeep.bcubed_f={keep.bcubed_f!r}")
    print(f"maskoracle.bcubed_f={oracle.bcubed_f!r}")
    print(f"kmeans.bcubed_f={km.bcubed_f!r} kmeans.pairwise_f={km.pairwise_f!r}")

    for mode in args.modes.split(","):
        cfg = TrainConfig(k=8, n_qubits=4, sharing_mode=mode, fusion_mode=args.fusion_mode, epochs=args.epochs,
                          lr=args.lr, pos_weight=args.pos_weight, seed=7)
        t0 = time.perf_counter()
        ck = trainer.train(cfg, fs, clusters)
        elapsed = time.perf_counter() - t0
        counter = qtransformer.CircuitCounter()
        report, _, labels = trainer.evaluate(ck, fs, clusters, counter=counter)
        _, _, _, losses = trainer.unpack_checkpoint(ck)
        print(f"mode={mode} seconds={elapsed:.1f} clusters={labels.max() + 1} "
              f"qsa_evals_per_token={counter.qsa / (fs.n * 8)} losses={[round(x, 6) for x in losses]}")
        print(f"mode={mode} losses_repr={losses!r}")
        print(f"mode={mode} bcubed_f={report.bcubed_f!r} pairwise_f={report.pairwise_f!r}")


if __name__ == "__main__":
    main()
