"""Purity of base, latent and fused features as test noise grows.

    python scripts/fusion_sweep.py --seeds 3 --iterations 300

Each seed trains on clean data (separation 8, noise 1) and evaluates on
sessions drawn around the same speaker centroids at increasing noise.
"""

import argparse

import numpy as np

from clusterdiar.clustergan import ClusterGanConfig, encode, train
from clusterdiar.clustering import kmeans
from clusterdiar.pipeline import fuse, generate_synthetic_corpus, purity, speaker_centroids


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--noise", type=float, nargs="+", default=[1, 4, 8, 9, 10, 12, 16, 24, 32, 48])
    args = ap.parse_args()

    print(f"{'seed':>4} {'noise':>6} {'base':>6} {'latent':>6} {'fused':>6}")
    for seed in range(args.seeds):
        centroids = speaker_centroids(4, 512, 8.0, np.random.default_rng(seed))
        tr = generate_synthetic_corpus(4, 200, separation=8.0, noise_sigma=1.0,
                                       seed=seed + 100, centroids=centroids)
        cfg = ClusterGanConfig(d_c=4, iterations=args.iterations, seed=seed)
        model, _ = train(cfg, tr.embeddings.matrix, tr.labels)
        for noise in args.noise:
            te = generate_synthetic_corpus(4, 200, separation=8.0, noise_sigma=noise,
                                           seed=seed + 200, centroids=centroids)
            latent = encode(model, te.embeddings.matrix)
            p = [
                purity(te.labels, kmeans(f, 4).labels)
                for f in (te.embeddings.matrix, latent, fuse(te.embeddings, latent))
            ]
            print(f"{seed:4d} {noise:6g} {p[0]:6.3f} {p[1]:6.3f} {p[2]:6.3f}", flush=True)


if __name__ == "__main__":
    main()
