"""Eigen-gap speaker-count accuracy over k and separation/noise ratio.

    python scripts/speaker_count_sweep.py --seeds 20
"""

import argparse

from clusterdiar.clustering import estimate_num_speakers
from clusterdiar.pipeline import generate_synthetic_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--ratios", type=float, nargs="+", default=[2, 4, 8])
    ap.add_argument("--segments", type=int, default=40)
    args = ap.parse_args()

    print("ratio " + " ".join(f"k={k:<3}" for k in range(2, 7)))
    for ratio in args.ratios:
        row = []
        for k in range(2, 7):
            hits = sum(
                estimate_num_speakers(
                    generate_synthetic_corpus(k, args.segments, separation=ratio,
                                              noise_sigma=1.0, seed=s).embeddings.matrix
                ) == k
                for s in range(args.seeds)
            )
            row.append(f"{hits / args.seeds:5.2f}")
        print(f"{ratio:5g} " + " ".join(row))


if __name__ == "__main__":
    main()
