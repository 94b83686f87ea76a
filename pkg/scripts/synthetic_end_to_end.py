"""Train on a synthetic 4-speaker corpus, then diarize and score it.

    python scripts/synthetic_end_to_end.py --iterations 2000

Prints latent purity, argmax accuracy, DER with the true speaker count, and
the eigen-gap estimate.
"""

import argparse
import time

import numpy as np

from clusterdiar.clustergan import ClusterGanConfig, encode, predict_speakers, train
from clusterdiar.clustering import kmeans
from clusterdiar.pipeline import diarize, generate_synthetic_corpus, purity
from clusterdiar.scoring import optimal_speaker_map, score


def mapped_accuracy(true, pred, k):
    conf = np.zeros((k, k))
    np.add.at(conf, (true, pred), 1)
    return sum(conf[r, c] for r, c in optimal_speaker_map(conf).items()) / len(true)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--speakers", type=int, default=4)
    ap.add_argument("--segments", type=int, default=200, help="windows per speaker")
    ap.add_argument("--dim", type=int, default=512)
    ap.add_argument("--separation", type=float, default=8.0)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    k = args.speakers
    corp = generate_synthetic_corpus(
        k, args.segments, args.dim, args.separation, args.noise, seed=args.seed + 1
    )
    cfg = ClusterGanConfig(d_c=k, embedding_dim=args.dim, iterations=args.iterations, seed=args.seed)
    t0 = time.perf_counter()

    def progress(rec):
        if rec["iteration"] % max(1, args.iterations // 10) == 0:
            print(
                f"it {rec['iteration']:6d}  critic {rec['critic_loss']:+.4f}  "
                f"gen {rec['generator_loss']:+.4f}  cos {rec['cos']:.4f}  ce {rec['ce']:.4f}"
            )

    model, _ = train(cfg, corp.embeddings.matrix, corp.labels, on_iteration=progress)
    print(f"trained {args.iterations} iterations in {time.perf_counter() - t0:.0f}s")

    x = corp.embeddings.matrix
    latent = encode(model, x)
    print(f"latent k-means purity  {purity(corp.labels, kmeans(latent, k).labels):.4f}")
    print(f"encoder argmax accuracy {mapped_accuracy(corp.labels, predict_speakers(model, x), k):.4f}")
    known = diarize(model, corp.timeline, corp.embeddings, k)
    print(f"DER (known k)          {score(corp.reference, known.to_rttm()).der:.2f}%")
    est = diarize(model, corp.timeline, corp.embeddings)
    print(f"eigen-gap estimate     {est.num_speakers}")


if __name__ == "__main__":
    main()
