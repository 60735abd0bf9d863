"""Stitched vs naively concatenated long-form transcripts under chunk noise.

Synthetic token streams are placed on a timeline (2 tokens/s), cut into
overlapping chunks, each chunk is corrupted independently, and the merged
output is scored against the clean stream.

    python scripts/longform_robustness.py --tokens 5000 --trials 50
"""
import argparse
import random
import statistics

from cascade_st.backends import TimelineASR
from cascade_st.longform import plan_chunks, stitch_texts
from cascade_st.metrics import edit_cost


def stream(n, seed, vocab=500):
    rng = random.Random(seed)
    return [f"w{rng.randrange(vocab)}" for _ in range(n)]


def trial(n_tokens, noise, seed, chunk_s, overlap_s, window):
    tokens = stream(n_tokens, seed)
    asr = TimelineASR({"a": [(i / 2, t) for i, t in enumerate(tokens)]}, noise=noise, seed=seed)
    texts = [asr.transcribe("a", s, e, 1).texts[0] for s, e in plan_chunks(n_tokens / 2, chunk_s, overlap_s)]
    merged, traces = stitch_texts(texts, window)
    naive = " ".join(texts).split()
    n = len(tokens)
    return (100 * edit_cost(merged, tokens) / n, 100 * edit_cost(naive, tokens) / n,
            sum(t.fallback for t in traces))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--tokens", type=int, default=5000)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.05, 0.1, 0.2, 0.3])
    p.add_argument("--chunk", type=float, default=30.0)
    p.add_argument("--overlap", type=float, default=10.0)
    p.add_argument("--window", type=int, default=20)
    args = p.parse_args()

    print(f"{'noise':>6} {'merged WER':>11} {'naive WER':>10} {'merged<=naive':>14} {'fallbacks':>10}")
    for noise in args.noise:
        rows = [trial(args.tokens, noise, s, args.chunk, args.overlap, args.window) for s in range(args.trials)]
        merged = statistics.mean(r[0] for r in rows)
        naive = statistics.mean(r[1] for r in rows)
        wins = sum(r[0] <= r[1] for r in rows)
        print(f"{noise:6.2f} {merged:11.2f} {naive:10.2f} {wins:>9}/{args.trials:<4} {sum(r[2] for r in rows):10d}")


if __name__ == "__main__":
    main()
