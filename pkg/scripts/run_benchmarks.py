"""Partitioner and forward-pass throughput on this machine.

Writes two CSVs next to --out-dir and prints a short summary. The
partition workload (n=3136, d=64, K=8, 5 Lloyd iterations) matches the
stage-1 token count of a 224x224 input.
"""
import argparse
import os
import sys

from dualformer.bench import forward_throughput, partition_comparison, rows_to_csv
from dualformer.model import build_model, get_preset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="bench_out")
    ap.add_argument("--repeats", type=int, default=9)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--presets", nargs="*", default=["Micro", "T"])
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)

    result = partition_comparison(repeats=args.repeats, seed=args.seed)
    with open(os.path.join(args.out_dir, "partition_throughput.csv"), "w") as fh:
        fh.write(rows_to_csv([result["lsh"], result["kmeans"]]))
    print(f"partitioners: lsh/kmeans speedup {result['speedup']:.2f}x")

    rows = []
    for name in args.presets:
        model = build_model(get_preset(name), seed=args.seed)
        res = 32 if name == "Micro" else 224
        row = forward_throughput(model, batch=2, height=res, width=res, seed=args.seed)
        rows.append(row)
        print(f"{name}: {row['median_images_per_sec']:.2f} images/s at {row['resolution']}")
    with open(os.path.join(args.out_dir, "forward_throughput.csv"), "w") as fh:
        fh.write(rows_to_csv(rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
