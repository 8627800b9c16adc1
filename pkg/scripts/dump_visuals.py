"""Partition maps and stage spectra for a quick look at what the model does.

Trains a small model briefly (or loads --ckpt), then writes PGM bucket
maps for every hash site and a radial spectrum CSV per stage. Probe
images can be larger than the training size; the network is fully
convolutional.
"""
import argparse
import os
import sys

from dualformer.analysis import dump_partitions, fourier_report, spectrum_to_csv
from dualformer.checkpoint import load_checkpoint
from dualformer.data import make_shapes
from dualformer.model import NUM_STAGES, build_model, get_preset
from dualformer.train import train_toy


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ckpt", help="reuse a trained checkpoint instead of training")
    ap.add_argument("--out-dir", default="visuals")
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--probe-size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)

    if args.ckpt:
        model = load_checkpoint(args.ckpt)
    else:
        images, labels = make_shapes(800, seed=args.seed)
        model = build_model(get_preset("Micro"), seed=args.seed)
        train_toy(model, images, labels, epochs=args.epochs, seed=args.seed, log=print)

    probes, _ = make_shapes(16, seed=args.seed + 1, size=args.probe_size)
    paths = dump_partitions(model, probes, os.path.join(args.out_dir, "partitions"))
    print(f"wrote {len(paths)} partition maps")
    for stage in range(1, NUM_STAGES + 1):
        report = fourier_report(model, probes, stage)
        path = os.path.join(args.out_dir, f"spectrum_stage{stage}.csv")
        with open(path, "w") as fh:
            fh.write(spectrum_to_csv(report["radii"], report["db"]))
        print(
            f"stage {stage}: grid {report['grid'][0]}x{report['grid'][1]}, "
            f"high-freq mean {report['high_freq_mean']:.2f} dB -> {path}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
