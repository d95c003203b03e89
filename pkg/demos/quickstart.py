"""Walk through the full pipeline on a few short synthetic recordings.

Generates data, conditions it, trains a small split-stream detector for a
handful of epochs, picks per-class thresholds on the eval split and scores
the test split.  Runs in well under a minute; the model is far too small to be
accurate, the point is to show how the pieces fit together.  With a single test
record the index r2 is undefined and prints as nan.

    python3 demos/quickstart.py [out_dir]
"""

import logging
import sys
import tempfile
from pathlib import Path

from sleepdetect.network.model import ModelConfig
from sleepdetect.pipeline import fit_and_score, load_split
from sleepdetect.synthetic import SynthConfig, generate_dataset
from sleepdetect.training import TrainConfig


def main(out_dir):
    out_dir = Path(out_dir)
    synth = SynthConfig(duration=600.0)
    manifest = generate_dataset(6, synth, seed=0, out_dir=out_dir / "data")
    print("splits:", {s: len(manifest.subset(s)) for s in ("train", "eval", "test")})

    splits = {s: load_split(out_dir / "data" / "manifest.json", s) for s in ("train", "eval", "test")}
    record, events = splits["train"][0]
    print(f"first training record: {record.duration:.0f} s, {len(events)} events, channels {record.channels}")

    cfg = ModelConfig(f0=2, k_max=5, n_h=16, n_a=16, segment_length=30.0)
    tcfg = TrainConfig(batch_size=8, steps_per_epoch=20, max_epochs=4, eval_segments=16)
    result = fit_and_score(splits, cfg, tcfg, seed=0, out_dir=out_dir / "model")

    print("best epoch:", result.train.best_epoch)
    print("thresholds:", result.thresholds.thresholds)
    for label, agg in result.report.aggregate().items():
        print(f"{label:>3}: F1 {agg['f1']['mean']:.2f}  precision {agg['precision']['mean']:.2f}  "
              f"recall {agg['recall']['mean']:.2f}  index r2 {agg['r2']:.2f}")
    result.report.write(out_dir / "report")
    print("report written to", out_dir / "report")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="quickstart-"))
