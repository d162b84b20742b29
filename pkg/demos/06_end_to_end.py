"""End-to-end miniature run: generate data, pretrain guidance, train the
registration model, then score it against the no-warp baseline.

Uses a small configuration so the whole loop finishes in a couple of
minutes on a CPU. The full desk-scale recipe is in the README.
"""

import argparse
from pathlib import Path

from ssmreg.config import TrainConfig
from ssmreg.metrics import evaluate_records, identity_baseline
from ssmreg.synth import SynthParams, write_synth_dataset
from ssmreg.train import pretrain_guidance, train_registration

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="demo_out/end_to_end")
ap.add_argument("--epochs", type=int, default=40)
args = ap.parse_args()

out = Path(args.out)
cfg = TrainConfig(image_size=(32, 32), code_channels=16, n_blocks=2,
                  d_state=2, unet_depth=2, unet_base=8,
                  epochs=args.epochs, batch_size=8)

print("generating 16 training pairs and 16 aligned pairs at 32x32 ...")
params = SynthParams(size=(32, 32), magnitude=3.0)
train_records = write_synth_dataset(out / "train", 16, params, seed=1)
aligned = write_synth_dataset(out / "aligned", 16,
                              SynthParams(size=(32, 32), magnitude=0.0),
                              seed=2)

print("stage 1: pretraining the guidance network ...")
g_net, g_hist = pretrain_guidance(aligned, cfg, out_dir=out / "guidance")
print(f"  recon loss {g_hist[0]['recon']:.4f} -> {g_hist[-1]['recon']:.4f}")

print(f"stage 2: training the registration model for {cfg.epochs} epochs ...")
stripped = [r.strip_labels() for r in train_records]
model, hist = train_registration(stripped, cfg, g_net, out_dir=out / "model")
print(f"  total loss {hist[0]['total']:.3f} -> {hist[-1]['total']:.3f}")

base = identity_baseline(train_records, cfg).aggregate()
got = evaluate_records(train_records, model, cfg).aggregate()
print(f"identity baseline: dice {100 * base.dice_weighted:.2f}  mse {base.mse:.5f}")
print(f"trained model:     dice {100 * got.dice_weighted:.2f}  mse {got.mse:.5f}")
print(f"dice gain {100 * (got.dice_weighted - base.dice_weighted):+.2f} points, "
      f"mse change {100 * (got.mse - base.mse) / base.mse:+.1f}%")
