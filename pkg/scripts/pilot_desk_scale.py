"""Pilot of the desk-scale experiment: 5000 valid trajectories, small
preset, connect-stage + concatenation, all augmentations, 100 epochs."""

import json
import sys
import time

import numpy as np

from spinsight import datagen, metrics, spt

t0 = time.time()
out_dir = sys.argv[1] if len(sys.argv) > 1 else "/tmp/pilot"
n_valid = int(sys.argv[2]) if len(sys.argv) > 2 else 5000
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 100
lr = float(sys.argv[4]) if len(sys.argv) > 4 else 1e-4

import os
if not os.path.exists(os.path.join(out_dir, "manifest.json")):
    datagen.generate_dataset(out_dir, n_valid=n_valid, seed=606)
print(f"[{time.time()-t0:7.1f}s] dataset done", flush=True)

train_recs = datagen.load_split(out_dir, "train")
val_recs = datagen.load_split(out_dir, "val")
test_recs = datagen.load_split(out_dir, "test")

cfg = spt.SptConfig(variant="connect_stage", embedding="concatenation",
                    size="small", spin_target_frame="world")


def progress(row):
    print(f"[{time.time()-t0:7.1f}s] epoch {row['epoch']:3d} "
          f"loss {row['train_loss']:.5f} val {row['val_spin_error_hz']:.2f} "
          f"best {row['best_val_spin_error_hz']:.2f}", flush=True)


result = spt.train(cfg, train_recs, val_recs, epochs=epochs, batch_size=64,
                   lr=lr, seed=7, progress=progress)

trajs, ball = spt.predict_ball_spins(cfg, result.weights, test_recs)
gt = np.stack([r.gt_spin_ball for r in test_recs])
spin_err = metrics.spin_error(ball, gt)
baseline = metrics.spin_error(np.zeros_like(gt), gt)
acc = metrics.spin_sign_accuracy(np.sign(gt[:, 1]).astype(int), ball[:, 1])
traj_err = metrics.traj_error_world(trajs, [r.gt_traj_3d for r in test_recs])
print(json.dumps({
    "spin_error_hz": spin_err, "baseline_hz": baseline,
    "ratio": spin_err / baseline, "sign_accuracy": acc,
    "traj_error_cm": 100 * traj_err,
    "minutes": (time.time() - t0) / 60}, indent=2), flush=True)
