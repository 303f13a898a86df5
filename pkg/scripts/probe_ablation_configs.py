"""Train selected ablation configurations on an existing dataset and
report test-split sign accuracy / trajectory error."""

import sys
import time

import numpy as np

from spinsight import datagen, metrics, spt

data_dir = sys.argv[1]
epochs = int(sys.argv[2])
lr = float(sys.argv[3])
seed = int(sys.argv[4])
configs = sys.argv[5].split(",")   # e.g. single:concatenation,two:concatenation

NAMES = {"single": "single_stage", "two": "two_stage", "connect": "connect_stage",
         "ctx": "context_free", "concat": "concatenation"}

t0 = time.time()
train_recs = datagen.load_split(data_dir, "train")
val_recs = datagen.load_split(data_dir, "val")
test_recs = datagen.load_split(data_dir, "test")
gt_ball = np.stack([r.gt_spin_ball for r in test_recs])
gt_traj = [r.gt_traj_3d for r in test_recs]
classes = np.sign(gt_ball[:, 1]).astype(int)
no_aug = spt.AugmentOptions(False, False, False)

for spec in configs:
    variant_key, embedding_key = spec.split(":")
    cfg = spt.SptConfig(variant=NAMES[variant_key],
                        embedding=NAMES.get(embedding_key, embedding_key),
                        size="small", spin_target_frame="world")
    def progress(row):
        print(f"[{time.time()-t0:7.1f}s] {spec} e{row['epoch']:3d} "
              f"val={row['val_spin_error_hz']:.2f}", flush=True)

    res = spt.train(cfg, train_recs, val_recs, epochs=epochs, batch_size=64,
                    lr=lr, seed=seed, augment=no_aug, resample_cameras=True,
                    progress=progress)
    trajs, ball = spt.predict_ball_spins(cfg, res.weights, test_recs)
    acc = metrics.spin_sign_accuracy(classes, ball[:, 1])
    traj_cm = 100 * metrics.traj_error_world(trajs, gt_traj)
    spin = metrics.spin_error(ball, gt_ball)
    print(f"[{time.time()-t0:7.1f}s] seed={seed} {spec} epochs={epochs} "
          f"lr={lr}: acc={acc:.3f} traj={traj_cm:.1f}cm spin={spin:.1f}Hz "
          f"(best val {res.best_val_spin_error:.1f} @e{res.best_epoch})",
          flush=True)
