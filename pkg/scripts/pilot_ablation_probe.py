"""Single-seed probe of the ablation regime before freezing it into the
acceptance suite: stronger optimizer settings than the first attempt so
the compared models are meaningfully trained."""

import sys
import time

import numpy as np

from spinsight import datagen, metrics, spt

out_dir = sys.argv[1]
n_valid = int(sys.argv[2])
epochs = int(sys.argv[3])
lr = float(sys.argv[4])
batch = int(sys.argv[5])
seeds = [int(s) for s in sys.argv[6].split(",")]

t0 = time.time()
import os
if not os.path.exists(os.path.join(out_dir, "manifest.json")):
    datagen.generate_dataset(out_dir, n_valid=n_valid, seed=909)
train_recs = datagen.load_split(out_dir, "train")
val_recs = datagen.load_split(out_dir, "val")
test_recs = datagen.load_split(out_dir, "test")
gt_ball = np.stack([r.gt_spin_ball for r in test_recs])
gt_traj = [r.gt_traj_3d for r in test_recs]
classes = np.sign(gt_ball[:, 1]).astype(int)
print(f"[{time.time()-t0:6.1f}s] data {len(train_recs)}/{len(val_recs)}/{len(test_recs)}",
      flush=True)

no_aug = spt.AugmentOptions(False, False, False)


def run(variant, embedding, seed):
    cfg = spt.SptConfig(variant=variant, embedding=embedding, size="small",
                        spin_target_frame="world")
    res = spt.train(cfg, train_recs, val_recs, epochs=epochs, batch_size=batch,
                    lr=lr, seed=seed, augment=no_aug, resample_cameras=True)
    trajs, ball = spt.predict_ball_spins(cfg, res.weights, test_recs)
    acc = metrics.spin_sign_accuracy(classes, ball[:, 1])
    traj_cm = 100 * metrics.traj_error_world(trajs, gt_traj)
    spin = metrics.spin_error(ball, gt_ball)
    print(f"[{time.time()-t0:6.1f}s] seed={seed} {variant}/{embedding}: "
          f"acc={acc:.3f} traj={traj_cm:.1f}cm spin={spin:.1f}Hz", flush=True)
    return acc, traj_cm


for seed in seeds:
    a_single, _ = run("single_stage", "concatenation", seed)
    a_two, _ = run("two_stage", "concatenation", seed)
    a_conn, t_concat = run("connect_stage", "concatenation", seed)
    _, t_ctx = run("connect_stage", "context_free", seed)
    print(f"seed {seed}: emb {'OK' if t_ctx > t_concat else 'FAIL'} "
          f"({t_ctx:.1f} vs {t_concat:.1f}), variants "
          f"{'OK' if a_two > a_single and a_conn > a_single else 'FAIL'} "
          f"(single {a_single:.3f}, two {a_two:.3f}, connect {a_conn:.3f})",
          flush=True)
