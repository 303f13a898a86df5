"""Pilot of the ablation direction checks: embedding and variant orderings
on 3 seeds at a reduced desk budget."""

import json
import sys
import time

import numpy as np

from spinsight import datagen, metrics, spt

t0 = time.time()
out_dir = sys.argv[1] if len(sys.argv) > 1 else "/tmp/abl_data"
n_valid = int(sys.argv[2]) if len(sys.argv) > 2 else 1200
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 30

datagen.generate_dataset(out_dir, n_valid=n_valid, seed=909)
train_recs = datagen.load_split(out_dir, "train")
val_recs = datagen.load_split(out_dir, "val")
test_recs = datagen.load_split(out_dir, "test")
gt_ball = np.stack([r.gt_spin_ball for r in test_recs])
gt_traj = [r.gt_traj_3d for r in test_recs]
classes = np.sign(gt_ball[:, 1]).astype(int)
print(f"[{time.time()-t0:6.1f}s] dataset ready "
      f"({len(train_recs)}/{len(val_recs)}/{len(test_recs)})", flush=True)

# ablations mirror the no-augmentation comparisons; camera randomization on
AUG_OFF = spt.AugmentOptions(False, False, False)


def run(variant, embedding, seed):
    cfg = spt.SptConfig(variant=variant, embedding=embedding, size="small",
                        spin_target_frame="world")
    result = spt.train(cfg, train_recs, val_recs, epochs=epochs,
                       batch_size=64, lr=1e-4, seed=seed, augment=AUG_OFF,
                       resample_cameras=True)
    trajs, ball = spt.predict_ball_spins(cfg, result.weights, test_recs)
    acc = metrics.spin_sign_accuracy(classes, ball[:, 1])
    traj_err = 100 * metrics.traj_error_world(trajs, gt_traj)
    spin_err = metrics.spin_error(ball, gt_ball)
    print(f"[{time.time()-t0:6.1f}s] seed={seed} {variant}/{embedding}: "
          f"acc={acc:.3f} traj={traj_err:.1f}cm spin={spin_err:.1f}Hz",
          flush=True)
    return {"acc": acc, "traj_cm": traj_err, "spin_hz": spin_err}


results = {}
for seed in (1, 2, 3):
    results[seed] = {
        "single": run("single_stage", "concatenation", seed),
        "two": run("two_stage", "concatenation", seed),
        "connect": run("connect_stage", "concatenation", seed),
        "ctx_free": run("connect_stage", "context_free", seed),
    }

print(json.dumps(results, indent=2), flush=True)
for seed, r in results.items():
    emb_ok = r["ctx_free"]["traj_cm"] > r["connect"]["traj_cm"]
    var_ok = (r["two"]["acc"] > r["single"]["acc"]
              and r["connect"]["acc"] > r["single"]["acc"])
    print(f"seed {seed}: embedding ordering {'OK' if emb_ok else 'FAIL'}, "
          f"variant ordering {'OK' if var_ok else 'FAIL'}", flush=True)
print(f"total {(time.time()-t0)/60:.1f} min", flush=True)
