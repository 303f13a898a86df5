"""Probe: does a larger spin-head output init remove the spin-error
plateau? Trains two inits for a few epochs on the desk dataset."""

import sys
import time

import numpy as np

import spinsight.autograd as ag
from spinsight import datagen, spt
from spinsight.autograd import Adam, Ema

t0 = time.time()
data_dir = sys.argv[1]
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 12
train = datagen.load_split(data_dir, "train")
val = datagen.load_split(data_dir, "val")[:200]
cfg = spt.SptConfig(variant="connect_stage", embedding="concatenation",
                    size="small")

for scale in (1.0, 10.0):
    params = spt.init_params(cfg, seed=7)
    params["spin_head.fc2.w"].data *= scale
    adam, ema = Adam(params, lr=3e-4), Ema(params)
    rng = np.random.default_rng(7)
    aug = spt.AugmentOptions(False, False, False)
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        for s in range(0, len(order), 64):
            chunk = [spt._load_pipeline(train[i], rng, aug, True)
                     for i in order[s:s + 64]]
            batch = spt.batch_from_records(chunk)
            loss = spt.spt_loss(cfg, spt.spt_forward(cfg, params, batch), batch)
            ag.backward(loss)
            adam.step()
            adam.zero_grad()
            ema.update(params)
        err = spt.validation_spin_error(cfg, ema.shadow, val)
        print(f"[{time.time() - t0:6.1f}s] scale={scale} epoch={epoch} "
              f"val={err:.2f}", flush=True)
