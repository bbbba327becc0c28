"""
Training a small U-Net and comparing it with the baseline
=========================================================

This is a reduced version of the acceptance recipe so it finishes in
seconds: 256-pixel images, 32-pixel tiles, a depth-3 network and 40 epochs.
"""

import time

from xrdseg import pipeline as P
from xrdseg.unet import count_parameters

cfg = P.TrainConfig(window=32, step=32, depth=3, epochs=40, batch_size=10,
                    augment=True, max_tiles=60, seed=0)
train_items = P.synth_items(3, "battery", 256, seed=100)
test_items = P.synth_items(3, "battery", 256, seed=200, prefix="test")

# Tiles are sorted so the ones with the most artifact pixels come first,
# then a seeded 80% is drawn; max_tiles keeps the head of that selection.
store = P.prepare(train_items, cfg)
frac = store.labeled_fraction[store.train_index]
print(f"{len(store)} tiles after augmentation, training on {len(frac)} "
      f"(labeled fraction {frac.max():.3f} .. {frac.min():.3f})")

t0 = time.perf_counter()
model, record = P.train(cfg, store)
print(f"{count_parameters(model)} parameters, loss {record.epoch_loss[0]:.3f} -> "
      f"{record.epoch_loss[-1]:.4f} in {time.perf_counter() - t0:.0f} s")

unet = P.evaluate(P.unet_method(model, cfg.window), test_items, "unet")
target = unet.aggregate["recall"]

# A fixed k says little, since the baseline can always trade false positives
# for recall.  Loosen k until the baseline recovers as many artifact pixels
# as the network, then compare false positives.
lo, hi = 0.05, 20.0
for _ in range(25):
    mid = 0.5 * (lo + hi)
    rep = P.evaluate(P.baseline_method(k=mid), test_items, "")
    lo, hi = (mid, hi) if rep.aggregate["recall"] >= target else (lo, mid)
base = P.evaluate(P.baseline_method(k=lo), test_items, f"threshold k={lo:.2f}")

for rep in (unet, base):
    a = rep.aggregate
    print(f"{rep.method:>16}: recall {a['recall']:.3f}  specificity {a['specificity']:.4f}  "
          f"FP/image {a['mean_fp_per_image']:.0f}")
print(f"false-positive reduction at matched recall: {P.fp_reduction(unet, base):.0f}%")
