"""Self-supervised subtask targets: anchors, distances, offsets and smoothing."""

import numpy as np

from mmss.ssplabel import AnchorState, PseudoLabelStore, SspConfig, advance_epoch, ewma_update, raw_pseudo_label

rng = np.random.default_rng(3)
labels = rng.integers(0, 5, size=40).astype(float)
global_reps = rng.normal(size=(40, 8)) + labels[:, None] * 0.3
subtask_reps = rng.normal(size=(40, 8))

# %% epoch 1: gather statistics, targets are the gold labels
anchors, store = AnchorState(), PseudoLabelStore()
for i in range(40):
    anchors.accumulate("global", labels[i], global_reps[i])
    anchors.accumulate("ptrt", labels[i], subtask_reps[i])
    ewma_update(store, f"r{i}", "ptrt", raw_target=None, y_g=labels[i])
anchors.finalize_all()
advance_epoch(store, anchors)
print("epoch", store.epoch, "beta", round(store.beta, 4))

# %% from epoch 2 on, distances to the previous anchors shift each target
cfg = SspConfig()
for epoch in range(2, 16):
    for i in range(3):
        chi_g = anchors.distance("global", global_reps[i])
        chi_s = anchors.distance("ptrt", subtask_reps[i])
        raw = raw_pseudo_label(cfg, labels[i], chi_g, chi_s)
        ewma_update(store, f"r{i}", "ptrt", raw, labels[i])
    advance_epoch(store, anchors)

for i in range(3):
    trail = [round(v, 3) for e, rid, _, v in store.history if rid == f"r{i}"]
    print(f"r{i} gold {labels[i]:.0f}:", trail[:4], "...", trail[-1])
