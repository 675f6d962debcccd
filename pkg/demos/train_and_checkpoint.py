"""
Training a toy model and shipping the adapter
=============================================

A one-block attention encoder learns which token is in the majority.  The
checkpoint stores only the seed and the scaling vectors.  Merging it into a
copy of the base weights gives an ordinary weight file.
"""

import tempfile
from pathlib import Path

import numpy as np

from vera import adapters as ad
from vera import checkpoints as ck
from vera import matcore as mc
from vera.adapters import AdapterConfig
from vera.harness import TaskSpec, TrainConfig, build_model, magnitude_report, train

task = TaskSpec.majority()
cfg = AdapterConfig(rank=8, master_seed=0)
model = build_model(cfg, d_model=32)
report = train(model, task, TrainConfig.for_task(task))
print(f"held-out accuracy {report.initial_accuracy:.3f} -> {report.final_accuracy:.3f} "
      f"with {model.adapter_trainable_count()} adapter values")

out = Path(tempfile.mkdtemp())
size = ck.save(model.adapted_layers(), cfg, out / "toy.vera")
print("checkpoint bytes:", size, "payload:", ck.payload_bytes(model.adapted_layers()))

# Base weights go to a VKWT file; merging writes another one.
mc.write_tensors(out / "base.vkwt", model.frozen_tensors())
ck.export_merged(out / "toy.vera", out / "base.vkwt", out / "merged.vkwt")
merged = mc.read_tensors(out / "merged.vkwt")
print("merged q equals in-memory merge:",
      np.array_equal(merged["block0.q"], ad.merge(model.blocks[0].q)))

# How far each scaling vector moved.
for row in magnitude_report(out / "toy.vera"):
    print(f"{row.layer}: |d - d_init| = {row.d_change_norm:.3f}, |b| = {row.b_norm:.3f}")
