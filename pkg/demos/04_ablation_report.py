# Three-way comparison through the command line entry point, then the merged report.
# Writes into ./demo_run (well under a minute with the settings below).

# %%
from pathlib import Path

from concatnet.cli import main

out = Path("demo_run")
main(["synth", "--n", "60", "--seed", "2024", "--out", str(out / "data")])

# %%
main(["train", "--ablation", "--output", str(out / "run"),
      "--set", f"data.root={out / 'data'}",
      "--set", "data.class_names=[Normal, Liver, Aspergillosis]",
      "--set", "model.backbone_a={family: tiny_test, variant: w8}",
      "--set", "model.backbone_b={family: tiny_test, variant: w16}",
      "--set", "train.epochs=10",
      "--set", "train.freeze_backbones=false",
      "--set", "train.learning_rate=0.001"])

# %%
main(["evaluate", str(out / "run")])
print((out / "run" / "evaluation" / "metrics.csv").read_text())

# %%
# figures land next to the metrics
for p in sorted((out / "run" / "evaluation").rglob("*.png")):
    print(p)
