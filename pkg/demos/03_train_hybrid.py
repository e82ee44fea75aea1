# Train the concatenated model on synthetic data with two small test backbones.
# Takes around half a minute on a laptop CPU.

# %%
import numpy as np

from concatnet import BackboneSpec, TrainingConfig, build_concatenated_model, predict, train
from concatnet.data import generate_synthetic_dataset, stratified_split

ds = generate_synthetic_dataset(150, side=128, seed=2024, noise_level=0.1)
split = stratified_split(ds, 0.8, seed=0)

# %%
spec_a = BackboneSpec("tiny_test", "w8")
spec_b = BackboneSpec("tiny_test", "w16")
model = build_concatenated_model(spec_a, spec_b, num_classes=3, seed=0, class_names=ds.class_names)
print("fused width", model.fused_dim, "=", spec_a.embedding_dim, "+", spec_b.embedding_dim)

# %%
# untrained backbones have nothing to transfer, so fine-tune everything
cfg = TrainingConfig(epochs=20, batch_size=5, freeze_backbones=False, learning_rate=1e-3, seed=0)
model, history, ckpt = train(model, split, cfg)
print(history.to_csv().splitlines()[0])
for line in history.to_csv().splitlines()[1::5]:
    print(line)

# %%
labels, probs = predict(model, split.test)
print("held-out accuracy", (labels == split.test.labels).mean())
print("first row of probabilities", probs[0].round(4))

# %%
# the real models are a one-line change (pretrained weights need network or a local file):
#   BackboneSpec("convnext", "tiny", pretrained=True)
#   BackboneSpec("efficientnet", "b0", pretrained=True)
