# Confusion matrix, one-vs-rest metrics and ROC on a small hand-made example.

# %%
import numpy as np

from concatnet.metrics import build_report, confusion_matrix, ovr_counts, render_text, roc_curve

names = ["Normal", "Liver", "Aspergillosis"]
y_true = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, 2])
y_pred = np.array([0, 0, 1, 1, 1, 2, 2, 2, 2, 0])

cm = confusion_matrix(y_true, y_pred, 3, names)
print(cm.counts)  # rows = true, columns = predicted

# %%
# one-vs-rest counts for Liver
print(ovr_counts(cm, 1))

# %%
# a single binary ROC curve; thresholds sweep from above the top score downwards
roc = roc_curve([1, 0, 1, 0], [0.8, 0.7, 0.6, 0.2])
for f, t, th in zip(roc.fpr, roc.tpr, roc.thresholds):
    print(f"thr {th:4.1f}  fpr {f:.2f}  tpr {t:.2f}")
print("auc", roc.auc)

# %%
# the full report needs class probabilities as well
rng = np.random.default_rng(0)
probs = rng.dirichlet(np.ones(3), size=len(y_true))
probs[np.arange(len(y_true)), y_pred] += 1.0
probs /= probs.sum(axis=1, keepdims=True)
report = build_report(y_true, y_pred, probs, names)
print(render_text({"Example": report}))
print("macro AUC", round(report.macro_auc, 4))
