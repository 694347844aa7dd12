"""
Plot a metrics.csv
==================

Validation E and IoU per epoch, one panel each, pre-training and
fine-tuning on one continuous epoch axis. Needs matplotlib.

    python3 demos/plot_metrics.py pipeline_run/metrics.csv curves.png
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from sizeseg.training import read_metrics

src = sys.argv[1] if len(sys.argv) > 1 else "pipeline_run/metrics.csv"
dst = sys.argv[2] if len(sys.argv) > 2 else "curves.png"
records = read_metrics(src)

fig, (ax_e, ax_iou) = plt.subplots(1, 2, figsize=(10, 3.5))
offset = 0
for phase, colour in (("pretrain", "tab:blue"), ("finetune", "tab:orange")):
    rs = [r for r in records if r.phase == phase]
    if not rs:
        continue
    x = [offset + r.epoch for r in rs]
    ax_e.plot(x, [r.val_E for r in rs], color=colour, label=phase)
    ax_iou.plot(x, [r.val_IoU for r in rs], color=colour, label=phase)
    offset = x[-1]
ax_e.set_yscale("log")
ax_e.set_ylabel("validation E")
ax_iou.set_ylabel("validation IoU")
for ax in (ax_e, ax_iou):
    ax.set_xlabel("epoch")
    ax.legend()
fig.tight_layout()
fig.savefig(dst, dpi=120)
print("wrote", dst)
