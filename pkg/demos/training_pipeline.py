"""
Pre-training on masks, fine-tuning on sizes
===========================================

A small version of the full experiment: 8 images with masks, the rest with
only a size label. Writes checkpoints and metrics.csv to ./pipeline_run.
Takes a few minutes; raise COUNT for a closer match to the benchmark.
"""
from pathlib import Path

from sizeseg import TrainConfig, evaluate, finetune, generate_synthetic, pretrain, save_checkpoint, split_dataset
from sizeseg.training import write_metrics

COUNT = 352
out = Path("pipeline_run")
out.mkdir(exist_ok=True)

samples = generate_synthetic(COUNT, 32, 32, families=("disc", "ellipse"), seed=0)
split = split_dataset(samples, (0.75, 0.1, 0.15), m_full=8, seed=0)
print(len(split.train_full), "with masks,", len(split.train_weak), "with sizes only")

cfg = TrainConfig(m_full=8, lr_pretrain=5e-2, lr_finetune=1e-3, pretrain_max_epochs=600,
                  pretrain_patience=100, max_epochs=20, patience=5)
pre, rec_pre = pretrain(cfg, split)
res = evaluate(pre, split.test)
print(f"after pre-training: E {res.mean_E:.3f}, IoU {res.mean_IoU:.3f} ({len(rec_pre)} epochs)")

fine, rec_fine = finetune(cfg, pre, split)
res = evaluate(fine, split.test)
print(f"after fine-tuning:  E {res.mean_E:.3f}, IoU {res.mean_IoU:.3f} ({len(rec_fine)} epochs)")

save_checkpoint(pre, out / "pretrained.ckpt")
save_checkpoint(fine, out / "finetuned.ckpt")
write_metrics(rec_pre + rec_fine, out / "metrics.csv")
