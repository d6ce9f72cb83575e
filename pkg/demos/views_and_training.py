"""Build the text and image views of one window, then train a small model.

Uses a reduced configuration so it runs in about a minute on a laptop.

Run: python demos/views_and_training.py
"""
from prismnet.config import ExperimentConfig
from prismnet.experiment import TriModalDataset, train

cfg = ExperimentConfig(n_steps=2000, window=96, horizons=(24,), patch_len=16, patch_stride=16,
                       embed_dim=32, heads=2, text_dim=16, text_heads=2, gru_hidden=32,
                       batch_size=16, epochs=4, window_stride=4, lr=1e-3)
cfg.validate()
ds = TriModalDataset(cfg, 24)
w = ds.split("train")[0]

print("text view of the first training window:\n")
for view in ds.text_views(w, ds.text_variant(cfg))[:1]:
    print(view.text)

for label, c in [("full", cfg), ("no_cl", cfg.with_flag("no_cl"))]:
    res = train(c, 24, ds)
    print(f"\n{label}: val MAE {res.initial_val_mae:.4f} untrained -> {res.final_val_mae:.4f}"
          f" (best epoch {res.best_epoch})")
    last = res.loss_log[-1]
    print(f"  last step: prediction {last['l_prediction']:.4f}, rdn {last['l_rdn']:.4f},"
          f" syn {last['l_syn']:.4f}")
