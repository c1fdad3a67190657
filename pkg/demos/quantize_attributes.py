# %% [markdown]
# Codebook size vs attribute error
#
# Compress a synthetic splat cloud at several codebook sizes and watch the
# per-group error fall. Runs in about a minute on one core.

# %%
import numpy as np

from gsvq import CompressionConfig, SceneSpec, compress, generate_cloud, train_codebooks
from gsvq.metrics import attribute_mse

cloud = generate_cloud(SceneSpec(4000, seed=0))
print(len(cloud), "splats")

# %% k-means alone vs k-means followed by noise-substituted training
for entries in (64, 128, 256, 512):
    cfg = CompressionConfig(entries_s=entries, entries_r=entries, entries_c=entries // 4,
                            entries_sh=entries // 4, prune=False, vq_steps=300)
    base = attribute_mse(cloud, train_codebooks(cloud, CompressionConfig(**{**cfg.to_dict(), "vq_steps": 0})))
    q = compress(cloud, cfg)
    row = "  ".join(f"{g}: {base[g]:.4f} -> {q.report['mse'][g]:.4f}" for g in ("s", "r", "c", "sh"))
    print(f"{entries:4d} entries | {row}")

# %% how evenly are the entries used?
hist = q.usage_histograms()
for g, h in hist.items():
    print(g, "active", f"{np.mean(h > 0):.2f}", "max share", f"{h.max() / h.sum():.3f}")
