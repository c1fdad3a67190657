# %% [markdown]
# Where the bytes go
#
# Size breakdown of the .nvqg container for each named preset, and how the
# compression ratio approaches the per-splat limit of 1888 / 180 bits as the
# codebooks are amortised over more splats.

# %%
import numpy as np

from gsvq import QuantizedCloud, size_report
from gsvq.compressor import SIZE_PRESETS, size_entries
from gsvq.vq import Codebook


def placeholder(n, size):
    books = [Codebook(np.zeros((e, d), np.float32)) for e, d in zip(size_entries(size), (3, 4, 3, 45))]
    zeros = np.zeros(n, int)
    return QuantizedCloud(np.zeros((n, 3)), np.zeros(n), zeros, zeros, zeros, zeros, *books)


# %%
for size in SIZE_PRESETS:
    rep = size_report(placeholder(100_000, size))
    print(f"{size:>4s}: {rep['payload_bits_per_splat']} bits/splat, codebooks {rep['codebooks']:>9,d} B, "
          f"total {rep['total']:>9,d} B, ratio {rep['ratio']:.2f}x")

# %% amortisation at 16k
for n in (10**4, 10**5, 10**6, 10**7):
    print(f"N = {n:>10,d}: ratio {size_report(placeholder(n, '16k'))['ratio']:.2f}x  (limit {1888 / 180:.2f}x)")
