"""
==========================
Color normalization
==========================

Three shots of the same scene under different color casts are brought to a
common palette: the barycenter of their K-means palettes. Each image is then
moved toward the barycenter with its own regularized map.
"""

import itertools
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from relaxot import NormalizeParams, channel_distance, color_normalize, save_image
from relaxot.synthetic import scene_image

out = Path("demo_output")
out.mkdir(exist_ok=True)

##############################################################################
# Tinted inputs
# -------------

tints = [(1.0, 1.0, 1.0), (1.15, 0.9, 0.75), (0.8, 0.95, 1.2)]
images = [scene_image("flower", size=128, seed=10 + r, tint=t) for r, t in enumerate(tints)]

##############################################################################
# Normalize
# ---------

params = NormalizeParams(n_clusters=100, k=2, lam=0.005)
res = color_normalize(images, [1 / 3] * 3, params)
print(f"barycenter: {len(res.state.energy)} outer iterations")

pairs = list(itertools.combinations(range(3), 2))
for i, j in pairs:
    print(f"images {i},{j}: channel distance {channel_distance(images[i], images[j]):.3f} "
          f"-> {channel_distance(res.images[i], res.images[j]):.3f}")
for r, img in enumerate(res.images):
    save_image(img, out / f"normalized_{r}.png")

##############################################################################
# Plot
# ----

fig, axes = plt.subplots(2, 3, figsize=(9, 6))
for r in range(3):
    axes[0, r].imshow(images[r].to_array())
    axes[1, r].imshow(res.images[r].to_array())
    axes[0, r].set_title(f"input {r}")
    axes[1, r].set_title(f"normalized {r}")
for ax in axes.ravel():
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "color_normalization.png", dpi=100)
print("wrote", out / "color_normalization.png")
