"""Walk through the toy color-grid embedding on a few generated images.

The extractor splits an image into a g x g grid of cells and stacks the
mean RGB of each cell into one unit-norm vector, so visually similar
images land near each other in cosine space.
"""

import tempfile
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from crossview.embedding import load_image, toy_embed

workdir = Path(tempfile.mkdtemp(prefix="toy_embed_"))
print(f"writing demo images under {workdir}")

# three tiny scenes: red courtyard, blue lake, and a red/blue split
scenes = {
    "courtyard": np.full((32, 32, 3), (200, 40, 40), dtype=np.uint8),
    "lake": np.full((32, 32, 3), (30, 60, 210), dtype=np.uint8),
    "shoreline": np.zeros((32, 32, 3), dtype=np.uint8),
}
scenes["shoreline"][:, :16] = (200, 40, 40)
scenes["shoreline"][:, 16:] = (30, 60, 210)

paths = {}
for name, arr in scenes.items():
    path = workdir / f"{name}.png"
    PILImage.fromarray(arr).save(path)
    paths[name] = path

vectors = {}
for name, path in paths.items():
    vec = toy_embed(load_image(path), grid=2)
    vectors[name] = vec
    print(f"{name:10s} dim={vec.shape[0]}  first cell RGB = {np.round(vec[:3], 3)}")

print("\ncosine similarities (unit vectors, so just dot products):")
names = list(vectors)
for a in names:
    row = "  ".join(
        f"{np.dot(vectors[a].astype(np.float64), vectors[b].astype(np.float64)):+.3f}"
        for b in names
    )
    print(f"{a:10s} {row}")

print("\nthe split scene sits between the two solid scenes, as expected")
