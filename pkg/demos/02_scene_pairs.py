"""Synthetic scene pairs: what one pair contains and how its caption is built."""
import numpy as np

from r3net import datagen

config = datagen.GenConfig()  # 8x8 grid, 48 feature channels

for seed in range(6):
    pair = datagen.generate_pair(seed, config)
    print(f"seed {seed}: {pair.kind:<10s} jitter {pair.jitter}  ->  {' '.join(pair.caption)}")

# Look closer at one pair.  Every object occupies one cell; the change record
# says which cells differ.
pair = datagen.generate_pair(3, config)
print("\nbefore scene:")
for obj in pair.before:
    print("  ", obj.cell, " ".join(obj.describe()))
print("change:", pair.change.kind, "cells", pair.change.cells)

# Skeletons are the content words of the caption, as a multi-hot vector.
on = [datagen.SKELETONS[k] for k in np.flatnonzero(pair.skeletons)]
print("skeletons:", on)

# Encoded grids are N x C feature maps.  Without noise or jitter, only the
# changed cells differ between the two images.
quiet = datagen.GenConfig(noise_sigma=0.0, jitter_prob=0.0)
before, after = datagen.encode_pair(datagen.generate_pair(3, quiet), quiet)
moved = np.flatnonzero(np.abs(before - after).sum(axis=1) > 1e-12)
print("rows that differ:", [divmod(int(i), quiet.width) for i in moved])

# Captions parse back into their change kind; this is how change-type
# accuracy is scored.
print(datagen.parse_caption(pair.caption))

# A corpus is a list of pairs plus stacked grids and can be saved to disk.
corpus = datagen.build_corpus(300, seed=0, config=config)
print("\nkind counts over 300 pairs:", corpus.kind_counts())
