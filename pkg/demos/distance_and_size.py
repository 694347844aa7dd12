"""
Distance transform and object size
==================================

The size of a binary mask is twice the largest Chebyshev distance from a
foreground pixel to the nearest background pixel. For a filled square of
side k (odd) that is k + 1; for a disc of radius r roughly 2r.
"""
import numpy as np

from sizeseg import FOREGROUND, BACKGROUND, chebyshev_dt, object_size, flip_size_table_fast

# a 3x3 block in a 7x7 grid
m = np.full((7, 7), BACKGROUND)
m[2:5, 2:5] = FOREGROUND
print(chebyshev_dt(m))
print("size:", object_size(m))

# a disc
rr, cc = np.mgrid[0:33, 0:33]
disc = np.where((rr - 16) ** 2 + (cc - 16) ** 2 <= 10 ** 2, FOREGROUND, BACKGROUND)
print("disc of radius 10, size:", object_size(disc))

# thin shapes are small no matter how long
bar = np.full((9, 40), BACKGROUND)
bar[4, 2:38] = FOREGROUND
print("one-pixel bar, size:", object_size(bar))

# what every single-pixel flip would do to the size of the block
table = flip_size_table_fast(m)
print("base size", table.base_size)
print(table.flipped_sizes)
# only the centre matters when removed; lone background pixels matter when added
