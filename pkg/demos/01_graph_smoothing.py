"""Walk through the graph machinery on a handful of 2-D points.

Three points sit close together, one sits far away. The Gaussian affinity
links the close ones strongly, symmetric normalization turns that into a
well-conditioned operator, and the smoothing solve (I - alpha*L)^-1
propagates values along the links.
"""

import numpy as np

from kgdistill import affinity, smoothing_solve, sym_normalize

np.set_printoptions(precision=3, suppress=True)

points = np.array([[0.0, 0.0], [0.4, 0.1], [0.2, 0.4], [5.0, 5.0]])
print("points:\n", points)

a = affinity(points, diag="zero")
print("\naffinity (diag=0): the outlier row is nearly disconnected\n", a)

l = sym_normalize(a)
print("\nsymmetrically normalized operator\n", l)

for alpha in (0.1, 0.5, 0.9):
    w = smoothing_solve(l, alpha)
    w = w / w.sum(axis=1, keepdims=True)
    print(f"\nrow-normalized smoothing weights at alpha={alpha}\n", w)

# Smoothing a per-node value spreads it along graph structure: give the
# first node value 1 and watch its neighbors pick it up as alpha grows.
value = np.array([[1.0], [0.0], [0.0], [0.0]])
for alpha in (0.1, 0.9):
    w = smoothing_solve(l, alpha)
    w = w / w.sum(axis=1, keepdims=True)
    print(f"\nsmoothed value at alpha={alpha}:", (w @ value).ravel())
