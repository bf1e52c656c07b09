"""Split a representation with a projector and watch the orthogonality penalty work.

    python demos/decomposition.py
"""

import numpy as np

from shapeerase import diffcore as dc
from shapeerase.subspace import Projector, decompose, mean_abs_cosine, ortho_penalty

rng = np.random.default_rng(0)

# A random projector: columns are nearly, but not exactly, orthonormal.
proj = Projector.random(64, 16, rng)
z = rng.standard_normal((5, 64))
z_sr, z_se = decompose(z, proj)
print("reconstruction error:", np.abs(z_sr.value @ proj.P.T + z_se.value - z).max())
print("penalty at init:     ", float(ortho_penalty(proj).value))
print("mean |cos| at init:  ", round(mean_abs_cosine(proj.P), 4))

# Minimise the penalty alone with plain gradient descent.
P = proj.P.copy()
for step in range(300):
    val, g = dc.value_and_grad(lambda p: ortho_penalty(p["P"]), {"P": P})
    P -= 0.002 * g["P"]
print("penalty after 300 steps:", round(val, 5), " mean |cos|:", round(mean_abs_cosine(P), 5))

# With orthonormal columns the two parts are orthogonal vectors.
Q, _ = np.linalg.qr(P)
q_sr, q_se = decompose(z, Q)
print("max |<P z_sr, z_se>| with orthonormal P:", np.abs(((q_sr.value @ Q.T) * q_se.value).sum(1)).max())
