"""Check information identities exactly on small discrete systems.

    python demos/information_lab.py
"""

import numpy as np

from shapeerase import milab as M

print(M.format_report(M.verify_suite(trials=100, seed=0)))

# Sufficiency of Zs for Y is not enough on its own.  When the representation
# Zse reads both Y and the label-irrelevant part U of the shape view, knowing
# Zse couples Y and U, and the two interaction terms part ways by exactly
# I(Y; U | Zs, Zse).
rng = np.random.default_rng(1)
t = M.sufficient_system(rng, "collider")
lhs = M.interaction_info(t, "Zse", "Y", ("Zs", "U"))
rhs = M.interaction_info(t, "Zse", "Y", "Zs")
print(f"\ncollider system: I(Y;U|Zs) = {M.conditional_mi(t, 'Y', 'U', 'Zs'):.2e}")
print(f"  I(Zse;Y;Xs) = {lhs:.5f}, I(Zse;Y;Zs) = {rhs:.5f}, "
      f"I(Y;U|Zs,Zse) = {M.conditional_mi(t, 'Y', 'U', ('Zs', 'Zse')):.5f}")

# Orthogonal subspaces do not make the parts independent.
for name, cov in (("isotropic", [[1, 0], [0, 1]]), ("correlated", [[3, 1], [1, 1]])):
    print(f"{name:10s} Gaussian, plug-in MI between the parts: {M.projection_mi(cov, [1, 0.3]):.4f} nats")
