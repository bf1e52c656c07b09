"""Exact information measures on finite joint distributions.

A :class:`JointTable` stores a full probability mass function with one array
axis per named variable.  Every quantity is an exact finite sum in nats, so
identities between Shannon measures can be checked to floating-point
precision.  :func:`verify_suite` builds random systems that satisfy the
hypotheses of each claim about shape-erased features and checks the claim on
every one of them.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

Vars = Union[str, Sequence[str]]

MAX_ALPHABET = 8
MAX_VARIABLES = 5


class JointTable:
    """A pmf over the product of finite alphabets, one axis per variable."""

    def __init__(self, names: Sequence[str], pmf, atol: float = 1e-12):
        pmf = np.asarray(pmf, dtype=np.float64)
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names: {names}")
        if pmf.ndim != len(names):
            raise ValueError(f"pmf has {pmf.ndim} axes for {len(names)} variables")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise ValueError("pmf entries must be finite and non-negative")
        if abs(pmf.sum() - 1.0) > atol:
            raise ValueError(f"pmf sums to {pmf.sum()!r}, not 1")
        self.names = names
        self.pmf = pmf

    @property
    def sizes(self) -> Dict[str, int]:
        return dict(zip(self.names, self.pmf.shape))

    def axes(self, vars: Vars) -> Tuple[int, ...]:
        vars = _group(vars)
        missing = [v for v in vars if v not in self.names]
        if missing:
            raise KeyError(f"unknown variable(s) {missing}; table has {self.names}")
        return tuple(self.names.index(v) for v in vars)

    def marginal(self, vars: Vars) -> np.ndarray:
        """Marginal pmf with axes in the order given by ``vars``."""
        keep = self.axes(vars)
        drop = tuple(i for i in range(self.pmf.ndim) if i not in keep)
        m = self.pmf.sum(axis=drop)
        remaining = sorted(keep)
        return np.transpose(m, [remaining.index(k) for k in keep])

    def __repr__(self) -> str:
        return f"JointTable({', '.join(f'{k}:{v}' for k, v in self.sizes.items())})"


def _group(vars: Vars) -> Tuple[str, ...]:
    return (vars,) if isinstance(vars, str) else tuple(vars)


def _disjoint(*groups: Vars) -> List[Tuple[str, ...]]:
    out = [_group(g) for g in groups]
    seen = set()
    for g in out:
        if seen & set(g):
            raise ValueError(f"variable groups overlap: {[list(x) for x in out]}")
        seen |= set(g)
    return out


def _h(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def entropy(table: JointTable, vars: Vars) -> float:
    """Joint entropy of ``vars`` in nats (``0 log 0 = 0``)."""
    return _h(table.marginal(vars))


def mutual_info(table: JointTable, a: Vars, b: Vars) -> float:
    a, b = _disjoint(a, b)
    return entropy(table, a) + entropy(table, b) - entropy(table, a + b)


def conditional_mi(table: JointTable, a: Vars, b: Vars, given: Vars) -> float:
    a, b, c = _disjoint(a, b, given)
    return (entropy(table, a + c) + entropy(table, b + c)
            - entropy(table, a + b + c) - entropy(table, c))


def interaction_info(table: JointTable, a: Vars, b: Vars, c: Vars) -> float:
    """``I(A;B) - I(A;B|C)``, evaluated by inclusion-exclusion over joint entropies.

    Symmetric in its arguments and possibly negative.
    """
    a, b, c = _disjoint(a, b, c)
    H = lambda *gs: entropy(table, sum(gs, ()))
    return H(a) + H(b) + H(c) - H(a, b) - H(a, c) - H(b, c) + H(a, b, c)


def cross_entropy(table: JointTable, y: Vars, z: Vars, q: np.ndarray) -> float:
    """Expected ``-log q(y|z)`` under the table; ``q`` has axes ``z..., y...``."""
    pzy = table.marginal(_group(z) + _group(y))
    if q.shape != pzy.shape:
        raise ValueError(f"classifier table shape {q.shape} != {pzy.shape}")
    mask = pzy > 0
    return float(-np.sum(pzy[mask] * np.log(q[mask])))


def conditional(table: JointTable, y: Vars, z: Vars) -> np.ndarray:
    """``p(y|z)`` with axes ``z..., y...`` (rows with ``p(z) = 0`` left uniform)."""
    z, y = _group(z), _group(y)
    pzy = table.marginal(z + y)
    pz = pzy.sum(axis=tuple(range(len(z), len(z) + len(y))), keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(pz > 0, pzy / pz, 1.0 / np.prod(pzy.shape[len(z):]))
    return out


# --- building systems ---------------------------------------------------------

def dirichlet_cpt(rng: np.random.Generator, parent_sizes: Sequence[int], size: int) -> np.ndarray:
    """Conditional table with Dirichlet(1) rows; last axis is the child."""
    return rng.dirichlet(np.ones(size), size=tuple(parent_sizes)) if parent_sizes else rng.dirichlet(np.ones(size))


def random_table(rng: np.random.Generator, sizes: Dict[str, int]) -> JointTable:
    """Dirichlet(1) pmf over the whole product space."""
    _check_caps(sizes)
    shape = tuple(sizes.values())
    pmf = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
    return JointTable(tuple(sizes), pmf)


def _check_caps(sizes: Dict[str, int]):
    if len(sizes) > MAX_VARIABLES or any(s > MAX_ALPHABET or s < 1 for s in sizes.values()):
        raise ValueError(f"at most {MAX_VARIABLES} variables with alphabets of 1..{MAX_ALPHABET}: {sizes}")


def from_network(nodes: Sequence[Tuple[str, int, Sequence[str], np.ndarray]]) -> JointTable:
    """Joint pmf of a discrete Bayesian network.

    ``nodes`` lists ``(name, size, parents, cpt)`` in topological order; ``cpt``
    has one axis per parent (in order) followed by the child axis.
    """
    names = [n[0] for n in nodes]
    sizes = {n[0]: n[1] for n in nodes}
    letters = dict(zip(names, string.ascii_letters))
    operands, subs = [], []
    for name, size, parents, cpt in nodes:
        cpt = np.asarray(cpt, dtype=np.float64)
        expect = tuple(sizes[p] for p in parents) + (size,)
        if cpt.shape != expect:
            raise ValueError(f"cpt for {name} has shape {cpt.shape}, expected {expect}")
        if not np.allclose(cpt.sum(axis=-1), 1.0, atol=1e-12, rtol=0) or np.any(cpt < 0):
            raise ValueError(f"cpt for {name} is not a conditional distribution")
        operands.append(cpt)
        subs.append("".join(letters[p] for p in parents) + letters[name])
    pmf = np.einsum(",".join(subs) + "->" + "".join(letters[n] for n in names), *operands)
    return JointTable(names, pmf / pmf.sum())


def _sizes(rng, names, lo=2, hi=4):
    return {n: int(rng.integers(lo, hi + 1)) for n in names}


def sufficient_system(rng: np.random.Generator, kind: str = "two_view") -> JointTable:
    """A system where ``Zs`` is a sufficient statistic of the shape view ``Xs = (Zs, U)``.

    ``U`` is the part of the shape view that is irrelevant for ``Y`` given
    ``Zs``.  The representation ``Zse`` is generated by one of three
    mechanisms:

    * ``"two_view"``: from a separate modality view ``Xi`` of ``Y``;
    * ``"direct"``: from ``(Y, Zs)``;
    * ``"copy"``: ``Zs`` equals ``Y`` and ``Zse`` depends on ``(Y, U)`` arbitrarily;
    * ``"collider"``: ``Zse`` depends on ``(Y, U)`` with ``Zs`` a noisy copy of ``Y``.

    The first three also satisfy ``I(Y; Xs | Zs, Zse) = 0``, which the
    interaction identity needs; ``"collider"`` generally does not and serves
    as a counterexample.
    """
    s = _sizes(rng, ["Y", "Zs", "U", "Xi", "Zse"])
    if kind == "copy":
        s["Zs"] = s["Y"]
        return from_network([
            ("Y", s["Y"], [], dirichlet_cpt(rng, [], s["Y"])),
            ("Zs", s["Zs"], ["Y"], np.eye(s["Y"])),
            ("U", s["U"], [], dirichlet_cpt(rng, [], s["U"])),
            ("Zse", s["Zse"], ["Y", "U"], dirichlet_cpt(rng, [s["Y"], s["U"]], s["Zse"])),
        ])
    nodes = [
        ("Y", s["Y"], [], dirichlet_cpt(rng, [], s["Y"])),
        ("Zs", s["Zs"], ["Y"], dirichlet_cpt(rng, [s["Y"]], s["Zs"])),
        ("U", s["U"], ["Zs"], dirichlet_cpt(rng, [s["Zs"]], s["U"])),
    ]
    if kind == "two_view":
        nodes += [("Xi", s["Xi"], ["Y"], dirichlet_cpt(rng, [s["Y"]], s["Xi"])),
                  ("Zse", s["Zse"], ["Xi"], dirichlet_cpt(rng, [s["Xi"]], s["Zse"]))]
    elif kind == "direct":
        nodes += [("Zse", s["Zse"], ["Y", "Zs"], dirichlet_cpt(rng, [s["Y"], s["Zs"]], s["Zse"]))]
    elif kind == "collider":
        # Zse reads both Y and the irrelevant part U: sufficiency still holds, but
        # observing Zse couples Y and U, so the interaction terms can differ
        nodes += [("Zse", s["Zse"], ["Y", "U"], dirichlet_cpt(rng, [s["Y"], s["U"]], s["Zse"]))]
    else:
        raise ValueError(f"unknown system kind {kind!r}")
    return from_network(nodes)


def independent_system(rng: np.random.Generator) -> JointTable:
    """Sufficient system in which ``Zse`` is independent of ``Zsr = Zs`` by construction."""
    s = _sizes(rng, ["Zs", "Zse", "Y", "U"])
    return from_network([
        ("Zs", s["Zs"], [], dirichlet_cpt(rng, [], s["Zs"])),
        ("Zse", s["Zse"], [], dirichlet_cpt(rng, [], s["Zse"])),
        ("Y", s["Y"], ["Zs", "Zse"], dirichlet_cpt(rng, [s["Zs"], s["Zse"]], s["Y"])),
        ("U", s["U"], ["Zs"], dirichlet_cpt(rng, [s["Zs"]], s["U"])),
    ])


def two_view_system(rng: np.random.Generator) -> Tuple[JointTable, np.ndarray, np.ndarray]:
    """Random ``p(x1, x2)`` with representations ``p(z1|x1)`` and ``p(z2|x2)`` on one alphabet."""
    s = _sizes(rng, ["X1", "X2", "Z"])
    px = dirichlet_cpt(rng, [], s["X1"] * s["X2"]).reshape(s["X1"], s["X2"])
    z1 = dirichlet_cpt(rng, [s["X1"]], s["Z"])
    z2 = dirichlet_cpt(rng, [s["X2"]], s["Z"])
    table = JointTable(("X1", "X2", "Z1"), px[:, :, None] * z1[:, None, :])
    return table, z1, z2


def expected_kl(table: JointTable, z1: np.ndarray, z2: np.ndarray) -> float:
    """``E_{x1,x2} KL(p(z1|x1) || p(z2|x2))``."""
    px = table.marginal(("X1", "X2"))
    kl = np.sum(z1[:, None, :] * (np.log(z1)[:, None, :] - np.log(z2)[None, :, :]), axis=-1)
    return float(np.sum(px * kl))


# --- the suite ------------------------------------------------------------

@dataclass
class ClaimResult:
    claim: str
    lhs: float
    rhs: float
    gap: float
    passed: bool
    trials: int
    relation: str

    def as_dict(self) -> dict:
        return {"claim": self.claim, "relation": self.relation, "lhs": self.lhs, "rhs": self.rhs,
                "gap": self.gap, "pass": self.passed, "trials": self.trials}


def _equality(name, pairs, tol):
    gaps = [abs(l - r) for l, r in pairs]
    i = int(np.argmax(gaps))
    return ClaimResult(name, pairs[i][0], pairs[i][1], gaps[i], gaps[i] < tol, len(pairs), f"= (tol {tol:g})")


def _inequality(name, pairs, tol=1e-12):
    """Claim ``lhs <= rhs``; ``gap`` is the smallest slack ``rhs - lhs``."""
    slack = [r - l for l, r in pairs]
    i = int(np.argmin(slack))
    return ClaimResult(name, pairs[i][0], pairs[i][1], slack[i], slack[i] >= -tol, len(pairs), "<=")


def verify_suite(trials: int = 100, seed: int = 0) -> List[ClaimResult]:
    """Check every information-theoretic claim on freshly built random systems.

    ``trials`` sets the number of systems for the constructed-system claims;
    the cross-entropy bound always uses at least 1000 systems and the
    decomposition identity at least 50 four-variable tables.
    """
    rng = np.random.default_rng(seed)
    out: List[ClaimResult] = []

    # I(Z;Y|X) = I(Z;Y) - I(Z;Y;X); conditional MI from entropies, interaction by inclusion-exclusion
    pairs = []
    for _ in range(max(trials, 50)):
        t = random_table(rng, _sizes(rng, ["Z", "Y", "X", "W"], 2, 5))
        pairs.append((conditional_mi(t, "Z", "Y", "X"),
                      mutual_info(t, "Z", "Y") - interaction_info(t, "Z", "Y", "X")))
    out.append(_equality("cmi_decomposition", pairs, 1e-12))

    # sufficiency swaps the shape view for its representation inside the interaction term
    pairs, hyp = [], []
    kinds = ("two_view", "direct", "copy")
    for i in range(trials):
        t = sufficient_system(rng, kinds[i % 3])
        hyp.append(conditional_mi(t, "Y", "U", "Zs"))  # I(Y;Xs|Zs) with Xs = (Zs, U)
        pairs.append((interaction_info(t, "Zse", "Y", ("Zs", "U")), interaction_info(t, "Zse", "Y", "Zs")))
    out.append(_equality("sufficiency_hypothesis", [(h, 0.0) for h in hyp], 1e-12))
    out.append(_equality("interaction_shape_view_equals_representation", pairs, 1e-10))

    # I(Zse;Y;Zsr) <= I(Zse;Zsr), on arbitrary tables and on the constructed systems
    pairs = []
    for _ in range(trials):
        t = random_table(rng, _sizes(rng, ["Zse", "Y", "Zsr"], 2, 6))
        pairs.append((interaction_info(t, "Zse", "Y", "Zsr"), mutual_info(t, "Zse", "Zsr")))
        t = sufficient_system(rng, kinds[int(rng.integers(3))])
        pairs.append((interaction_info(t, "Zse", "Y", "Zs"), mutual_info(t, "Zse", "Zs")))
    out.append(_inequality("interaction_upper_bound", pairs))

    # with Zse independent of Zsr = Zs: I(Zse;Y|Xs) >= I(Zse;Y)
    pairs, indep = [], []
    for _ in range(trials):
        t = independent_system(rng)
        indep.append(mutual_info(t, "Zs", "Zse"))
        pairs.append((mutual_info(t, "Zse", "Y"), conditional_mi(t, "Zse", "Y", ("Zs", "U"))))
    out.append(_equality("independence_hypothesis", [(v, 0.0) for v in indep], 1e-12))
    out.append(_inequality("conditioning_on_shape_view_raises_mi", pairs))

    # cross-entropy of any classifier bounds H(Y|Z); equality at the true conditional
    bound, exact = [], []
    for _ in range(max(trials, 1000)):
        t = random_table(rng, _sizes(rng, ["Z", "Y"], 2, 8))
        h = entropy(t, ("Z", "Y")) - entropy(t, "Z")
        q = dirichlet_cpt(rng, [t.sizes["Z"]], t.sizes["Y"])
        bound.append((h, cross_entropy(t, "Y", "Z", q)))
        exact.append((cross_entropy(t, "Y", "Z", conditional(t, "Y", "Z")), h))
    out.append(_inequality("cross_entropy_bounds_conditional_entropy", bound))
    out.append(_equality("cross_entropy_equals_at_true_conditional", exact, 1e-10))

    # I(X1;Z1|X2) <= E KL(p(z1|x1) || p(z2|x2))
    pairs = []
    for _ in range(trials):
        t, z1, z2 = two_view_system(rng)
        pairs.append((conditional_mi(t, "X1", "Z1", "X2"), expected_kl(t, z1, z2)))
    out.append(_inequality("cross_view_cmi_kl_bound", pairs))
    return out


def format_report(results: Sequence[ClaimResult]) -> str:
    header = f"{'claim':48s} {'relation':14s} {'lhs':>14s} {'rhs':>14s} {'gap':>11s} {'trials':>6s}  result"
    lines = [header, "-" * len(header)]
    for r in results:
        lines.append(f"{r.claim:48s} {r.relation:14s} {r.lhs:14.8f} {r.rhs:14.8f} {r.gap:11.3e} "
                     f"{r.trials:6d}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


# --- orthogonality versus independence ---------------------------------------

def projection_mi(cov, direction, bins: int = 8, n_samples: int = 200_000, seed: int = 0) -> float:
    """Plug-in MI between the two coordinates of a 2-D Gaussian split by an orthogonal projector.

    ``z ~ N(0, cov)`` is split into its component along unit ``direction``
    and the orthogonal remainder; both are discretized into ``bins``
    equiprobable bins.  The result is data about how far orthogonality is
    from independence, not a pass/fail claim.
    """
    cov = np.asarray(cov, float)
    u = np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    w = np.array([-u[1], u[0]])
    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal(np.zeros(2), cov, size=n_samples)
    a, b = z @ u, z @ w

    def codes(v):
        edges = np.quantile(v, np.linspace(0, 1, bins + 1)[1:-1])
        return np.searchsorted(edges, v)

    counts = np.zeros((bins, bins))
    np.add.at(counts, (codes(a), codes(b)), 1.0)
    return mutual_info(JointTable(("Zsr", "Zse"), counts / counts.sum()), "Zsr", "Zse")
