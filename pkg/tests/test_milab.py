import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapeerase import milab as M


def table(names, pmf):
    return M.JointTable(names, np.asarray(pmf, float))


def test_entropy_examples():
    assert M.entropy(table("A", [0.5, 0.5]), "A") == pytest.approx(math.log(2), abs=1e-15)
    assert M.entropy(table("A", [0, 1, 0]), "A") == 0.0
    assert M.entropy(table("A", [0.25, 0.75]), "A") == pytest.approx(0.56233, abs=1e-5)


def test_mutual_information_examples():
    assert M.mutual_info(table("AB", np.full((2, 2), 0.25)), "A", "B") == pytest.approx(0, abs=1e-15)
    assert M.mutual_info(table("AB", np.eye(2) / 2), "A", "B") == pytest.approx(math.log(2), abs=1e-15)
    xor = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            xor[a, b, a ^ b] = 0.25
    assert M.interaction_info(table("ABC", xor), "A", "B", "C") == pytest.approx(-math.log(2), abs=1e-15)


def test_errors():
    t = table("AB", np.full((2, 2), 0.25))
    with pytest.raises(KeyError, match="Q"):
        M.entropy(t, "Q")
    with pytest.raises(ValueError, match="overlap"):
        M.mutual_info(t, ("A", "B"), "B")
    with pytest.raises(ValueError, match="sums to"):
        table("A", [0.5, 0.6])
    with pytest.raises(ValueError, match="non-negative"):
        table("A", [1.5, -0.5])
    with pytest.raises(ValueError, match="duplicate"):
        table("AA", np.full((2, 2), 0.25))
    with pytest.raises(ValueError, match="not a conditional"):
        M.from_network([("A", 2, [], np.array([0.5, 0.6]))])
    with pytest.raises(ValueError, match="at most"):
        M.random_table(np.random.default_rng(0), {"A": 9})


def test_marginal_axis_order(rng):
    t = M.random_table(rng, {"A": 2, "B": 3, "C": 4})
    np.testing.assert_allclose(t.marginal(("C", "A")), t.pmf.sum(1).T)


@settings(max_examples=20)
@given(seed=st.integers(0, 2**32 - 1))
def test_nonnegativity_and_chain(seed):
    rng = np.random.default_rng(seed)
    for _ in range(50):
        t = M.random_table(rng, {k: int(rng.integers(2, 5)) for k in "ABC"})
        assert M.mutual_info(t, "A", "B") >= -1e-15
        assert M.conditional_mi(t, "A", "B", "C") >= -1e-15
        lhs = M.mutual_info(t, "A", ("B", "C"))
        assert lhs == pytest.approx(M.entropy(t, "A") + M.entropy(t, ("B", "C")) - M.entropy(t, ("A", "B", "C")), abs=1e-12)


def test_decomposition_identity_on_random_tables(rng):
    gaps = []
    for _ in range(50):
        t = M.random_table(rng, {k: int(rng.integers(2, 5)) for k in "ZYXW"})
        gaps.append(abs(M.conditional_mi(t, "Z", "Y", "X")
                        - (M.mutual_info(t, "Z", "Y") - M.interaction_info(t, "Z", "Y", "X"))))
    assert max(gaps) < 1e-12


def test_label_copy_shape_view(rng):
    """Y uniform binary, shape view (Y, noise), shape representation = the Y component."""
    gaps = []
    for _ in range(100):
        k_noise, k_se = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        t = M.from_network([
            ("Y", 2, [], np.array([0.5, 0.5])),
            ("N", k_noise, [], M.dirichlet_cpt(rng, [], k_noise)),
            ("Zs", 2, ["Y"], np.eye(2)),
            ("Zse", k_se, ["Y", "N"], M.dirichlet_cpt(rng, [2, k_noise], k_se)),
        ])
        gaps.append(abs(M.interaction_info(t, "Zse", "Y", ("Zs", "N")) - M.interaction_info(t, "Zse", "Y", "Zs")))
    assert max(gaps) < 1e-12


def test_collider_breaks_the_interaction_identity(rng):
    """Sufficiency alone is not enough: the gap equals -I(Y; U | Zs, Zse) exactly."""
    worst = 0.0
    for _ in range(30):
        t = M.sufficient_system(rng, "collider")
        assert M.conditional_mi(t, "Y", "U", "Zs") < 1e-12
        gap = M.interaction_info(t, "Zse", "Y", ("Zs", "U")) - M.interaction_info(t, "Zse", "Y", "Zs")
        assert gap == pytest.approx(-M.conditional_mi(t, "Y", "U", ("Zs", "Zse")), abs=1e-12)
        worst = max(worst, -gap)
    assert worst > 1e-3


def test_cross_entropy_bound(rng):
    for _ in range(200):
        t = M.random_table(rng, {"Z": int(rng.integers(2, 6)), "Y": int(rng.integers(2, 6))})
        h = M.entropy(t, ("Z", "Y")) - M.entropy(t, "Z")
        q = M.conditional(t, "Y", "Z")
        assert M.cross_entropy(t, "Y", "Z", q) == pytest.approx(h, abs=1e-10)
        noisy = 0.7 * q + 0.3 * M.dirichlet_cpt(rng, [t.sizes["Z"]], t.sizes["Y"])
        assert M.cross_entropy(t, "Y", "Z", noisy) - h > 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_suite_passes(seed):
    results = M.verify_suite(trials=60, seed=seed)
    assert [r.claim for r in results if not r.passed] == []
    assert "PASS" in M.format_report(results)


def test_suite_is_deterministic():
    a = [r.as_dict() for r in M.verify_suite(10, 4)]
    assert a == [r.as_dict() for r in M.verify_suite(10, 4)]


def test_orthogonal_is_not_independent():
    assert M.projection_mi([[1, 0], [0, 1]], [1, 1]) < 0.002
    assert M.projection_mi([[3, 1], [1, 1]], [1, 0.3]) > 0.01
