import itertools
import math

import numpy as np
import pytest

from snnas.genotype import (NONE_INDEX, OPS, Genotype, GenotypeError, derive_cell, derive_genotype,
                            edge_count, edge_index, random_genotype, saturated_alphas,
                            search_space_size)


# ------------------------------------------------------------------ counting

def _enumerate_cells(nodes, ops):
    """Every distinct cell: per node an unordered pair of distinct sources, each with a non-none op."""
    per_node = []
    for i in range(nodes):
        choices = set()
        for a, b in itertools.combinations(range(i + 2), 2):
            for oa in range(ops - 1):
                for ob in range(ops - 1):
                    choices.add(frozenset({(a, oa), (b, ob)}))
        per_node.append(len(choices))
    return math.prod(per_node)


def test_search_space_size_matches_enumeration():
    for nodes in (1, 2, 3):
        for ops in (2, 3, 4):
            assert search_space_size(nodes, ops) == _enumerate_cells(nodes, ops)


def test_search_space_size_values():
    assert search_space_size(4, 8, 1) == 1 * 3 * 6 * 10 * 7 ** 8 == 1_037_664_180
    assert search_space_size(4, 8, 5) == 5_188_320_900
    assert search_space_size(1, 2) == 1
    big = search_space_size(20, 8, 10)
    assert isinstance(big, int) and big > 2 ** 64
    with pytest.raises(ValueError):
        search_space_size(0)


def test_edge_indexing():
    assert edge_count(4) == 14
    rows = [edge_index(i, j) for i in range(4) for j in range(i + 2)]
    assert rows == list(range(14))


# ------------------------------------------------------------------ derivation oracle

def _softmax(a):
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / np.array([[math.fsum(r)] for r in e])


def brute_force_cell(alpha, nodes=4):
    """Exhaustive search over every edge pair and op pair per node.

    Candidates are visited in (lower edge, lower op) order and only a strictly
    better total replaces the incumbent, which realizes the tie rule.
    """
    w = _softmax(np.asarray(alpha, dtype=np.float64))
    cell = []
    for i in range(nodes):
        best, best_val = None, -np.inf
        for a, b in itertools.combinations(range(i + 2), 2):
            ra, rb = edge_index(i, a), edge_index(i, b)
            for oa in range(len(OPS)):
                for ob in range(len(OPS)):
                    if NONE_INDEX in (oa, ob):
                        continue
                    val = w[ra, oa] + w[rb, ob]
                    if val > best_val:
                        best, best_val = [(a, OPS[oa]), (b, OPS[ob])], val
        cell.append(best)
    return cell


def _alpha_batch(rng, n):
    for k in range(n):
        mode = k % 4
        if mode == 0:
            yield rng.standard_normal((14, 8))
        elif mode == 1:  # small integer grid: many exact ties
            yield rng.integers(-2, 3, (14, 8)).astype(np.float64)
        elif mode == 2:  # rows that are permutations of one another
            base = rng.integers(-3, 3, 8).astype(np.float64)
            yield np.stack([rng.permutation(base) for _ in range(14)])
        else:  # none-dominated rows mixed with normal ones
            a = rng.standard_normal((14, 8))
            a[rng.random(14) < 0.5, NONE_INDEX] += 10
            yield a


def test_derive_matches_brute_force(rng):
    for a in _alpha_batch(rng, 400):
        assert derive_cell(a) == brute_force_cell(a)


def test_derive_all_equal_tie_rule():
    cell = derive_cell(np.zeros((14, 8)))
    assert cell == [[(0, "sep_conv_3x3"), (1, "sep_conv_3x3")]] * 4


def test_derive_round_trip(rng):
    for s in range(20):
        g = random_genotype(np.random.default_rng(s))
        d = derive_genotype(saturated_alphas(g, "normal"), saturated_alphas(g, "reduction"))
        assert d.normal == g.normal and d.reduction == g.reduction


def test_derive_rejects_bad_alpha():
    with pytest.raises(GenotypeError):
        derive_cell(np.zeros((13, 8)))
    a = np.zeros((14, 8))
    a[0, 0] = np.nan
    with pytest.raises(GenotypeError):
        derive_cell(a)


# ------------------------------------------------------------------ genotype format

def test_random_genotype_is_valid(rng):
    for _ in range(50):
        g = random_genotype(rng)
        g.validate()
        for kind in ("normal", "reduction"):
            for i, node in enumerate(g.cell(kind)):
                assert len({s for s, _ in node}) == 2
                assert all(0 <= s < i + 2 and op != "none" for s, op in node)


def test_text_round_trip(rng):
    g = random_genotype(rng, channels=8, layers=2, attention="ma")
    text = g.to_text()
    h = Genotype.from_text(text)
    assert h == g
    assert h.to_text() == text


@pytest.mark.parametrize("mutate,msg", [
    (lambda t: t.replace("snnas-genotype", "other"), "not a genotype"),
    (lambda t: t.replace("version = 1", "version = 9"), "version"),
    (lambda t: "\n".join(l for l in t.splitlines() if not l.startswith("normal.node2")), "missing"),
])
def test_text_errors(rng, mutate, msg):
    text = random_genotype(rng).to_text()
    with pytest.raises(GenotypeError, match=msg):
        Genotype.from_text(mutate(text))


def test_validate_errors():
    good = [[(0, "sep_conv_3x3"), (1, "skip_connect")]] * 4
    with pytest.raises(GenotypeError, match="repeats"):
        Genotype([[(0, "sep_conv_3x3"), (0, "skip_connect")]] + good[1:], good).validate()
    with pytest.raises(GenotypeError, match="invalid op"):
        Genotype([[(0, "none"), (1, "skip_connect")]] + good[1:], good).validate()
    with pytest.raises(GenotypeError, match="source"):
        Genotype([[(0, "sep_conv_3x3"), (2, "skip_connect")]] + good[1:], good).validate()


def test_dot_lists_every_edge(rng):
    g = random_genotype(rng)
    dot = g.to_dot()
    assert dot.startswith("digraph") and dot.rstrip().endswith("}")
    op_edges = [l for l in dot.splitlines() if "->" in l and "label=" in l]
    assert len(op_edges) == 16
