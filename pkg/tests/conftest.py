from fractions import Fraction

import pytest
from hypothesis import settings

from pcfg_scaling.grammar import GrammarSpec, Pcfg, Production, Symbol

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def t(i):
    return Symbol("terminal", i)


def nt(i):
    return Symbol("nonterminal", i)


def make_pcfg(groups, num_terminals, context_length=2048, max_rhs_len=None):
    """Hand-built grammar; ``groups[lhs]`` lists right-hand sides."""
    k_max = max(len(g) for g in groups)
    l_max = max_rhs_len or max(len(r) for g in groups for r in g)
    spec = GrammarSpec(len(groups), num_terminals, k_max, l_max, context_length)
    prods = tuple(
        tuple(Production(lhs, tuple(rhs), Fraction(1, len(g))) for rhs in g)
        for lhs, g in enumerate(groups)
    )
    return Pcfg(spec, prods)


@pytest.fixture
def coin():
    """S -> t1 | t2."""
    return make_pcfg([[[t(1)], [t(2)]]], 2)
