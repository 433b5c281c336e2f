import random

import pytest
from hypothesis import settings, strategies as st

from bcalculus import expr as ex
from bcalculus.bgeom import BForm, BVectorField, chart

settings.register_profile("ci", deadline=None, derandomize=True)
settings.load_profile("ci")

LEAVES = ["x", "y", "z", "A", "1", "2", "3", "1/2"]


def _combine(children):
    one = children
    two = st.tuples(children, children)
    return st.one_of(
        one.map(lambda a: f"sin({a})"),
        one.map(lambda a: f"cos({a})"),
        one.map(lambda a: f"log(2 + ({a})^2)"),
        st.tuples(one, st.sampled_from([2, 3])).map(lambda p: f"({p[0]})^{p[1]}"),
        two.map(lambda p: f"({p[0]}) + ({p[1]})"),
        two.map(lambda p: f"({p[0]}) - ({p[1]})"),
        two.map(lambda p: f"({p[0]})*({p[1]})"),
        two.map(lambda p: f"({p[0]})/(2 + ({p[1]})^2)"),
    )


# Pole-free expression texts over x, y, z and a parameter A.
expr_texts = st.recursive(st.sampled_from(LEAVES), _combine, max_leaves=6)


def random_poly(rng: random.Random, names, terms=3, trig=True):
    """Small random expression without poles, as text."""
    out = []
    for _ in range(terms):
        c = rng.choice(["1", "2", "-1", "3", "1/2", "-2"])
        factors = [c]
        for n in rng.sample(list(names), rng.randint(0, min(2, len(names)))):
            kind = rng.choice(["pow", "sin", "cos"] if trig else ["pow"])
            if kind == "pow":
                factors.append(f"{n}^{rng.randint(1, 2)}")
            else:
                factors.append(f"{kind}({n})")
        out.append("*".join(factors))
    return " + ".join(out)


def random_form(rng: random.Random, m, degree, terms=2, trig=True):
    from itertools import combinations
    keys = list(combinations(range(m.dim), degree))
    chosen = rng.sample(keys, min(len(keys), rng.randint(1, 3)))
    return BForm(m, degree, {k: ex.parse(random_poly(rng, m.coords, terms, trig)) for k in chosen})


def random_field(rng: random.Random, m, terms=2):
    return BVectorField(m, [ex.parse(random_poly(rng, m.coords, terms)) for _ in m.coords])


CHARTS = {
    "plain3": lambda: chart("x y z"),
    "b1": lambda: chart("x y z", "z", 1),
    "b2": lambda: chart("x y z", "z", 2),
    "sin1": lambda: chart("x y z", "sin(z)", 1),
    "b3_4d": lambda: chart("t x y w", "t", 3),
}


@pytest.fixture(params=sorted(CHARTS))
def any_chart(request):
    return CHARTS[request.param]()
