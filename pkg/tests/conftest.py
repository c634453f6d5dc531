import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gomsr.template import Alphabet, Genotype, OperatorSet, Template, build_template


def random_genotype(t: Template, alph: Alphabet, rng: np.random.Generator,
                    const_range=(-10.0, 10.0)) -> Genotype:
    """Uniformly random symbols (terminals only at leaves) for testing."""
    symbols = np.empty(t.node_count, dtype=np.int64)
    internal = ~t.is_leaf
    symbols[internal] = rng.integers(alph.size, size=int(internal.sum()))
    symbols[t.is_leaf] = alph.n_ops + rng.integers(
        alph.n_features + 1, size=int(t.is_leaf.sum())
    )
    constants = rng.uniform(*const_range, size=t.node_count)
    return Genotype(symbols, constants)


@pytest.fixture
def base_ops():
    return OperatorSet.base()


@pytest.fixture
def extended_ops():
    return OperatorSet.extended()


@pytest.fixture
def h2_template():
    return build_template(2, 2)
