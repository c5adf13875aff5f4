import warnings

import pytest

from taxopath.errors import MissingDefinitionWarning
from taxopath.ontology import PathMode
from taxopath.synthetic import synthetic_tree, toy_corpus


@pytest.fixture(scope="session")
def benchmark_tree():
    """The bundled 500-node synthetic ontology as a tree."""
    return synthetic_tree(n_nodes=500, seed=101)


@pytest.fixture(scope="session")
def toy_edges():
    """51-node tree plus its 50 definition examples, edge-label targets."""
    return toy_corpus(PathMode.EDGES)


@pytest.fixture(autouse=True)
def _no_missing_definition_noise():
    # synthetic trees define every node; unrelated tests silence nothing
    with warnings.catch_warnings():
        warnings.simplefilter("always", MissingDefinitionWarning)
        yield
