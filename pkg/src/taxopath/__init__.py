"""taxopath: place textual definitions into a taxonomy by decoding paths.

The pipeline ingests an ontology graph, converts it to a tree, builds a
definition-to-path corpus, trains an attention seq2seq model written on
plain numpy, and evaluates predictions by ancestor overlap.
"""

__version__ = "0.1.0"

from .errors import TaxopathError  # noqa: F401
