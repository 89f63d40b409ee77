"""Privacy-preserving record linkage over hardened Bloom-filter encodings.

The package splits into three layers:

* core primitives: :mod:`pprl.masking` (normalisation, tokenisation,
  weighted keyed-hash encoding), :mod:`pprl.similarity` (threshold
  classification and linkage-quality metrics) and :mod:`pprl.matcher`
  (bulk pairwise Jaccard matching over packed vectors),
* wire layer and services: :mod:`pprl.protocol` plus the FastAPI
  applications in :mod:`pprl.services`,
* tooling: the train orchestrator in :mod:`pprl.train` and the synthetic
  data / evaluation harness in :mod:`pprl.harness`.
"""

from pprl.masking import (
    AttributeSpec,
    BitVector,
    EncodingScheme,
    PersonRecord,
    allocate_hash_counts,
    encode,
    estimate_weights,
    jaccard,
    preprocess,
    tokenize,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeSpec",
    "BitVector",
    "EncodingScheme",
    "PersonRecord",
    "allocate_hash_counts",
    "encode",
    "estimate_weights",
    "jaccard",
    "preprocess",
    "tokenize",
    "__version__",
]
