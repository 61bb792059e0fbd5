"""attncheck: reference attention engine, fault injectors, and trace diagnostics."""

from ._core import (
    __version__,
    chi_square,
    decode,
    default_config,
    diagnose,
    diagnose_case,
    evaluate_corpus,
    inject,
    published_table,
    quantize,
    relative_bucket,
    run,
    softmax,
    taxonomy,
)

__all__ = [
    "__version__",
    "chi_square",
    "decode",
    "default_config",
    "diagnose",
    "diagnose_case",
    "evaluate_corpus",
    "inject",
    "published_table",
    "quantize",
    "relative_bucket",
    "run",
    "softmax",
    "taxonomy",
]
