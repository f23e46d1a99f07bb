"""Cervigram classification pipeline.

Deep descriptors from three residual backbones, concatenation fusion,
min-max scaling, LDA reduction and a linear SVM evaluated under
stratified k-fold cross-validation.
"""

__version__ = "0.1.0"

from cervix_cad.errors import (
    CadError,
    ConfigError,
    DataError,
    NumericalError,
)

__all__ = [
    "CadError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "__version__",
]
