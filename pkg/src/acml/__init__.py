"""Asymmetric contrastive alignment of molecular graphs with frozen chemical embeddings."""

import os as _os

__version__ = "0.1.0"

# ACML_THREADS caps the BLAS / numba worker pools; it has to be in the
# environment before numpy loads its BLAS, so it is handled here.
_threads = _os.environ.get("ACML_THREADS", "").strip()
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
