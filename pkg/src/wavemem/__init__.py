"""Traveling-wave memory: history-dependent systems, wave operators and RNN analysis."""
import os as _os

# Thread caps must be in place before numpy loads its BLAS.
_threads = _os.environ.get("WAVEMEM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = _threads

from . import analysis, hds, io, lbc, numerics, rnn, twm  # noqa: E402

__version__ = "0.1.0"
__all__ = ["analysis", "hds", "io", "lbc", "numerics", "rnn", "twm"]
