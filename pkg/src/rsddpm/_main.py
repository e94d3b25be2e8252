"""Launcher: applies the thread cap before numpy is imported anywhere.

RSDDPM_THREADS must take effect before the first numpy import, because BLAS
thread pools are sized at load time; that is why this module must not import
anything numeric at the top level and why the package __init__ stays empty
of submodule imports.
"""

import os
import sys

_BLAS_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_cap = os.environ.get("RSDDPM_THREADS")
if _cap:
    for _var in _BLAS_VARS:
        os.environ[_var] = _cap


def main(argv=None) -> int:
    from .cli import run
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
