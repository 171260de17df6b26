"""Console-script shim.

BLAS thread caps only take effect if the environment variables are set
before numpy loads, so this module must stay import-light: it pins the
caps (sub-runs are single-threaded for reproducibility; sweep fan-out
happens at the Python level) and only then pulls in the real CLI.
"""

import os
import sys

_BLAS_VARS = ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
              "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def main(argv=None) -> int:
    for var in _BLAS_VARS:
        os.environ.setdefault(var, "1")
    from sll.cli import main as cli_main
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
