"""Pin BLAS thread pools before numpy loads anywhere in the test process.

Multi-threaded GEMM reorders reductions nondeterministically, which would
break the bitwise-reproducibility tests.  Must run before `import numpy`,
which is why this lives in the root conftest rather than a fixture.
"""

import os

for var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
            "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(var, "1")
