"""``python -m bregdag`` entry point.

The BLAS thread caps are set before anything imports numpy so that every
fit runs single-threaded: results then do not depend on the machine's
core count, which keeps repeated sweeps byte-identical.
"""

import os
import sys

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from bregdag.cli import main  # noqa: E402 - must follow the env caps

if __name__ == "__main__":
    sys.exit(main())
