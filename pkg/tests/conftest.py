# Pin BLAS to one thread before numpy loads anywhere: reduction order inside
# matmul depends on the thread count, and the determinism tests compare
# checkpoint digests bit-for-bit.
import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
