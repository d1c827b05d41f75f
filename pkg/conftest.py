import os

# Single-threaded BLAS: the small dense problems here lose time to thread
# contention, and the acceptance sweeps parallelize across processes instead.
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
