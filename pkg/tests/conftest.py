import os

# Pin BLAS thread counts before numpy loads anywhere: keeps timings stable
# and reductions deterministic for the byte-identity checks.
os.environ.setdefault("OMP_NUM_THREADS", "4")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "4")
os.environ.setdefault("MKL_NUM_THREADS", "4")
