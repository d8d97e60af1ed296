# core/config.py

import os

# Worker threads for partition-parallel updates (1 = inline, the reference behaviour)
THREADS = int(os.getenv("GRAPHOT_THREADS", "1"))

# Largest full J-mode tensor the dense/oracle path may materialize
DENSE_CAP = int(os.getenv("GRAPHOT_DENSE_CAP", str(2 ** 24)))

# Evaluate kernels with max-shifted exponentials instead of plain products
LOG_DOMAIN = os.getenv("GRAPHOT_LOG_DOMAIN", "0").lower() in ("1", "true", "yes")

# Floor applied to zero marginal entries when a problem explicitly allows them
ZERO_FLOOR = float(os.getenv("GRAPHOT_ZERO_FLOOR", "1e-300"))

MAX_ITER = int(os.getenv("GRAPHOT_MAX_ITER", "100000"))

LOG_LEVEL = os.getenv("GRAPHOT_LOG_LEVEL", "INFO").upper()

# Accuracy target used when neither epsilon nor delta' is given
DEFAULT_DELTA = float(os.getenv("GRAPHOT_DELTA", "0.2"))

# Problem-spec / CSV schema version
FORMAT_VERSION = 1

# Long acceptance runs in the test suite (iteration trends over d and |E|)
SLOW_TESTS = os.getenv("GRAPHOT_SLOW_TESTS", "0").lower() in ("1", "true", "yes")
