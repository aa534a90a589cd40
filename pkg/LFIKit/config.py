import os

# PARALLELISM
THREADS: int = os.cpu_count() or 1

# OPTIMIZER DEFAULTS
ADAM_LR: float = 1e-3
ADAM_BETA1: float = 0.9
ADAM_BETA2: float = 0.999
ADAM_EPS: float = 1e-8

# FLOWS
ALPHA_CLIP: float = 7.0 # log-scale clip after the output layer

# LOGGING
LOG_LEVEL: str = "WARNING"
