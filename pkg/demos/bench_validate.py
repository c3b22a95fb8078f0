"""Measuring knockoff quality and validating a configuration.

Quality is the mean absolute correlation between each X_j and its knockoff
(lower is better); a sweep varies one setting at a time.  Validation runs
the exhaustive swap check on a shrunken copy of the model, marginal tests,
and the query budget.
"""
import numpy as np

from metroknock.bench import BENCH_COLUMNS, measure_mac, recursion_check, rows_to_csv, sweep, validate
from metroknock.config import SamplerConfig, build_model

spec = {"kind": "gaussian-chain", "p": 20, "rho": 0.6}
rep = measure_mac(build_model(spec), SamplerConfig("covariance"), 1000, seed=0)
print(f"covariance kernel: mac={rep.mac:.3f} +- {rep.mac_se:.3f} (bound {rep.lower_bound:.3f})")

rows = sweep(spec, {"kind": "mtm"}, {"m": [1, 4], "t_scale": [0.5, 1.5]}, 300, seed=0)
print(rows_to_csv(rows, BENCH_COLUMNS))

for check in validate({"kind": "discrete-chain", "p": 6, "K": 3, "alpha": 0.3}, {"kind": "mtm"}, n=500):
    print(check.line())

rng = np.random.default_rng(5)
A = rng.normal(size=(8, 8))
print(recursion_check(A @ A.T / 8 + 0.1 * np.eye(8)).line())
