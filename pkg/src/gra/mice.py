"""Chained-equations imputation for the continuous block of a FeatureMatrix.

Deterministic round-robin least-squares variant: the missing cells of each
incomplete column are filled from a regression of that column on all other
non-boolean columns (age + every continuous column), sweeping columns in
fixed schema order until the largest cell change drops below ``tol`` or
``max_iter`` sweeps have run. Initialization is the observed column mean;
observed cells are never modified. Boolean presence columns have no
missingness by construction and take no part in the design matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, MissingAllValuesError
from .preprocess import FeatureMatrix

DEFAULT_MAX_ITER = 10
DEFAULT_TOL = 1e-3


def mice_impute(matrix: FeatureMatrix, max_iter: int = DEFAULT_MAX_ITER,
                tol: float = DEFAULT_TOL, seed: int = 0) -> FeatureMatrix:
    """Impute missing continuous cells; returns a new FeatureMatrix.

    ``seed`` is accepted for interface stability (reserved for stochastic
    variants); the plain least-squares sweep is fully deterministic.
    """
    del seed
    schema = matrix.schema
    cols = schema.scaled_column_indices()  # age + continuous, fixed order
    data = matrix.data.copy()
    mask = matrix.missing_mask

    observed = data[~mask]
    if not np.all(np.isfinite(observed)):
        raise InputError("matrix contains non-finite observed values")

    names = schema.column_names()
    incomplete = []
    for j in cols:
        miss = mask[:, j]
        if not miss.any():
            continue
        if miss.all():
            raise MissingAllValuesError(f"column {names[j]!r} has no observed values")
        incomplete.append(j)

    if not incomplete:
        return FeatureMatrix(data=data, schema=schema,
                             patient_ids=list(matrix.patient_ids),
                             missing_mask=mask.copy())

    # mean initialization
    for j in incomplete:
        miss = mask[:, j]
        data[miss, j] = np.mean(data[~miss, j])

    sub = data[:, cols]  # working view of the design block
    col_of = {j: k for k, j in enumerate(cols)}

    for _ in range(max_iter):
        max_change = 0.0
        for j in incomplete:
            k = col_of[j]
            miss = mask[:, j]
            predictors = np.delete(sub, k, axis=1)
            x_obs = np.column_stack([np.ones(np.sum(~miss)), predictors[~miss]])
            beta, *_ = np.linalg.lstsq(x_obs, sub[~miss, k], rcond=None)
            x_mis = np.column_stack([np.ones(np.sum(miss)), predictors[miss]])
            new_vals = x_mis @ beta
            change = np.max(np.abs(new_vals - sub[miss, k])) if new_vals.size else 0.0
            max_change = max(max_change, float(change))
            sub[miss, k] = new_vals
        if not np.isfinite(max_change):
            raise InputError("imputation sweep produced non-finite values")
        if max_change < tol:
            break

    data[:, cols] = sub
    return FeatureMatrix(data=data, schema=schema,
                         patient_ids=list(matrix.patient_ids),
                         missing_mask=mask.copy())
