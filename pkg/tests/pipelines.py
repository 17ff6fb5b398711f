"""End-to-end helpers shared by the inference and acceptance tests."""
import numpy as np
from scipy.linalg import toeplitz

from sdglm.glm import Dataset, LossKind
from sdglm.inference import RestrictionSpec, infer
from sdglm.nodewise import NodewiseConfig, estimate_precision, weighted_design
from sdglm.norms import NormSpec
from sdglm.solver import fit


def gaussian_null_z(seed, n=400, p=20, j=10, rho=0.5):
    """z statistic for the true-zero coefficient ``j`` in a sparse linear model.

    Lasso at ``2 sqrt(log(p) / n)``, nodewise row ``j`` tuned by 5-fold CV.
    """
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(toeplitz(rho ** np.arange(p)))
    X = rng.standard_normal((n, p)) @ L.T
    beta0 = np.zeros(p)
    beta0[:3] = 1.0
    y = X @ beta0 + rng.standard_normal(n)
    data = Dataset(y, X)
    kind = LossKind.GAUSSIAN
    beta_hat = fit(data, kind, NormSpec.l1(p), 2 * np.sqrt(np.log(p) / n)).beta_hat
    Xw = weighted_design(data, kind, beta_hat)
    theta = estimate_precision(Xw, NodewiseConfig([j], grid_len=10, seed=seed))
    alpha = np.zeros(p)
    alpha[j] = 1.0
    return infer(RestrictionSpec(alpha), beta_hat, theta, data, kind).z
