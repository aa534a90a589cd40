"""
Closed-form and non-parametric density baselines: the Gaussian maximum
likelihood fit, histograms and kernel density estimators.
"""
from dataclasses import dataclass, field
from typing import Union
import numpy as np
from scipy.special import logsumexp
from .num_core import Matrix, RngStream, as_matrix
from .errors import (
    InsufficientDataError,
    RangeError,
    DegenerateDataError,
    ShapeError
)

_LOG_2PI = np.log(2.0 * np.pi)
KDE_KERNELS: tuple[str, ...] = ("gaussian", "epanechnikov")
BANDWIDTH_RULES: tuple[str, ...] = ("scott", "silverman")


def _jittered_cholesky(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Cholesky factor of cov, adding 1e-9 * trace(cov)/D * I (escalated
    tenfold per retry) when the factorization fails.

    Returns:
        tuple: (possibly jittered covariance, lower Cholesky factor).
    """
    try:
        return cov, np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    dim = cov.shape[0]
    scale = np.trace(cov) / dim
    if not scale > 0:
        scale = 1.0
    jitter = 1e-9 * scale
    for _ in range(12):
        jittered = cov + jitter * np.eye(dim)
        try:
            return jittered, np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise DegenerateDataError("Covariance is not positive-definite.")


@dataclass
class GaussianModel:
    """
    Multivariate Gaussian N(mean, cov) stored with its Cholesky factor.

    Attributes:
        mean (np.ndarray): (D,) mean.
        cov (np.ndarray): (D, D) symmetric positive-definite covariance.
        chol (np.ndarray): Lower Cholesky factor of cov.
    """
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if self.cov.shape != (self.dim, self.dim):
            raise ShapeError("cov must be D x D for a mean of length D.")
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12):
            raise ValueError("cov must be symmetric.")
        if self.chol is None:
            self.chol = np.linalg.cholesky(self.cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_prob(self, x) -> np.ndarray:
        """Log-density of every row of x."""
        x = as_matrix(x, cols=self.dim)
        z = np.linalg.solve(self.chol, (x - self.mean).T).T
        log_det = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return -0.5 * (np.sum(z ** 2, axis=1) + self.dim * _LOG_2PI + log_det)

    def sample(self, n: int, rng: RngStream) -> Matrix:
        z = rng.normal(size=(n, self.dim))
        return self.mean + z @ self.chol.T

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian",
            "mean": self.mean.tolist(),
            "cov": self.cov.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianModel":
        mean = np.array(doc["mean"], dtype=np.float64)
        cov = np.array(doc["cov"], dtype=np.float64).reshape(
            mean.size, mean.size
        )
        return cls(mean, cov)


def gaussian_mle_fit(data) -> GaussianModel:
    """
    Maximum-likelihood Gaussian: the empirical mean and the (1/N)
    empirical covariance, jittered if the covariance is singular.

    Args:
        data: (N, D) training data.

    Raises:
        InsufficientDataError: If N < 2.
    """
    x = as_matrix(data, name="data")
    if x.shape[0] < 2:
        raise InsufficientDataError("Gaussian fit needs at least 2 points.")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / x.shape[0]
    cov = 0.5 * (cov + cov.T)
    cov, chol = _jittered_cholesky(cov)
    return GaussianModel(mean, cov, chol)


@dataclass
class HistogramModel:
    """
    Axis-aligned histogram density.

    Attributes:
        edges (list[np.ndarray]): Strictly increasing bin edges per axis.
        densities (np.ndarray): Density of every bin, shape = bins per axis.
    """
    edges: list
    densities: np.ndarray

    def __post_init__(self):
        self.edges = [np.asarray(e, dtype=np.float64) for e in self.edges]
        self.densities = np.asarray(self.densities, dtype=np.float64)

    @property
    def dim(self) -> int:
        return len(self.edges)

    def bin_volumes(self) -> np.ndarray:
        widths = [np.diff(e) for e in self.edges]
        volumes = widths[0]
        for w in widths[1:]:
            volumes = np.multiply.outer(volumes, w)
        return volumes

    def bin_index(self, x: Matrix) -> tuple[np.ndarray, np.ndarray]:
        """
        Bin index of every row. Points on a shared edge go to the right
        bin; the last edge closes the last bin.

        Returns:
            tuple: (per-axis integer indices (rows, D), inside-range flags).
        """
        idx = np.empty(x.shape, dtype=int)
        inside = np.ones(x.shape[0], dtype=bool)
        for d, e in enumerate(self.edges):
            col = x[:, d]
            i = np.searchsorted(e, col, side="right") - 1
            i[col == e[-1]] = e.size - 2
            inside &= (col >= e[0]) & (col <= e[-1])
            idx[:, d] = np.clip(i, 0, e.size - 2)
        return idx, inside

    def log_prob(self, x) -> np.ndarray:
        x = as_matrix(x, cols=self.dim)
        idx, inside = self.bin_index(x)
        with np.errstate(divide="ignore"):
            logp = np.log(self.densities[tuple(idx.T)])
        return np.where(inside, logp, -np.inf)

    def to_dict(self) -> dict:
        return {
            "kind": "histogram",
            "edges": [e.tolist() for e in self.edges],
            "densities": self.densities.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HistogramModel":
        edges = [np.array(e) for e in doc["edges"]]
        shape = tuple(e.size - 1 for e in edges)
        return cls(edges, np.array(doc["densities"]).reshape(shape))


def histogram_fit(data, edges: list) -> HistogramModel:
    """
    Maximum-likelihood histogram: density N_k / (N |B_k|) per bin.

    Args:
        data: (N, D) training data.
        edges: D lists of strictly increasing bin edges.

    Raises:
        RangeError: If a datapoint lies outside the outermost edges.
    """
    x = as_matrix(data, name="data")
    edges = [np.asarray(e, dtype=np.float64) for e in edges]
    if len(edges) != x.shape[1]:
        raise ShapeError(f"Expected {x.shape[1]} edge lists, got {len(edges)}.")
    for e in edges:
        if e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("Bin edges must be strictly increasing.")
    model = HistogramModel(edges, np.zeros(tuple(e.size - 1 for e in edges)))
    idx, inside = model.bin_index(x)
    if not inside.all():
        first = int(np.flatnonzero(~inside)[0])
        raise RangeError(
            f"Datapoint {first} lies outside the histogram range.", index=first
        )
    counts = np.zeros(model.densities.shape)
    np.add.at(counts, tuple(idx.T), 1.0)
    model.densities = counts / (x.shape[0] * model.bin_volumes())
    return model


@dataclass
class KdeModel:
    """
    Kernel density estimator q(x) = (1/N) sum_n k_eps(x - x_n).

    Attributes:
        points (Matrix): (N, D) training points.
        bandwidth (float): Kernel width eps > 0.
        kernel (str): "gaussian" or "epanechnikov" (multiplicative).
    """
    points: Matrix
    bandwidth: float
    kernel: str = "gaussian"

    def __post_init__(self):
        self.points = as_matrix(self.points, name="points")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive.")
        if self.kernel not in KDE_KERNELS:
            raise ValueError(f"Kernel {self.kernel} is not supported.")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def log_prob(self, x) -> np.ndarray:
        """Log-density of every row of x (-inf outside all supports)."""
        x = as_matrix(x, cols=self.dim)
        n, eps, dim = self.points.shape[0], self.bandwidth, self.dim
        u = (x[:, np.newaxis, :] - self.points[np.newaxis, :, :]) / eps
        if self.kernel == "gaussian":
            log_k = -0.5 * np.sum(u ** 2, axis=2) - 0.5 * dim * _LOG_2PI
            return logsumexp(log_k, axis=1) - np.log(n) - dim * np.log(eps)
        k = np.prod(np.clip(0.75 * (1.0 - u ** 2), 0.0, None), axis=2)
        with np.errstate(divide="ignore"):
            return np.log(k.sum(axis=1)) - np.log(n) - dim * np.log(eps)

    def sample(self, n: int, rng: RngStream) -> Matrix:
        centres = self.points[rng.integers(0, self.points.shape[0], size=n)]
        if self.kernel == "gaussian":
            noise = rng.normal(size=(n, self.dim))
        else:
            # median of three uniforms has density (3/4)(1 - u^2) on [-1, 1]
            noise = np.median(rng.uniform(-1, 1, size=(3, n, self.dim)), axis=0)
        return centres + self.bandwidth * noise

    def to_dict(self) -> dict:
        return {
            "kind": "kde",
            "points": self.points.tolist(),
            "bandwidth": self.bandwidth,
            "kernel": self.kernel,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KdeModel":
        return cls(np.array(doc["points"]), doc["bandwidth"], doc["kernel"])


def kde_log_prob(model: KdeModel, x) -> float:
    """Log-density of a single query vector under a KDE."""
    return float(model.log_prob(np.asarray(x, dtype=np.float64).ravel())[0])


def bandwidth_rule(data, rule: str="scott") -> float:
    """
    Rule-of-thumb KDE bandwidth. sigma is the mean of the per-axis sample
    standard deviations (N - 1 divisor).

    Args:
        data: (N, D) data.
        rule (str): "scott" or "silverman".

    Raises:
        InsufficientDataError: If N < 2.
        DegenerateDataError: If sigma is zero.
    """
    x = as_matrix(data, name="data")
    n, dim = x.shape
    if n < 2:
        raise InsufficientDataError("Bandwidth rules need at least 2 points.")
    if rule not in BANDWIDTH_RULES:
        raise ValueError(f"Bandwidth rule {rule} is not supported.")
    sigma = float(np.mean(np.std(x, axis=0, ddof=1)))
    if not sigma > 0:
        raise DegenerateDataError("Data has zero variance.")
    factor = n ** (-1.0 / (dim + 4))
    if rule == "silverman":
        factor *= (4.0 / (dim + 2)) ** (1.0 / (dim + 4))
    return sigma * factor


def fit_kde(
    data,
    rule: str="scott",
    kernel: str="gaussian",
    bandwidth: Union[float, None]=None
) -> KdeModel:
    """KDE on data with an explicit bandwidth or one from bandwidth_rule."""
    if bandwidth is None:
        bandwidth = bandwidth_rule(data, rule)
    return KdeModel(as_matrix(data, name="data"), bandwidth, kernel)
