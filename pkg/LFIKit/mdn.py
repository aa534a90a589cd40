"""
Conditional Gaussian mixture-density network with full covariances and the
analytic proposal correction used by SNPE-A.
"""
from typing import Union
import logging
import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import logsumexp, log_softmax, softmax
from .classic_density import GaussianModel
from .num_core import Matrix, MaskedLayer, RngStream, as_matrix, as_context
from .training import TrainConfig, TrainResult, fit_maximum_likelihood
from .errors import NonPositiveDefiniteError, NumericError, ShapeError

_LOG_2PI = np.log(2.0 * np.pi)

# Proposal and Gaussian prior densities share the Gaussian model type
GaussianDensity = GaussianModel


class GaussianMixture:
    """
    Mixture sum_k w_k N(m_k, S_k).

    Attributes:
        weights (np.ndarray): (K,) weights summing to 1.
        means (np.ndarray): (K, D) component means.
        covs (np.ndarray): (K, D, D) component covariances.
        chols (np.ndarray): (K, D, D) lower Cholesky factors.
    """
    def __init__(self, weights, means, covs, chols=None):
        self.weights = np.asarray(weights, dtype=np.float64).ravel()
        self.means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        k, dim = self.means.shape
        self.covs = np.asarray(covs, dtype=np.float64).reshape(k, dim, dim)
        if self.weights.size != k:
            raise ShapeError("weights and means disagree on K.")
        if np.any(self.weights < 0) or not np.isfinite(self.weights).all():
            raise ValueError("Mixture weights must be finite and non-negative.")
        self.weights = self.weights / self.weights.sum()
        if chols is None:
            chols = self._factorize()
        self.chols = np.asarray(chols, dtype=np.float64).reshape(k, dim, dim)

    def _factorize(self) -> np.ndarray:
        return np.linalg.cholesky(self.covs)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_probs(self, theta) -> np.ndarray:
        """(rows, K) log N(theta; m_k, S_k)."""
        theta = as_matrix(theta, cols=self.dim, name="theta")
        r = theta[:, np.newaxis, :] - self.means[np.newaxis, :, :]
        chols = np.broadcast_to(self.chols, (theta.shape[0],) + self.chols.shape)
        z = np.linalg.solve(chols, r[..., np.newaxis])[..., 0]
        log_det = np.sum(np.log(np.diagonal(self.chols, axis1=1, axis2=2)), axis=1)
        return -0.5 * np.sum(z ** 2, axis=2) - log_det - 0.5 * self.dim * _LOG_2PI

    def log_prob(self, theta) -> np.ndarray:
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return logsumexp(log_w + self.component_log_probs(theta), axis=1)

    def sample(self, n: int, rng: RngStream) -> Matrix:
        comps = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.normal(size=(n, self.dim))
        return self.means[comps] + np.einsum("nij,nj->ni", self.chols[comps], z)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        second = np.einsum(
            "k,kij->ij",
            self.weights,
            self.covs + self.means[:, :, np.newaxis] * self.means[:, np.newaxis, :]
        )
        cov = second - np.outer(mu, mu)
        return 0.5 * (cov + cov.T)

    def moment_matched(self) -> GaussianModel:
        """Single Gaussian with the mixture's mean and covariance."""
        return GaussianModel(self.mean(), self.covariance())

    def to_dict(self) -> dict:
        return {
            "kind": "mixture",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.reshape(self.n_components, -1).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianMixture":
        return cls(doc["weights"], doc["means"], doc["covs"])


class CorrectedMixture(GaussianMixture):
    """
    Posterior mixture produced by snpea_correct.

    Raises:
        NonPositiveDefiniteError: If a covariance is not positive-definite.
    """
    def _factorize(self) -> np.ndarray:
        chols = np.empty_like(self.covs)
        for k, cov in enumerate(self.covs):
            try:
                chols[k] = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as e:
                raise NonPositiveDefiniteError(
                    f"Component {k} covariance is not positive-definite.",
                    component=k
                ) from e
        return chols

    def to_dict(self) -> dict:
        doc = super().to_dict()
        doc["kind"] = "corrected_mixture"
        return doc


class MdnModel:
    """
    Mixture-density network q(theta | x): a tanh trunk followed by one
    linear head emitting K logits, K means and K lower-triangular factors
    L_k whose diagonal is parameterized by its logarithm. S_k = L_k L_k^T.

    Attributes:
        context_dim (int): Dimension of the conditioning data x.
        dim (int): Target (parameter) dimension D.
        n_components (int): Number of mixture components K.
        hidden (tuple): Trunk layer sizes.
        layers (list[MaskedLayer]): Trunk layers then the head (all-ones masks).
    """
    def __init__(
        self,
        context_dim: int,
        dim: int,
        n_components: int,
        hidden: tuple,
        layers: list[MaskedLayer],
        activation: str="tanh"
    ):
        self.context_dim = context_dim
        self.dim = dim
        self.n_components = n_components
        self.hidden = tuple(hidden)
        self.layers = layers
        self.activation = activation
        self._tril = np.tril_indices(dim)
        self._diag_pos = np.flatnonzero(self._tril[0] == self._tril[1])
        if self.layers[-1].out_dim != self.head_size:
            raise ShapeError(f"Head must emit {self.head_size} outputs.")

    @property
    def head_size(self) -> int:
        k, d = self.n_components, self.dim
        return k + k * d + k * d * (d + 1) // 2

    @classmethod
    def create(
        cls,
        context_dim: int,
        dim: int,
        rng: RngStream,
        n_components: int=8,
        hidden: tuple=(50, 50),
        activation: str="tanh"
    ) -> "MdnModel":
        k, d = n_components, dim
        sizes = [context_dim] + list(hidden)
        layers = [
            MaskedLayer.initialize(np.ones((n_out, n_in)), activation, rng)
            for n_in, n_out in zip(sizes[:-1], sizes[1:])
        ]
        head_size = k + k * d + k * d * (d + 1) // 2
        layers.append(
            MaskedLayer.initialize(np.ones((head_size, sizes[-1])), "identity", rng)
        )
        return cls(context_dim, dim, n_components, hidden, layers, activation)

    def _forward(self, ctx: Matrix) -> tuple:
        h, caches = ctx, []
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(h)
            if not np.all(np.isfinite(h)):
                raise NumericError(
                    f"Non-finite activation in MDN layer {i}.", index=i
                )
            caches.append(cache)
        n, k, d = ctx.shape[0], self.n_components, self.dim
        logits = h[:, :k]
        means = h[:, k:k + k * d].reshape(n, k, d)
        tril = h[:, k + k * d:].reshape(n, k, -1).copy()
        tril[:, :, self._diag_pos] = np.exp(tril[:, :, self._diag_pos])
        chols = np.zeros((n, k, d, d))
        chols[:, :, self._tril[0], self._tril[1]] = tril
        return logits, means, chols, caches

    def _log_prob_parts(self, theta: Matrix, ctx: Matrix) -> tuple:
        logits, means, chols, caches = self._forward(ctx)
        r = theta[:, np.newaxis, :] - means
        z = np.linalg.solve(chols, r[..., np.newaxis])[..., 0]
        log_diag = np.log(np.diagonal(chols, axis1=2, axis2=3))
        comp = (
            -0.5 * np.sum(z ** 2, axis=2)
            - log_diag.sum(axis=2)
            - 0.5 * self.dim * _LOG_2PI
        )
        log_w = log_softmax(logits, axis=1)
        log_prob = logsumexp(log_w + comp, axis=1)
        return log_prob, (log_w, comp, chols, z, caches)

    def log_prob(self, theta, context) -> np.ndarray:
        theta = as_matrix(theta, cols=self.dim, name="theta")
        ctx = as_context(context, theta.shape[0], self.context_dim)
        log_prob, _ = self._log_prob_parts(theta, ctx)
        return log_prob

    def mixture_at(self, context) -> GaussianMixture:
        """The mixture q(theta | x) at a single conditioning vector."""
        ctx = as_context(np.ravel(context), 1, self.context_dim)
        logits, means, chols, _ = self._forward(ctx)
        covs = chols[0] @ np.swapaxes(chols[0], 1, 2)
        return GaussianMixture(softmax(logits[0]), means[0], covs, chols[0])

    def sample(self, n: int, context, rng: RngStream) -> Matrix:
        return self.mixture_at(context).sample(n, rng)

    def loss(self, theta, context, weights) -> float:
        return float(-np.mean(np.asarray(weights) * self.log_prob(theta, context)))

    def loss_and_grad(self, theta, context, weights) -> tuple[float, np.ndarray]:
        theta = as_matrix(theta, cols=self.dim, name="theta")
        ctx = as_context(context, theta.shape[0], self.context_dim)
        c = np.asarray(weights, dtype=np.float64) / theta.shape[0]
        log_prob, (log_w, comp, chols, z, caches) = self._log_prob_parts(theta, ctx)
        loss = -np.sum(c * log_prob)

        resp = np.exp(log_w + comp - log_prob[:, np.newaxis])
        # y = L^{-T} z is the gradient of the exponent w.r.t. the mean
        y = np.linalg.solve(
            np.swapaxes(chols, 2, 3), z[..., np.newaxis]
        )[..., 0]
        grad_logits = resp - np.exp(log_w)
        grad_means = resp[..., np.newaxis] * y
        grad_l = y[..., :, np.newaxis] * z[..., np.newaxis, :]
        grad_tril = grad_l[:, :, self._tril[0], self._tril[1]]
        diag = np.diagonal(chols, axis1=2, axis2=3)
        grad_tril[:, :, self._diag_pos] = (
            np.diagonal(grad_l, axis1=2, axis2=3) * diag - 1.0
        )
        grad_tril = resp[..., np.newaxis] * grad_tril

        n = theta.shape[0]
        grad_h = -c[:, np.newaxis] * np.hstack([
            grad_logits,
            grad_means.reshape(n, -1),
            grad_tril.reshape(n, -1)
        ])
        param_grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            gw, gb, grad_h = layer.backward(grad_h, cache)
            param_grads.append(np.concatenate([gw.ravel(), gb]))
        return float(loss), np.concatenate(param_grads[::-1])

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def get_params(self) -> np.ndarray:
        return np.concatenate([layer.get_params() for layer in self.layers])

    def set_params(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=np.float64)
        if params.size != self.n_params:
            raise ShapeError(f"Expected {self.n_params} parameters.")
        start = 0
        for layer in self.layers:
            layer.set_params(params[start:start + layer.n_params])
            start += layer.n_params

    def to_dict(self) -> dict:
        return {
            "kind": "mdn",
            "context_dim": self.context_dim,
            "dim": self.dim,
            "n_components": self.n_components,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MdnModel":
        return cls(
            doc["context_dim"],
            doc["dim"],
            doc["n_components"],
            tuple(doc["hidden"]),
            [MaskedLayer.from_dict(layer) for layer in doc["layers"]],
            doc["activation"]
        )


def mdn_log_prob(model: MdnModel, theta, x) -> float:
    """log q(theta | x) for a single pair."""
    return float(model.log_prob(np.ravel(theta), np.ravel(x))[0])


def mdn_sample(model: MdnModel, n: int, x, rng: RngStream) -> Matrix:
    """Ancestral draws: a component by weight, then a Gaussian draw."""
    if n < 1:
        raise ValueError("n must be at least 1.")
    return model.sample(n, x, rng)


def train_mdn(
    model: MdnModel,
    xs,
    thetas,
    cfg: TrainConfig,
    rng: RngStream,
    weights=None,
    logger: logging.Logger=logging.getLogger(__name__)
) -> tuple[MdnModel, TrainResult]:
    """
    Trains q(theta | x) on (x, theta) pairs by maximizing
    (1/N) sum_n w_n log q(theta_n | x_n).

    Raises:
        DegenerateWeightsError: If the weights are all zero.
    """
    thetas = as_matrix(thetas, cols=model.dim, name="thetas")
    xs = as_context(xs, thetas.shape[0], model.context_dim)
    result = fit_maximum_likelihood(
        model, thetas, xs, cfg, rng, weights=weights, logger=logger
    )
    return model, result


def _gaussian_terms(mean: np.ndarray, cov: np.ndarray) -> tuple:
    """Precision, precision-times-mean and log Z of N(mean, cov)."""
    factor = cho_factor(cov, lower=True)
    precision = cho_solve(factor, np.eye(mean.size))
    eta = precision @ mean
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    log_z = -0.5 * (mean.size * _LOG_2PI + log_det + mean @ eta)
    return precision, eta, log_z


def snpea_correct(
    q: GaussianMixture,
    proposal: GaussianDensity,
    prior: Union[GaussianDensity, None]=None
) -> CorrectedMixture:
    """
    Posterior mixture proportional to prior(theta) / proposal(theta) * q(theta).

    Every component is multiplied by the Gaussian prior (skipped for the
    improper uniform prior, ``prior=None``) and divided by the Gaussian
    proposal. With log Z(m, S) = -(1/2)(log det(2 pi S) + m^T S^{-1} m),
    the component log-weight gains
    log Z(m_k, S_k) - log Z(proposal) + log Z(prior) - log Z(m'_k, S'_k),
    and the weights are renormalized.

    Raises:
        NonPositiveDefiniteError: If a corrected precision is not
            positive-definite.
    """
    if (
        prior is not None
        and np.array_equal(prior.mean, proposal.mean)
        and np.array_equal(prior.cov, proposal.cov)
    ):
        return CorrectedMixture(q.weights.copy(), q.means.copy(), q.covs.copy())

    dim = q.dim
    prop_prec, prop_eta, prop_log_z = _gaussian_terms(proposal.mean, proposal.cov)
    base_prec, base_eta, base_log_z = -prop_prec, -prop_eta, -prop_log_z
    if prior is not None:
        prior_prec, prior_eta, prior_log_z = _gaussian_terms(prior.mean, prior.cov)
        base_prec = base_prec + prior_prec
        base_eta = base_eta + prior_eta
        base_log_z = base_log_z + prior_log_z

    with np.errstate(divide="ignore"):
        log_w = np.log(q.weights)
    means = np.empty_like(q.means)
    covs = np.empty_like(q.covs)
    for k in range(q.n_components):
        prec, eta, log_z = _gaussian_terms(q.means[k], q.covs[k])
        new_prec = prec + base_prec
        new_prec = 0.5 * (new_prec + new_prec.T)
        try:
            factor = cho_factor(new_prec, lower=True)
        except LinAlgError as e:
            raise NonPositiveDefiniteError(
                f"Corrected precision of component {k} is not "
                "positive-definite.",
                component=k
            ) from e
        covs[k] = cho_solve(factor, np.eye(dim))
        covs[k] = 0.5 * (covs[k] + covs[k].T)
        means[k] = covs[k] @ (eta + base_eta)
        _, _, new_log_z = _gaussian_terms(means[k], covs[k])
        log_w[k] += log_z + base_log_z - new_log_z
    log_w -= logsumexp(log_w)
    return CorrectedMixture(np.exp(log_w), means, covs)
