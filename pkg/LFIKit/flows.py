"""
Masked autoregressive density estimators: MADE with Gaussian conditionals
and its stack, the Masked Autoregressive Flow (MAF).

Both models are conditional on an optional context vector (context
dimension 0 means unconditional). Each MADE computes the affine map
u_i = (x_i - beta_i) * exp(-alpha_i) in a single masked forward pass;
sampling runs the inverse map one dimension at a time.
"""
from typing import Union
import logging
import numpy as np
from . import config
from .num_core import (
    Matrix,
    MaskedLayer,
    RngStream,
    as_matrix,
    as_context
)
from .training import TrainConfig, TrainResult, fit_maximum_likelihood
from .errors import NumericError, ShapeError

_LOG_2PI = np.log(2.0 * np.pi)
# Extra factor on the initial log-scale output weights
_ALPHA_INIT_SCALE = 0.01


def _std_normal_log_prob(u: Matrix) -> np.ndarray:
    return -0.5 * np.sum(u ** 2, axis=1) - 0.5 * u.shape[1] * _LOG_2PI


def _check_order(order, dim: int) -> np.ndarray:
    order = np.asarray(order, dtype=int).ravel()
    if order.size != dim or sorted(order.tolist()) != list(range(1, dim + 1)):
        raise ValueError(f"order must be a permutation of 1..{dim}.")
    return order


def _check_permutation(perm, dim: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=int).ravel()
    if perm.size != dim or sorted(perm.tolist()) != list(range(dim)):
        raise ValueError(f"permutation must be a bijection on 0..{dim - 1}.")
    return perm


def build_masks(
    dim: int,
    hidden: tuple,
    order,
    rng: RngStream,
    context_dim: int=0
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """
    Degree assignment and binary masks of a MADE.

    Input column d has degree order[d]. Hidden degrees are drawn uniformly
    from {1..D-1}; degree 0 is allowed as well when the model has a context
    or D = 1, so that the first dimension can still depend on the context.
    A hidden unit k sees a unit j of the previous layer iff
    deg(k) >= deg(j); the outputs of dimension d see units with
    degree < order[d]. Context columns (appended after the D data columns
    of the first layer) are never masked.

    Args:
        dim (int): Data dimension D >= 1.
        hidden (tuple): Hidden layer sizes (may be empty).
        order: Degree of every input column, a permutation of 1..D.
        rng (RngStream): Stream for the hidden degrees.
        context_dim (int): Context dimension C.

    Returns:
        tuple: (degrees per layer starting with the inputs, masks per
            layer). The last mask has 2D rows: shifts then log-scales.
    """
    if dim < 1:
        raise ValueError("dim must be at least 1.")
    if any(h < 1 for h in hidden):
        raise ValueError("Hidden layer sizes must be at least 1.")
    order = _check_order(order, dim)
    min_degree = 0 if (context_dim > 0 or dim == 1) else 1
    degrees = [order]
    for size in hidden:
        degrees.append(rng.integers(min_degree, dim, size=size))

    masks = []
    for prev, cur in zip(degrees[:-1], degrees[1:]):
        masks.append((cur[:, np.newaxis] >= prev[np.newaxis, :]).astype(float))
    out_mask = (order[:, np.newaxis] > degrees[-1][np.newaxis, :]).astype(float)
    masks.append(np.vstack([out_mask, out_mask]))
    masks[0] = np.hstack([masks[0], np.ones((masks[0].shape[0], context_dim))])
    return degrees, masks


class MadeNet:
    """
    MADE with Gaussian conditionals.

    Attributes:
        dim (int): Data dimension D.
        context_dim (int): Context dimension C.
        hidden (tuple): Hidden layer sizes.
        activation (str): Hidden activation.
        order (np.ndarray): Degree of every data column (1..D).
        layers (list[MaskedLayer]): Masked layers; the last one emits the
            D shifts followed by the D raw log-scales.
        alpha_clip (float): Log-scales are clipped to [-alpha_clip, alpha_clip].
    """
    def __init__(
        self,
        dim: int,
        context_dim: int,
        hidden: tuple,
        order,
        layers: list[MaskedLayer],
        activation: str="tanh",
        alpha_clip: Union[float, None]=None
    ):
        self.dim = dim
        self.context_dim = context_dim
        self.hidden = tuple(hidden)
        self.order = _check_order(order, dim)
        self.layers = layers
        self.activation = activation
        self.alpha_clip = config.ALPHA_CLIP if alpha_clip is None else alpha_clip
        if self.layers[0].in_dim != dim + context_dim:
            raise ShapeError("First layer must take D + C inputs.")
        if self.layers[-1].out_dim != 2 * dim:
            raise ShapeError("Last layer must emit 2D outputs.")

    @classmethod
    def create(
        cls,
        dim: int,
        rng: RngStream,
        context_dim: int=0,
        hidden: tuple=(50,),
        activation: str="tanh",
        order=None,
        alpha_clip: Union[float, None]=None
    ) -> "MadeNet":
        """Randomly initialized MADE, close to the identity transform."""
        order = np.arange(1, dim + 1) if order is None else order
        _, masks = build_masks(dim, tuple(hidden), order, rng, context_dim)
        layers = [
            MaskedLayer.initialize(mask, activation, rng)
            for mask in masks[:-1]
        ]
        out = MaskedLayer.initialize(masks[-1], "identity", rng)
        out.weight[dim:] *= _ALPHA_INIT_SCALE
        layers.append(out)
        return cls(dim, context_dim, hidden, order, layers, activation, alpha_clip)

    def _net(self, x: Matrix, ctx: Matrix) -> tuple:
        h = np.hstack([x, ctx])
        caches = []
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(h)
            if not np.all(np.isfinite(h)):
                raise NumericError(
                    f"Non-finite activation in MADE layer {i}.", index=i
                )
            caches.append(cache)
        beta, alpha_raw = h[:, :self.dim], h[:, self.dim:]
        alpha = np.clip(alpha_raw, -self.alpha_clip, self.alpha_clip)
        return beta, alpha, alpha_raw, caches

    def conditionals(self, x, context=None) -> tuple[Matrix, Matrix]:
        """
        Shifts beta and clipped log-scales alpha for every row of x.
        Column d depends only on data columns of lower degree.
        """
        x = as_matrix(x, cols=self.dim, name="x")
        ctx = as_context(context, x.shape[0], self.context_dim)
        beta, alpha, _, _ = self._net(x, ctx)
        return beta, alpha

    def _transform_cached(self, x: Matrix, ctx: Matrix) -> tuple:
        beta, alpha, alpha_raw, caches = self._net(x, ctx)
        u = (x - beta) * np.exp(-alpha)
        log_det = -alpha.sum(axis=1)
        return u, log_det, (alpha, alpha_raw, u, caches)

    def transform(self, x, context=None) -> tuple[Matrix, np.ndarray]:
        """
        Data-to-noise map.

        Returns:
            tuple: u (rows, D) and log|det du/dx| per row.
        """
        x = as_matrix(x, cols=self.dim, name="x")
        ctx = as_context(context, x.shape[0], self.context_dim)
        u, log_det, _ = self._transform_cached(x, ctx)
        return u, log_det

    def inverse(self, u, context=None) -> Matrix:
        """Noise-to-data map, one pass per dimension in degree order."""
        u = as_matrix(u, cols=self.dim, name="u")
        ctx = as_context(context, u.shape[0], self.context_dim)
        x = np.zeros_like(u)
        for d in np.argsort(self.order):
            beta, alpha, _, _ = self._net(x, ctx)
            x[:, d] = np.exp(alpha[:, d]) * u[:, d] + beta[:, d]
        return x

    def log_prob(self, x, context=None) -> np.ndarray:
        u, log_det = self.transform(x, context)
        return _std_normal_log_prob(u) + log_det

    def sample(self, n: int, context, rng: RngStream) -> Matrix:
        return self.inverse(rng.normal(size=(n, self.dim)), context)

    def _backward(
        self,
        cache: tuple,
        grad_u: Matrix,
        grad_log_det: np.ndarray
    ) -> tuple[np.ndarray, Matrix]:
        """
        Backpropagates dL/du and dL/d(log det) through the layer.

        Returns:
            tuple: flat parameter gradient and dL/dx.
        """
        alpha, alpha_raw, u, caches = cache
        scale = np.exp(-alpha)
        grad_beta = -grad_u * scale
        grad_alpha = -grad_u * u - grad_log_det[:, np.newaxis]
        inside = (alpha_raw > -self.alpha_clip) & (alpha_raw < self.alpha_clip)
        grad_alpha = grad_alpha * inside
        grad_h = np.hstack([grad_beta, grad_alpha])
        param_grads = []
        for layer, layer_cache in zip(reversed(self.layers), reversed(caches)):
            gw, gb, grad_h = layer.backward(grad_h, layer_cache)
            param_grads.append(np.concatenate([gw.ravel(), gb]))
        grad_x = grad_u * scale + grad_h[:, :self.dim]
        return np.concatenate(param_grads[::-1]), grad_x

    def loss(self, x, context, weights) -> float:
        """Weighted negative average log likelihood (1/N) sum -w log q."""
        return float(-np.mean(np.asarray(weights) * self.log_prob(x, context)))

    def loss_and_grad(self, x, context, weights) -> tuple[float, np.ndarray]:
        x = as_matrix(x, cols=self.dim, name="x")
        ctx = as_context(context, x.shape[0], self.context_dim)
        c = np.asarray(weights, dtype=np.float64) / x.shape[0]
        u, log_det, cache = self._transform_cached(x, ctx)
        loss = -np.sum(c * (_std_normal_log_prob(u) + log_det))
        grads, _ = self._backward(cache, c[:, np.newaxis] * u, -c)
        return float(loss), grads

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

    def set_alpha_clip(self, value: float) -> None:
        self.alpha_clip = value

    def to_dict(self) -> dict:
        return {
            "kind": "made",
            "dim": self.dim,
            "context_dim": self.context_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "order": self.order.tolist(),
            "alpha_clip": self.alpha_clip,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MadeNet":
        return cls(
            doc["dim"],
            doc["context_dim"],
            tuple(doc["hidden"]),
            doc["order"],
            [MaskedLayer.from_dict(layer) for layer in doc["layers"]],
            doc["activation"],
            doc["alpha_clip"]
        )


class MafModel:
    """
    Stack of MADEs. Layer k maps z_k to u_k; the next layer's input is
    z_{k+1} = u_k[:, permutations[k]]. The base density is N(0, I).

    Attributes:
        layers (list[MadeNet]): MADE layers sharing D and C.
        permutations (list[np.ndarray]): len(layers) - 1 column permutations.
    """
    def __init__(self, layers: list[MadeNet], permutations: list):
        if not layers:
            raise ValueError("A MAF needs at least one layer.")
        self.layers = layers
        dim, context_dim = layers[0].dim, layers[0].context_dim
        if any(m.dim != dim or m.context_dim != context_dim for m in layers):
            raise ShapeError("All MAF layers must share D and C.")
        if len(permutations) != len(layers) - 1:
            raise ValueError("Expected one permutation between each layer pair.")
        self.permutations = [_check_permutation(p, dim) for p in permutations]

    @classmethod
    def create(
        cls,
        dim: int,
        rng: RngStream,
        context_dim: int=0,
        n_layers: int=5,
        hidden: tuple=(50,),
        activation: str="tanh",
        permutations: Union[list, None]=None,
        alpha_clip: Union[float, None]=None
    ) -> "MafModel":
        """Random MAF; permutations default to order reversal between layers."""
        layers = [
            MadeNet.create(
                dim, rng, context_dim, hidden, activation,
                alpha_clip=alpha_clip
            )
            for _ in range(n_layers)
        ]
        if permutations is None:
            permutations = [np.arange(dim)[::-1] for _ in range(n_layers - 1)]
        return cls(layers, permutations)

    @property
    def dim(self) -> int:
        return self.layers[0].dim

    @property
    def context_dim(self) -> int:
        return self.layers[0].context_dim

    def _transform_cached(self, x: Matrix, ctx: Matrix) -> tuple:
        z, log_det, caches = x, np.zeros(x.shape[0]), []
        for k, made in enumerate(self.layers):
            try:
                u, ld, cache = made._transform_cached(z, ctx)
            except NumericError as e:
                raise NumericError(f"MAF layer {k}: {e}", index=k) from e
            log_det = log_det + ld
            caches.append(cache)
            z = u[:, self.permutations[k]] if k < len(self.permutations) else u
        return z, log_det, caches

    def transform(self, x, context=None) -> tuple[Matrix, np.ndarray]:
        x = as_matrix(x, cols=self.dim, name="x")
        ctx = as_context(context, x.shape[0], self.context_dim)
        u, log_det, _ = self._transform_cached(x, ctx)
        return u, log_det

    def inverse(self, u, context=None) -> Matrix:
        z = as_matrix(u, cols=self.dim, name="u")
        ctx = as_context(context, z.shape[0], self.context_dim)
        for k in range(len(self.layers) - 1, -1, -1):
            z = self.layers[k].inverse(z, ctx)
            if k > 0:
                z = z[:, np.argsort(self.permutations[k - 1])]
        return z

    def log_prob(self, x, context=None) -> np.ndarray:
        u, log_det = self.transform(x, context)
        return _std_normal_log_prob(u) + log_det

    def sample(self, n: int, context, rng: RngStream) -> Matrix:
        return self.inverse(rng.normal(size=(n, self.dim)), context)

    def loss(self, x, context, weights) -> float:
        return float(-np.mean(np.asarray(weights) * self.log_prob(x, context)))

    def loss_and_grad(self, x, context, weights) -> tuple[float, np.ndarray]:
        x = as_matrix(x, cols=self.dim, name="x")
        ctx = as_context(context, x.shape[0], self.context_dim)
        c = np.asarray(weights, dtype=np.float64) / x.shape[0]
        u, log_det, caches = self._transform_cached(x, ctx)
        loss = -np.sum(c * (_std_normal_log_prob(u) + log_det))
        grad_u = c[:, np.newaxis] * u
        grads = []
        for k in range(len(self.layers) - 1, -1, -1):
            g, grad_x = self.layers[k]._backward(caches[k], grad_u, -c)
            grads.append(g)
            if k > 0:
                grad_u = grad_x[:, np.argsort(self.permutations[k - 1])]
        return float(loss), np.concatenate(grads[::-1])

    @property
    def n_params(self) -> int:
        return sum(made.n_params for made in self.layers)

    def get_params(self) -> np.ndarray:
        return np.concatenate([made.get_params() for made in self.layers])

    def set_params(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=np.float64)
        if params.size != self.n_params:
            raise ShapeError(f"Expected {self.n_params} parameters.")
        start = 0
        for made in self.layers:
            made.set_params(params[start:start + made.n_params])
            start += made.n_params

    def set_alpha_clip(self, value: float) -> None:
        for made in self.layers:
            made.set_alpha_clip(value)

    def to_dict(self) -> dict:
        return {
            "kind": "maf",
            "dim": self.dim,
            "context_dim": self.context_dim,
            "permutations": [p.tolist() for p in self.permutations],
            "layers": [made.to_dict() for made in self.layers],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MafModel":
        return cls(
            [MadeNet.from_dict(layer) for layer in doc["layers"]],
            doc["permutations"]
        )


def made_log_prob(
    model: MadeNet,
    x,
    context=None
) -> tuple[float, np.ndarray]:
    """
    Log-density of a single vector under a MADE.

    Returns:
        tuple: log q(x | context) and the noise vector u.
    """
    u, log_det = model.transform(np.ravel(x), context)
    return float(_std_normal_log_prob(u)[0] + log_det[0]), u[0]


def made_sample(model: MadeNet, n: int, context, rng: RngStream) -> Matrix:
    """n draws from a MADE; D sequential passes."""
    if n < 1:
        raise ValueError("n must be at least 1.")
    return model.sample(n, context, rng)


def maf_log_prob(model: MafModel, x, context=None) -> float:
    """Log-density of a single vector under a MAF."""
    return float(model.log_prob(np.ravel(x), context)[0])


def maf_sample(model: MafModel, n: int, context, rng: RngStream) -> Matrix:
    """n draws from a MAF, inverting the stack layer by layer."""
    if n < 1:
        raise ValueError("n must be at least 1.")
    return model.sample(n, context, rng)


def train_mle(
    model: Union[MadeNet, MafModel],
    data,
    cfg: TrainConfig,
    rng: RngStream,
    context=None,
    weights=None,
    logger: logging.Logger=logging.getLogger(__name__)
) -> tuple[Union[MadeNet, MafModel], TrainResult]:
    """
    Maximum-likelihood training of a flow.

    Args:
        model: MADE or MAF, trained in place.
        data: (N, D) training rows.
        cfg (TrainConfig): Training settings.
        rng (RngStream): Stream for the split and minibatch order.
        context: (N, C) conditioning rows for conditional models.
        weights: Optional per-row weights.
        logger (logging.Logger): Progress logger.

    Returns:
        tuple: the model at its best validation snapshot and the loss trace.
    """
    x = as_matrix(data, cols=model.dim, name="data")
    ctx = as_context(context, x.shape[0], model.context_dim)
    model.set_alpha_clip(cfg.alpha_clip)
    result = fit_maximum_likelihood(
        model, x, ctx, cfg, rng, weights=weights, logger=logger
    )
    return model, result
