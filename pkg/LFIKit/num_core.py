"""
Numeric substrate shared by every model: matrix validation, masked affine
layers with explicit backward passes, the Adam update, a central
finite-difference gradient oracle and reproducible RNG streams.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Union
import numpy as np
from . import config
from .errors import ShapeError, NumericError

# 2-D float64 array, one sample per row
Matrix = np.ndarray

_MASK64 = (1 << 64) - 1


def as_matrix(
    data,
    cols: Union[int, None]=None,
    name: str="input"
) -> Matrix:
    """
    Converts data to a finite 2-D float64 array. A 1-D input is read as a
    single row.

    Args:
        data: array-like of shape (rows, cols) or (cols,).
        cols (int): Expected number of columns, if any.
        name (str): Name used in error messages.

    Returns:
        Matrix: 2-D float64 array.

    Raises:
        ShapeError: If data is not 1-D/2-D or has the wrong width.
        NumericError: If any entry is not finite.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 1-D or 2-D, got {arr.ndim}-D.")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(
            f"{name} must have {cols} columns, got {arr.shape[1]}."
        )
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NumericError(
            f"{name} has a non-finite entry at flat index {bad[0]}.",
            index=int(bad[0])
        )
    return arr


def as_context(context, n: int, dim: int) -> Matrix:
    """
    Broadcasts a context vector (or matrix) to n rows.

    Args:
        context: None, vector of length dim or (n, dim) matrix.
        n (int): Number of rows required.
        dim (int): Context dimension (0 means unconditional).

    Returns:
        Matrix: (n, dim) context matrix.
    """
    if dim == 0:
        return np.zeros((n, 0))
    if context is None:
        raise ShapeError(f"A context of dimension {dim} is required.")
    ctx = as_matrix(context, cols=dim, name="context")
    if ctx.shape[0] == 1 and n != 1:
        ctx = np.repeat(ctx, n, axis=0)
    if ctx.shape[0] != n:
        raise ShapeError(f"context has {ctx.shape[0]} rows, expected {n}.")
    return ctx


def _relu_grad(pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    return (pre > 0).astype(np.float64)


# name -> (forward, derivative given pre-activation and output)
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "identity": (lambda a: a, lambda a, out: np.ones_like(a)),
    "tanh": (np.tanh, lambda a, out: 1.0 - out ** 2),
    "relu": (lambda a: np.maximum(a, 0.0), _relu_grad),
}


@dataclass
class MaskedLayer:
    """
    Affine layer whose effective weight is ``weight * mask``.

    Attributes:
        weight (np.ndarray): (out, in) weights.
        bias (np.ndarray): (out,) biases.
        mask (np.ndarray): (out, in) binary mask.
        activation (str): One of "identity", "tanh", "relu".
    """
    weight: np.ndarray
    bias: np.ndarray
    mask: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape != self.mask.shape:
            raise ShapeError(
                f"weight {self.weight.shape} and mask {self.mask.shape} "
                "must be equal 2-D shapes."
            )
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias must have length {self.weight.shape[0]}."
            )
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask entries must be 0 or 1.")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Activation {self.activation} is not supported.")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    @classmethod
    def initialize(
        cls,
        mask: np.ndarray,
        activation: str,
        rng: "RngStream",
        scale: float=1.0
    ) -> "MaskedLayer":
        """
        Glorot-uniform initialization, zero biases.

        Args:
            mask (np.ndarray): (out, in) binary mask.
            activation (str): Activation name.
            rng (RngStream): Stream to draw weights from.
            scale (float): Extra multiplier on the weights.
        """
        out_dim, in_dim = mask.shape
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        weight = rng.uniform(-limit, limit, size=(out_dim, in_dim)) * scale
        return cls(weight * mask, np.zeros(out_dim), mask, activation)

    def forward(self, inputs: Matrix) -> tuple[Matrix, tuple]:
        """
        Batched forward pass.

        Returns:
            tuple: outputs (rows, out) and the cache needed by backward.
        """
        if inputs.ndim != 2 or inputs.shape[1] != self.in_dim:
            raise ShapeError(
                f"Layer expects {self.in_dim} input columns, "
                f"got shape {inputs.shape}."
            )
        fn, _ = ACTIVATIONS[self.activation]
        pre = inputs @ (self.weight * self.mask).T + self.bias
        out = fn(pre)
        return out, (inputs, pre, out)

    def backward(
        self,
        grad_out: Matrix,
        cache: tuple
    ) -> tuple[np.ndarray, np.ndarray, Matrix]:
        """
        Backward pass of ``forward``.

        Args:
            grad_out: Gradient of the loss w.r.t. the outputs.
            cache: Cache returned by forward.

        Returns:
            tuple: gradients w.r.t. weight, bias and inputs.
        """
        inputs, pre, out = cache
        _, deriv = ACTIVATIONS[self.activation]
        delta = grad_out * deriv(pre, out)
        grad_weight = (delta.T @ inputs) * self.mask
        grad_bias = delta.sum(axis=0)
        grad_inputs = delta @ (self.weight * self.mask)
        return grad_weight, grad_bias, grad_inputs

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])

    def set_params(self, params: np.ndarray) -> None:
        n_w = self.weight.size
        self.weight = np.array(params[:n_w]).reshape(self.weight.shape)
        self.bias = np.array(params[n_w:n_w + self.bias.size])

    def to_dict(self) -> dict:
        return {
            "shape": list(self.weight.shape),
            "activation": self.activation,
            "weight": self.weight.ravel().tolist(),
            "bias": self.bias.tolist(),
            "mask": self.mask.astype(int).ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MaskedLayer":
        shape = tuple(doc["shape"])
        return cls(
            np.array(doc["weight"], dtype=np.float64).reshape(shape),
            np.array(doc["bias"], dtype=np.float64),
            np.array(doc["mask"], dtype=np.float64).reshape(shape),
            doc["activation"]
        )


def masked_affine_apply(layer: MaskedLayer, inputs) -> Matrix:
    """
    Applies ``activation((weight * mask) @ x + bias)`` to every row.

    Raises:
        ShapeError: If the inputs don't have layer.in_dim columns.
    """
    out, _ = layer.forward(as_matrix(inputs, name="layer input"))
    return out


def flatten_grads(grads: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Concatenates per-layer (weight, bias) gradients like get_params."""
    return np.concatenate(
        [np.concatenate([gw.ravel(), gb]) for gw, gb in grads]
    )


@dataclass(frozen=True)
class AdamState:
    """
    State of the Adam optimizer.

    Attributes:
        step (int): Number of updates applied so far.
        first_moment (np.ndarray): Decayed gradient mean.
        second_moment (np.ndarray): Decayed squared-gradient mean.
        lr, beta1, beta2, eps (float): Optimizer settings.
    """
    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    lr: float
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def fresh(
        cls,
        n_params: int,
        lr: Union[float, None]=None,
        beta1: Union[float, None]=None,
        beta2: Union[float, None]=None,
        eps: Union[float, None]=None
    ) -> "AdamState":
        """Zero-moment state; unset settings come from config."""
        return cls(
            step=0,
            first_moment=np.zeros(n_params),
            second_moment=np.zeros(n_params),
            lr=config.ADAM_LR if lr is None else lr,
            beta1=config.ADAM_BETA1 if beta1 is None else beta1,
            beta2=config.ADAM_BETA2 if beta2 is None else beta2,
            eps=config.ADAM_EPS if eps is None else eps
        )


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grads: np.ndarray
) -> tuple[AdamState, np.ndarray]:
    """
    One bias-corrected Adam update, minimizing the loss whose gradient is
    ``grads``. Inputs are not modified.

    Returns:
        tuple: the new state and the updated parameters.

    Raises:
        ShapeError: If params, grads and moments differ in length.
        NumericError: If a gradient entry is not finite.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if (
        params.shape != grads.shape
        or state.first_moment.shape != params.shape
        or state.second_moment.shape != params.shape
    ):
        raise ShapeError(
            "params, grads and optimizer moments must have equal length."
        )
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericError(
            f"Non-finite gradient entry at index {bad[0]}.",
            index=int(bad[0])
        )
    step = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads ** 2
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = replace(state, step=step, first_moment=m, second_moment=v)
    return new_state, new_params


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    at,
    h: float=1e-5
) -> np.ndarray:
    """
    Central finite-difference gradient of a scalar function.

    Args:
        f: Scalar function of a vector.
        at: Point to differentiate at.
        h (float): Step size, must be positive.

    Returns:
        np.ndarray: (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.

    Raises:
        ValueError: If h is not positive.
        NumericError: If f is not finite at an evaluated point.
    """
    if h <= 0:
        raise ValueError("h must be positive.")
    x = np.array(at, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        x_plus, x_minus = x.copy(), x.copy()
        x_plus[i] += h
        x_minus[i] -= h
        f_plus, f_minus = float(f(x_plus)), float(f(x_minus))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(
                f"f is not finite around coordinate {i}.", index=i
            )
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


class RngStream:
    """
    Reproducible random stream. Draws are fully determined by
    (seed, stream_id) and by the sequence of calls made on the stream.
    Child streams from ``spawn`` are independent of each other and of the
    parent, which makes per-task streams safe for parallel simulation.

    Attributes:
        seed (int): 64-bit seed.
        stream_id (int): 64-bit stream identifier.
        generator (np.random.Generator): Underlying PCG64 generator.
    """
    def __init__(
        self,
        seed: int,
        stream_id: int=0,
        _sequence: Union[np.random.SeedSequence, None]=None
    ):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        if _sequence is None:
            _sequence = np.random.SeedSequence(
                entropy=self.seed & _MASK64,
                spawn_key=(self.stream_id & _MASK64,)
            )
        self._sequence = _sequence
        self.generator = np.random.Generator(np.random.PCG64(_sequence))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, n: int) -> list["RngStream"]:
        """Returns n fresh child streams (deterministic in call order)."""
        return [
            RngStream(self.seed, self.stream_id, _sequence=child)
            for child in self._sequence.spawn(n)
        ]

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def exponential(self, scale=1.0, size=None):
        return self.generator.exponential(scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self.generator.permutation(x)


def parallel_map(
    fn: Callable,
    items: list,
    threads: Union[int, None]=None
) -> list:
    """
    Ordered map over items on a thread pool of config.THREADS workers.
    Each item must carry its own RngStream; results keep the item order.
    """
    threads = config.THREADS if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
