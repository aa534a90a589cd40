"""
Maximum-likelihood training shared by the flow and mixture-density models:
minibatch Adam on the (optionally weighted) negative average log likelihood
with early stopping on a held-out validation split.
"""
from dataclasses import dataclass, field, fields
from typing import Union
import logging
import numpy as np
from .num_core import AdamState, RngStream, adam_step, as_matrix
from .errors import (
    InsufficientDataError,
    DegenerateWeightsError,
    NumericError,
    TrainingError
)


@dataclass
class TrainConfig:
    """
    Settings for maximum-likelihood training.

    Attributes:
        batch_size (int): Minibatch size.
        max_epochs (int): Maximum number of passes over the training split.
        patience (int): Epochs without validation improvement before stopping.
        validation_fraction (float): Share of rows held out for validation.
        lr, beta1, beta2, eps: Adam settings; None means config defaults.
        alpha_clip (float): Clip threshold for flow log-scales.
    """
    batch_size: int = 100
    max_epochs: int = 200
    patience: int = 20
    validation_fraction: float = 0.1
    lr: Union[float, None] = None
    beta1: Union[float, None] = None
    beta2: Union[float, None] = None
    eps: Union[float, None] = None
    alpha_clip: float = 7.0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1).")
        if self.patience < 1:
            raise ValueError("patience must be at least 1.")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1.")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative.")
        if not self.alpha_clip > 0:
            raise ValueError("alpha_clip must be positive.")

    @classmethod
    def from_dict(cls, settings: Union[dict, None]) -> "TrainConfig":
        """Builds a config from a JSON settings block, rejecting unknown keys."""
        settings = dict(settings or {})
        known = {f.name for f in fields(cls)}
        unknown = set(settings) - known
        if unknown:
            raise ValueError(f"Unknown training settings: {sorted(unknown)}")
        return cls(**settings)


@dataclass
class TrainResult:
    """
    Loss trace of a training run.

    Attributes:
        train_losses (list[float]): Mean minibatch loss per epoch.
        validation_losses (list[float]): Validation loss per epoch.
        best_epoch (int): Epoch of the returned snapshot (0 = untouched).
    """
    train_losses: list = field(default_factory=list)
    validation_losses: list = field(default_factory=list)
    best_epoch: int = 0


def check_weights(weights, n: int) -> np.ndarray:
    """
    Validates per-row training weights (None means all ones).

    Raises:
        DegenerateWeightsError: If weights are negative, non-finite or all zero.
    """
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size != n:
        raise ValueError(f"Expected {n} weights, got {w.size}.")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DegenerateWeightsError("Weights must be finite and non-negative.")
    if not np.any(w > 0):
        raise DegenerateWeightsError("All training weights are zero.")
    return w


def fit_maximum_likelihood(
    model,
    targets,
    contexts,
    cfg: TrainConfig,
    rng: RngStream,
    weights=None,
    logger: logging.Logger=logging.getLogger(__name__)
) -> TrainResult:
    """
    Trains ``model`` in place and leaves it at the best-validation snapshot.

    The model must provide get_params, set_params, loss and loss_and_grad.

    Args:
        model: Conditional density model.
        targets: (N, D) rows whose density is modelled.
        contexts: (N, C) conditioning rows (C may be 0).
        cfg (TrainConfig): Training settings.
        rng (RngStream): Stream for the split and minibatch order.
        weights: Optional non-negative per-row weights.
        logger (logging.Logger): Progress logger.

    Returns:
        TrainResult: loss traces and the epoch of the returned snapshot.

    Raises:
        InsufficientDataError: If N is smaller than the minibatch size.
        DegenerateWeightsError: If weights are all zero.
        TrainingError: If the validation loss becomes non-finite.
    """
    x = as_matrix(targets, name="targets")
    n = x.shape[0]
    ctx = np.asarray(contexts, dtype=np.float64).reshape(n, -1)
    w = check_weights(weights, n)
    if n < cfg.batch_size:
        raise InsufficientDataError(
            f"{n} rows is fewer than the minibatch size {cfg.batch_size}."
        )
    result = TrainResult()
    if cfg.max_epochs == 0:
        return result

    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.validation_fraction * n)))
    if n - n_val < 1:
        raise InsufficientDataError("No rows left for training.")
    train_idx, val_idx = perm[:n - n_val], perm[n - n_val:]

    params = model.get_params()
    state = AdamState.fresh(
        params.size, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps
    )
    best_loss = model.loss(x[val_idx], ctx[val_idx], w[val_idx])
    best_params = params.copy()
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_idx)
        batch_losses = []
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grad = model.loss_and_grad(x[batch], ctx[batch], w[batch])
            try:
                state, params = adam_step(state, params, grad)
            except NumericError as e:
                raise TrainingError(
                    f"Non-finite gradient in epoch {epoch}.", epoch=epoch
                ) from e
            model.set_params(params)
            batch_losses.append(loss)
        val_loss = model.loss(x[val_idx], ctx[val_idx], w[val_idx])
        if not np.isfinite(val_loss):
            model.set_params(best_params)
            raise TrainingError(
                f"Validation loss diverged in epoch {epoch}.", epoch=epoch
            )
        result.train_losses.append(float(np.mean(batch_losses)))
        result.validation_losses.append(float(val_loss))
        if val_loss < best_loss:
            best_loss, best_params = val_loss, params.copy()
            result.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                logger.info(f"Early stopping after epoch {epoch}")
                break
    model.set_params(best_params)
    logger.info(
        f"Training finished, best validation loss {best_loss:.4f} "
        f"at epoch {result.best_epoch}"
    )
    return result
