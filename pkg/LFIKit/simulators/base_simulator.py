import abc
from dataclasses import fields
from typing import Union
import numpy as np
from ..classic_density import GaussianModel
from ..num_core import Matrix, RngStream, as_matrix, parallel_map


class BaseSimulator(abc.ABC):
    """
    Base class for simulators. All the simulators should fullfill the
    requirements of this class. Summaries are emitted directly, so
    ``simulate`` returns a fixed-length summary vector.

    Attributes:
        name (str): Registry name of the simulator.

    Methods:
        prior_sample: Draws one parameter vector from the prior.
        prior_log_prob: Prior log-density of a parameter vector.
        simulate: Runs the simulator once.
        exact_posterior: Exact posterior at observed data, if known.
        prior_gaussian: The prior as a Gaussian, None for flat priors.
        prior_std: Per-axis prior standard deviation.
        simulate_batch: Runs the simulator on many parameters.
    """
    name: str = ""

    @classmethod
    def from_settings(cls, settings: Union[dict, None]) -> "BaseSimulator":
        """
        Builds a simulator from its JSON settings block.

        Raises:
            ValueError: If the block contains an unknown setting.
        """
        settings = dict(settings or {})
        known = {f.name for f in fields(cls) if f.init}
        unknown = set(settings) - known
        if unknown:
            raise ValueError(
                f"Unknown settings for {cls.name}: {sorted(unknown)}"
            )
        return cls(**settings)

    @property
    @abc.abstractmethod
    def param_dim(self) -> int:
        """Dimension of theta."""
        pass

    @property
    @abc.abstractmethod
    def data_dim(self) -> int:
        """Dimension of the summary vector."""
        pass

    @abc.abstractmethod
    def prior_sample(self, rng: RngStream) -> np.ndarray:
        """Returns one prior draw."""
        pass

    @abc.abstractmethod
    def prior_log_prob(self, theta) -> float:
        """Returns log p(theta), -inf outside the prior support."""
        pass

    @abc.abstractmethod
    def simulate(self, theta, rng: RngStream) -> np.ndarray:
        """
        Runs the simulator once. Deterministic given theta and the
        state of rng.

        Args:
            theta: Parameter vector.
            rng (RngStream): Stream used for every random draw.
        """
        pass

    @abc.abstractmethod
    def prior_std(self) -> np.ndarray:
        """Per-axis prior standard deviation."""
        pass

    def exact_posterior(self, x0) -> GaussianModel:
        """Exact posterior at x0; only available for conjugate models."""
        raise NotImplementedError(
            f"{self.name} has no closed-form posterior."
        )

    def prior_gaussian(self) -> Union[GaussianModel, None]:
        """The prior as a Gaussian, or None when it is flat on its support."""
        return None

    def prior_sample_n(self, n: int, rng: RngStream) -> Matrix:
        return np.array([self.prior_sample(rng) for _ in range(n)])

    def prior_log_probs(self, thetas) -> np.ndarray:
        thetas = as_matrix(thetas, cols=self.param_dim, name="thetas")
        return np.array([self.prior_log_prob(t) for t in thetas])

    def simulate_batch(
        self,
        thetas,
        rng: RngStream,
        threads: Union[int, None]=None
    ) -> Matrix:
        """
        Simulates every row of thetas with its own child stream, so the
        result does not depend on the number of worker threads.

        Args:
            thetas: (n, param_dim) parameters.
            rng (RngStream): Parent stream; n children are spawned.
            threads (int): Worker threads, config.THREADS by default.

        Returns:
            Matrix: (n, data_dim) summaries, in the order of thetas.
        """
        thetas = as_matrix(thetas, cols=self.param_dim, name="thetas")
        streams = rng.spawn(thetas.shape[0])
        rows = parallel_map(
            lambda job: self.simulate(*job), list(zip(thetas, streams)), threads
        )
        return np.array(rows, dtype=np.float64).reshape(-1, self.data_dim)
