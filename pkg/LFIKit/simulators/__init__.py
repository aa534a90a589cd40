from .base_simulator import BaseSimulator
from .gaussian_toy import GaussianToy
from .lotka_volterra import LotkaVolterraSim
from .mg1 import Mg1Sim
from .quadratic_toy import QuadraticToy
from .standardization import calibrate_standardization
