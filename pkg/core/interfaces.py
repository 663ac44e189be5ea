from abc import ABC, abstractmethod
from typing import Dict, Tuple

import numpy as np

from core.models import ClipDataset


class Layer(ABC):
    """A network stage with a hand-written backward pass.

    ``forward`` with ``cache=True`` keeps what ``backward`` needs on the
    instance; with ``cache=False`` it only reads parameters, so concurrent
    inference calls on one instance are safe.
    """

    name: str = ""

    @abstractmethod
    def forward(self, x: np.ndarray, training: bool = False, cache: bool = True) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, grad: np.ndarray) -> np.ndarray:
        pass

    def parameters(self) -> Dict[str, np.ndarray]:
        return {}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {}


class TaskGenerator(ABC):
    num_classes: int

    @abstractmethod
    def generate(self, count: int, rng: np.random.Generator) -> ClipDataset:
        pass

    @abstractmethod
    def reversed_label(self, label: int) -> int:
        """Label of a clip after its frame order is reversed."""
        pass

    def split(self, num_train: int, num_val: int, seed: int) -> Tuple[ClipDataset, ClipDataset]:
        rng = np.random.default_rng(seed)
        return self.generate(num_train, rng), self.generate(num_val, rng)
