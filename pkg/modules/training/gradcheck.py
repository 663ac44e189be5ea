"""Central finite differences against the analytic backward passes.

The scalar checked is ``sum(layer(x) * R)`` for a fixed random ``R``, so the
analytic gradients come from a single ``backward(R)``. Up to ``max_coords``
coordinates per tensor are sampled; a coordinate that misses the tolerance at
step ``h`` is re-measured at ``h / 10`` and the smaller error is kept, which
rules out a ReLU or max-pool kink sitting inside the first step.
"""
from typing import Callable, Dict, List, Optional

import numpy as np

from core.config import NetworkConfig
from core.interfaces import Layer
from core.models import GradCheckReport, LayerCheck, LinearParams
from modules.nn.blocks import Flatten, LinearHead, Sequential, VideoShuffle
from modules.nn.network import Network, build_network
from utils.logger import Logger

DEFAULT_STEP = 1e-4
_FLOOR = 1e-7

logger = Logger.get_logger()


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _FLOOR)


def _check_tensor(name: str, target: np.ndarray, analytic: np.ndarray, loss: Callable[[], float],
                  rng: np.random.Generator, tolerance: float, max_coords: int, step: float) -> LayerCheck:
    flat = target.reshape(-1)
    grad = analytic.reshape(-1)
    count = min(max_coords, flat.size)
    coords = rng.choice(flat.size, size=count, replace=False)
    worst = 0.0
    for i in coords:
        errors = []
        for h in (step, step / 10):
            original = flat[i]
            flat[i] = original + h
            plus = loss()
            flat[i] = original - h
            minus = loss()
            flat[i] = original
            errors.append(relative_error(float(grad[i]), (plus - minus) / (2 * h)))
            if errors[-1] <= tolerance:
                break
        worst = max(worst, min(errors))
    return LayerCheck(name=name, shape=tuple(target.shape), coords_checked=int(count),
                      max_rel_error=worst, passed=worst <= tolerance)


def check_layer(layer: Layer, x: np.ndarray, tolerance: float = 1e-4, training: bool = True,
                seed: int = 0, max_coords: int = 12, step: float = DEFAULT_STEP) -> GradCheckReport:
    """Check every parameter of ``layer`` and its input gradient. Run it on float64 data."""
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x, training=training, cache=True)
    weights = rng.standard_normal(out.shape)
    grad_x = layer.backward(weights.copy())
    grads: Dict[str, np.ndarray] = {k: v.copy() for k, v in layer.gradients().items()}

    def loss() -> float:
        return float(np.sum(layer.forward(x, training=training, cache=False) * weights))

    checks: List[LayerCheck] = [
        _check_tensor(name, param, grads[name], loss, rng, tolerance, max_coords, step)
        for name, param in layer.parameters().items()
    ]
    checks.append(_check_tensor("input", x, grad_x, loss, rng, tolerance, max_coords, step))
    return GradCheckReport(checks=checks, tolerance=tolerance)


def randomize_for_check(network: Network, rng: np.random.Generator) -> None:
    """Move BN affine terms and running statistics off their init values."""
    for bn in network.batchnorms():
        bn.p.gamma[:] = rng.uniform(0.5, 1.5, bn.p.channels)
        bn.p.beta[:] = rng.normal(0.0, 0.1, bn.p.channels)
        bn.p.running_mean[:] = rng.normal(0.0, 0.1, bn.p.channels)
        bn.p.running_var[:] = rng.uniform(0.5, 1.5, bn.p.channels)
    network.head.p.weight[:] = rng.normal(0.0, 0.1, network.head.p.weight.shape)


def grad_check(net_cfg: NetworkConfig, tolerance: float = 1e-4, seed: int = 0, batch: int = 2,
               max_coords: int = 12, training: bool = True, step: float = DEFAULT_STEP,
               input_size: Optional[int] = None) -> GradCheckReport:
    """Finite-difference check of a whole network in float64 with dropout off.

    Running statistics are not updated by the probing passes, so every loss
    evaluation sees the same function.
    """
    network = build_network(net_cfg.model_copy(update={'dropout': 0.0}), seed=seed, dtype='f64')
    rng = np.random.default_rng([seed, 3])
    randomize_for_check(network, rng)
    network.set_update_stats(False)
    size = input_size or net_cfg.input_size
    x = rng.standard_normal((batch, net_cfg.frames, net_cfg.in_channels, size, size))
    total = sum(p.size for p in network.parameters().values())
    logger.info(f"Gradient check of {network.name}: {total} parameters, tolerance {tolerance:g}")
    report = check_layer(network, x, tolerance, training, seed, max_coords, step)
    for check in report.checks:
        logger.debug(f"{check.name} {check.shape}: max rel error {check.max_rel_error:.2e}")
    return report


def shuffle_linear_check(frames: int = 4, channels: int = 8, size: int = 3, classes: int = 5,
                         groups: Optional[int] = None, tolerance: float = 1e-10, seed: int = 0) -> GradCheckReport:
    """A video shuffle feeding one linear layer: the loss is linear in every input."""
    rng = np.random.default_rng(seed)
    features = frames * channels * size * size
    head = LinearHead("fc", LinearParams(weight=rng.standard_normal((classes, features)),
                                         bias=rng.standard_normal(classes)), dropout=0.0)
    net = Sequential("shuffle_linear", [VideoShuffle("shuffle", groups or frames), Flatten(), head])
    x = rng.standard_normal((2, frames, channels, size, size))
    # linear loss: central differences are exact for any step
    return check_layer(net, x, tolerance, training=False, seed=seed, max_coords=64, step=1.0)
