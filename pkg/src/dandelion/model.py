"""The four trainable blocks: two projectors, shared classifier, discriminator.

Every block is a single affine layer. Projectors add LeakyReLU (slope 0.01)
and re-normalize rows onto the unit hypersphere so dandelion geometry stays
on the sphere; the classifier ends in a softmax over K+1 classes and the
discriminator in a sigmoid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, Tensor
from .errors import DimensionMismatchError

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class Dims:
    d_s: int
    d_t: int
    d_c: int
    d_g: int
    k: int

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 1:
                raise ValueError(f"dims.{name} must be >= 1, got {value}")


@dataclass
class Model:
    dims: Dims
    e_s_w: Tensor
    e_s_b: Tensor
    e_t_w: Tensor
    e_t_b: Tensor
    c_w: Tensor
    c_b: Tensor
    d_w: Tensor
    d_b: Tensor

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [
            ("e_s_w", self.e_s_w), ("e_s_b", self.e_s_b),
            ("e_t_w", self.e_t_w), ("e_t_b", self.e_t_b),
            ("c_w", self.c_w), ("c_b", self.c_b),
            ("d_w", self.d_w), ("d_b", self.d_b),
        ]

    def projector_parameters(self) -> list[Tensor]:
        return [self.e_s_w, self.e_s_b, self.e_t_w, self.e_t_b]

    def attach(self, tape: GradientTape) -> None:
        for _, p in self.parameters():
            tape.watch(p)


def init_model(dims: Dims, seed: int) -> Model:
    """Uniform +-sqrt(6/fan_in) weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)

    def layer(fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return Tensor(w), Tensor(np.zeros((1, fan_out)))

    e_s_w, e_s_b = layer(dims.d_s, dims.d_c)
    e_t_w, e_t_b = layer(dims.d_t, dims.d_c)
    c_w, c_b = layer(dims.d_c, dims.k + 1)
    d_w, d_b = layer(dims.d_g, 1)
    return Model(dims=dims, e_s_w=e_s_w, e_s_b=e_s_b, e_t_w=e_t_w, e_t_b=e_t_b,
                 c_w=c_w, c_b=c_b, d_w=d_w, d_b=d_b)


def project(model: Model, x, origin: str) -> Tensor:
    """Map a batch through the projector picked by origin onto unit rows."""
    if origin == "source":
        w, b, expected = model.e_s_w, model.e_s_b, model.dims.d_s
    elif origin == "target":
        w, b, expected = model.e_t_w, model.e_t_b, model.dims.d_t
    else:
        raise ValueError(f"origin must be source|target, got {origin!r}")
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.data.shape[1] != expected:
        raise DimensionMismatchError(
            f"{origin} batch has {t.data.shape[1]} columns, projector expects {expected}"
        )
    pre = ad.add(ad.matmul(t, w), b)
    return ad.l2_normalize_rows(ad.leaky_relu(pre, LEAKY_SLOPE))


def classify(model: Model, f) -> Tensor:
    """(K+1)-class probability rows for projected features."""
    t = f if isinstance(f, Tensor) else Tensor(np.asarray(f, dtype=np.float64))
    if t.data.shape[1] != model.dims.d_c:
        raise DimensionMismatchError(
            f"classifier expects {model.dims.d_c} columns, got {t.data.shape[1]}"
        )
    return ad.softmax_rows(ad.add(ad.matmul(t, model.c_w), model.c_b))


def discriminate(model: Model, phi) -> Tensor:
    """Per-row probability that an embedding comes from a real dandelion."""
    t = phi if isinstance(phi, Tensor) else Tensor(np.asarray(phi, dtype=np.float64))
    if t.data.shape[1] != model.dims.d_g:
        raise DimensionMismatchError(
            f"discriminator expects {model.dims.d_g} columns, got {t.data.shape[1]}"
        )
    return ad.sigmoid(ad.add(ad.matmul(t, model.d_w), model.d_b))
