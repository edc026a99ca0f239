"""Frame-sequence encoder with per-stage feature-wise modulation.

Each stage is affine map -> standardization -> FiLM -> ReLU over the frame
axis, followed by temporal mean pooling and a linear projection to the
embedding dimension G. The FiLM parameters are supplied per call, so the
same encoder weights serve both the plain supervised path (identity
modulation) and the task-conditioned path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, parameter

_NORM_SCOPES = ("features", "temporal")


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 16
    stage_dims: tuple = (32, 64)
    output_dim: int = 64
    # Axis the standardization statistics are taken over: "features" uses
    # the channel axis of each frame, "temporal" the frame axis of each
    # channel. See notes/decisions for why "features" is the default.
    norm_scope: str = "features"
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "stage_dims", tuple(int(d) for d in self.stage_dims))
        if not self.stage_dims:
            raise ShapeMismatchError("at least one stage is required")
        if self.input_dim < 1 or self.output_dim < 1 or min(self.stage_dims) < 1:
            raise ShapeMismatchError("all encoder dimensions must be positive")
        if self.norm_scope not in _NORM_SCOPES:
            raise ShapeMismatchError(
                f"norm_scope must be one of {_NORM_SCOPES}, got {self.norm_scope!r}"
            )
        if self.norm_eps <= 0:
            raise ShapeMismatchError("norm_eps must be positive")


@dataclass
class FiLMParams:
    """Per-stage modulation vectors; entries may be arrays or graph tensors."""

    gammas: tuple
    betas: tuple

    def __post_init__(self):
        if len(self.gammas) != len(self.betas):
            raise ShapeMismatchError("gamma/beta stage counts differ")

    @classmethod
    def identity(cls, stage_dims) -> "FiLMParams":
        """gamma = 1, beta = 0 everywhere: modulation is a no-op."""
        return cls(
            gammas=tuple(np.ones(d) for d in stage_dims),
            betas=tuple(np.zeros(d) for d in stage_dims),
        )


@dataclass
class EncoderParams:
    weights: tuple  # stage i: (C_{i-1} x C_i)
    biases: tuple
    out_weight: Tensor  # C_S x G projection after pooling
    norm_scope: tuple = ()

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        weights, biases = [], []
        prev = config.input_dim
        for dim in config.stage_dims:
            scale = np.sqrt(2.0 / prev)
            weights.append(parameter(rng.normal(scale=scale, size=(prev, dim))))
            biases.append(parameter(np.zeros(dim)))
            prev = dim
        out = parameter(rng.normal(scale=np.sqrt(1.0 / prev), size=(prev, config.output_dim)))
        scope = (config.norm_scope,) * len(config.stage_dims)
        return cls(weights=tuple(weights), biases=tuple(biases), out_weight=out, norm_scope=scope)

    def parameters(self) -> list:
        named = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named.append((f"w{i}", w))
            named.append((f"b{i}", b))
        named.append(("out_weight", self.out_weight))
        return named


def film(features, gamma, beta) -> Tensor:
    """out[..., c] = gamma[c] * features[..., c] + beta[c]."""
    x, g, b = as_tensor(features), as_tensor(gamma), as_tensor(beta)
    if g.ndim != 1 or g.shape != b.shape:
        raise ShapeMismatchError(
            f"gamma and beta must be equal-length vectors, got {g.shape} and {b.shape}"
        )
    if x.shape[-1] != g.shape[0]:
        raise ShapeMismatchError(
            f"feature width {x.shape[-1]} does not match modulation width {g.shape[0]}"
        )
    return x * g + b


def _standardize(x: Tensor, axis: int, eps: float) -> Tensor:
    centered = x - x.mean(axis=axis, keepdims=True)
    var = (centered * centered).mean(axis=axis, keepdims=True)
    return centered / (var + eps).sqrt()


def encode_batch(frames, params: EncoderParams, film_params: FiLMParams,
                 config: EncoderConfig) -> Tensor:
    """Encode a stack of videos (M x T x D_in) to embeddings (M x G)."""
    x = as_tensor(frames)
    if x.ndim != 3 or x.shape[-1] != config.input_dim:
        raise ShapeMismatchError(
            f"expected frames of shape (M, T, {config.input_dim}), got {x.shape}"
        )
    n_stages = len(config.stage_dims)
    if len(film_params.gammas) != n_stages:
        raise ShapeMismatchError(
            f"modulation has {len(film_params.gammas)} stages, encoder has {n_stages}"
        )
    scopes = params.norm_scope or (config.norm_scope,) * n_stages
    for i in range(n_stages):
        w, b = params.weights[i], params.biases[i]
        if w.shape != (x.shape[-1], config.stage_dims[i]):
            raise ShapeMismatchError(
                f"stage {i}: weight shape {w.shape} does not map "
                f"{x.shape[-1]} -> {config.stage_dims[i]}"
            )
        gamma = as_tensor(film_params.gammas[i])
        if gamma.shape[0] != config.stage_dims[i]:
            raise ShapeMismatchError(
                f"stage {i}: modulation width {gamma.shape[0]}, "
                f"stage width {config.stage_dims[i]}"
            )
        h = x @ w + b
        h = _standardize(h, -1 if scopes[i] == "features" else -2, config.norm_eps)
        h = film(h, film_params.gammas[i], film_params.betas[i])
        x = h.relu()
    pooled = x.mean(axis=-2)
    return pooled @ params.out_weight


def encode_video(video, params: EncoderParams, film_params: FiLMParams,
                 config: EncoderConfig) -> Tensor:
    """Encode one T x D_in video to a G-vector."""
    v = as_tensor(video)
    if v.ndim != 2:
        raise ShapeMismatchError(f"expected a T x D_in matrix, got shape {v.shape}")
    return encode_batch(v.reshape(1, *v.shape), params, film_params, config)[0]
