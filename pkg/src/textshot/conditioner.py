"""Task conditioning: text embeddings, class/task projections, FiLM generation.

The text embedder is pluggable. The default hashes tokens into a fixed-size
bag-of-words vector (no external weights); a lookup backend serves
precomputed sentence embeddings from a file for users who want real language
models in the loop. Downstream, two small MLPs map support-text embeddings
to a per-class matrix (N x G) and a task vector (L,), and a third MLP maps
the task vector to per-stage FiLM parameters. The FiLM head is zero
initialized so a fresh conditioner modulates nothing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, parameter
from .encoder import EncoderConfig, EncoderParams, FiLMParams, encode_batch

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EmbeddingError(ValueError):
    pass


def _fnv1a64(token: str) -> int:
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


@dataclass
class TextEmbedder:
    backend: str  # "hashed" or "lookup"
    output_dim: int
    table: dict | None = None
    source: str | None = None

    @classmethod
    def hashed(cls, output_dim: int = 64) -> "TextEmbedder":
        if output_dim < 1:
            raise EmbeddingError("output_dim must be positive")
        return cls(backend="hashed", output_dim=output_dim)

    @classmethod
    def lookup(cls, path) -> "TextEmbedder":
        """Load a line-delimited file of {text, vector} records."""
        table = {}
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise EmbeddingError(f"{path}: line {lineno}: invalid JSON ({exc})") from exc
                if "text" not in rec or "vector" not in rec:
                    raise EmbeddingError(f"{path}: line {lineno}: need 'text' and 'vector'")
                vec = np.asarray(rec["vector"], dtype=np.float64)
                if vec.ndim != 1:
                    raise EmbeddingError(f"{path}: line {lineno}: vector must be 1-D")
                if dim is None:
                    dim = vec.shape[0]
                elif vec.shape[0] != dim:
                    raise EmbeddingError(
                        f"{path}: line {lineno}: vector length {vec.shape[0]} != {dim}"
                    )
                table[rec["text"]] = vec
        if not table:
            raise EmbeddingError(f"{path}: no records")
        return cls(backend="lookup", output_dim=dim, table=table, source=str(path))

    def embed(self, texts) -> np.ndarray:
        if self.backend == "lookup":
            rows = []
            for text in texts:
                if text not in self.table:
                    raise EmbeddingError(f"no embedding for text {text!r}")
                rows.append(self.table[text])
            return np.stack(rows)
        rows = np.zeros((len(texts), self.output_dim))
        for j, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            if not tokens:
                raise EmbeddingError(f"text {text!r} has no tokens")
            for tok in tokens:
                rows[j, _fnv1a64(tok) % self.output_dim] += 1.0
            rows[j] /= np.linalg.norm(rows[j])
        return rows


def embed_texts(texts, embedder: TextEmbedder) -> np.ndarray:
    if len(texts) == 0:
        raise EmbeddingError("no texts to embed")
    return embedder.embed(texts)


@dataclass
class Mlp:
    """Single hidden layer, ReLU inside: x -> relu(x W1 + b1) W2 + b2."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, in_dim: int, hidden_dim: int, out_dim: int,
             rng: np.random.Generator, zero_output: bool = False) -> "Mlp":
        w1 = parameter(rng.normal(scale=np.sqrt(2.0 / in_dim), size=(in_dim, hidden_dim)))
        b1 = parameter(np.zeros(hidden_dim))
        if zero_output:
            w2 = parameter(np.zeros((hidden_dim, out_dim)))
        else:
            w2 = parameter(rng.normal(scale=np.sqrt(1.0 / hidden_dim), size=(hidden_dim, out_dim)))
        b2 = parameter(np.zeros(out_dim))
        return cls(w1, b1, w2, b2)

    def __call__(self, x) -> Tensor:
        h = (as_tensor(x) @ self.w1 + self.b1).relu()
        return h @ self.w2 + self.b2

    def parameters(self) -> list:
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


@dataclass(frozen=True)
class ConditionerConfig:
    d_text: int = 64
    l_dim: int = 32  # task-embedding width
    hidden_dim: int = 64
    backend: str = "hashed"
    lookup_path: str | None = None

    def __post_init__(self):
        for name in ("d_text", "l_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise EmbeddingError(f"{name} must be positive")
        if self.backend not in ("hashed", "lookup"):
            raise EmbeddingError(f"unknown embedder backend {self.backend!r}")
        if self.backend == "lookup" and not self.lookup_path:
            raise EmbeddingError("lookup backend needs lookup_path")


@dataclass
class ConditionerParams:
    class_proj: Mlp  # D_text -> G
    task_proj: Mlp  # D_text -> L
    film_gen: Mlp  # L -> sum of 2*C_i, zero-initialized output layer
    video_encoder: EncoderParams  # frames -> L, for the video-conditioned variants
    video_config: EncoderConfig

    @classmethod
    def init(cls, config: ConditionerConfig, encoder_config: EncoderConfig,
             rng: np.random.Generator) -> "ConditionerParams":
        film_out = sum(2 * d for d in encoder_config.stage_dims)
        video_config = EncoderConfig(
            input_dim=encoder_config.input_dim,
            stage_dims=encoder_config.stage_dims,
            output_dim=config.l_dim,
            norm_scope=encoder_config.norm_scope,
            norm_eps=encoder_config.norm_eps,
        )
        return cls(
            class_proj=Mlp.init(config.d_text, config.hidden_dim,
                                encoder_config.output_dim, rng),
            task_proj=Mlp.init(config.d_text, config.hidden_dim, config.l_dim, rng),
            film_gen=Mlp.init(config.l_dim, config.hidden_dim, film_out, rng,
                              zero_output=True),
            video_encoder=EncoderParams.init(video_config, rng),
            video_config=video_config,
        )

    def parameters(self) -> list:
        named = []
        for prefix, mlp in (("class_proj", self.class_proj),
                            ("task_proj", self.task_proj),
                            ("film_gen", self.film_gen)):
            named.extend((f"{prefix}/{k}", t) for k, t in mlp.parameters())
        named.extend((f"video_encoder/{k}", t) for k, t in self.video_encoder.parameters())
        return named


def _balanced_class_matrix(local_labels, n_way: int) -> np.ndarray:
    """Averaging matrix A (N x NK) with A[i, j] = 1/K iff labels[j] == i."""
    labels = np.asarray(local_labels, dtype=np.intp)
    counts = np.bincount(labels, minlength=n_way)
    if labels.size % n_way != 0 or not np.all(counts == labels.size // n_way):
        raise EmbeddingError(
            f"support labels are not balanced over {n_way} classes: counts {counts.tolist()}"
        )
    k = labels.size // n_way
    mat = np.zeros((n_way, labels.size))
    mat[labels, np.arange(labels.size)] = 1.0 / k
    return mat


def class_embedding(text_embeddings, local_labels, params: ConditionerParams) -> Tensor:
    """Per-class text representation: project each row, then mean over shots.

    Row i of the result belongs to local label i.
    """
    emb = as_tensor(text_embeddings)
    n_way = int(np.max(local_labels)) + 1
    mat = _balanced_class_matrix(local_labels, n_way)
    return as_tensor(mat) @ params.class_proj(emb)


def task_embedding(text_embeddings, params: ConditionerParams) -> Tensor:
    """Mean of per-row projections over the whole support set."""
    emb = as_tensor(text_embeddings)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise EmbeddingError(f"expected a nonempty row matrix, got shape {emb.shape}")
    return params.task_proj(emb).mean(axis=0)


def generate_film(e_task, params: ConditionerParams,
                  encoder_config: EncoderConfig) -> FiLMParams:
    """Map the task vector to per-stage (gamma, beta).

    Output layout is [dgamma_1, beta_1, dgamma_2, beta_2, ...] and
    gamma_i = 1 + dgamma_i, so a zero output is the identity modulation.
    """
    out = params.film_gen(as_tensor(e_task))
    expected = sum(2 * d for d in encoder_config.stage_dims)
    if out.shape != (expected,):
        raise EmbeddingError(
            f"generator produced {out.shape}, encoder stages need ({expected},)"
        )
    gammas, betas = [], []
    offset = 0
    for dim in encoder_config.stage_dims:
        gammas.append(1.0 + out[offset:offset + dim])
        betas.append(out[offset + dim:offset + 2 * dim])
        offset += 2 * dim
    return FiLMParams(gammas=tuple(gammas), betas=tuple(betas))


def video_task_embedding(support_videos, params: ConditionerParams) -> Tensor:
    """Task vector from support frames alone (text-free conditioning)."""
    if len(support_videos) == 0:
        raise EmbeddingError("no support videos")
    frames = np.stack([np.asarray(v, dtype=np.float64) for v in support_videos])
    ident = FiLMParams.identity(params.video_config.stage_dims)
    encoded = encode_batch(frames, params.video_encoder, ident, params.video_config)
    return encoded.mean(axis=0)
