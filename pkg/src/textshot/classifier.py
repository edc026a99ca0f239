"""Transductive prototype construction and Mahalanobis classification.

Prototypes are weighted means over the union R = Q u S: attention weights
(rows softmaxed over the B queries) say how much each unlabeled query
contributes to each class, and every support sample of a class contributes
1/K. Per-class covariances are blended with a task-level covariance and a
ridge term, and queries are scored by squared Mahalanobis distance through
a Cholesky solve; no matrix is ever inverted explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat, parameter, posdef_solve, softmax, stack


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    ridge: float = 1.0
    # "support-count" sets the blend weight to K/(K+1); "fixed" uses
    # lambda_value directly.
    lambda_mode: str = "support-count"
    lambda_value: float = 0.5

    def __post_init__(self):
        if self.ridge <= 0:
            raise ClassifierError("ridge must be positive")
        if self.lambda_mode not in ("support-count", "fixed"):
            raise ClassifierError(f"unknown lambda_mode {self.lambda_mode!r}")
        if not 0.0 <= self.lambda_value <= 1.0:
            raise ClassifierError("lambda_value must lie in [0, 1]")

    def blend_weight(self, k_shot: int) -> float:
        if self.lambda_mode == "support-count":
            return k_shot / (k_shot + 1.0)
        return self.lambda_value


@dataclass
class AttentionParams:
    w_q: Tensor  # G x G
    w_k: Tensor  # G x G

    @classmethod
    def init(cls, g_dim: int, rng: np.random.Generator) -> "AttentionParams":
        # small init: relevance starts near-uniform over queries, so episodic
        # training sharpens attention only as far as the loss demands
        scale = 0.05 * np.sqrt(1.0 / g_dim)
        return cls(
            w_q=parameter(rng.normal(scale=scale, size=(g_dim, g_dim))),
            w_k=parameter(rng.normal(scale=scale, size=(g_dim, g_dim))),
        )

    def parameters(self) -> list:
        return [("w_q", self.w_q), ("w_k", self.w_k)]


@dataclass
class RelevanceWeights:
    """W = [W_att | W_S], shape N x (B + NK); columns are queries then support."""

    w: Tensor
    n_way: int
    k_shot: int
    query_size: int


@dataclass
class ClassModel:
    prototypes: Tensor  # N x G
    covariances: Tensor  # N x G x G, each symmetric positive definite
    task_prototype: Tensor  # G


def attention_weights(e_class, v_query, params: AttentionParams) -> Tensor:
    """Scaled dot-product scores, softmaxed over the query axis per class row."""
    e, v = as_tensor(e_class), as_tensor(v_query)
    if e.ndim != 2 or v.ndim != 2 or e.shape[1] != v.shape[1]:
        raise ClassifierError(
            f"embedding widths disagree: classes {e.shape}, queries {v.shape}"
        )
    if v.shape[0] < 1:
        raise ClassifierError("need at least one query")
    if not (np.isfinite(e.data).all() and np.isfinite(v.data).all()):
        raise ClassifierError("non-finite embeddings")
    g_dim = e.shape[1]
    scores = (e @ params.w_q) @ (v @ params.w_k).T / np.sqrt(g_dim)
    return softmax(scores, axis=-1)


def assemble_relevance(w_att, local_labels_s, n_way: int, k_shot: int) -> RelevanceWeights:
    """Append the 1/K support block to the attention block."""
    att = as_tensor(w_att)
    labels = np.asarray(local_labels_s, dtype=np.intp)
    if att.shape[0] != n_way:
        raise ClassifierError(f"attention rows {att.shape[0]} != n_way {n_way}")
    if labels.size != n_way * k_shot or not np.all(
        np.bincount(labels, minlength=n_way) == k_shot
    ):
        raise ClassifierError(
            f"support labels are not {k_shot} per class over {n_way} classes"
        )
    support_block = np.zeros((n_way, labels.size))
    support_block[labels, np.arange(labels.size)] = 1.0 / k_shot
    w = concat([att, as_tensor(support_block)], axis=1)
    return RelevanceWeights(w=w, n_way=n_way, k_shot=k_shot, query_size=att.shape[1])


def prototypes(weights: RelevanceWeights, v_r) -> Tensor:
    """mu_i = sum_j W_ij v_j / sum_j W_ij over the combined query+support rows."""
    v = as_tensor(v_r)
    if weights.w.shape[1] != v.shape[0]:
        raise ClassifierError(
            f"{weights.w.shape[1]} weight columns vs {v.shape[0]} embeddings"
        )
    sums = weights.w.sum(axis=1, keepdims=True)
    if np.any(sums.data <= 0):
        raise RuntimeError("relevance row with nonpositive mass; weights are corrupt")
    return (weights.w @ v) / sums


def class_covariances(weights: RelevanceWeights, v_r, protos,
                      ridge: float = 1.0, blend_weight: float | None = None):
    """Blended per-class covariances and the task prototype.

    Sigma_i is the covariance around mu_i under row i of W normalized to
    sum 1; Sigma_task is the uniform covariance of all rows around the mean
    prototype. Q_i = lam * Sigma_i + (1 - lam) * Sigma_task + ridge * I with
    lam = K/(K+1) unless overridden.
    """
    v = as_tensor(v_r)
    mu = as_tensor(protos)
    n_way, g_dim = mu.shape
    m = v.shape[0]
    lam = weights.k_shot / (weights.k_shot + 1.0) if blend_weight is None else blend_weight

    row_mass = weights.w.sum(axis=1, keepdims=True)
    norm_w = weights.w / row_mass  # rows sum to 1
    diffs = v.reshape(1, m, g_dim) - mu.reshape(n_way, 1, g_dim)
    weighted = diffs * norm_w.reshape(n_way, m, 1)
    sigma = weighted.swapaxes(-1, -2) @ diffs  # N x G x G

    mu_task = mu.mean(axis=0)
    task_diffs = v - mu_task
    sigma_task = task_diffs.T @ task_diffs / float(m)

    q = lam * sigma + (1.0 - lam) * sigma_task.reshape(1, g_dim, g_dim) + ridge * np.eye(g_dim)
    if not np.isfinite(q.data).all():
        raise ClassifierError("non-finite covariance")
    return q, mu_task


def class_distances(v_query, model: ClassModel) -> Tensor:
    """Squared Mahalanobis distance of each query to each prototype (B x N)."""
    v = as_tensor(v_query)
    n_way, g_dim = model.prototypes.shape
    if v.ndim != 2 or v.shape[1] != g_dim:
        raise ClassifierError(f"queries {v.shape} do not match prototypes width {g_dim}")
    cols = []
    for i in range(n_way):
        diff = (v - model.prototypes[i]).T  # G x B
        solved = posdef_solve(model.covariances[i], diff)
        cols.append((diff * solved).sum(axis=0))
    return stack(cols, axis=1)


def classify(v_query, model: ClassModel) -> Tensor:
    """Row-stochastic class probabilities: softmax of negated distances."""
    return softmax(-class_distances(v_query, model), axis=-1)
