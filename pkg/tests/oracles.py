"""Naive reference implementations used to pin down the vectorized code.

Everything here is deliberately slow and literal: explicit Python loops,
explicit matrix inverses, textbook softmax. Tests compare the package
against these, never the other way around.
"""

from __future__ import annotations

import numpy as np


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    out = np.zeros_like(scores, dtype=np.float64)
    for i in range(scores.shape[0]):
        row = scores[i] - np.max(scores[i])
        e = np.exp(row)
        out[i] = e / np.sum(e)
    return out


def attention_oracle(e_class, v_q, w_q, w_k) -> np.ndarray:
    """Eq-by-eq scaled dot-product relevance, one score at a time."""
    e_class, v_q = np.asarray(e_class), np.asarray(v_q)
    n, g = e_class.shape
    b = v_q.shape[0]
    scores = np.zeros((n, b))
    for i in range(n):
        for j in range(b):
            q = e_class[i] @ np.asarray(w_q)
            key = v_q[j] @ np.asarray(w_k)
            scores[i, j] = float(q @ key) / np.sqrt(g)
    return softmax_rows(scores)


def relevance_oracle(w_att, labels_s, n_way: int, k_shot: int) -> np.ndarray:
    w_att = np.asarray(w_att)
    labels_s = list(labels_s)
    b = w_att.shape[1]
    w = np.zeros((n_way, b + len(labels_s)))
    w[:, :b] = w_att
    for j, lbl in enumerate(labels_s):
        w[lbl, b + j] = 1.0 / k_shot
    return w


def prototype_oracle(w, v_r) -> np.ndarray:
    w, v_r = np.asarray(w), np.asarray(v_r)
    n, m = w.shape
    g = v_r.shape[1]
    mu = np.zeros((n, g))
    for i in range(n):
        total = 0.0
        acc = np.zeros(g)
        for j in range(m):
            acc += w[i, j] * v_r[j]
            total += w[i, j]
        mu[i] = acc / total
    return mu


def covariance_oracle(w, v_r, mu, ridge: float, lam: float):
    """Per-class blended covariances plus the task prototype, all loops."""
    w, v_r, mu = np.asarray(w), np.asarray(v_r), np.asarray(mu)
    n, m = w.shape
    g = v_r.shape[1]

    mu_task = mu.mean(axis=0)
    sigma_task = np.zeros((g, g))
    for j in range(m):
        d = v_r[j] - mu_task
        sigma_task += np.outer(d, d)
    sigma_task /= m

    covs = np.zeros((n, g, g))
    for i in range(n):
        row = w[i] / np.sum(w[i])
        sigma = np.zeros((g, g))
        for j in range(m):
            d = v_r[j] - mu[i]
            sigma += row[j] * np.outer(d, d)
        covs[i] = lam * sigma + (1.0 - lam) * sigma_task + ridge * np.eye(g)
    return covs, mu_task


def mahalanobis_oracle(v_q, mu, covs) -> np.ndarray:
    """Squared distances through an explicit matrix inverse."""
    v_q, mu = np.asarray(v_q), np.asarray(mu)
    b = v_q.shape[0]
    n = mu.shape[0]
    d = np.zeros((b, n))
    for i in range(n):
        inv = np.linalg.inv(np.asarray(covs[i]))
        for j in range(b):
            diff = v_q[j] - mu[i]
            d[j, i] = float(diff @ inv @ diff)
    return d


def transductive_oracle(e_class, v_s, v_q, labels_s, w_q, w_k,
                        ridge: float, lam: float):
    """The whole prototype/covariance/classification chain, loop form.

    Returns (attention, relevance, prototypes, covariances, probabilities);
    embeddings come in from outside, matching the vectorized call sites.
    """
    n_way = np.asarray(e_class).shape[0]
    k_shot = len(labels_s) // n_way
    w_att = attention_oracle(e_class, v_q, w_q, w_k)
    w = relevance_oracle(w_att, labels_s, n_way, k_shot)
    v_r = np.concatenate([np.asarray(v_q), np.asarray(v_s)], axis=0)
    mu = prototype_oracle(w, v_r)
    covs, _ = covariance_oracle(w, v_r, mu, ridge, lam)
    dists = mahalanobis_oracle(v_q, mu, covs)
    probs = softmax_rows(-dists)
    return w_att, w, mu, covs, probs


def protonet_probs(v_s, labels_s, v_q, n_way: int) -> np.ndarray:
    """Plain inductive prototypical classifier: class means, squared
    Euclidean distances, softmax."""
    v_s, v_q = np.asarray(v_s), np.asarray(v_q)
    labels_s = np.asarray(labels_s)
    mu = np.stack([v_s[labels_s == i].mean(axis=0) for i in range(n_way)])
    d = np.zeros((v_q.shape[0], n_way))
    for j in range(v_q.shape[0]):
        for i in range(n_way):
            diff = v_q[j] - mu[i]
            d[j, i] = float(diff @ diff)
    return softmax_rows(-d)


def cross_entropy_oracle(probs, labels) -> float:
    probs = np.asarray(probs)
    total = 0.0
    for j, lbl in enumerate(labels):
        total -= np.log(probs[j, int(lbl)])
    return total / len(labels)


def mlp_oracle(x, mlp) -> np.ndarray:
    """conditioner.Mlp forward in plain numpy."""
    x = np.asarray(x)
    h = np.maximum(x @ mlp.w1.data + mlp.b1.data, 0.0)
    return h @ mlp.w2.data + mlp.b2.data


def encode_oracle(frames, params, gammas, betas, config) -> np.ndarray:
    """encoder.encode_batch in plain numpy, one video at a time."""
    frames = np.asarray(frames, dtype=np.float64)
    out = []
    for m in range(frames.shape[0]):
        x = frames[m]
        for i in range(len(config.stage_dims)):
            h = x @ params.weights[i].data + params.biases[i].data
            axis = -1 if config.norm_scope == "features" else -2
            centered = h - h.mean(axis=axis, keepdims=True)
            var = (centered * centered).mean(axis=axis, keepdims=True)
            h = centered / np.sqrt(var + config.norm_eps)
            h = np.asarray(gammas[i]) * h + np.asarray(betas[i])
            x = np.maximum(h, 0.0)
        out.append(x.mean(axis=0) @ params.out_weight.data)
    return np.stack(out)


def fd_gradient(f, tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f with respect to tensor.data."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    gflat = grad.ravel()
    for c in range(flat.size):
        saved = flat[c]
        flat[c] = saved + step
        f_plus = f()
        flat[c] = saved - step
        f_minus = f()
        flat[c] = saved
        gflat[c] = (f_plus - f_minus) / (2.0 * step)
    return grad
