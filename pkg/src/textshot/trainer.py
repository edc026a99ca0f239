"""Two-stage optimization and gradient verification.

Stage 1 trains the encoder on the base classes with identity modulation and
a throwaway linear head. Stage 2 freezes the encoder and meta-trains the
conditioner and attention projections on sampled episodes, averaging
gradients over a task batch per update. Episode i is derived from
(seed, i) alone, so runs are reproducible and batches can in principle be
filled concurrently; the gradient reduction always proceeds in episode-index
order, which makes the update independent of completion order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, as_tensor, concat, log_softmax, no_grad, parameter
from .classifier import (AttentionParams, ClassifierConfig, ClassModel,
                         assemble_relevance, attention_weights, class_covariances,
                         class_distances, prototypes)
from .conditioner import (ConditionerConfig, ConditionerParams, TextEmbedder,
                          class_embedding, embed_texts, generate_film,
                          task_embedding, video_task_embedding)
from .encoder import EncoderConfig, EncoderParams, FiLMParams, encode_batch
from .episodes import Episode, episode_rng, sample_episode, splitmix64


class TrainingError(RuntimeError):
    pass


# variant -> (conditioning source, transductive attention, covariance form)
VARIANTS = {
    "TNT": ("text", True, "blended"),
    "TNI": ("text", False, "blended"),
    "VNT": ("video", True, "blended"),
    "VNI": ("video", False, "blended"),
    "inductive-baseline": ("none", False, "identity"),
}


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 12
    episodes: int = 3000
    task_batch: int = 16
    learning_rate: float = 5e-4
    stage1_lr: float | None = None  # supervised-stage lr; None reuses learning_rate
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_way: int = 5
    k_shot: int = 1
    query_size: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.episodes < 0:
            raise ValueError("epoch and episode counts must be nonnegative")
        if self.task_batch < 1 or self.n_way < 1 or self.k_shot < 1 or self.query_size < 1:
            raise ValueError("task_batch, n_way, k_shot, query_size must be positive")
        # 0 is allowed: a zero-rate run is the documented no-op training mode
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.stage1_lr is not None and self.stage1_lr < 0:
            raise ValueError("stage1_lr must be nonnegative when set")


@dataclass
class ModelState:
    encoder: EncoderParams
    encoder_config: EncoderConfig
    conditioner: ConditionerParams
    conditioner_config: ConditionerConfig
    attention: AttentionParams
    classifier_config: ClassifierConfig
    embedder: TextEmbedder
    variant: str = "TNT"
    train_config: TrainConfig | None = None
    trainable: dict = field(
        default_factory=lambda: {"encoder": False, "conditioner": True, "attention": True}
    )

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")

    def stage2_parameters(self) -> list:
        named = [(f"conditioner/{k}", t) for k, t in self.conditioner.parameters()]
        named += [(f"attention/{k}", t) for k, t in self.attention.parameters()]
        return named

    def all_parameters(self) -> list:
        named = [(f"encoder/{k}", t) for k, t in self.encoder.parameters()]
        return named + self.stage2_parameters()


def init_model(encoder_config: EncoderConfig, conditioner_config: ConditionerConfig,
               classifier_config: ClassifierConfig, variant: str = "TNT",
               seed: int = 0, encoder: EncoderParams | None = None,
               embedder: TextEmbedder | None = None) -> ModelState:
    """Fresh conditioner/attention (seeded); encoder reused if given."""
    rng = np.random.default_rng(splitmix64(seed, 2))
    if encoder is None:
        encoder = EncoderParams.init(encoder_config, rng)
    if embedder is None:
        if conditioner_config.backend == "lookup":
            embedder = TextEmbedder.lookup(conditioner_config.lookup_path)
        else:
            embedder = TextEmbedder.hashed(conditioner_config.d_text)
    if embedder.output_dim != conditioner_config.d_text:
        raise ValueError(
            f"embedder dim {embedder.output_dim} != configured d_text {conditioner_config.d_text}"
        )
    return ModelState(
        encoder=encoder,
        encoder_config=encoder_config,
        conditioner=ConditionerParams.init(conditioner_config, encoder_config, rng),
        conditioner_config=conditioner_config,
        attention=AttentionParams.init(encoder_config.output_dim, rng),
        classifier_config=classifier_config,
        embedder=embedder,
        variant=variant,
    )


def _class_mean_matrix(labels, n_way: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    k = labels.size // n_way
    mat = np.zeros((n_way, labels.size))
    mat[labels, np.arange(labels.size)] = 1.0 / k
    return mat


def episode_forward(state: ModelState, episode: Episode) -> Tensor:
    """Logits (B x N): negated squared Mahalanobis distances per query."""
    cond_mode, transductive, cov_mode = VARIANTS[state.variant]
    n, k = episode.n_way, episode.k_shot
    support_frames = [inst.frames for inst, _ in episode.support]
    labels_s = [lab for _, lab in episode.support]
    frames = np.stack(support_frames + [inst.frames for inst, _ in episode.query])

    text_emb = None
    if cond_mode == "text":
        text_emb = embed_texts([inst.text for inst, _ in episode.support], state.embedder)
        e_task = task_embedding(text_emb, state.conditioner)
        film_params = generate_film(e_task, state.conditioner, state.encoder_config)
    elif cond_mode == "video":
        e_task = video_task_embedding(support_frames, state.conditioner)
        film_params = generate_film(e_task, state.conditioner, state.encoder_config)
    else:
        film_params = FiLMParams.identity(state.encoder_config.stage_dims)

    v_all = encode_batch(frames, state.encoder, film_params, state.encoder_config)
    v_s, v_q = v_all[: n * k], v_all[n * k:]

    if transductive:
        if cond_mode == "text":
            e_class = class_embedding(text_emb, labels_s, state.conditioner)
        else:
            # no text available: attend with support class-mean video embeddings
            e_class = as_tensor(_class_mean_matrix(labels_s, n)) @ v_s
        w_att = attention_weights(e_class, v_q, state.attention)
    else:
        w_att = np.zeros((n, episode.query_size))

    rel = assemble_relevance(w_att, labels_s, n, k)
    v_r = concat([v_q, v_s], axis=0)  # query rows first, matching the weight columns
    mu = prototypes(rel, v_r)
    if cov_mode == "blended":
        cov, mu_task = class_covariances(
            rel, v_r, mu,
            ridge=state.classifier_config.ridge,
            blend_weight=state.classifier_config.blend_weight(k),
        )
    else:
        g = state.encoder_config.output_dim
        cov = as_tensor(np.broadcast_to(np.eye(g), (n, g, g)).copy())
        mu_task = mu.mean(axis=0)
    return -class_distances(v_q, ClassModel(mu, cov, mu_task))


def _nll(logits: Tensor, labels) -> Tensor:
    lp = log_softmax(logits, axis=-1)
    picked = lp[np.arange(len(labels)), np.asarray(labels, dtype=np.intp)]
    return -picked.mean()


def episode_loss(state: ModelState, episode: Episode) -> Tensor:
    """Mean query cross-entropy under the variant's forward pass."""
    logits = episode_forward(state, episode)
    loss = _nll(logits, [lab for _, lab in episode.query])
    if not np.isfinite(loss.data):
        raise TrainingError("non-finite episode loss")
    return loss


def episode_accuracy(state: ModelState, episode: Episode) -> float:
    with no_grad():
        logits = episode_forward(state, episode)
    labels = np.array([lab for _, lab in episode.query])
    return float(np.mean(np.argmax(logits.data, axis=1) == labels))


def episode_gradients(state: ModelState, episode: Episode, params: list | None = None):
    """Returns (loss value, episode accuracy, gradient list aligned with params)."""
    if params is None:
        params = [t for _, t in state.stage2_parameters()]
    for t in params:
        t.grad = None
    logits = episode_forward(state, episode)
    labels = [lab for _, lab in episode.query]
    loss = _nll(logits, labels)
    if not np.isfinite(loss.data):
        raise TrainingError("non-finite episode loss")
    # a variant whose forward ignores every trainable tensor (the plain
    # inductive baseline under a frozen encoder) has a constant loss
    if loss.requires_grad:
        loss.backward()
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad for t in params]
    if any(not np.isfinite(g).all() for g in grads):
        raise TrainingError("non-finite episode gradients")
    acc = float(np.mean(np.argmax(logits.data, axis=1) == np.asarray(labels)))
    return float(loss.data), acc, grads


def reduce_gradients(grads_by_index: dict) -> list:
    """Mean over episodes, accumulated in index order regardless of dict order."""
    order = sorted(grads_by_index)
    total = [g.copy() for g in grads_by_index[order[0]]]
    for i in order[1:]:
        for acc, g in zip(total, grads_by_index[i]):
            acc += g
    return [g / len(order) for g in total]


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params: list, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: list) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class PretrainResult:
    encoder: EncoderParams
    train_accuracy: float


def _supervised_batches(dataset, classes):
    classes = sorted(classes)
    label_of = {c: i for i, c in enumerate(classes)}
    insts = [inst for c in classes for inst in dataset.instances_of(c)]
    frames = np.stack([inst.frames for inst in insts])
    labels = np.array([label_of[inst.class_id] for inst in insts], dtype=np.intp)
    return frames, labels, len(classes)


def pretrain_backbone(dataset, train_classes, encoder_config: EncoderConfig,
                      config: TrainConfig, params: EncoderParams | None = None,
                      batch_size: int = 64, lr: float | None = None) -> PretrainResult:
    """Supervised stage: identity modulation, linear head, cross-entropy.

    The head is local to this function and discarded; only encoder
    parameters leave. lr falls back to config.stage1_lr, then
    config.learning_rate.
    """
    if not train_classes:
        raise TrainingError("no base classes to pretrain on")
    frames, labels, n_base = _supervised_batches(dataset, train_classes)
    rng = np.random.default_rng(splitmix64(config.seed, 1))
    if params is None:
        params = EncoderParams.init(encoder_config, rng)
    g_dim = encoder_config.output_dim
    head_w = parameter(rng.normal(scale=np.sqrt(1.0 / g_dim), size=(g_dim, n_base)))
    head_b = parameter(np.zeros(n_base))
    ident = FiLMParams.identity(encoder_config.stage_dims)

    if lr is None:
        lr = config.stage1_lr if config.stage1_lr is not None else config.learning_rate
    trainables = [t for _, t in params.parameters()] + [head_w, head_b]
    opt = Adam(trainables, lr, config.beta1, config.beta2, config.adam_eps)
    n = frames.shape[0]
    for epoch in range(config.stage1_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            for t in trainables:
                t.grad = None
            emb = encode_batch(frames[idx], params, ident, encoder_config)
            loss = _nll(emb @ head_w + head_b, labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"supervised loss diverged at epoch {epoch}, batch start {start}"
                )
            loss.backward()
            opt.step([t.grad for t in trainables])

    correct = 0
    with no_grad():
        for start in range(0, n, 256):
            chunk = slice(start, start + 256)
            emb = encode_batch(frames[chunk], params, ident, encoder_config)
            pred = np.argmax((emb @ head_w + head_b).data, axis=1)
            correct += int(np.sum(pred == labels[chunk]))
    return PretrainResult(encoder=params, train_accuracy=correct / n)


@dataclass
class MetaTrainResult:
    state: ModelState
    curve: list  # one {step, mean_loss, accuracy} record per update


def meta_train(state: ModelState, dataset, train_classes,
               config: TrainConfig) -> MetaTrainResult:
    """Episodic stage: encoder frozen, conditioner + attention updated."""
    state.train_config = config
    state.trainable = {"encoder": False, "conditioner": True, "attention": True}
    for _, t in state.encoder.parameters():
        t.requires_grad = False
    params = [t for _, t in state.stage2_parameters()]
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    curve = []
    n_steps = config.episodes // config.task_batch
    for step in range(n_steps):
        grads_by_index, losses, accs = {}, [], []
        for i in range(step * config.task_batch, (step + 1) * config.task_batch):
            rng = episode_rng(config.seed, i)
            episode = sample_episode(dataset, train_classes, config.n_way,
                                     config.k_shot, config.query_size, rng)
            try:
                loss_val, acc, grads = episode_gradients(state, episode, params)
            except TrainingError as exc:
                raise TrainingError(
                    f"{exc} (episode index {i}, base seed {config.seed})"
                ) from exc
            grads_by_index[i] = grads
            losses.append(loss_val)
            accs.append(acc)
        opt.step(reduce_gradients(grads_by_index))
        curve.append({
            "step": step,
            "mean_loss": float(np.mean(losses)),
            "accuracy": float(np.mean(accs)),
        })
    return MetaTrainResult(state=state, curve=curve)


def gradient_check(state: ModelState, episodes, step_size: float = 1e-5,
                   n_coords: int = 200, rng: np.random.Generator | None = None,
                   coords: list | None = None, grad_transform=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples coordinates from the stage-2 trainable parameters. Pairs where
    both gradients are below 1e-8 in magnitude are skipped as numerically
    indeterminate. grad_transform, if given, maps the flat analytic gradient
    vector to a modified copy before comparison (used to prove the check
    catches wrong gradients).
    """
    if isinstance(episodes, Episode):
        episodes = [episodes]
    named = state.stage2_parameters()
    tensors = [t for _, t in named]
    sizes = [t.data.size for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(0) if rng is None else rng

    worst = 0.0
    for episode in episodes:
        _, _, grads = episode_gradients(state, episode, tensors)
        flat = np.concatenate([g.ravel() for g in grads])
        if grad_transform is not None:
            flat = grad_transform(flat.copy())
        if coords is None:
            picked = rng.choice(total, size=min(n_coords, total), replace=False)
        else:
            picked = np.asarray(coords)
        for c in picked:
            slot = int(np.searchsorted(offsets, c, side="right") - 1)
            inner = np.unravel_index(int(c) - int(offsets[slot]), tensors[slot].data.shape)
            saved = tensors[slot].data[inner]
            with no_grad():
                tensors[slot].data[inner] = saved + step_size
                f_plus = float(episode_loss(state, episode).data)
                tensors[slot].data[inner] = saved - step_size
                f_minus = float(episode_loss(state, episode).data)
            tensors[slot].data[inner] = saved
            numeric = (f_plus - f_minus) / (2 * step_size)
            analytic = flat[c]
            if abs(numeric) < 1e-8 and abs(analytic) < 1e-8:
                continue
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic))
            worst = max(worst, rel)
    return worst
