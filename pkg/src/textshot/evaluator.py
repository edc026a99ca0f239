"""Episode-level evaluation: accuracy with confidence intervals, the variant
ablation grid, and the query-size sensitivity sweep.

Episode i is a pure function of (protocol.seed, i), so any worker partition
of the index range reproduces the serial per-episode accuracies exactly and
results are merged by index. Ablation rows and sweep points share episode
seeds, so differences between rows are model differences, not sampling
noise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .checkpoint import state_to_arrays, state_from_arrays
from .episodes import episode_rng, sample_episode
from .trainer import VARIANTS, ModelState, TrainConfig, episode_accuracy, init_model, meta_train


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class EvalProtocol:
    n_way: int = 5
    k_shot: int = 1
    query_size: int = 25
    n_episodes: int = 1000
    seed: int = 0
    variant: str = "TNT"

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ProtocolError("n_episodes must be >= 1")
        if self.n_way < 1 or self.k_shot < 1 or self.query_size < 1:
            raise ProtocolError("n_way, k_shot, query_size must be positive")
        if self.query_size % self.n_way != 0:
            raise ProtocolError(
                f"query_size {self.query_size} not divisible by n_way {self.n_way}"
            )
        if self.variant not in VARIANTS:
            raise ProtocolError(f"unknown variant {self.variant!r}")


@dataclass
class MetricsReport:
    mean_accuracy: float  # percent
    ci95: float  # half-width, percent
    n_episodes: int
    protocol: EvalProtocol
    per_episode: np.ndarray | None = None  # percent, index order

    def to_record(self) -> dict:
        return {
            "variant": self.protocol.variant,
            "n_way": self.protocol.n_way,
            "k_shot": self.protocol.k_shot,
            "query_size": self.protocol.query_size,
            "n_episodes": self.n_episodes,
            "seed": self.protocol.seed,
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
        }


def _episode_accuracies(state: ModelState, dataset, classes, protocol: EvalProtocol,
                        indices) -> list:
    out = []
    for i in indices:
        rng = episode_rng(protocol.seed, i)
        episode = sample_episode(dataset, classes, protocol.n_way, protocol.k_shot,
                                 protocol.query_size, rng)
        out.append((i, 100.0 * episode_accuracy(state, episode)))
    return out


_WORKER = {}


def _worker_init(arrays, meta, dataset, classes, protocol):
    _WORKER["state"] = state_from_arrays(arrays, meta)
    _WORKER["args"] = (dataset, classes, protocol)


def _worker_chunk(indices):
    dataset, classes, protocol = _WORKER["args"]
    return _episode_accuracies(_WORKER["state"], dataset, classes, protocol, indices)


def _report_from(per_episode: np.ndarray, protocol: EvalProtocol,
                 keep_per_episode: bool) -> MetricsReport:
    mean = float(np.mean(per_episode))
    if per_episode.size > 1:
        ci = float(1.96 * np.std(per_episode, ddof=1) / np.sqrt(per_episode.size))
    else:
        ci = 0.0
    return MetricsReport(
        mean_accuracy=mean,
        ci95=ci,
        n_episodes=per_episode.size,
        protocol=protocol,
        per_episode=per_episode if keep_per_episode else None,
    )


def evaluate(state: ModelState, dataset, classes, protocol: EvalProtocol,
             workers: int = 1, keep_per_episode: bool = True) -> MetricsReport:
    """Mean accuracy over n_episodes, each derived from (seed, index)."""
    if len(classes) < protocol.n_way:
        raise ProtocolError(
            f"{len(classes)} classes available, protocol needs {protocol.n_way}"
        )
    eval_state = dc_replace(state, variant=protocol.variant)
    indices = range(protocol.n_episodes)
    if workers <= 1:
        pairs = _episode_accuracies(eval_state, dataset, classes, protocol, indices)
    else:
        from concurrent.futures import ProcessPoolExecutor

        arrays, meta = state_to_arrays(eval_state)
        chunks = [c.tolist() for c in np.array_split(np.asarray(indices), workers * 4)
                  if c.size]
        pairs = []
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_worker_init,
            initargs=(arrays, meta, dataset, classes, protocol),
        ) as pool:
            for chunk_pairs in pool.map(_worker_chunk, chunks):
                pairs.extend(chunk_pairs)
    per_episode = np.empty(protocol.n_episodes)
    for i, acc in pairs:
        per_episode[i] = acc
    return _report_from(per_episode, protocol, keep_per_episode)


def ablate(pretrained_encoder, encoder_config, conditioner_config, classifier_config,
           dataset, split, variants, train_config: TrainConfig,
           protocol: EvalProtocol, workers: int = 1):
    """Meta-train and evaluate each variant from the same frozen encoder.

    All variants share the conditioner/attention init seed, the training
    episode stream, and the evaluation episodes, so rows are paired.
    Returns [(variant, MetricsReport, curve), ...] in request order.
    """
    rows = []
    for variant in variants:
        if variant not in VARIANTS:
            raise ProtocolError(f"unknown variant {variant!r}")
        state = init_model(encoder_config, conditioner_config, classifier_config,
                           variant=variant, seed=train_config.seed,
                           encoder=pretrained_encoder)
        result = meta_train(state, dataset, split.train_classes, train_config)
        report = evaluate(result.state, dataset, split.test_classes,
                          dc_replace(protocol, variant=variant), workers=workers)
        rows.append((variant, report, result.curve))
    return rows


def query_size_sweep(state: ModelState, dataset, classes, b_values,
                     protocol: EvalProtocol, workers: int = 1):
    """Evaluate at each query size with the same base seed.

    Query sets nest as B grows (an episode's B=5 queries are a prefix of its
    B=50 queries), so sweep points are paired.
    """
    points = []
    for b in b_values:
        if b % protocol.n_way != 0:
            raise ProtocolError(f"B={b} not divisible by n_way {protocol.n_way}")
        report = evaluate(state, dataset, classes,
                          dc_replace(protocol, query_size=int(b)), workers=workers)
        points.append((int(b), report))
    return points


def format_table(rows) -> str:
    """Human-readable accuracy table for (label, MetricsReport) pairs."""
    width = max(len(str(label)) for label, _ in rows)
    lines = [f"{'config':<{width}}  accuracy"]
    for label, report in rows:
        lines.append(
            f"{str(label):<{width}}  {report.mean_accuracy:5.2f} +/- {report.ci95:.2f}"
        )
    return "\n".join(lines)
