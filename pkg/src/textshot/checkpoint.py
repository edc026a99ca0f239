"""Model snapshots: flat array dicts and a deterministic on-disk format.

Checkpoints are ordinary npz archives (readable with numpy.load), written
through zipfile directly so entry order and timestamps are fixed; the same
state always produces the same bytes. Array values round-trip bit-exactly.
A JSON member carries the configs, the variant, and the embedder (lookup
tables are inlined, so a checkpoint is self-contained).
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict

import numpy as np

from .autodiff import parameter
from .classifier import AttentionParams, ClassifierConfig
from .conditioner import ConditionerConfig, ConditionerParams, Mlp, TextEmbedder
from .encoder import EncoderConfig, EncoderParams

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def state_to_arrays(state):
    """Split a ModelState into (flat array dict, JSON-safe metadata dict)."""
    arrays = {name: np.ascontiguousarray(t.data) for name, t in state.all_parameters()}
    embedder = {
        "backend": state.embedder.backend,
        "output_dim": state.embedder.output_dim,
        "source": state.embedder.source,
        "table": (
            None if state.embedder.table is None
            else {text: vec.tolist() for text, vec in state.embedder.table.items()}
        ),
    }
    meta = {
        "format_version": 1,
        "encoder_config": asdict(state.encoder_config),
        "conditioner_config": asdict(state.conditioner_config),
        "classifier_config": asdict(state.classifier_config),
        "variant": state.variant,
        "trainable": state.trainable,
        "train_config": None if state.train_config is None else asdict(state.train_config),
        "embedder": embedder,
    }
    return arrays, meta


def _encoder_from(arrays, prefix: str, config: EncoderConfig) -> EncoderParams:
    n = len(config.stage_dims)
    try:
        weights = tuple(parameter(arrays[f"{prefix}w{i}"]) for i in range(n))
        biases = tuple(parameter(arrays[f"{prefix}b{i}"]) for i in range(n))
        out = parameter(arrays[f"{prefix}out_weight"])
    except KeyError as exc:
        raise CheckpointError(f"missing parameter array {exc.args[0]!r}") from exc
    return EncoderParams(weights=weights, biases=biases, out_weight=out,
                         norm_scope=(config.norm_scope,) * n)


def _mlp_from(arrays, prefix: str) -> Mlp:
    try:
        return Mlp(*(parameter(arrays[f"{prefix}{k}"]) for k in ("w1", "b1", "w2", "b2")))
    except KeyError as exc:
        raise CheckpointError(f"missing parameter array {exc.args[0]!r}") from exc


def state_from_arrays(arrays, meta):
    from .trainer import ModelState, TrainConfig  # circular at import time otherwise

    if meta.get("format_version") != 1:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
    encoder_config = EncoderConfig(**meta["encoder_config"])
    conditioner_config = ConditionerConfig(**meta["conditioner_config"])
    classifier_config = ClassifierConfig(**meta["classifier_config"])
    video_config = EncoderConfig(
        input_dim=encoder_config.input_dim,
        stage_dims=encoder_config.stage_dims,
        output_dim=conditioner_config.l_dim,
        norm_scope=encoder_config.norm_scope,
        norm_eps=encoder_config.norm_eps,
    )
    conditioner = ConditionerParams(
        class_proj=_mlp_from(arrays, "conditioner/class_proj/"),
        task_proj=_mlp_from(arrays, "conditioner/task_proj/"),
        film_gen=_mlp_from(arrays, "conditioner/film_gen/"),
        video_encoder=_encoder_from(arrays, "conditioner/video_encoder/", video_config),
        video_config=video_config,
    )
    emb_meta = meta["embedder"]
    if emb_meta["table"] is not None:
        table = {text: np.asarray(vec, dtype=np.float64) for text, vec in emb_meta["table"].items()}
    else:
        table = None
    embedder = TextEmbedder(
        backend=emb_meta["backend"],
        output_dim=emb_meta["output_dim"],
        table=table,
        source=emb_meta["source"],
    )
    train_config = None
    if meta["train_config"] is not None:
        train_config = TrainConfig(**meta["train_config"])
    try:
        attention = AttentionParams(
            w_q=parameter(arrays["attention/w_q"]),
            w_k=parameter(arrays["attention/w_k"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"missing parameter array {exc.args[0]!r}") from exc
    return ModelState(
        encoder=_encoder_from(arrays, "encoder/", encoder_config),
        encoder_config=encoder_config,
        conditioner=conditioner,
        conditioner_config=conditioner_config,
        attention=attention,
        classifier_config=classifier_config,
        embedder=embedder,
        variant=meta["variant"],
        train_config=train_config,
        trainable=dict(meta["trainable"]),
    )


def save_checkpoint(state, path) -> None:
    """Write the state as an npz archive with deterministic bytes."""
    arrays, meta = state_to_arrays(state)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("__meta__.json", date_time=_FIXED_DATE)
        zf.writestr(info, json.dumps(meta, sort_keys=True).encode("utf-8"))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arrays[name], allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_DATE)
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path):
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    with zf:
        try:
            meta = json.loads(zf.read("__meta__.json"))
        except KeyError:
            raise CheckpointError(f"{path}: missing metadata member") from None
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                buf = io.BytesIO(zf.read(name))
                arrays[name[:-4]] = np.lib.format.read_array(buf, allow_pickle=False)
    return state_from_arrays(arrays, meta)
