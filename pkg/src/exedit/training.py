"""Training loop: condition dropping, EMA of weights, the unconditional prior
pretraining stage, ablation presets, and checkpoint I/O.

During conditional training each sample's reference condition is replaced by
the learnable null vector with probability ``cond_drop_prob``; the prior stage
trains with every condition nulled. The EMA shadow of all trainable parameters
is what sampling and evaluation use.

Checkpoints are zip archives holding a text ``manifest`` (format_version,
step, config, schedule) plus one binary blob per named tensor: an int64
little-endian shape header (rank, then extents) followed by row-major float32
little-endian data.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import struct
import zipfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
from torch import nn

from .augment import AugmentationPolicy, identity_policy
from .datasets import AnnotatedImage, TrainingSample, make_training_sample
from .denoiser import Denoiser, DenoiserConfig, init_denoiser
from .diffusion import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_T,
    NoiseSchedule,
    build_schedule,
)
from .encoder import (
    ENCODER_INPUT_SIZE,
    MODE_ALL_TOKENS,
    MODE_BOTTLENECK,
    Adapter,
    NullCondition,
    ToyImageEncoder,
    encode_batch,
    init_adapter,
    init_null_condition,
)
from .errors import (
    CheckpointError,
    CheckpointVersionError,
    NumericError,
    ParameterError,
)
from .torchutil import stack_images

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

PRESETS = ("baseline", "prior", "augmentation", "bottleneck", "classifier_free")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    steps: int = 2000
    cond_drop_prob: float = 0.2
    ema_decay: float = 0.999
    weight_decay: float = 0.01
    ablation_preset: str = "classifier_free"
    seed: int = 0
    condition_mode: str = MODE_BOTTLENECK
    augment: bool = True
    distort_masks: bool = True
    plain_mask_prob: float = 0.3
    prior_steps: int = 500
    encoder_steps: int = 500
    guidance_scale: float = 5.0
    grad_clip: float = 1.0
    image_size: int = 32
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    base_width: int = 32
    depth: int = 3
    attention_dim: int = 64
    time_embed_dim: int = 64
    d_emb: int = 64
    adapter_depth: int = 3

    def __post_init__(self):
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise ParameterError(f"cond_drop_prob must be in [0, 1], got {self.cond_drop_prob}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ParameterError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.ablation_preset not in PRESETS:
            raise ParameterError(f"unknown preset {self.ablation_preset!r}, expected one of {PRESETS}")
        if self.condition_mode not in (MODE_BOTTLENECK, MODE_ALL_TOKENS):
            raise ParameterError(f"unknown condition mode {self.condition_mode!r}")

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            base_width=self.base_width,
            depth=self.depth,
            attention_dim=self.attention_dim,
            time_embed_dim=self.time_embed_dim,
        )


# Table-3 style ladder: each row adds one technique on top of the previous.
_PRESET_FIELDS = {
    "baseline": dict(condition_mode=MODE_ALL_TOKENS, prior_steps=0, augment=False,
                     distort_masks=False, cond_drop_prob=0.0, guidance_scale=1.0),
    "prior": dict(condition_mode=MODE_ALL_TOKENS, prior_steps=500, augment=False,
                  distort_masks=False, cond_drop_prob=0.0, guidance_scale=1.0),
    "augmentation": dict(condition_mode=MODE_ALL_TOKENS, prior_steps=500, augment=True,
                         distort_masks=True, cond_drop_prob=0.0, guidance_scale=1.0),
    "bottleneck": dict(condition_mode=MODE_BOTTLENECK, prior_steps=500, augment=True,
                       distort_masks=True, cond_drop_prob=0.0, guidance_scale=1.0),
    "classifier_free": dict(condition_mode=MODE_BOTTLENECK, prior_steps=500, augment=True,
                            distort_masks=True, cond_drop_prob=0.2, guidance_scale=5.0),
}


def preset_config(name: str, **overrides) -> TrainConfig:
    """Build a TrainConfig for one of the named ablation presets."""
    if name not in _PRESET_FIELDS:
        raise ParameterError(f"unknown preset {name!r}, expected one of {PRESETS}")
    merged = {**_PRESET_FIELDS[name], **overrides, "ablation_preset": name}
    return TrainConfig(**merged)


@dataclass
class TrainState:
    config: TrainConfig
    schedule: NoiseSchedule
    encoder: ToyImageEncoder
    denoiser: Denoiser
    adapter: Adapter
    null_cond: NullCondition
    ema: dict[str, torch.Tensor]
    optimizer: torch.optim.Optimizer
    step: int = 0
    loss_history: list[float] = field(default_factory=list)

    def named_trainable(self):
        for prefix, module in (("denoiser", self.denoiser), ("adapter", self.adapter), ("null", self.null_cond)):
            for name, p in module.named_parameters():
                yield f"{prefix}.{name}", p


def _make_optimizer(state_modules, config: TrainConfig) -> torch.optim.Optimizer:
    params = [p for m in state_modules for p in m.parameters()]
    return torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)


def init_train_state(config: TrainConfig, encoder: ToyImageEncoder) -> TrainState:
    """Fresh training state around a pretrained, frozen encoder."""
    rng = np.random.default_rng(config.seed)
    denoiser = init_denoiser(config.denoiser_config(), rng)
    adapter = init_adapter(config.adapter_depth, config.d_emb, config.attention_dim, rng)
    null_cond = init_null_condition(config.d_emb, rng)
    schedule = build_schedule(config.T, config.beta_start, config.beta_end)
    state = TrainState(
        config=config,
        schedule=schedule,
        encoder=encoder,
        denoiser=denoiser,
        adapter=adapter,
        null_cond=null_cond,
        ema={},
        optimizer=_make_optimizer((denoiser, adapter, null_cond), config),
    )
    state.ema = {name: p.detach().clone() for name, p in state.named_trainable()}
    return state


def draw_condition_drops(rng: np.random.Generator, n: int, prob: float) -> np.ndarray:
    """Boolean vector: True where the reference condition is replaced by the null vector."""
    return rng.random(n) < prob


def ema_update(shadow: dict[str, torch.Tensor], named_params, decay: float) -> dict[str, torch.Tensor]:
    """shadow <- decay * shadow + (1 - decay) * current, elementwise."""
    with torch.no_grad():
        for name, p in named_params:
            s = shadow[name]
            if s.shape != p.shape:
                raise ParameterError(f"EMA shape mismatch for {name}: {tuple(s.shape)} vs {tuple(p.shape)}")
            s.mul_(decay).add_(p.detach(), alpha=1.0 - decay)
    return shadow


def _batch_tokens(state: TrainState, references: list[np.ndarray], drops: np.ndarray) -> torch.Tensor:
    """Adapter tokens for a batch, with dropped rows replaced by the null vector.

    In all-tokens mode a dropped row is the null vector tiled across the
    sequence, keeping batch shapes uniform.
    """
    refs = stack_images(references)
    raw = encode_batch(state.encoder, refs, state.config.condition_mode)  # (B, L, D), no grad
    if drops.any():
        drop_t = torch.from_numpy(drops).view(-1, 1, 1)
        v = state.null_cond.v.view(1, 1, -1).expand_as(raw)
        raw = torch.where(drop_t, v, raw)
    return state.adapter(raw)


def train_step(state: TrainState, batch: list[TrainingSample], rng: np.random.Generator) -> float:
    """One optimization step on a batch of training samples; returns the batch loss."""
    if not batch:
        raise ParameterError("empty batch")
    return _optimize_batch(state, batch, rng, force_null=False)


def _optimize_batch(
    state: TrainState, batch: list[TrainingSample], rng: np.random.Generator, force_null: bool
) -> float:
    cfg = state.config
    B = len(batch)

    if force_null:
        drops = np.ones(B, dtype=bool)
    else:
        drops = draw_condition_drops(rng, B, cfg.cond_drop_prob)
    tokens = _batch_tokens(state, [s.reference for s in batch], drops)

    targets = stack_images([s.target for s in batch])
    masked = stack_images([s.masked_source for s in batch])
    masks = torch.from_numpy(np.stack([s.mask for s in batch]).astype(np.float32)).unsqueeze(1)

    t = rng.integers(0, state.schedule.T, size=B)
    eps = torch.from_numpy(rng.standard_normal(tuple(targets.shape)).astype(np.float32))
    coef_s = torch.from_numpy(state.schedule.signal_coef[t].astype(np.float32)).view(B, 1, 1, 1)
    coef_n = torch.from_numpy(state.schedule.noise_coef[t].astype(np.float32)).view(B, 1, 1, 1)
    y_t = coef_s * targets + coef_n * eps

    pred = state.denoiser(y_t, masked, masks, torch.from_numpy(t), tokens)
    loss = ((pred - eps) ** 2).mean()
    if not torch.isfinite(loss):
        raise NumericError(
            f"non-finite loss at step {state.step} "
            f"(t range {t.min()}..{t.max()}, pred finite: {bool(torch.isfinite(pred).all())})"
        )

    state.optimizer.zero_grad()
    loss.backward()
    params = [p for _, p in state.named_trainable()]
    torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
    state.optimizer.step()
    ema_update(state.ema, state.named_trainable(), cfg.ema_decay)
    state.step += 1
    value = float(loss.detach())
    state.loss_history.append(value)
    return value


def _synth_batch(
    state: TrainState, dataset: list[AnnotatedImage], rng: np.random.Generator
) -> list[TrainingSample]:
    cfg = state.config
    policy = AugmentationPolicy() if cfg.augment else identity_policy()
    idx = rng.integers(0, len(dataset), size=cfg.batch_size)
    return [
        make_training_sample(
            dataset[i], policy, rng,
            distort_masks=cfg.distort_masks,
            plain_mask_prob=cfg.plain_mask_prob,
            reference_size=ENCODER_INPUT_SIZE,
        )
        for i in idx
    ]


def run_training(
    state: TrainState,
    dataset: list[AnnotatedImage],
    steps: int,
    rng: np.random.Generator,
    log_every: int = 100,
) -> TrainState:
    """Conditional training for `steps` optimization steps over freshly
    synthesized batches."""
    if not dataset:
        raise ParameterError("empty dataset")
    for i in range(steps):
        loss = train_step(state, _synth_batch(state, dataset, rng), rng)
        if log_every and (i + 1) % log_every == 0:
            log.info("step %d loss %.5f", state.step, loss)
    return state


def pretrain_prior(
    state: TrainState,
    dataset: list[AnnotatedImage],
    steps: int,
    rng: np.random.Generator,
    log_every: int = 100,
) -> TrainState:
    """Unconditional inpainting pretraining: every condition is the null vector."""
    if steps == 0:
        return state
    if not dataset:
        raise ParameterError("empty dataset")
    for i in range(steps):
        loss = _optimize_batch(state, _synth_batch(state, dataset, rng), rng, force_null=True)
        if log_every and (i + 1) % log_every == 0:
            log.info("prior step %d loss %.5f", state.step, loss)
    return state


# ---------------------------------------------------------------------------
# Checkpoint archive


def _tensor_blob(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().numpy().astype("<f4", copy=False)
    header = struct.pack("<q", arr.ndim) + struct.pack(f"<{arr.ndim}q", *arr.shape)
    return header + arr.tobytes(order="C")


def _blob_tensor(data: bytes, name: str) -> torch.Tensor:
    try:
        (rank,) = struct.unpack_from("<q", data, 0)
        if rank < 0 or rank > 8:
            raise CheckpointError(f"implausible rank {rank} for tensor {name}")
        shape = struct.unpack_from(f"<{rank}q", data, 8)
        offset = 8 + 8 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt tensor blob {name}: {exc}") from exc
    return torch.from_numpy(arr.copy())


def _module_tensors(prefix: str, module: nn.Module) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def save_checkpoint(state: TrainState, path) -> None:
    """Write the full training state (minus optimizer moments) as one archive."""
    manifest = "\n".join(
        [
            f"format_version={FORMAT_VERSION}",
            f"step={state.step}",
            f"config={json.dumps(asdict(state.config))}",
            f"schedule={json.dumps({'T': state.schedule.T, 'beta_start': state.schedule.beta_start, 'beta_end': state.schedule.beta_end})}",
        ]
    )
    tensors: dict[str, torch.Tensor] = {}
    tensors.update(_module_tensors("denoiser", state.denoiser))
    tensors.update(_module_tensors("adapter", state.adapter))
    tensors.update(_module_tensors("null", state.null_cond))
    tensors.update(_module_tensors("encoder", state.encoder))
    tensors.update({f"ema.{k}": v for k, v in state.ema.items()})

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest", manifest)
        for name, tensor in tensors.items():
            zf.writestr(f"tensors/{name}", _tensor_blob(tensor))


def _read_archive(path) -> tuple[dict[str, str], dict[str, torch.Tensor]]:
    try:
        with zipfile.ZipFile(path, "r") as zf:
            names = zf.namelist()
            if "manifest" not in names:
                raise CheckpointError(f"{path}: no manifest entry")
            manifest: dict[str, str] = {}
            for line in zf.read("manifest").decode().splitlines():
                if line.strip():
                    key, _, value = line.partition("=")
                    manifest[key] = value
            version = manifest.get("format_version")
            if version != str(FORMAT_VERSION):
                raise CheckpointVersionError(
                    f"checkpoint format version {version!r} is not supported; "
                    f"this build reads version {FORMAT_VERSION}"
                )
            tensors = {
                n[len("tensors/"):]: _blob_tensor(zf.read(n), n)
                for n in names
                if n.startswith("tensors/")
            }
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint archive ({exc})") from exc
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing archive entry {exc}") from exc
    return manifest, tensors


def _load_group(tensors: dict[str, torch.Tensor], prefix: str, module: nn.Module) -> None:
    wanted = {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
    missing = set(module.state_dict()) - set(wanted)
    if missing:
        raise CheckpointError(f"checkpoint missing tensors for {prefix}: {sorted(missing)}")
    module.load_state_dict(wanted)


def load_checkpoint(path) -> TrainState:
    """Rebuild a TrainState from an archive; the optimizer restarts fresh."""
    manifest, tensors = _read_archive(path)
    try:
        config = TrainConfig(**json.loads(manifest["config"]))
        sched = json.loads(manifest["schedule"])
        step = int(manifest.get("step", 0))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed manifest ({exc})") from exc

    schedule = build_schedule(sched["T"], sched["beta_start"], sched["beta_end"])
    encoder = ToyImageEncoder(d_emb=config.d_emb)
    denoiser = Denoiser(config.denoiser_config())
    adapter = Adapter(config.adapter_depth, config.d_emb, config.attention_dim)
    null_cond = NullCondition(config.d_emb)
    _load_group(tensors, "encoder", encoder)
    _load_group(tensors, "denoiser", denoiser)
    _load_group(tensors, "adapter", adapter)
    _load_group(tensors, "null", null_cond)
    encoder.eval()
    encoder.requires_grad_(False)

    ema = {k[len("ema."):]: v for k, v in tensors.items() if k.startswith("ema.")}
    if not ema:
        raise CheckpointError(f"{path}: checkpoint has no EMA tensors")

    state = TrainState(
        config=config,
        schedule=schedule,
        encoder=encoder,
        denoiser=denoiser,
        adapter=adapter,
        null_cond=null_cond,
        ema=ema,
        optimizer=_make_optimizer((denoiser, adapter, null_cond), config),
        step=step,
    )
    return state


@dataclass
class EditModel:
    """Immutable inference view of a checkpoint: EMA weights, frozen modules."""

    denoiser: Denoiser
    adapter: Adapter
    null_cond: NullCondition
    encoder: ToyImageEncoder
    schedule: NoiseSchedule
    config: TrainConfig
    model_id: str = "unsaved"


def to_edit_model(state: TrainState, model_id: str = "unsaved") -> EditModel:
    """Materialize the EMA shadow into fresh eval-mode modules."""
    denoiser = Denoiser(state.config.denoiser_config())
    adapter = Adapter(state.config.adapter_depth, state.config.d_emb, state.config.attention_dim)
    null_cond = NullCondition(state.config.d_emb)
    for prefix, module in (("denoiser", denoiser), ("adapter", adapter), ("null", null_cond)):
        weights = {
            k[len(prefix) + 1:]: v.clone() for k, v in state.ema.items() if k.startswith(prefix + ".")
        }
        module.load_state_dict(weights)
        module.eval()
        module.requires_grad_(False)
    encoder = copy.deepcopy(state.encoder)
    encoder.eval()
    encoder.requires_grad_(False)
    return EditModel(
        denoiser=denoiser,
        adapter=adapter,
        null_cond=null_cond,
        encoder=encoder,
        schedule=state.schedule,
        config=state.config,
        model_id=model_id,
    )


def file_model_id(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:12]


def load_edit_model(path) -> EditModel:
    """Load a checkpoint for inference, using the EMA weights."""
    state = load_checkpoint(path)
    return to_edit_model(state, model_id=file_model_id(path))
