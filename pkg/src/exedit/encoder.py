"""Reference conditioning: frozen global-embedding image encoder, the
fully-connected adapter stack, and the learnable null condition.

The encoder maps any image (resized to a fixed input size) to one global
embedding plus a grid of patch embeddings. In bottleneck mode only the global
embedding conditions the denoiser, compressing the reference to d_emb numbers;
all-tokens mode forwards the full sequence and exists as the ablation
baseline. The same frozen encoder doubles as the feature extractor for the
evaluation metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .augment import AugmentationPolicy, augment_reference
from .errors import ParameterError, ShapeError
from .imgio import resize_image, validate_image
from .torchutil import seeded_init_, stack_images

ENCODER_INPUT_SIZE = 32
PATCH_GRID = 4  # 4x4 patch grid -> 16 patch tokens + 1 global token

MODE_BOTTLENECK = "bottleneck"
MODE_ALL_TOKENS = "all_tokens"

_VIEW_POLICY = AugmentationPolicy(flip_prob=0.5, rotate_limit_degrees=15.0, blur_prob=0.3, elastic_prob=0.3)


@dataclass
class ConditionTokens:
    """L x D_attn condition sequence fed to the denoiser's cross-attention."""

    tokens: np.ndarray
    mode: str

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float32)
        if self.tokens.ndim != 2:
            raise ShapeError(f"tokens must be (L, D), got {self.tokens.shape}")
        if not np.all(np.isfinite(self.tokens)):
            raise ParameterError("condition tokens contain non-finite values")
        L = self.tokens.shape[0]
        if self.mode == MODE_BOTTLENECK and L != 1:
            raise ParameterError(f"bottleneck mode requires a single token, got {L}")
        if self.mode == MODE_ALL_TOKENS and L < 2:
            raise ParameterError(f"all-tokens mode requires more than one token, got {L}")


@dataclass(frozen=True)
class EncoderPretrainConfig:
    d_emb: int = 64
    steps: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    temperature: float = 0.1


class ToyImageEncoder(nn.Module):
    """Small convolutional encoder with a global token and a patch-token grid."""

    def __init__(self, d_emb: int = 64):
        super().__init__()
        self.d_emb = d_emb
        self.input_size = ENCODER_INPUT_SIZE
        self.patch_grid = PATCH_GRID
        w = 64
        self.backbone = nn.Sequential(
            nn.Conv2d(3, 32, 3, padding=1), nn.GroupNorm(8, 32), nn.SiLU(),
            nn.Conv2d(32, w, 3, stride=2, padding=1), nn.GroupNorm(8, w), nn.SiLU(),
            nn.Conv2d(w, w, 3, stride=2, padding=1), nn.GroupNorm(8, w), nn.SiLU(),
            nn.Conv2d(w, w, 3, stride=2, padding=1), nn.GroupNorm(8, w), nn.SiLU(),
        )
        self.global_proj = nn.Linear(w, d_emb)
        self.patch_proj = nn.Linear(w, d_emb)
        self.contrast_head = nn.Sequential(nn.Linear(d_emb, d_emb), nn.SiLU(), nn.Linear(d_emb, 32))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 3, S, S) -> global (B, D), patches (B, P, D)."""
        f = self.backbone(x)                       # (B, w, 4, 4)
        cells = f.flatten(2).transpose(1, 2)        # (B, 16, w)
        patches = self.patch_proj(cells)
        global_emb = self.global_proj(cells.mean(dim=1))
        return global_emb, patches


def _prepare_input(x: np.ndarray) -> np.ndarray:
    validate_image(x)
    return resize_image(x, (ENCODER_INPUT_SIZE, ENCODER_INPUT_SIZE)).astype(np.float32)


def _nt_xent_loss(z: torch.Tensor, temperature: float) -> torch.Tensor:
    """Normalized-temperature cross entropy over 2B stacked view embeddings."""
    z = F.normalize(z, dim=1)
    sim = z @ z.t() / temperature
    n = z.shape[0]
    sim.fill_diagonal_(float("-inf"))
    targets = torch.arange(n).roll(n // 2)
    return F.cross_entropy(sim, targets)


def pretrain_encoder(
    images: list[np.ndarray],
    config: EncoderPretrainConfig,
    rng: np.random.Generator,
) -> ToyImageEncoder:
    """Contrastively pretrain the toy encoder on augmented view pairs, then freeze it.

    Returns the encoder in eval mode with gradients disabled; its weights are
    never updated by later training stages.
    """
    if not images:
        raise ParameterError("encoder pretraining needs a non-empty image set")
    encoder = seeded_init_(ToyImageEncoder(d_emb=config.d_emb), rng)
    opt = torch.optim.Adam(encoder.parameters(), lr=config.learning_rate)
    prepared = [_prepare_input(im) for im in images]

    encoder.train()
    for _ in range(config.steps):
        idx = rng.choice(len(prepared), size=config.batch_size, replace=len(prepared) < config.batch_size)
        views_a = [augment_reference(prepared[i], _VIEW_POLICY, rng) for i in idx]
        views_b = [augment_reference(prepared[i], _VIEW_POLICY, rng) for i in idx]
        batch = stack_images(views_a + views_b)
        global_emb, _ = encoder(batch)
        loss = _nt_xent_loss(encoder.contrast_head(global_emb), config.temperature)
        opt.zero_grad()
        loss.backward()
        opt.step()

    encoder.eval()
    encoder.requires_grad_(False)
    return encoder


def encode_reference(encoder: ToyImageEncoder, x_r: np.ndarray, mode: str) -> np.ndarray:
    """Raw embedding sequence for a reference image.

    Bottleneck mode returns (1, d_emb) holding the global embedding only;
    all-tokens mode returns (P+1, d_emb) with the global token first.
    """
    if mode not in (MODE_BOTTLENECK, MODE_ALL_TOKENS):
        raise ParameterError(f"unknown conditioning mode {mode!r}")
    x = _prepare_input(x_r)
    with torch.no_grad():
        global_emb, patches = encoder(stack_images([x]))
    if mode == MODE_BOTTLENECK:
        return global_emb.numpy().astype(np.float32)
    return torch.cat([global_emb.unsqueeze(1), patches], dim=1)[0].numpy().astype(np.float32)


def encode_batch(encoder: ToyImageEncoder, refs: torch.Tensor, mode: str) -> torch.Tensor:
    """Batched raw embeddings for the trainer: (B, 3, S, S) -> (B, L, d_emb)."""
    with torch.no_grad():
        global_emb, patches = encoder(refs)
    if mode == MODE_BOTTLENECK:
        return global_emb.unsqueeze(1)
    return torch.cat([global_emb.unsqueeze(1), patches], dim=1)


class Adapter(nn.Module):
    """Per-token stack of fully-connected layers mapping d_emb to d_attn."""

    def __init__(self, depth: int = 3, d_emb: int = 64, d_attn: int = 64):
        super().__init__()
        if depth < 1:
            raise ParameterError(f"adapter depth must be >= 1, got {depth}")
        self.depth = depth
        self.d_emb = d_emb
        self.d_attn = d_attn
        dims = [d_emb] + [d_attn] * depth
        self.layers = nn.ModuleList(nn.Linear(dims[i], dims[i + 1]) for i in range(depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < self.depth - 1:
                x = F.silu(x)
        return x


def init_adapter(depth: int, d_emb: int, d_attn: int, rng: np.random.Generator) -> Adapter:
    return seeded_init_(Adapter(depth=depth, d_emb=d_emb, d_attn=d_attn), rng)


def adapt(adapter: Adapter, raw: np.ndarray) -> ConditionTokens:
    """Map a raw embedding sequence (L, d_emb) through the adapter."""
    raw = np.asarray(raw, dtype=np.float32)
    if raw.ndim != 2 or raw.shape[1] != adapter.d_emb:
        raise ShapeError(f"raw embeddings must be (L, {adapter.d_emb}), got {raw.shape}")
    with torch.no_grad():
        tokens = adapter(torch.from_numpy(raw)).numpy()
    mode = MODE_BOTTLENECK if raw.shape[0] == 1 else MODE_ALL_TOKENS
    return ConditionTokens(tokens=tokens, mode=mode)


class NullCondition(nn.Module):
    """Learnable stand-in embedding used when the reference condition is dropped."""

    def __init__(self, d_emb: int = 64):
        super().__init__()
        self.v = nn.Parameter(torch.zeros(d_emb))


def init_null_condition(d_emb: int, rng: np.random.Generator) -> NullCondition:
    null = NullCondition(d_emb)
    with torch.no_grad():
        null.v.copy_(torch.from_numpy(rng.normal(0.0, 0.02, size=d_emb).astype(np.float32)))
    return null


def null_tokens(null: NullCondition, adapter: Adapter) -> ConditionTokens:
    """Adapter output for the null vector; always a single token."""
    with torch.no_grad():
        tokens = adapter(null.v.unsqueeze(0)).numpy()
    return ConditionTokens(tokens=tokens, mode=MODE_BOTTLENECK)


def view_similarity_stats(
    encoder: ToyImageEncoder,
    images: list[np.ndarray],
    rng: np.random.Generator,
    n_pairs: int = 200,
) -> tuple[float, float]:
    """Mean cosine similarity of (same-image view pairs, different-image pairs)."""
    if len(images) < 2:
        raise ParameterError("need at least two images")

    def embed(im):
        return encode_reference(encoder, im, MODE_BOTTLENECK)[0]

    def cos(u, v):
        return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-12))

    same, diff = [], []
    for _ in range(n_pairs):
        i = int(rng.integers(0, len(images)))
        j = int(rng.integers(0, len(images) - 1))
        j = j if j < i else j + 1
        base = _prepare_input(images[i])
        other = _prepare_input(images[j])
        va = augment_reference(base, _VIEW_POLICY, rng)
        vb = augment_reference(base, _VIEW_POLICY, rng)
        same.append(cos(embed(va), embed(vb)))
        diff.append(cos(embed(va), embed(augment_reference(other, _VIEW_POLICY, rng))))
    return float(np.mean(same)), float(np.mean(diff))
