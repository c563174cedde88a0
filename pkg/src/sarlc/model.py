"""Shifted-window transformer encoder-decoder for dense classification.

A U-shaped network built from window self-attention blocks: a patch
embedding, encoder stages that halve resolution and double channels via
patch merging, a bottleneck, and a symmetric decoder that restores
resolution via patch expanding with skip connections from matching encoder
stages. Blocks alternate between regular and half-window-shifted attention;
shifted blocks mask token pairs whose windows wrap around the image.

Everything is deterministic: no dropout, seeded initialisation, and a
hand-rolled Adam step so training state lives in plain tensors that
checkpoint bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .rng import Xoshiro256StarStar, derive_seed

MASK_FILL = -1e9


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 28
    n_classes: int = 9
    embed_dim: int = 16
    patch_size: int = 4
    window: int = 4
    depths: tuple[int, ...] = (2, 2)
    heads: tuple[int, ...] = (2, 4)
    bottleneck_depth: int = 2
    bottleneck_heads: int | None = None
    mlp_ratio: int = 4

    def __post_init__(self):
        if len(self.depths) != len(self.heads):
            raise ValueError("depths and heads must have one entry per stage")
        if not self.depths:
            raise ValueError("need at least one encoder stage")
        for i, h in enumerate(self.heads):
            if (self.embed_dim * 2**i) % h:
                raise ValueError(f"stage {i} dim {self.embed_dim * 2**i} not divisible by {h} heads")
        if self.bottleneck_dim % self.effective_bottleneck_heads:
            raise ValueError("bottleneck dim not divisible by its head count")
        if self.window < 1 or self.patch_size < 1:
            raise ValueError("window and patch_size must be >= 1")

    @property
    def n_stages(self) -> int:
        return len(self.depths)

    @property
    def bottleneck_dim(self) -> int:
        return self.embed_dim * 2**self.n_stages

    @property
    def effective_bottleneck_heads(self) -> int:
        return self.bottleneck_heads or self.heads[-1] * 2

    @property
    def min_input_multiple(self) -> int:
        return self.patch_size * 2**self.n_stages

    @classmethod
    def paper_scale(cls) -> "ModelConfig":
        """Full-size configuration: embed dim 48, four stages, 7x7 windows."""
        return cls(
            embed_dim=48,
            window=7,
            depths=(2, 2, 2, 2),
            heads=(3, 6, 12, 24),
            bottleneck_depth=2,
        )

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "n_classes": self.n_classes,
            "embed_dim": self.embed_dim,
            "patch_size": self.patch_size,
            "window": self.window,
            "depths": list(self.depths),
            "heads": list(self.heads),
            "bottleneck_depth": self.bottleneck_depth,
            "bottleneck_heads": self.bottleneck_heads,
            "mlp_ratio": self.mlp_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["depths"] = tuple(d["depths"])
        d["heads"] = tuple(d["heads"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 30
    batch: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(H, W, C) or (B, H, W, C) -> (num_windows[*B], window*window, C)."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    b, h, w, c = x.shape
    if h % window or w % window:
        raise ValueError(f"{h}x{w} not divisible by window {window}")
    x = x.view(b, h // window, window, w // window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)


def window_reverse(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`; returns (B, H, W, C) with B >= 1."""
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // window) * (w // window))
    x = windows.view(b, h // window, w // window, window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


def shifted_attention_mask(
    h: int, w: int, window: int, shift: int, device=None
) -> torch.Tensor:
    """Additive (num_windows, N, N) mask for half-shifted window attention.

    Token pairs that originate from different image regions before the
    cyclic shift get MASK_FILL; same-region pairs get 0. With shift 0 the
    mask is all zeros.
    """
    if shift >= window:
        raise ValueError(f"shift {shift} must be smaller than window {window}")
    n = window * window
    n_windows = (h // window) * (w // window)
    if shift == 0:
        return torch.zeros((n_windows, n, n), device=device)
    canvas = torch.zeros((h, w), device=device)
    slices = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    region = 0
    for hs in slices:
        for ws in slices:
            canvas[hs, ws] = region
            region += 1
    regions = window_partition(canvas.unsqueeze(-1), window).squeeze(-1)  # (nW, N)
    diff = regions.unsqueeze(1) - regions.unsqueeze(2)
    return torch.where(diff == 0, 0.0, MASK_FILL)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside windows, with relative position bias.

    The bias table is sized for ``table_window``; lookups for smaller
    effective windows index the table's central sub-range, so one parameter
    set serves any input size.
    """

    def __init__(self, dim: int, num_heads: int, table_window: int):
        super().__init__()
        self.dim = dim
        self.num_heads = num_heads
        self.table_window = table_window
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim, bias=True)
        self.relative_bias = nn.Parameter(
            torch.zeros((2 * table_window - 1) ** 2, num_heads)
        )
        self._index_cache: dict[int, torch.Tensor] = {}

    def _bias(self, window: int) -> torch.Tensor:
        idx = self._index_cache.get(window)
        if idx is None:
            if window > self.table_window:
                raise ValueError(f"effective window {window} exceeds table {self.table_window}")
            coords = torch.stack(
                torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")
            ).flatten(1)
            rel = coords[:, :, None] - coords[:, None, :]
            idx = (rel[0] + self.table_window - 1) * (2 * self.table_window - 1) + (
                rel[1] + self.table_window - 1
            )
            self._index_cache[window] = idx
        n = window * window
        return self.relative_bias[idx.reshape(-1)].reshape(n, n, -1).permute(2, 0, 1)

    def forward(self, tokens: torch.Tensor, window: int, mask: torch.Tensor | None = None):
        bw, n, c = tokens.shape
        if c != self.dim:
            raise ValueError(f"token dim {c} does not match layer dim {self.dim}")
        head_dim = c // self.num_heads
        qkv = (
            self.qkv(tokens)
            .reshape(bw, n, 3, self.num_heads, head_dim)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) / math.sqrt(head_dim)
        attn = attn + self._bias(window).unsqueeze(0).to(attn.dtype)
        if mask is not None:
            n_windows = mask.shape[0]
            attn = attn.view(bw // n_windows, n_windows, self.num_heads, n, n)
            attn = attn + mask.unsqueeze(0).unsqueeze(2).to(attn.dtype)
            attn = attn.view(bw, self.num_heads, n, n)
        attn = torch.softmax(attn, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        return self.proj(out)


class SwinBlock(nn.Module):
    """Pre-norm attention + MLP with residuals; odd blocks use shifted windows."""

    def __init__(self, dim: int, num_heads: int, window: int, shifted: bool, mlp_ratio: int):
        super().__init__()
        self.window = window
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, table_window=window)
        self.norm2 = nn.LayerNorm(dim)
        hidden = dim * mlp_ratio
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        win = min(self.window, h, w)
        if h % win or w % win:
            raise ValueError(f"grid {h}x{w} not divisible by window {win}")
        shift = win // 2 if (self.shifted and win < max(h, w)) else 0
        shortcut = x
        x = self.norm1(x)
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
            mask = shifted_attention_mask(h, w, win, shift, device=x.device)
        else:
            mask = None
        tokens = window_partition(x, win)
        tokens = self.attn(tokens, win, mask)
        x = window_reverse(tokens, win, h, w)
        if shift:
            x = torch.roll(x, shifts=(shift, shift), dims=(1, 2))
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    """2x spatial downsample, channel doubling (4C -> 2C linear)."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduce = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"cannot merge odd grid {h}x{w}")
        x = torch.cat(
            [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]],
            dim=-1,
        )
        return self.reduce(self.norm(x))


class PatchExpanding(nn.Module):
    """2x spatial upsample via linear projection + channel-to-space."""

    def __init__(self, dim: int):
        super().__init__()
        self.expand = nn.Linear(dim, 2 * dim, bias=False)
        self.norm = nn.LayerNorm(dim // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        x = self.expand(x)  # (B, H, W, 2C)
        x = x.view(b, h, w, 2, 2, c // 2)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, 2 * h, 2 * w, c // 2)
        return self.norm(x)


class FinalExpanding(nn.Module):
    """patch_size-times spatial upsample back to pixel resolution."""

    def __init__(self, dim: int, factor: int):
        super().__init__()
        self.factor = factor
        self.expand = nn.Linear(dim, factor * factor * dim, bias=False)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        p = self.factor
        x = self.expand(x).view(b, h, w, p, p, c)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, h * p, w * p, c)
        return self.norm(x)


def _stage(dim: int, depth: int, heads: int, window: int, mlp_ratio: int) -> nn.ModuleList:
    return nn.ModuleList(
        SwinBlock(dim, heads, window, shifted=(j % 2 == 1), mlp_ratio=mlp_ratio)
        for j in range(depth)
    )


class SwinUnet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.embed_dim
        self.patch_embed = nn.Conv2d(cfg.in_channels, c, cfg.patch_size, stride=cfg.patch_size)
        self.embed_norm = nn.LayerNorm(c)
        self.encoder = nn.ModuleList()
        self.merges = nn.ModuleList()
        for i, (depth, heads) in enumerate(zip(cfg.depths, cfg.heads)):
            dim = c * 2**i
            self.encoder.append(_stage(dim, depth, heads, cfg.window, cfg.mlp_ratio))
            self.merges.append(PatchMerging(dim))
        self.bottleneck = _stage(
            cfg.bottleneck_dim,
            cfg.bottleneck_depth,
            cfg.effective_bottleneck_heads,
            cfg.window,
            cfg.mlp_ratio,
        )
        self.expands = nn.ModuleList()
        self.skip_fusions = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for i in reversed(range(cfg.n_stages)):
            dim = c * 2**i
            self.expands.append(PatchExpanding(dim * 2))
            self.skip_fusions.append(nn.Linear(2 * dim, dim, bias=False))
            self.decoder.append(_stage(dim, cfg.depths[i], cfg.heads[i], cfg.window, cfg.mlp_ratio))
        self.final_expand = FinalExpanding(c, cfg.patch_size)
        self.head = nn.Linear(c, cfg.n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, in_channels, H, W) -> (B, n_classes, H, W)."""
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        b, c_in, h, w = x.shape
        mult = self.cfg.min_input_multiple
        if c_in != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {c_in}")
        if h % mult or w % mult:
            raise ValueError(f"input {h}x{w} must be divisible by {mult}")
        x = self.patch_embed(x).permute(0, 2, 3, 1)  # (B, H/p, W/p, C)
        x = self.embed_norm(x)
        skips = []
        for blocks, merge in zip(self.encoder, self.merges):
            for block in blocks:
                x = block(x)
            skips.append(x)
            x = merge(x)
        for block in self.bottleneck:
            x = block(x)
        for expand, fuse, blocks, skip in zip(
            self.expands, self.skip_fusions, self.decoder, reversed(skips)
        ):
            x = expand(x)
            x = fuse(torch.cat([x, skip], dim=-1))
            for block in blocks:
                x = block(x)
        x = self.final_expand(x)
        logits = self.head(x).permute(0, 3, 1, 2)
        return logits.squeeze(0) if squeeze else logits


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_model(cfg: ModelConfig, seed: int = 0) -> SwinUnet:
    """Construct with seeded deterministic initialisation."""
    torch.manual_seed(derive_seed(seed, 0x5EED) % 2**63)
    model = SwinUnet(cfg)
    model.apply(_init_weights)
    for m in model.modules():
        if isinstance(m, WindowAttention):
            nn.init.trunc_normal_(m.relative_bias, std=0.02)
    return model


def param_count(cfg: ModelConfig) -> int:
    """Trainable parameter total; a pure function of the configuration."""
    model = SwinUnet(cfg)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def cross_entropy_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel categorical cross-entropy over every pixel."""
    n_classes = logits.shape[-3]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    if logits.dim() == 3:
        logits, labels = logits.unsqueeze(0), labels.unsqueeze(0)
    return F.cross_entropy(logits, labels)


def loss_and_grad(
    model: SwinUnet, x: torch.Tensor, labels: torch.Tensor
) -> tuple[float, dict[str, torch.Tensor]]:
    """One reverse-mode pass; returns loss and per-parameter gradients."""
    model.zero_grad(set_to_none=True)
    loss = cross_entropy_loss(model(x), labels)
    loss.backward()
    grads = {
        name: (torch.zeros_like(p) if p.grad is None else p.grad.detach().clone())
        for name, p in model.named_parameters()
    }
    return float(loss.detach()), grads


@dataclass
class AdamState:
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0

    @classmethod
    def init(cls, params: dict[str, torch.Tensor]) -> "AdamState":
        return cls(
            m={k: torch.zeros_like(p) for k, p in params.items()},
            v={k: torch.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def adam_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard Adam update with bias correction, applied in place."""
    state.step += 1
    t = state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            state.m[name].mul_(beta1).add_(g, alpha=1 - beta1)
            state.v[name].mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = state.m[name] / (1 - beta1**t)
            v_hat = state.v[name] / (1 - beta2**t)
            p.sub_(lr * m_hat / (v_hat.sqrt() + eps))


def train_model(
    model: SwinUnet,
    features: list[np.ndarray],
    labels: list[np.ndarray],
    tcfg: TrainConfig,
    seed: int = 0,
    max_steps: int | None = None,
) -> list[float]:
    """Adam training loop; returns the mean loss per epoch.

    Sample order is reshuffled each epoch from the run seed, so two runs
    with the same seed replay the identical update sequence.
    """
    if len(features) != len(labels) or not features:
        raise ValueError("need matching, non-empty feature and label lists")
    xs = [torch.from_numpy(np.ascontiguousarray(f)).float() for f in features]
    ys = [torch.from_numpy(np.ascontiguousarray(l)).long() for l in labels]
    params = dict(model.named_parameters())
    state = AdamState.init(params)
    history = []
    steps = 0
    for epoch in range(tcfg.epochs):
        order = list(range(len(xs)))
        Xoshiro256StarStar(derive_seed(seed, 1 + epoch)).shuffle(order)
        total, batches = 0.0, 0
        for start in range(0, len(order), tcfg.batch):
            idx = order[start : start + tcfg.batch]
            x = torch.stack([xs[i] for i in idx])
            y = torch.stack([ys[i] for i in idx])
            loss, grads = loss_and_grad(model, x, y)
            adam_step(params, grads, state, tcfg.lr)
            total += loss
            batches += 1
            steps += 1
            if max_steps is not None and steps >= max_steps:
                history.append(total / batches)
                return history
        history.append(total / batches)
    return history


def predict_map(model: SwinUnet, features: np.ndarray) -> np.ndarray:
    """Argmax class map for one (channels, H, W) feature array."""
    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(np.ascontiguousarray(features)).float())
    return logits.argmax(dim=0).numpy().astype(np.int16)


# ---------------------------------------------------------------------------
# checkpointing: JSON manifest + raw little-endian f32 arrays, fixed order
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: SwinUnet, state: AdamState | None = None) -> None:
    stem = Path(path).with_suffix("")
    params = dict(model.named_parameters())
    names = list(params)
    arrays: list[tuple[str, torch.Tensor]] = [(n, params[n]) for n in names]
    if state is not None:
        arrays += [(f"adam_m.{n}", state.m[n]) for n in names]
        arrays += [(f"adam_v.{n}", state.v[n]) for n in names]
    manifest = {
        "kind": "swin_unet",
        "config": model.cfg.to_dict(),
        "step": 0 if state is None else state.step,
        "has_optimizer": state is not None,
        "arrays": [{"name": n, "shape": list(t.shape)} for n, t in arrays],
        "dtype": "f32",
        "byte_order": "LE",
    }
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(manifest, fh)
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for _, t in arrays:
            fh.write(t.detach().to(torch.float32).numpy().astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[SwinUnet, AdamState | None]:
    stem = Path(path).with_suffix("")
    with open(stem.with_suffix(".json")) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "swin_unet":
        raise ValueError(f"not a model checkpoint: kind={manifest.get('kind')!r}")
    cfg = ModelConfig.from_dict(manifest["config"])
    model = SwinUnet(cfg)
    raw = Path(stem.with_suffix(".bin")).read_bytes()
    offset = 0
    tensors: dict[str, torch.Tensor] = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        chunk = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        tensors[entry["name"]] = torch.from_numpy(chunk.copy().reshape(shape))
    if offset != len(raw):
        raise ValueError(f"checkpoint payload has {len(raw) - offset} trailing bytes")
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(tensors[name])
    state = None
    if manifest.get("has_optimizer"):
        state = AdamState(
            m={n: tensors[f"adam_m.{n}"].clone() for n in params},
            v={n: tensors[f"adam_v.{n}"].clone() for n in params},
            step=int(manifest["step"]),
        )
    return model, state
