"""Convolution + cross-attention HR estimator and its autoencoder form.

Both variants share one ``Encoder``: a PPG stem and an accelerometer stem
(unshared weights, three conv blocks each, average pooling after every block)
fused by multi-head cross-attention with PPG features as queries and
accelerometer features as keys/values. The estimator puts a two-layer dense
head on top; the autoencoder puts a self-attention bottleneck and a
transposed-convolution decoder with U-Net style skips from the first two
encoder blocks.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import torch
import torch.nn as nn

from .data import NormStats

ESTIMATOR = "estimator"
AUTOENCODER = "autoencoder"

# encoder-defining fields; must agree for weight transfer
ENCODER_FIELDS = (
    "block_channels",
    "layers_per_block",
    "kernel_len",
    "dilation",
    "pool_factor",
    "attention_heads",
    "input_channels",
    "input_len",
    "legacy_dilated",
)


@dataclass(frozen=True)
class ModelConfig:
    block_channels: tuple = (32, 48, 64)
    layers_per_block: int = 3
    kernel_len: int = 9
    dilation: int = 1
    pool_factor: int = 2
    attention_heads: int = 4
    head_hidden: int = 8
    input_channels: int = 4
    input_len: int = 256
    variant: str = ESTIMATOR
    legacy_dilated: bool = False
    skip_connections: bool = True

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        if self.variant not in (ESTIMATOR, AUTOENCODER):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.input_channels != 4:
            raise ValueError("input must have 4 channels: PPG, ACC x, ACC y, ACC z")
        total_pool = self.pool_factor ** len(self.block_channels)
        if self.input_len % total_pool:
            raise ValueError(f"pool_factor^{len(self.block_channels)} = {total_pool} does not divide {self.input_len}")
        if self.block_channels[-1] % self.attention_heads:
            raise ValueError(f"{self.attention_heads} heads do not divide embedding {self.block_channels[-1]}")
        if self.variant == AUTOENCODER and len(self.block_channels) < 2:
            raise ValueError("the autoencoder needs at least two conv blocks")

    @classmethod
    def legacy(cls, **kw) -> "ModelConfig":
        """Dilated baseline: kernel 5, dilation 2."""
        return cls(legacy_dilated=True, **kw)

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        kw = {"block_channels": (2, 3, 4), "input_len": 32, "attention_heads": 2, "head_hidden": 4, **kw}
        return cls(**kw)

    @property
    def conv_kernel(self) -> int:
        return 5 if self.legacy_dilated else self.kernel_len

    @property
    def conv_dilation(self) -> int:
        return 2 if self.legacy_dilated else self.dilation

    @property
    def receptive_span(self) -> int:
        """(kernel - 1) * dilation of one conv layer."""
        return (self.conv_kernel - 1) * self.conv_dilation

    @property
    def latent_len(self) -> int:
        return self.input_len // self.pool_factor ** len(self.block_channels)

    @property
    def embed_dim(self) -> int:
        return self.block_channels[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class ConfigMismatchError(ValueError):
    pass


def _same_pad(cfg: ModelConfig) -> int:
    return cfg.receptive_span // 2


class ConvBlock(nn.Module):
    def __init__(self, c_in, c_out, cfg: ModelConfig):
        super().__init__()
        layers = []
        for i in range(cfg.layers_per_block):
            layers.append(
                nn.Conv1d(
                    c_in if i == 0 else c_out,
                    c_out,
                    cfg.conv_kernel,
                    dilation=cfg.conv_dilation,
                    padding=_same_pad(cfg),
                )
            )
            layers.append(nn.ReLU())
        self.convs = nn.Sequential(*layers)
        self.pool = nn.AvgPool1d(cfg.pool_factor)

    def forward(self, x):
        return self.pool(self.convs(x))


class ConvStem(nn.Module):
    def __init__(self, c_in, cfg: ModelConfig):
        super().__init__()
        chans = (c_in,) + cfg.block_channels
        self.blocks = nn.ModuleList(ConvBlock(chans[i], chans[i + 1], cfg) for i in range(len(cfg.block_channels)))

    def forward(self, x):
        outs = []
        for b in self.blocks:
            x = b(x)
            outs.append(x)
        return outs


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over token sequences shaped (B, L, E)."""

    def __init__(self, embed_dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.q_proj = nn.Linear(embed_dim, embed_dim)
        self.k_proj = nn.Linear(embed_dim, embed_dim)
        self.v_proj = nn.Linear(embed_dim, embed_dim)
        self.out_proj = nn.Linear(embed_dim, embed_dim)

    def _split(self, x):
        B, L, _ = x.shape
        return x.view(B, L, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, query, key_value):
        B, Lq, E = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key_value))
        v = self._split(self.v_proj(key_value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        ctx = scores.softmax(dim=-1) @ v
        return self.out_proj(ctx.transpose(1, 2).reshape(B, Lq, E))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ppg_stem = ConvStem(1, cfg)
        self.acc_stem = ConvStem(cfg.input_channels - 1, cfg)
        self.attention = MultiHeadAttention(cfg.embed_dim, cfg.attention_heads)
        self.norm = nn.LayerNorm(cfg.embed_dim)

    def forward(self, x):
        """Returns the fused latent (B, L, E) and the per-block stem features.

        Skip features are the sum of the PPG and ACC stem outputs of a block.
        """
        ppg_feats = self.ppg_stem(x[:, :1])
        acc_feats = self.acc_stem(x[:, 1:])
        q = ppg_feats[-1].transpose(1, 2)
        kv = acc_feats[-1].transpose(1, 2)
        latent = self.norm(q + self.attention(q, kv))
        skips = [p + a for p, a in zip(ppg_feats[:-1], acc_feats[:-1])]
        return latent, skips


class PulseEstimator(nn.Module):
    """Encoder + dense regression head; outputs HR in BPM, shape (B, 1).

    The head predicts in standardized units; ``hr_offset``/``hr_scale`` are
    buffers set from the training labels before fine-tuning.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(cfg.latent_len * cfg.embed_dim, cfg.head_hidden),
            nn.ReLU(),
            nn.Linear(cfg.head_hidden, 1),
        )
        self.register_buffer("hr_offset", torch.tensor(0.0))
        self.register_buffer("hr_scale", torch.tensor(1.0))

    def set_label_scaling(self, offset: float, scale: float):
        self.hr_offset.fill_(float(offset))
        self.hr_scale.fill_(float(scale) if scale > 0 else 1.0)

    def forward(self, x):
        _check_input(x, self.cfg)
        latent, _ = self.encoder(x)
        return self.head(latent) * self.hr_scale + self.hr_offset


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        E = cfg.embed_dim
        self.attention = MultiHeadAttention(E, cfg.attention_heads)
        self.norm = nn.LayerNorm(E)
        # decoder blocks mirror encoder blocks n-1 .. 0; output widths follow the encoder in reverse
        n = len(cfg.block_channels)
        outs = list(reversed(cfg.block_channels[:-1])) + [cfg.block_channels[0]]
        self.n_skips = min(2, n - 1) if cfg.skip_connections else 0
        blocks = []
        c_in = E
        for i, c_out in enumerate(outs):
            layers = [nn.ConvTranspose1d(c_in, c_out, cfg.pool_factor, stride=cfg.pool_factor), nn.ReLU()]
            for _ in range(cfg.layers_per_block - 1):
                layers += [
                    nn.ConvTranspose1d(
                        c_out, c_out, cfg.conv_kernel, dilation=cfg.conv_dilation, padding=_same_pad(cfg)
                    ),
                    nn.ReLU(),
                ]
            blocks.append(nn.Sequential(*layers))
            # the first n_skips decoder blocks get their output concatenated with an encoder skip
            c_in = 2 * c_out if i < self.n_skips else c_out
        self.blocks = nn.ModuleList(blocks)
        self.out = nn.Conv1d(c_in, cfg.input_channels, 1)

    def forward(self, latent, skips):
        z = self.norm(latent + self.attention(latent, latent))
        h = z.transpose(1, 2)
        # encoder skips ordered shallow -> deep; the decoder consumes deep first
        pending = list(reversed(skips))[: self.n_skips]
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < self.n_skips:
                h = torch.cat([h, pending[i]], dim=1)
        return self.out(h)


class PulseAutoencoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, x):
        _check_input(x, self.cfg)
        latent, skips = self.encoder(x)
        return self.decoder(latent, skips)


def _check_input(x, cfg: ModelConfig):
    if x.ndim != 3 or x.shape[1] != cfg.input_channels or x.shape[2] != cfg.input_len:
        raise ValueError(f"expected input (B, {cfg.input_channels}, {cfg.input_len}), got {tuple(x.shape)}")


@contextlib.contextmanager
def _seeded(seed):
    if seed is None:
        yield
        return
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        yield


def build_estimator(cfg: ModelConfig | None = None, seed: int | None = 0) -> PulseEstimator:
    cfg = cfg or ModelConfig()
    if cfg.variant != ESTIMATOR:
        raise ValueError(f"build_estimator needs variant={ESTIMATOR!r}, got {cfg.variant!r}")
    with _seeded(seed):
        return PulseEstimator(cfg)


def build_autoencoder(cfg: ModelConfig | None = None, seed: int | None = 0) -> PulseAutoencoder:
    cfg = cfg or ModelConfig(variant=AUTOENCODER)
    if cfg.variant != AUTOENCODER:
        raise ValueError(f"build_autoencoder needs variant={AUTOENCODER!r}, got {cfg.variant!r}")
    with _seeded(seed):
        return PulseAutoencoder(cfg)


def build_model(cfg: ModelConfig, seed: int | None = 0) -> nn.Module:
    return build_autoencoder(cfg, seed) if cfg.variant == AUTOENCODER else build_estimator(cfg, seed)


# ---------------------------------------------------------------------- losses


def mse_multimodal(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Squared error averaged uniformly over batch, the 4 channels and time."""
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(recon.shape)} vs {tuple(target.shape)}")
    return ((recon - target) ** 2).mean()


def mae_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    pred = pred.reshape(-1)
    target = target.reshape(-1)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


# ------------------------------------------------------------------ accounting


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def layer_table(model: nn.Module, input_shape=None) -> list[dict]:
    """Per-layer params and MACs for one forward pass on a single window.

    conv: C_in/groups * C_out * k * L_out; transposed conv: C_in * C_out * k * L_in;
    dense: in * out per token; attention: Q·K^T and weights·V products on top of
    its four projections (which appear as their own dense rows).
    """
    cfg = model.cfg
    input_shape = tuple(input_shape or (cfg.input_channels, cfg.input_len))
    rows = []
    hooks = []

    def hook(name):
        def fn(mod, inp, out):
            x = inp[0]
            if isinstance(mod, nn.ConvTranspose1d):
                macs = mod.in_channels * mod.out_channels * mod.kernel_size[0] * x.shape[-1]
                kind = "convT"
            elif isinstance(mod, nn.Conv1d):
                macs = mod.in_channels // mod.groups * mod.out_channels * mod.kernel_size[0] * out.shape[-1]
                kind = "conv"
            elif isinstance(mod, nn.Linear):
                tokens = x.numel() // x.shape[-1]
                macs = mod.in_features * mod.out_features * tokens
                kind = "dense"
            elif isinstance(mod, MultiHeadAttention):
                Lq, Lk = x.shape[1], inp[1].shape[1]
                E = mod.num_heads * mod.head_dim
                macs = 2 * Lq * Lk * E
                kind = "attention"
            else:
                return
            own = sum(p.numel() for p in mod.parameters(recurse=False) if p.requires_grad)
            rows.append({"name": name, "kind": kind, "out_shape": tuple(out.shape[1:]), "params": own, "macs": macs})

        return fn

    for name, mod in model.named_modules():
        if isinstance(mod, (nn.Conv1d, nn.ConvTranspose1d, nn.Linear, MultiHeadAttention)):
            hooks.append(mod.register_forward_hook(hook(name)))
    try:
        p = next(model.parameters())
        with torch.no_grad():
            model(torch.zeros((1,) + input_shape, dtype=p.dtype, device=p.device))
    finally:
        for h in hooks:
            h.remove()
    return rows


def count_macs(model: nn.Module, input_shape=None) -> int:
    return sum(r["macs"] for r in layer_table(model, input_shape))


def describe(model: nn.Module) -> str:
    rows = layer_table(model)
    width = max(len(r["name"]) for r in rows)
    lines = [f"{'layer':<{width}}  {'kind':<9} {'output':<12} {'params':>9} {'MACs':>12}"]
    for r in rows:
        shape = "x".join(map(str, r["out_shape"]))
        lines.append(f"{r['name']:<{width}}  {r['kind']:<9} {shape:<12} {r['params']:>9,} {r['macs']:>12,}")
    lines.append(f"{'total':<{width}}  {'':<9} {'':<12} {count_params(model):>9,} {count_macs(model):>12,}")
    return "\n".join(lines)


# ------------------------------------------------------------------ checkpoints

CKPT_FORMAT = "ppgssl-checkpoint"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict
    meta: dict
    stats: NormStats | None = None

    @classmethod
    def from_model(cls, model: nn.Module, meta: dict | None = None, stats: NormStats | None = None):
        state = {k: v.detach().clone().cpu() for k, v in model.state_dict().items()}
        return cls(model.cfg, state, dict(meta or {}), stats)

    def build(self) -> nn.Module:
        model = build_model(self.config, seed=None)
        load_state_checked(model, self.state)
        return model.eval()

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        torch.save(
            {
                "format": CKPT_FORMAT,
                "version": CKPT_VERSION,
                "config": self.config.to_dict(),
                "state": self.state,
                "meta": self.meta,
                "stats": self.stats.to_dict() if self.stats is not None else None,
            },
            tmp,
        )
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        d = torch.load(path, map_location="cpu", weights_only=True)
        if not isinstance(d, dict) or d.get("format") != CKPT_FORMAT:
            raise ValueError(f"{path}: not a checkpoint file")
        if d.get("version") != CKPT_VERSION:
            raise ValueError(f"{path}: checkpoint version {d.get('version')}, expected {CKPT_VERSION}")
        stats = NormStats.from_dict(d["stats"]) if d["stats"] else None
        return cls(ModelConfig.from_dict(d["config"]), d["state"], d["meta"], stats)


def load_state_checked(model: nn.Module, state: dict, prefix: str = ""):
    """Strict load with a readable report of missing, extra and mis-shaped names."""
    own = {k: v for k, v in model.state_dict().items() if k.startswith(prefix)}
    given = {k: v for k, v in state.items() if k.startswith(prefix)}
    missing = sorted(set(own) - set(given))
    extra = sorted(set(given) - set(own))
    shapes = [f"{k}: {tuple(given[k].shape)} vs {tuple(own[k].shape)}" for k in own if k in given and given[k].shape != own[k].shape]
    if missing or extra or shapes:
        raise ConfigMismatchError(f"incompatible weights; missing={missing} extra={extra} shape={shapes}")
    with torch.no_grad():
        for k, v in own.items():
            v.copy_(given[k])


def encoder_mismatch(a: ModelConfig, b: ModelConfig) -> list[str]:
    return [f for f in ENCODER_FIELDS if getattr(a, f) != getattr(b, f)]


def transfer_encoder_weights(src: Checkpoint, dst_cfg: ModelConfig | None = None, head_seed: int = 0) -> PulseEstimator:
    """Fresh estimator (head initialised from ``head_seed``) carrying the
    pre-trained encoder weights of ``src`` bit for bit."""
    dst_cfg = dst_cfg or replace(src.config, variant=ESTIMATOR)
    if dst_cfg.variant != ESTIMATOR:
        raise ConfigMismatchError(f"destination must be an {ESTIMATOR}, got {dst_cfg.variant!r}")
    diff = encoder_mismatch(src.config, dst_cfg)
    if diff:
        detail = ", ".join(f"{f}: {getattr(src.config, f)!r} != {getattr(dst_cfg, f)!r}" for f in diff)
        raise ConfigMismatchError(f"encoder configs differ ({detail})")
    model = build_estimator(dst_cfg, seed=head_seed)
    enc_state = {k: v for k, v in src.state.items() if k.startswith("encoder.")}
    load_state_checked(model, enc_state, prefix="encoder.")
    return model


def encoder_state(model: nn.Module) -> dict:
    return {k: v for k, v in model.state_dict().items() if k.startswith("encoder.")}
