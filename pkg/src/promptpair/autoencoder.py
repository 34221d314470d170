"""Latent codec: a small deterministic conv autoencoder, pretrained once on
the toy dataset and frozen for all downstream use.

A pixel-shuffle identity codec is provided for debugging the tuning math
independent of codec quality: its round trip is exact by construction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArtifactError, NumericalError
from .fingerprint import freeze, module_fingerprint

__all__ = [
    "AutoencoderConfig",
    "AETrainConfig",
    "ConvAutoencoder",
    "IdentityCodec",
    "train_autoencoder",
    "save_codec",
    "load_codec",
]

CODEC_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AutoencoderConfig:
    image_size: int = 64
    in_channels: int = 3
    latent_channels: int = 4
    base_width: int = 32

    @property
    def latent_size(self) -> int:
        return self.image_size // 4


@dataclass(frozen=True)
class AETrainConfig:
    steps: int = 1500
    batch_size: int = 32
    learning_rate: float = 2e-3
    seed: int = 0
    holdout_fraction: float = 0.1
    target_l1: float = 0.05


def _gn(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class ConvAutoencoder(nn.Module):
    """64x64x3 image <-> 16x16x4 latent; encoder output and decoder output
    are both tanh-bounded so latents and pixels live in (-1, 1)."""

    def __init__(self, cfg: AutoencoderConfig = AutoencoderConfig()):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        self.enc = nn.Sequential(
            nn.Conv2d(cfg.in_channels, w, 3, stride=2, padding=1),
            _gn(w),
            nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            _gn(2 * w),
            nn.SiLU(),
            nn.Conv2d(2 * w, cfg.latent_channels, 3, padding=1),
            nn.Tanh(),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(cfg.latent_channels, 2 * w, 3, padding=1),
            _gn(2 * w),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, w, 3, padding=1),
            _gn(w),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(w, w, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(w, cfg.in_channels, 3, padding=1),
            nn.Tanh(),
        )

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.cfg.latent_channels, self.cfg.latent_size, self.cfg.latent_size)

    @property
    def image_size(self) -> int:
        return self.cfg.image_size

    def _check_image(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        expected = (self.cfg.in_channels, self.cfg.image_size, self.cfg.image_size)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"image shape {tuple(x.shape[1:])} != {expected}")
        return x, squeeze

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        x, squeeze = self._check_image(x)
        z = self.enc(x)
        return z[0] if squeeze else z

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        squeeze = z.ndim == 3
        if squeeze:
            z = z.unsqueeze(0)
        if tuple(z.shape[1:]) != self.latent_shape:
            raise ValueError(f"latent shape {tuple(z.shape[1:])} != {self.latent_shape}")
        x = self.dec(z)
        return x[0] if squeeze else x


class IdentityCodec(nn.Module):
    """Exact invertible codec via pixel unshuffle (debug mode)."""

    def __init__(self, image_size: int = 64, in_channels: int = 3, factor: int = 4):
        super().__init__()
        self.cfg = AutoencoderConfig(
            image_size=image_size,
            in_channels=in_channels,
            latent_channels=in_channels * factor * factor,
            base_width=0,
        )
        self.factor = factor

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        s = self.cfg.image_size // self.factor
        return (self.cfg.latent_channels, s, s)

    @property
    def image_size(self) -> int:
        return self.cfg.image_size

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        z = F.pixel_unshuffle(x, self.factor)
        return z[0] if squeeze else z

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        squeeze = z.ndim == 3
        if squeeze:
            z = z.unsqueeze(0)
        x = F.pixel_shuffle(z, self.factor)
        return x[0] if squeeze else x


def train_autoencoder(
    images: torch.Tensor,
    cfg: AutoencoderConfig = AutoencoderConfig(),
    train_cfg: AETrainConfig = AETrainConfig(),
    log_every: int = 0,
) -> tuple[ConvAutoencoder, dict]:
    """Pretrain the codec on (N,3,H,W) images in [-1,1]; returns the frozen
    model plus a report with the held-out L1 and loss history.

    Raises NumericalError when the held-out reconstruction stays above the
    configured target (non-convergence)."""
    if images.ndim != 4 or images.shape[0] < 1000:
        raise ValueError(f"need at least 1000 images as a (N,3,H,W) tensor, got {tuple(images.shape)}")
    torch.manual_seed(train_cfg.seed)
    model = ConvAutoencoder(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    gen = torch.Generator().manual_seed(train_cfg.seed + 1)

    n_hold = max(1, int(images.shape[0] * train_cfg.holdout_fraction))
    hold, train = images[:n_hold], images[n_hold:]

    history: list[float] = []
    for step in range(train_cfg.steps):
        idx = torch.randint(0, train.shape[0], (train_cfg.batch_size,), generator=gen)
        batch = train[idx]
        recon = model.decode(model.encode(batch))
        loss = (recon - batch).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss))
        if log_every and (step + 1) % log_every == 0:
            print(f"[ae] step {step + 1}/{train_cfg.steps} l1={loss:.4f}")

    model.eval()
    with torch.no_grad():
        held_l1 = 0.0
        for i in range(0, hold.shape[0], train_cfg.batch_size):
            chunk = hold[i : i + train_cfg.batch_size]
            held_l1 += float((model.decode(model.encode(chunk)) - chunk).abs().mean()) * chunk.shape[0]
        held_l1 /= hold.shape[0]
    if held_l1 > train_cfg.target_l1:
        raise NumericalError(
            f"autoencoder failed to converge: held-out L1 {held_l1:.4f} > {train_cfg.target_l1} "
            f"(last 5 train losses: {[round(v, 4) for v in history[-5:]]})"
        )
    fingerprint = freeze(model)
    report = {"heldout_l1": held_l1, "fingerprint": fingerprint, "history": history}
    return model, report


def save_codec(model: nn.Module, path: str | Path) -> str:
    kind = "identity" if isinstance(model, IdentityCodec) else "conv"
    fp = module_fingerprint(model)
    payload = {
        "format_version": CODEC_FORMAT_VERSION,
        "kind": kind,
        "config": asdict(model.cfg),
        "factor": getattr(model, "factor", None),
        "latent_shape": list(model.latent_shape),
        "state_dict": model.state_dict(),
        "fingerprint": fp,
    }
    torch.save(payload, Path(path))
    return fp


def load_codec(path: str | Path) -> tuple[nn.Module, str]:
    try:
        payload = torch.load(Path(path), weights_only=False)
    except Exception as exc:
        raise ArtifactError(f"cannot read codec checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CODEC_FORMAT_VERSION:
        raise ArtifactError(f"codec checkpoint version {payload.get('format_version')!r} unsupported")
    cfg_d = dict(payload["config"])
    if payload["kind"] == "identity":
        model = IdentityCodec(cfg_d["image_size"], cfg_d["in_channels"], payload["factor"])
    else:
        model = ConvAutoencoder(AutoencoderConfig(**cfg_d))
    model.load_state_dict(payload["state_dict"])
    fp = freeze(model)
    if fp != payload["fingerprint"]:
        raise ArtifactError(f"codec checkpoint {path} fingerprint mismatch (corrupt weights)")
    return model, fp
