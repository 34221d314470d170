"""Content hashes for frozen-parameter contracts.

A fingerprint changes iff any weight changes; trainers record fingerprints
before tuning and assert them unchanged afterwards.
"""

from __future__ import annotations

import hashlib

import torch
from torch import nn

__all__ = ["tensor_fingerprint", "module_fingerprint", "freeze"]


def tensor_fingerprint(t: torch.Tensor) -> str:
    h = hashlib.sha256()
    h.update(str(t.dtype).encode())
    h.update(str(tuple(t.shape)).encode())
    h.update(t.detach().contiguous().cpu().numpy().tobytes())
    return h.hexdigest()


def module_fingerprint(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor_fingerprint(tensor).encode())
    return h.hexdigest()


def freeze(module: nn.Module) -> str:
    """Disable gradients, switch to eval mode, return the fingerprint."""
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module_fingerprint(module)
