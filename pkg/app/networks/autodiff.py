"""
Cached forward pass and explicit parameter gradients on top of torch autograd.
"""

from typing import Dict

import torch
from torch import nn
from torch.nn import functional as F

from app.utils.errors import MissingForwardCacheError

_CACHE_ATTR = "_forward_cache"


def forward(net: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """Run net on batch and keep the output graph for a later backward()"""
    out = net(batch)
    object.__setattr__(net, _CACHE_ATTR, out)
    return out


def backward(net: nn.Module, upstream: torch.Tensor) -> Dict[str, torch.Tensor]:
    """
    Gradients of <upstream, last output> with respect to every named parameter.

    Consumes the cache left by forward(); parameters the output does not depend
    on get zero gradients.
    """
    out = getattr(net, _CACHE_ATTR, None)
    if out is None:
        raise MissingForwardCacheError("backward() called without a cached forward pass")
    object.__setattr__(net, _CACHE_ATTR, None)

    names, params = zip(*[(n, p) for n, p in net.named_parameters() if p.requires_grad])
    grads = torch.autograd.grad(out, params, grad_outputs=upstream, allow_unused=True)
    return {
        name: torch.zeros_like(param) if grad is None else grad
        for name, param, grad in zip(names, params, grads)
    }


def softmax_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean categorical cross-entropy of softmax(logits) against integer labels"""
    return F.cross_entropy(logits, labels)


def softmax_cross_entropy_grad(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """d(mean CE)/d(logits) = (softmax - onehot) / batch"""
    probs = torch.softmax(logits, dim=-1)
    onehot = F.one_hot(labels, num_classes=logits.shape[-1]).to(probs.dtype)
    return (probs - onehot) / logits.shape[0]
