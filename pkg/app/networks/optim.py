from typing import Dict, Iterable, Tuple

import torch

from app.models.neural import AdamState


def make_adam(
    params: Iterable[torch.nn.Parameter],
    step_size: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    params = list(params)
    optimizer = torch.optim.Adam(params, lr=step_size, betas=(beta1, beta2), eps=eps)
    return AdamState(step_size=step_size, beta1=beta1, beta2=beta2, eps=eps, optimizer=optimizer)


def adam_step(
    state: AdamState,
    params: Dict[str, torch.nn.Parameter],
    grads: Dict[str, torch.Tensor],
) -> Tuple[Dict[str, torch.nn.Parameter], AdamState]:
    """One bias-corrected Adam update of params from explicit gradients"""
    if state.optimizer is None:
        state = make_adam(params.values(), state.step_size, state.beta1, state.beta2, state.eps)
    for name, param in params.items():
        grad = grads.get(name)
        param.grad = torch.zeros_like(param) if grad is None else grad.detach().clone()
    state.optimizer.step()
    for param in params.values():
        param.grad = None
    return params, state
