"""
AdamW optimizer with decoupled weight decay
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor
from ..utils.exceptions import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamWState:
    """Moment estimates and hyperparameters for one parameter group."""

    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    first_moments: List[Optional[np.ndarray]] = field(default_factory=list)
    second_moments: List[Optional[np.ndarray]] = field(default_factory=list)

    def ensure_slots(self, params: Sequence[Tensor]) -> None:
        while len(self.first_moments) < len(params):
            self.first_moments.append(None)
            self.second_moments.append(None)
        for index, param in enumerate(params):
            m = self.first_moments[index]
            if m is None:
                self.first_moments[index] = np.zeros_like(param.data)
                self.second_moments[index] = np.zeros_like(param.data)
            elif m.shape != param.shape:
                raise ShapeError("adamw_step", param.shape, m.shape, detail=f"moment slot {index}")


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamWState,
    learning_rate: Optional[float] = None,
) -> bool:
    """
    Apply one bias-corrected Adam update plus decoupled weight decay in place.

    Args:
        params: Parameter tensors of one group
        grads: One gradient per parameter (None leaves it untouched)
        state (AdamWState): Group state; its step counter always advances
        learning_rate: Override for this step (warmup schedules)

    Returns:
        bool: False when the step was rejected for a non-finite gradient
    """
    if len(params) != len(grads):
        raise ValueError(f"adamw_step: {len(params)} parameters but {len(grads)} gradients")
    for param, grad in zip(params, grads):
        if grad is not None and grad.shape != param.shape:
            raise ShapeError("adamw_step", param.shape, grad.shape)

    state.ensure_slots(params)
    state.step += 1

    if any(grad is not None and not np.all(np.isfinite(grad)) for grad in grads):
        logger.warning(f"⚠️ Non-finite gradient at step {state.step}; update skipped for this group")
        return False

    lr = state.learning_rate if learning_rate is None else learning_rate
    beta1, beta2 = state.beta1, state.beta2
    bias_correction1 = 1 - beta1 ** state.step
    bias_correction2 = 1 - beta2 ** state.step

    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            continue
        m = state.first_moments[index]
        v = state.second_moments[index]

        if state.weight_decay != 0:
            param.data *= 1 - lr * state.weight_decay

        m[...] = beta1 * m + (1 - beta1) * grad
        v[...] = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / bias_correction1
        v_hat = v / bias_correction2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)

    return True


ParamGroup = Dict[str, Any]


class AdamW:
    """
    Optimizer over one or more parameter groups.

    Parameters are deduplicated by identity, so a layer block shared by every
    encoder layer is updated once per step.
    """

    def __init__(
        self,
        params: Union[Iterable[Tensor], Iterable[ParamGroup]],
        lr: float = 5e-5,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        warmup_steps: int = 0,
    ):
        params = list(params)
        groups = params if params and isinstance(params[0], dict) else [{"params": params}]

        self.warmup_steps = int(warmup_steps)
        self.param_groups: List[ParamGroup] = []
        seen = set()
        for group in groups:
            unique = []
            for param in group["params"]:
                if id(param) not in seen:
                    seen.add(id(param))
                    unique.append(param)
            state = AdamWState(
                learning_rate=group.get("lr", lr),
                beta1=group.get("betas", betas)[0],
                beta2=group.get("betas", betas)[1],
                epsilon=group.get("eps", eps),
                weight_decay=group.get("weight_decay", weight_decay),
            )
            self.param_groups.append({"params": unique, "state": state})

    @property
    def step_count(self) -> int:
        return self.param_groups[0]["state"].step if self.param_groups else 0

    def scheduled_lr(self, base_lr: float, step: int) -> float:
        if self.warmup_steps <= 0:
            return base_lr
        return base_lr * min(1.0, step / self.warmup_steps)

    def zero_grad(self) -> None:
        for group in self.param_groups:
            for param in group["params"]:
                param.grad = None

    def step(self) -> bool:
        """Update every group from the parameters' ``grad`` fields."""
        applied = True
        for group in self.param_groups:
            state: AdamWState = group["state"]
            lr = self.scheduled_lr(state.learning_rate, state.step + 1)
            grads = [param.grad for param in group["params"]]
            applied &= adamw_step(group["params"], grads, state, learning_rate=lr)
        return applied

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays: Dict[str, np.ndarray] = {}
        for g, group in enumerate(self.param_groups):
            state: AdamWState = group["state"]
            arrays[f"group{g}.step"] = np.asarray(state.step, dtype=np.int64)
            for i, (m, v) in enumerate(zip(state.first_moments, state.second_moments)):
                if m is not None:
                    arrays[f"group{g}.m{i}"] = m
                    arrays[f"group{g}.v{i}"] = v
        return arrays

    def save_state(self, path: Union[str, Path]) -> None:
        """Write moments and step counters as an ``.npz`` sidecar."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as handle:
            np.savez(handle, **self.state_arrays())
        tmp.replace(path)

    def load_state(self, path: Union[str, Path]) -> None:
        with np.load(path) as archive:
            for g, group in enumerate(self.param_groups):
                state: AdamWState = group["state"]
                state.step = int(archive[f"group{g}.step"])
                state.ensure_slots(group["params"])
                for i in range(len(group["params"])):
                    key = f"group{g}.m{i}"
                    if key in archive:
                        state.first_moments[i] = archive[key].copy()
                        state.second_moments[i] = archive[f"group{g}.v{i}"].copy()
