"""Mutable training state shared by the optimizer, checkpoints and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .appearance import AppearanceNet
from .medium import MediumNet
from .optim.adam import AdamState
from .scene import GaussianScene

GAUSSIAN_GROUPS = ("mu", "quat", "log_scale", "raw_opacity", "sh")


@dataclass
class TrainState:
    scene: GaussianScene
    appearance: AppearanceNet
    medium: MediumNet
    adam: AdamState = field(default_factory=AdamState)
    iteration: int = 0
    use_medium: bool = True

    @property
    def dtype(self) -> torch.dtype:
        return self.scene.dtype

    def named_params(self) -> dict[str, torch.Tensor]:
        """Every optimised tensor under a stable name (checkpoint order)."""
        out = {f"gaussian.{n}": getattr(self.scene, n) for n in GAUSSIAN_GROUPS}
        out.update({f"appearance.{n}": p for n, p in self.appearance.named_parameters()})
        med = self.medium
        out.update({f"medium.{n}": getattr(med, n) for n in med.BACKSCATTER + med.ATTENUATION})
        return out

    def set_gaussian(self, name: str, value: torch.Tensor) -> None:
        setattr(self.scene, name, value)
