"""Adam with per-row skipping for Gaussian attributes."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15


@dataclass
class AdamState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0

    def ensure(self, params: dict[str, torch.Tensor]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = torch.zeros_like(p, memory_format=torch.contiguous_format).detach()
                self.v[name] = torch.zeros_like(p, memory_format=torch.contiguous_format).detach()

    def remap_rows(self, name: str, keep: torch.Tensor, n_new: int) -> None:
        """Keep rows selected by ``keep`` and append ``n_new`` zero rows."""
        for store in (self.m, self.v):
            if name not in store:
                continue
            old = store[name][keep]
            pad = torch.zeros((n_new,) + old.shape[1:], dtype=old.dtype)
            store[name] = torch.cat([old, pad])

    def reset(self, name: str) -> None:
        if name in self.m:
            self.m[name].zero_()
            self.v[name].zero_()


def adam_step(state: AdamState, params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor | None],
              lrs: dict[str, float | torch.Tensor], row_sparse: tuple[str, ...] = ()) -> None:
    """In-place bias-corrected Adam update.

    Tensors whose gradient is missing or all zero are left untouched, moments
    included. For names in ``row_sparse`` the same rule applies per row, so
    Gaussians that did not contribute to the current view keep their state.
    A learning rate may be a tensor broadcasting against one row.
    """
    state.ensure(params)
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1**t
    bc2 = 1.0 - BETA2**t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            lr = lrs.get(name, 0.0)
            if g is None or (not torch.is_tensor(lr) and lr == 0.0):
                continue
            nz = g != 0
            if name in row_sparse and g.dim() > 0:
                rows = nz.reshape(g.shape[0], -1).any(dim=1)
                if not bool(rows.any()):
                    continue
                m = state.m[name][rows]
                v = state.v[name][rows]
                gr = g[rows]
                m.mul_(BETA1).add_(gr, alpha=1 - BETA1)
                v.mul_(BETA2).addcmul_(gr, gr, value=1 - BETA2)
                state.m[name][rows] = m
                state.v[name][rows] = v
                upd = (m / bc1) / (torch.sqrt(v / bc2) + EPS)
                p[rows] = p[rows] - lr * upd
            else:
                if not bool(nz.any()):
                    continue
                m, v = state.m[name], state.v[name]
                m.mul_(BETA1).add_(g, alpha=1 - BETA1)
                v.mul_(BETA2).addcmul_(g, g, value=1 - BETA2)
                p.sub_(lr * (m / bc1) / (torch.sqrt(v / bc2) + EPS))
