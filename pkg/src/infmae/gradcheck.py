"""Central finite-difference check of the end-to-end pretraining gradients."""

from dataclasses import dataclass, field

import numpy as np
import torch

from .model import InfMAENet, to_nchw
from .synthetic import infrared_like


@dataclass
class GradCheckReport:
    n_coords: int
    max_rel_error: float
    tolerance: float
    per_tensor: dict = field(default_factory=dict)
    worst: tuple = ()

    @property
    def passed(self):
        return self.n_coords > 0 and self.max_rel_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``.

    Below ``floor`` the central difference is dominated by float64 roundoff
    (about eps * loss / step), so tiny gradients are compared in absolute terms.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def sample_coordinates(named_params, n_coords, rng):
    """At least one coordinate per tensor, the rest spread uniformly over all entries."""
    names = [n for n, _ in named_params]
    sizes = np.array([p.numel() for _, p in named_params])
    picks = {n: {int(rng.integers(s))} for n, s in zip(names, sizes)}
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    while sum(len(v) for v in picks.values()) < min(n_coords, total):
        flat = int(rng.integers(total))
        t = int(np.searchsorted(offsets, flat, side="right") - 1)
        picks[names[t]].add(flat - int(offsets[t]))
    return {n: sorted(v) for n, v in picks.items()}


def finite_difference_check(model_cfg, tolerance=1e-4, n_coords=200, step=1e-5, seed=0,
                            batch_size=2, corrupt=None, only=None):
    """Compare autograd gradients of the masked reconstruction loss with central differences.

    Runs in float64 on synthetic images of ``model_cfg.image_size``.  ``only``
    restricts the check to parameter names with that prefix; ``corrupt`` is
    an optional ``f(name, grad) -> grad`` applied to the analytic gradients.
    """
    if n_coords < 1:
        raise ValueError("gradient check needs at least one coordinate")
    model = InfMAENet(model_cfg, seed=seed).to(torch.float64)
    images = infrared_like(batch_size, model_cfg.image_size, seed=seed)
    if model_cfg.in_channels > 1:
        images = np.repeat(images, model_cfg.in_channels, axis=3)
    plans = model.make_plans(images, rng=seed)
    x = to_nchw(images, dtype=torch.float64)
    named = [(n, p) for n, p in model.pretrain_parameters() if only is None or n.startswith(only)]
    if not named:
        raise ValueError(f"no parameters match {only!r}; refusing to produce an empty report")

    model.zero_grad()
    loss, _ = model.forward_pretrain(x, plans)
    loss.backward()
    analytic = {n: p.grad.detach().clone() for n, p in named}
    if corrupt is not None:
        analytic = {n: corrupt(n, g) for n, g in analytic.items()}

    def loss_value():
        with torch.no_grad():
            return float(model.forward_pretrain(x, plans)[0])

    rng = np.random.default_rng(seed)
    coords = sample_coordinates(named, n_coords, rng)
    per_tensor, worst, count = {}, (0.0, None, None), 0
    for name, p in named:
        flat = p.data.view(-1)
        grad = analytic[name].reshape(-1)
        errs = []
        for k in coords[name]:
            orig = float(flat[k])
            flat[k] = orig + step
            up = loss_value()
            flat[k] = orig - step
            down = loss_value()
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            err = relative_error(float(grad[k]), numeric)
            errs.append(err)
            if err >= worst[0]:
                worst = (err, name, k)
        per_tensor[name] = max(errs)
        count += len(errs)
    return GradCheckReport(
        n_coords=count,
        max_rel_error=max(per_tensor.values()),
        tolerance=tolerance,
        per_tensor=per_tensor,
        worst=worst,
    )
