"""Loss terms and their weighted combination.

All classification losses take softmax probabilities (not logits) and clamp
inside the log, so a saturated softmax cannot produce an infinite loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn

from .data import LOG_EPS
from .errors import ConfigError, NumericalError

SOURCE_ONLY = "source-only"
RELATIVE_ROTATION = "relative-rotation"
ABSOLUTE_ROTATION = "absolute-rotation"
GRL = "grl"
MMD = "mmd"
AFN = "afn"

METHODS = (SOURCE_ONLY, RELATIVE_ROTATION, ABSOLUTE_ROTATION, GRL, MMD, AFN)
PRETEXT_METHODS = (RELATIVE_ROTATION, ABSOLUTE_ROTATION)
ADAPT_METHODS = (GRL, MMD, AFN)

PROB_TOL = 1e-4


def _check_probs(probs: torch.Tensor) -> None:
    if probs.dim() != 2:
        raise ValueError(f"expected (N, C) probabilities, got shape {tuple(probs.shape)}")
    if probs.shape[0] == 0:
        raise ValueError("empty probability batch")
    sums = probs.sum(dim=1)
    worst = (sums - 1.0).abs().max().item()
    if worst > PROB_TOL:
        raise NumericalError(
            f"probability rows do not sum to 1 (worst deviation {worst:.3g}); "
            "pass softmax outputs, not logits")
    if probs.min().item() < -PROB_TOL:
        raise NumericalError("negative probability encountered")


def _mean_cross_entropy(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    _check_probs(probs)
    if labels.shape[0] != probs.shape[0]:
        raise ValueError(
            f"label batch {labels.shape[0]} does not match probabilities {probs.shape[0]}")
    if labels.min().item() < 0 or labels.max().item() >= probs.shape[1]:
        raise ValueError("label outside [0, C)")
    picked = probs[torch.arange(probs.shape[0]), labels]
    return -torch.log(picked.clamp(min=LOG_EPS)).mean()


def main_loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of the object classifier on labeled (source) data."""
    return _mean_cross_entropy(probs, labels)


def pretext_loss(source_probs: torch.Tensor | None, source_z: torch.Tensor | None,
                 target_probs: torch.Tensor | None = None,
                 target_z: torch.Tensor | None = None) -> torch.Tensor:
    """Rotation loss: per-domain mean cross-entropies, summed.

    Either domain may be absent (pass None for both of its arguments); at
    least one domain is required.
    """
    if source_probs is None and target_probs is None:
        raise ValueError("pretext loss needs at least one domain")
    total = None
    for probs, z in ((source_probs, source_z), (target_probs, target_z)):
        if probs is None:
            continue
        if z is None:
            raise ValueError("probabilities given without rotation labels")
        term = _mean_cross_entropy(probs, z)
        total = term if total is None else total + term
    return total


def entropy_loss(probs: torch.Tensor) -> torch.Tensor:
    """Mean Shannon entropy of predicted class distributions.

    Minimizing this sharpens predictions on unlabeled data.
    """
    _check_probs(probs)
    log_p = torch.log(probs.clamp(min=LOG_EPS))
    return -(probs * log_p).sum(dim=1).mean()


def mmd_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Biased squared maximum mean discrepancy with a Gaussian kernel.

    k(a, b) = exp(-|a - b|^2 / bandwidth), bandwidth set by the median
    heuristic: the median of squared pairwise distances over the pooled
    sample, diagonal excluded.
    """
    if x.dim() != 2 or y.dim() != 2:
        raise ValueError("mmd_loss expects (N, D) feature matrices")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("mmd_loss needs at least 2 samples per domain")
    pooled = torch.cat([x, y], dim=0)
    d2 = torch.cdist(pooled, pooled, p=2.0).pow(2)
    n = pooled.shape[0]
    off_diag = d2[~torch.eye(n, dtype=torch.bool, device=d2.device)]
    # quantile interpolates between the two middle values, matching the
    # conventional median for the even-sized off-diagonal set
    bandwidth = torch.quantile(off_diag.detach().to(torch.float64), 0.5).to(d2.dtype)
    if bandwidth.item() <= 0:
        bandwidth = torch.ones_like(bandwidth)
    k = torch.exp(-d2 / bandwidth)
    nx, ny = x.shape[0], y.shape[0]
    k_xx = k[:nx, :nx].mean()
    k_yy = k[nx:, nx:].mean()
    k_xy = k[:nx, nx:].mean()
    return k_xx + k_yy - 2.0 * k_xy


class _ReverseGradient(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return -ctx.lam * grad_output, None


def reverse_gradient(x: torch.Tensor, lam: float) -> torch.Tensor:
    """Identity in the forward pass; scales the gradient by -lam in the backward."""
    return _ReverseGradient.apply(x, lam)


def grl_lambda(progress: float, gamma: float = 10.0) -> float:
    """Adversarial weight schedule 2/(1+exp(-gamma*p)) - 1 over progress p in [0,1]."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"training progress {progress} outside [0, 1]")
    return 2.0 / (1.0 + math.exp(-gamma * progress)) - 1.0


class DomainDiscriminator(nn.Module):
    """Two-way domain classifier applied to pooled fused features."""

    def __init__(self, in_features: int, hidden: int = 100):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_features, hidden), nn.ReLU(), nn.Linear(hidden, 2))

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.net(feats)


def grl_adapt(pooled: torch.Tensor, domains: torch.Tensor,
              discriminator: DomainDiscriminator, progress: float) -> torch.Tensor:
    """Domain-confusion loss: discriminator CE behind a gradient-reversal layer.

    domains holds 0 for source rows and 1 for target rows.
    """
    reversed_feats = reverse_gradient(pooled, grl_lambda(progress))
    logits = discriminator(reversed_feats)
    return nn.functional.cross_entropy(logits, domains)


def afn_adapt(hidden: torch.Tensor, delta_r: float = 1.0) -> torch.Tensor:
    """Stepwise feature-norm loss: push each row's L2 norm up by delta_r.

    The target norm is the detached current norm plus delta_r, so the loss
    value is identically delta_r**2 while the gradient still grows the norms.
    """
    if delta_r <= 0:
        raise ConfigError(f"norm step delta_r must be positive, got {delta_r}")
    if hidden.dim() != 2:
        raise ValueError("afn_adapt expects (N, D) feature matrices")
    norms = hidden.norm(p=2, dim=1)
    if norms.detach().min().item() == 0.0:
        raise NumericalError("degenerate zero feature row in norm adaptation")
    target = norms.detach() + delta_r
    return ((norms - target) ** 2).mean()


@dataclass
class LossReport:
    """Scalar snapshot of one optimization step's loss terms."""

    method: str
    main: float
    pretext: float
    entropy: float
    adapt: float
    lambda_p: float
    lambda_ent: float
    lambda_adapt: float
    total: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LossReport":
        return cls(**json.loads(text))


def combine(method: str, main: torch.Tensor,
            pretext: torch.Tensor | None = None,
            entropy: torch.Tensor | None = None,
            adapt: torch.Tensor | None = None,
            lambda_p: float = 1.0, lambda_ent: float = 0.1,
            lambda_adapt: float = 1.0) -> tuple[torch.Tensor, LossReport]:
    """Weighted total loss plus a serializable report.

    Which terms are allowed depends on the method: rotation methods carry a
    pretext term, feature-alignment methods carry an adapt term, and only
    source-only forbids the entropy term (it has no unlabeled data to apply
    it to).
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    if pretext is not None and method not in PRETEXT_METHODS:
        raise ConfigError(f"method {method!r} does not take a pretext loss")
    if adapt is not None and method not in ADAPT_METHODS:
        raise ConfigError(f"method {method!r} does not take an adaptation loss")
    if entropy is not None and method == SOURCE_ONLY:
        raise ConfigError("source-only training has no unlabeled data for the entropy term")
    total = main
    if pretext is not None:
        total = total + lambda_p * pretext
    if entropy is not None:
        total = total + lambda_ent * entropy
    if adapt is not None:
        total = total + lambda_adapt * adapt
    report = LossReport(
        method=method,
        main=float(main.detach()),
        pretext=0.0 if pretext is None else float(pretext.detach()),
        entropy=0.0 if entropy is None else float(entropy.detach()),
        adapt=0.0 if adapt is None else float(adapt.detach()),
        lambda_p=lambda_p if pretext is not None else 0.0,
        lambda_ent=lambda_ent if entropy is not None else 0.0,
        lambda_adapt=lambda_adapt if adapt is not None else 0.0,
        total=float(total.detach()),
    )
    return total, report
