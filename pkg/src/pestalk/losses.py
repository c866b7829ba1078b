"""Training objectives: position, motion, classification and disentanglement losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import BadDims, BadLabel, BadPairing, TooShort, ZeroVector


@dataclass(frozen=True)
class LossWeights:
    position: float = 1.0
    motion: float = 0.5
    classification: float = 0.1
    disentanglement: float = 0.01
    margin: float = 0.0  # optional pairwise-margin auxiliary

    def __post_init__(self):
        if min(self.position, self.motion, self.classification, self.disentanglement, self.margin) < 0:
            raise ValueError("loss weights must be non-negative")


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    coeffs = getattr(x, "coeffs", x)
    return torch.as_tensor(coeffs, dtype=torch.float64)


def _batched(pred, gt):
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    if pred.shape != gt.shape:
        raise BadDims(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ in shape")
    if pred.dim() == 2:
        pred, gt = pred.unsqueeze(0), gt.unsqueeze(0)
    return pred, gt


def position_loss(pred, gt) -> Tensor:
    """Mean over samples and frames of the squared L2 norm of the per-frame error."""
    pred, gt = _batched(pred, gt)
    return ((pred - gt) ** 2).sum(dim=-1).mean()


def motion_loss(pred, gt) -> Tensor:
    """Same as :func:`position_loss` on first-order temporal differences."""
    pred, gt = _batched(pred, gt)
    if pred.shape[-2] < 2:
        raise TooShort("motion loss needs at least two frames")
    dp, dg = pred.diff(dim=-2), gt.diff(dim=-2)
    return ((dp - dg) ** 2).sum(dim=-1).mean()


def classification_loss(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy."""
    logits = _as_tensor(logits)
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    M = logits.shape[-1]
    if labels.numel() != logits.shape[0]:
        raise BadDims(f"{labels.numel()} labels for {logits.shape[0]} logit rows")
    if labels.numel() and (labels.min() < 0 or labels.max() >= M):
        raise BadLabel(f"labels must lie in [0, {M})")
    return F.cross_entropy(logits, labels)


class Margin(nn.Module):
    """Learnable hinge margin, clamped at zero."""

    def __init__(self, init: float = 1.0):
        super().__init__()
        self.raw = nn.Parameter(torch.tensor(float(init)))

    def forward(self) -> Tensor:
        return self.raw.clamp(min=0.0)


def _check_pairs(c_a, c_b, e_a, e_b):
    if c_a.shape != c_b.shape or e_a.shape != e_b.shape or c_a.shape[0] != e_a.shape[0]:
        raise BadPairing("neutral and emotional features are not paired one-to-one")


def pairwise_margin_loss(zc_neutral, zc_emotion, ze_neutral, ze_emotion, delta=1.0, psi: float = 2.0) -> Tensor:
    """Pull pooled content features of each pair together (psi-norm) and push
    pooled emotion features at least ``delta`` apart; averaged over pairs."""
    zc_n, zc_e, ze_n, ze_e = (_as_tensor(t) for t in (zc_neutral, zc_emotion, ze_neutral, ze_emotion))
    zc_n, zc_e, ze_n, ze_e = (t.unsqueeze(0) if t.dim() == 1 else t for t in (zc_n, zc_e, ze_n, ze_e))
    _check_pairs(zc_n, zc_e, ze_n, ze_e)
    content = torch.linalg.vector_norm(zc_n - zc_e, ord=psi, dim=-1)
    emotion = F.relu(delta - torch.linalg.vector_norm(ze_n - ze_e, dim=-1))
    return (content + emotion).mean()


def _cos(a: Tensor, b: Tensor) -> Tensor:
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise ZeroVector("zero-norm pooled feature in disentanglement loss")
    return (a * b).sum(dim=-1) / (na * nb)


def disentanglement_loss(E, E_hat, C, C_hat, orientation: str = "corrected") -> Tensor:
    """Pooled-cosine disentanglement over content-matched pairs.

    ``corrected``: ``1 - mean[cos(C, C_hat) - cos(E, E_hat)]`` (content aligned,
    emotion separated). ``literal``: ``1 - mean[cos(E, E_hat) - cos(C, C_hat)]``.
    """
    E, E_hat, C, C_hat = (_as_tensor(t) for t in (E, E_hat, C, C_hat))
    E, E_hat, C, C_hat = (t.unsqueeze(0) if t.dim() == 1 else t for t in (E, E_hat, C, C_hat))
    _check_pairs(C, C_hat, E, E_hat)
    gap = _cos(C, C_hat) - _cos(E, E_hat)
    if orientation == "corrected":
        return 1.0 - gap.mean()
    if orientation == "literal":
        return 1.0 + gap.mean()
    raise ValueError(f"unknown orientation {orientation!r}")


COMPONENTS = ("L_pos", "L_mot", "L_cls", "L_dis")


def total_loss(components: dict, weights: LossWeights = LossWeights()):
    """Weighted sum; returns ``(total, log)`` where ``log`` holds float values."""
    w = {"L_pos": weights.position, "L_mot": weights.motion,
         "L_cls": weights.classification, "L_dis": weights.disentanglement,
         "L_margin": weights.margin}
    total = sum(w[k] * v for k, v in components.items() if w.get(k, 0.0) != 0.0)
    if not isinstance(total, Tensor):
        total = torch.tensor(float(total), dtype=torch.float64)
    log = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in components.items()}
    log["L_total"] = float(total.detach())
    return total, log
