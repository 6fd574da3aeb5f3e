"""Training objectives: overlap suppression, cross-task alignment, concept
supervision, and the standard set-prediction losses, combined by a weighted sum.

Every function returns a scalar torch tensor attached to the autograd graph of
its tensor inputs, so gradients reach model parameters through segment
endpoints, query features, and head logits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import torch

from .errors import ConfigError
from .temporal import pairwise_tiou_t, pairwise_giou_t

_TERM_NAMES = ("giou", "cls", "cap", "ec", "ctca", "osl", "cg")


@dataclass(frozen=True)
class OSLConfig:
    """Overlap-suppression hyperparameters.

    gamma blends ground-truth alignment into the pair weight (gamma <= 0.5 so
    better-aligned predictions are suppressed less), beta is the maximum
    overlap inside the log, epsilon floors the log argument.
    """

    gamma: float = 0.25
    beta: float = 1.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 0.5:
            raise ConfigError(f"osl gamma must be in [0, 0.5], got {self.gamma}")
        if self.beta <= 0.0:
            raise ConfigError(f"osl beta must be positive, got {self.beta}")
        if not 0.0 < self.epsilon < self.beta:
            raise ConfigError(f"osl epsilon must lie in (0, beta), got {self.epsilon}")


@dataclass(frozen=True)
class CTCAConfig:
    """Contrastive-alignment temperature."""

    tau: float = 0.1

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConfigError(f"ctca tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"focal alpha must be in [0, 1], got {self.alpha}")
        if self.gamma < 0.0:
            raise ConfigError(f"focal gamma must be nonnegative, got {self.gamma}")


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights of the combined objective."""

    lambda_giou: float = 2.0
    lambda_cls: float = 1.0
    lambda_cap: float = 1.0
    lambda_ec: float = 0.5
    lambda_ctca: float = 0.5
    lambda_osl: float = 0.5
    lambda_cg: float = 0.5

    def __post_init__(self):
        for name in _TERM_NAMES:
            if getattr(self, f"lambda_{name}") < 0.0:
                raise ConfigError(f"lambda_{name} must be nonnegative")

    def __getitem__(self, term: str) -> float:
        return getattr(self, f"lambda_{term}")


@dataclass
class LossReport:
    """Named raw and weighted loss terms plus the weighted total.

    ``total`` stays a torch scalar so the trainer can call backward on it.
    Serializes to one line of the training log via :meth:`log_line`.
    """

    raw: dict
    weighted: dict
    total: torch.Tensor
    notes: list = field(default_factory=list)

    @staticmethod
    def _scalar(v) -> float:
        return float(v.detach()) if torch.is_tensor(v) else float(v)

    def raw_value(self, term: str) -> float:
        return self._scalar(self.raw[term])

    @property
    def total_value(self) -> float:
        return self._scalar(self.total)

    def log_line(self, step: int) -> str:
        parts = [f"step={step}"]
        parts += [f"{k}={self._scalar(v):.6f}" for k, v in self.raw.items()]
        parts += [f"w_{k}={self._scalar(v):.6f}" for k, v in self.weighted.items()]
        parts.append(f"total={self._scalar(self.total):.6f}")
        return " ".join(parts)


def osl_alpha(p_g: torch.Tensor, cfg: OSLConfig) -> torch.Tensor:
    """Ground-truth-aware pair weight: gamma * P_g + (1 - gamma) * (1 - P_g)."""
    return cfg.gamma * p_g + (1.0 - cfg.gamma) * (1.0 - p_g)


def osl(pred: torch.Tensor, gts: torch.Tensor, cfg: OSLConfig) -> torch.Tensor:
    """Overlap suppression over all ordered prediction pairs.

    For prediction i, P_g(i) = max_j tiou(pred_i, gt_j) sets the weight
    alpha_i; each ordered pair (i, j), i != j, contributes
    -alpha_i * log(max(beta - tiou(pred_i, pred_j), epsilon)). Returns the
    mean over the K*(K-1) ordered pairs, or 0 for fewer than two predictions.
    """
    k = pred.shape[0]
    if k < 2:
        return pred.sum() * 0.0
    if gts.shape[0] == 0:
        p_g = pred.new_zeros(k)
    else:
        p_g = pairwise_tiou_t(pred, gts).max(dim=1).values
    alpha = osl_alpha(p_g, cfg)
    p_o = pairwise_tiou_t(pred, pred)
    penalty = -torch.log(torch.clamp(cfg.beta - p_o, min=cfg.epsilon))
    off_diag = ~torch.eye(k, dtype=torch.bool, device=pred.device)
    pair_loss = alpha[:, None] * penalty
    return pair_loss[off_diag].mean()


def ctca(
    cap_feats: torch.Tensor,
    loc_feats: torch.Tensor,
    matched,
    cfg: CTCAConfig,
) -> torch.Tensor:
    """Contrastive alignment of matched caption/localization query features.

    For each matched index j the caption feature's positive is the j-th
    localization feature; the denominator runs over all K localization
    features. Cosine similarities use a 1e-8 norm floor. Normalized by the
    number of matched indices; empty match set gives 0 with a warning.
    """
    matched = list(matched)
    if not matched:
        warnings.warn("ctca: no matched indices, returning 0", stacklevel=2)
        return cap_feats.sum() * 0.0
    cap_n = cap_feats / cap_feats.norm(dim=1, keepdim=True).clamp_min(1e-8)
    loc_n = loc_feats / loc_feats.norm(dim=1, keepdim=True).clamp_min(1e-8)
    sim = cap_n @ loc_n.T / cfg.tau
    idx = torch.as_tensor(matched, dtype=torch.long, device=cap_feats.device)
    log_probs = torch.log_softmax(sim[idx], dim=1)
    return -log_probs[torch.arange(len(matched)), idx].mean()


def concept_guider_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean per-concept binary cross-entropy between sigmoid(logits) and labels."""
    if logits.shape != labels.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(labels.shape)}")
    return torch.nn.functional.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype))


def focal_cls_loss(
    confidences: torch.Tensor,
    matched,
    cfg: FocalConfig = FocalConfig(),
) -> torch.Tensor:
    """Binary focal loss over query confidences; matched queries are positives.

    Sum over all queries normalized by the number of positives (floor 1).
    """
    c = confidences.clamp(1e-7, 1.0 - 1e-7)
    pos = torch.zeros_like(c, dtype=torch.bool)
    matched = list(matched)
    if matched:
        pos[torch.as_tensor(matched, dtype=torch.long, device=c.device)] = True
    pos_term = -cfg.alpha * (1.0 - c) ** cfg.gamma * torch.log(c)
    neg_term = -(1.0 - cfg.alpha) * c ** cfg.gamma * torch.log(1.0 - c)
    loss = torch.where(pos, pos_term, neg_term).sum()
    return loss / max(len(matched), 1)


def giou_loss(matched_pred: torch.Tensor, matched_gt: torch.Tensor) -> torch.Tensor:
    """Mean of (1 - giou) over aligned prediction/ground-truth pairs; 0 if empty."""
    if matched_pred.shape[0] == 0:
        return matched_pred.sum() * 0.0
    g = pairwise_giou_t(matched_pred, matched_gt).diagonal()
    return (1.0 - g).mean()


def caption_ce(token_logits: torch.Tensor, gt_tokens: torch.Tensor, pad_id: int = 0) -> torch.Tensor:
    """Mean cross-entropy over non-pad caption positions.

    ``token_logits`` are teacher-forced (T, V) scores aligned with the (T,)
    ground-truth ids. An all-pad sequence yields 0 with a warning.
    """
    mask = gt_tokens != pad_id
    if not bool(mask.any()):
        warnings.warn("caption_ce: all-pad target sequence, returning 0", stacklevel=2)
        return token_logits.sum() * 0.0
    return torch.nn.functional.cross_entropy(token_logits[mask], gt_tokens[mask])


def event_count_ce(count_logits: torch.Tensor, gt_count: int) -> torch.Tensor:
    """Categorical cross-entropy for the event count, clamped to the last bin."""
    n_bins = count_logits.shape[-1]
    target = min(max(int(gt_count), 0), n_bins - 1)
    return torch.nn.functional.cross_entropy(
        count_logits.reshape(1, -1),
        torch.tensor([target], device=count_logits.device),
    )


def total_loss(terms, weights: LossWeights, notes=None) -> LossReport:
    """Combine the seven named terms into a weighted total.

    ``terms`` must contain every name in giou/cls/cap/ec/ctca/osl/cg (disabled
    features contribute 0). The report keeps both raw and weighted values.
    """
    missing = [n for n in _TERM_NAMES if n not in terms]
    if missing:
        raise ValueError(f"missing loss terms: {missing}")
    raw, weighted = {}, {}
    total = None
    for name in _TERM_NAMES:
        t = terms[name]
        if not torch.is_tensor(t):
            t = torch.tensor(float(t))
        raw[name] = t
        weighted[name] = weights[name] * t
        total = weighted[name] if total is None else total + weighted[name]
    return LossReport(raw=raw, weighted=weighted, total=total, notes=list(notes or []))
