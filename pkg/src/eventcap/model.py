"""Encoder-decoder with role-specific query banks, reference-window cross
attention, and the four task heads (localization, captioning, concepts, event
count).

Wiring rules that the tests pin down:
  - loc_embed and cap_embed are independent tables (one shared table when
    role_specific is off); decoder layer weights are shared across roles, but
    self-attention never mixes roles.
  - Both roles read the same locality bias per layer; the caption stream
    consumes it detached, and caption losses receive detached segments, so a
    caption-side loss has exactly zero gradient on loc_embed and vice versa.
  - Reference windows live in logit space; the localization stream adds a
    residual (zero-initialized) update after every layer.
  - No dropout anywhere, all parameter init flows through one instance-owned
    generator, so fixed seed means bit-identical forwards in single-threaded
    mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import torch
from torch import nn

from .errors import ConfigError
from .text import BOS_ID, EOS_ID, PAD_ID

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class ModelConfig:
    d_in: int = 128
    d_model: int = 256
    n_queries: int = 10
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 8
    ffn_dim: Optional[int] = None
    max_events: int = 10
    vocab_size: int = 64
    max_caption_len: int = 20
    n_concepts: int = 30
    n_frames: int = 100
    role_specific: bool = True

    def __post_init__(self):
        if self.n_queries < 1:
            raise ConfigError("n_queries must be >= 1")
        if self.n_dec_layers < 1:
            raise ConfigError("n_dec_layers must be >= 1")
        if self.n_enc_layers < 0:
            raise ConfigError("n_enc_layers must be >= 0")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.d_model % 2 != 0:
            raise ConfigError("d_model must be even for sinusoidal positions")
        for name in ("d_in", "max_events", "n_concepts", "n_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the 4 specials plus content")
        if self.max_caption_len < 2:
            raise ConfigError("max_caption_len must be >= 2")

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.d_model


class QueryBank(nn.Module):
    """Learnable query tables plus shared reference windows.

    Role-specific mode keeps two independent K x d tables; otherwise a single
    table serves both roles (the ablation baseline). Reference centers and
    widths are stored pre-squash; sigmoid maps them into (0, 1). Centers
    start uniformly spaced at (2i+1)/(2K), widths at 1/K.
    """

    def __init__(self, n_queries: int, d_model: int, role_specific: bool = True):
        super().__init__()
        self.n_queries = n_queries
        self.role_specific = role_specific
        self._loc = nn.Parameter(torch.empty(n_queries, d_model))
        if role_specific:
            self._cap = nn.Parameter(torch.empty(n_queries, d_model))
        else:
            self._cap = None
        self.ref_logits = nn.Parameter(torch.empty(n_queries, 2))

    @property
    def loc_embed(self) -> torch.Tensor:
        return self._loc

    @property
    def cap_embed(self) -> torch.Tensor:
        return self._cap if self.role_specific else self._loc

    def initial_refs(self) -> torch.Tensor:
        return torch.sigmoid(self.ref_logits)

    def reset(self, generator: torch.Generator) -> None:
        self._loc.data.normal_(0.0, 1.0, generator=generator)
        if self._cap is not None:
            self._cap.data.normal_(0.0, 1.0, generator=generator)
        k = self.n_queries
        centers = (2.0 * torch.arange(k, dtype=torch.float32) + 1.0) / (2.0 * k)
        widths = torch.full((k,), 1.0 / k)
        init = torch.stack([centers, widths], dim=1)
        self.ref_logits.data.copy_(torch.log(init) - torch.log1p(-init))


@dataclass
class DecoderOutput:
    """Per-role refined query features; row i of both tensors shares ref i."""

    loc_feats: torch.Tensor
    cap_feats: torch.Tensor
    refined_refs: torch.Tensor
    refined_ref_logits: torch.Tensor
    attn_records: List[Dict[str, torch.Tensor]] = field(default_factory=list)


@dataclass
class ForwardOutput:
    context: torch.Tensor
    pad_mask: Optional[torch.Tensor]
    dec: DecoderOutput
    segments: torch.Tensor
    confidences: torch.Tensor
    concept_probs: torch.Tensor
    count_dist: torch.Tensor


@dataclass
class PredictionSet:
    segments: torch.Tensor
    confidences: torch.Tensor
    caption_tokens: List[List[int]]
    concept_probs: torch.Tensor
    count_dist: torch.Tensor


def sinusoidal_positions(n: int, d: int, device=None) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32, device=device)[:, None]
    idx = torch.arange(0, d, 2, dtype=torch.float32, device=device)[None, :]
    angle = pos / torch.pow(10000.0, idx / d)
    pe = torch.zeros(n, d, device=device)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe


def frame_positions(n: int, device=None) -> torch.Tensor:
    """Normalized frame centers in (0, 1)."""
    return (torch.arange(n, dtype=torch.float32, device=device) + 0.5) / n


class BiasedDecoderLayer(nn.Module):
    """Post-norm block: within-role self-attention, biased cross-attention, FFN.

    The locality bias enters cross-attention as an additive float mask, so
    softmax rows stay normalized over unmasked frames.
    """

    def __init__(self, d_model: int, n_heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(d_model, n_heads, dropout=0.0, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(d_model, n_heads, dropout=0.0, batch_first=True)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, d_model)
        )

    def forward(self, x, context, bias, key_padding_mask):
        sa, _ = self.self_attn(x, x, x, need_weights=False)
        x = self.norm1(x + sa)
        # fold padding into the float bias: MultiheadAttention wants a single
        # mask dtype, and a (K, F) float mask broadcasts over heads
        if key_padding_mask is not None:
            bias = bias.masked_fill(key_padding_mask[0][None, :], float("-inf"))
        ca, weights = self.cross_attn(
            x, context, context, attn_mask=bias, need_weights=True
        )
        x = self.norm2(x + ca)
        x = self.norm3(x + self.ffn(x))
        return x, weights


class EventCaptionModel(nn.Module):
    """Full architecture; one video per forward (batch handling is the
    trainer's job, losses are averaged over videos)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.input_proj = nn.Linear(cfg.d_in, d)
        self.enc_layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d, cfg.n_heads, cfg.ffn_width, dropout=0.0, batch_first=True
            )
            for _ in range(cfg.n_enc_layers)
        )
        self.bank = QueryBank(cfg.n_queries, d, cfg.role_specific)
        self.dec_layers = nn.ModuleList(
            BiasedDecoderLayer(d, cfg.n_heads, cfg.ffn_width)
            for _ in range(cfg.n_dec_layers)
        )
        self.update_heads = nn.ModuleList(
            nn.Linear(d, 2) for _ in range(cfg.n_dec_layers)
        )
        # softplus keeps the locality sharpness positive; one scalar per layer
        self.sharpness_raw = nn.Parameter(torch.empty(cfg.n_dec_layers))
        self.loc_head = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, 3))
        self.conf_bias = nn.Parameter(torch.empty(1))
        self.concept_head = nn.Sequential(
            nn.Linear(d, d), nn.ReLU(), nn.Linear(d, cfg.n_concepts)
        )
        self.counter_head = nn.Sequential(
            nn.Linear(d, d), nn.ReLU(), nn.Linear(d, cfg.max_events + 1)
        )
        self.word_embed = nn.Embedding(cfg.vocab_size, d)
        self.lstm = nn.LSTMCell(3 * d, d)
        self.attn_q = nn.Linear(d, d)
        self.attn_k = nn.Linear(d, d)
        self.word_out = nn.Linear(d, cfg.vocab_size)
        self.reset_parameters(seed)

    # ------------------------------------------------------------------ init

    def reset_parameters(self, seed: int) -> None:
        """Deterministic init from an instance-owned generator.

        Walks modules in definition order; special heads are re-zeroed after
        the generic pass so training starts exactly at the reference windows.
        """
        g = torch.Generator().manual_seed(int(seed))
        for m in self.modules():
            if isinstance(m, nn.MultiheadAttention):
                fan_in, fan_out = m.in_proj_weight.shape[1], m.in_proj_weight.shape[0]
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                m.in_proj_weight.data.uniform_(-bound, bound, generator=g)
                if m.in_proj_bias is not None:
                    m.in_proj_bias.data.zero_()
            elif isinstance(m, nn.Linear):
                bound = 1.0 / math.sqrt(m.in_features)
                m.weight.data.uniform_(-bound, bound, generator=g)
                if m.bias is not None:
                    m.bias.data.uniform_(-bound, bound, generator=g)
            elif isinstance(m, nn.Embedding):
                m.weight.data.uniform_(-0.08, 0.08, generator=g)
            elif isinstance(m, nn.LSTMCell):
                bound = 1.0 / math.sqrt(m.hidden_size)
                for p in m.parameters():
                    p.data.uniform_(-bound, bound, generator=g)
            elif isinstance(m, nn.LayerNorm):
                m.weight.data.fill_(1.0)
                m.bias.data.zero_()
        self.bank.reset(g)
        for head in self.update_heads:
            head.weight.data.zero_()
            head.bias.data.zero_()
        final = self.loc_head[-1]
        final.weight.data.zero_()
        final.bias.data.zero_()
        # initial confidence ~ 0.01 keeps early focal loss on negatives small
        self.conf_bias.data.fill_(-math.log(99.0))
        # softplus(0.5413) ~ 1.0 starting sharpness
        self.sharpness_raw.data.fill_(0.5413)

    # --------------------------------------------------------------- encoder

    def encode(self, features: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Project, add sinusoidal positions, run the self-attention stack.

        features: (F, d_in); pad_mask: (F,) bool, True at padded frames.
        Returns (F, d_model) context.
        """
        if features.ndim != 2 or features.shape[1] != self.cfg.d_in:
            raise ConfigError(
                f"expected (F, {self.cfg.d_in}) features, got {tuple(features.shape)}"
            )
        x = self.input_proj(features)
        x = x + sinusoidal_positions(x.shape[0], x.shape[1], x.device)
        x = x[None]
        kpm = pad_mask[None] if pad_mask is not None else None
        for layer in self.enc_layers:
            x = layer(x, src_key_padding_mask=kpm)
        return x[0]

    # --------------------------------------------------------------- decoder

    def _locality_bias(self, refs: torch.Tensor, n_frames: int) -> torch.Tensor:
        """(n_layers-agnostic) quadratic window bias for one layer is sliced
        by the caller; this computes -(pos - c)^2 / w^2 without sharpness."""
        pos = frame_positions(n_frames, refs.device)
        c = refs[:, 0:1]
        w = refs[:, 1:2].clamp_min(1e-3)
        return -(((pos[None, :] - c) / w) ** 2)

    def decode(self, context: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> DecoderOutput:
        n_frames = context.shape[0]
        ctx = context[None]
        kpm = pad_mask[None] if pad_mask is not None else None
        loc = self.bank.loc_embed[None]
        cap = self.bank.cap_embed[None]
        ref_logits = self.bank.ref_logits
        records = []
        for li, layer in enumerate(self.dec_layers):
            refs = torch.sigmoid(ref_logits)
            sharp = nn.functional.softplus(self.sharpness_raw[li])
            bias = sharp * self._locality_bias(refs, n_frames)
            # caption stream sees the identical bias values but no gradient
            # path into the reference chain, keeping the roles separable
            loc, w_loc = layer(loc, ctx, bias, kpm)
            cap, w_cap = layer(cap, ctx, bias.detach(), kpm)
            records.append(
                {
                    "bias": bias.detach(),
                    "cross_loc": w_loc.detach()[0],
                    "cross_cap": w_cap.detach()[0],
                    "refs": refs.detach(),
                }
            )
            ref_logits = ref_logits + self.update_heads[li](loc[0])
        return DecoderOutput(
            loc_feats=loc[0],
            cap_feats=cap[0],
            refined_refs=torch.sigmoid(ref_logits),
            refined_ref_logits=ref_logits,
            attn_records=records,
        )

    # ----------------------------------------------------------------- heads

    def localization_head(self, dec: DecoderOutput):
        """(segments, confidences): residual deltas in logit space, so a
        zeroed head reproduces the refined reference windows exactly."""
        out = self.loc_head(dec.loc_feats)
        center = torch.sigmoid(dec.refined_ref_logits[:, 0] + out[:, 0])
        width = torch.sigmoid(dec.refined_ref_logits[:, 1] + out[:, 1])
        lo = (center - width / 2.0).clamp(0.0, 1.0)
        hi = (center + width / 2.0).clamp(0.0, 1.0)
        segments = torch.stack([lo, hi], dim=1)
        confidences = torch.sigmoid(out[:, 2] + self.conf_bias[0])
        return segments, confidences

    def concept_probs(self, dec: DecoderOutput) -> torch.Tensor:
        return torch.sigmoid(self.concept_head(dec.cap_feats))

    def concept_logits(self, cap_feats: torch.Tensor) -> torch.Tensor:
        return self.concept_head(cap_feats)

    def event_counter(self, dec: DecoderOutput) -> torch.Tensor:
        pooled = dec.loc_feats.max(dim=0).values
        return torch.softmax(self.counter_head(pooled), dim=-1)

    def count_logits(self, dec: DecoderOutput) -> torch.Tensor:
        return self.counter_head(dec.loc_feats.max(dim=0).values)

    # --------------------------------------------------------------- caption

    def _log_window(self, segments: torch.Tensor, n_frames: int) -> torch.Tensor:
        """Log of a Gaussian window over frames, std = width/2 floored 1e-3."""
        pos = frame_positions(n_frames, segments.device)
        center = (segments[:, 0:1] + segments[:, 1:2]) / 2.0
        std = ((segments[:, 1:2] - segments[:, 0:1]) / 2.0).clamp_min(1e-3)
        return -(((pos[None, :] - center) / std) ** 2) / 2.0

    def caption_step_inputs(self, n_rows: int, device=None):
        d = self.cfg.d_model
        h = torch.zeros(n_rows, d, device=device)
        c = torch.zeros(n_rows, d, device=device)
        return h, c

    def caption_logits(
        self,
        cap_rows: torch.Tensor,
        segments: torch.Tensor,
        context: torch.Tensor,
        pad_mask: Optional[torch.Tensor],
        tokens: torch.Tensor,
    ) -> torch.Tensor:
        """Teacher-forced logits, batched over rows.

        cap_rows (R, d), segments (R, 2), tokens (R, T) ground truth; the
        step-t input embeds the previous gold token (BOS at t=0). Context
        readout z_t restricts attention to a soft window around the segment.
        Returns (R, T, V).
        """
        n_rows, n_steps = tokens.shape
        n_frames = context.shape[0]
        logw = self._log_window(segments, n_frames)
        if pad_mask is not None:
            logw = logw.masked_fill(pad_mask[None, :], _NEG_INF)
        keys = self.attn_k(context)
        scale = 1.0 / math.sqrt(self.cfg.d_model)
        h, c = self.caption_step_inputs(n_rows, context.device)
        prev = torch.full((n_rows,), BOS_ID, dtype=torch.long, device=context.device)
        logits = []
        for t in range(n_steps):
            scores = self.attn_q(h) @ keys.T * scale + logw
            z = torch.softmax(scores, dim=-1) @ context
            inp = torch.cat([self.word_embed(prev), z, cap_rows], dim=-1)
            h, c = self.lstm(inp, (h, c))
            logits.append(self.word_out(h))
            prev = tokens[:, t].clamp_min(0)
        return torch.stack(logits, dim=1)

    def greedy_captions(
        self,
        cap_rows: torch.Tensor,
        segments: torch.Tensor,
        context: torch.Tensor,
        pad_mask: Optional[torch.Tensor],
    ) -> List[List[int]]:
        """Greedy decode per row, stopping at EOS or max_caption_len."""
        n_rows = cap_rows.shape[0]
        n_frames = context.shape[0]
        logw = self._log_window(segments, n_frames)
        if pad_mask is not None:
            logw = logw.masked_fill(pad_mask[None, :], _NEG_INF)
        keys = self.attn_k(context)
        scale = 1.0 / math.sqrt(self.cfg.d_model)
        h, c = self.caption_step_inputs(n_rows, context.device)
        prev = torch.full((n_rows,), BOS_ID, dtype=torch.long, device=context.device)
        done = torch.zeros(n_rows, dtype=torch.bool, device=context.device)
        seqs = [[] for _ in range(n_rows)]
        for _ in range(self.cfg.max_caption_len):
            scores = self.attn_q(h) @ keys.T * scale + logw
            z = torch.softmax(scores, dim=-1) @ context
            inp = torch.cat([self.word_embed(prev), z, cap_rows], dim=-1)
            h, c = self.lstm(inp, (h, c))
            step = self.word_out(h)
            # never emit pad or bos; they exist only as inputs
            step[:, PAD_ID] = _NEG_INF
            step[:, BOS_ID] = _NEG_INF
            prev = step.argmax(dim=-1)
            for r in range(n_rows):
                if not bool(done[r]):
                    seqs[r].append(int(prev[r]))
            done = done | (prev == EOS_ID)
            if bool(done.all()):
                break
        return seqs

    def caption_head(self, dec: DecoderOutput, context, pad_mask, query_index: int, segment, mode: str = "greedy", gt_tokens=None):
        """Single-query convenience wrapper over the batched paths."""
        row = dec.cap_feats[query_index : query_index + 1]
        seg = torch.as_tensor(segment, dtype=torch.float32, device=row.device).reshape(1, 2)
        if mode == "teacher_forced":
            if gt_tokens is None:
                raise ValueError("teacher_forced mode needs gt_tokens")
            toks = torch.as_tensor(gt_tokens, dtype=torch.long, device=row.device).reshape(1, -1)
            return self.caption_logits(row, seg, context, pad_mask, toks)[0]
        if mode == "greedy":
            return self.greedy_captions(row, seg, context, pad_mask)[0]
        raise ValueError(f"unknown caption mode {mode!r}")

    def caption_nll_matrix(
        self,
        dec: DecoderOutput,
        context: torch.Tensor,
        pad_mask: Optional[torch.Tensor],
        segments: torch.Tensor,
        gt_tokens: torch.Tensor,
    ) -> torch.Tensor:
        """Per-token mean NLL of every GT caption under every query, (K, E).

        Used only to build the matching cost, so it runs without gradients;
        segments enter detached for the same reason.
        """
        k = dec.cap_feats.shape[0]
        n_events = gt_tokens.shape[0]
        with torch.no_grad():
            rows = dec.cap_feats.repeat_interleave(n_events, dim=0)
            segs = segments.detach().repeat_interleave(n_events, dim=0)
            toks = gt_tokens.repeat(k, 1)
            logits = self.caption_logits(rows, segs, context, pad_mask, toks)
            nll = nn.functional.cross_entropy(
                logits.reshape(-1, logits.shape[-1]),
                toks.reshape(-1),
                reduction="none",
            ).reshape(k * n_events, -1)
            mask = (toks != PAD_ID).float()
            per_row = (nll * mask).sum(dim=1) / mask.sum(dim=1).clamp_min(1.0)
        return per_row.reshape(k, n_events)

    # -------------------------------------------------------------- full net

    def forward(self, features: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> ForwardOutput:
        context = self.encode(features, pad_mask)
        dec = self.decode(context, pad_mask)
        segments, confidences = self.localization_head(dec)
        return ForwardOutput(
            context=context,
            pad_mask=pad_mask,
            dec=dec,
            segments=segments,
            confidences=confidences,
            concept_probs=self.concept_probs(dec),
            count_dist=self.event_counter(dec),
        )

    @torch.no_grad()
    def predict_set(self, features: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> PredictionSet:
        out = self.forward(features, pad_mask)
        captions = self.greedy_captions(
            out.dec.cap_feats, out.segments, out.context, out.pad_mask
        )
        return PredictionSet(
            segments=out.segments,
            confidences=out.confidences,
            caption_tokens=captions,
            concept_probs=out.concept_probs,
            count_dist=out.count_dist,
        )

    def selected_indices(self, out: ForwardOutput, top_n: Optional[int] = None) -> torch.Tensor:
        """Query ids kept at inference: top-N by confidence, N from the
        counter (or the explicit override), clamped to [1, K]."""
        n = int(out.count_dist.argmax()) if top_n is None else int(top_n)
        n = max(1, min(n, self.cfg.n_queries))
        order = torch.argsort(out.confidences, descending=True, stable=True)
        return order[:n]

    @torch.no_grad()
    def infer(
        self,
        features: torch.Tensor,
        pad_mask: Optional[torch.Tensor] = None,
        duration_s: float = 1.0,
        top_n: Optional[int] = None,
    ):
        """Top-N selection: N = argmax(count_dist) clamped to [1, K], or the
        explicit top_n override; events sorted by start time. Returns
        (start_s, end_s, token_ids, confidence) tuples; caller maps token ids
        to words."""
        out = self.forward(features, pad_mask)
        chosen = self.selected_indices(out, top_n)
        captions = self.greedy_captions(
            out.dec.cap_feats[chosen], out.segments[chosen], out.context, out.pad_mask
        )
        events = []
        for r, qi in enumerate(chosen.tolist()):
            s, e = out.segments[qi].tolist()
            events.append(
                (s * duration_s, e * duration_s, captions[r], float(out.confidences[qi]))
            )
        events.sort(key=lambda ev: (ev[0], ev[1]))
        return events
