"""Optimization loop wiring data, model, matching, and losses, with the four
ablation toggles (role-specific queries, contrastive alignment, overlap
suppression, concept guidance).

Batching is a list of whole videos; per-video losses are averaged. The
caption stream receives detached segments and the caption-side locality bias
is detached inside the model, so the role-separation wiring holds end to end.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch

from .concepts import ConceptVocabulary, build_vocabulary, label_matrix
from .data import SynthDataset, VideoRecord, resize_to_fixed_length
from .errors import ConfigError, TrainingDiverged
from .evaluation import EvalConfig, EvalReport, evaluate_dense_captions, records_to_gt
from .losses import (
    CTCAConfig,
    FocalConfig,
    LossReport,
    LossWeights,
    OSLConfig,
    caption_ce,
    concept_guider_loss,
    ctca,
    event_count_ce,
    focal_cls_loss,
    giou_loss,
    osl,
    total_loss,
)
from .matching import MatchingCoeffs, hungarian, matching_cost
from .model import EventCaptionModel, ModelConfig
from .temporal import pairwise_tiou
from .text import PAD_ID, TokenVocabulary


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    grad_clip: float = 0.1
    seed: int = 0
    eval_interval: int = 5
    deterministic: bool = True
    use_rsqi: bool = True
    use_ctca: bool = True
    use_osl: bool = True
    use_cg: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.grad_clip <= 0:
            raise ConfigError("lr and grad_clip must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if self.use_ctca and not self.use_rsqi:
            raise ConfigError(
                "contrastive alignment needs role-specific queries: "
                "there is no second query set to align without them"
            )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; round-trips through an INI file."""

    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    weights: LossWeights = LossWeights()
    osl: OSLConfig = OSLConfig()
    ctca: CTCAConfig = CTCAConfig()
    matching: MatchingCoeffs = MatchingCoeffs()
    focal: FocalConfig = FocalConfig()

    _SECTIONS = (
        ("model", ModelConfig),
        ("train", TrainConfig),
        ("weights", LossWeights),
        ("osl", OSLConfig),
        ("ctca", CTCAConfig),
        ("matching", MatchingCoeffs),
        ("focal", FocalConfig),
    )

    def to_ini(self, path=None) -> str:
        cp = configparser.ConfigParser()
        for name, _ in self._SECTIONS:
            obj = getattr(self, name)
            cp[name] = {
                f.name: ("" if getattr(obj, f.name) is None else str(getattr(obj, f.name)))
                for f in dataclasses.fields(obj)
                if f.init
            }
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        text = "\n".join(lines)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_ini(cls, path=None, text=None, overrides: Optional[Dict[str, Dict[str, object]]] = None) -> "ExperimentConfig":
        """Build from an INI file and/or {section: {field: value}} overrides.

        Unknown sections or fields raise ConfigError so typos fail loudly.
        """
        cp = configparser.ConfigParser()
        if path is not None:
            if not cp.read(path, encoding="utf-8"):
                raise ConfigError(f"cannot read config file {path}")
        if text is not None:
            cp.read_string(text)
        known = dict(cls._SECTIONS)
        for section in cp.sections():
            if section not in known:
                raise ConfigError(f"unknown config section [{section}]")
        merged: Dict[str, Dict[str, object]] = {s: {} for s, _ in cls._SECTIONS}
        for section, sec_cls in cls._SECTIONS:
            defaults = {f.name: f for f in dataclasses.fields(sec_cls) if f.init}
            if cp.has_section(section):
                for key, raw in cp[section].items():
                    if key not in defaults:
                        raise ConfigError(f"unknown option {key!r} in [{section}]")
                    merged[section][key] = _parse_value(raw, defaults[key])
        for section, kv in (overrides or {}).items():
            if section not in known:
                raise ConfigError(f"unknown config section [{section}]")
            names = {f.name for f in dataclasses.fields(known[section]) if f.init}
            for key, value in kv.items():
                if key not in names:
                    raise ConfigError(f"unknown option {key!r} in [{section}]")
                merged[section][key] = value
        kwargs = {}
        for section, sec_cls in cls._SECTIONS:
            kwargs[section] = sec_cls(**merged[section])
        return cls(**kwargs)


def _parse_value(raw: str, fld: dataclasses.Field):
    raw = raw.strip()
    default = fld.default
    if raw == "" or raw.lower() == "none":
        return None
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {raw!r} for {fld.name}")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None or default is dataclasses.MISSING:
        # only Optional[int] fields (ffn_dim) reach here with a value
        return int(raw)
    return raw


@dataclass
class VideoTargets:
    features: torch.Tensor
    pad_mask: torch.Tensor
    segments: torch.Tensor
    tokens: torch.Tensor
    concept_labels: torch.Tensor
    n_events: int


class Trainer:
    """Single-model trainer; optimizer is AdamW with gradient clipping."""

    def __init__(
        self,
        model: EventCaptionModel,
        cfg: ExperimentConfig,
        vocab: TokenVocabulary,
        concept_vocab: Optional[ConceptVocabulary] = None,
    ):
        if cfg.train.use_ctca and not model.cfg.role_specific:
            raise ConfigError("contrastive alignment needs a role-specific model")
        if cfg.train.use_rsqi != model.cfg.role_specific:
            raise ConfigError("model role_specific flag disagrees with use_rsqi")
        if cfg.train.use_cg and concept_vocab is None:
            raise ConfigError("concept guidance needs a concept vocabulary")
        if cfg.train.deterministic:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)
        self.model = model
        self.cfg = cfg
        self.vocab = vocab
        self.concept_vocab = concept_vocab
        self.optimizer = torch.optim.AdamW(
            model.parameters(), lr=cfg.train.lr, weight_decay=cfg.train.weight_decay
        )
        self.step = 0
        self.epoch = 0
        self._targets: Dict[str, VideoTargets] = {}

    # ------------------------------------------------------------- plumbing

    def _prepare(self, record: VideoRecord) -> VideoTargets:
        cached = self._targets.get(record.video_id)
        if cached is not None:
            return cached
        feats, pad = resize_to_fixed_length(record.features, self.model.cfg.n_frames)
        segs = torch.as_tensor(record.normalized_segments(), dtype=torch.float32)
        toks = [
            self.vocab.encode(c, self.model.cfg.max_caption_len) for c in record.captions()
        ]
        tokens = torch.as_tensor(np.array(toks), dtype=torch.long) if toks else torch.zeros(
            (0, self.model.cfg.max_caption_len), dtype=torch.long
        )
        if self.concept_vocab is not None:
            labels = torch.as_tensor(label_matrix(record.captions(), self.concept_vocab))
        else:
            labels = torch.zeros((len(record.events), 0))
        tgt = VideoTargets(
            features=torch.as_tensor(feats, dtype=torch.float32),
            pad_mask=torch.as_tensor(pad, dtype=torch.bool),
            segments=segs,
            tokens=tokens,
            concept_labels=labels,
            n_events=len(record.events),
        )
        self._targets[record.video_id] = tgt
        return tgt

    def _zero(self) -> torch.Tensor:
        return torch.zeros((), dtype=torch.float32)

    # ------------------------------------------------------------ train step

    def video_losses(self, record: VideoRecord) -> Dict[str, torch.Tensor]:
        """All seven raw loss terms for one video (disabled toggles give 0)."""
        t = self.cfg.train
        tgt = self._prepare(record)
        out = self.model(tgt.features, tgt.pad_mask)

        use_cap_cost = self.cfg.matching.alpha_cap > 0 and tgt.n_events > 0
        cap_nll = (
            self.model.caption_nll_matrix(
                out.dec, out.context, out.pad_mask, out.segments, tgt.tokens
            )
            if use_cap_cost
            else None
        )
        cost = matching_cost(
            out.confidences,
            out.segments,
            tgt.segments,
            caption_nll=cap_nll,
            coeffs=self.cfg.matching,
            focal_alpha=self.cfg.focal.alpha,
            focal_gamma=self.cfg.focal.gamma,
        )
        match = hungarian(cost)
        pred_idx = list(match.pred_indices)
        gt_idx = list(match.gt_indices)

        terms: Dict[str, torch.Tensor] = {}
        pi = torch.as_tensor(pred_idx, dtype=torch.long)
        gi = torch.as_tensor(gt_idx, dtype=torch.long)
        terms["giou"] = giou_loss(out.segments[pi], tgt.segments[gi])
        terms["cls"] = focal_cls_loss(out.confidences, pred_idx, self.cfg.focal)
        if pred_idx:
            # detached segments: the caption loss must not steer localization
            logits = self.model.caption_logits(
                out.dec.cap_feats[pi],
                out.segments[pi].detach(),
                out.context,
                out.pad_mask,
                tgt.tokens[gi],
            )
            flat = logits.reshape(-1, logits.shape[-1])
            terms["cap"] = caption_ce(flat, tgt.tokens[gi].reshape(-1), PAD_ID)
        else:
            terms["cap"] = self._zero()
        terms["ec"] = event_count_ce(self.model.count_logits(out.dec), tgt.n_events)
        terms["ctca"] = (
            ctca(out.dec.cap_feats, out.dec.loc_feats, pred_idx, self.cfg.ctca)
            if t.use_ctca and pred_idx
            else self._zero()
        )
        terms["osl"] = (
            osl(out.segments, tgt.segments, self.cfg.osl) if t.use_osl else self._zero()
        )
        if t.use_cg and pred_idx and tgt.concept_labels.shape[1] > 0:
            logits_c = self.model.concept_logits(out.dec.cap_feats[pi])
            terms["cg"] = concept_guider_loss(logits_c, tgt.concept_labels[gi])
        else:
            terms["cg"] = self._zero()
        return terms

    def train_step(self, batch: List[VideoRecord]) -> LossReport:
        """One optimizer step on a batch of videos; returns the loss report.

        A non-finite total aborts with a diagnostic dump of the batch ids and
        raw terms.
        """
        self.model.train()
        acc: Dict[str, List[torch.Tensor]] = {}
        for record in batch:
            for name, value in self.video_losses(record).items():
                acc.setdefault(name, []).append(value)
        means = {name: torch.stack(vals).mean() for name, vals in acc.items()}
        report = total_loss(means, self.cfg.weights)
        if not torch.isfinite(report.total):
            dump_path = os.path.join(
                tempfile.gettempdir(), f"eventcap_diverged_step{self.step}.pt"
            )
            torch.save(
                {
                    "step": self.step,
                    "video_ids": [r.video_id for r in batch],
                    "raw": {k: report.raw_value(k) for k in report.raw},
                },
                dump_path,
            )
            raise TrainingDiverged(
                f"non-finite loss at step {self.step}", dump_path=dump_path
            )
        self.optimizer.zero_grad()
        report.total.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.train.grad_clip)
        self.optimizer.step()
        self.step += 1
        return report

    # ------------------------------------------------------------------ eval

    def predict(self, records: List[VideoRecord], top_n: Optional[int] = None) -> Dict[str, list]:
        """Inference per video: (start_s, end_s, caption, confidence) tuples."""
        self.model.eval()
        preds = {}
        for record in records:
            tgt = self._prepare(record)
            events = self.model.infer(
                tgt.features, tgt.pad_mask, record.duration_s, top_n=top_n
            )
            preds[record.video_id] = [
                (s, e, " ".join(self.vocab.decode(toks)), conf)
                for s, e, toks, conf in events
            ]
        return preds

    def evaluate(self, records: List[VideoRecord], eval_cfg: EvalConfig = EvalConfig()) -> EvalReport:
        preds = self.predict(records)
        return evaluate_dense_captions(preds, records_to_gt(records), eval_cfg)

    # ------------------------------------------------------------------- fit

    def fit(
        self,
        dataset: SynthDataset,
        out_dir: Optional[str] = None,
        log=None,
    ) -> Dict[str, object]:
        """Epoch loop with periodic validation; keeps the best-F1 checkpoint.

        Returns {"history": rows, "best_f1": float, "best_state": state dict,
        "elapsed_s": float}. history has one row per epoch; rows evaluated on
        the val split carry val_f1, others carry None.
        """
        t = self.cfg.train
        rng = np.random.default_rng(t.seed)
        history: List[Dict[str, object]] = []
        best_f1 = -1.0
        best_state = None
        started = time.time()
        target_epoch = self.epoch + t.epochs
        while self.epoch < target_epoch:
            order = rng.permutation(len(dataset.train))
            epoch_losses = []
            for lo in range(0, len(order), t.batch_size):
                batch = [dataset.train[i] for i in order[lo : lo + t.batch_size]]
                report = self.train_step(batch)
                epoch_losses.append(report.total_value)
                if log is not None:
                    log(report.log_line(self.step))
            self.epoch += 1
            val_f1 = None
            evaluate_now = (
                self.epoch % t.eval_interval == 0 or self.epoch == target_epoch
            )
            if evaluate_now and dataset.val:
                report_val = self.evaluate(dataset.val)
                val_f1 = report_val.f1
                if val_f1 > best_f1:
                    best_f1 = val_f1
                    best_state = {
                        k: v.detach().clone() for k, v in self.model.state_dict().items()
                    }
                    if out_dir is not None:
                        self.save(os.path.join(out_dir, "best.ckpt"), best_f1=best_f1)
            row = {
                "epoch": self.epoch,
                "step": self.step,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else 0.0,
                "val_f1": val_f1,
            }
            history.append(row)
            if log is not None:
                log(
                    f"epoch={row['epoch']} step={row['step']} "
                    f"train_loss={row['train_loss']:.4f} "
                    + (f"val_f1={val_f1:.4f}" if val_f1 is not None else "val_f1=-")
                )
        result = {
            "history": history,
            "best_f1": best_f1 if best_f1 >= 0 else None,
            "best_state": best_state,
            "elapsed_s": time.time() - started,
        }
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            self.save(os.path.join(out_dir, "last.ckpt"), best_f1=result["best_f1"])
            with open(os.path.join(out_dir, "history.json"), "w", encoding="utf-8") as fh:
                json.dump(history, fh, indent=1)
        return result

    # ----------------------------------------------------------- checkpoints

    def save(self, path, best_f1=None) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        torch.save(
            {
                "model_state": self.model.state_dict(),
                "optimizer_state": self.optimizer.state_dict(),
                "model_config": dataclasses.asdict(self.model.cfg),
                "experiment_ini": self.cfg.to_ini(),
                "vocab_tokens": list(self.vocab.tokens),
                "concept_entries": list(self.concept_vocab.entries)
                if self.concept_vocab is not None
                else None,
                "step": self.step,
                "epoch": self.epoch,
                "best_f1": best_f1,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "Trainer":
        # checkpoints carry plain dicts and tensors; weights_only cannot
        # express the nested config payload
        blob = torch.load(path, map_location="cpu", weights_only=False)
        model_cfg = ModelConfig(**blob["model_config"])
        cfg = ExperimentConfig.from_ini(text=blob["experiment_ini"])
        model = EventCaptionModel(model_cfg, seed=cfg.train.seed)
        model.load_state_dict(blob["model_state"])
        vocab = TokenVocabulary(tuple(blob["vocab_tokens"]))
        concept_vocab = (
            ConceptVocabulary(tuple(blob["concept_entries"]), len(blob["concept_entries"]))
            if blob.get("concept_entries")
            else None
        )
        trainer = cls(model, cfg, vocab, concept_vocab)
        trainer.optimizer.load_state_dict(blob["optimizer_state"])
        trainer.step = int(blob["step"])
        trainer.epoch = int(blob["epoch"])
        return trainer


def overlap_statistics(preds: Dict[str, list]) -> Dict[str, float]:
    """Corpus redundancy: mean pairwise tiou over all within-video unordered
    pairs, plus the count with tiou > 0.5. Videos with one event add no pairs."""
    values = []
    high = 0
    for events in preds.values():
        if len(events) < 2:
            continue
        spans = np.array([[e[0], e[1]] for e in events], dtype=np.float64)
        grid = pairwise_tiou(spans, spans)
        iu = np.triu_indices(len(events), k=1)
        pair_vals = grid[iu]
        values.extend(pair_vals.tolist())
        high += int((pair_vals > 0.5).sum())
    return {
        "mean_pairwise_tiou": float(np.mean(values)) if values else 0.0,
        "high_overlap_pairs": float(high),
        "n_pairs": float(len(values)),
    }


def build_trainer(
    dataset: SynthDataset,
    cfg: ExperimentConfig,
) -> Trainer:
    """Vocabulary and concept bookkeeping, then a ready trainer.

    The model's vocab_size/n_concepts are replaced by the actual built sizes
    so the heads fit the data.
    """
    captions = [c for r in dataset.train for c in r.captions()]
    if not captions:
        raise ConfigError("training split has no captions")
    vocab = TokenVocabulary.build(captions, max_size=cfg.model.vocab_size)
    concept_vocab = None
    if cfg.train.use_cg:
        lexicon = dataset.concept_lexicon or None
        concept_vocab = build_vocabulary(captions, cfg.model.n_concepts, lexicon)
    model_cfg = dataclasses.replace(
        cfg.model,
        vocab_size=len(vocab),
        n_concepts=len(concept_vocab) if concept_vocab is not None else cfg.model.n_concepts,
        role_specific=cfg.train.use_rsqi,
    )
    model = EventCaptionModel(model_cfg, seed=cfg.train.seed)
    return Trainer(model, cfg, vocab, concept_vocab)
