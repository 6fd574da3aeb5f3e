"""Evaluation protocol: threshold-averaged localization precision/recall/F1,
corpus BLEU-4, TF-IDF n-gram cosine (CIDEr-style), and an order-preserving
story-level alignment score (SODA-style).

METEOR is excluded (external synonym database); reports carry a null field
for it. The SODA caption score substitutes a smoothed n-gram F-measure for
METEOR; both deviations are deliberate and documented in the README.

Inputs are per-video lists of (start, end, caption) triples for predictions
and ground truth; all caption handling uses the single project tokenization.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .temporal import pairwise_tiou
from .text import tokenize

# Reference used for predictions left unmatched at a threshold: a token that
# the normalizer can never produce from real text, so every n-gram misses.
_NO_MATCH = ["<unmatched>"]

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class EvalConfig:
    tiou_thresholds: tuple = DEFAULT_THRESHOLDS
    max_ngram: int = 4
    cider_sigma: float = 6.0
    bleu_smoothing: bool = False
    soda_caption_score: str = "ngram_f"

    def __post_init__(self):
        ts = tuple(float(t) for t in self.tiou_thresholds)
        if not ts:
            raise ConfigError("need at least one tiou threshold")
        if any(not 0.0 < t <= 1.0 for t in ts):
            raise ConfigError(f"thresholds must lie in (0, 1], got {ts}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError(f"thresholds must be strictly increasing, got {ts}")
        object.__setattr__(self, "tiou_thresholds", ts)
        if self.max_ngram < 1:
            raise ConfigError("max_ngram must be >= 1")
        if self.cider_sigma <= 0:
            raise ConfigError("cider_sigma must be positive")
        if self.soda_caption_score not in ("ngram_f", "unigram_f"):
            raise ConfigError(f"unknown soda caption score {self.soda_caption_score!r}")


@dataclass
class EvalReport:
    """Threshold-averaged localization plus corpus caption metrics.

    meteor stays None by design. per_threshold maps each tiou threshold to
    its (precision, recall) pair before averaging.
    """

    precision: float
    recall: float
    f1: float
    bleu4: float
    cider: float
    soda_c: float
    meteor: Optional[float] = None
    per_threshold: Dict[float, Tuple[float, float]] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "bleu4": self.bleu4,
            "cider": self.cider,
            "soda_c": self.soda_c,
            "meteor": self.meteor,
            "per_threshold": {f"{t:g}": list(pr) for t, pr in self.per_threshold.items()},
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @staticmethod
    def csv_header() -> str:
        return "precision,recall,f1,bleu4,cider,soda_c,meteor"

    def csv_row(self) -> str:
        meteor = "" if self.meteor is None else f"{self.meteor:.6f}"
        return (
            f"{self.precision:.6f},{self.recall:.6f},{self.f1:.6f},"
            f"{self.bleu4:.6f},{self.cider:.6f},{self.soda_c:.6f},{meteor}"
        )


def _harmonic(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def _spans(events) -> np.ndarray:
    if not events:
        return np.zeros((0, 2), dtype=np.float64)
    return np.array([[float(e[0]), float(e[1])] for e in events], dtype=np.float64)


def localization_prf(
    preds: Dict[str, Sequence], gts: Dict[str, Sequence], cfg: EvalConfig = EvalConfig()
):
    """Corpus precision/recall/F1 averaged over tiou thresholds.

    Per threshold, a prediction counts as matched when its best tiou against
    any same-video ground truth reaches the threshold, and symmetrically for
    recall. Counts are pooled over the corpus before dividing, so videos with
    zero predictions simply add nothing to the matched numerators.
    Returns (precision, recall, f1, per_threshold dict).
    """
    total_pred = sum(len(_spans(preds.get(v, []))) for v in gts)
    total_gt = sum(len(_spans(gts[v])) for v in gts)
    if total_gt == 0:
        raise DataError("localization_prf: empty ground truth")

    per_threshold = {}
    for theta in cfg.tiou_thresholds:
        hit_pred = 0
        hit_gt = 0
        for vid in gts:
            g = _spans(gts[vid])
            p = _spans(preds.get(vid, []))
            if len(p) == 0 or len(g) == 0:
                continue
            overlap = pairwise_tiou(p, g)
            hit_pred += int((overlap.max(axis=1) >= theta).sum())
            hit_gt += int((overlap.max(axis=0) >= theta).sum())
        precision_t = hit_pred / total_pred if total_pred > 0 else 0.0
        recall_t = hit_gt / total_gt
        per_threshold[theta] = (precision_t, recall_t)

    precision = sum(p for p, _ in per_threshold.values()) / len(per_threshold)
    recall = sum(r for _, r in per_threshold.values()) / len(per_threshold)
    return precision, recall, _harmonic(precision, recall), per_threshold


def _tokens(caption) -> List[str]:
    if isinstance(caption, str):
        return tokenize(caption)
    return [str(t) for t in caption]


def _ngrams(tokens: List[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _ref_group(refs) -> List[List[str]]:
    """One reference group as token lists.

    A bare string is a single reference; a sequence is a list of alternative
    references, each a string or an already tokenized list. A tokenized
    single reference must therefore be wrapped in a list.
    """
    if isinstance(refs, str):
        refs = [refs]
    return [_tokens(r) for r in refs]


def bleu4(
    candidates: Sequence,
    references: Sequence,
    max_ngram: int = 4,
    smoothing: bool = False,
) -> float:
    """Corpus BLEU: clipped n-gram precision geometric mean times brevity penalty.

    references[i] is one reference or a list of alternatives for candidate i.
    Smoothing off means any empty n-gram level zeroes the score; the add-one
    switch exists for tiny corpora.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must align one to one")
    if len(candidates) == 0:
        return 0.0
    matched = [0] * max_ngram
    total = [0] * max_ngram
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        c = _tokens(cand)
        ref_tokens = _ref_group(refs)
        cand_len += len(c)
        # closest reference length; ties go to the shorter reference
        ref_len += min((abs(len(r) - len(c)), len(r)) for r in ref_tokens)[1]
        for n in range(1, max_ngram + 1):
            counts = _ngrams(c, n)
            if not counts:
                continue
            cap = Counter()
            for r in ref_tokens:
                rc = _ngrams(r, n)
                for g in counts:
                    cap[g] = max(cap[g], rc.get(g, 0))
            total[n - 1] += sum(counts.values())
            matched[n - 1] += sum(min(counts[g], cap[g]) for g in counts)

    log_sum = 0.0
    for n in range(max_ngram):
        m, t = matched[n], total[n]
        if smoothing:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    precision_gm = math.exp(log_sum / max_ngram)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    return precision_gm * bp


def _tfidf(counts: Counter, idf: Dict[tuple, float]) -> Dict[tuple, float]:
    return {g: c * idf.get(g, 0.0) for g, c in counts.items()}


def _cosine(a: Dict[tuple, float], b: Dict[tuple, float]) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return dot / (na * nb)


def cider_idf(reference_groups: Sequence, max_ngram: int = 4) -> Dict[int, Dict[tuple, float]]:
    """Per-n IDF over reference groups: log(N / df), df = groups containing the n-gram."""
    groups = [_ref_group(g) for g in reference_groups]
    n_groups = len(groups)
    if n_groups == 0:
        raise DataError("cider: empty reference corpus")
    idf = {}
    for n in range(1, max_ngram + 1):
        df = Counter()
        for refs in groups:
            seen = set()
            for r in refs:
                seen.update(_ngrams(r, n).keys())
            df.update(seen)
        idf[n] = {g: math.log(n_groups / max(d, 1)) for g, d in df.items()}
    return idf


def cider(
    candidates: Sequence,
    references: Sequence,
    idf_corpus=None,
    max_ngram: int = 4,
    sigma: float = 6.0,
) -> float:
    """TF-IDF n-gram cosine averaged over n = 1..max_ngram, scaled by 10.

    Per candidate the score averages over its references, each weighted by a
    Gaussian penalty on the token-length difference. IDF defaults to the
    given references; pass idf_corpus (list of reference groups) to compute
    document frequencies over a larger corpus.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must align one to one")
    if len(candidates) == 0:
        return 0.0
    groups = [_ref_group(g) for g in references]
    idf = cider_idf(idf_corpus if idf_corpus is not None else references, max_ngram)

    scores = []
    for cand, refs in zip(candidates, groups):
        c = _tokens(cand)
        per_n = []
        for n in range(1, max_ngram + 1):
            vec_c = _tfidf(_ngrams(c, n), idf[n])
            acc = 0.0
            for rt in refs:
                penalty = math.exp(-((len(c) - len(rt)) ** 2) / (2.0 * sigma ** 2))
                acc += penalty * _cosine(vec_c, _tfidf(_ngrams(rt, n), idf[n]))
            per_n.append(acc / len(refs) if refs else 0.0)
        scores.append(10.0 * sum(per_n) / max_ngram)
    return float(sum(scores) / len(scores))


def caption_fscore(candidate, reference, max_ngram: int = 4) -> float:
    """Mean n-gram F1 over the n levels where either side has n-grams.

    Levels where both sides are too short are skipped rather than scored
    zero, so short perfect captions still reach 1.0; any shared-length level
    with no overlap scores 0.
    """
    c = _tokens(candidate)
    r = _tokens(reference)
    values = []
    for n in range(1, max_ngram + 1):
        cc = _ngrams(c, n)
        rc = _ngrams(r, n)
        if not cc and not rc:
            continue
        m = sum(min(v, rc.get(g, 0)) for g, v in cc.items())
        p = m / sum(cc.values()) if cc else 0.0
        rr = m / sum(rc.values()) if rc else 0.0
        values.append(_harmonic(p, rr))
    return sum(values) / len(values) if values else 0.0


def soda_alignment(scores: np.ndarray) -> Tuple[float, List[Tuple[int, int]]]:
    """Best order-preserving one-to-one alignment of a pairwise score grid.

    dp[i][j] = max(skip pred i, skip gt j, match (i, j)). Returns the optimal
    total and the matched index pairs (ascending in both coordinates).
    """
    s = np.asarray(scores, dtype=np.float64)
    n, m = s.shape
    dp = np.zeros((n + 1, m + 1))
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dp[i, j] = max(dp[i - 1, j], dp[i, j - 1], dp[i - 1, j - 1] + s[i - 1, j - 1])
    pairs = []
    i, j = n, m
    while i > 0 and j > 0:
        if dp[i, j] == dp[i - 1, j]:
            i -= 1
        elif dp[i, j] == dp[i, j - 1]:
            j -= 1
        else:
            pairs.append((i - 1, j - 1))
            i -= 1
            j -= 1
    pairs.reverse()
    return float(dp[n, m]), pairs


def soda_c(
    preds: Dict[str, Sequence], gts: Dict[str, Sequence], cfg: EvalConfig = EvalConfig()
) -> float:
    """Corpus mean F-measure of aligned tiou-weighted caption score mass.

    Per video the grid S[i, j] = tiou(pred_i, gt_j) * caption_score is
    aligned monotonically; precision divides the optimum by the prediction
    count, recall by the ground-truth count.
    """
    max_n = 1 if cfg.soda_caption_score == "unigram_f" else cfg.max_ngram
    fs = []
    for vid in sorted(gts):
        gt_events = list(gts[vid])
        pred_events = list(preds.get(vid, []))
        if not gt_events:
            continue
        if not pred_events:
            fs.append(0.0)
            continue
        grid = pairwise_tiou(_spans(pred_events), _spans(gt_events))
        for i, pe in enumerate(pred_events):
            for j, ge in enumerate(gt_events):
                if grid[i, j] > 0.0:
                    grid[i, j] *= caption_fscore(pe[2], ge[2], max_n)
        best, _ = soda_alignment(grid)
        p = best / len(pred_events)
        r = best / len(gt_events)
        fs.append(_harmonic(p, r))
    if not fs:
        raise DataError("soda_c: empty ground truth")
    return float(sum(fs) / len(fs))


def evaluate_dense_captions(
    preds: Dict[str, Sequence], gts: Dict[str, Sequence], cfg: EvalConfig = EvalConfig()
) -> EvalReport:
    """Full protocol over per-video (start, end, caption) triples.

    Caption pairing per threshold: each prediction is scored against the
    ground-truth caption of its best-tiou segment when the overlap reaches
    the threshold, else against an unmatchable placeholder; BLEU and the
    TF-IDF cosine are corpus-level per threshold, then threshold-averaged.
    IDF statistics come from the full ground-truth caption corpus.
    """
    precision, recall, f1, per_threshold = localization_prf(preds, gts, cfg)

    gt_caption_groups = [[e[2] for e in gts[v]] for v in sorted(gts) if len(gts[v])]
    bleu_vals, cider_vals = [], []
    for theta in cfg.tiou_thresholds:
        cands, refs = [], []
        for vid in sorted(gts):
            g = _spans(gts[vid])
            p_events = list(preds.get(vid, []))
            if len(g) == 0 or not p_events:
                continue
            overlap = pairwise_tiou(_spans(p_events), g)
            for i, pe in enumerate(p_events):
                j = int(overlap[i].argmax())
                cands.append(_tokens(pe[2]))
                if overlap[i, j] >= theta:
                    refs.append([_tokens(gts[vid][j][2])])
                else:
                    refs.append([list(_NO_MATCH)])
        if cands:
            bleu_vals.append(bleu4(cands, refs, cfg.max_ngram, cfg.bleu_smoothing))
            cider_vals.append(
                cider(cands, refs, idf_corpus=gt_caption_groups, max_ngram=cfg.max_ngram, sigma=cfg.cider_sigma)
            )
        else:
            bleu_vals.append(0.0)
            cider_vals.append(0.0)

    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        bleu4=float(np.mean(bleu_vals)),
        cider=float(np.mean(cider_vals)),
        soda_c=soda_c(preds, gts, cfg),
        meteor=None,
        per_threshold=per_threshold,
    )


def records_to_gt(records) -> Dict[str, List[Tuple[float, float, str]]]:
    """VideoRecord list -> the per-video triple mapping the metrics consume."""
    return {
        r.video_id: [(e.start_s, e.end_s, e.caption) for e in r.events] for r in records
    }


def write_predictions(path, preds: Dict[str, Sequence]) -> None:
    """Prediction file: {video_id: [{"segment": [s, e], "caption": str,
    "confidence": float}]}. Missing confidences are written as 1.0."""
    doc = {}
    for vid, events in preds.items():
        rows = []
        for e in events:
            conf = float(e[3]) if len(e) > 3 else 1.0
            rows.append(
                {"segment": [float(e[0]), float(e[1])], "caption": str(e[2]), "confidence": conf}
            )
        doc[vid] = rows
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_predictions(path) -> Dict[str, List[Tuple[float, float, str, float]]]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: top level must map video_id to event lists")
    out = {}
    for vid, rows in doc.items():
        events = []
        for k, row in enumerate(rows):
            try:
                s, e = float(row["segment"][0]), float(row["segment"][1])
                cap = str(row["caption"])
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise DataError(f"{path}: {vid}[{k}] malformed: {exc}") from exc
            events.append((s, e, cap, float(row.get("confidence", 1.0))))
        out[vid] = events
    return out
