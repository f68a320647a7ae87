"""Speaker-stratified cross-validation and ROC-AUC reporting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .s2ap import TrainConfig, train, s2ap_forward


class EvaluationError(Exception):
    pass


class SpeakerLeakageError(EvaluationError):
    pass


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    speaker_to_fold: dict

    def test_speakers(self, fold: int) -> set:
        return {s for s, f in self.speaker_to_fold.items() if f == fold}

    def train_speakers(self, fold: int) -> set:
        return {s for s, f in self.speaker_to_fold.items() if f != fold}


@dataclass
class EvalReport:
    k: int
    frame_auc: list
    recording_auc: list
    config_echo: dict = field(default_factory=dict)

    @staticmethod
    def _stats(values):
        arr = np.asarray(values, dtype=float)
        return float(arr.mean()), float(arr.std())  # population std, n = k

    def to_dict(self) -> dict:
        fm, fs = self._stats(self.frame_auc)
        rm, rs = self._stats(self.recording_auc)
        return {
            "k": self.k,
            "frame_level": {"per_fold": self.frame_auc, "mean_auc": fm, "std_auc": fs},
            "recording_level": {"per_fold": self.recording_auc, "mean_auc": rm, "std_auc": rs},
            "config": self.config_echo,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def speaker_stratified_folds(recordings, k: int, seed: int = 0) -> FoldAssignment:
    """Shuffle speakers with the seed, then greedily balance labels per fold.

    recordings: iterable of objects with .speaker_id and .label.
    """
    by_speaker: dict = {}
    for rec in recordings:
        counts = by_speaker.setdefault(rec.speaker_id, [0, 0])
        counts[0 if rec.label == "positive" else 1] += 1
    speakers = sorted(by_speaker)
    if len(speakers) < k:
        raise EvaluationError(f"need at least k={k} distinct speakers, got {len(speakers)}")
    if k < 2:
        raise EvaluationError("k must be >= 2")

    rng = np.random.default_rng(seed)
    order = [speakers[i] for i in rng.permutation(len(speakers))]

    fold_counts = np.zeros((k, 2))  # (pos, neg) per fold
    assignment = {}
    for spk in order:
        pos, neg = by_speaker[spk]
        dominant = 0 if pos >= neg else 1
        scores = [(fold_counts[f, dominant], fold_counts[f].sum(), f) for f in range(k)]
        fold = min(scores)[2]
        assignment[spk] = int(fold)
        fold_counts[fold, 0] += pos
        fold_counts[fold, 1] += neg
    return FoldAssignment(k=k, speaker_to_fold=assignment)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counted 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("roc_auc needs both classes present")
    ranks = rankdata(scores)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _assert_no_leakage(folds: FoldAssignment):
    for f in range(folds.k):
        overlap = folds.train_speakers(f) & folds.test_speakers(f)
        if overlap:
            raise SpeakerLeakageError(f"fold {f}: speakers in both splits: {overlap}")


def cross_validate(pairs, speaker_of: dict, train_config: TrainConfig,
                   k: int = 3, seed: int = 0) -> EvalReport:
    """Train one model per fold and report frame- and recording-level AUC.

    pairs: list of FramePair; speaker_of maps recording_id -> speaker_id.
    """
    label_of = {}
    for p in pairs:
        label_of.setdefault(p.recording_id, p.label)
        if label_of[p.recording_id] != p.label:
            raise EvaluationError(f"inconsistent labels within {p.recording_id}")

    class _Rec:
        def __init__(self, rid):
            self.speaker_id = speaker_of[rid]
            self.label = "positive" if label_of[rid] else "negative"

    recs = [_Rec(rid) for rid in sorted(label_of)]
    folds = speaker_stratified_folds(recs, k, seed)
    _assert_no_leakage(folds)

    frame_aucs = []
    rec_aucs = []
    for f in range(folds.k):
        test_spk = folds.test_speakers(f)
        train_pairs = [p for p in pairs if speaker_of[p.recording_id] not in test_spk]
        test_pairs = [p for p in pairs if speaker_of[p.recording_id] in test_spk]
        try:
            model = train(train_pairs, train_config)
        except Exception as exc:
            raise EvaluationError(f"fold {f}: training failed: {exc}") from exc

        probs = np.array([s2ap_forward(p, model)[0] for p in test_pairs])
        labels = np.array([p.label for p in test_pairs])
        frame_aucs.append(roc_auc(probs, labels))

        rec_ids = sorted({p.recording_id for p in test_pairs})
        rec_scores = [float(probs[[p.recording_id == rid for p in test_pairs]].mean())
                      for rid in rec_ids]
        rec_labels = [label_of[rid] for rid in rec_ids]
        rec_aucs.append(roc_auc(rec_scores, rec_labels))

    echo = {"arch": list(train_config.arch), "pooling": train_config.pooling,
            "extractor": train_config.extractor, "epochs": train_config.epochs,
            "learning_rate": train_config.learning_rate,
            "batch_size": train_config.batch_size, "seed": train_config.seed,
            "k": k, "fold_seed": seed}
    return EvalReport(k=k, frame_auc=frame_aucs, recording_auc=rec_aucs,
                      config_echo=echo)
