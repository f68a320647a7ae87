"""Recording-level analysis chain and the paired-flow feature file format.

Feature file layout (documented bit-exactly):
  one ASCII header line:
    FOLDFLOW-PAIRS 1 recording_id=<id> speaker_id=<id> label=<0|1> \
n_frames=<n> frame_len=<N> dtype=float64\n
  followed by n_frames records of 2*N little-endian float64 values:
  u_filter then u_model for frame 0, then frame 1, ...
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adles import FitOptions, fit_frame
from .config import PipelineConfig
from .inverse_filtering import IaifConfig, iaif
from .phonation_model import VocalFoldParams
from .s2ap import FramePair
from .signal_io import Recording, frame_signal

PAIR_MAGIC = "FOLDFLOW-PAIRS"
PAIR_VERSION = 1


@dataclass
class AnalyzedRecording:
    recording_id: str
    speaker_id: str
    label: int
    pairs: list            # list[FramePair]
    fit_rows: list         # (frame_index, alpha, beta, delta, loss, converged, iters)


def analyze_recording(rec: Recording, cfg: PipelineConfig) -> AnalyzedRecording:
    """Frame -> IAIF -> per-frame ADLES fit -> paired flow streams."""
    frames = frame_signal(rec, cfg["frame.window_ms"], cfg["frame.hop_ms"])
    iaif_cfg = IaifConfig(tract_order=cfg["iaif.tract_order"],
                          glottal_order=cfg["iaif.glottal_order"],
                          leak=cfg["iaif.leak"])
    dt = cfg["model.dt_per_sample"] / rec.sample_rate
    burn = cfg["fit.burn_steps"]
    if burn < 0:
        burn = frames.window_len
    opts = FitOptions(dt=dt, x0=cfg["model.x0"], burn_steps=burn,
                      max_iters=cfg["fit.max_iters"],
                      grad_tol=cfg["fit.grad_tol"], loss_tol=cfg["fit.loss_tol"],
                      rectify_output=cfg["model.rectify"],
                      lag_align=cfg["fit.lag_align"],
                      alpha_max=cfg["fit.alpha_max"], beta_max=cfg["fit.beta_max"],
                      delta_ridge=cfg["fit.delta_ridge"])
    init = VocalFoldParams(cfg["model.alpha0"], cfg["model.beta0"], cfg["model.delta0"])
    label = 1 if rec.label == "positive" else 0

    pairs = []
    fit_rows = []
    last_params = init
    for i in range(frames.n_frames):
        u_filter = iaif(frames.frames[i], rec.sample_rate, iaif_cfg, frame_index=i)
        if u_filter.flagged or not np.any(u_filter.samples):
            continue
        start = last_params if cfg["fit.warm_start"] else init
        result = fit_frame(u_filter, start, opts)
        last_params = result.params
        pairs.append(FramePair(u_filter=u_filter.samples,
                               u_model=result.final_flow.samples,
                               label=label, recording_id=rec.id, frame_index=i))
        fit_rows.append((i, result.params.alpha, result.params.beta,
                         result.params.delta, result.loss,
                         result.converged, result.iterations))
    return AnalyzedRecording(recording_id=rec.id, speaker_id=rec.speaker_id,
                             label=label, pairs=pairs, fit_rows=fit_rows)


def write_pair_file(analyzed: AnalyzedRecording, path):
    n_frames = len(analyzed.pairs)
    frame_len = len(analyzed.pairs[0].u_filter) if n_frames else 0
    header = (f"{PAIR_MAGIC} {PAIR_VERSION} recording_id={analyzed.recording_id} "
              f"speaker_id={analyzed.speaker_id} label={analyzed.label} "
              f"n_frames={n_frames} frame_len={frame_len} dtype=float64\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for pair in analyzed.pairs:
            fh.write(pair.u_filter.astype("<f8").tobytes())
            fh.write(pair.u_model.astype("<f8").tobytes())


def read_pair_file(path) -> AnalyzedRecording:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        fields = header.split()
        if fields[:2] != [PAIR_MAGIC, str(PAIR_VERSION)]:
            raise ValueError(f"{path}: not a {PAIR_MAGIC} v{PAIR_VERSION} file")
        meta = dict(part.split("=", 1) for part in fields[2:])
        n_frames = int(meta["n_frames"])
        frame_len = int(meta["frame_len"])
        label = int(meta["label"])
        pairs = []
        for i in range(n_frames):
            buf = np.frombuffer(fh.read(2 * frame_len * 8), dtype="<f8")
            pairs.append(FramePair(u_filter=buf[:frame_len].copy(),
                                   u_model=buf[frame_len:].copy(),
                                   label=label, recording_id=meta["recording_id"],
                                   frame_index=i))
    return AnalyzedRecording(recording_id=meta["recording_id"],
                             speaker_id=meta["speaker_id"], label=label,
                             pairs=pairs, fit_rows=[])


def write_fit_csv(analyzed: AnalyzedRecording, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "alpha", "beta", "delta",
                         "loss", "converged", "iters"])
        for row in analyzed.fit_rows:
            idx, alpha, beta, delta, loss, converged, iters = row
            writer.writerow([idx, repr(alpha), repr(beta), repr(delta),
                             repr(loss), int(converged), iters])


def load_feature_dir(feature_dir):
    """All .gfw pair files in a directory, with the speaker map for CV."""
    feature_dir = Path(feature_dir)
    analyzed = [read_pair_file(p) for p in sorted(feature_dir.glob("*.gfw"))]
    if not analyzed:
        raise FileNotFoundError(f"no .gfw feature files in {feature_dir}")
    pairs = [p for a in analyzed for p in a.pairs]
    speaker_of = {a.recording_id: a.speaker_id for a in analyzed}
    return pairs, speaker_of
