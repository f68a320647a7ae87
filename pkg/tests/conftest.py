import numpy as np
import pytest

from foldflow.adles import model_flow
from foldflow.phonation_model import VocalFoldParams
from foldflow.s2ap import FramePair


def make_recording(samples, sample_rate=8000, rec_id="rec", speaker="spk",
                   label="unknown"):
    from foldflow.signal_io import Recording
    return Recording(id=rec_id, speaker_id=speaker, label=label,
                     sample_rate=sample_rate, samples=np.asarray(samples, dtype=float))


def separable_pairs(n_per_class=24, n_t=64, seed=0):
    """Toy task: label 0 has u_model == u_filter, label 1 a phase-shifted copy."""
    rng = np.random.default_rng(seed)
    pairs = []
    t = np.arange(n_t)
    for i in range(2 * n_per_class):
        label = i % 2
        phase = rng.uniform(0, 2 * np.pi)
        u = np.sin(2 * np.pi * t / 16 + phase) + 0.05 * rng.standard_normal(n_t)
        u = (u - u.mean()) / np.max(np.abs(u - u.mean()))
        um = np.roll(u, 8) if label else u
        pairs.append(FramePair(u_filter=u, u_model=um.copy(), label=label,
                               recording_id=f"r{i:03d}", frame_index=0))
    return pairs


@pytest.fixture(scope="session")
def planted_flow():
    """Model flow at a fixed known parameter set, for recovery tests."""
    params = VocalFoldParams(0.5, 0.32, 0.4)
    return params, model_flow(params, steps=400)
