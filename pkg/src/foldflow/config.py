"""Flat key-value pipeline configuration with documented defaults."""

from __future__ import annotations

from pathlib import Path


class ConfigError(Exception):
    pass


def _bool(s):
    if isinstance(s, bool):
        return s
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (default, parser, help)
DEFAULTS = {
    "iaif.tract_order": (0, int, "vocal-tract LPC order; 0 = round(fs/1000)+2"),
    "iaif.glottal_order": (4, int, "glottal LPC order in the refinement pass"),
    "iaif.leak": (0.99, float, "leaky integrator coefficient"),
    "model.alpha0": (0.4, float, "initial coupling coefficient for fitting"),
    "model.beta0": (0.25, float, "initial mass/damping coefficient for fitting"),
    "model.delta0": (0.0, float, "initial asymmetry coefficient for fitting"),
    "model.x0": (0.1, float, "half rest glottal width"),
    "model.rectify": (True, _bool, "clamp model flow at glottal closure"),
    "model.dt_per_sample": (400.0, float,
                            "oscillator time units per audio sample interval; "
                            "simulation dt = dt_per_sample / sample_rate"),
    "fit.max_iters": (500, int, "max gradient-descent iterations per frame"),
    "fit.grad_tol": (1e-6, float, "gradient-norm stopping tolerance"),
    "fit.loss_tol": (1e-8, float, "relative loss-change stopping tolerance"),
    "fit.warm_start": (False, _bool, "seed each frame fit from the previous frame"),
    "fit.lag_align": (True, _bool, "phase-align the model flow window to the target"),
    "fit.alpha_max": (2.0, float, "upper box bound on alpha during the fit"),
    "fit.beta_max": (2.0, float, "upper box bound on beta during the fit"),
    "fit.burn_steps": (-1, int, "objective burn-in samples; -1 = one frame length"),
    "fit.delta_ridge": (0.003, float,
                        "ridge penalty on delta so it leaves 0 only when the "
                        "data demand it"),
    "frame.window_ms": (50.0, float, "analysis window length"),
    "frame.hop_ms": (25.0, float, "analysis window hop"),
    "train.arch": ("2,5,64", str, "CNN architecture l,k,f"),
    "train.pooling": ("s2ap", str, "pooling variant: 2ap or s2ap"),
    "train.extractor": (True, _bool, "use the CNN feature extractor f1"),
    "train.lr": (1e-2, float, "SGD learning rate"),
    "train.epochs": (150, int, "training epochs"),
    "train.batch_size": (8, int, "minibatch size"),
    "train.seed": (0, int, "training seed"),
    "eval.k": (3, int, "cross-validation fold count"),
    "eval.seed": (0, int, "fold-assignment seed"),
    "synth.n_speakers": (20, int, "synthetic cohort size"),
    "synth.positive_fraction": (0.5, float, "fraction of positive speakers"),
    "synth.snr_db": (30.0, float, "additive-noise SNR in dB"),
    "synth.duration": (1.0, float, "recording length in seconds"),
    "synth.sample_rate": (8000, int, "synthesis sample rate"),
    "synth.seed": (0, int, "cohort seed"),
}


class PipelineConfig:
    """All iaif.*, model.*, fit.*, frame.*, train.*, eval.*, synth.* keys."""

    def __init__(self, overrides: dict | None = None):
        self._values = {k: v[0] for k, v in DEFAULTS.items()}
        if overrides:
            for key, val in overrides.items():
                self.set(key, val)

    def set(self, key: str, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        parser = DEFAULTS[key][1]
        try:
            self._values[key] = parser(value) if isinstance(value, str) else parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def as_dict(self) -> dict:
        return dict(self._values)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        """Parse a flat `key = value` file; '#' starts a comment."""
        cfg = cls()
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            cfg.set(key, val)
        return cfg


def config_help_text() -> str:
    lines = ["Config keys (key = default): "]
    for key, (default, _, help_) in DEFAULTS.items():
        lines.append(f"  {key} = {default}  ({help_})")
    return "\n".join(lines)
