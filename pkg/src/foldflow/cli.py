"""Command-line entry point: synth, analyze, fit, train, eval, viz."""

from __future__ import annotations

import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from .config import ConfigError, PipelineConfig, config_help_text
from .evaluation import EvaluationError, cross_validate
from .pipeline import (analyze_recording, load_feature_dir, read_pair_file,
                       write_fit_csv, write_pair_file)
from .s2ap import (TrainConfig, load_checkpoint, s2ap_forward, save_checkpoint,
                   train)
from .signal_io import load_wav
from .synth_cohort import CohortSpec, generate_cohort
from .traceviz import render_trace_svg, write_trace_csv

EXIT_PARTIAL = 1
EXIT_INVALID = 2


def _log(msg):
    click.echo(msg, err=True)


def _load_config(config_path, overrides):
    try:
        cfg = PipelineConfig.load(config_path) if config_path else PipelineConfig()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must be key=value, got {item!r}")
            key, val = item.split("=", 1)
            cfg.set(key.strip(), val.strip())
        return cfg
    except (ConfigError, OSError) as exc:
        _log(f"config error: {exc}")
        sys.exit(EXIT_INVALID)


def _config_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="flat key = value config file")(fn)
    fn = click.option("-O", "--override", "overrides", multiple=True,
                      metavar="KEY=VALUE", help="override one config key")(fn)
    return fn


def _train_config(cfg: PipelineConfig, arch, pooling, extractor, epochs, lr,
                  batch_size, seed) -> TrainConfig:
    arch = arch if arch is not None else cfg["train.arch"]
    try:
        arch_tuple = tuple(int(v) for v in str(arch).split(","))
        if len(arch_tuple) != 3:
            raise ValueError("architecture must be l,k,f")
        return TrainConfig(
            arch=arch_tuple,
            pooling=(pooling if pooling is not None else cfg["train.pooling"]).lower(),
            extractor=extractor if extractor is not None else cfg["train.extractor"],
            epochs=epochs if epochs is not None else cfg["train.epochs"],
            learning_rate=lr if lr is not None else cfg["train.lr"],
            batch_size=batch_size if batch_size is not None else cfg["train.batch_size"],
            seed=seed if seed is not None else cfg["train.seed"],
        )
    except ValueError as exc:
        _log(f"invalid training configuration: {exc}")
        sys.exit(EXIT_INVALID)


@click.group(epilog=config_help_text())
def main():
    """Paired glottal-flow analysis and anomaly classification."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n", "n_speakers", type=int, default=None, help="speaker count")
@click.option("--pos", "positive_fraction", type=float, default=None)
@click.option("--seed", type=int, default=None)
@_config_options
def synth(out_dir, n_speakers, positive_fraction, seed, config_path, overrides):
    """Generate a synthetic labeled cohort (WAVs + manifest + ground truth)."""
    cfg = _load_config(config_path, overrides)
    try:
        spec = CohortSpec(
            n_speakers=n_speakers if n_speakers is not None else cfg["synth.n_speakers"],
            positive_fraction=(positive_fraction if positive_fraction is not None
                               else cfg["synth.positive_fraction"]),
            snr_db=cfg["synth.snr_db"], duration=cfg["synth.duration"],
            sample_rate=cfg["synth.sample_rate"],
            dt_per_sample=cfg["model.dt_per_sample"], x0=cfg["model.x0"],
            seed=seed if seed is not None else cfg["synth.seed"])
        cohort = generate_cohort(spec, out_dir)
    except ValueError as exc:
        _log(f"invalid cohort spec: {exc}")
        sys.exit(EXIT_INVALID)
    _log(f"wrote {len(cohort.recordings)} recordings to {out_dir}")


def _analyze_one(args):
    wav_path, speaker_id, label, cfg_dict, out_dir = args
    cfg = PipelineConfig(cfg_dict)
    rec = load_wav(wav_path, speaker_id=speaker_id, label=label)
    analyzed = analyze_recording(rec, cfg)
    out_dir = Path(out_dir)
    write_pair_file(analyzed, out_dir / f"{analyzed.recording_id}.gfw")
    write_fit_csv(analyzed, out_dir / f"{analyzed.recording_id}_fit.csv")
    return analyzed.recording_id, len(analyzed.pairs)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", type=int, default=1, show_default=True)
@_config_options
def analyze(manifest, out_dir, jobs, config_path, overrides):
    """Frame, inverse-filter and fit every recording in a manifest."""
    import csv as _csv

    cfg = _load_config(config_path, overrides)
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    base = Path(manifest).parent
    with open(manifest, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        _log("empty manifest")
        sys.exit(EXIT_INVALID)

    tasks = [(str(base / r["recording_path"]), r["speaker_id"], r["label"],
              cfg.as_dict(), str(out_path)) for r in rows]
    failures = 0
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_analyze_one, t) for t in tasks]
            for task, fut in zip(tasks, futures):
                try:
                    rid, n = fut.result()
                    _log(f"analyzed {rid}: {n} frames")
                except Exception as exc:
                    failures += 1
                    _log(f"FAILED {task[0]}: {exc}")
    else:
        for task in tasks:
            try:
                rid, n = _analyze_one(task)
                _log(f"analyzed {rid}: {n} frames")
            except Exception as exc:
                failures += 1
                _log(f"FAILED {task[0]}: {exc}")
    if failures:
        _log(f"{failures}/{len(tasks)} recordings failed")
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.option("--wav", required=True, type=click.Path(exists=True))
@click.option("--out", "out_prefix", required=True, type=click.Path())
@_config_options
def fit(wav, out_prefix, config_path, overrides):
    """Fit vocal-fold parameters for a single recording; writes <out>_fit.csv."""
    cfg = _load_config(config_path, overrides)
    rec = load_wav(wav)
    analyzed = analyze_recording(rec, cfg)
    write_fit_csv(analyzed, f"{out_prefix}_fit.csv")
    write_pair_file(analyzed, f"{out_prefix}.gfw")
    _log(f"fitted {len(analyzed.fit_rows)} frames from {wav}")


_TRAIN_OPTS = [
    click.option("--arch", default=None, help="CNN architecture l,k,f"),
    click.option("--pooling", type=click.Choice(["2ap", "s2ap"], case_sensitive=False),
                 default=None),
    click.option("--extractor/--no-extractor", "extractor", default=None),
    click.option("--epochs", type=int, default=None),
    click.option("--lr", type=float, default=None),
    click.option("--batch-size", type=int, default=None),
    click.option("--seed", type=int, default=None),
]


def _train_options(fn):
    for opt in reversed(_TRAIN_OPTS):
        fn = opt(fn)
    return fn


@main.command(name="train")
@click.option("--features", "feature_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "checkpoint", required=True, type=click.Path())
@_train_options
@_config_options
def train_cmd(feature_dir, checkpoint, arch, pooling, extractor, epochs, lr,
              batch_size, seed, config_path, overrides):
    """Train an attention-pooling classifier on analyzed features."""
    cfg = _load_config(config_path, overrides)
    tc = _train_config(cfg, arch, pooling, extractor, epochs, lr, batch_size, seed)
    try:
        pairs, _ = load_feature_dir(feature_dir)
        model = train(pairs, tc)
    except (FileNotFoundError, ValueError) as exc:
        _log(f"training failed: {exc}")
        sys.exit(EXIT_INVALID)
    save_checkpoint(model, tc, checkpoint)
    _log(f"saved checkpoint to {checkpoint}")


@main.command(name="eval")
@click.option("--features", "feature_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "report_path", required=True, type=click.Path())
@click.option("--k", type=int, default=None, help="fold count")
@click.option("--fold-seed", type=int, default=None)
@_train_options
@_config_options
def eval_cmd(feature_dir, report_path, k, fold_seed, arch, pooling, extractor,
             epochs, lr, batch_size, seed, config_path, overrides):
    """Speaker-stratified cross-validation; writes an EvalReport JSON."""
    cfg = _load_config(config_path, overrides)
    tc = _train_config(cfg, arch, pooling, extractor, epochs, lr, batch_size, seed)
    k = k if k is not None else cfg["eval.k"]
    fold_seed = fold_seed if fold_seed is not None else cfg["eval.seed"]
    try:
        pairs, speaker_of = load_feature_dir(feature_dir)
        report = cross_validate(pairs, speaker_of, tc, k=k, seed=fold_seed)
    except (FileNotFoundError, ValueError, EvaluationError) as exc:
        _log(f"evaluation failed: {exc}")
        sys.exit(EXIT_INVALID)
    Path(report_path).write_text(report.to_json())
    d = report.to_dict()
    _log(f"frame AUC {d['frame_level']['mean_auc']:.4f} "
         f"± {d['frame_level']['std_auc']:.4f}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--features", "feature_dir", required=True, type=click.Path(exists=True))
@click.option("--recording", "recording_id", required=True)
@click.option("--frame", "frame_index", type=int, required=True)
@click.option("--out", "out_prefix", required=True, type=click.Path())
def viz(checkpoint, feature_dir, recording_id, frame_index, out_prefix):
    """Render the five-panel attention trace for one analyzed frame."""
    model, _ = load_checkpoint(checkpoint)
    pair_path = Path(feature_dir) / f"{recording_id}.gfw"
    if not pair_path.exists():
        _log(f"no feature file for recording {recording_id}")
        sys.exit(EXIT_INVALID)
    analyzed = read_pair_file(pair_path)
    matching = [p for p in analyzed.pairs if p.frame_index == frame_index]
    if not matching:
        _log(f"frame {frame_index} not found in {pair_path}")
        sys.exit(EXIT_INVALID)
    _, trace = s2ap_forward(matching[0], model)
    write_trace_csv(trace, f"{out_prefix}.csv")
    render_trace_svg(trace, f"{out_prefix}.svg")
    _log(f"wrote {out_prefix}.csv and {out_prefix}.svg (p = {trace.z_p2:.4f})")


if __name__ == "__main__":
    main()
