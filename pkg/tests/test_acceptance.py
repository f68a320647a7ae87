"""Acceptance gate: one test per criterion, slowest last.

Criterion 9 regenerates the default 20-speaker cohort, analyzes it and runs
the full 3-fold cross-validation twice (S2AP and the no-extractor 2AP
baseline); expect roughly 12 minutes for the whole file.
"""

import itertools
import time

import numpy as np
import pytest

from foldflow.adles import FitOptions, adjoint_gradient, finite_diff_gradient, \
    fit_frame, model_flow
from foldflow.config import PipelineConfig
from foldflow.evaluation import (SpeakerLeakageError, cross_validate, roc_auc,
                                 speaker_stratified_folds)
from foldflow.inverse_filtering import iaif
from foldflow.phonation_model import (GlottalGeometry, VocalFoldParams,
                                      integrate_rk4, raw_glottal_flow)
from foldflow.pipeline import analyze_recording
from foldflow.s2ap import (AttentionWeights, FramePair, S2apModel,
                           TrainConfig, attention_step, bce_loss, init_model,
                           s2ap_backward, s2ap_forward)
from foldflow.synth_cohort import CohortSpec, generate_cohort, synth_speaker


def _report(criterion, ok, detail=""):
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {criterion} failed: {detail}"


def test_criterion_1_adjoint_matches_finite_differences():
    rng = np.random.default_rng(11)
    t0 = time.time()
    worst = 0.0
    for _ in range(50):
        target = model_flow(VocalFoldParams(rng.uniform(0.4, 0.8),
                                            rng.uniform(0.25, 0.5),
                                            rng.uniform(0.0, 1.0)),
                            steps=250)
        params = VocalFoldParams(rng.uniform(0.4, 0.8), rng.uniform(0.25, 0.5),
                                 rng.uniform(-1.0, 1.0))
        g_adj = adjoint_gradient(params, target)
        g_fd = finite_diff_gradient(params, target)
        worst = max(worst,
                    float(np.max(np.abs(g_adj - g_fd) / (np.abs(g_fd) + 1e-12))))
    elapsed = time.time() - t0
    _report(1, worst < 1e-4 and elapsed < 60,
            f"(worst rel err {worst:.2e}, {elapsed:.1f}s)")


def test_criterion_2_rk4_self_convergence_order():
    params = VocalFoldParams(0.5, 0.32, 0.0)
    init = (0.1, 0.1, 0.0, 0.0)
    T, dt = 20.0, 0.01
    states = {}
    for scale in (1, 2, 4):
        h = dt / scale
        traj = integrate_rk4(params, init=init, dt=h, steps=int(round(T / h)))
        states[scale] = traj.states[-1]
    e1 = np.linalg.norm(states[2] - states[1])
    e2 = np.linalg.norm(states[4] - states[2])
    ratio = e1 / e2
    _report(2, 12.0 <= ratio <= 20.0, f"(ratio {ratio:.2f})")


def test_criterion_3_planted_parameter_recovery():
    rng = np.random.default_rng(23)
    t0 = time.time()
    successes = 0
    trials = 20
    for _ in range(trials):
        truth = VocalFoldParams(rng.uniform(0.4, 0.7), rng.uniform(0.25, 0.45),
                                rng.uniform(0.2, 0.8))
        # dt = 0.05 over 400 samples spans ~20 time units so the target sits
        # on the limit cycle; short transient-only flows are non-identifiable
        target = model_flow(truth, dt=0.05, steps=399)
        res = fit_frame(target, VocalFoldParams(0.4, 0.25, 0.0),
                        FitOptions(dt=0.05))
        p = res.params
        # |delta| because the objective is invariant under delta -> -delta
        ok = (abs(p.alpha - truth.alpha) <= 0.1 * abs(truth.alpha)
              and abs(p.beta - truth.beta) <= 0.1 * abs(truth.beta)
              and abs(abs(p.delta) - truth.delta) <= 0.1 * truth.delta
              and res.loss < 1e-3)
        successes += ok
    elapsed = time.time() - t0
    _report(3, successes >= 0.9 * trials and elapsed < 300,
            f"({successes}/{trials} recovered, {elapsed:.0f}s)")


def test_criterion_4_s2ap_gradient_check():
    cfg = TrainConfig(arch=(1, 3, 4), seed=3)
    model = init_model(cfg)
    rng = np.random.default_rng(4)
    # break the structured init (ones/zeros/identity, output gain) so the
    # check exercises generic weights without sigmoid saturation
    for _, arr in model.param_tensors():
        arr += 0.1 * rng.standard_normal(arr.shape)
    model.attention_2.w_c[:] = 1.0 + 0.1 * rng.standard_normal(1)
    pair = FramePair(u_filter=rng.standard_normal(24),
                     u_model=rng.standard_normal(24), label=1)
    prob, _, cache = s2ap_forward(pair, model, want_cache=True)
    grads = s2ap_backward(prob - pair.label, model, cache)
    tensors = dict(model.param_tensors())
    h = 1e-5
    worst = 0.0
    for name, arr in tensors.items():
        g = grads[name]
        for idx in itertools.product(*(range(d) for d in arr.shape)):
            orig = arr[idx]
            arr[idx] = orig + h
            lp = bce_loss(s2ap_forward(pair, model)[0], pair.label)
            arr[idx] = orig - h
            lm = bce_loss(s2ap_forward(pair, model)[0], pair.label)
            arr[idx] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(g[idx]), 1e-6)
            worst = max(worst, abs(g[idx] - fd) / denom)
    _report(4, worst < 1e-3, f"(worst rel err {worst:.2e})")


def test_criterion_5_attention_invariants():
    rng = np.random.default_rng(5)
    ok = True
    for _ in range(1000):
        n_feat = int(rng.integers(2, 8))
        n_t = int(rng.integers(2, 16))
        z = rng.standard_normal((n_feat, n_t)) * rng.uniform(0.1, 4.0)
        w = AttentionWeights(w_a=rng.standard_normal(n_feat),
                             b_a=rng.standard_normal(n_feat),
                             w_c=rng.standard_normal(n_feat),
                             b_c=rng.standard_normal(n_feat))
        att, _, _ = attention_step(z, w, "feature")
        ok &= bool(np.all(np.abs(att.sum(axis=0) - 1.0) < 1e-6))
        wt = AttentionWeights(w_a=rng.standard_normal(1),
                              b_a=rng.standard_normal(1),
                              w_c=rng.standard_normal(1),
                              b_c=rng.standard_normal(1))
        att2, _, _ = attention_step(z[:1], wt, "time")
        ok &= bool(abs(att2.sum() - 1.0) < 1e-6)
        if not ok:
            break
    # z_p2 (a sigmoid output) is in [0, 1] for random full models
    for seed in range(25):
        cfg = TrainConfig(arch=(1, 3, 4), seed=seed)
        model = init_model(cfg)
        pair = FramePair(u_filter=rng.standard_normal(20),
                         u_model=rng.standard_normal(20), label=0)
        prob, _ = s2ap_forward(pair, model)
        ok &= 0.0 <= prob <= 1.0
    _report(5, ok)


def test_criterion_6_2ap_s2ap_collapse():
    rng = np.random.default_rng(6)
    cfg = TrainConfig(arch=(1, 3, 4), seed=7)
    s2 = init_model(cfg)
    # exact identity f3: pass-through convolution
    s2.f3.w[:] = 0.0
    s2.f3.w[0, 0, 1] = 1.0
    s2.f3.b[:] = 0.0
    two = S2apModel(conv_stack=s2.conv_stack, attention_1=s2.attention_1,
                    f3=None, attention_2=s2.attention_2, arch=s2.arch,
                    pooling="2ap")
    ok = True
    for _ in range(20):
        pair = FramePair(u_filter=rng.standard_normal(30),
                         u_model=rng.standard_normal(30), label=0)
        ok &= s2ap_forward(pair, s2)[0] == s2ap_forward(pair, two)[0]
    _report(6, ok)


def test_criterion_7_auc_oracle():
    rng = np.random.default_rng(7)

    def oracle(scores, labels):
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        total = 0.0
        for sp in pos:
            for sn in neg:
                total += 1.0 if sp > sn else (0.5 if sp == sn else 0.0)
        return total / (len(pos) * len(neg))

    ok = True
    for _ in range(100):
        n = int(rng.integers(4, 40))
        labels = np.zeros(n, dtype=int)
        labels[: int(rng.integers(1, n))] = 1
        rng.shuffle(labels)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.standard_normal(n), 1)  # force ties
        ok &= roc_auc(scores, labels) == oracle(scores, labels)
    _report(7, ok)


def test_criterion_8_speaker_leakage_guard():
    class Rec:
        def __init__(self, spk, label):
            self.speaker_id, self.label = spk, label

    recs = [Rec(f"s{i}", "positive" if i % 2 else "negative") for i in range(9)]
    folds = speaker_stratified_folds(recs, k=3, seed=0)
    disjoint = all(not (folds.train_speakers(f) & folds.test_speakers(f))
                   for f in range(folds.k))

    # the guard must fire on a violated assignment
    class Leaky(type(folds)):
        def train_speakers(self, fold):
            return super().train_speakers(fold) | self.test_speakers(fold)

    leaky = Leaky(k=folds.k, speaker_to_fold=folds.speaker_to_fold)
    from foldflow.evaluation import _assert_no_leakage
    fired = False
    try:
        _assert_no_leakage(leaky)
    except SpeakerLeakageError:
        fired = True
    _report(8, disjoint and fired)


def test_criterion_10_iaif_recovers_planted_flow():
    from foldflow.signal_io import frame_signal

    worst = 1.0
    for vowel in ("a", "i", "u"):
        spec = CohortSpec(vowels=(vowel,))
        rec, params, _ = synth_speaker(spec, 0, "negative")
        dt = spec.dt_per_sample / spec.sample_rate
        traj = integrate_rk4(params, init=(0.1, 0.1), dt=dt,
                             steps=len(rec.samples) - 1)
        flow = raw_glottal_flow(traj, GlottalGeometry(x0=spec.x0), rectify=True)
        frames = frame_signal(rec)
        i = frames.n_frames // 2
        est = iaif(frames.frames[i], rec.sample_rate).samples
        start = frames.start_indices[i]
        truth = flow[start: start + frames.window_len]
        truth = truth - truth.mean()
        xc = np.correlate(est, truth, "full")
        ncc = float(np.max(np.abs(xc))
                    / (np.linalg.norm(est) * np.linalg.norm(truth)))
        worst = min(worst, ncc)
    _report(10, worst >= 0.8, f"(worst NCC {worst:.3f})")


def test_criterion_11_cli_determinism(tmp_path):
    from click.testing import CliRunner
    from foldflow.cli import main

    def run(args):
        result = CliRunner().invoke(main, args)
        assert result.exit_code == 0, result.stderr or str(result.exception)

    fast = ["-O", "synth.duration=0.3", "-O", "synth.n_speakers=4"]
    outputs = []
    for tag in ("a", "b"):
        cohort = tmp_path / f"cohort_{tag}"
        feats = tmp_path / f"feats_{tag}"
        ckpt = tmp_path / f"model_{tag}.json"
        report = tmp_path / f"report_{tag}.json"
        run(["synth", "--out", str(cohort)] + fast)
        run(["analyze", "--manifest", str(cohort / "manifest.csv"),
             "--out", str(feats)] + fast)
        run(["train", "--features", str(feats), "--out", str(ckpt),
             "--epochs", "2"])
        run(["eval", "--features", str(feats), "--out", str(report),
             "--k", "2", "--epochs", "1"])
        files = {p.relative_to(cohort): p.read_bytes()
                 for p in sorted(cohort.iterdir())}
        files.update({p.relative_to(feats): p.read_bytes()
                      for p in sorted(feats.iterdir())})
        files["checkpoint"] = ckpt.read_bytes()
        files["report"] = report.read_bytes()
        outputs.append(files)
    _report(11, outputs[0] == outputs[1])


@pytest.fixture(scope="module")
def benchmark_reports(tmp_path_factory):
    t0 = time.time()
    out = tmp_path_factory.mktemp("cohort")
    cohort = generate_cohort(CohortSpec(), out_dir=out)
    cfg = PipelineConfig()
    pairs, speaker_of = [], {}
    for rec in cohort.recordings:
        analyzed = analyze_recording(rec, cfg)
        speaker_of[analyzed.recording_id] = analyzed.speaker_id
        for p in analyzed.pairs:
            pairs.append(p)
    s2ap_report = cross_validate(pairs, speaker_of, TrainConfig(), k=3, seed=0)
    baseline = cross_validate(pairs, speaker_of,
                              TrainConfig(pooling="2ap", extractor=False),
                              k=3, seed=0)
    return s2ap_report, baseline, time.time() - t0


def test_criterion_9_end_to_end_benchmark(benchmark_reports):
    s2ap_report, baseline, elapsed = benchmark_reports
    mean_s2ap = float(np.mean(s2ap_report.frame_auc))
    mean_2ap = float(np.mean(baseline.frame_auc))
    ok = mean_s2ap >= 0.85 and mean_s2ap >= mean_2ap and elapsed < 900
    _report(9, ok, f"(S2AP {mean_s2ap:.3f}, 2AP {mean_2ap:.3f}, {elapsed:.0f}s)")
