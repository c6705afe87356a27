"""Acceptance suite: one test per release criterion, each printing a PASS line
with its measured numbers. The benchmark fixture trains every study arm once
per seed and is shared across the criteria that read it.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from glancevad.ablate import (
    default_benchmark_synth_config,
    default_benchmark_train_config,
    perturbed_glances,
    prepare_benchmark,
    run_arm,
)
from glancevad.cli import main as cli_main
from glancevad.core import make_rng
from glancevad.dataio import load_glances
from glancevad.metrics import average_precision, roc_auc
from glancevad.mining import MiningConfig, mine
from glancevad.scorer import ScorerConfig, ScorerModel, backward
from glancevad.splatting import KernelTrack, render

from test_metrics import brute_force_ap, brute_force_auc, random_instance
from test_mining import literal_mining
from test_scorer import finite_difference_grads, relative_error
from test_splatting import brute_force_render, random_track

SEEDS = (0, 1, 2)


# ---------------------------------------------------------------------------
# shared benchmark runs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    """Mean test-set metrics per study arm over the benchmark seeds."""
    root = tmp_path_factory.mktemp("benchmark")
    arms: dict[str, list] = {}
    timings: dict[str, float] = {}

    def record(name, report, elapsed):
        arms.setdefault(name, []).append(report)
        timings[name] = timings.get(name, 0.0) + elapsed

    for seed in SEEDS:
        data = prepare_benchmark(root / f"seed{seed}", default_benchmark_synth_config(seed=seed))
        cfg = default_benchmark_train_config(seed=seed)
        variants = {
            "full": cfg,
            "weak": replace(cfg, glance_supervision=False),
            "no_mining": replace(cfg, mining=False),
            "no_gaussian": replace(cfg, gaussian_labels=False),
        }
        for name, variant in variants.items():
            tic = time.monotonic()
            record(name, run_arm(data, variant), time.monotonic() - tic)
        for shift in (5, 25):
            sets = perturbed_glances(data, shift, seed)
            tic = time.monotonic()
            record(f"jitter{shift}", run_arm(data, cfg, sets), time.monotonic() - tic)

    means = {
        name: {
            metric: float(np.mean([getattr(r, metric) for r in reports]))
            for metric in ("auc", "ap", "auc_abnormal", "ap_abnormal")
        }
        for name, reports in arms.items()
    }
    return {"means": means, "timings": timings}


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_gradient_correctness():
    """Analytic gradients of l_mil, l_abn, l_nor and l_total all match central
    finite differences at step 1e-4 within relative error 1e-4."""
    from glancevad.scorer import forward, topk_count

    rng = make_rng(2024)
    tic = time.monotonic()
    cases = 0
    worst = 0.0

    def compare(analytic: dict, numeric: dict, component: str):
        nonlocal worst
        for name in analytic:
            a = np.atleast_1d(analytic[name]).reshape(-1)
            n = np.atleast_1d(numeric[name][component]).reshape(-1)
            for ai, ni in zip(a, n):
                err = relative_error(ai, ni)
                worst = max(worst, err)
                assert err <= 1e-4, f"{component}/{name}: {err:.2e}"

    while cases < 20:
        t = int(rng.integers(2, 9))
        d = int(rng.integers(2, 6))
        config = ScorerConfig(
            feature_dim=d,
            hidden_dims=(int(rng.integers(3, 7)), int(rng.integers(2, 6))),
            temporal_width=int(rng.choice([1, 3])),
        )
        model = ScorerModel.initialize(config, seed=cases)
        features = rng.standard_normal((t, d))
        rendered = rng.random(t)

        # finite differences are only a valid oracle away from the top-k
        # pooling boundary; skip instances with a near-tied k-th score
        scores = forward(model, features)
        k = topk_count(t, config.topk_divisor)
        ordered = np.sort(scores)[::-1]
        if k < t and ordered[k - 1] - ordered[k] < 1e-3:
            continue
        cases += 1

        _, g_mil = backward(model, features, 1, None)
        _, g_full = backward(model, features, 1, rendered)
        _, g_nor = backward(model, features, 0, None)
        g_abn = {name: g_full[name] - g_mil[name] for name in g_full}

        fd_abnormal = finite_difference_grads(model, features, 1, rendered)
        fd_normal = finite_difference_grads(model, features, 0, None)

        compare(g_mil, fd_abnormal, "l_mil")
        compare(g_abn, fd_abnormal, "l_abn")
        compare(g_full, fd_abnormal, "l_total")
        compare(g_nor, fd_normal, "l_nor")
        compare(g_nor, fd_normal, "l_total")

    elapsed = time.monotonic() - tic
    assert elapsed < 10.0
    print(f"\n[acceptance] gradient correctness PASS: {cases} instances, "
          f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_mining_oracle():
    rng = make_rng(77)
    tic = time.monotonic()
    for _ in range(1000):
        t = int(rng.integers(1, 65))
        scores = np.round(rng.random(t), 2)
        n_glances = int(rng.integers(1, min(4, t) + 1))
        glances = sorted(rng.choice(t, size=n_glances, replace=False).tolist())
        alpha = float(rng.uniform(0.05, 1.0))
        assert mine(scores, glances, MiningConfig(alpha=alpha)) == literal_mining(
            scores, glances, alpha
        )
    elapsed = time.monotonic() - tic
    assert elapsed < 5.0
    print(f"\n[acceptance] mining oracle PASS: 1000 instances, {elapsed:.1f}s")


def test_rendering_invariants():
    rng = make_rng(88)
    worst = 0.0
    for _ in range(1000):
        track = random_track(rng, max_len=32)
        out = render(track)
        assert out.min() >= 0.0 and out.max() <= 1.0
        diff = np.max(np.abs(out - brute_force_render(track)))
        worst = max(worst, diff)
        assert diff <= 1e-12
        # severity monotonicity: any raised severity never lowers the track
        zeros = np.flatnonzero(track.severities == 0.0)
        if zeros.size:
            raised = track.severities.copy()
            raised[int(rng.choice(zeros))] = 1.0
            assert np.all(render(KernelTrack(raised, track.radii, track.family)) >= out - 1e-15)
    # symmetry and strict decay for a centered unit kernel, every family
    from glancevad.splatting import KernelFamily, init_kernels

    for family in KernelFamily:
        track = init_kernels([12], 25, 0.07, family)
        out = render(track)
        assert out[12] == 1.0
        for d in range(1, 13):
            assert out[12 + d] == out[12 - d]
            assert out[12 + d] < out[12 + d - 1]
    print(f"\n[acceptance] rendering invariants PASS: 1000 tracks, "
          f"max brute-force deviation {worst:.1e}")


def test_metric_oracle():
    rng = make_rng(99)
    for _ in range(500):
        scores, labels = random_instance(rng, max_n=200)
        assert roc_auc(scores, labels) == brute_force_auc(scores.tolist(), labels.tolist())
        assert average_precision(scores, labels) == brute_force_ap(
            scores.tolist(), labels.tolist()
        )
    print("\n[acceptance] metric oracle PASS: 500 instances, exact equality incl. ties")


def test_directional_end_to_end(benchmark):
    means = benchmark["means"]
    runtime = benchmark["timings"]["full"] + benchmark["timings"]["weak"]
    ap_gap = means["full"]["ap"] - means["weak"]["ap"]
    auc_a_gap = means["full"]["auc_abnormal"] - means["weak"]["auc_abnormal"]
    print(
        f"\n[acceptance] directional end-to-end "
        f"{'PASS' if ap_gap >= 0.05 and auc_a_gap >= 0.05 else 'FAIL'}: "
        f"AP {means['weak']['ap']:.3f} -> {means['full']['ap']:.3f} (+{ap_gap:.3f}), "
        f"AUC_A {means['weak']['auc_abnormal']:.3f} -> "
        f"{means['full']['auc_abnormal']:.3f} (+{auc_a_gap:.3f}), "
        f"runtime {runtime:.0f}s"
    )
    assert ap_gap >= 0.05
    assert auc_a_gap >= 0.05
    assert runtime < 300.0


def test_component_ablation_ordering(benchmark):
    means = benchmark["means"]
    full = means["full"]["ap"]
    no_gaussian = means["no_gaussian"]["ap"]
    no_mining = means["no_mining"]["ap"]
    ok = full >= no_gaussian and full >= no_mining
    print(f"\n[acceptance] component ablation {'PASS' if ok else 'FAIL'}: mean AP over seeds")
    header = f"  {'arm':<14} {'auc':>7} {'ap':>7} {'auc_a':>7} {'ap_a':>7}"
    print(header)
    for arm in ("weak", "no_gaussian", "no_mining", "full"):
        m = means[arm]
        print(
            f"  {arm:<14} {m['auc']:7.4f} {m['ap']:7.4f} "
            f"{m['auc_abnormal']:7.4f} {m['ap_abnormal']:7.4f}"
        )
    assert full >= no_gaussian
    assert full >= no_mining


def test_perturbation_robustness(benchmark):
    means = benchmark["means"]
    ap0 = means["full"]["ap"]  # zero jitter is the unperturbed full arm
    ap5 = means["jitter5"]["ap"]
    ap25 = means["jitter25"]["ap"]
    ok = ap0 >= ap5 >= ap25 and (ap0 - ap5) <= 0.02
    print(
        f"\n[acceptance] perturbation robustness {'PASS' if ok else 'FAIL'}: "
        f"AP at jitter 0/5/25 snippets = {ap0:.4f}/{ap5:.4f}/{ap25:.4f}, "
        f"drop@5 = {ap0 - ap5:.4f}"
    )
    assert ap0 >= ap5 >= ap25
    assert ap0 - ap5 <= 0.02


def test_mining_monotonicity_and_alpha_one():
    rng = make_rng(123)
    for _ in range(300):
        t = int(rng.integers(2, 64))
        scores = rng.random(t)
        glances = sorted(rng.choice(t, size=min(3, t), replace=False).tolist())
        a1, a2 = sorted(rng.uniform(0.05, 1.0, size=2))
        low = mine(scores, glances, MiningConfig(alpha=a1))
        high = mine(scores, glances, MiningConfig(alpha=a2))
        assert high <= low
        degenerate = mine(scores, glances, MiningConfig(alpha=1.0))
        assert degenerate <= set(glances)
    print("\n[acceptance] mining monotonicity in alpha and alpha=1 degenerate case PASS")


def test_determinism_of_synth_train_eval(tmp_path):
    synth_cfg = {
        "num_normal": 4, "num_abnormal": 4, "num_normal_test": 2, "num_abnormal_test": 2,
        "snippets_range": [24, 32], "feature_dim": 6, "intervals_range": [1, 1],
        "interval_len_range": [6, 10], "num_anomaly_modes": 2, "seed": 5,
    }
    train_cfg = {
        "resample_len": 24, "batch_pairs": 2, "lr": 5e-3, "epochs": 4,
        "hidden_dims": [8, 6], "seed": 5,
    }
    (tmp_path / "synth.json").write_text(json.dumps(synth_cfg))
    (tmp_path / "train.json").write_text(json.dumps(train_cfg))

    artifacts = []
    for run in ("one", "two"):
        base = tmp_path / run
        data = base / "data"
        assert cli_main(["synth", "--config", str(tmp_path / "synth.json"),
                         "--out", str(data)]) == 0
        ckpt = base / "model.ckpt"
        assert cli_main(["train", "--manifest", str(data / "manifest.json"),
                         "--glances", str(data / "glances.json"),
                         "--config", str(tmp_path / "train.json"),
                         "--out", str(ckpt)]) == 0
        report = base / "report.json"
        assert cli_main(["eval", "--checkpoint", str(ckpt),
                         "--manifest", str(data / "manifest.json"),
                         "--out", str(report)]) == 0
        artifacts.append((ckpt.read_bytes(), report.read_bytes()))
    assert artifacts[0][0] == artifacts[1][0], "checkpoints differ between identical runs"
    assert artifacts[0][1] == artifacts[1][1], "reports differ between identical runs"
    print("\n[acceptance] determinism PASS: byte-identical checkpoint and report across reruns")


def test_annotation_roundtrip_secondary(tmp_path):
    """[SECONDARY] scripted API session drives dataio validation and render."""
    from fastapi.testclient import TestClient

    from glancevad.dataio import SynthConfig, generate_synthetic
    from glancevad.service import create_app

    data_dir = tmp_path / "data"
    manifest = generate_synthetic(
        SynthConfig(
            num_normal=1, num_abnormal=2, num_normal_test=1, num_abnormal_test=1,
            snippets_range=(24, 32), feature_dim=5, intervals_range=(1, 1),
            interval_len_range=(6, 10), num_anomaly_modes=2, seed=9,
        ),
        data_dir,
    )
    abnormal_train = [v.video_id for v in manifest.split("train") if v.label == 1]
    assert len(abnormal_train) == 2
    glance_path = tmp_path / "annotated.json"
    app = create_app(manifest, glances_path=glance_path)
    with TestClient(app) as client:
        # mark three glances across two videos, delete one, export
        assert client.post(
            f"/api/videos/{abnormal_train[0]}/glances", json={"frame": 10}
        ).status_code == 201
        assert client.post(
            f"/api/videos/{abnormal_train[0]}/glances", json={"frame": 200}
        ).status_code == 201
        assert client.post(
            f"/api/videos/{abnormal_train[1]}/glances", json={"frame": 42}
        ).status_code == 201
        assert client.delete(
            f"/api/videos/{abnormal_train[0]}/glances/200"
        ).status_code == 204
        export = client.get("/api/export")
        assert export.status_code == 200

    exported = tmp_path / "export.json"
    exported.write_bytes(export.content)
    records = load_glances(exported, manifest)  # dataio validation
    assert [r.frame for r in records[abnormal_train[0]]] == [10]
    assert [r.frame for r in records[abnormal_train[1]]] == [42]

    tracks_path = tmp_path / "tracks.json"
    assert cli_main(["render", "--manifest", str(data_dir / "manifest.json"),
                     "--glances", str(exported), "--out", str(tracks_path)]) == 0
    tracks = json.loads(tracks_path.read_text())
    assert set(tracks) == set(abnormal_train)
    print("\n[acceptance] annotation round-trip (secondary) PASS: "
          "3 marks, 1 delete, export -> dataio -> render")
