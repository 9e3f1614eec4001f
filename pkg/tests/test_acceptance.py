"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or as a script with
``python3 tests/test_acceptance.py``. The end-to-end run (criterion 8) trains
the full-size reference network and takes roughly 25 minutes on one CPU core.
"""
import math
import sys
import time

import numpy as np
import pytest
import torch

from lidardiff.denoiser import OptimizerConfig, ReferenceUNetConfig, build_reference_unet
from lidardiff.diffusion import DiffusionConfig, forward_sample, sample, to_image_range, train_loop
from lidardiff.embedding import EmbeddingSpec, embed_batch, fourier_embed, harmonic_number, sinusoidal_embed
from lidardiff.metrics import FeatureStats, evaluate, frechet_distance, jsd, mmd_rbf
from lidardiff.pointcloud import PointCloud
from lidardiff.projection import (ProjectionMeta, backproject_equirect, cartesian_to_spherical,
                                  equirect_bins, project_equirect, spherical_to_cartesian)
from lidardiff.schedule import KINDS, make_schedule, snr, snr_crossing_step, time_dependent_betas
from lidardiff.toydata import toy_range_images

E2E_TRAIN_STEPS = 1500
E2E_SAMPLES = 16
E2E_BUDGET_S = 30 * 60


def report(request, number, ok, elapsed, limit, detail=""):
    line = (f"criterion {number}: {'PASS' if ok and elapsed < limit else 'FAIL'} "
            f"({elapsed:.2f} s, limit {limit:g} s) {detail}")
    capman = request.config.pluginmanager.getplugin("capturemanager") if request else None
    if capman:
        with capman.global_and_fixture_disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line
    assert elapsed < limit, line


def test_criterion_1_schedule_oracles(request):
    t0 = time.perf_counter()
    ok = True
    for kind in KINDS:
        s = make_schedule(kind, 1000, 1e-4, 0.02)
        ok &= bool(np.all((s.betas > 0) & (s.betas < 1)) and np.all(np.diff(s.alpha_bars) < 0))
    b = time_dependent_betas(1000, 1e-4, 0.02)
    t = np.arange(1000)
    slope, icpt = np.polyfit(t, np.log(b), 1)
    ok &= bool(np.max(np.abs(np.log(b) - (slope * t + icpt))) < 1e-12)
    ok &= b[0] == 1e-4 and b[-1] == 0.02
    lin = make_schedule("linear")
    ok &= lin.betas[0] == 1e-4 and lin.betas[-1] == 0.02
    report(request, 1, ok, time.perf_counter() - t0, 1)


def test_criterion_2_snr_ordering(request):
    t0 = time.perf_counter()
    steps = {k: snr_crossing_step(snr(make_schedule(k, 1000, 1e-4, 0.02)), 0.1)
             for k in ("time-dependent", "linear", "constant")}
    ok = steps["time-dependent"] > steps["linear"] > steps["constant"]
    report(request, 2, ok, time.perf_counter() - t0, 1, str(steps))


def test_criterion_3_embedding_oracles(request):
    t0 = time.perf_counter()
    ok = True
    for N in (1, 2, 4, 8):
        ok &= bool(np.max(np.abs(fourier_embed(0, EmbeddingSpec(d=128, N=N)) - harmonic_number(N))) <= 1e-12)
    ts = np.arange(1001)
    f1 = fourier_embed(ts, EmbeddingSpec(d=128, N=1))
    s = sinusoidal_embed(ts, EmbeddingSpec(d=128, kind="sinusoidal"))
    ok &= bool(np.max(np.abs(f1[:, 0::2] - (s[:, 0::2] + s[:, 1::2]))) <= 1e-12)
    e = embed_batch(ts, EmbeddingSpec(d=128, N=4))
    d2 = (e ** 2).sum(1)[:, None] + (e ** 2).sum(1)[None] - 2 * e @ e.T
    np.fill_diagonal(d2, np.inf)
    distinct = len({row.tobytes() for row in e}) == len(ts)
    ok &= distinct and bool(d2.min() > 1e-8)
    report(request, 3, ok, time.perf_counter() - t0, 5, f"min sq. separation {d2.min():.3g}")


def test_criterion_4_projection_round_trip(request):
    t0 = time.perf_counter()
    meta = ProjectionMeta()
    h, w = meta.resolution
    dtheta, dphi = (meta.theta_max - meta.theta_min) / h, 2 * math.pi / w
    rng = np.random.default_rng(0)
    ok, worst = True, 0.0
    for _ in range(100):
        n = 2000
        sph = np.column_stack([rng.uniform(meta.theta_min, meta.theta_max, n),
                               rng.uniform(-math.pi, math.pi, n), rng.uniform(1.0, meta.d_max * 0.99, n)])
        xyz = spherical_to_cartesian(sph)
        back = cartesian_to_spherical(xyz)
        worst = max(worst, float(np.max(np.abs(spherical_to_cartesian(back) - xyz))))
        img = project_equirect(PointCloud(xyz), meta)
        rec = cartesian_to_spherical(backproject_equirect(img).xyz)
        ok &= len(rec) == np.count_nonzero(img.data)
        # the nearest source point in each pixel is the one the pixel stores
        row, col = equirect_bins(back[:, 0], back[:, 1], meta)
        flat = row * w + col
        order = np.lexsort((back[:, 2], flat))
        pixels, first = np.unique(flat[order], return_index=True)
        rrow, rcol = equirect_bins(rec[:, 0], rec[:, 1], meta)
        src = back[order[first[np.searchsorted(pixels, rrow * w + rcol)]]]
        ok &= bool(np.all(pixels[np.searchsorted(pixels, rrow * w + rcol)] == rrow * w + rcol))
        ok &= bool(np.all(np.abs(src[:, 0] - rec[:, 0]) <= dtheta / 2 + 1e-9))
        dp = np.abs(np.angle(np.exp(1j * (src[:, 1] - rec[:, 1]))))
        ok &= bool(np.all(dp <= dphi / 2 + 1e-9))
        ok &= bool(np.all(np.abs(src[:, 2] - rec[:, 2]) <= meta.d_max * 2.0 ** -23))
    ok &= worst < 1e-9
    report(request, 4, ok, time.perf_counter() - t0, 10, f"cartesian round-trip error {worst:.2e}")


def test_criterion_5_forward_statistics(request):
    t0 = time.perf_counter()
    s = make_schedule("linear", 1000)
    rng = np.random.default_rng(0)
    x0 = np.linspace(-1, 1, 8)
    ok = True
    for t in (100, 500, 900):
        draws = forward_sample(np.broadcast_to(x0, (10_000, 8)), t, rng.normal(size=(10_000, 8)), s)
        ab = s.alpha_bars[t - 1]
        se = math.sqrt((1 - ab) / len(draws))
        ok &= bool(np.all(np.abs(draws.mean(0) - math.sqrt(ab) * x0) < 3 * se))
        ok &= bool(np.all(np.abs(draws.var(0) / (1 - ab) - 1) < 0.05))
    report(request, 5, ok, time.perf_counter() - t0, 30)


def test_criterion_6_gradient_check(request):
    t0 = time.perf_counter()
    cfg = ReferenceUNetConfig(base_channels=4, depth=2, dropout_rate=0.0, embed_dim=8)
    model = build_reference_unet(cfg, seed=1).double()
    model.eval()
    g = torch.Generator().manual_seed(2)
    x = torch.randn(1, 1, 8, 16, generator=g, dtype=torch.float64)
    e = torch.randn(1, 8, generator=g, dtype=torch.float64)
    target = torch.randn(1, 1, 8, 16, generator=g, dtype=torch.float64)

    def loss():
        return torch.mean((target - model(x, e)) ** 2)

    model.zero_grad()
    loss().backward()
    worst, h = 0.0, 1e-5
    for p in model.parameters():
        flat, grad = p.data.view(-1), p.grad.view(-1)
        for i in torch.randperm(flat.numel(), generator=g)[:3].tolist():
            old = flat[i].item()
            flat[i] = old + h
            up = loss().item()
            flat[i] = old - h
            down = loss().item()
            flat[i] = old
            numeric = (up - down) / (2 * h)
            analytic = grad[i].item()
            # entries whose true gradient is zero (biases ahead of GroupNorm) are compared absolutely
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))
    report(request, 6, worst < 1e-3, time.perf_counter() - t0, 60, f"max rel. error {worst:.2e}")


def test_criterion_7_metric_oracles(request):
    t0 = time.perf_counter()
    X = np.random.default_rng(0).normal(size=(20, 6))
    v_jsd = jsd([1, 0, 0], [0, 0, 1])
    v_fd = frechet_distance(FeatureStats(np.zeros(1), np.eye(1)), FeatureStats(np.full(1, 3.0), np.full((1, 1), 4.0)))
    v_mmd = mmd_rbf(X, X)
    ok = abs(v_jsd - math.log(2)) <= 1e-9 and abs(v_fd - 10) <= 1e-9 and abs(v_mmd) <= 1e-12
    report(request, 7, ok, time.perf_counter() - t0, 5, f"jsd {v_jsd:.12f} frechet {v_fd:.12f} mmd {v_mmd:.1e}")


@pytest.fixture(scope="module")
def e2e_run():
    torch.set_num_threads(1)
    t0 = time.perf_counter()
    data = toy_range_images(500, seed=0)
    train, val, test = data[:400], data[400:450], data[450:]
    schedule = make_schedule("time-dependent", 1000)
    spec = EmbeddingSpec(d=128, N=4)
    model = build_reference_unet(ReferenceUNetConfig(base_channels=32, depth=3, dropout_rate=0.1,
                                                     embed_dim=128), seed=0)
    cfg = DiffusionConfig(schedule, embedding=spec)
    res = train_loop(model, train, cfg, epochs=100, batch_size=4, val_images=val, patience=0,
                     opt_cfg=OptimizerConfig(learning_rate=2e-4), max_steps=E2E_TRAIN_STEPS)
    model.load_state_dict(res.best_state)
    out = {"test": test[:, 0]}
    for steps in (1000, 800):
        c = DiffusionConfig(schedule, T_sample=steps, embedding=spec, rng_seed=5)
        t1 = time.perf_counter()
        out[steps] = sample(model, c, (E2E_SAMPLES, 1, 32, 128)).numpy()[:, 0]
        out[f"time_{steps}"] = time.perf_counter() - t1
    # the full-noise row: the sampler's starting noise seen through the same output map
    x_T = torch.randn((E2E_SAMPLES, 1, 32, 128), generator=torch.Generator().manual_seed(5))
    out["noise"] = to_image_range(x_T).numpy()[:, 0]
    out["elapsed"] = time.perf_counter() - t0
    return out


@pytest.mark.slow
def test_criterion_8_end_to_end(request, e2e_run):
    base = evaluate(e2e_run["noise"], e2e_run["test"])
    ok, parts = True, [f"noise jsd {base.jsd:.4f} frechet {base.frechet:.3f}"]
    for steps in (1000, 800):
        r = evaluate(e2e_run[steps], e2e_run["test"])
        ok &= r.jsd <= 0.5 * base.jsd and r.frechet <= 0.5 * base.frechet
        parts.append(f"{steps}-step jsd {r.jsd:.4f} frechet {r.frechet:.3f} ({e2e_run[f'time_{steps}']:.1f} s)")
    ok &= e2e_run["time_800"] < e2e_run["time_1000"]
    report(request, 8, ok, e2e_run["elapsed"], E2E_BUDGET_S, "; ".join(parts))


def test_criterion_9_cli_determinism(request, tmp_path):
    import json

    from lidardiff.cli import main
    from lidardiff.toydata import as_range_images

    t0 = time.perf_counter()
    data = tmp_path / "data"
    data.mkdir()
    for i, img in enumerate(as_range_images(toy_range_images(10, seed=2))):
        img.save(data / f"scan_{i:03d}.lpci")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schedule": {"kind": "ramp", "steps": 100, "extras": {"n": 5}},
                               "embedding": {"d": 16}, "denoiser": {"base_channels": 8, "depth": 2},
                               "training": {"epochs": 1}}))
    ckpt = tmp_path / "model.lpci"
    assert main(["train", "--data", str(data), "--out", str(ckpt), "--config", str(cfg)]) == 0
    runs = []
    for name in ("a", "b"):
        assert main(["sample", "--checkpoint", str(ckpt), "--count", "4", "--seed", "7",
                     "--out", str(tmp_path / name)]) == 0
        runs.append([p.read_bytes() for p in sorted((tmp_path / name).glob("sample_*.lpci"))])
    ok = len(runs[0]) == 4 and runs[0] == runs[1]
    report(request, 9, ok, time.perf_counter() - t0, 120)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
