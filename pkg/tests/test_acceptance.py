"""Acceptance suite: one test per criterion, each with its own runtime budget.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from datasets import qc_tree
from hilite import diffusion, metrics, prior, pyramid, qc, synthetic
from oracles import l1_direct, otsu_bruteforce, psnr_direct, rmse_direct, ssim_direct, tv_direct


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f}s, budget {self.seconds}s"


@pytest.mark.criterion(1, "pyramid perfect reconstruction")
def test_pyramid_perfect_reconstruction():
    rng = np.random.default_rng(101)
    # both ends of the size range plus random sizes in between
    shapes = [(5, 7), (129, 257)] + [(int(rng.integers(5, 130)), int(rng.integers(7, 258))) for _ in range(198)]
    worst = 0.0
    with Budget(30):
        for i, (h, w) in enumerate(shapes):
            channels = 3 if i % 2 else 1
            img = rng.random((h, w, channels) if channels == 3 else (h, w)).astype(np.float32)
            depth = int(rng.choice([d for d in (1, 2, 3) if d <= pyramid.max_depth(h, w)]))
            err = float(np.abs(pyramid.reconstruct(pyramid.decompose(img, depth)) - img).max())
            worst = max(worst, err)
    assert worst <= 1e-6, f"max reconstruction error {worst}"


def _random_soft_mask(rng, i):
    h, w = int(rng.integers(1, 20)), int(rng.integers(1, 20))
    kind = i % 5
    if kind == 0:
        m = rng.random((h, w))
    elif kind == 1:
        m = rng.beta(0.3, 0.3, (h, w))
    elif kind == 2:
        # stretched-residual look: mostly zero with a bright tail
        m = np.where(rng.random((h, w)) < 0.8, 0.0, rng.random((h, w)))
    elif kind == 3:
        m = rng.integers(0, 256, (h, w)) / 255.0
    else:
        m = rng.integers(0, 257, (h, w)) / 256.0  # exactly on bin edges
    return m.astype(np.float32) if i % 2 else m


def _adversarial_masks():
    cases = [np.full((4, 4), v) for v in (0.0, 1 / 256, 0.5, 1.0)]
    cases.append(np.array([[0.2] * 8 + [0.8] * 8]))
    cases.append(np.array([[0.0] * 50 + [1.0] * 50]))
    outlier = np.full((10, 10), 0.1)
    outlier[3, 7] = 0.95
    cases.append(outlier)
    cases.append(np.array([[0.0] * 99 + [1e-9]]))
    # three equally spaced, equally populated values: the two splits tie
    cases.append(np.array([[0.1, 0.5, 0.9] * 5]))
    cases.append(np.array([[0.0, 1.0]]))
    cases.append(np.array([[0.7]]))
    return cases


@pytest.mark.criterion(2, "Otsu matches exhaustive search")
def test_otsu_oracle_equivalence():
    rng = np.random.default_rng(202)
    masks = [_random_soft_mask(rng, i) for i in range(1000)] + _adversarial_masks()
    mismatches = []
    with Budget(10):
        for i, m in enumerate(masks):
            threshold, binary = prior.otsu_threshold(m)
            t_ref, b_ref = otsu_bruteforce(m)
            if threshold != t_ref or not np.array_equal(binary, b_ref):
                mismatches.append(i)
    assert not mismatches, f"{len(mismatches)} masks differ, first {mismatches[:5]}"


@pytest.mark.criterion(3, "metric oracles and fixed examples")
def test_metric_oracles():
    rng = np.random.default_rng(303)
    with Budget(20):
        for i in range(100):
            h, w = int(rng.integers(11, 28)), int(rng.integers(11, 28))
            a = rng.random((h, w))
            b = np.clip(a + rng.normal(0, 0.05 + 0.2 * rng.random(), (h, w)), 0, 1)
            assert abs(metrics.rmse(a, b) - rmse_direct(a, b)) <= 1e-6
            assert abs(metrics.psnr(a, b) - psnr_direct(a, b)) <= 1e-6
            assert abs(metrics.ssim(a, b) - ssim_direct(a, b)) <= 1e-6
        zero = np.zeros((16, 16))
        assert metrics.psnr(zero, zero + 1.0) == 0.0
        assert metrics.psnr(zero, zero + 0.1) == 20.0
        assert metrics.rmse(zero, zero + 0.5, scale=255) == 127.5


@pytest.mark.criterion(4, "prior pipeline on synthetic pairs")
def test_prior_pipeline_synthetic():
    rng = np.random.default_rng(404)
    pooled = metrics.ConfusionCounts(0, 0, 0, 0)
    worst_acc, worst_ber = 1.0, 0.0
    with Budget(60):
        for i in range(50):
            pair = synthetic.highlight_pair(128, 128, rng, sigma=(5.0, 20.0), peak=(0.3, 0.7), color=i % 2 == 0)
            _, binary = prior.generate_prior(pair.highlight, pair.gt)
            c = metrics.mask_confusion(binary, pair.support)
            pooled = pooled + c
            worst_acc = min(worst_acc, metrics.accuracy(c))
            worst_ber = max(worst_ber, metrics.ber(c))
    assert worst_acc >= 0.95, f"worst per-pair ACC {worst_acc:.4f}"
    assert worst_ber <= 10.0, f"worst per-pair BER {worst_ber:.3f}"
    assert metrics.accuracy(pooled) >= 0.95 and metrics.ber(pooled) <= 10.0


@pytest.mark.criterion(5, "Otsu invariance under increasing affine remaps")
def test_otsu_affine_invariance():
    rng = np.random.default_rng(505)
    changed = []
    with Budget(5):
        for i in range(200):
            h, w = int(rng.integers(2, 24)), int(rng.integers(2, 24))
            top = int(rng.integers(1, 64))
            idx = rng.integers(0, top + 1, (h, w))
            m = (idx + 0.5) / 256
            # integer stride s and offset o send bin k to bin s*k + o, centers to centers
            s = int(rng.integers(1, 255 // top + 1))
            o = int(rng.integers(0, 255 - s * top + 1))
            a, b = float(s), (o + 0.5 - 0.5 * s) / 256
            remapped = a * m + b
            assert np.all(np.diff(np.sort(np.unique(remapped))) > 0)
            if not np.array_equal(prior.otsu_threshold(m)[1], prior.otsu_threshold(remapped)[1]):
                changed.append((i, s, o))
    assert not changed, f"mask changed for {changed[:5]}"


@pytest.mark.criterion(6, "diffusion moments, oracle recovery, reproducibility")
def test_diffusion_moments():
    with Budget(60):
        sched = diffusion.linear_schedule(1000)
        assert np.all(np.diff(sched.alpha_bars) < 0)
        n = 100_000
        x0 = np.linspace(-1.0, 1.0, 12).reshape(3, 4)
        for t in (1, 500, 1000):
            eps = np.random.Generator(np.random.PCG64(t)).standard_normal((n,) + x0.shape)
            draws = diffusion.forward_sample(x0, t, eps, sched)
            ab = sched.alpha_bar(t)
            sd = math.sqrt(1.0 - ab)
            dev = np.abs(draws.mean(axis=0) - math.sqrt(ab) * x0)
            assert np.all(dev <= 4 * sd / math.sqrt(n)), f"t={t}: mean off by {dev.max()}"
            rel = np.abs(draws.var(axis=0, ddof=1) / (1.0 - ab) - 1.0)
            assert np.all(rel <= 0.05), f"t={t}: variance off by {rel.max():.3%}"

        target = np.random.default_rng(606).standard_normal((16, 16))
        y = np.zeros((16, 16, 7))
        for n_steps in (1, 10, 1000):
            out = diffusion.sample(lambda x, t, c: target, y, sched, n_steps, seed=n_steps)
            assert np.abs(out - target).max() <= 1e-6

        def denoiser(x, t, c):
            return np.tanh(x) * (t / 1000.0)

        first = diffusion.sample(denoiser, y, sched, 50, seed=42)
        second = diffusion.sample(denoiser, y, sched, 50, seed=42)
        assert first.tobytes() == second.tobytes()


@pytest.mark.criterion(7, "loss arithmetic")
def test_loss_arithmetic():
    rng = np.random.default_rng(707)
    with Budget(1):
        w = metrics.LossWeights(0.4, 1.0, 0.1, 0.5)
        assert metrics.total_loss(1.0, 1.0, 1.0, 1.0, 1.0, w) == 3.0
        beta = 0.00005
        for _ in range(50):
            shape = (int(rng.integers(2, 12)), int(rng.integers(2, 12)))
            p, t = rng.random(shape), rng.random(shape)
            expected = l1_direct(p, t) + beta * tv_direct(p)
            assert abs(metrics.mask_loss(p, t, beta1=beta) - expected) <= 1e-9


@pytest.mark.criterion(8, "QC rejects shifted pairs; stratified sampling")
def test_qc_detection(tmp_path):
    with Budget(30):
        # 37 books and 23 posters spread over all three kinds; 23k mod 60 is a permutation
        shifted = qc_tree(tmp_path, seed=808, n_aligned=40, n_shifted=10, n_highlight=10,
                          category_of=lambda k: "poster" if (23 * k) % 60 < 23 else "book")
        m = qc.scan_manifest(tmp_path)
        assert len(m) == 60 and not m.skipped
        kept, rejected = qc.filter_aligned(m, jobs=4)
        assert sorted(r.pair_id for r in rejected) == sorted(shifted)
        assert len(kept) == 50

        counts = {k: len(v) for k, v in qc.strata_groups(m, ["category"]).items()}
        assert counts == {("book",): 37, ("poster",): 23}
        sample = qc.stratified_sample(m, 0.1, ["category"], seed=1)
        got = {k: len(v) for k, v in qc.strata_groups(sample, ["category"]).items()}
        assert got == {("book",): 4, ("poster",): 3}
        assert qc.stratified_sample(m, 0.1, ["category"], seed=1).ids == sample.ids
