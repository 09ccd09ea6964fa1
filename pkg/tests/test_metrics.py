import json
import math
import shutil

import numpy as np
import pytest
import torch

from structdiff.metrics import (
    BREAKDOWN_HEADER,
    FeatureStats,
    MetricReport,
    clip_score,
    evaluate,
    feature_stats,
    frechet_distance,
    ssim,
    write_eval_outputs,
)
from structdiff.encoders import SemanticEncoder, init_params
from structdiff.scenes import luminance
from structdiff.training import build_models


def frozen_models(cfg):
    semantic = SemanticEncoder(feature_dim=cfg.semantic_dim, image_size=cfg.canvas_size)
    init_params(semantic, torch.Generator().manual_seed(0))
    return build_models(cfg, semantic.freeze())


def stats_1d(mu, var):
    return FeatureStats(mean=np.array([mu], dtype=np.float64),
                        cov=np.array([[var]], dtype=np.float64), count=2)


def random_stats(rng, d=4, n=32):
    return feature_stats(rng.normal(size=(n, d)))


# --- feature statistics ------------------------------------------------------


def test_feature_stats_mean_and_unbiased_cov(rng):
    feats = rng.normal(size=(16, 3))
    st = feature_stats(feats)
    assert np.allclose(st.mean, feats.mean(axis=0))
    assert np.allclose(st.cov, np.cov(feats, rowvar=False, ddof=1), atol=1e-12)
    assert st.count == 16


def test_feature_stats_midpoint_hand_case():
    st = feature_stats(np.array([[0.0, 2.0], [2.0, 4.0]]))
    assert np.allclose(st.mean, [1.0, 3.0])


def test_feature_stats_duplicates_have_zero_cov():
    st = feature_stats(np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]))
    assert np.allclose(st.cov, 0.0)


def test_feature_stats_order_invariant(rng):
    feats = rng.normal(size=(10, 4))
    a = feature_stats(feats)
    b = feature_stats(feats[::-1])
    assert np.allclose(a.mean, b.mean)
    assert np.allclose(a.cov, b.cov)


def test_feature_stats_validation(rng):
    with pytest.raises(ValueError, match="at least 2"):
        feature_stats(rng.normal(size=(1, 4)))
    with pytest.raises(ValueError, match="expected"):
        feature_stats(rng.normal(size=(8,)))
    with pytest.raises(ValueError, match="symmetric"):
        FeatureStats(mean=np.zeros(2), cov=np.array([[1.0, 0.5], [0.0, 1.0]]), count=3)
    with pytest.raises(ValueError, match="negative eigenvalue"):
        FeatureStats(mean=np.zeros(1), cov=np.array([[-1.0]]), count=3)


# --- Frechet distance --------------------------------------------------------


def test_frechet_mean_shift_only():
    assert frechet_distance(stats_1d(0.0, 1.0), stats_1d(1.0, 1.0)) == pytest.approx(1.0, abs=1e-8)


def test_frechet_variance_shift_only():
    assert frechet_distance(stats_1d(0.0, 4.0), stats_1d(0.0, 1.0)) == pytest.approx(1.0, abs=1e-8)


def test_frechet_identical_stats_zero(rng):
    st = random_stats(rng)
    assert frechet_distance(st, st) == pytest.approx(0.0, abs=1e-8)


def test_frechet_symmetric_and_nonnegative(rng):
    p = random_stats(rng)
    q = random_stats(rng)
    pq = frechet_distance(p, q)
    assert pq >= 0.0
    assert pq == pytest.approx(frechet_distance(q, p), abs=1e-8)


def test_frechet_diagonal_closed_form(rng):
    # for commuting (diagonal) covariances the trace term is a sum over
    # per-axis standard deviation differences
    mu_p = rng.normal(size=3)
    mu_q = rng.normal(size=3)
    a = rng.uniform(0.5, 2.0, size=3)
    b = rng.uniform(0.5, 2.0, size=3)
    p = FeatureStats(mean=mu_p, cov=np.diag(a), count=5)
    q = FeatureStats(mean=mu_q, cov=np.diag(b), count=5)
    want = ((mu_p - mu_q) ** 2).sum() + ((np.sqrt(a) - np.sqrt(b)) ** 2).sum()
    assert frechet_distance(p, q) == pytest.approx(want, abs=1e-10)


def test_frechet_dimension_mismatch(rng):
    with pytest.raises(ValueError, match="dimension mismatch"):
        frechet_distance(random_stats(rng, d=3), random_stats(rng, d=4))


# --- SSIM --------------------------------------------------------------------


def test_ssim_self_is_one(rng):
    x = rng.random((3, 16, 16))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-10)


def test_ssim_symmetric(rng):
    a = rng.random((3, 16, 16))
    b = rng.random((3, 16, 16))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-10


def test_ssim_constant_images_hand_case():
    a = np.full((16, 16), 0.2)
    b = np.full((16, 16), 0.8)
    want = (2 * 0.2 * 0.8 + 0.01**2) / (0.2**2 + 0.8**2 + 0.01**2)
    assert ssim(a, b) == pytest.approx(want, abs=1e-10)
    assert ssim(a, b) == pytest.approx(0.4707, abs=1e-4)


def test_ssim_uses_luminance(rng):
    rgb = rng.random((3, 16, 16))
    assert ssim(rgb, luminance(rgb)) == pytest.approx(1.0, abs=1e-10)


def test_ssim_bounded_and_discriminative(rng):
    a = rng.random((3, 16, 16))
    inverted = 1.0 - a
    val = ssim(a, inverted)
    assert -1.0 <= val <= 1.0
    assert val < ssim(a, a)


def test_ssim_validation(rng):
    with pytest.raises(ValueError, match="shape mismatch"):
        ssim(rng.random((16, 16)), rng.random((12, 12)))
    with pytest.raises(ValueError, match="window"):
        ssim(rng.random((4, 4)), rng.random((4, 4)))


# --- clip score --------------------------------------------------------------


def test_clip_score_identical_embeddings(gen):
    v = torch.randn((5, 8), generator=gen)
    mean, per_item = clip_score(v, v.clone())
    assert mean == pytest.approx(1.0, abs=1e-6)
    assert len(per_item) == 5


def test_clip_score_mean_of_items(gen):
    v = torch.randn((6, 8), generator=gen)
    t = torch.randn((6, 8), generator=gen)
    mean, per_item = clip_score(v, t)
    assert mean == pytest.approx(float(np.mean(per_item)), abs=1e-12)


def test_clip_score_scale_invariant(gen):
    v = torch.randn((4, 8), generator=gen)
    t = torch.randn((4, 8), generator=gen)
    base, _ = clip_score(v, t)
    scaled, _ = clip_score(v * 7.5, t)
    assert scaled == pytest.approx(base, abs=1e-6)


def test_clip_score_validation(gen):
    with pytest.raises(ValueError, match="empty"):
        clip_score(torch.zeros((0, 4)), torch.zeros((0, 4)))
    with pytest.raises(ValueError, match="mismatch"):
        clip_score(torch.zeros((3, 4)), torch.zeros((2, 4)))


# --- report and end-to-end evaluation ----------------------------------------


def test_metric_report_json_round_trip():
    rep = MetricReport(clip_score=0.5, fid=1.25, ssim=0.75, n_items=10)
    payload = json.loads(rep.to_json())
    assert payload == {"clip_score": 0.5, "fid": 1.25, "ssim": 0.75,
                       "n_items": 10, "feature_space": "internal"}
    assert rep.to_json() == rep.to_json()


def copy_eval_split_as_samples(manifest, data_dir, gen_dir):
    gen_dir.mkdir(parents=True, exist_ok=True)
    for k, idx in enumerate(manifest.split_indices("eval")):
        rec = manifest.records[idx]
        dst = gen_dir / f"sample_{k:05d}.ppm"
        shutil.copy(data_dir / rec.image_path, dst)
        (gen_dir / (dst.name + ".json")).write_text(json.dumps({"manifest_index": idx}))


def test_evaluate_self_comparison(tmp_path, tiny_cfg, tiny_corpus):
    manifest, data_dir = tiny_corpus
    gen_dir = tmp_path / "gen"
    copy_eval_split_as_samples(manifest, data_dir, gen_dir)
    models = frozen_models(tiny_cfg)
    result = evaluate(gen_dir, manifest, data_dir, models)
    assert result.report.ssim == pytest.approx(1.0, abs=1e-10)
    assert result.report.fid == pytest.approx(0.0, abs=1e-6)
    assert result.report.n_items == len(manifest.split_indices("eval"))
    assert result.report.clip_score == pytest.approx(
        float(np.mean([r[1] for r in result.rows])), abs=1e-9)
    # pure: same inputs, same report
    again = evaluate(gen_dir, manifest, data_dir, models)
    assert again.report == result.report


def test_evaluate_requires_sidecars(tmp_path, tiny_cfg, tiny_corpus):
    manifest, data_dir = tiny_corpus
    gen_dir = tmp_path / "gen"
    copy_eval_split_as_samples(manifest, data_dir, gen_dir)
    (gen_dir / "sample_00001.ppm.json").unlink()
    models = frozen_models(tiny_cfg)
    with pytest.raises(ValueError, match="sample_00001.ppm.json"):
        evaluate(gen_dir, manifest, data_dir, models)


def test_evaluate_rejects_empty_and_tiny_dirs(tmp_path, tiny_cfg, tiny_corpus):
    manifest, data_dir = tiny_corpus
    models = frozen_models(tiny_cfg)
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError, match="no generated"):
        evaluate(empty, manifest, data_dir, models)
    one = tmp_path / "one"
    one.mkdir()
    rec = manifest.records[manifest.split_indices("eval")[0]]
    shutil.copy(data_dir / rec.image_path, one / "sample_00000.ppm")
    (one / "sample_00000.ppm.json").write_text(
        json.dumps({"manifest_index": manifest.split_indices("eval")[0]}))
    with pytest.raises(ValueError, match="at least 2"):
        evaluate(one, manifest, data_dir, models)


def test_write_eval_outputs(tmp_path, tiny_cfg, tiny_corpus):
    manifest, data_dir = tiny_corpus
    gen_dir = tmp_path / "gen"
    copy_eval_split_as_samples(manifest, data_dir, gen_dir)
    models = frozen_models(tiny_cfg)
    result = evaluate(gen_dir, manifest, data_dir, models)
    report_path, csv_path = write_eval_outputs(result, tmp_path / "out")
    payload = json.loads(open(report_path).read())
    assert payload["ssim"] == result.report.ssim
    lines = open(csv_path).read().strip().splitlines()
    assert lines[0] == BREAKDOWN_HEADER
    assert len(lines) == 1 + result.report.n_items
    idx, c, s = lines[1].split(",")
    assert float(s) == pytest.approx(result.rows[0][2])
