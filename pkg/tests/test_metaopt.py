import numpy as np
import pytest

from metastyle.embedder import AugmentationConfig, EmbedderSpec, build_embedder
from metastyle.losses import LossBreakdown, StyleTarget
from metastyle.metaopt import (
    AdaptConfig,
    ReptileConfig,
    StyleDataset,
    StyleEntry,
    StylizationProblem,
    direct_optimize,
    fast_adapt,
    inner_loop,
    reptile_train,
    sample_styles,
    step_rng,
    style_key,
    task_mixing_train,
)
from metastyle.tensorcore import FROZEN, STYLIZABLE, NumericError, UsageError, sgd_step

STYLES = [StyleTarget.from_text(t) for t in ("zombie", "elf queen", "clown makeup", "marble statue")]


@pytest.fixture(scope="module")
def small_problem(pretrained, id_in):
    """Cheap problem: one view, one augmentation, one embedder."""
    return StylizationProblem(pretrained.cfg, pretrained.params, id_in,
                              [build_embedder(EmbedderSpec(seed=11))],
                              aug=AugmentationConfig(n_image_augs=1), views_per_step=1)


def same_params(a, b, partition="all"):
    return a.digest(partition) == b.digest(partition)


# ------------------------------------------------------------ configs

@pytest.mark.parametrize("kw", [dict(T=0), dict(M=0), dict(K=0), dict(alpha=0.0), dict(beta=-1.0),
                                dict(workers=0)])
def test_reptile_config_validation(kw):
    with pytest.raises(UsageError):
        ReptileConfig(**kw)


@pytest.mark.parametrize("kw", [dict(steps=-1), dict(lr=0.0)])
def test_adapt_config_validation(kw):
    with pytest.raises(UsageError):
        AdaptConfig(**kw)


def test_dataset_split_discipline(tmp_path):
    with pytest.raises(UsageError):
        StyleDataset([StyleEntry("Zombie", "train", "Zombie"), StyleEntry("zombie", "test", "zombie")])
    with pytest.raises(UsageError):
        StyleDataset([StyleEntry("x", "val", "x")])
    ds = StyleDataset([StyleEntry("a", "train", "a"), StyleEntry("b", "test", "b")])
    assert ds.contains("A") and not ds.contains("b")
    assert ds.content_hash() == StyleDataset(list(ds.entries)).content_hash()


def test_sample_styles():
    a = sample_styles(0, 5, 10, 4)
    assert a == sorted(a) and len(set(a)) == 4
    assert a == sample_styles(0, 5, 10, 4)
    assert sample_styles(0, 5, 10, 10) == list(range(10))
    with pytest.raises(UsageError):
        sample_styles(0, 0, 3, 4)


# --------------------------------------------------------- inner_loop

def test_inner_loop_k0_is_identity(pretrained, small_problem):
    phi, traj = inner_loop(pretrained.params, small_problem, STYLES[0], 0, 4e-3)
    assert same_params(phi, pretrained.params) and len(traj) == 0


def test_inner_loop_single_step_manual(pretrained, small_problem):
    style = STYLES[1]
    phi, traj = inner_loop(pretrained.params, small_problem, style, 1, 4e-3, seed=3)
    manual = pretrained.params.clone()
    small_problem.grad_step(manual, style, step_rng(3, style_key(style), 0))
    for p, t in manual.items(STYLIZABLE):
        expected = (t.data.astype(np.float64) - 4e-3 * t.grad.astype(np.float64)).astype(t.data.dtype)
        assert np.array_equal(phi[p].data, expected), p
    assert same_params(phi, pretrained.params, FROZEN)
    assert len(traj) == 1


def test_inner_loop_deterministic_and_isolated(pretrained, small_problem):
    before = pretrained.params.digest()
    a, ta = inner_loop(pretrained.params, small_problem, STYLES[2], 3, 4e-3, seed=1)
    b, tb = inner_loop(pretrained.params, small_problem, STYLES[2], 3, 4e-3, seed=1)
    assert pretrained.params.digest() == before
    assert same_params(a, b) and ta.to_csv() == tb.to_csv()
    assert [r.step for r in ta.records] == [0, 1, 2]


def test_inner_loop_nan_reports_step(pretrained, small_problem, monkeypatch):
    calls = []
    real = StylizationProblem.grad_step

    def flaky(self, params, style, rng):
        calls.append(1)
        bd = real(self, params, style, rng)
        return LossBreakdown(bd.clip_term, bd.id_term, float("nan") if len(calls) == 3 else bd.total)

    monkeypatch.setattr(StylizationProblem, "grad_step", flaky)
    with pytest.raises(NumericError) as err:
        inner_loop(pretrained.params, small_problem, STYLES[0], 5, 4e-3)
    assert err.value.step == 2


def test_inner_loop_negative_k(pretrained, small_problem):
    with pytest.raises(UsageError):
        inner_loop(pretrained.params, small_problem, STYLES[0], -1, 4e-3)


# ------------------------------------------------------------ reptile

def test_reptile_beta_zero_is_identity(pretrained, small_problem):
    cfg = ReptileConfig(T=2, M=2, K=2, beta=0.0)
    phi, hist = reptile_train(pretrained.params, small_problem, STYLES, cfg)
    assert same_params(phi, pretrained.params) and len(hist) == 2


def test_reptile_k1_m1_equals_sgd(pretrained, small_problem):
    cfg = ReptileConfig(T=1, M=1, K=1, alpha=4e-3, beta=6e-3, seed=7)
    phi, hist = reptile_train(pretrained.params, small_problem, STYLES, cfg)
    style = STYLES[hist[0]["styles"][0]]
    sgd = pretrained.params.clone()
    small_problem.grad_step(sgd, style, step_rng(7, style_key(style), 0))
    sgd_step(sgd, cfg.alpha * cfg.beta)
    assert same_params(phi, sgd)


def test_reptile_is_permutation_invariant(pretrained, small_problem):
    cfg = ReptileConfig(T=2, M=3, K=2, seed=1)
    styles = STYLES[:3]
    a, _ = reptile_train(pretrained.params, small_problem, styles, cfg)
    b, _ = reptile_train(pretrained.params, small_problem, styles[::-1], cfg)
    assert same_params(a, b)


def test_reptile_worker_count_invariant(pretrained, small_problem):
    cfg = ReptileConfig(T=2, M=2, K=2, seed=4)
    a, ha = reptile_train(pretrained.params, small_problem, STYLES, cfg)
    b, hb = reptile_train(pretrained.params, small_problem, STYLES,
                          ReptileConfig(T=2, M=2, K=2, seed=4, workers=2))
    assert same_params(a, b) and ha == hb


def test_reptile_touches_only_stylizable(pretrained, small_problem, tmp_path):
    cfg = ReptileConfig(T=2, M=2, K=2, checkpoint_every=1)
    phi, hist = reptile_train(pretrained.params, small_problem, STYLES, cfg, checkpoint_dir=tmp_path)
    assert same_params(phi, pretrained.params, FROZEN)
    assert not same_params(phi, pretrained.params, STYLIZABLE)
    assert (tmp_path / "meta_00001.ckpt").exists() and (tmp_path / "meta_00002.ckpt").exists()
    assert (tmp_path / "run_manifest.json").exists()
    assert [h["t"] for h in hist] == [0, 1]


def test_reptile_needs_styles(pretrained, small_problem):
    with pytest.raises(UsageError):
        reptile_train(pretrained.params, small_problem, [], ReptileConfig(T=1))


# ------------------------------------------------------ task mixing

def test_task_mixing_is_reptile_k1_m1(pretrained, small_problem):
    a, ha = task_mixing_train(pretrained.params, small_problem, STYLES, 3, 1e-3, seed=2)
    b, hb = reptile_train(pretrained.params, small_problem, STYLES,
                          ReptileConfig(T=3, M=1, K=1, alpha=1e-3, beta=1.0, seed=2))
    assert same_params(a, b) and ha == hb


def test_task_mixing_single_style_equals_direct(pretrained, small_problem):
    style = STYLES[3]
    mix, hist = task_mixing_train(pretrained.params, small_problem, [style], 4, 8e-3, seed=5)
    direct, traj = direct_optimize(pretrained.params, small_problem, style, AdaptConfig(steps=4, lr=8e-3, seed=5))
    assert same_params(mix, direct)
    assert [h["mean_inner_loss"] for h in hist] == traj.totals[:4]


def test_task_mixing_deterministic(pretrained, small_problem):
    a, _ = task_mixing_train(pretrained.params, small_problem, STYLES, 3, 1e-3, seed=9)
    b, _ = task_mixing_train(pretrained.params, small_problem, STYLES, 3, 1e-3, seed=9)
    assert same_params(a, b)


# ------------------------------------------------------- adaptation

def test_fast_adapt_zero_steps(pretrained, small_problem):
    phi, traj = fast_adapt(pretrained.params, small_problem, STYLES[0], AdaptConfig(steps=0))
    assert same_params(phi, pretrained.params)
    assert len(traj) == 1 and np.isfinite(traj.totals[0])


def test_direct_equals_fast_adapt_from_same_init(pretrained, small_problem):
    cfg = AdaptConfig(steps=3)
    a, ta = fast_adapt(pretrained.params, small_problem, STYLES[1], cfg)
    b, tb = direct_optimize(pretrained.params, small_problem, STYLES[1], cfg)
    assert same_params(a, b) and ta.totals == tb.totals
    assert all(np.isfinite(ta.totals))


@pytest.fixture(scope="module")
def default_problem(pretrained, id_in):
    embs = [build_embedder(EmbedderSpec(seed=s)) for s in (11, 12)]
    return StylizationProblem(pretrained.cfg, pretrained.params, id_in, embs)


@pytest.mark.slow
def test_direct_loss_decreases_over_windows(pretrained, default_problem):
    _, traj = direct_optimize(pretrained.params, default_problem, StyleTarget.from_text("Ukiyo-e woodblock print"),
                              AdaptConfig(steps=100))
    w = np.asarray(traj.totals[:100]).reshape(5, 20).mean(axis=1)
    assert np.all(np.diff(w) <= 0), w


def test_displacement_grows_over_first_steps(pretrained, default_problem):
    style = StyleTarget.from_text("Cubist painting")
    phi = pretrained.params.clone()
    init = phi.flat(STYLIZABLE).astype(np.float64)
    key = style_key(style)
    disp = []
    for k in range(10):
        default_problem.grad_step(phi, style, step_rng(0, key, k))
        sgd_step(phi, 8e-3)
        disp.append(np.linalg.norm(phi.flat(STYLIZABLE) - init))
    assert np.all(np.diff(disp) > 0), disp


@pytest.mark.slow
def test_meta_init_beats_pretrained_at_step_50():
    """Paired (style, seed) runs from the full-default comparison pipeline."""
    import csv
    import os
    from pathlib import Path

    d = Path(os.environ.get("METASTYLE_TREND_DIR", Path(__file__).resolve().parents[1] / "runs" / "trend"))
    styles = d / "compare" / "styles"
    if not styles.is_dir():
        pytest.skip("run scripts/run_trend.py first")

    def total50(path):
        with open(path, newline="", encoding="utf-8") as fh:
            return float(list(csv.DictReader(fh))[50]["total"])

    wins = []
    for meta in sorted(styles.glob("*/meta_seed*.csv")):
        wins.append(total50(meta) < total50(meta.with_name(meta.name.replace("meta_", "direct_"))))
    assert len(wins) >= 60 and np.mean(wins) >= 0.8, (sum(wins), len(wins))
