import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metastyle.avatar import (
    EXPRESSIONS,
    AvatarConfig,
    IdentityInput,
    PrimitiveSlab,
    ViewSpec,
    composite,
    decode,
    default_dataset,
    expression_encode,
    forward,
    identity_encode,
    init_params,
    pretrain_photoreal,
    render,
    render_reference,
    rmse,
)
from metastyle.avatar.faces import IDENTITIES, render_face
from metastyle.tensorcore import (
    FROZEN,
    STYLIZABLE,
    DimensionError,
    ParamStore,
    Tape,
    Tensor,
    UsageError,
    check_gradients,
    ops,
    precision,
    sgd_step,
)


def random_slab(rng, grid=3, v=2, spread=0.5, scale=(0.15, 0.35)):
    centers = rng.uniform(-spread, spread, (grid, grid, 3))
    scales = rng.uniform(*scale, (grid, grid))
    payload = rng.uniform(0.05, 0.95, (grid, grid, 4, v, v, v))
    return centers, scales, payload


def slab_of(c, s, p):
    return PrimitiveSlab(Tensor(c), Tensor(s), Tensor(p))


def with_param(ps, path, tensor):
    """Copy of ``ps`` in the current precision with ``path`` bound to ``tensor``."""
    out = ParamStore()
    for p, t in ps.items():
        out.add(p, tensor if p == path else Tensor(t.data), ps.label(p))
    return out


# ------------------------------------------------------------- partition

def test_partition_is_exactly_the_bias_mappers(avatar_cfg):
    ps = init_params(avatar_cfg)
    sty = ps.paths(STYLIZABLE)
    assert sty and all(p.startswith("identity.bias_mapper") for p in sty)
    assert all(not p.startswith("identity.bias_mapper") for p in ps.paths(FROZEN))
    assert {p.split(".")[1] for p in sty} == {f"bias_mapper{k}" for k in range(avatar_cfg.n_bias_maps)}


def test_init_is_deterministic(avatar_cfg):
    assert init_params(avatar_cfg).digest() == init_params(avatar_cfg).digest()


@pytest.mark.parametrize("kw", [dict(map_size=12), dict(voxels=1), dict(map_size=16, n_bias_maps=6)])
def test_bad_config(kw):
    with pytest.raises(UsageError):
        AvatarConfig(**kw)


# ------------------------------------------------------- identity_encode

def test_identity_encode_scales(avatar_cfg, id_in):
    maps = identity_encode(init_params(avatar_cfg), avatar_cfg, id_in)
    assert len(maps) == 3
    assert [m.shape for m in maps] == [(avatar_cfg.channels, s, s) for s in (4, 8, 16)]


def test_identity_encode_zero(avatar_cfg):
    ps = init_params(avatar_cfg)
    for k in range(avatar_cfg.n_bias_maps):
        ps[f"identity.bias_mapper{k}.conv2.w"].data[...] = 0
    zero = IdentityInput.from_arrays(np.zeros((3, 16, 16)), np.zeros((3, 16, 16)))
    assert all(not m.data.any() for m in identity_encode(ps, avatar_cfg, zero))


def test_identity_encode_sensitivity(avatar_cfg, id_in):
    ps = init_params(avatar_cfg)
    before = [m.data.copy() for m in identity_encode(ps, avatar_cfg, id_in)]
    ps["identity.bias_mapper2.conv2.w"].data[0, 0, 1, 1] += 0.5
    after = identity_encode(ps, avatar_cfg, id_in)
    assert any(not np.array_equal(a, b.data) for a, b in zip(before, after))


def test_identity_encode_shape_errors(avatar_cfg):
    ps = init_params(avatar_cfg)
    with pytest.raises(DimensionError):
        identity_encode(ps, avatar_cfg, IdentityInput.from_arrays(np.zeros((3, 8, 8)), np.zeros((3, 8, 8))))
    with pytest.raises(UsageError):
        identity_encode(ps, avatar_cfg, IdentityInput.from_arrays(np.full((3, 16, 16), 2.0),
                                                                   np.zeros((3, 16, 16))))


# ----------------------------------------------------- expression_encode

def test_expression_encode_deterministic_and_frozen(avatar_cfg):
    ps = init_params(avatar_cfg)
    e = EXPRESSIONS[1]
    z1 = expression_encode(ps, avatar_cfg, e).data
    assert np.array_equal(z1, expression_encode(ps, avatar_cfg, e).data)
    for t in ps.tensors(STYLIZABLE):
        t.data = t.data + 1.0
    assert np.array_equal(z1, expression_encode(ps, avatar_cfg, e).data)
    assert z1.shape == (avatar_cfg.code_dim,)


def test_expression_encode_wrong_length(avatar_cfg):
    with pytest.raises(DimensionError):
        expression_encode(init_params(avatar_cfg), avatar_cfg, np.zeros(7))


def test_expression_codes_distinct_after_pretraining(pretrained):
    zs = [expression_encode(pretrained.params, pretrained.cfg, e).data for e in EXPRESSIONS]
    for i in range(len(zs)):
        for j in range(i):
            assert not np.array_equal(zs[i], zs[j])


# ---------------------------------------------------------------- decode

def test_decode_contract(avatar_cfg, id_in):
    ps = init_params(avatar_cfg)
    maps = identity_encode(ps, avatar_cfg, id_in)
    z = expression_encode(ps, avatar_cfg, EXPRESSIONS[0])
    a, b = decode(ps, avatar_cfg, maps, z), decode(ps, avatar_cfg, maps, z)
    assert np.array_equal(a.payload.data, b.payload.data)
    assert (a.scales.data > 0).all()
    assert a.centers.shape == (8, 8, 3) and a.payload.shape == (8, 8, 4, 2, 2, 2)
    assert 0 <= a.payload.data.min() and a.payload.data.max() <= 1


def test_decode_scale_mismatch(avatar_cfg, id_in):
    ps = init_params(avatar_cfg)
    maps = identity_encode(ps, avatar_cfg, id_in)
    z = expression_encode(ps, avatar_cfg, EXPRESSIONS[0])
    with pytest.raises(DimensionError):
        decode(ps, avatar_cfg, maps[::-1], z)
    with pytest.raises(DimensionError):
        decode(ps, avatar_cfg, maps[:2], z)


def test_expression_moves_geometry_after_pretraining(pretrained, id_in):
    ps, cfg = pretrained.params, pretrained.cfg
    maps = identity_encode(ps, cfg, id_in)
    c0 = decode(ps, cfg, maps, expression_encode(ps, cfg, EXPRESSIONS[0])).centers.data
    c1 = decode(ps, cfg, maps, expression_encode(ps, cfg, EXPRESSIONS[1])).centers.data
    assert np.abs(c0 - c1).max() > 1e-4


# ---------------------------------------------------------------- render

def test_render_transparent_is_background(rng):
    c, s, p = random_slab(rng)
    p[:, :, 3] = 1.0 / (1.0 + np.exp(20.0))  # alpha logit -20
    img = render(slab_of(c, s, p), ViewSpec(), size=32, background=0.5).data
    np.testing.assert_allclose(img, 0.5, atol=1e-6)


def test_render_single_opaque_primitive():
    c = np.zeros((1, 1, 3))
    s = np.full((1, 1), 0.5)
    p = np.zeros((1, 1, 4, 2, 2, 2))
    rgb = (0.9, 0.2, 0.4)
    for k in range(3):
        p[0, 0, k] = rgb[k]
    p[0, 0, 3] = 1.0
    img = render(slab_of(c, s, p), ViewSpec(), size=32, background=0.5).data
    x = (2 * np.arange(32) + 1 - 32) / 32
    inner = np.abs(x) <= 0.5 * (1 - 0.4) - 1e-9  # window is exactly 1 here
    outside = np.abs(x) >= 0.5
    box = inner[:, None] & inner[None, :]
    out = outside[:, None] | outside[None, :]
    for k in range(3):
        np.testing.assert_allclose(img[k][box], rgb[k], atol=1e-6)
        assert np.all(img[k][out] == np.float32(0.5))


@pytest.mark.parametrize("yaw", [0.3, 0.7])
def test_render_mirror_symmetry(yaw):
    rng = np.random.default_rng(int(yaw * 10))
    c, s, p = random_slab(rng, grid=4)
    cm = c.copy()
    cm[..., 0] *= -1
    pm = p[:, :, :, ::-1].copy()  # voxel x axis
    with precision(np.float64):
        a = render(slab_of(cm, s, pm), ViewSpec(yaw), size=32).data
        b = render(slab_of(c, s, p), ViewSpec(-yaw), size=32).data[:, :, ::-1]
    assert np.abs(a - b).max() < 1e-5


@pytest.mark.parametrize("view", [ViewSpec(0.0, 0.0), ViewSpec(0.4, -0.2), ViewSpec(-1.0, 0.3)])
def test_render_matches_reference(view):
    rng = np.random.default_rng(7)
    c, s, p = random_slab(rng, grid=3)
    with precision(np.float64):
        fast = render(slab_of(c, s, p), view, size=16).data
    ref = render_reference(c, s, p, view, size=16)
    assert np.abs(fast - ref).max() < 1e-9


def test_render_reference_with_three_voxels():
    rng = np.random.default_rng(8)
    c, s, p = random_slab(rng, grid=2, v=3)
    with precision(np.float64):
        fast = render(slab_of(c, s, p), ViewSpec(0.2, 0.1), size=12).data
    assert np.abs(fast - render_reference(c, s, p, ViewSpec(0.2, 0.1), size=12)).max() < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(-1.5, 1.5), st.floats(-0.5, 0.5))
def test_render_pixels_in_unit_range(seed, yaw, pitch):
    c, s, p = random_slab(np.random.default_rng(seed), grid=3)
    img = render(slab_of(c, s, p), ViewSpec(yaw, pitch), size=16).data
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_render_gradients_match_fd():
    rng = np.random.default_rng(9)
    c, s, p = random_slab(rng, grid=2)
    w = rng.normal(size=(3, 12, 12))

    def f(cc, ss, pp):
        return ops.sum(ops.mul(composite(cc, ss, pp, ViewSpec(0.3, 0.1), size=12), Tensor(w)))

    with precision(np.float64):
        err = check_gradients(lambda ts: f(*ts), [c.reshape(4, 3), s.reshape(4), p.reshape(4, 4, 2, 2, 2)],
                              eps=1e-5, max_coords=12)
    assert err < 1e-4


def test_view_bounds():
    with pytest.raises(UsageError):
        ViewSpec(2.0)
    with pytest.raises(UsageError):
        ViewSpec(0.0, 0.6)


# --------------------------------------------------------------- forward

def test_forward_deterministic(avatar_cfg, id_in):
    ps = init_params(avatar_cfg)
    a = forward(ps, avatar_cfg, id_in, EXPRESSIONS[2], ViewSpec(0.2))
    b = forward(ps, avatar_cfg, id_in, EXPRESSIONS[2], ViewSpec(0.2))
    assert a.shape == (3, 64, 64) and np.array_equal(a.data, b.data)


def test_forward_bias_mapper_gradient(pretrained, id_in):
    cfg = pretrained.cfg
    rng = np.random.default_rng(10)
    for path in ("identity.bias_mapper0.conv2.w", "identity.bias_mapper2.conv1.w"):
        def fn(ts, path=path):
            ps = with_param(pretrained.params, path, ts[0])
            return ops.mean(forward(ps, cfg, id_in, EXPRESSIONS[1], ViewSpec(0.25)))

        with precision(np.float64):
            err = check_gradients(fn, [pretrained.params[path].data], eps=1e-6, max_coords=6, rng=rng)
        assert err < 1e-2, path


def test_stylization_step_never_touches_frozen(pretrained, id_in):
    ps = pretrained.params.clone()
    frozen = ps.digest(FROZEN)
    ps.set_requires_grad("all")
    with Tape() as tape:
        loss = ops.mean(forward(ps, pretrained.cfg, id_in, EXPRESSIONS[0], ViewSpec()))
    tape.backward(loss)
    assert ps["decoder.head.w"].grad is not None
    sgd_step(ps, 0.1)
    assert ps.digest(FROZEN) == frozen


# -------------------------------------------------------------- pretrain

def test_pretrain_zero_steps(avatar_cfg):
    ps = init_params(avatar_cfg)
    before = ps.digest()
    assert pretrain_photoreal(ps, avatar_cfg, default_dataset(avatar_cfg), steps=0) == []
    assert ps.digest() == before


def test_pretrain_reduces_loss(pretrained):
    h = pretrained.history
    init_loss = rmse(pretrained.init, pretrained.cfg, pretrained.dataset, pretrained.dataset.train) ** 2
    final_loss = rmse(pretrained.params, pretrained.cfg, pretrained.dataset, pretrained.dataset.train) ** 2
    assert final_loss <= 0.2 * init_loss
    assert len(h) == 200


def test_pretrain_windows_monotone(pretrained):
    h = np.asarray(pretrained.history)
    windows = h[: len(h) // 10 * 10].reshape(-1, 10).mean(axis=1)
    assert np.all(np.diff(windows) <= 0)


def test_pretrain_heldout_rmse(pretrained):
    assert rmse(pretrained.params, pretrained.cfg, pretrained.dataset, pretrained.dataset.heldout) < 0.08


def test_pretrain_trains_every_partition(pretrained):
    assert pretrained.params.digest(FROZEN) != pretrained.init.digest(FROZEN)
    assert pretrained.params.digest(STYLIZABLE) != pretrained.init.digest(STYLIZABLE)


def test_stylized_avatar_still_drivable(pretrained, id_in):
    ps = pretrained.params.clone()
    for t in ps.tensors(STYLIZABLE):
        t.data = t.data * np.float32(1.1)
    imgs = [forward(ps, pretrained.cfg, id_in, e, ViewSpec(0.1)).data for e in EXPRESSIONS[:3]]
    assert all(np.isfinite(i).all() for i in imgs)
    assert not np.array_equal(imgs[0], imgs[1])


# ---------------------------------------------------------------- faces

def test_face_generator_yaw_mirror():
    ident = IDENTITIES[0]
    a = render_face(ident, EXPRESSIONS[0], 0.3)
    b = render_face(ident, EXPRESSIONS[0], -0.3)[:, :, ::-1]
    assert np.abs(a - b).max() < 1e-6
