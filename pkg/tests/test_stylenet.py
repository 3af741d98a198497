import numpy as np
import pytest

from microforge import tensorcore as tc
from microforge.errors import (
    ConfigInvalid,
    ResolutionMismatch,
    ResolutionNotInSchedule,
    ShapeMismatch,
    VariantDisabled,
)
from microforge.images import GrayImage, subsample_stride2
from microforge.rng import RandomStream
from microforge.stylenet import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    adain,
    add_noise,
    batch_std,
    pixel_norm,
)
from microforge.tensorcore import Tensor

SMALL = {4: 8, 8: 8, 16: 8, 32: 8, 64: 8, 128: 8, 256: 8}


def small_gen(target=16, variant="standard", latent=6, seed=0):
    cfg = GeneratorConfig(
        target_resolution=target, latent_dim=latent, mapping_depth=2,
        channels=dict(SMALL), variant=variant,
    )
    return Generator(cfg, RandomStream(seed).split("init_g"))


def small_disc(target=16, seed=0):
    cfg = DiscriminatorConfig(target_resolution=target, channels=dict(SMALL))
    return Discriminator(cfg, RandomStream(seed).split("init_d"))


# -- adain -----------------------------------------------------------------


def test_adain_direct_formula():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 1, 2, 2))
    out = adain(x, Tensor(np.full((1, 1), 2.0)), Tensor(np.full((1, 1), 1.0)))
    expect = [-1.683, 0.106, 1.894, 3.683]
    assert np.allclose(out.data.ravel(), expect, atol=1e-3)


def test_adain_identity_on_standardized_input():
    stream = RandomStream(1)
    x = stream.normal((2, 3, 4, 4), dtype=np.float64)
    x = (x - x.mean(axis=(2, 3), keepdims=True)) / x.std(axis=(2, 3), keepdims=True)
    out = adain(Tensor(x), Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 3))))
    assert np.allclose(out.data, x, atol=1e-4)


def test_adain_zero_gamma_gives_beta():
    x = Tensor(RandomStream(2).normal((1, 2, 3, 3)))
    beta = np.array([[5.0, -1.0]])
    out = adain(x, Tensor(np.zeros((1, 2))), Tensor(beta))
    assert np.allclose(out.data[0, 0], 5.0, atol=1e-6)
    assert np.allclose(out.data[0, 1], -1.0, atol=1e-6)


def test_adain_output_moments():
    stream = RandomStream(3)
    x = Tensor(2.0 + 3.0 * stream.normal((2, 4, 8, 8), dtype=np.float64))
    gamma = np.abs(stream.normal((2, 4), dtype=np.float64)) + 0.5
    beta = stream.normal((2, 4), dtype=np.float64)
    out = adain(x, Tensor(gamma), Tensor(beta)).data
    for b in range(2):
        for c in range(4):
            assert out[b, c].mean() == pytest.approx(beta[b, c], abs=1e-3)
            assert out[b, c].std() == pytest.approx(abs(gamma[b, c]), abs=1e-3)


def test_adain_shape_mismatch():
    x = Tensor(np.zeros((1, 2, 3, 3)))
    with pytest.raises(ShapeMismatch):
        adain(x, Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 2))))


# -- noise injection ----------------------------------------------------------


def test_add_noise_zero_scale():
    x = Tensor(RandomStream(4).normal((2, 3, 4, 4)))
    noise = Tensor(RandomStream(5).normal((2, 1, 4, 4)))
    out = add_noise(x, Tensor(np.zeros(3)), noise)
    assert np.array_equal(out.data, x.data)


def test_add_noise_unit_scale_ones():
    x = Tensor(np.zeros((1, 2, 2, 2), dtype=np.float32))
    out = add_noise(x, Tensor(np.ones(2)), Tensor(np.ones((1, 1, 2, 2))))
    assert np.allclose(out.data, 1.0)


def test_add_noise_seeded_reproducible():
    gen = small_gen()
    # noise scales start at zero; enable one so the stream matters
    gen.params["b16/noise0"].data = np.ones(8, dtype=np.float32)
    z = Tensor(RandomStream(6).normal((2, 6)))
    a = gen.generate(z, 16, noise_stream=RandomStream(77))
    b = gen.generate(z, 16, noise_stream=RandomStream(77))
    assert np.array_equal(a.data, b.data)
    c = gen.generate(z, 16, noise_stream=RandomStream(78))
    assert not np.array_equal(a.data, c.data)


# -- pixel norm ---------------------------------------------------------------


def test_pixel_norm_single_channel():
    x = Tensor(np.full((1, 1, 2, 2), 3.0))
    out = pixel_norm(x)
    assert np.allclose(out.data, 3.0 / np.sqrt(9.0 + 1e-8), atol=1e-6)


def test_pixel_norm_zero_guarded():
    out = pixel_norm(Tensor(np.zeros((1, 3, 2, 2))))
    assert np.allclose(out.data, 0.0)


def test_pixel_norm_two_channels():
    x = np.zeros((1, 2, 1, 1), dtype=np.float64)
    x[0, 0] = 3.0
    x[0, 1] = 4.0
    out = pixel_norm(Tensor(x)).data.ravel()
    assert np.allclose(out, [3.0 / np.sqrt(12.5), 4.0 / np.sqrt(12.5)], atol=1e-6)


# -- batch std ----------------------------------------------------------------


def test_batch_std_identical_batch_appends_zeros():
    x = np.repeat(RandomStream(7).normal((1, 3, 4, 4), dtype=np.float64), 2, axis=0)
    out = batch_std(Tensor(x))
    assert out.shape == (2, 4, 4, 4)
    assert np.allclose(out.data[:, 3], 0.0, atol=1e-3)


def test_batch_std_adds_one_channel():
    out = batch_std(Tensor(RandomStream(8).normal((4, 5, 2, 2))))
    assert out.shape == (4, 6, 2, 2)


def test_batch_std_population_value():
    x = np.zeros((2, 1, 2, 2), dtype=np.float64)
    x[0] = 0.0
    x[1] = 2.0
    out = batch_std(Tensor(x))
    assert np.allclose(out.data[:, 1], 1.0, atol=1e-3)


# -- mapping network ------------------------------------------------------------


def test_map_latent_identity_layer_is_activation():
    cfg = GeneratorConfig(target_resolution=8, latent_dim=3, mapping_depth=1,
                          channels=dict(SMALL))
    gen = Generator(cfg, RandomStream(0))
    gen.params["map0/w"].data = np.eye(3, dtype=np.float32)
    gen.params["map0/b"].data = np.zeros(3, dtype=np.float32)
    z = np.array([[1.0, -1.0, 0.5]], dtype=np.float32)
    w = gen.map_latent(Tensor(z))
    assert np.allclose(w.data, np.where(z >= 0, z, 0.2 * z), atol=1e-7)


def test_map_latent_rowwise():
    gen = small_gen()
    z = RandomStream(9).normal((1, 6))
    zz = np.repeat(z, 2, axis=0)
    w = gen.map_latent(Tensor(zz))
    assert np.array_equal(w.data[0], w.data[1])


def test_map_latent_gradient_matches_fd():
    gen = small_gen(latent=4)
    z0 = RandomStream(10).normal((2, 4), dtype=np.float64)
    z = Tensor(z0.astype(np.float32), requires_grad=True)
    loss = tc.mean(gen.map_latent(z))
    tc.backward(loss)
    analytic = z.grad.astype(np.float64)
    h = 1e-3
    numeric = np.zeros_like(z0)
    for i in range(z0.size):
        for sign, bucket in ((+1, 0), (-1, 1)):
            pass
        flat = z0.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        with tc.no_grad():
            plus = tc.mean(gen.map_latent(Tensor(z0.astype(np.float32)))).item()
        flat[i] = orig - h
        with tc.no_grad():
            minus = tc.mean(gen.map_latent(Tensor(z0.astype(np.float32)))).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (plus - minus) / (2 * h)
    scale = max(1.0, np.abs(numeric).max())
    assert np.abs(analytic - numeric).max() / scale <= 1e-3


# -- generator ---------------------------------------------------------------------


def test_generate_shapes_across_schedule():
    gen = small_gen(target=128)
    z = Tensor(RandomStream(11).normal((2, 6)))
    for r in [8, 16, 32, 64, 128]:
        out = gen.generate(z, r, noise_stream=RandomStream(1))
        assert out.shape == (2, 1, r, r)


def test_generate_rejects_off_schedule():
    gen = small_gen(target=16)
    z = Tensor(RandomStream(12).normal((1, 6)))
    with pytest.raises(ResolutionNotInSchedule):
        gen.generate(z, 32)
    with pytest.raises(ResolutionNotInSchedule):
        gen.generate(z, 12)


def test_generate_alpha_zero_equals_upsampled_previous():
    gen = small_gen(target=128)
    z = Tensor(RandomStream(13).normal((2, 6)))
    for r in [16, 32, 64, 128]:
        prev = gen.generate(z, r // 2, alpha=1.0, noise_stream=RandomStream(5))
        faded = gen.generate(z, r, alpha=0.0, noise_stream=RandomStream(5))
        up = np.repeat(np.repeat(prev.data, 2, axis=2), 2, axis=3)
        assert np.array_equal(faded.data, up), f"fade-in at {r} is not exact"


def test_generate_finite():
    gen = small_gen(target=64)
    z = Tensor(RandomStream(14).normal((3, 6)))
    out = gen.generate(z, 64, alpha=0.6, noise_stream=RandomStream(2))
    assert np.isfinite(out.data).all()


def test_generate_alpha_validated():
    gen = small_gen()
    z = Tensor(RandomStream(15).normal((1, 6)))
    with pytest.raises(ConfigInvalid):
        gen.generate(z, 16, alpha=1.5)


def test_parameter_census():
    gen = small_gen(target=16)
    names = set(gen.params.names())
    expected = {"const"}
    for i in range(2):
        expected |= {f"map{i}/w", f"map{i}/b"}
    for r, has_up in [(8, False), (16, True)]:
        if has_up:
            expected |= {f"b{r}/up/k", f"b{r}/up/b"}
        for s in (0, 1):
            if not (r == 8 and s == 0):
                expected |= {f"b{r}/conv{s}/k", f"b{r}/conv{s}/b"}
            expected |= {f"b{r}/noise{s}", f"b{r}/style{s}/w", f"b{r}/style{s}/b"}
        expected |= {f"b{r}/rgb/k", f"b{r}/rgb/b"}
    assert names == expected

    disc = small_disc(target=16)
    dnames = set(disc.params.names())
    dexpected = set()
    for r in (8, 16):
        for part in ("rgb", "rgbA", "rgbB", "ds1", "ds2"):
            dexpected |= {f"b{r}/{part}/k", f"b{r}/{part}/b"}
    dexpected |= {
        "final/conv4/k", "final/conv4/b", "final/conv3/k", "final/conv3/b",
        "final/dense/w", "final/dense/b",
    }
    assert dnames == dexpected


# -- discriminator -------------------------------------------------------------------


def test_score_shape_and_finite():
    disc = small_disc(target=32)
    x = Tensor(RandomStream(16).normal((4, 1, 32, 32)))
    s = disc.score(x)
    assert s.shape == (4, 1)
    assert np.isfinite(s.data).all()


def test_score_all_phases():
    disc = small_disc(target=64)
    for r in (8, 16, 32, 64):
        x = Tensor(RandomStream(17).normal((2, 1, r, r)))
        assert disc.score(x, alpha=0.5).shape == (2, 1)


def test_score_rejects_wrong_resolution():
    disc = small_disc(target=16)
    with pytest.raises(ResolutionMismatch):
        disc.score(Tensor(RandomStream(18).normal((1, 1, 12, 12))))
    with pytest.raises(ResolutionMismatch):
        disc.score(Tensor(RandomStream(18).normal((1, 1, 32, 32))))


def test_score_gradients_reach_all_params():
    disc = small_disc(target=16)
    x = Tensor(RandomStream(19).normal((3, 1, 16, 16)))
    loss = tc.mean(disc.score(x, alpha=0.5))
    tc.backward(loss)
    for name, p in disc.params.items():
        assert p.grad is not None, name


def test_generator_gradients_reach_all_params():
    gen = small_gen(target=16)
    z = Tensor(RandomStream(20).normal((2, 6)))
    loss = tc.mean(gen.generate(z, 16, alpha=0.5, noise_stream=RandomStream(3)))
    tc.backward(loss)
    for name, p in gen.params.items():
        assert p.grad is not None, name


# -- resolution-increase variant ---------------------------------------------------


def test_variant_emits_double_and_subsamples_exactly():
    gen = small_gen(target=64, variant="resolution_increase")
    z = Tensor(RandomStream(21).normal((2, 6)))
    full, sub = gen.generate_upscaled(z, 64, noise_stream=RandomStream(4))
    assert full.shape == (2, 1, 128, 128)
    assert sub.shape == (2, 1, 64, 64)
    assert np.array_equal(sub.data, full.data[:, :, ::2, ::2])


def test_variant_matches_imagecore_subsample():
    gen = small_gen(target=16, variant="resolution_increase")
    z = Tensor(RandomStream(22).normal((1, 6)))
    full, sub = gen.generate_upscaled(z, 16, noise_stream=RandomStream(5))
    img = np.clip((full.data[0, 0] + 1.0) * 127.5, 0, 255).astype(np.uint8)
    ref = subsample_stride2(GrayImage(img)).data
    got = np.clip((sub.data[0, 0] + 1.0) * 127.5, 0, 255).astype(np.uint8)
    assert np.array_equal(ref, got)


def test_variant_shape_audit_across_schedule():
    gen = small_gen(target=64, variant="resolution_increase")
    z = Tensor(RandomStream(23).normal((1, 6)))
    for r in (8, 16, 32, 64):
        full, sub = gen.generate_upscaled(z, r, noise_stream=RandomStream(6))
        assert full.shape == (1, 1, 2 * r, 2 * r)
        assert sub.shape == (1, 1, r, r)


def test_variant_disabled_error():
    gen = small_gen(target=16, variant="standard")
    z = Tensor(RandomStream(24).normal((1, 6)))
    with pytest.raises(VariantDisabled):
        gen.generate_upscaled(z, 16)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        GeneratorConfig(target_resolution=12, channels=dict(SMALL))
    with pytest.raises(ConfigInvalid):
        GeneratorConfig(target_resolution=512, channels=dict(SMALL))
    with pytest.raises(ConfigInvalid):
        GeneratorConfig(target_resolution=16, channels={8: 4})
