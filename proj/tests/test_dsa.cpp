#include <doctest.h>

#include "glad/dsa.hpp"
#include "glad/tensor/autodiff.hpp"
#include "glad/tensor/finite_diff.hpp"

using namespace glad;

namespace {

Tensor random_images(int64_t n, int64_t size, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(n * 3 * size * size));
    for (auto& x : v) x = rng.uniform(-1, 1);
    return Tensor::from({n, 3, size, size}, std::move(v));
}

}  // namespace

TEST_CASE("sample_aug_params: same (seed, iteration) twice is the siamese property") {
    auto a = sample_aug_params(123, 7, 32);
    auto b = sample_aug_params(123, 7, 32);
    CHECK(a == b);

    auto c = sample_aug_params(123, 8, 32);
    CHECK_FALSE(a == c);
}

TEST_CASE("sample_aug_params: every draw stays inside its documented range") {
    const int64_t size = 32;
    const int64_t shift = (size + 7) / 8;
    bool saw_flip = false, saw_noflip = false;
    for (uint64_t it = 0; it < 100000; ++it) {
        const auto p = sample_aug_params(5, it, size);
        saw_flip |= p.flip;
        saw_noflip |= !p.flip;
        CHECK(std::abs(p.crop_dx) <= shift);
        CHECK(std::abs(p.crop_dy) <= shift);
        CHECK(p.cutout_size == (size + 1) / 2);
        CHECK((p.cutout_cx >= 0 && p.cutout_cx < size));
        CHECK((p.cutout_cy >= 0 && p.cutout_cy < size));
        CHECK((p.scale >= 0.8 && p.scale <= 1.2));
        CHECK((p.rotate_deg >= -15.0 && p.rotate_deg <= 15.0));
        CHECK((p.brightness >= -0.5 && p.brightness <= 0.5));
        CHECK((p.saturation >= 0.0 && p.saturation <= 2.0));
        CHECK((p.contrast >= 0.5 && p.contrast <= 1.5));
    }
    CHECK(saw_flip);
    CHECK(saw_noflip);
}

TEST_CASE("apply_aug: identity parameters are the identity map") {
    Rng rng(1);
    auto imgs = random_images(2, 8, rng);
    auto out = apply_aug(imgs, AugParams::identity());
    CHECK(bitwise_equal(out, imgs));
}

TEST_CASE("apply_aug: flip twice restores the original") {
    Rng rng(2);
    auto imgs = random_images(1, 8, rng);
    AugParams p;
    p.flip = true;
    CHECK(bitwise_equal(apply_aug(apply_aug(imgs, p), p), imgs));
}

TEST_CASE("apply_aug: crop shift moves content with zero fill") {
    auto imgs = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    AugParams p;
    p.crop_dx = 1;  // content moves right
    auto out = apply_aug(imgs, p);
    CHECK(out.data()[0] == 0.0);
    CHECK(out.data()[1] == 1.0);
    CHECK(out.data()[2] == 0.0);
    CHECK(out.data()[3] == 3.0);
}

TEST_CASE("apply_aug: cutout zeroes exactly the masked square") {
    auto imgs = Tensor::full({1, 1, 4, 4}, 1.0);
    AugParams p;
    p.cutout_cx = 1;
    p.cutout_cy = 1;
    p.cutout_size = 2;
    auto out = apply_aug(imgs, p);
    double zeros = 0;
    for (int64_t i = 0; i < out.numel(); ++i) zeros += out.data()[i] == 0.0;
    CHECK(zeros == 4);
    CHECK(out.data()[0] == 0.0);  // rows 0-1, cols 0-1
    CHECK(out.data()[5] == 0.0);
    CHECK(out.data()[10] == 1.0);
}

TEST_CASE("apply_aug: color ops keep their fixed points") {
    Rng rng(3);
    auto imgs = random_images(1, 8, rng);
    AugParams p;
    p.saturation = 2.0;
    p.contrast = 0.5;
    // a constant gray image is a fixed point of saturation and contrast
    auto gray = Tensor::full({1, 3, 8, 8}, 0.25);
    auto out = apply_aug(gray, p);
    CHECK(max_abs_diff(out, gray) < 1e-12);
    // brightness shifts everything by the same offset
    AugParams b;
    b.brightness = 0.3;
    auto shifted = apply_aug(imgs, b);
    for (int64_t i = 0; i < imgs.numel(); ++i) {
        CHECK(shifted.data()[i] == doctest::Approx(imgs.data()[i] + 0.3));
    }
}

TEST_CASE("apply_aug: differentiable through the full random composition") {
    Rng rng(4);
    auto imgs = random_images(2, 8, rng);
    for (uint64_t it = 0; it < 3; ++it) {
        const auto p = sample_aug_params(99, it, 8);
        auto f = [&](const Tensor& t) { return mean(mul(apply_aug(t, p), apply_aug(t, p))); };
        auto leaf = imgs.tracked_leaf();
        auto analytic = backward_one(f(leaf), leaf);
        auto numeric = finite_diff_gradient<double>(
            [&](const Tensor& probe) { return f(probe).item(); }, imgs, 1e-5);
        INFO("iteration ", it);
        CHECK(grad_rel_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("apply_aug: pure function of (images, params)") {
    Rng rng(5);
    auto imgs = random_images(2, 16, rng);
    const auto p = sample_aug_params(7, 3, 16);
    CHECK(bitwise_equal(apply_aug(imgs, p), apply_aug(imgs, p)));
}

TEST_CASE("single_random strategy keeps exactly one transform") {
    int nontrivial = 0;
    for (uint64_t it = 0; it < 200; ++it) {
        const auto p = sample_aug_params(11, it, 32, AugStrategy::single_random);
        int active = 0;
        active += p.flip;
        active += p.crop_dx != 0 || p.crop_dy != 0;
        active += p.cutout_size > 0;
        active += p.scale != 1.0;
        active += p.rotate_deg != 0.0;
        active += p.brightness != 0.0 || p.saturation != 1.0 || p.contrast != 1.0;
        CHECK(active <= 1);
        nontrivial += active;
    }
    CHECK(nontrivial > 100);
}

TEST_CASE("per-image mode applies the i-th parameters to the i-th image") {
    Rng rng(6);
    auto imgs = random_images(2, 8, rng);
    std::vector<AugParams> ps(2);
    ps[0] = AugParams::identity();
    ps[1].flip = true;
    auto out = apply_aug_per_image(imgs, ps);
    auto first = slice_axis0(out, 0, 1);
    auto second = slice_axis0(out, 1, 1);
    CHECK(bitwise_equal(first, slice_axis0(imgs, 0, 1)));
    CHECK(bitwise_equal(second, flip_w(slice_axis0(imgs, 1, 1))));
}
