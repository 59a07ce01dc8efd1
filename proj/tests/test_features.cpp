#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dwiqc/augment/augment.hpp"
#include "dwiqc/features/features.hpp"
#include "test_util.hpp"

using namespace dwiqc;
using dwiqc::testing::TempDir;
using dwiqc::testing::random_image;

namespace {

Image rot90(const Image& in)
{
    // Counter-clockwise quarter turn.
    Image out(in.cols(), in.rows());
    for (std::size_t r = 0; r < in.rows(); ++r)
        for (std::size_t c = 0; c < in.cols(); ++c) out(in.cols() - 1 - c, r) = in(r, c);
    return out;
}

Image stripes(std::size_t n, double period, bool vertical)
{
    Image img(n, n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
            img(r, c) = std::cos(2.0 * std::numbers::pi * static_cast<double>(vertical ? c : r) / period);
    return img;
}

double mean_abs(const std::vector<std::complex<double>>& v)
{
    double s = 0.0;
    for (const auto& x : v) s += std::abs(x);
    return s / static_cast<double>(v.size());
}

SliceSample sample_with(const Image& px, Label label, const std::string& vol = "v", int idx = 0)
{
    SliceSample s;
    s.volume_id = vol;
    s.slice_index = idx;
    s.pixels = px;
    s.label = label;
    return s;
}

}  // namespace

// ---------------------------------------------------------------- augmentation

TEST(Augment, IdentityConfigIsIdentity)
{
    Rng rng(1);
    const auto img = random_image(24, 30, rng);
    Rng r2(2);
    const auto out = augment(sample_with(img, Label::artifactual), AugmentConfig::identity(), r2);
    EXPECT_LE(max_abs_diff(out.pixels, img), 1e-12);
    EXPECT_EQ(out.label, Label::artifactual);
}

TEST(Augment, HorizontalFlipIsAnInvolution)
{
    Rng rng(3);
    const auto img = random_image(17, 22, rng);
    AugmentParams p;
    p.hflip = true;
    const auto once = apply_augment(img, p);
    EXPECT_DOUBLE_EQ(once(4, 0), img(4, 21));
    EXPECT_LE(max_abs_diff(apply_augment(once, p), img), 1e-12);
    p.hflip = false;
    p.vflip = true;
    EXPECT_LE(max_abs_diff(apply_augment(apply_augment(img, p), p), img), 1e-12);
}

TEST(Augment, TranslationShiftsWithZeroFill)
{
    Rng rng(4);
    const auto img = random_image(10, 10, rng);
    AugmentParams p;
    p.tx = 2.0;
    p.ty = -1.0;
    const auto out = apply_augment(img, p);
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t c = 0; c < 10; ++c) {
            const long sr = static_cast<long>(r) + 1, sc = static_cast<long>(c) - 2;
            const double expected = (sr < 10 && sc >= 0) ? img(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc)) : 0.0;
            EXPECT_NEAR(out(r, c), expected, 1e-12);
        }
}

TEST(Augment, QuarterRotationMatchesGridRotation)
{
    Rng rng(5);
    const auto img = random_image(15, 15, rng);
    AugmentParams p;
    p.rotation = std::numbers::pi / 2.0;
    const auto out = apply_augment(img, p);
    // x right, y down: +90 degrees maps (x, y) -> (-y, x) about the center.
    for (std::size_t r = 0; r < 15; ++r)
        for (std::size_t c = 0; c < 15; ++c) EXPECT_NEAR(out(r, c), img(14 - c, r), 1e-9);
}

TEST(Augment, DatasetSizeOrderAndDeterminism)
{
    Rng rng(6);
    std::vector<SliceSample> samples;
    for (int i = 0; i < 100; ++i)
        samples.push_back(sample_with(random_image(12, 12, rng), i < 30 ? Label::artifactual : Label::artifact_free, "v", i));

    AugmentConfig none;
    none.multiplier = 0;
    const auto same = augment_dataset(samples, none, 1);
    ASSERT_EQ(same.size(), 100u);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(same[i].pixels, samples[i].pixels);

    AugmentConfig cfg;
    const auto out = augment_dataset(samples, cfg, 9);
    ASSERT_EQ(out.size(), 300u);
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_EQ(out[i].pixels, samples[i].pixels);
        EXPECT_FALSE(out[i].augmentation.has_value());
    }
    const auto positives = std::count_if(out.begin(), out.end(), [](const auto& s) { return s.label == Label::artifactual; });
    EXPECT_EQ(positives, 90);
    for (std::size_t k = 100; k < 300; ++k) {
        EXPECT_TRUE(out[k].pixels.same_shape(samples[0].pixels));
        EXPECT_TRUE(out[k].augmentation.has_value());
        const auto& src = samples[(k - 100) / 2];
        EXPECT_EQ(out[k].source_key(), src.key());
        EXPECT_EQ(out[k].label, src.label);
    }
    const auto again = augment_dataset(samples, cfg, 9);
    for (std::size_t k = 0; k < 300; ++k) EXPECT_EQ(again[k].pixels, out[k].pixels);
    const auto other = augment_dataset(samples, cfg, 10);
    EXPECT_NE(other[150].pixels, out[150].pixels);
}

TEST(Augment, ConfigValidation)
{
    AugmentConfig cfg;
    cfg.zoom_range = {0.0, 1.1};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.max_rotation = 180.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.multiplier = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

// ---------------------------------------------------------------- Gabor

TEST(Gabor, DefaultBankShape)
{
    const auto bank = gabor_bank();
    ASSERT_EQ(bank.size(), 16u);
    EXPECT_EQ(GaborConfig{}.feature_dim(), 32u);
    EXPECT_DOUBLE_EQ(bank[0].wavelength, 4.0);
    EXPECT_DOUBLE_EQ(bank[15].wavelength, 32.0);
    EXPECT_DOUBLE_EQ(bank[1].theta, std::numbers::pi / 4.0);
    for (const auto& k : bank) {
        std::complex<double> sum = 0.0;
        for (const auto& t : k.taps) sum += t;
        EXPECT_LT(std::abs(sum.real()), 1e-10);
        EXPECT_LT(std::abs(sum.imag()), 1e-10);
    }
}

TEST(Gabor, QuarterTurnKernelIsTransposeOfZeroKernel)
{
    const auto bank = gabor_bank();
    for (int s = 0; s < 4; ++s) {
        const auto& k0 = bank[static_cast<std::size_t>(4 * s)];
        const auto& k2 = bank[static_cast<std::size_t>(4 * s + 2)];
        ASSERT_EQ(k0.half, k2.half);
        for (int dr = -k0.half; dr <= k0.half; ++dr)
            for (int dc = -k0.half; dc <= k0.half; ++dc) EXPECT_LT(std::abs(k2.at(dr, dc) - k0.at(dc, dr)), 1e-12);
    }
}

TEST(Gabor, FftPathMatchesDirectConvolution)
{
    Rng rng(7);
    const GaborBank bank;
    for (const auto shape : {std::pair<std::size_t, std::size_t>{32, 32}, {20, 27}}) {
        const auto img = random_image(shape.first, shape.second, rng);
        const auto fast = bank.responses(img);
        for (std::size_t k = 0; k < bank.size(); ++k) {
            const auto direct = convolve_direct(img, bank.kernels()[k]);
            double err = 0.0;
            for (std::size_t i = 0; i < direct.size(); ++i) err = std::max(err, std::abs(direct[i] - fast[k][i]));
            EXPECT_LE(err, 1e-8) << "kernel " << k;
        }
    }
}

TEST(Gabor, ConstantSliceAndOffsetInvariance)
{
    const auto zero = gabor_features(Image(32, 32, 3.5));
    ASSERT_EQ(zero.size(), 32u);
    for (double v : zero) EXPECT_LT(std::abs(v), 1e-10);

    Rng rng(8);
    const auto img = random_image(32, 32, rng);
    Image shifted = img;
    for (auto& v : shifted.pixels()) v += 7.25;
    const auto a = gabor_features(img), b = gabor_features(shifted);
    for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(a[i], b[i], 1e-8);
}

TEST(Gabor, OrientationSelectivityOnStripes)
{
    const auto bank = gabor_bank();
    for (bool vertical : {true, false}) {
        const auto img = stripes(32, 4.0, vertical);
        std::size_t best = 0;
        double best_energy = -1.0;
        for (std::size_t k = 0; k < bank.size(); ++k) {
            const double e = mean_abs(convolve_direct(img, bank[k]));
            if (e > best_energy) {
                best_energy = e;
                best = k;
            }
        }
        // Vertical stripes vary along x: normal at theta 0; horizontal at pi/2.
        EXPECT_EQ(best, vertical ? 0u : 2u);
        const auto f = gabor_features(img);
        std::size_t fbest = 0;
        for (std::size_t k = 0; k < 16; ++k)
            if (f[2 * k] > f[2 * fbest]) fbest = k;
        EXPECT_EQ(fbest, best);
    }
}

// ---------------------------------------------------------------- Zernike

TEST(Zernike, IndexEnumerationOrderFour)
{
    const std::vector<std::pair<int, int>> expected{{0, 0}, {1, 1}, {2, 0}, {2, 2}, {3, 1},
                                                    {3, 3}, {4, 0}, {4, 2}, {4, 4}};
    EXPECT_EQ(zernike_indices({}), expected);
    ZernikeConfig only;
    only.only = std::pair{4, 2};
    EXPECT_EQ(zernike_indices(only).size(), 1u);
    only.only = std::pair{4, 1};
    EXPECT_THROW((void)zernike_indices(only), ConfigError);
}

TEST(Zernike, RadialPolynomialsMatchClosedForms)
{
    for (double r : {0.0, 0.3, 0.71, 1.0}) {
        EXPECT_NEAR(zernike_radial(0, 0, r), 1.0, 1e-12);
        EXPECT_NEAR(zernike_radial(1, 1, r), r, 1e-12);
        EXPECT_NEAR(zernike_radial(2, 0, r), 2 * r * r - 1, 1e-12);
        EXPECT_NEAR(zernike_radial(2, 2, r), r * r, 1e-12);
        EXPECT_NEAR(zernike_radial(3, 1, r), 3 * r * r * r - 2 * r, 1e-12);
        EXPECT_NEAR(zernike_radial(3, 3, r), r * r * r, 1e-12);
        EXPECT_NEAR(zernike_radial(4, 0, r), 6 * std::pow(r, 4) - 6 * r * r + 1, 1e-12);
        EXPECT_NEAR(zernike_radial(4, 2, r), 4 * std::pow(r, 4) - 3 * r * r, 1e-12);
        EXPECT_NEAR(zernike_radial(4, 4, r), std::pow(r, 4), 1e-12);
    }
}

TEST(Zernike, MagnitudesInvariantUnderQuarterTurns)
{
    Rng rng(9);
    for (std::size_t n : {31u, 32u, 48u}) {
        const auto img = random_image(n, n, rng, 0.0, 1.0);
        const auto ref = zernike_features(img);
        ASSERT_EQ(ref.size(), 9u);
        Image rotated = img;
        for (int q = 1; q < 4; ++q) {
            rotated = rot90(rotated);
            const auto f = zernike_features(rotated);
            for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(f[i], ref[i], 1e-6);
        }
    }
}

TEST(Zernike, FullDiskConcentratesInZerothMoment)
{
    const auto f = zernike_features(Image(512, 512, 1.0));
    EXPECT_NEAR(f[0], 1.0, 1e-2);
    for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LT(f[i], 1e-3) << i;
}

TEST(Zernike, SingleMomentMatchesDirectSum)
{
    Rng rng(10);
    const auto img = random_image(20, 20, rng);
    std::complex<double> a = 0.0;
    for (std::size_t r = 0; r < 20; ++r)
        for (std::size_t c = 0; c < 20; ++c) {
            const double x = (2.0 * c + 1.0 - 20.0) / 20.0, y = (19.0 - 2.0 * r) / 20.0;
            const double rho = std::hypot(x, y);
            if (rho > 1.0) continue;
            a += img(r, c) * (4 * std::pow(rho, 4) - 3 * rho * rho) * std::polar(1.0, -2.0 * std::atan2(y, x));
        }
    a *= 5.0 / std::numbers::pi * 0.01;
    ZernikeConfig cfg;
    cfg.only = std::pair{4, 2};
    const auto f = zernike_features(img, cfg);
    ASSERT_EQ(f.size(), 1u);
    EXPECT_NEAR(f[0], std::abs(a), 1e-12);
}

// ---------------------------------------------------------------- LBP

TEST(Lbp, UniformCodes)
{
    EXPECT_EQ(lbp_riu2_code({0, 0, 0, 0, 0, 0, 0, 0}), 0);
    EXPECT_EQ(lbp_riu2_code({1, 1, 1, 1, 1, 1, 1, 1}), 8);
    EXPECT_EQ(lbp_riu2_code({0, 1, 1, 1, 0, 0, 0, 0}), 3);
    EXPECT_EQ(lbp_riu2_code({1, 0, 0, 0, 0, 0, 1, 1}), 3);
    EXPECT_EQ(lbp_riu2_code({1, 0, 1, 0, 0, 0, 0, 0}), 9);
}

TEST(Lbp, ConstantImageFallsInAllOnesBin)
{
    const auto h = lbp_features(Image(10, 10, 4.0));
    ASSERT_EQ(h.size(), 10u);
    EXPECT_DOUBLE_EQ(h[8], 1.0);
}

TEST(Lbp, NormalizedAndMonotonicInvariant)
{
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        const auto img = random_image(16 + rng.index(16), 16 + rng.index(16), rng);
        const auto h = lbp_features(img);
        double sum = 0.0;
        for (double v : h) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-12);
        Image remap = img;
        for (auto& v : remap.pixels()) v = 2.0 * v + 3.0;
        EXPECT_EQ(lbp_features(remap), h);
    }
    EXPECT_THROW((void)lbp_features(Image(2, 5)), Error);
}

// ---------------------------------------------------------------- extractor + cache

TEST(FeatureExtractor, DimensionsPerDescriptor)
{
    Rng rng(12);
    const auto img = random_image(40, 40, rng);
    FeatureConfig cfg;
    EXPECT_EQ(FeatureExtractor(cfg).extract(img).size(), 32u);
    cfg.descriptor = Descriptor::zernike;
    EXPECT_EQ(FeatureExtractor(cfg).extract(img).size(), 9u);
    cfg.descriptor = Descriptor::lbp;
    EXPECT_EQ(FeatureExtractor(cfg).extract(img).size(), 10u);
}

TEST(FeatureCache, RoundTrip)
{
    TempDir dir;
    Rng rng(13);
    FeatureConfig cfg;
    cfg.descriptor = Descriptor::zernike;
    FeatureCache cache{cfg, {"a:axial:0:1", "a:axial:0:2"}, {}};
    const FeatureExtractor ex(cfg);
    cache.rows = {ex.extract(random_image(20, 20, rng)), ex.extract(random_image(20, 20, rng))};
    write_feature_cache(dir / "feat", cache);
    const auto back = read_feature_cache(dir / "feat");
    EXPECT_EQ(back.config, cfg);
    EXPECT_EQ(back.keys, cache.keys);
    EXPECT_EQ(back.rows, cache.rows);
    EXPECT_THROW((void)read_feature_cache(dir / "missing"), Error);
}
