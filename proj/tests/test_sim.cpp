#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "dwiqc/core/labels.hpp"
#include "dwiqc/sim/benchmark.hpp"
#include "dwiqc/sim/phantom.hpp"
#include "test_util.hpp"

using namespace dwiqc;
using dwiqc::testing::TempDir;
using dwiqc::testing::random_image;

namespace {

// Naive O(N^4) DFT, the oracle for the FFT-based injectors.
ComplexGrid naive_dft(const ComplexGrid& in, std::size_t rows, std::size_t cols, int sign)
{
    ComplexGrid out(in.size());
    for (std::size_t u = 0; u < rows; ++u)
        for (std::size_t v = 0; v < cols; ++v) {
            std::complex<double> acc = 0.0;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const double ph = sign * 2.0 * std::numbers::pi *
                                      (static_cast<double>(u * r) / rows + static_cast<double>(v * c) / cols);
                    acc += in[r * cols + c] * std::polar(1.0, ph);
                }
            out[u * cols + v] = acc;
        }
    return out;
}

Image roll_rows(const Image& in, std::size_t shift)
{
    Image out(in.rows(), in.cols());
    for (std::size_t r = 0; r < in.rows(); ++r)
        for (std::size_t c = 0; c < in.cols(); ++c) out((r + shift) % in.rows(), c) = in(r, c);
    return out;
}

PhantomConfig small_phantom()
{
    PhantomConfig cfg;
    cfg.nx = 40;
    cfg.ny = 40;
    cfg.nz = 24;
    cfg.gradients = 2;
    return cfg;
}

}  // namespace

TEST(Ghosting, MatchesNaiveDftModulation)
{
    Rng rng(1);
    const auto img = random_image(8, 6, rng);
    const double alpha = 0.37;
    ComplexGrid g(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) g[i] = img.pixels()[i];
    auto k = naive_dft(g, 8, 6, -1);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 6; ++c) k[r * 6 + c] *= (r % 2) ? 1.0 - alpha : 1.0 + alpha;
    const auto back = naive_dft(k, 8, 6, +1);
    const auto out = inject_ghosting(img, alpha);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out.pixels()[i], back[i].real() / 48.0, 1e-12);
}

TEST(Ghosting, DeltaImageGivesHalfFovReplica)
{
    Image img(64, 16);
    img(5, 7) = 1.0;
    const auto out = inject_ghosting(img, 0.4);
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 16; ++c) {
            const double expected = (r == 5 && c == 7) ? 1.0 : ((r == 37 && c == 7) ? 0.4 : 0.0);
            EXPECT_NEAR(out(r, c), expected, 1e-12);
        }
}

TEST(Ghosting, UniformImageScalesByOnePlusAlpha)
{
    Image img(32, 32, 2.0);
    const auto out = inject_ghosting(img, 0.4);
    for (double v : out.pixels()) EXPECT_NEAR(v, 2.8, 1e-12);
}

TEST(Ghosting, ClosedFormIdentityAndZeroAlpha)
{
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        const std::size_t rows = 2 * (4 + rng.index(30)), cols = 4 + rng.index(40);
        const auto img = random_image(rows, cols, rng, 0.0, 1000.0);
        const double alpha = rng.uniform(0.0, 1.0);
        const auto out = inject_ghosting(img, alpha);
        const auto ghost = roll_rows(img, rows / 2);
        Image expected(rows, cols);
        for (std::size_t i = 0; i < img.size(); ++i) expected.pixels()[i] = img.pixels()[i] + alpha * ghost.pixels()[i];
        EXPECT_LE(max_abs_diff(out, expected), 1e-10 * 1000.0);
        EXPECT_LE(max_abs_diff(inject_ghosting(img, 0.0), img), 1e-12);
    }
}

TEST(Herringbone, ZeroImageSpikeGivesTwoConjugatePeaks)
{
    Image zero(32, 32);
    const auto out = inject_herringbone(zero, {8, 8}, 1.0);
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c)
            EXPECT_NEAR(out(r, c), std::cos(2.0 * std::numbers::pi * (8.0 * c / 32 + 8.0 * r / 32)), 1e-12);
    ComplexGrid g(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) g[i] = out.pixels()[i];
    const auto k = naive_dft(g, 32, 32, -1);
    int peaks = 0;
    for (std::size_t u = 0; u < 32; ++u)
        for (std::size_t v = 0; v < 32; ++v) {
            if (std::abs(k[u * 32 + v]) > 1e-6) {
                ++peaks;
                EXPECT_TRUE((u == 8 && v == 8) || (u == 24 && v == 24));
            }
        }
    EXPECT_EQ(peaks, 2);
}

TEST(Herringbone, ZeroAmplitudeIdentityAndZeroFrequencyError)
{
    Rng rng(3);
    const auto img = random_image(16, 20, rng);
    EXPECT_EQ(inject_herringbone(img, {3, 4}, 0.0), img);
    EXPECT_THROW((void)inject_herringbone(img, {0, 0}, 1.0), Error);
}

TEST(ChemicalShift, Rules)
{
    Image zero(8, 8);
    EXPECT_EQ(inject_chemical_shift(zero, 2, 0.9), zero);
    EXPECT_THROW((void)inject_chemical_shift(zero, 0, 0.9), Error);

    Image img(8, 8, 1.0);
    img(3, 2) = 10.0;
    const auto out = inject_chemical_shift(img, 2, 0.9);
    EXPECT_DOUBLE_EQ(out(3, 4), 0.4 * 1.0 + 0.6 * 10.0);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c)
            if (!(r == 3 && c == 4)) EXPECT_DOUBLE_EQ(out(r, c), img(r, c));
}

TEST(ChemicalShift, ChangesOnlyShiftedRimPixels)
{
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        const auto img = random_image(20, 24, rng, 0.0, 1.0);
        const int shift = (t % 2 ? -1 : 1) * (1 + static_cast<int>(rng.index(3)));
        const auto out = inject_chemical_shift(img, shift, 0.9);
        const double thr = pixel_quantile(img, 0.9);
        for (std::size_t r = 0; r < 20; ++r)
            for (long c = 0; c < 24; ++c) {
                const long src = c - shift;
                const bool rim_src = src >= 0 && src < 24 && img(r, static_cast<std::size_t>(src)) > thr;
                if (!rim_src) EXPECT_EQ(out(r, static_cast<std::size_t>(c)), img(r, static_cast<std::size_t>(c)));
            }
    }
}

TEST(Susceptibility, IdentityDipAndBounds)
{
    Rng rng(5);
    const auto img = random_image(32, 32, rng);
    EXPECT_LE(max_abs_diff(inject_susceptibility(img, {16, 16}, 5, 0.0, 0.0), img), 1e-12);

    Image flat(32, 32, 1.0);
    const auto dip = inject_susceptibility(flat, {16, 16}, 5, 2.0, 0.6);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) {
            const bool in_disk = (r - 16) * (r - 16) + (c - 16) * (c - 16) <= 25;
            EXPECT_NEAR(dip(static_cast<std::size_t>(r), static_cast<std::size_t>(c)), in_disk ? 0.7 : 1.0, 1e-12);
        }
    EXPECT_THROW((void)inject_susceptibility(flat, {2, 16}, 5, 1.0, 0.5), Error);
    EXPECT_THROW((void)inject_susceptibility(flat, {16, 16}, 1, 1.0, 0.5), Error);
}

TEST(Susceptibility, CheckerboardCenterIsDisplacedByWarpScale)
{
    Image board(32, 32);
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c) board(r, c) = static_cast<double>((r / 2 + c / 2) % 2);
    const auto out = inject_susceptibility(board, {16, 16}, 6, 1.5, 0.0);
    // At the center the displacement equals warp_scale: sample at row 14.5.
    EXPECT_NEAR(out(16, 16), sample_bilinear_clamped(board, 14.5, 16.0), 1e-12);
    EXPECT_NEAR(out(16, 16), 0.5 * (board(14, 16) + board(15, 16)), 1e-12);
}

TEST(VolumeInjectors, MotionAndMultibandRules)
{
    const auto vol = make_phantom(small_phantom(), "p", 9);
    const auto ext = compute_brain_extent(vol);
    const auto none = inject_motion(vol, 1, 2, 0.0, ext);
    EXPECT_EQ(none.volume.data(), vol.data());
    EXPECT_TRUE(none.affected_sagittal.empty());

    const auto motion = inject_motion(vol, 1, 2, 0.5, ext);
    for (int z = 0; z < 24; ++z) {
        const bool banded = z >= ext.bbox[2].lo && z <= ext.bbox[2].hi && z % 2 == 0;
        EXPECT_FLOAT_EQ(motion.volume.at(20, 20, static_cast<std::size_t>(z), 1),
                        static_cast<float>(vol.at(20, 20, static_cast<std::size_t>(z), 1) * (banded ? 0.5 : 1.0)));
        EXPECT_EQ(motion.volume.at(20, 20, static_cast<std::size_t>(z), 0), vol.at(20, 20, static_cast<std::size_t>(z), 0));
    }
    std::vector<int> kept;
    for (const auto& s : extract_slices(vol, View::sagittal, ext, {}))
        if (s.gradient_index == 0) kept.push_back(s.slice_index);
    EXPECT_EQ(motion.affected_sagittal, kept);

    EXPECT_EQ(inject_multiband(vol, 0, 4, 0.0, ext).volume.data(), vol.data());
    DWIVolume flat("flat", 8, 8, 16, 1, 10.0f);
    const auto flat_ext = compute_brain_extent(flat);
    const auto mb = inject_multiband(flat, 0, 4, 0.3, flat_ext, {0, 0, true});
    const double expected[4] = {10.0, 13.0, 10.0, 7.0};
    double period_mean = 0.0;
    for (std::size_t z = 0; z < 16; ++z) {
        EXPECT_NEAR(mb.volume.at(3, 3, z, 0), expected[z % 4], 1e-5);
        if (z < 4) period_mean += mb.volume.at(3, 3, z, 0) / 4.0;
    }
    EXPECT_NEAR(period_mean, 10.0, 1e-5);
    EXPECT_EQ(mb.affected_sagittal.size(), 8u);
}

TEST(Injectors, PreserveShapeAndFiniteness)
{
    Rng rng(6);
    for (int t = 0; t < 10; ++t) {
        const auto img = random_image(32, 40, rng, 0.0, 500.0);
        for (const auto& out : {inject_ghosting(img, 0.5), inject_herringbone(img, {5, -3}, 20.0),
                                inject_chemical_shift(img, -3, 0.9),
                                inject_susceptibility(img, {16, 20}, 8, 3.0, 0.5)}) {
            EXPECT_TRUE(out.same_shape(img));
            EXPECT_TRUE(all_finite(out));
        }
    }
}

TEST(Phantom, DeterministicAndWellFormed)
{
    const auto a = make_phantom(small_phantom(), "p", 11);
    const auto b = make_phantom(small_phantom(), "p", 11);
    EXPECT_EQ(a.data(), b.data());
    EXPECT_NO_THROW(a.validate());
    const auto ext = compute_brain_extent(a);
    EXPECT_GT(ext.voxel_count(), 1000u);
    EXPECT_GT(ext.bbox[2].lo, 0);
    EXPECT_EQ(phantom_id(7), "phantom_007");
}

class BenchmarkTest : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        dir_ = new TempDir("bench");
        write_phantom_set(dir_->path() / "clean", 4, small_phantom(), 123);
    }
    static void TearDownTestSuite()
    {
        delete dir_;
        dir_ = nullptr;
    }
    static std::string slurp(const std::filesystem::path& p)
    {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    }
    static TempDir* dir_;
};
TempDir* BenchmarkTest::dir_ = nullptr;

TEST_F(BenchmarkTest, ZeroMixIsAllClean)
{
    BenchmarkConfig cfg;
    cfg.seed = 1;
    const auto m = make_benchmark(dir_->path() / "clean", dir_->path() / "zero", cfg);
    EXPECT_TRUE(m.entries.empty());
    EXPECT_EQ(m.clean_count, 4u);
    for (const auto& row : read_label_csv(dir_->path() / "zero" / "labels.csv")) EXPECT_EQ(row.label, Label::artifact_free);
}

TEST_F(BenchmarkTest, SameSeedGivesIdenticalLabelsAndManifest)
{
    BenchmarkConfig cfg;
    cfg.seed = 42;
    cfg.mix = parse_mix("ghosting=0.2,motion=0.3,herringbone=0.1");
    make_benchmark(dir_->path() / "clean", dir_->path() / "s1", cfg);
    make_benchmark(dir_->path() / "clean", dir_->path() / "s2", cfg);
    EXPECT_EQ(slurp(dir_->path() / "s1" / "labels.csv"), slurp(dir_->path() / "s2" / "labels.csv"));
    EXPECT_EQ(slurp(dir_->path() / "s1" / "manifest.json"), slurp(dir_->path() / "s2" / "manifest.json"));
    cfg.seed = 43;
    make_benchmark(dir_->path() / "clean", dir_->path() / "s3", cfg);
    EXPECT_NE(slurp(dir_->path() / "s1" / "labels.csv"), slurp(dir_->path() / "s3" / "labels.csv"));
}

TEST_F(BenchmarkTest, ManifestEqualsBruteForceDiffForAxialKinds)
{
    BenchmarkConfig cfg;
    cfg.seed = 7;
    cfg.mix = parse_mix("ghosting=0.2,herringbone=0.1,chemical_shift=0.1,susceptibility=0.1");
    const auto out = dir_->path() / "diff";
    const auto m = make_benchmark(dir_->path() / "clean", out, cfg);
    const auto positives = m.positive_keys();
    std::size_t checked = 0;
    for (const auto& path : list_volumes(dir_->path() / "clean")) {
        const auto clean = load_dwi(path);
        const auto bad = load_dwi(out / "volumes" / (clean.id() + ".nii.gz"));
        const auto ext = compute_brain_extent(clean);
        for (std::size_t g = 0; g < clean.gradient_count(); ++g)
            for (std::size_t z = 0; z < clean.nz(); ++z) {
                const bool changed = max_abs_diff(clean.axial_slice(z, g), bad.axial_slice(z, g)) > 1e-9;
                const std::string key = clean.id() + ":axial:" + std::to_string(g) + ":" + std::to_string(z);
                EXPECT_EQ(changed, positives.count(key) == 1) << key;
                ++checked;
            }
        (void)ext;
    }
    EXPECT_GT(checked, 0u);
    std::size_t pos_labels = 0;
    for (const auto& row : read_label_csv(out / "labels.csv")) {
        const std::string key = row.volume_id + ":" + std::string(to_string(row.view)) + ":" +
                                std::to_string(row.gradient_index) + ":" + std::to_string(row.slice_index);
        EXPECT_EQ(row.label == Label::artifactual, positives.count(key) == 1);
        pos_labels += row.label == Label::artifactual;
    }
    EXPECT_EQ(pos_labels, positives.size());
}

TEST_F(BenchmarkTest, GhostingFractionCountsAndManifestRoundTrip)
{
    BenchmarkConfig cfg;
    cfg.seed = 5;
    cfg.mix = parse_mix("ghosting=0.2");
    const auto m = make_benchmark(dir_->path() / "clean", dir_->path() / "g", cfg);
    std::size_t expected = 0;
    for (const auto& path : list_volumes(dir_->path() / "clean")) {
        const auto vol = load_dwi(path);
        const auto n = kept_indices(View::axial, compute_brain_extent(vol), {}).size();
        expected += vol.gradient_count() * static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n)));
    }
    EXPECT_EQ(m.positive_keys().size(), expected);
    const auto back = read_manifest(dir_->path() / "g" / "manifest.json");
    EXPECT_EQ(back.positive_keys(), m.positive_keys());
    EXPECT_EQ(back.clean_count, m.clean_count);
}

TEST_F(BenchmarkTest, SagittalKindsLabelKeptSagittalSlices)
{
    BenchmarkConfig cfg;
    cfg.seed = 8;
    cfg.mix = parse_mix("motion=1.0");
    const auto m = make_benchmark(dir_->path() / "clean", dir_->path() / "m", cfg);
    ASSERT_EQ(m.entries.size(), 4u);
    for (const auto& row : read_label_csv(dir_->path() / "m" / "labels.csv")) {
        EXPECT_EQ(row.label, row.view == View::sagittal ? Label::artifactual : Label::artifact_free);
    }
}

TEST_F(BenchmarkTest, ConfigErrors)
{
    EXPECT_THROW((void)parse_mix("ghost=0.2"), ConfigError);
    EXPECT_THROW((void)parse_mix("ghosting"), ConfigError);
    BenchmarkConfig cfg;
    cfg.mix = parse_mix("ghosting=1.5");
    EXPECT_THROW(cfg.validate(), ConfigError);
    TempDir empty;
    EXPECT_THROW((void)make_benchmark(empty.path(), empty / "out", BenchmarkConfig{}), Error);
}
