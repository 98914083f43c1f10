#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "test_support.hpp"
#include "xpod/error.hpp"
#include "xpod/hash.hpp"
#include "xpod/image.hpp"
#include "xpod/image_io.hpp"
#include "xpod/parallel.hpp"
#include "xpod/random.hpp"

namespace xpod {
namespace {

using test::TempDir;

void write_raw_floats(const std::filesystem::path& p, const std::vector<float>& v) {
    std::string bytes(v.size() * 4, '\0');
    std::memcpy(bytes.data(), v.data(), bytes.size());
    test::spit(p, bytes);
}

TEST(ImageGrid, RejectsBadConstruction) {
    EXPECT_THROW(ImageGrid(0, 3, 1.0), ValidationError);
    EXPECT_THROW(ImageGrid(3, 3, 0.0), ValidationError);
    EXPECT_THROW(ImageGrid(2, 2, 1.0, std::vector<double>{1, 2, 3}), ValidationError);
    EXPECT_THROW(ImageGrid(1, 1, 1.0, std::vector<double>{std::nan("")}), ValidationError);
    ImageGrid g(2, 2, 1.0);
    EXPECT_THROW(g.set(0, 0, std::numeric_limits<double>::infinity()), ValidationError);
    EXPECT_THROW((void)g.at(2, 0), ValidationError);
}

TEST(ImageIo, SmallGridRoundTripIsBitwise) {
    TempDir dir;
    const ImageGrid g(2, 2, 0.15, std::vector<double>{0.0, 1.5, -3.25, 1e6});
    write_image(g, dir / "g");
    const ImageGrid back = read_image(dir / "g");
    EXPECT_EQ(back, g);
    const auto meta = read_sidecar(dir / "g.json");
    EXPECT_EQ(meta["width"], 2);
    EXPECT_EQ(meta["height"], 2);
    EXPECT_EQ(meta["dtype"], "f32");
    EXPECT_EQ(meta["role"], "intensity");
}

TEST(ImageIo, RandomGridsRoundTripProperty) {
    TempDir dir;
    RandomStream rng({7, 0});
    for (int trial = 0; trial < 25; ++trial) {
        const int w = 1 + static_cast<int>(rng.below(40));
        const int h = 1 + static_cast<int>(rng.below(40));
        std::vector<double> v(static_cast<std::size_t>(w) * h);
        for (auto& x : v) {
            // float32-representable values, so the round trip must be exact
            x = static_cast<float>((rng.uniform() - 0.5) * std::pow(10.0, rng.below(12)));
        }
        const ImageGrid g(w, h, 0.1 + rng.uniform(), v);
        write_image(g, dir / "r");
        const ImageGrid back = read_image(dir / "r");
        ASSERT_EQ(back.values().size(), g.values().size());
        for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(back[i], g[i]);
        EXPECT_EQ(back.width(), w);
        EXPECT_EQ(back.height(), h);
    }
}

TEST(ImageIo, SameGridWrittenTwiceIsByteIdentical) {
    TempDir dir;
    const ImageGrid g(5, 3, 1.0, 0.25);
    write_image(g, dir / "a");
    write_image(g, dir / "b");
    EXPECT_EQ(test::slurp(dir / "a.f32"), test::slurp(dir / "b.f32"));
    EXPECT_EQ(test::slurp(dir / "a.json"), test::slurp(dir / "b.json"));
}

TEST(ImageIo, ZeroPixelIsFourZeroBytes) {
    TempDir dir;
    write_image(ImageGrid(1, 1, 1.0), dir / "z");
    EXPECT_EQ(test::slurp(dir / "z.f32"), std::string(4, '\0'));
}

TEST(ImageIo, PayloadLengthMatchesDetectorFormat) {
    TempDir dir;
    write_image(ImageGrid(956, 760, 0.15), dir / "big");
    EXPECT_EQ(std::filesystem::file_size(dir / "big.f32"), 956u * 760u * 4u);
}

TEST(ImageIo, DimensionMismatchRejected) {
    TempDir dir;
    write_image(ImageGrid(10, 10, 1.0), dir / "m");
    write_raw_floats(dir / "m.f32", std::vector<float>(50, 1.0f));
    EXPECT_THROW(read_image(dir / "m"), ValidationError);
}

TEST(ImageIo, NonFinitePayloadRejected) {
    TempDir dir;
    write_image(ImageGrid(2, 1, 1.0), dir / "n");
    write_raw_floats(dir / "n.f32", {1.0f, std::numeric_limits<float>::quiet_NaN()});
    EXPECT_THROW(read_image(dir / "n"), ValidationError);
}

TEST(ImageIo, ValuesBeyondFloatRangeRejectedOnWrite) {
    TempDir dir;
    EXPECT_THROW(write_image(ImageGrid(1, 1, 1.0, 1e300), dir / "o"), ValidationError);
}

TEST(ImageIo, MissingSidecarKeyRejected) {
    TempDir dir;
    write_image(ImageGrid(2, 2, 1.0), dir / "k");
    test::spit(dir / "k.json", R"({"width": 2, "height": 2, "dtype": "f32", "role": "x"})");
    EXPECT_THROW(read_image(dir / "k"), ValidationError);
}

TEST(ImageIo, MaskRoundTripAndStrictValues) {
    TempDir dir;
    BinaryMask m(3, 2);
    m.set(1, 0, true);
    m.set(2, 1, true);
    write_mask(m, 0.5, dir / "mask");
    EXPECT_EQ(read_mask(dir / "mask"), m);
    EXPECT_EQ(read_sidecar(dir / "mask")["role"], "mask");
    write_image(ImageGrid(3, 2, 0.5, 0.5), dir / "half", "mask");
    EXPECT_THROW(read_mask(dir / "half"), ValidationError);
}

TEST(Random, PhiloxKnownAnswers) {
    using A4 = std::array<std::uint32_t, 4>;
    EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}), (A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
              (A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
              (A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Random, SameSeedSameDraws) {
    RandomStream a({42, 0});
    RandomStream b({42, 0});
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Random, DifferentStreamsDiffer) {
    RandomStream a({42, 0});
    RandomStream b({42, 1});
    int equal = 0;
    for (int i = 0; i < 1000; ++i) equal += a.next_u64() == b.next_u64();
    EXPECT_EQ(equal, 0);
}

TEST(Random, StreamsAreUncorrelated) {
    RandomStream a({42, 0});
    RandomStream b({42, 1});
    const int n = 1000000;
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (int i = 0; i < n; ++i) {
        const double x = a.uniform();
        const double y = b.uniform();
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    const double cov = sab / n - (sa / n) * (sb / n);
    const double rho = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
    EXPECT_LT(std::abs(rho), 0.01);
}

TEST(Random, UniformInOpenInterval) {
    RandomStream r({1, 2});
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Random, NormalMoments) {
    RandomStream r({3, 4});
    const int n = 400000;
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        ss += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(ss / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

class PoissonRegime : public ::testing::TestWithParam<double> {};

TEST_P(PoissonRegime, MeanAndVarianceMatchRate) {
    const double lambda = GetParam();
    RandomStream r({5, static_cast<std::uint64_t>(lambda * 10)});
    const int n = 200000;
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
        const double k = r.poisson(lambda);
        ASSERT_EQ(k, std::floor(k));
        ASSERT_GE(k, 0.0);
        s += k;
        ss += k * k;
    }
    const double mean = s / n;
    const double var = ss / n - mean * mean;
    EXPECT_NEAR(mean, lambda, 4.0 * std::sqrt(lambda / n));
    EXPECT_NEAR(var, lambda, 5.0 * lambda * std::sqrt(2.0 / n) + 4.0 * std::sqrt(lambda / n));
}

INSTANTIATE_TEST_SUITE_P(Rates, PoissonRegime, ::testing::Values(0.5, 3.0, 9.9, 10.0, 47.0, 1000.0, 5e4));

TEST(Random, PoissonZeroRateAndNegativeRate) {
    RandomStream r({9, 9});
    EXPECT_EQ(r.poisson(0.0), 0.0);
    EXPECT_THROW(r.poisson(-1.0), ValidationError);
}

TEST(Random, DerivedSeedsAreDistinct) {
    const SeedSpec base{11, 3};
    EXPECT_EQ(derive_seed(base, 1), derive_seed(base, 1));
    EXPECT_NE(derive_seed(base, 1), derive_seed(base, 2));
    EXPECT_NE(derive_seed(base, 1), derive_seed({11, 4}, 1));
    EXPECT_EQ(derive_seed(base, 1).master_seed, 11u);
}

TEST(Random, BelowIsInRangeAndCoversValues) {
    RandomStream r({2, 2});
    std::vector<int> seen(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = r.below(7);
        ASSERT_LT(v, 7u);
        ++seen[v];
    }
    for (int c : seen) EXPECT_GT(c, 800);
}

TEST(Hash, FnvKnownValues) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(hex64(0xabcull), "0000000000000abc");
}

TEST(Parallel, ResultsIndependentOfThreadCount) {
    auto run = [](unsigned threads) {
        std::vector<double> out(257);
        parallel_for(out.size(), threads, [&](std::size_t i) {
            RandomStream r({99, i});
            out[i] = r.normal();
        });
        return out;
    };
    const auto one = run(1);
    EXPECT_EQ(run(4), one);
    EXPECT_EQ(run(16), one);
}

TEST(Parallel, PropagatesFirstException) {
    EXPECT_THROW(parallel_for(100, 4,
                              [](std::size_t i) {
                                  if (i == 37) throw RuntimeFailure("boom");
                              }),
                 RuntimeFailure);
}

}  // namespace
}  // namespace xpod
