#include <doctest.h>

#include "cytopipe/blur.hpp"
#include "cytopipe/patchio.hpp"
#include "cytopipe/raster.hpp"
#include "cytopipe/synthetic.hpp"
#include "test_support.hpp"

using namespace cytotest;

namespace {

ImageU8 blurred(const ImageU8& img, double sigma) {
    if (sigma == 0.0) return img;
    return to_u8(gaussian_blur(to_f32(img), sigma));
}

// Independent row scan of a horizontal profile: one edge per monotone run,
// contrast = run rise, width = run length.
double profile_oracle(const std::vector<double>& row, double c_t) {
    double sum = 0.0;
    std::size_t n = 0;
    std::size_t i = 0;
    while (i + 1 < row.size()) {
        const double d = row[i + 1] - row[i];
        if (d == 0.0) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j + 1 < row.size() && (row[j + 1] - row[j]) * d > 0.0) ++j;
        const double c = std::abs(row[j] - row[i]);
        if (c >= c_t) {
            const double w = double(j - i);
            sum += std::min(1.0, (c <= 50.0 ? 5.0 : 3.0) / w);
            ++n;
        }
        i = j;
    }
    return n ? sum / double(n) / 16.0 : 0.0;
}

}  // namespace

TEST_CASE("constant patch scores zero") {
    const BlurScore s = embm_score(ImageU8(16, 16, 1, 90));
    CHECK(s.value == 0.0);
    CHECK(s.salient_edge_count == 0);
}

TEST_CASE("ideal step scores one sixteenth") {
    const BlurScore s = embm_score(step_image(32, 32, 16, 0, 255));
    CHECK(s.value == doctest::Approx(0.0625));
    CHECK(s.salient_edge_count == 32);
}

TEST_CASE("blurred step scores lower and matches a scan oracle") {
    const ImageU8 step = step_image(40, 20, 20, 0, 255);
    const ImageU8 soft = blurred(step, 3.0);
    const double sharp = embm_score(step).value;
    const double value = embm_score(soft).value;
    CHECK(value < sharp);
    std::vector<double> row;
    for (int x = 0; x < soft.width(); ++x) row.push_back(soft.at(x, 0));
    CHECK(value == doctest::Approx(profile_oracle(row, 8.0)).epsilon(1e-12));
}

TEST_CASE("jnb width switches at contrast 50") {
    CHECK(jnb_width(50.0) == 5.0);
    CHECK(jnb_width(50.5) == 3.0);
}

TEST_CASE("low-contrast edges are ignored") {
    const ImageU8 faint = step_image(16, 16, 8, 100, 107);
    CHECK(embm_score(faint).value == 0.0);
    CHECK(embm_score(faint, 7.0).value > 0.0);
}

TEST_CASE("contrast below threshold everywhere forces zero") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        ImageU8 img(24, 24, 1);
        for (auto& v : img.buffer()) v = static_cast<std::uint8_t>(120 + uniform_below(rng, 8));
        // Any monotone run spans less than 8 grey levels.
        CHECK(embm_score(img).value == 0.0);
    }
}

TEST_CASE("metric rejects tiny patches and bad thresholds") {
    CHECK_THROWS_AS(embm_score(ImageU8(7, 16, 1)), InvalidParameter);
    CHECK_THROWS_AS(embm_score(ImageU8(16, 16, 1), 0.0), InvalidParameter);
}

TEST_CASE("rgb patches score on luminance") {
    Rng rng(32);
    const ImageU8 rgb = random_u8(rng, 20, 20, 3);
    const ImageF32 lum = to_luminance(rgb);
    CHECK(embm_score(rgb).value == embm_score(lum).value);
}

TEST_CASE("score is deterministic and symmetric") {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        const ImageU8 img = blurred(random_u8(rng, 32, 32, 1), uniform(rng, 0.0, 2.0));
        const double base = embm_score(img).value;
        CHECK(embm_score(img).value == base);
        for (int q = 1; q < 4; ++q) CHECK(std::abs(embm_score(rotate90(img, q)).value - base) <= 1e-6);
        CHECK(std::abs(embm_score(flip_horizontal(img)).value - base) <= 1e-6);
    }
}

TEST_CASE("score decreases along a blur ladder") {
    Rng rng(34);
    for (int trial = 0; trial < 5; ++trial) {
        ImageF32 blocks = block_texture(rng, 80, 80, 1, 16, 32, 0, 255);
        for (auto& v : blocks.buffer()) v = v < 127.5f ? 20.0f : 235.0f;
        const ImageU8 tex = to_u8(blocks);
        double prev = std::numeric_limits<double>::infinity();
        for (double s : {0.0, 1.0, 2.0, 4.0, 8.0}) {
            const double v = embm_score(blurred(tex, s)).value;
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("pick sharpest") {
    const ImageU8 step = step_image(32, 32, 16, 10, 240);
    const std::vector<ImageU8> one{step};
    CHECK(pick_sharpest<std::uint8_t>(one) == 0);
    const std::vector<ImageU8> pair{step, blurred(step, 2.0)};
    CHECK(pick_sharpest<std::uint8_t>(pair) == 0);
    const std::vector<ImageU8> rev{blurred(step, 2.0), step};
    CHECK(pick_sharpest<std::uint8_t>(rev) == 1);
    const std::vector<ImageU8> twins{step, step};
    CHECK(pick_sharpest<std::uint8_t>(twins) == 0);
    CHECK_THROWS_AS(pick_sharpest<std::uint8_t>(std::vector<ImageU8>{}), InvalidParameter);
}

TEST_CASE("edge scan reports run geometry") {
    ImageF32 line(10, 1, 1, std::vector<float>{0, 0, 10, 30, 40, 40, 40, 20, 20, 20});
    const auto edges = scan_edges(line);
    std::vector<EdgeSample> rows;
    for (const auto& e : edges)
        if (e.axis == ScanAxis::row) rows.push_back(e);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].x == 2);
    CHECK(rows[0].contrast == 40.0);
    CHECK(rows[0].width == 3);
    CHECK(rows[1].x == 6);
    CHECK(rows[1].contrast == 20.0);
    CHECK(rows[1].width == 1);
}
