#include <doctest.h>

#include "cytopipe/io.hpp"
#include "cytopipe/raster.hpp"
#include "cytopipe/synthetic.hpp"
#include "test_support.hpp"

using namespace cytotest;

namespace {

SyntheticParams small_params() {
    SyntheticParams p;
    p.cells = 15;
    p.tiles = 2;
    p.tile_width = 384;
    p.tile_height = 256;
    p.map_width = 192;
    p.map_height = 128;
    p.z_levels = 5;
    return p;
}

std::string tree_digest(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
    std::sort(files.begin(), files.end());
    std::string digest;
    for (const auto& f : files) {
        std::string text = slurp(root / f);
        // slides.txt and manifests hold absolute paths of the output root.
        for (std::size_t at; (at = text.find(root.string())) != std::string::npos;) text.replace(at, root.string().size(), "@");
        digest += f.string() + ":" + std::to_string(std::hash<std::string>{}(text)) + "\n";
    }
    return digest;
}

}  // namespace

TEST_CASE("planted points respect separation and margin") {
    Rng rng(101);
    const auto pts = plant_points(rng, 500, 300, 40, 30.0, 20);
    REQUIRE(pts.size() == 40);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(pts[i].x >= 20);
        CHECK(pts[i].x < 480);
        CHECK(pts[i].y >= 20);
        for (std::size_t j = 0; j < i; ++j) CHECK(std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) >= 30.0);
    }
    CHECK_THROWS_AS(plant_points(rng, 100, 100, 500, 30.0, 10), InvalidParameter);
    CHECK_THROWS_AS(plant_points(rng, 10, 10, 1, 1.0, 10), InvalidParameter);
    const auto left = plant_points(rng, 400, 400, 10, 10.0, 5, [](Point p) { return p.x < 100; });
    for (const Point& p : left) CHECK(p.x < 100);
}

TEST_CASE("block texture stays in range") {
    Rng rng(102);
    const ImageF32 t = block_texture(rng, 50, 40, 3, 2, 6, 10, 20);
    CHECK(t.channels() == 3);
    for (float v : t.data()) {
        CHECK(v >= 10.0f);
        CHECK(v <= 20.0f);
    }
    CHECK_THROWS_AS(block_texture(rng, 10, 10, 1, 5, 4, 0, 1), InvalidParameter);
}

TEST_CASE("blur ladder is sharp at the planted level") {
    Rng rng(103);
    const ImageF32 t = block_texture(rng, 32, 32, 1, 2, 6, 0, 255);
    const ZStack s = blur_ladder_stack(t, 7, 2, 1.0);
    REQUIRE(s.levels.size() == 7);
    CHECK(s.levels[2] == to_u8(t));
    CHECK(s.levels[4] == to_u8(gaussian_blur(t, 2.0)));
    CHECK(s.levels[0] == s.levels[4]);
}

TEST_CASE("synthetic dataset layout and oracles") {
    TempDir dir("syn");
    const SyntheticDataset ds = make_synthetic(dir / "out", small_params());
    REQUIRE(ds.slides.size() == 2);
    CHECK(ds.slides[0].manifest.diagnosis == Diagnosis::healthy);
    CHECK(ds.slides[1].manifest.diagnosis == Diagnosis::cancer);
    for (const SyntheticSlide& s : ds.slides) {
        const SlideManifest m = load_manifest(s.manifest_path);
        CHECK(m.z_levels == 5);
        CHECK(m.tiles.size() == 2);
        CHECK(m.overlapping_tiles);
        CHECK(s.nuclei.size() == 15);
        for (const auto& n : s.nuclei) {
            CHECK(n.sharp_level >= 1);
            CHECK(n.sharp_level <= 3);
            CHECK(n.position.x < m.width());
        }
        for (const TileSpec& t : m.tiles) {
            const ImageF32 map = read_dmap(ds.dmap_dir / m.slide_id / (t.tile_id + ".dmap"));
            CHECK(map.width() == 192);
            CHECK(map.height() == 128);
            for (float v : map.data()) REQUIRE(v >= 0.0f);
            CHECK(read_png(t.paths[0]).width() == 384);
        }
        CHECK(fs::exists(dir / "out" / "truth" / m.slide_id / "points.csv"));
        CHECK(fs::exists(dir / "out" / "truth" / m.slide_id / "nuclei.csv"));
    }
    CHECK(fs::exists(dir / "out" / "slides.txt"));
}

TEST_CASE("synthetic generation is deterministic per seed") {
    TempDir a("syna"), b("synb"), c("sync");
    SyntheticParams p = small_params();
    p.slides = 1;
    make_synthetic(a / "o", p);
    make_synthetic(b / "o", p);
    p.seed = 8;
    make_synthetic(c / "o", p);
    CHECK(tree_digest(a / "o") == tree_digest(b / "o"));
    CHECK(tree_digest(a / "o") != tree_digest(c / "o"));
}

TEST_CASE("synthetic parameters are validated") {
    TempDir dir("synbad");
    SyntheticParams p = small_params();
    p.overlap = 400;
    CHECK_THROWS_AS(make_synthetic(dir / "o", p), InvalidParameter);
    p = small_params();
    p.z_levels = 0;
    CHECK_THROWS_AS(make_synthetic(dir / "o", p), InvalidParameter);
}
