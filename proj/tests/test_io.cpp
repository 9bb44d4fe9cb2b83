#include <doctest.h>

#include <cstring>

#include "cytopipe/io.hpp"
#include "cytopipe/manifest.hpp"
#include "test_support.hpp"

using namespace cytotest;
using nlohmann::json;

namespace {

json one_tile_manifest() {
    return {{"slide_id", "s1"},
            {"patient_id", "p1"},
            {"diagnosis", "cancer"},
            {"pixel_size_um", 0.25},
            {"z_levels", 1},
            {"z_step_um", 0.4},
            {"tiles", json::array({{{"tile_id", "t0"},
                                    {"origin", {0, 0}},
                                    {"width", 64},
                                    {"height", 32},
                                    {"paths", {{"z0", "t0_z0.png"}}}}})}};
}

ManifestErrorCode code_of(const json& j, const fs::path& base, bool check = false) {
    try {
        parse_manifest(j, base, check);
    } catch (const ManifestError& e) {
        return e.code();
    }
    FAIL("manifest accepted");
    return ManifestErrorCode::syntax;
}

}  // namespace

TEST_CASE("dmap layout is little endian with header") {
    ImageF32 m(2, 1, 1, std::vector<float>{1.0f, -2.5f});
    const auto bytes = encode_dmap(m);
    REQUIRE(bytes.size() == 13 + 8);
    CHECK(std::memcmp(bytes.data(), "DMAP\x01", 5) == 0);
    CHECK(bytes[5] == 2);
    CHECK(bytes[6] == 0);
    CHECK(bytes[9] == 1);
    // 1.0f = 0x3F800000
    CHECK(bytes[13] == 0x00);
    CHECK(bytes[16] == 0x3F);
    CHECK(bytes[15] == 0x80);
}

TEST_CASE("dmap round trip is bit exact") {
    Rng rng(61);
    TempDir dir("dmap");
    const float extremes[] = {std::numeric_limits<float>::max(), std::numeric_limits<float>::lowest(),
                              std::numeric_limits<float>::min(), std::numeric_limits<float>::denorm_min(),
                              -0.0f, std::numeric_limits<float>::infinity(), -std::numeric_limits<float>::infinity()};
    for (int trial = 0; trial < 20; ++trial) {
        ImageF32 m(1 + int(uniform_below(rng, 40)), 1 + int(uniform_below(rng, 40)), 1);
        for (auto& v : m.buffer()) v = std::bit_cast<float>(static_cast<std::uint32_t>(rng()));
        for (auto& v : m.buffer())
            if (std::isnan(v)) v = extremes[uniform_below(rng, 7)];
        write_dmap(dir / "m.dmap", m);
        const ImageF32 back = read_dmap(dir / "m.dmap");
        REQUIRE(back.width() == m.width());
        REQUIRE(std::memcmp(back.data().data(), m.data().data(), m.size() * 4) == 0);
    }
}

TEST_CASE("malformed dmap files are rejected") {
    ImageF32 m(3, 2, 1, 0.5f);
    auto good = encode_dmap(m);
    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_dmap(bad_magic), FormatError);
    auto bad_version = good;
    bad_version[4] = 2;
    CHECK_THROWS_AS(decode_dmap(bad_version), FormatError);
    auto truncated = good;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_dmap(truncated), FormatError);
    auto extra = good;
    extra.push_back(0);
    CHECK_THROWS_AS(decode_dmap(extra), FormatError);
    auto zero = good;
    zero[5] = 0;
    CHECK_THROWS_AS(decode_dmap(zero), FormatError);
    CHECK_THROWS_AS(encode_dmap(ImageF32(2, 2, 3)), InvalidParameter);
    CHECK_THROWS_AS(read_dmap("/nonexistent/x.dmap"), ValidationError);
}

TEST_CASE("png round trip gray and rgb") {
    Rng rng(62);
    TempDir dir("png");
    for (int ch : {1, 3}) {
        const ImageU8 img = random_u8(rng, 33, 17, ch);
        write_png(dir / "a.png", img);
        CHECK(read_png(dir / "a.png") == img);
    }
    spit(dir / "bad.png", "not a png");
    CHECK_THROWS_AS(read_png(dir / "bad.png"), FormatError);
}

TEST_CASE("csv writer and reader") {
    TempDir dir("csv");
    {
        CsvWriter w(dir / "t.csv", {"a", "b"});
        w.row({"1", "x"});
        CHECK_FALSE(fs::exists(dir / "t.csv"));
        w.close();
    }
    CHECK(slurp(dir / "t.csv") == "a,b\n1,x\n");
    const CsvTable t = read_csv(dir / "t.csv", {"a", "b"});
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0][1] == "x");
    CHECK_THROWS_AS(read_csv(dir / "t.csv", {"a", "c"}), FormatError);
    spit(dir / "short.csv", "a,b\n1\n");
    CHECK_THROWS_AS(read_csv(dir / "short.csv", {"a", "b"}), FormatError);
    CsvWriter w2(dir / "u.csv", {"a"});
    CHECK_THROWS_AS(w2.row({"has,comma"}), FormatError);
    CHECK_THROWS_AS(w2.row({"1", "2"}), InvalidParameter);
}

TEST_CASE("number parsing and formatting") {
    CHECK(parse_int("42", "f", 0) == 42);
    CHECK_THROWS_AS(parse_int("4x", "f", 0), FormatError);
    CHECK(parse_double("0.25", "f", 0) == 0.25);
    CHECK_THROWS_AS(parse_double("", "f", 0), FormatError);
    CHECK(format_fixed(0.0625, 6) == "0.062500");
    CHECK(format_float(0.59f) == "0.59");
    CHECK(format_double(0.1) == "0.1");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("diagnosis names") {
    CHECK(parse_diagnosis("healthy") == Diagnosis::healthy);
    CHECK(parse_diagnosis("cancer") == Diagnosis::cancer);
    CHECK(parse_diagnosis("unknown") == Diagnosis::unknown);
    CHECK(to_string(Diagnosis::cancer) == "cancer");
    CHECK_THROWS_AS(parse_diagnosis("sick"), ValidationError);
}

TEST_CASE("minimal manifest loads") {
    TempDir dir("man");
    write_png(dir / "t0_z0.png", ImageU8(64, 32, 3));
    spit(dir / "m.json", one_tile_manifest().dump());
    const SlideManifest m = load_manifest(dir / "m.json");
    CHECK(m.slide_id == "s1");
    CHECK(m.z_levels == 1);
    CHECK(m.central_level() == 0);
    CHECK(m.width() == 64);
    REQUIRE(m.tiles.size() == 1);
    CHECK(m.tiles[0].paths[0] == dir / "t0_z0.png");
    save_manifest(m, dir / "copy.json");
    const SlideManifest again = load_manifest(dir / "copy.json");
    CHECK(again.tiles[0].paths == m.tiles[0].paths);
}

TEST_CASE("large tile grid is accepted") {
    json j = one_tile_manifest();
    j["tiles"] = json::array();
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 16; ++c)
            j["tiles"].push_back({{"tile_id", "r" + std::to_string(r) + "c" + std::to_string(c)},
                                  {"origin", {c * 6496, r * 3360}},
                                  {"width", 6496},
                                  {"height", 3360},
                                  {"paths", {{"z0", "x.png"}}}});
    const SlideManifest m = parse_manifest(j, "/data", false);
    CHECK(m.tiles.size() == 512);
    CHECK(m.width() == 103936);
    CHECK(m.height() == 107520);
}

TEST_CASE("eleven z keys map to levels zero to ten") {
    json j = one_tile_manifest();
    j["z_levels"] = 11;
    json paths = json::object();
    for (int z = -5; z <= 5; ++z) paths["z" + std::to_string(z)] = "t_z" + std::to_string(z) + ".png";
    j["tiles"][0]["paths"] = paths;
    const SlideManifest m = parse_manifest(j, "/d", false);
    CHECK(m.min_z_key == -5);
    CHECK(m.central_level() == 5);
    CHECK(m.tiles[0].paths[0] == fs::path("/d/t_z-5.png"));
    CHECK(m.tiles[0].paths[10] == fs::path("/d/t_z5.png"));
    CHECK(m.z_key(0) == "z-5");
}

TEST_CASE("malformed manifests raise distinct errors") {
    TempDir dir("bad");
    spit(dir / "syntax.json", "{\"slide_id\": ");
    ManifestErrorCode syntax_code{};
    try {
        load_manifest(dir / "syntax.json");
    } catch (const ManifestError& e) {
        syntax_code = e.code();
    }
    CHECK(syntax_code == ManifestErrorCode::syntax);

    json missing = one_tile_manifest();
    missing.erase("patient_id");
    CHECK(code_of(missing, dir.path()) == ManifestErrorCode::missing_field);

    json dup = one_tile_manifest();
    dup["tiles"].push_back(dup["tiles"][0]);
    dup["tiles"][1]["origin"] = {64, 0};
    CHECK(code_of(dup, dir.path()) == ManifestErrorCode::duplicate_tile);

    json z = one_tile_manifest();
    z["z_levels"] = 3;
    CHECK(code_of(z, dir.path()) == ManifestErrorCode::inconsistent_z);

    json file = one_tile_manifest();
    CHECK(code_of(file, dir.path(), true) == ManifestErrorCode::missing_tile_file);

    json overlap = one_tile_manifest();
    overlap["tiles"].push_back(overlap["tiles"][0]);
    overlap["tiles"][1]["tile_id"] = "t1";
    overlap["tiles"][1]["origin"] = {32, 0};
    CHECK(code_of(overlap, dir.path()) == ManifestErrorCode::overlapping_tiles);
    overlap["overlapping_tiles"] = true;
    CHECK_NOTHROW(parse_manifest(overlap, dir.path(), false));

    json value = one_tile_manifest();
    value["pixel_size_um"] = -1;
    CHECK(code_of(value, dir.path()) == ManifestErrorCode::bad_value);
    json diag = one_tile_manifest();
    diag["diagnosis"] = "maybe";
    CHECK(code_of(diag, dir.path()) == ManifestErrorCode::bad_value);
}
