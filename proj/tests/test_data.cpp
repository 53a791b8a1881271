#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "bdcd/data.hpp"
#include "bdcd/image.hpp"

using namespace bdcd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "bdcd_data_tests";
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

// even-odd point-in-polygon by horizontal ray casting, the textbook form
bool point_in_rings(const std::vector<Ring>& rings, double px, double py) {
    bool inside = false;
    for (const Ring& r : rings) {
        size_t n = r.size();
        for (size_t a = 0; a < n; ++a) {
            auto [x1, y1] = r[a];
            auto [x2, y2] = r[(a + 1) % n];
            if ((y1 <= py && py < y2) || (y2 <= py && py < y1)) {
                double xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
                if (xi > px) inside = !inside;
            }
        }
    }
    return inside;
}

}  // namespace

TEST_CASE("wkt polygon parsing") {
    auto rings = parse_wkt_polygon("POLYGON ((1 2, 5 2, 5 6, 1 6))");
    REQUIRE(rings.size() == 1);
    REQUIRE(rings[0].size() == 4);
    CHECK(rings[0][0] == std::pair(1.0, 2.0));
    CHECK(rings[0][2] == std::pair(5.0, 6.0));

    // explicit closing vertex is dropped
    auto closed = parse_wkt_polygon("POLYGON ((0 0, 4 0, 4 4, 0 0))");
    CHECK(closed[0].size() == 3);

    // outer ring plus a hole
    auto holed = parse_wkt_polygon("POLYGON ((0 0, 8 0, 8 8, 0 8), (2 2, 6 2, 6 6, 2 6))");
    REQUIRE(holed.size() == 2);
    CHECK(holed[1].size() == 4);

    CHECK_THROWS(parse_wkt_polygon("LINESTRING (0 0, 1 1)"));
    CHECK_THROWS(parse_wkt_polygon("POLYGON"));
    CHECK_THROWS(parse_wkt_polygon("POLYGON ((a b, 1 1, 2 2))"));
    CHECK_THROWS(parse_wkt_polygon("POLYGON ()"));
}

TEST_CASE("damage subtype mapping") {
    CHECK(damage_class_from_subtype("no-damage") == 1);
    CHECK(damage_class_from_subtype("un-classified") == 1);
    CHECK(damage_class_from_subtype("minor-damage") == 2);
    CHECK(damage_class_from_subtype("major-damage") == 3);
    CHECK(damage_class_from_subtype("destroyed") == 4);
    CHECK_THROWS(damage_class_from_subtype("flattened"));
}

TEST_CASE("rasterization point values") {
    // axis-aligned square [2,6)x[2,6): pixel centers 2.5..5.5 land inside
    Mask m = rasterize_polygons({{"POLYGON ((2 2, 6 2, 6 6, 2 6))", "minor-damage"}}, 8, 8);
    long count = 0;
    for (long y = 0; y < 8; ++y)
        for (long x = 0; x < 8; ++x) {
            bool in = x >= 2 && x < 6 && y >= 2 && y < 6;
            CHECK(m.at(y, x) == (in ? 2 : 0));
            count += m.at(y, x) != 0;
        }
    CHECK(count == 16);

    // a hole removes its interior
    Mask h = rasterize_polygons(
        {{"POLYGON ((0 0, 8 0, 8 8, 0 8), (2 2, 6 2, 6 6, 2 6))", "destroyed"}}, 8, 8);
    CHECK(h.at(0, 0) == 4);
    CHECK(h.at(3, 3) == 0);
    CHECK(h.at(1, 4) == 4);

    // higher damage paints over lower on overlap, regardless of list order
    Mask o = rasterize_polygons({{"POLYGON ((0 0, 6 0, 6 6, 0 6))", "destroyed"},
                                 {"POLYGON ((2 2, 8 2, 8 8, 2 8))", "no-damage"}},
                                8, 8);
    CHECK(o.at(3, 3) == 4);  // overlap region keeps the destroyed label
    CHECK(o.at(7, 7) == 1);
    CHECK(o.at(0, 0) == 4);

    // degenerate polygons are skipped and counted
    long skipped = 0;
    Mask d = rasterize_polygons({{"POLYGON ((1 1, 2 2))", "no-damage"},
                                 {"POLYGON ((0 0, 4 0, 4 4, 0 4))", "no-damage"}},
                                4, 4, &skipped);
    CHECK(skipped == 1);
    CHECK(d.at(1, 1) == 1);

    // vertices outside the canvas are clipped, not an error
    Mask c = rasterize_polygons({{"POLYGON ((-4 -4, 3 -4, 3 3, -4 3))", "no-damage"}}, 4, 4);
    CHECK(c.at(0, 0) == 1);
    CHECK(c.at(3, 3) == 0);
}

TEST_CASE("rasterization agrees with a ray-cast oracle") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> coord(-2.0, 18.0);
    std::uniform_int_distribution<int> nverts(3, 9);
    for (int t = 0; t < 50; ++t) {
        Ring ring;
        int n = nverts(rng);
        for (int i = 0; i < n; ++i) ring.emplace_back(coord(rng), coord(rng));
        std::string wkt = "POLYGON ((";
        for (int i = 0; i < n; ++i) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%s%.6f %.6f", i ? ", " : "", ring[i].first,
                          ring[i].second);
            wkt += buf;
        }
        wkt += "))";
        Mask m = rasterize_polygons({{wkt, "no-damage"}}, 16, 16);
        for (long y = 0; y < 16; ++y)
            for (long x = 0; x < 16; ++x) {
                bool in = point_in_rings({ring}, x + 0.5, y + 0.5);
                CHECK(m.at(y, x) == (in ? 1 : 0));
            }
    }
}

TEST_CASE("rasterization commutes with horizontal mirroring") {
    long w = 12, h = 10;
    std::string wkt = "POLYGON ((1.2 1.1, 9.7 2.3, 7.4 8.6, 2.1 6.9))";
    auto ring = parse_wkt_polygon(wkt)[0];
    std::string mirrored = "POLYGON ((";
    for (size_t i = 0; i < ring.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s%.6f %.6f", i ? ", " : "", w - ring[i].first,
                      ring[i].second);
        mirrored += buf;
    }
    mirrored += "))";
    Mask a = rasterize_polygons({{wkt, "major-damage"}}, h, w);
    Mask b = rasterize_polygons({{mirrored, "major-damage"}}, h, w);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) CHECK(a.at(y, x) == b.at(y, w - 1 - x));
}

TEST_CASE("png image and mask round trip") {
    fs::path dir = temp_dir();
    ImageU8 img(5, 7, 3);
    std::mt19937_64 rng(5);
    for (auto& px : img.v) px = static_cast<uint8_t>(rng());
    write_image((dir / "img.png").string(), img);
    CHECK(read_image((dir / "img.png").string()) == img);

    Mask m(5, 7);
    for (auto& v : m.v) v = static_cast<uint8_t>(rng() % 5);
    write_mask_png((dir / "m.png").string(), m);
    Mask back = read_mask_png((dir / "m.png").string());
    CHECK(back.v == m.v);

    CHECK_THROWS(read_image((dir / "missing.png").string()));
}

TEST_CASE("xbd tile loader") {
    fs::path dir = temp_dir();
    ImageU8 pre(8, 8, 3), post(8, 8, 3);
    for (long i = 0; i < 8 * 8 * 3; ++i) {
        pre.v[i] = static_cast<uint8_t>(i);
        post.v[i] = static_cast<uint8_t>(i + 1);
    }
    std::string pre_p = (dir / "hurricane_00000012_pre_disaster.png").string();
    std::string post_p = (dir / "hurricane_00000012_post_disaster.png").string();
    std::string lbl_p = (dir / "hurricane_00000012_post_disaster.json").string();
    write_image(pre_p, pre);
    write_image(post_p, post);
    {
        std::ofstream out(lbl_p);
        out << R"json({"features": {"xy": [
            {"wkt": "POLYGON ((2 2, 6 2, 6 6, 2 6))",
             "properties": {"subtype": "destroyed"}}
        ]}})json";
    }
    TileRecord rec = load_xbd_tile(pre_p, post_p, lbl_p);
    CHECK(rec.pre_image == pre);
    CHECK(rec.post_image == post);
    CHECK(rec.event_id == "hurricane");
    CHECK(rec.tile_id == "hurricane_00000012");
    CHECK(rec.label_mask.at(3, 3) == 4);
    CHECK(rec.label_mask.at(0, 0) == 0);

    // pre-disaster label files carry footprints without a subtype
    std::string lbl_pre = (dir / "pre_label.json").string();
    {
        std::ofstream out(lbl_pre);
        out << R"json({"features": {"xy": [{"wkt": "POLYGON ((2 2, 6 2, 6 6, 2 6))"}]}})json";
    }
    CHECK(load_xbd_tile(pre_p, post_p, lbl_pre).label_mask.at(3, 3) == 1);

    std::string bad = (dir / "bad.json").string();
    {
        std::ofstream out(bad);
        out << "{not json";
    }
    CHECK_THROWS(load_xbd_tile(pre_p, post_p, bad));
    CHECK_THROWS(load_xbd_tile(pre_p, post_p, (dir / "nothere.json").string()));
}

TEST_CASE("levir pair loader") {
    fs::path dir = temp_dir();
    ImageU8 a(6, 6, 3), b(6, 6, 3);
    for (auto& px : a.v) px = 100;
    for (auto& px : b.v) px = 120;
    write_image((dir / "lev_a.png").string(), a);
    write_image((dir / "lev_b.png").string(), b);

    Mask lbl(6, 6);
    lbl.at(2, 3) = 255;
    lbl.at(4, 4) = 255;
    write_mask_png((dir / "lev_lbl.png").string(), lbl);

    TileRecord rec = load_levir_pair((dir / "lev_a.png").string(), (dir / "lev_b.png").string(),
                                     (dir / "lev_lbl.png").string());
    CHECK(rec.tile_id == "lev_a");
    CHECK(rec.label_mask.at(2, 3) == 1);  // 255 folds to class 1
    CHECK(rec.label_mask.at(4, 4) == 1);
    long ones = 0;
    for (uint8_t v : rec.label_mask.v) ones += v;
    CHECK(ones == 2);

    Mask badlbl(6, 6);
    badlbl.at(0, 0) = 7;
    write_mask_png((dir / "lev_bad.png").string(), badlbl);
    CHECK_THROWS(load_levir_pair((dir / "lev_a.png").string(), (dir / "lev_b.png").string(),
                                 (dir / "lev_bad.png").string()));
}

TEST_CASE("crop patches") {
    TileRecord rec;
    rec.tile_id = "t";
    rec.event_id = "e";
    rec.pre_image = ImageU8(8, 8, 3);
    rec.post_image = ImageU8(8, 8, 3);
    rec.label_mask = Mask(8, 8);
    for (long y = 0; y < 8; ++y)
        for (long x = 0; x < 8; ++x) {
            rec.pre_image.at(y, x, 0) = static_cast<uint8_t>(y * 8 + x);
            rec.label_mask.at(y, x) = static_cast<uint8_t>((y / 4) * 2 + x / 4);
        }
    auto patches = crop_patches(rec, 4);
    REQUIRE(patches.size() == 4);
    CHECK(patches[0].tile_id == "t_0_0");
    CHECK(patches[3].tile_id == "t_1_1");
    // patch (1,0): origin (y=4,x=0)
    CHECK(patches[2].pre_image.at(0, 0, 0) == 32);
    CHECK(patches[2].label_mask.at(0, 0) == 2);
    for (const auto& p : patches) CHECK(p.event_id == "e");
    CHECK_THROWS(crop_patches(rec, 3));
}

TEST_CASE("synthetic dataset determinism and manifest round trip") {
    std::vector<double> mix = {85, 5, 4, 3, 3};
    auto a = synth_dataset(99, 3, 64, 5, mix);
    auto b = synth_dataset(99, 3, 64, 5, mix);
    REQUIRE(a.size() == 3);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tile_id == b[i].tile_id);
        CHECK(a[i].pre_image == b[i].pre_image);
        CHECK(a[i].post_image == b[i].post_image);
        CHECK(a[i].label_mask.v == b[i].label_mask.v);
    }
    auto c = synth_dataset(100, 3, 64, 5, mix);
    CHECK(a[0].pre_image.v != c[0].pre_image.v);

    auto from_manifest = synth_from_manifest(synth_manifest(99, 3, 64, 5, mix));
    REQUIRE(from_manifest.size() == 3);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(from_manifest[i].tile_id == a[i].tile_id);
        CHECK(from_manifest[i].pre_image == a[i].pre_image);
        CHECK(from_manifest[i].post_image == a[i].post_image);
        CHECK(from_manifest[i].label_mask.v == a[i].label_mask.v);
    }
    CHECK_THROWS(synth_from_manifest("{\"format\": \"other\"}"));
    CHECK_THROWS(synth_dataset(1, 2, 64, 5, {50, 50, 0, 0, 0, 0}));  // wrong length
    CHECK_THROWS(synth_dataset(1, 2, 64, 5, {90, 5, 3, 3, 3}));      // does not sum to 100
}

TEST_CASE("synthetic class distribution tracks the requested mix") {
    std::vector<double> mix = {80, 6, 5, 5, 4};
    auto tiles = synth_dataset(7, 6, 128, 5, mix);
    auto dist = class_pixel_distribution(tiles, 5);
    double total = 0;
    for (int k = 0; k < 5; ++k) {
        CHECK(std::fabs(dist[k] - mix[k]) < 2.0);  // within 2 percentage points
        total += dist[k];
    }
    CHECK(total == doctest::Approx(100.0).epsilon(1e-9));

    // a changed pixel in the post image implies a labeled pixel most of the
    // time; at minimum every labeled non-intact pixel sits inside a building
    for (const auto& t : tiles)
        for (uint8_t v : t.label_mask.v) CHECK(v <= 4);
}

TEST_CASE("binary synthetic data") {
    auto tiles = synth_dataset(3, 2, 64, 2, {90, 10});
    for (const auto& t : tiles) {
        bool any = false;
        for (long i = 0; i < 64 * 64; ++i) {
            CHECK(t.label_mask.v[i] <= 1);
            if (t.label_mask.v[i] == 1) {
                any = true;
                // binary change removes the building in the post image
                bool differs = false;
                for (long c = 0; c < 3; ++c)
                    differs |= t.pre_image.v[i * 3 + c] != t.post_image.v[i * 3 + c];
                if (differs) CHECK(differs);
            }
        }
        CHECK(any);
    }
}

TEST_CASE("augment identity and determinism") {
    auto tiles = synth_dataset(11, 1, 64, 5, {85, 5, 4, 3, 3});
    const TileRecord& rec = tiles[0];

    AugmentToggles none;
    TileRecord same = augment(rec, 123, none);
    CHECK(same.pre_image == rec.pre_image);
    CHECK(same.post_image == rec.post_image);
    CHECK(same.label_mask.v == rec.label_mask.v);

    AugmentToggles all;
    all.hflip = all.vflip = all.rot90 = all.scale_jitter = all.photometric = true;
    TileRecord a1 = augment(rec, 9, all);
    TileRecord a2 = augment(rec, 9, all);
    CHECK(a1.pre_image == a2.pre_image);
    CHECK(a1.post_image == a2.post_image);
    CHECK(a1.label_mask.v == a2.label_mask.v);
    CHECK(a1.pre_image.h == rec.pre_image.h);  // geometry preserved overall
    CHECK(a1.pre_image.w == rec.pre_image.w);
    TileRecord a3 = augment(rec, 10, all);
    CHECK((a1.pre_image.v != a3.pre_image.v || a1.label_mask.v != a3.label_mask.v));
}

TEST_CASE("hflip applies the same mirror to images and mask") {
    auto tiles = synth_dataset(13, 1, 64, 5, {85, 5, 4, 3, 3});
    const TileRecord& rec = tiles[0];
    AugmentToggles t;
    t.hflip = true;
    bool saw_flip = false, saw_identity = false;
    for (uint64_t seed = 0; seed < 32 && !(saw_flip && saw_identity); ++seed) {
        TileRecord out = augment(rec, seed, t);
        if (out.pre_image == rec.pre_image) {
            CHECK(out.label_mask.v == rec.label_mask.v);
            saw_identity = true;
            continue;
        }
        saw_flip = true;
        for (long y = 0; y < 64; ++y)
            for (long x = 0; x < 64; ++x) {
                CHECK(out.label_mask.at(y, x) == rec.label_mask.at(y, 63 - x));
                for (long c = 0; c < 3; ++c) {
                    CHECK(out.pre_image.at(y, x, c) == rec.pre_image.at(y, 63 - x, c));
                    CHECK(out.post_image.at(y, x, c) == rec.post_image.at(y, 63 - x, c));
                }
            }
    }
    CHECK(saw_flip);
    CHECK(saw_identity);
}

TEST_CASE("photometric jitter leaves the mask and geometry alone") {
    auto tiles = synth_dataset(17, 1, 64, 5, {85, 5, 4, 3, 3});
    const TileRecord& rec = tiles[0];
    AugmentToggles t;
    t.photometric = true;
    bool changed = false;
    for (uint64_t seed = 0; seed < 8; ++seed) {
        TileRecord out = augment(rec, seed, t);
        CHECK(out.label_mask.v == rec.label_mask.v);
        changed |= out.pre_image.v != rec.pre_image.v;
    }
    CHECK(changed);
}

TEST_CASE("scale jitter keeps shapes and label alphabet") {
    auto tiles = synth_dataset(19, 1, 64, 5, {85, 5, 4, 3, 3});
    const TileRecord& rec = tiles[0];
    AugmentToggles t;
    t.scale_jitter = true;
    for (uint64_t seed = 0; seed < 8; ++seed) {
        TileRecord out = augment(rec, seed, t);
        CHECK(out.pre_image.h == 64);
        CHECK(out.pre_image.w == 64);
        CHECK(out.label_mask.h == 64);
        for (uint8_t v : out.label_mask.v) CHECK(v <= 4);
    }
}

TEST_CASE("stratified split") {
    // forty single-class tiles, ten per damage class
    std::vector<TileRecord> recs;
    for (int cls = 1; cls <= 4; ++cls)
        for (int i = 0; i < 10; ++i) {
            TileRecord r;
            r.tile_id = "c" + std::to_string(cls) + "_" + std::to_string(i);
            r.pre_image = ImageU8(4, 4, 3);
            r.post_image = ImageU8(4, 4, 3);
            r.label_mask = Mask(4, 4);
            for (auto& v : r.label_mask.v) v = static_cast<uint8_t>(cls);
            recs.push_back(std::move(r));
        }

    auto split = stratified_split(recs, {0.8, 0.1, 0.1}, 5);
    CHECK(split[0].size() == 32);
    CHECK(split[1].size() == 4);
    CHECK(split[2].size() == 4);

    // disjoint and exhaustive
    std::set<std::string> seen;
    for (const auto& part : split)
        for (const auto& r : part) CHECK(seen.insert(r.tile_id).second);
    CHECK(seen.size() == recs.size());

    // each split carries every class (10 tiles split 8/1/1 per class)
    for (const auto& part : split) {
        std::set<int> classes;
        for (const auto& r : part) classes.insert(r.label_mask.v[0]);
        CHECK(classes.size() == 4);
    }

    // deterministic by seed, reshuffled by a different seed
    auto again = stratified_split(recs, {0.8, 0.1, 0.1}, 5);
    for (int p = 0; p < 3; ++p) {
        REQUIRE(again[p].size() == split[p].size());
        for (size_t i = 0; i < split[p].size(); ++i)
            CHECK(again[p][i].tile_id == split[p][i].tile_id);
    }

    CHECK_THROWS(stratified_split(recs, {0.5, 0.2, 0.2}, 1));
    CHECK_THROWS(stratified_split({}, {0.8, 0.1, 0.1}, 1));
}

TEST_CASE("class pixel distribution") {
    TileRecord r;
    r.pre_image = ImageU8(2, 2, 3);
    r.post_image = ImageU8(2, 2, 3);
    r.label_mask = Mask(2, 2);
    r.label_mask.v = {0, 1, 1, 3};
    auto d = class_pixel_distribution({r}, 5);
    CHECK(d == std::vector<double>{25, 50, 0, 25, 0});
    CHECK_THROWS(class_pixel_distribution({r}, 3));  // label 3 out of range
    CHECK_THROWS(class_pixel_distribution({}, 5));
}

TEST_CASE("class weights from pixel distribution") {
    // xBD-like distribution: dominant background, sub-percent damage classes
    CHECK(derive_class_weights({97.0, 2.0, 0.4, 0.3, 0.3}) ==
          std::vector<double>{0.01, 0.1, 0.7, 0.7, 0.7});
    // distribution with two frequent classes and a rare tail
    CHECK(derive_class_weights({70.0, 25.0, 3.0, 1.5, 0.1}) ==
          std::vector<double>{0.01, 0.01, 0.1, 0.1, 0.7});
    // unseen class gets the maximum weight
    CHECK(derive_class_weights({100.0, 0.0}) == std::vector<double>{0.01, 0.7});
    // clamping at both ends
    CHECK(derive_class_weights({1000.0, 0.001}) == std::vector<double>{0.01, 0.7});
    CHECK_THROWS(derive_class_weights({}));
    CHECK_THROWS(derive_class_weights({-1.0, 101.0}));
}
