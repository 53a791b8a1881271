#include "bdcd/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace bdcd {

using nlohmann::json;

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

uint8_t clamp8(double x) { return static_cast<uint8_t>(std::clamp(x, 0.0, 255.0)); }

}  // namespace

// ------------------------------------------------------------------ polygons

std::vector<Ring> parse_wkt_polygon(const std::string& wkt) {
    size_t pos = wkt.find_first_not_of(" \t");
    if (pos == std::string::npos || wkt.compare(pos, 7, "POLYGON") != 0)
        throw std::invalid_argument("WKT: expected POLYGON, got: " + wkt.substr(0, 32));
    pos = wkt.find('(', pos);
    if (pos == std::string::npos) throw std::invalid_argument("WKT: missing '('");

    std::vector<Ring> rings;
    size_t i = pos + 1;
    while (i < wkt.size()) {
        while (i < wkt.size() && (wkt[i] == ' ' || wkt[i] == ',')) ++i;
        if (i >= wkt.size() || wkt[i] == ')') break;
        if (wkt[i] != '(') throw std::invalid_argument("WKT: expected ring '('");
        size_t end = wkt.find(')', i);
        if (end == std::string::npos) throw std::invalid_argument("WKT: unterminated ring");
        Ring ring;
        std::istringstream ss(wkt.substr(i + 1, end - i - 1));
        std::string pair_str;
        while (std::getline(ss, pair_str, ',')) {
            std::istringstream ps(pair_str);
            double x, y;
            if (!(ps >> x >> y)) throw std::invalid_argument("WKT: bad coordinate: " + pair_str);
            ring.emplace_back(x, y);
        }
        // drop an explicit closing vertex
        if (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
        rings.push_back(std::move(ring));
        i = end + 1;
    }
    if (rings.empty()) throw std::invalid_argument("WKT: polygon has no rings");
    return rings;
}

int damage_class_from_subtype(const std::string& subtype) {
    if (subtype == "no-damage" || subtype == "un-classified") return 1;
    if (subtype == "minor-damage") return 2;
    if (subtype == "major-damage") return 3;
    if (subtype == "destroyed") return 4;
    throw std::invalid_argument("unknown damage subtype: " + subtype);
}

namespace {

// even-odd scanline fill of all rings at pixel centers, clipped to the image
void fill_polygon(const std::vector<Ring>& rings, uint8_t value, Mask& mask) {
    for (long y = 0; y < mask.h; ++y) {
        double cy = y + 0.5;
        std::vector<double> xs;
        for (const Ring& r : rings) {
            size_t n = r.size();
            for (size_t a = 0; a < n; ++a) {
                auto [x1, y1] = r[a];
                auto [x2, y2] = r[(a + 1) % n];
                if ((y1 <= cy && cy < y2) || (y2 <= cy && cy < y1))
                    xs.push_back(x1 + (cy - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        if (xs.empty()) continue;
        std::sort(xs.begin(), xs.end());
        for (size_t k = 0; k + 1 < xs.size(); k += 2) {
            long x0 = static_cast<long>(std::ceil(xs[k] - 0.5));
            long x1 = static_cast<long>(std::floor(xs[k + 1] - 0.5));
            x0 = std::max(x0, 0L);
            x1 = std::min(x1, mask.w - 1);
            for (long x = x0; x <= x1; ++x)
                if (x + 0.5 > xs[k] && x + 0.5 < xs[k + 1]) mask.at(y, x) = value;
        }
    }
}

}  // namespace

Mask rasterize_polygons(const std::vector<PolygonLabel>& polygons, long h, long w, long* skipped) {
    Mask mask(h, w);
    long skip = 0;
    std::vector<std::pair<int, const PolygonLabel*>> ordered;
    for (const auto& p : polygons) ordered.emplace_back(damage_class_from_subtype(p.subtype), &p);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [cls, p] : ordered) {
        auto rings = parse_wkt_polygon(p->wkt);
        if (rings[0].size() < 3) {
            ++skip;
            continue;
        }
        fill_polygon(rings, static_cast<uint8_t>(cls), mask);
    }
    if (skipped) *skipped = skip;
    return mask;
}

// ------------------------------------------------------------------- loaders

namespace {

std::vector<PolygonLabel> parse_xbd_label_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open label file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed label JSON in " + path + ": " + e.what());
    }
    const json* feats = nullptr;
    if (doc.contains("features")) {
        if (doc["features"].is_object() && doc["features"].contains("xy"))
            feats = &doc["features"]["xy"];
        else if (doc["features"].is_array())
            feats = &doc["features"];
    }
    if (!feats) throw std::runtime_error("label file lacks a feature list: " + path);
    std::vector<PolygonLabel> polys;
    for (const auto& f : *feats) {
        PolygonLabel p;
        p.wkt = f.at("wkt").get<std::string>();
        if (f.contains("properties") && f["properties"].contains("subtype"))
            p.subtype = f["properties"]["subtype"].get<std::string>();
        else
            p.subtype = "no-damage";  // pre-disaster footprints carry no subtype
        polys.push_back(std::move(p));
    }
    return polys;
}

}  // namespace

TileRecord load_xbd_tile(const std::string& pre_image_path, const std::string& post_image_path,
                         const std::string& label_path) {
    TileRecord rec;
    rec.pre_image = read_image(pre_image_path);
    rec.post_image = read_image(post_image_path);
    if (rec.pre_image.c != 3 || rec.post_image.c != 3)
        throw std::runtime_error("xBD tiles must be RGB");
    if (rec.pre_image.h != rec.post_image.h || rec.pre_image.w != rec.post_image.w)
        throw std::runtime_error("pre/post image size mismatch");
    auto polys = parse_xbd_label_file(label_path);
    rec.label_mask = rasterize_polygons(polys, rec.pre_image.h, rec.pre_image.w);
    rec.resolution_m_per_px = 0.8;
    // {event}_{tile:08d}_{pre|post}_disaster.png
    std::string stem = post_image_path.substr(post_image_path.find_last_of('/') + 1);
    size_t us = stem.find('_');
    rec.event_id = us == std::string::npos ? "unknown" : stem.substr(0, us);
    rec.tile_id = stem.substr(0, stem.find("_post"));
    if (rec.tile_id.empty()) rec.tile_id = stem;
    return rec;
}

TileRecord load_levir_pair(const std::string& a_path, const std::string& b_path,
                           const std::string& label_path) {
    TileRecord rec;
    rec.pre_image = read_image(a_path);
    rec.post_image = read_image(b_path);
    ImageU8 lbl = read_image(label_path);
    if (lbl.c != 1) {
        // accept an RGB label whose channels agree
        ImageU8 g(lbl.h, lbl.w, 1);
        for (long i = 0; i < lbl.h * lbl.w; ++i) {
            if (lbl.v[i * 3] != lbl.v[i * 3 + 1] || lbl.v[i * 3] != lbl.v[i * 3 + 2])
                throw std::runtime_error("LEVIR label is not single-channel: " + label_path);
            g.v[i] = lbl.v[i * 3];
        }
        lbl = std::move(g);
    }
    if (rec.pre_image.h != rec.post_image.h || rec.pre_image.w != rec.post_image.w ||
        lbl.h != rec.pre_image.h || lbl.w != rec.pre_image.w)
        throw std::runtime_error("LEVIR A/B/label size mismatch");
    rec.label_mask = Mask(lbl.h, lbl.w);
    for (long i = 0; i < lbl.h * lbl.w; ++i) {
        uint8_t v = lbl.v[i];
        if (v == 0)
            rec.label_mask.v[i] = 0;
        else if (v == 1 || v == 255)
            rec.label_mask.v[i] = 1;
        else
            throw std::runtime_error("LEVIR label has non-binary value " + std::to_string(v));
    }
    rec.resolution_m_per_px = 0.5;
    std::string stem = a_path.substr(a_path.find_last_of('/') + 1);
    rec.tile_id = stem.substr(0, stem.find_last_of('.'));
    rec.event_id = "levir";
    return rec;
}

std::vector<TileRecord> crop_patches(const TileRecord& rec, long patch) {
    if (patch <= 0 || rec.pre_image.h % patch || rec.pre_image.w % patch)
        throw std::invalid_argument("crop_patches: size not divisible by patch");
    std::vector<TileRecord> out;
    for (long y0 = 0; y0 < rec.pre_image.h; y0 += patch)
        for (long x0 = 0; x0 < rec.pre_image.w; x0 += patch) {
            TileRecord r;
            r.tile_id = rec.tile_id + "_" + std::to_string(y0 / patch) + "_" +
                        std::to_string(x0 / patch);
            r.event_id = rec.event_id;
            r.resolution_m_per_px = rec.resolution_m_per_px;
            r.pre_image = ImageU8(patch, patch, rec.pre_image.c);
            r.post_image = ImageU8(patch, patch, rec.post_image.c);
            r.label_mask = Mask(patch, patch);
            for (long y = 0; y < patch; ++y)
                for (long x = 0; x < patch; ++x) {
                    for (long c = 0; c < rec.pre_image.c; ++c) {
                        r.pre_image.at(y, x, c) = rec.pre_image.at(y0 + y, x0 + x, c);
                        r.post_image.at(y, x, c) = rec.post_image.at(y0 + y, x0 + x, c);
                    }
                    r.label_mask.at(y, x) = rec.label_mask.at(y0 + y, x0 + x);
                }
            out.push_back(std::move(r));
        }
    return out;
}

// ----------------------------------------------------------------- synthetic

namespace {

struct Building {
    long x0, y0, w, h;
    int cls;
};

TileRecord synth_tile(uint64_t tile_seed, const std::string& tile_id, long size, int num_classes,
                      const std::vector<double>& mix, const SynthOptions& opt) {
    std::mt19937_64 rng(tile_seed);
    auto urand = [&](double a, double b) {
        return std::uniform_real_distribution<double>(a, b)(rng);
    };
    auto irand = [&](long a, long b) { return std::uniform_int_distribution<long>(a, b)(rng); };

    // textured background, drawn once and kept so destroyed buildings can
    // revert to it
    double base[3] = {urand(60, 110), urand(90, 140), urand(60, 100)};
    double f1x = urand(0.01, 0.05), f1y = urand(0.01, 0.05), p1 = urand(0, 6.28);
    double f2x = urand(0.08, 0.2), f2y = urand(0.08, 0.2), p2 = urand(0, 6.28);
    ImageU8 bg(size, size, 3);
    for (long y = 0; y < size; ++y)
        for (long x = 0; x < size; ++x) {
            double t = 10 * std::sin(6.28 * (f1x * x + f1y * y) + p1) +
                       5 * std::sin(6.28 * (f2x * x + f2y * y) + p2) + urand(-6, 6);
            for (long c = 0; c < 3; ++c) bg.at(y, x, c) = clamp8(base[c] + t);
        }

    TileRecord rec;
    rec.tile_id = tile_id;
    rec.event_id = "synthetic";
    rec.resolution_m_per_px = 0.8;
    rec.pre_image = bg;
    rec.label_mask = Mask(size, size);

    // budget-driven rectangle packing per class
    std::vector<uint8_t> occupied(size * size, 0);
    auto free_region = [&](long x0, long y0, long w, long h) {
        long m = 2;  // margin between buildings
        for (long y = std::max(0L, y0 - m); y < std::min(size, y0 + h + m); ++y)
            for (long x = std::max(0L, x0 - m); x < std::min(size, x0 + w + m); ++x)
                if (occupied[y * size + x]) return false;
        return true;
    };
    std::vector<Building> buildings;
    double requested = 0, placed = 0;
    for (int cls = 1; cls < num_classes; ++cls) {
        double budget = mix[cls] / 100.0 * size * size;
        requested += budget;
        while (budget >= 64) {
            double area = std::min(budget, urand(100, 900));
            double aspect = urand(0.5, 2.0);
            long bw = std::clamp<long>(std::lround(std::sqrt(area * aspect)), 6, size / 3);
            long bh = std::clamp<long>(std::lround(area / bw), 6, size / 3);
            bool ok = false;
            long x0 = 0, y0 = 0;
            for (int attempt = 0; attempt < opt.max_retries && !ok; ++attempt) {
                if (bw + 2 >= size || bh + 2 >= size) break;
                x0 = irand(1, size - bw - 1);
                y0 = irand(1, size - bh - 1);
                ok = free_region(x0, y0, bw, bh);
            }
            if (!ok) break;  // packing saturated for this class
            for (long y = y0; y < y0 + bh; ++y)
                for (long x = x0; x < x0 + bw; ++x) {
                    occupied[y * size + x] = 1;
                    rec.label_mask.at(y, x) = static_cast<uint8_t>(cls);
                }
            buildings.push_back({x0, y0, bw, bh, cls});
            budget -= bw * bh;
            placed += bw * bh;
        }
    }
    if (requested >= 64 && placed < 0.5 * requested)
        throw std::runtime_error("synth_dataset: infeasible packing for tile " + tile_id);

    // draw buildings in the pre image
    for (const Building& b : buildings) {
        double roof[3];
        double base_gray = urand(120, 200);
        for (double& r : roof) r = base_gray + urand(-12, 12);
        for (long y = b.y0; y < b.y0 + b.h; ++y)
            for (long x = b.x0; x < b.x0 + b.w; ++x) {
                double t = urand(-5, 5);
                bool border = y == b.y0 || y == b.y0 + b.h - 1 || x == b.x0 || x == b.x0 + b.w - 1;
                for (long c = 0; c < 3; ++c)
                    rec.pre_image.at(y, x, c) = clamp8(roof[c] + t - (border ? 40 : 0));
            }
    }

    rec.post_image = rec.pre_image;
    // per-class change transforms in the post image
    for (const Building& b : buildings) {
        int effect = num_classes == 2 ? 4 : b.cls;  // binary change: building removed
        switch (effect) {
            case 1:
                break;  // unchanged
            case 2:
                for (long y = b.y0; y < b.y0 + b.h; ++y)
                    for (long x = b.x0; x < b.x0 + b.w; ++x)
                        for (long c = 0; c < 3; ++c)
                            rec.post_image.at(y, x, c) =
                                clamp8(rec.post_image.at(y, x, c) + 30.0);
                break;
            case 3: {
                const double shift[3] = {45, -35, 25};
                for (long y = b.y0; y < b.y0 + b.h; ++y)
                    for (long x = b.x0; x < b.x0 + b.w; ++x)
                        for (long c = 0; c < 3; ++c)
                            rec.post_image.at(y, x, c) =
                                clamp8(rec.post_image.at(y, x, c) + shift[c]);
                bool vertical = irand(0, 1) == 1;
                long ow = vertical ? b.w / 2 : b.w;
                long oh = vertical ? b.h : b.h / 2;
                long ox = vertical && irand(0, 1) ? b.x0 + b.w - ow : b.x0;
                long oy = !vertical && irand(0, 1) ? b.y0 + b.h - oh : b.y0;
                for (long y = oy; y < oy + oh; ++y)
                    for (long x = ox; x < ox + ow; ++x)
                        for (long c = 0; c < 3; ++c)
                            rec.post_image.at(y, x, c) = clamp8(60 + urand(-5, 5));
                break;
            }
            case 4: {
                for (long y = b.y0; y < b.y0 + b.h; ++y)
                    for (long x = b.x0; x < b.x0 + b.w; ++x)
                        for (long c = 0; c < 3; ++c)
                            rec.post_image.at(y, x, c) = bg.at(y, x, c);
                long n = std::max(1L, b.w * b.h / 20);  // debris speckle
                for (long i = 0; i < n; ++i) {
                    long sx = irand(b.x0, b.x0 + b.w - 1);
                    long sy = irand(b.y0, b.y0 + b.h - 1);
                    double v = irand(0, 1) ? urand(180, 220) : urand(40, 70);
                    for (long c = 0; c < 3; ++c) rec.post_image.at(sy, sx, c) = clamp8(v);
                }
                break;
            }
            default:
                break;
        }
    }

    if (opt.sensor_noise)
        for (auto& px : rec.post_image.v) px = clamp8(px + urand(-3, 3));
    if (opt.post_gain_jitter > 0) {
        double g = 1.0 + urand(-opt.post_gain_jitter, opt.post_gain_jitter);
        double off = urand(-40 * opt.post_gain_jitter, 40 * opt.post_gain_jitter);
        for (auto& px : rec.post_image.v) px = clamp8(g * px + off);
    }
    return rec;
}

void check_mix(int num_classes, const std::vector<double>& mix) {
    if (static_cast<int>(mix.size()) != num_classes)
        throw std::invalid_argument("synth_dataset: class_mix length must equal num_classes");
    double s = 0;
    for (double m : mix) {
        if (m < 0) throw std::invalid_argument("synth_dataset: negative class_mix entry");
        s += m;
    }
    if (std::fabs(s - 100.0) > 1e-6)
        throw std::invalid_argument("synth_dataset: class_mix must sum to 100");
}

}  // namespace

std::vector<TileRecord> synth_dataset(uint64_t seed, int n_tiles, long size, int num_classes,
                                      const std::vector<double>& class_mix,
                                      const SynthOptions& opt) {
    check_mix(num_classes, class_mix);
    if (n_tiles < 0 || size < 8) throw std::invalid_argument("synth_dataset: bad n_tiles/size");
    std::vector<TileRecord> out;
    for (int i = 0; i < n_tiles; ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "synth_%016llx_%05d", static_cast<unsigned long long>(seed),
                      i);
        out.push_back(
            synth_tile(splitmix64(seed ^ splitmix64(i)), id, size, num_classes, class_mix, opt));
    }
    return out;
}

std::string synth_manifest(uint64_t seed, int n_tiles, long size, int num_classes,
                           const std::vector<double>& class_mix, const SynthOptions& opt) {
    check_mix(num_classes, class_mix);
    json doc;
    doc["format"] = "bdcd-synth-manifest";
    doc["version"] = 1;
    doc["seed"] = seed;
    doc["size"] = size;
    doc["num_classes"] = num_classes;
    doc["class_mix"] = class_mix;
    doc["sensor_noise"] = opt.sensor_noise;
    doc["post_gain_jitter"] = opt.post_gain_jitter;
    json tiles = json::array();
    for (int i = 0; i < n_tiles; ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "synth_%016llx_%05d", static_cast<unsigned long long>(seed),
                      i);
        tiles.push_back({{"id", id},
                         {"seed", splitmix64(seed ^ splitmix64(i))},
                         {"class_mix", class_mix}});
    }
    doc["tiles"] = tiles;
    return doc.dump(2);
}

std::vector<TileRecord> synth_from_manifest(const std::string& manifest_json) {
    json doc = json::parse(manifest_json);
    if (doc.value("format", "") != "bdcd-synth-manifest")
        throw std::invalid_argument("not a synth manifest");
    long size = doc.at("size");
    int num_classes = doc.at("num_classes");
    SynthOptions opt;
    opt.sensor_noise = doc.value("sensor_noise", false);
    opt.post_gain_jitter = doc.value("post_gain_jitter", 0.0);
    std::vector<TileRecord> out;
    for (const auto& t : doc.at("tiles")) {
        std::vector<double> mix = t.at("class_mix").get<std::vector<double>>();
        check_mix(num_classes, mix);
        out.push_back(synth_tile(t.at("seed").get<uint64_t>(), t.at("id").get<std::string>(),
                                 size, num_classes, mix, opt));
    }
    return out;
}

// -------------------------------------------------------------- augmentation

namespace {

template <typename GetSet>
void flip_h_inplace(long h, long w, GetSet swap) {
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w / 2; ++x) swap(y, x, y, w - 1 - x);
}

ImageU8 rot90_img(const ImageU8& img) {  // counter-clockwise
    ImageU8 out(img.w, img.h, img.c);
    for (long y = 0; y < img.h; ++y)
        for (long x = 0; x < img.w; ++x)
            for (long c = 0; c < img.c; ++c) out.at(img.w - 1 - x, y, c) = img.at(y, x, c);
    return out;
}

Mask rot90_mask(const Mask& m) {
    Mask out(m.w, m.h);
    for (long y = 0; y < m.h; ++y)
        for (long x = 0; x < m.w; ++x) out.at(m.w - 1 - x, y) = m.at(y, x);
    return out;
}

ImageU8 recenter_img(const ImageU8& img, long oh, long ow) {
    ImageU8 out(oh, ow, img.c);
    long dy = (img.h - oh) / 2, dx = (img.w - ow) / 2;
    for (long y = 0; y < oh; ++y)
        for (long x = 0; x < ow; ++x) {
            long sy = std::clamp(y + dy, 0L, img.h - 1);  // replicate when padding
            long sx = std::clamp(x + dx, 0L, img.w - 1);
            for (long c = 0; c < img.c; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    return out;
}

Mask recenter_mask(const Mask& m, long oh, long ow) {
    Mask out(oh, ow);
    long dy = (m.h - oh) / 2, dx = (m.w - ow) / 2;
    for (long y = 0; y < oh; ++y)
        for (long x = 0; x < ow; ++x) {
            long sy = y + dy, sx = x + dx;
            out.at(y, x) =
                (sy >= 0 && sy < m.h && sx >= 0 && sx < m.w) ? m.at(sy, sx) : 0;  // pad background
        }
    return out;
}

void photometric_jitter(ImageU8& img, double fb, double fc, double fs) {
    for (long y = 0; y < img.h; ++y)
        for (long x = 0; x < img.w; ++x) {
            double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
            r *= fb;
            g *= fb;
            b *= fb;
            r = (r - 128) * fc + 128;
            g = (g - 128) * fc + 128;
            b = (b - 128) * fc + 128;
            double gray = 0.299 * r + 0.587 * g + 0.114 * b;
            img.at(y, x, 0) = clamp8(gray + (r - gray) * fs);
            img.at(y, x, 1) = clamp8(gray + (g - gray) * fs);
            img.at(y, x, 2) = clamp8(gray + (b - gray) * fs);
        }
}

}  // namespace

TileRecord augment(const TileRecord& rec, uint64_t seed, const AugmentToggles& t) {
    TileRecord out = rec;
    std::mt19937_64 rng(splitmix64(seed ^ fnv1a(rec.tile_id)));
    auto coin = [&] { return std::uniform_int_distribution<int>(0, 1)(rng) == 1; };
    auto urand = [&](double a, double b) {
        return std::uniform_real_distribution<double>(a, b)(rng);
    };

    if (t.hflip && coin()) {
        long w = out.pre_image.w, h = out.pre_image.h;
        flip_h_inplace(h, w, [&](long y, long x, long y2, long x2) {
            for (long c = 0; c < 3; ++c) {
                std::swap(out.pre_image.at(y, x, c), out.pre_image.at(y2, x2, c));
                std::swap(out.post_image.at(y, x, c), out.post_image.at(y2, x2, c));
            }
            std::swap(out.label_mask.at(y, x), out.label_mask.at(y2, x2));
        });
    }
    if (t.vflip && coin()) {
        long w = out.pre_image.w, h = out.pre_image.h;
        for (long y = 0; y < h / 2; ++y)
            for (long x = 0; x < w; ++x) {
                for (long c = 0; c < 3; ++c) {
                    std::swap(out.pre_image.at(y, x, c), out.pre_image.at(h - 1 - y, x, c));
                    std::swap(out.post_image.at(y, x, c), out.post_image.at(h - 1 - y, x, c));
                }
                std::swap(out.label_mask.at(y, x), out.label_mask.at(h - 1 - y, x));
            }
    }
    if (t.rot90) {
        int k = std::uniform_int_distribution<int>(0, 3)(rng);
        for (int i = 0; i < k; ++i) {
            out.pre_image = rot90_img(out.pre_image);
            out.post_image = rot90_img(out.post_image);
            out.label_mask = rot90_mask(out.label_mask);
        }
    }
    if (t.scale_jitter) {
        double s = urand(0.9, 1.1);
        long h = out.pre_image.h, w = out.pre_image.w;
        long sh = std::max(1L, std::lround(h * s)), sw = std::max(1L, std::lround(w * s));
        out.pre_image = recenter_img(resize_bilinear(out.pre_image, sh, sw), h, w);
        out.post_image = recenter_img(resize_bilinear(out.post_image, sh, sw), h, w);
        out.label_mask = recenter_mask(resize_nearest(out.label_mask, sh, sw), h, w);
    }
    if (t.photometric) {
        photometric_jitter(out.pre_image, urand(0.8, 1.2), urand(0.8, 1.2), urand(0.8, 1.2));
        photometric_jitter(out.post_image, urand(0.8, 1.2), urand(0.8, 1.2), urand(0.8, 1.2));
    }
    return out;
}

// --------------------------------------------------------- splits and stats

namespace {

int dominant_class(const Mask& m) {
    std::map<int, long> counts;
    for (uint8_t v : m.v)
        if (v >= 1) ++counts[v];
    int best = 0;
    long bc = 0;
    for (auto [cls, n] : counts)
        if (n > bc) {
            bc = n;
            best = cls;
        }
    return best;
}

}  // namespace

std::array<std::vector<TileRecord>, 3> stratified_split(const std::vector<TileRecord>& records,
                                                        std::array<double, 3> fractions,
                                                        uint64_t seed) {
    if (records.empty()) throw std::invalid_argument("stratified_split: empty input");
    double s = fractions[0] + fractions[1] + fractions[2];
    if (std::fabs(s - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0)
        throw std::invalid_argument("stratified_split: fractions must be >= 0 and sum to 1");

    std::map<int, std::vector<size_t>> buckets;
    for (size_t i = 0; i < records.size(); ++i)
        buckets[dominant_class(records[i].label_mask)].push_back(i);

    std::array<std::vector<TileRecord>, 3> out;
    for (auto& [cls, idx] : buckets) {
        std::mt19937_64 rng(splitmix64(seed ^ splitmix64(cls + 1)));
        std::shuffle(idx.begin(), idx.end(), rng);
        size_t n = idx.size();
        size_t n0 = static_cast<size_t>(n * fractions[0]);
        size_t n1 = static_cast<size_t>(n * fractions[1]);
        size_t n2 = static_cast<size_t>(n * fractions[2]);
        size_t leftover = n - n0 - n1 - n2;
        // leftovers go to train, then val, then test
        while (leftover) {
            if (leftover) { ++n0; --leftover; }
            if (leftover) { ++n1; --leftover; }
            if (leftover) { ++n2; --leftover; }
        }
        size_t k = 0;
        for (size_t i = 0; i < n0; ++i) out[0].push_back(records[idx[k++]]);
        for (size_t i = 0; i < n1; ++i) out[1].push_back(records[idx[k++]]);
        for (size_t i = 0; i < n2; ++i) out[2].push_back(records[idx[k++]]);
    }
    return out;
}

std::vector<double> class_pixel_distribution(const std::vector<TileRecord>& records,
                                             int num_classes) {
    if (records.empty()) throw std::invalid_argument("class_pixel_distribution: empty input");
    std::vector<long> counts(num_classes, 0);
    long total = 0;
    for (const auto& r : records)
        for (uint8_t v : r.label_mask.v) {
            if (v >= num_classes)
                throw std::invalid_argument("class_pixel_distribution: label out of range");
            ++counts[v];
            ++total;
        }
    std::vector<double> pct(num_classes);
    for (int c = 0; c < num_classes; ++c) pct[c] = 100.0 * counts[c] / total;
    return pct;
}

std::vector<double> derive_class_weights(const std::vector<double>& distribution_percent) {
    if (distribution_percent.empty())
        throw std::invalid_argument("derive_class_weights: empty distribution");
    std::vector<double> w;
    for (double f : distribution_percent) {
        if (f < 0 || !std::isfinite(f))
            throw std::invalid_argument("derive_class_weights: malformed distribution");
        double wi;
        if (f <= 0) {
            wi = 0.7;  // unseen class: maximum weight
        } else {
            wi = std::pow(10.0, std::floor(std::log10(1.0 / f)));
            wi = std::clamp(wi, 0.01, 0.7);
        }
        w.push_back(std::round(wi * 100.0) / 100.0);
    }
    return w;
}

}  // namespace bdcd
