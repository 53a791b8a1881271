#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "bdcd/image.hpp"
#include "bdcd/mask.hpp"

namespace bdcd {

/// One geo-aligned pre/post pair with its per-pixel label mask.
struct TileRecord {
    std::string tile_id;
    std::string event_id;
    ImageU8 pre_image, post_image;
    Mask label_mask;
    double resolution_m_per_px = 0.8;
};

/// A labeled building polygon in pixel coordinates.
struct PolygonLabel {
    std::string wkt;      // "POLYGON ((x y, ...))", optionally with holes
    std::string subtype;  // no-damage | minor-damage | major-damage | destroyed | un-classified
};

using Ring = std::vector<std::pair<double, double>>;

/// Outer ring plus holes, parsed from WKT; vertices clamped to [0,w]x[0,h]
/// at rasterization time.
std::vector<Ring> parse_wkt_polygon(const std::string& wkt);

/// Damage class for an xBD subtype string. Unknown strings throw;
/// "un-classified" maps to no-damage (1) unless remapped by the caller.
int damage_class_from_subtype(const std::string& subtype);

/// Even-odd scanline fill at pixel centers. Polygons are drawn in ascending
/// damage-class order so higher damage overwrites lower where they overlap.
/// Degenerate polygons (< 3 vertices) are skipped and counted.
Mask rasterize_polygons(const std::vector<PolygonLabel>& polygons, long h, long w,
                        long* skipped = nullptr);

TileRecord load_xbd_tile(const std::string& pre_image_path, const std::string& post_image_path,
                         const std::string& label_path);

TileRecord load_levir_pair(const std::string& a_path, const std::string& b_path,
                           const std::string& label_path);

/// Non-overlapping patch grid; image sizes must be divisible by `patch`.
std::vector<TileRecord> crop_patches(const TileRecord& rec, long patch);

struct SynthOptions {
    bool sensor_noise = false;        // small uniform noise on the post image
    double post_gain_jitter = 0.0;    // per-tile global gain/offset on the post image
    int max_retries = 200;            // placement attempts before giving up on a building
};

/// Deterministic synthetic dataset: textured background, non-overlapping
/// rectangular buildings, per-class damage transforms in the post image.
/// class_mix holds target pixel percentages per class (length num_classes).
std::vector<TileRecord> synth_dataset(uint64_t seed, int n_tiles, long size, int num_classes,
                                      const std::vector<double>& class_mix,
                                      const SynthOptions& opt = {});

/// JSON manifest sufficient to regenerate the dataset bit-exactly.
std::string synth_manifest(uint64_t seed, int n_tiles, long size, int num_classes,
                           const std::vector<double>& class_mix, const SynthOptions& opt = {});
std::vector<TileRecord> synth_from_manifest(const std::string& manifest_json);

struct AugmentToggles {
    bool hflip = false;
    bool vflip = false;
    bool rot90 = false;
    bool scale_jitter = false;   // +-10% scale, joint on images and mask
    bool photometric = false;    // +-20% brightness/contrast/saturation, images only
};

/// Identical geometric transform on pre, post and mask; photometric jitter
/// independently on the two images. Deterministic per (seed, record).
TileRecord augment(const TileRecord& rec, uint64_t seed, const AugmentToggles& t);

/// Bucket by dominant non-background class, then split each bucket by the
/// fractions. Disjoint, exhaustive, deterministic by seed.
std::array<std::vector<TileRecord>, 3> stratified_split(const std::vector<TileRecord>& records,
                                                        std::array<double, 3> fractions,
                                                        uint64_t seed);

/// Percentage of pixels per class over all label masks; sums to 100.
std::vector<double> class_pixel_distribution(const std::vector<TileRecord>& records,
                                             int num_classes);

/// Loss weights from a pixel-percentage distribution: inverse frequency
/// snapped down to a power of ten, clipped to [0.01, 0.7], 2 decimals.
/// Zero-frequency classes get the maximum weight.
std::vector<double> derive_class_weights(const std::vector<double>& distribution_percent);

}  // namespace bdcd
