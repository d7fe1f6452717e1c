#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fire2/rng.hpp"
#include "fire2/tensor.hpp"

namespace fire2::synthdata {

using Color = std::array<double, 3>;

enum class Viewpoint { front, back, side };

const char* viewpoint_name(Viewpoint v);
Viewpoint viewpoint_from_name(const std::string& s);

/// One outfit: independent upper-body and lower-body colors, so part-level
/// recomposition has a synthetic analogue of "different jackets or pants".
struct OutfitPalette {
    Color upper;
    Color lower;
};

struct IdentitySpec {
    int identity_id = 0;
    uint64_t base_pattern_seed = 0;
    int num_outfits = 0;
    std::vector<OutfitPalette> outfit_palettes;

    // persistent appearance
    Color skin;
    Color hair;
    Color shoes;

    // Structural signature: body proportions and mark positions in pixels.
    // These survive any change of per-channel color statistics, which is what
    // makes cross-clothes identification possible at all.
    int body_halfwidth = 5;   // columns from center
    int head_halfwidth = 2;
    int torso_top = 6;        // region boundary rows
    int legs_top = 17;
    int feet_top = 27;
    int arm_band_row = 10;    // white stripe across the bare-arm columns
    int head_mark_row = 3;    // white 2x1 marks, body-centric column u
    int head_mark_u = 0;
    int feet_mark_u = 0;

    bool valid() const {
        return num_outfits >= 1 && static_cast<int>(outfit_palettes.size()) == num_outfits;
    }
};

struct SampleRecord {
    int64_t sample_id = 0;
    int identity_id = 0;
    Tensor image;  // H x W x 3, values in [0,1]
    int clothing_id = 0;
    int camera_id = 0;
    Viewpoint viewpoint = Viewpoint::front;
    double occlusion = 0.0;
};

enum class Split { train, query, gallery };

const char* split_name(Split s);

/// One split's worth of samples (the per-split manifest).
struct SplitManifest {
    int64_t N = 0;    // == records.size()
    int N_p = 0;      // identities present in this split
    Split split = Split::train;
    std::vector<SampleRecord> records;
    uint64_t seed = 0;
};

/// A full generated benchmark: train + identity-disjoint query/gallery.
struct DatasetBundle {
    uint64_t seed = 0;
    int image_h = 0;
    int image_w = 0;
    std::vector<IdentitySpec> identities;
    SplitManifest train;
    SplitManifest query;
    SplitManifest gallery;

    int64_t total_images() const { return train.N + query.N + gallery.N; }
    int total_identities() const { return static_cast<int>(identities.size()); }
};

struct IntRange {
    int lo = 0;
    int hi = 0;
    bool valid() const { return lo >= 1 && hi >= lo; }
};

struct GenerateConfig {
    uint64_t seed = 7;
    int n_identities = 8;
    IntRange outfits_per_id{2, 2};
    IntRange images_per_outfit{4, 4};
    int n_cameras = 3;
    int image_h = 32;
    int image_w = 16;
    double train_id_fraction = 2.0 / 3.0;  // remaining identities go to query/gallery
    int palette_pool = 8;        // shared color pool; identities can collide on outfit colors
    double noise_sigma = 0.02;   // per-pixel Gaussian noise
    double illum_jitter = 0.10;  // global brightness scale drawn in [1-j, 1+j]
    double occluded_fraction = 0.25;  // fraction of images given an occluder
    double occlusion_max = 0.30;
    std::string storage = "raw";  // "raw" (.npy float64, bit-exact) or "png" (8-bit)
};

struct RenderParams {
    int image_h = 32;
    int image_w = 16;
    int n_cameras = 2;
    double noise_sigma = 0.02;
    double illum_jitter = 0.10;
};

/// Deterministic single-sample renderer. The identity pattern lives outside
/// the clothing regions, so outfit swaps leave non-clothing pixels untouched
/// (up to the shared noise stream).
SampleRecord render_sample(const IdentitySpec& spec, int clothing_id, Viewpoint viewpoint,
                           double occlusion, int camera_id, uint64_t noise_seed,
                           const RenderParams& params);

/// Pixel mask (H*W) of the clothing-colored region for this identity and
/// viewpoint; used by tests to confine outfit-change diffs.
std::vector<bool> clothing_mask(const IdentitySpec& spec, Viewpoint viewpoint,
                                const RenderParams& params);

/// Generate the full benchmark. Deterministic for a fixed config.
DatasetBundle generate_dataset(const GenerateConfig& cfg);

/// Train-time augmentation: horizontal flip (p=0.5), 2px pad + random crop,
/// random erasing (p=0.5, 2-20% area). Returns an H x W x 3 image.
Tensor augment(const Tensor& hwc, Rng& rng);

// ---- persistence ----

void save_dataset(const DatasetBundle& bundle, const std::string& dir, const std::string& storage);
DatasetBundle load_dataset(const std::string& dir);

/// Adapter seam for plugging in real datasets later; only the synthetic
/// directory backend exists.
struct DatasetSource {
    virtual ~DatasetSource() = default;
    virtual DatasetBundle load(const std::string& location) const = 0;
};

struct SyntheticDirectorySource final : DatasetSource {
    DatasetBundle load(const std::string& location) const override { return load_dataset(location); }
};

}  // namespace fire2::synthdata
