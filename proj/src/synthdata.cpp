#include "fire2/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "fire2/errors.hpp"
#include "fire2/image_io.hpp"

namespace fire2::synthdata {

namespace fs = std::filesystem;
using nlohmann::json;

const char* viewpoint_name(Viewpoint v) {
    switch (v) {
        case Viewpoint::front: return "front";
        case Viewpoint::back: return "back";
        case Viewpoint::side: return "side";
    }
    return "front";
}

Viewpoint viewpoint_from_name(const std::string& s) {
    if (s == "front") return Viewpoint::front;
    if (s == "back") return Viewpoint::back;
    if (s == "side") return Viewpoint::side;
    throw ConfigError("unknown viewpoint: " + s);
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::query: return "query";
        case Split::gallery: return "gallery";
    }
    return "train";
}

namespace {

// Pixel-level hash noise: stable function of (seed, h, u, c). This is the
// persistent identity texture, sampled in body-centric coordinates so it
// mirrors together with the silhouette.
double pattern_value(uint64_t seed, int h, int u, int c) {
    uint64_t z = seed ^ (static_cast<uint64_t>(h) * 0x9e3779b97f4a7c15ull) ^
                 (static_cast<uint64_t>(static_cast<int64_t>(u) + 1024) * 0xc2b2ae3d27d4eb4full) ^
                 (static_cast<uint64_t>(c) * 0x165667b19e3779f9ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
}

Color hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

struct BodyLayout {
    int torso_top, legs_top, feet_top, feet_bottom;
    int center;          // body center column after viewpoint shift
    int halfwidth;       // after viewpoint narrowing
    int head_halfwidth;
    bool mirrored;
    int pattern_shift;
};

BodyLayout layout_for(const IdentitySpec& spec, Viewpoint v, const RenderParams& p) {
    BodyLayout L;
    L.torso_top = spec.torso_top;
    L.legs_top = spec.legs_top;
    L.feet_top = spec.feet_top;
    L.feet_bottom = p.image_h;
    L.center = p.image_w / 2;
    L.halfwidth = spec.body_halfwidth;
    L.head_halfwidth = spec.head_halfwidth;
    L.mirrored = v == Viewpoint::back;
    L.pattern_shift = 0;
    if (v == Viewpoint::side) {
        L.center += 1;
        L.halfwidth = std::max(2, (spec.body_halfwidth * 7) / 10);
        L.head_halfwidth = std::min(L.head_halfwidth, L.halfwidth - 1);
        L.pattern_shift = 2;
    }
    return L;
}

enum class Region { background, hair, skin, upper_cloth, lower_cloth, shoes };

Region region_at(const BodyLayout& L, int h, int w) {
    const int d = std::abs(w - L.center);
    if (d > L.halfwidth) return Region::background;
    if (h < L.torso_top) {
        if (d > L.head_halfwidth) return Region::background;
        return h < L.torso_top / 2 ? Region::hair : Region::skin;
    }
    if (h < L.legs_top) {
        // torso: outermost column on each side is bare arm
        if (d >= L.halfwidth) return Region::skin;
        return Region::upper_cloth;
    }
    if (h < L.feet_top) {
        if (d >= L.halfwidth) return Region::background;
        return Region::lower_cloth;
    }
    if (d >= L.halfwidth) return Region::background;
    return Region::shoes;
}

/// White structural marks at identity-specific positions. The color is shared
/// by every identity on purpose: only the position carries information.
bool mark_at(const IdentitySpec& spec, const BodyLayout& L, int h, int u) {
    if (h >= L.torso_top && h < L.legs_top &&
        (h == spec.arm_band_row || h == spec.arm_band_row + 1 || h == spec.arm_band_row + 2))
        return true;  // applies on arm columns only; caller checks the region
    if ((h == spec.head_mark_row || h == spec.head_mark_row + 1) && u == spec.head_mark_u)
        return true;  // asymmetric: mirrored views stay distinguishable
    if (h >= L.feet_top && h < L.feet_top + 2 && u == spec.feet_mark_u) return true;
    return false;
}

}  // namespace

std::vector<bool> clothing_mask(const IdentitySpec& spec, Viewpoint viewpoint,
                                const RenderParams& params) {
    const BodyLayout L = layout_for(spec, viewpoint, params);
    std::vector<bool> mask(static_cast<size_t>(params.image_h) * params.image_w, false);
    for (int h = 0; h < params.image_h; ++h)
        for (int w = 0; w < params.image_w; ++w) {
            Region r = region_at(L, h, w);
            if (r == Region::upper_cloth || r == Region::lower_cloth)
                mask[static_cast<size_t>(h) * params.image_w + w] = true;
        }
    return mask;
}

SampleRecord render_sample(const IdentitySpec& spec, int clothing_id, Viewpoint viewpoint,
                           double occlusion, int camera_id, uint64_t noise_seed,
                           const RenderParams& params) {
    if (clothing_id < 0 || clothing_id >= spec.num_outfits)
        throw ConfigError("render_sample: clothing_id " + std::to_string(clothing_id) +
                          " out of range for identity " + std::to_string(spec.identity_id));
    const int H = params.image_h, W = params.image_w;
    const BodyLayout L = layout_for(spec, viewpoint, params);
    const OutfitPalette& pal = spec.outfit_palettes[static_cast<size_t>(clothing_id)];

    Tensor img({H, W, 3});
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            // body-centric horizontal coordinate; mirrored views flip it so the
            // identity texture moves with the body
            int u = w - L.center;
            if (L.mirrored) u = -u;
            u += L.pattern_shift;

            Region r = region_at(L, h, w);
            Color base{};
            bool textured = false;
            switch (r) {
                case Region::background: base = {0.56, 0.58, 0.60}; break;
                case Region::hair: base = spec.hair; textured = true; break;
                case Region::skin: base = spec.skin; textured = true; break;
                case Region::upper_cloth: base = pal.upper; break;
                case Region::lower_cloth: base = pal.lower; break;
                case Region::shoes: base = spec.shoes; textured = true; break;
            }
            if (textured && mark_at(spec, L, h, u)) base = {0.97, 0.97, 0.97};
            for (int c = 0; c < 3; ++c) {
                double v = base[static_cast<size_t>(c)];
                if (textured)
                    v += 0.18 * (pattern_value(spec.base_pattern_seed, h, u, c) - 0.5);
                img.data[(static_cast<size_t>(h) * W + w) * 3 + c] = v;
            }
        }
    }

    Rng rng(noise_seed);
    // occluder: gray rectangle inside the trunk band (torso + legs)
    const int band_top = L.torso_top, band_bottom = L.feet_top;
    if (occlusion > 0.0) {
        const int band_h = band_bottom - band_top;
        const int rect_h = std::max(1, static_cast<int>(std::lround(occlusion * band_h)));
        const int rect_w = std::max(1, static_cast<int>(std::lround(occlusion * W)));
        const int row0 = band_top + static_cast<int>(rng.uniform_int(0, band_h - rect_h));
        const int col0 = static_cast<int>(rng.uniform_int(0, W - rect_w));
        for (int h = row0; h < row0 + rect_h; ++h)
            for (int w = col0; w < col0 + rect_w; ++w)
                for (int c = 0; c < 3; ++c)
                    img.data[(static_cast<size_t>(h) * W + w) * 3 + c] = 0.5;
    } else {
        rng.uniform_int(0, 1);  // keep stream alignment with the occluded path
        rng.uniform_int(0, 1);
    }

    // illumination + fixed per-camera tint, then sensor noise
    const double illum = 1.0 + params.illum_jitter * (2.0 * rng.uniform() - 1.0);
    Color tint{};
    for (int c = 0; c < 3; ++c)
        tint[static_cast<size_t>(c)] =
            1.0 + 0.06 * (pattern_value(0x5eedca3ull + static_cast<uint64_t>(camera_id), 0, c, c) -
                          0.5) * 2.0;
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < 3; ++c) {
                double& v = img.data[(static_cast<size_t>(h) * W + w) * 3 + c];
                v = v * illum * tint[static_cast<size_t>(c)] +
                    rng.normal(0.0, params.noise_sigma);
                v = std::min(1.0, std::max(0.0, v));
            }

    SampleRecord rec;
    rec.identity_id = spec.identity_id;
    rec.image = std::move(img);
    rec.clothing_id = clothing_id;
    rec.camera_id = camera_id;
    rec.viewpoint = viewpoint;
    rec.occlusion = occlusion;
    return rec;
}

// ---------------------------------------------------------------------------
// dataset generation

namespace {

void validate(const GenerateConfig& cfg) {
    if (cfg.n_identities < 2) throw ConfigError("n_identities: must be >= 2");
    if (!cfg.outfits_per_id.valid()) throw ConfigError("outfits_per_id: empty or invalid range");
    if (!cfg.images_per_outfit.valid())
        throw ConfigError("images_per_outfit: empty or invalid range");
    if (cfg.n_cameras < 1) throw ConfigError("n_cameras: must be >= 1");
    if (cfg.image_h < 8 || cfg.image_w < 8) throw ConfigError("image_size: each side must be >= 8");
    if (cfg.train_id_fraction <= 0.0 || cfg.train_id_fraction >= 1.0)
        throw ConfigError("train_id_fraction: must be in (0,1)");
    if (cfg.palette_pool < 2) throw ConfigError("palette_pool: must be >= 2");
    if (cfg.storage != "raw" && cfg.storage != "png")
        throw ConfigError("storage: must be 'raw' or 'png'");
}

IdentitySpec make_identity(int id, const GenerateConfig& cfg) {
    Rng rng = Rng::split(cfg.seed, "identity/" + std::to_string(id));
    IdentitySpec spec;
    spec.identity_id = id;
    spec.base_pattern_seed = rng.next_u64();
    spec.num_outfits = static_cast<int>(
        rng.uniform_int(cfg.outfits_per_id.lo, cfg.outfits_per_id.hi));

    // Colors are nearly shared across identities on purpose: per-channel
    // statistics should carry clothing/illumination, not identity. Identity
    // lives in the structural fields below.
    spec.skin = {0.82 + rng.uniform(-0.02, 0.02), 0.67 + rng.uniform(-0.02, 0.02),
                 0.55 + rng.uniform(-0.02, 0.02)};
    spec.hair = {0.22 + rng.uniform(-0.05, 0.05), 0.18 + rng.uniform(-0.05, 0.05),
                 0.14 + rng.uniform(-0.05, 0.05)};
    spec.shoes = {0.30 + rng.uniform(-0.05, 0.05), 0.26 + rng.uniform(-0.05, 0.05),
                 0.24 + rng.uniform(-0.05, 0.05)};

    const int H = cfg.image_h, W = cfg.image_w;
    const int max_hw = std::max(3, W / 2 - 2);
    spec.body_halfwidth = static_cast<int>(rng.uniform_int(3, max_hw));
    spec.head_halfwidth = static_cast<int>(
        rng.uniform_int(1, std::max(1, std::min(3, spec.body_halfwidth - 2))));
    const int t_base = static_cast<int>(std::lround(0.19 * H));
    const int l_base = static_cast<int>(std::lround(0.55 * H));
    const int f_base = static_cast<int>(std::lround(0.86 * H));
    spec.torso_top = std::max(2, t_base + static_cast<int>(rng.uniform_int(-3, 3)));
    spec.legs_top =
        std::max(spec.torso_top + 4, l_base + static_cast<int>(rng.uniform_int(-6, 6)));
    spec.feet_top = std::min(H - 2, std::max(spec.legs_top + 4,
                                             f_base + static_cast<int>(rng.uniform_int(-2, 2))));
    spec.arm_band_row = static_cast<int>(
        rng.uniform_int(spec.torso_top + 1, std::max(spec.torso_top + 1, spec.legs_top - 3)));
    spec.head_mark_row =
        static_cast<int>(rng.uniform_int(0, std::max(0, spec.torso_top - 2)));
    spec.head_mark_u = static_cast<int>(rng.uniform_int(-spec.head_halfwidth, spec.head_halfwidth));
    spec.feet_mark_u = static_cast<int>(
        rng.uniform_int(-(spec.body_halfwidth - 1), spec.body_halfwidth - 1));

    // outfit colors come from a shared pool, so different identities can wear
    // the same colors (the cloth-changing confusion the benchmark needs)
    std::set<std::pair<int, int>> used;
    for (int o = 0; o < spec.num_outfits; ++o) {
        int up = 0, lo = 0;
        for (int attempt = 0; attempt < 64; ++attempt) {
            up = static_cast<int>(rng.uniform_int(0, cfg.palette_pool - 1));
            lo = static_cast<int>(rng.uniform_int(0, cfg.palette_pool - 1));
            if (!used.count({up, lo})) break;
        }
        used.insert({up, lo});
        OutfitPalette pal;
        pal.upper = hsv_to_rgb(static_cast<double>(up) / cfg.palette_pool, 0.85, 0.80);
        pal.lower = hsv_to_rgb(static_cast<double>(lo) / cfg.palette_pool, 0.75, 0.55);
        spec.outfit_palettes.push_back(pal);
    }
    return spec;
}

}  // namespace

DatasetBundle generate_dataset(const GenerateConfig& cfg) {
    validate(cfg);
    DatasetBundle bundle;
    bundle.seed = cfg.seed;
    bundle.image_h = cfg.image_h;
    bundle.image_w = cfg.image_w;
    bundle.train.split = Split::train;
    bundle.query.split = Split::query;
    bundle.gallery.split = Split::gallery;
    bundle.train.seed = bundle.query.seed = bundle.gallery.seed = cfg.seed;

    for (int id = 0; id < cfg.n_identities; ++id)
        bundle.identities.push_back(make_identity(id, cfg));

    const int n_train_ids = std::clamp(
        static_cast<int>(std::lround(cfg.train_id_fraction * cfg.n_identities)), 1,
        cfg.n_identities - 1);

    RenderParams rp;
    rp.image_h = cfg.image_h;
    rp.image_w = cfg.image_w;
    rp.n_cameras = cfg.n_cameras;
    rp.noise_sigma = cfg.noise_sigma;
    rp.illum_jitter = cfg.illum_jitter;

    static const Viewpoint kViews[3] = {Viewpoint::front, Viewpoint::back, Viewpoint::side};
    int64_t next_sample_id = 0;
    int camera_rr = 0;

    for (int id = 0; id < cfg.n_identities; ++id) {
        const IdentitySpec& spec = bundle.identities[static_cast<size_t>(id)];
        const bool is_train = id < n_train_ids;
        Rng id_rng = Rng::split(cfg.seed, "images/" + std::to_string(id));
        int view_counter = 0;
        for (int outfit = 0; outfit < spec.num_outfits; ++outfit) {
            const int m = static_cast<int>(
                id_rng.uniform_int(cfg.images_per_outfit.lo, cfg.images_per_outfit.hi));
            for (int k = 0; k < m; ++k) {
                Rng img_rng = Rng::split(cfg.seed, "img/" + std::to_string(id) + "/" +
                                                       std::to_string(outfit) + "/" +
                                                       std::to_string(k));
                double occ = 0.0;
                if (img_rng.uniform() < cfg.occluded_fraction)
                    occ = img_rng.uniform(0.10, cfg.occlusion_max);
                const uint64_t noise_seed = img_rng.next_u64();
                const Viewpoint vp = kViews[view_counter % 3];
                ++view_counter;
                const int cam = camera_rr % cfg.n_cameras;
                ++camera_rr;

                SampleRecord rec = render_sample(spec, outfit, vp, occ, cam, noise_seed, rp);
                rec.sample_id = next_sample_id++;

                SplitManifest* dst = &bundle.train;
                if (!is_train) dst = (k % 2 == 0) ? &bundle.gallery : &bundle.query;
                dst->records.push_back(std::move(rec));
            }
        }
    }

    for (SplitManifest* m : {&bundle.train, &bundle.query, &bundle.gallery}) {
        m->N = static_cast<int64_t>(m->records.size());
        std::set<int> ids;
        for (const auto& r : m->records) ids.insert(r.identity_id);
        m->N_p = static_cast<int>(ids.size());
    }
    return bundle;
}

Tensor augment(const Tensor& hwc, Rng& rng) {
    const int H = hwc.dim(0), W = hwc.dim(1);
    Tensor out = hwc;

    if (rng.uniform() < 0.5) {  // horizontal flip
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W / 2; ++w)
                for (int c = 0; c < 3; ++c)
                    std::swap(out.data[(static_cast<size_t>(h) * W + w) * 3 + c],
                              out.data[(static_cast<size_t>(h) * W + (W - 1 - w)) * 3 + c]);
    }

    // pad 2 (edge replicate) + random crop back to H x W
    const int pad = 2;
    const int dh = static_cast<int>(rng.uniform_int(0, 2 * pad));
    const int dw = static_cast<int>(rng.uniform_int(0, 2 * pad));
    Tensor cropped({H, W, 3});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            const int sh = std::clamp(h + dh - pad, 0, H - 1);
            const int sw = std::clamp(w + dw - pad, 0, W - 1);
            for (int c = 0; c < 3; ++c)
                cropped.data[(static_cast<size_t>(h) * W + w) * 3 + c] =
                    out.data[(static_cast<size_t>(sh) * W + sw) * 3 + c];
        }

    if (rng.uniform() < 0.5) {  // random erasing
        const double area = rng.uniform(0.02, 0.20) * H * W;
        const double aspect = rng.uniform(0.3, 3.3);
        int eh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, H);
        int ew = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, W);
        const int r0 = static_cast<int>(rng.uniform_int(0, H - eh));
        const int c0 = static_cast<int>(rng.uniform_int(0, W - ew));
        for (int h = r0; h < r0 + eh; ++h)
            for (int w = c0; w < c0 + ew; ++w)
                for (int c = 0; c < 3; ++c)
                    cropped.data[(static_cast<size_t>(h) * W + w) * 3 + c] = rng.uniform();
    }
    return cropped;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json color_to_json(const Color& c) { return json::array({c[0], c[1], c[2]}); }

Color color_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

json split_to_json(const SplitManifest& m, const std::string& storage) {
    json recs = json::array();
    for (const auto& r : m.records) {
        const char* ext = storage == "raw" ? ".npy" : ".png";
        char name[32];
        std::snprintf(name, sizeof(name), "images/%06lld%s",
                      static_cast<long long>(r.sample_id), ext);
        recs.push_back({{"sample_id", r.sample_id},
                        {"identity_id", r.identity_id},
                        {"clothing_id", r.clothing_id},
                        {"camera_id", r.camera_id},
                        {"viewpoint", viewpoint_name(r.viewpoint)},
                        {"occlusion", r.occlusion},
                        {"image", name}});
    }
    return {{"N", m.N}, {"N_p", m.N_p}, {"split", split_name(m.split)}, {"seed", m.seed},
            {"records", recs}};
}

}  // namespace

void save_dataset(const DatasetBundle& bundle, const std::string& dir,
                  const std::string& storage) {
    if (storage != "raw" && storage != "png") throw ConfigError("storage: must be 'raw' or 'png'");
    fs::create_directories(fs::path(dir) / "images");

    json ids = json::array();
    for (const auto& s : bundle.identities) {
        json pals = json::array();
        for (const auto& p : s.outfit_palettes)
            pals.push_back({{"upper", color_to_json(p.upper)}, {"lower", color_to_json(p.lower)}});
        ids.push_back({{"identity_id", s.identity_id},
                       {"base_pattern_seed", s.base_pattern_seed},
                       {"num_outfits", s.num_outfits},
                       {"outfit_palettes", pals},
                       {"skin", color_to_json(s.skin)},
                       {"hair", color_to_json(s.hair)},
                       {"shoes", color_to_json(s.shoes)},
                       {"body_halfwidth", s.body_halfwidth},
                       {"head_halfwidth", s.head_halfwidth},
                       {"torso_top", s.torso_top},
                       {"legs_top", s.legs_top},
                       {"feet_top", s.feet_top},
                       {"arm_band_row", s.arm_band_row},
                       {"head_mark_row", s.head_mark_row},
                       {"head_mark_u", s.head_mark_u},
                       {"feet_mark_u", s.feet_mark_u}});
    }
    json manifest = {{"format_version", 1},
                     {"seed", bundle.seed},
                     {"image_height", bundle.image_h},
                     {"image_width", bundle.image_w},
                     {"storage", storage},
                     {"identities", ids},
                     {"splits",
                      {{"train", split_to_json(bundle.train, storage)},
                       {"query", split_to_json(bundle.query, storage)},
                       {"gallery", split_to_json(bundle.gallery, storage)}}}};

    for (const SplitManifest* m : {&bundle.train, &bundle.query, &bundle.gallery}) {
        for (const auto& r : m->records) {
            char name[32];
            std::snprintf(name, sizeof(name), "%06lld", static_cast<long long>(r.sample_id));
            const fs::path p = fs::path(dir) / "images" / name;
            if (storage == "raw")
                io::write_npy(p.string() + ".npy", r.image);
            else
                io::write_png_rgb8(p.string() + ".png", r.image);
        }
    }

    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw RuntimeAbort("cannot write manifest.json under " + dir);
    os << manifest.dump(2) << "\n";
}

DatasetBundle load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw ConfigError("no manifest.json under " + dir);
    json manifest = json::parse(is);

    DatasetBundle bundle;
    bundle.seed = manifest.at("seed");
    bundle.image_h = manifest.at("image_height");
    bundle.image_w = manifest.at("image_width");
    const std::string storage = manifest.at("storage");

    for (const auto& j : manifest.at("identities")) {
        IdentitySpec s;
        s.identity_id = j.at("identity_id");
        s.base_pattern_seed = j.at("base_pattern_seed");
        s.num_outfits = j.at("num_outfits");
        for (const auto& p : j.at("outfit_palettes"))
            s.outfit_palettes.push_back(
                {color_from_json(p.at("upper")), color_from_json(p.at("lower"))});
        s.skin = color_from_json(j.at("skin"));
        s.hair = color_from_json(j.at("hair"));
        s.shoes = color_from_json(j.at("shoes"));
        s.body_halfwidth = j.at("body_halfwidth");
        s.head_halfwidth = j.at("head_halfwidth");
        s.torso_top = j.at("torso_top");
        s.legs_top = j.at("legs_top");
        s.feet_top = j.at("feet_top");
        s.arm_band_row = j.at("arm_band_row");
        s.head_mark_row = j.at("head_mark_row");
        s.head_mark_u = j.at("head_mark_u");
        s.feet_mark_u = j.at("feet_mark_u");
        bundle.identities.push_back(std::move(s));
    }

    auto load_split = [&](const json& j, Split which) {
        SplitManifest m;
        m.split = which;
        m.N = j.at("N");
        m.N_p = j.at("N_p");
        m.seed = j.at("seed");
        for (const auto& r : j.at("records")) {
            SampleRecord rec;
            rec.sample_id = r.at("sample_id");
            rec.identity_id = r.at("identity_id");
            rec.clothing_id = r.at("clothing_id");
            rec.camera_id = r.at("camera_id");
            rec.viewpoint = viewpoint_from_name(r.at("viewpoint"));
            rec.occlusion = r.at("occlusion");
            const fs::path img = fs::path(dir) / std::string(r.at("image"));
            rec.image = storage == "raw" ? io::read_npy(img.string())
                                         : io::read_png_rgb8(img.string());
            if (!rec.image.all_finite()) throw RuntimeAbort("non-finite pixels in " + img.string());
            m.records.push_back(std::move(rec));
        }
        if (m.N != static_cast<int64_t>(m.records.size()))
            throw RuntimeAbort("manifest N does not match record count");
        return m;
    };
    bundle.train = load_split(manifest.at("splits").at("train"), Split::train);
    bundle.query = load_split(manifest.at("splits").at("query"), Split::query);
    bundle.gallery = load_split(manifest.at("splits").at("gallery"), Split::gallery);
    return bundle;
}

}  // namespace fire2::synthdata
