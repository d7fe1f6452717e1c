#include "fire2/featnet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "fire2/errors.hpp"
#include "fire2/rng.hpp"

namespace fire2::featnet {

const char* pooling_name(Pooling p) { return p == Pooling::avg ? "avg" : "max"; }

Pooling pooling_from_name(const std::string& s) {
    if (s == "avg") return Pooling::avg;
    if (s == "max") return Pooling::max;
    throw ConfigError("backbone.pooling: must be 'avg' or 'max'");
}

std::pair<int, int> BackboneConfig::output_hw(int image_h, int image_w) const {
    int h = image_h, w = image_w;
    const int pad = kernel / 2;
    for (int s : strides) {
        h = (h + 2 * pad - kernel) / s + 1;
        w = (w + 2 * pad - kernel) / s + 1;
    }
    return {h, w};
}

void BackboneConfig::validate() const {
    if (channels.empty() || channels.size() != strides.size())
        throw ConfigError("backbone: channels and strides must be nonempty and the same length");
    for (int c : channels)
        if (c < 1) throw ConfigError("backbone.channels: entries must be >= 1");
    for (int s : strides)
        if (s < 1) throw ConfigError("backbone.strides: entries must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("backbone.kernel: must be odd and >= 1");
}

Embedding Embedding::normalized_copy() const {
    Embedding e = *this;
    l2_normalize(e.vector);
    e.normalized = true;
    return e;
}

std::vector<std::pair<int, int>> part_bounds(int height, int parts) {
    if (parts < 1 || parts > height)
        throw std::invalid_argument("part_bounds: need 1 <= parts <= height, got parts=" +
                                    std::to_string(parts) + " height=" + std::to_string(height));
    std::vector<std::pair<int, int>> bounds;
    const int base = height / parts;
    int h0 = 0;
    for (int p = 0; p < parts; ++p) {
        int h1 = (p == parts - 1) ? height : h0 + base;
        bounds.emplace_back(h0, h1);
        h0 = h1;
    }
    return bounds;
}

std::vector<FeatureMap> part_split(const FeatureMap& map, int parts) {
    const int C = map.channels(), H = map.height(), W = map.width();
    std::vector<FeatureMap> out;
    for (auto [h0, h1] : part_bounds(H, parts)) {
        FeatureMap part{Tensor({C, h1 - h0, W})};
        for (int c = 0; c < C; ++c)
            for (int h = h0; h < h1; ++h)
                for (int w = 0; w < W; ++w)
                    part.data.data[(static_cast<size_t>(c) * (h1 - h0) + (h - h0)) * W + w] =
                        map.data.data[(static_cast<size_t>(c) * H + h) * W + w];
        out.push_back(std::move(part));
    }
    return out;
}

Tensor images_to_batch(const std::vector<Tensor>& images_hwc) {
    if (images_hwc.empty()) throw std::invalid_argument("images_to_batch: empty batch");
    const int H = images_hwc[0].dim(0), W = images_hwc[0].dim(1);
    Tensor batch({static_cast<int>(images_hwc.size()), 3, H, W});
    for (size_t b = 0; b < images_hwc.size(); ++b) {
        const Tensor& img = images_hwc[b];
        if (img.rank() != 3 || img.dim(0) != H || img.dim(1) != W || img.dim(2) != 3)
            throw std::invalid_argument("images_to_batch: inconsistent image shapes");
        for (const double v : img.data)
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw std::invalid_argument("images_to_batch: pixel outside [0,1] or non-finite");
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < 3; ++c)
                    batch.at4(static_cast<int>(b), c, h, w) =
                        img.data[(static_cast<size_t>(h) * W + w) * 3 + c];
    }
    return batch;
}

Backbone::Backbone(BackboneConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = Rng::split(init_seed, "backbone");
    int cin = 3;
    for (size_t i = 0; i < cfg_.channels.size(); ++i) {
        const int cout = cfg_.channels[i];
        const int k = cfg_.kernel;
        Stage st{
            Parameter("stage" + std::to_string(i) + ".conv_w", Tensor({cout, cin, k, k})),
            Parameter("stage" + std::to_string(i) + ".conv_b", Tensor({cout})),
            Parameter("stage" + std::to_string(i) + ".gamma", Tensor({cout})),
            Parameter("stage" + std::to_string(i) + ".beta", Tensor({cout})),
        };
        const double std = std::sqrt(2.0 / (cin * k * k));
        for (double& v : st.conv_w.value.data) v = rng.normal(0.0, std);
        st.gamma.value.fill(1.0);
        stages_.push_back(std::move(st));
        cin = cout;
    }
}

template <typename ParamToVar>
Backbone::ForwardNodes Backbone::build(Tape& tape, Var x, ParamToVar to_var) const {
    const int pad = cfg_.kernel / 2;
    for (size_t i = 0; i < stages_.size(); ++i) {
        const Stage& st = stages_[i];
        x = tape.conv2d(x, to_var(st.conv_w), to_var(st.conv_b), cfg_.strides[i], pad);
        // The last stage stays norm-free: instance norm would zero every
        // channel's per-sample mean, collapsing the pooled embedding and the
        // (mu, sigma) attribute statistics to constants.
        if (i + 1 < stages_.size()) {
            x = tape.instance_norm(x, to_var(st.gamma), to_var(st.beta), cfg_.norm_eps);
        }
        x = tape.relu(x);
    }
    Var emb = cfg_.pooling == Pooling::avg ? tape.spatial_mean(x) : tape.global_max_pool(x);
    return {x, emb};
}

Backbone::ForwardNodes Backbone::forward_t(Tape& tape, Var images_bchw) {
    return build(tape, images_bchw,
                 [&tape](const Parameter& p) { return tape.param(const_cast<Parameter&>(p)); });
}

Backbone::ForwardNodes Backbone::forward_frozen(Tape& tape, Var images_bchw) const {
    return build(tape, images_bchw,
                 [&tape](const Parameter& p) { return tape.constant(p.value); });
}

std::pair<std::vector<FeatureMap>, std::vector<Embedding>> Backbone::forward(
    const std::vector<Tensor>& images_hwc) const {
    Tensor batch = images_to_batch(images_hwc);
    Tape tape;
    ForwardNodes nodes = forward_frozen(tape, tape.constant(std::move(batch)));
    const Tensor& fm = tape.value(nodes.fmap);
    const Tensor& em = tape.value(nodes.emb);
    const int B = fm.dim(0), C = fm.dim(1), H = fm.dim(2), W = fm.dim(3);

    std::vector<FeatureMap> maps;
    std::vector<Embedding> embs;
    for (int b = 0; b < B; ++b) {
        FeatureMap m{Tensor({C, H, W})};
        std::copy(fm.data.begin() + static_cast<int64_t>(b) * C * H * W,
                  fm.data.begin() + static_cast<int64_t>(b + 1) * C * H * W, m.data.data.begin());
        maps.push_back(std::move(m));
        Embedding e;
        e.vector.assign(em.data.begin() + static_cast<int64_t>(b) * C,
                        em.data.begin() + static_cast<int64_t>(b + 1) * C);
        embs.push_back(std::move(e));
    }
    return {std::move(maps), std::move(embs)};
}

std::vector<Parameter*> Backbone::parameters() {
    std::vector<Parameter*> out;
    for (Stage& st : stages_) {
        out.push_back(&st.conv_w);
        out.push_back(&st.conv_b);
        out.push_back(&st.gamma);
        out.push_back(&st.beta);
    }
    return out;
}

}  // namespace fire2::featnet
