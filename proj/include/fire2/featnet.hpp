#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fire2/autograd.hpp"
#include "fire2/tensor.hpp"

namespace fire2::featnet {

enum class Pooling { avg, max };

const char* pooling_name(Pooling p);
Pooling pooling_from_name(const std::string& s);

/// Small stand-in backbone: N conv stages (conv3x3 -> instance norm -> ReLU)
/// with per-stage widths and strides. Instance norm keeps every statistic
/// batch-independent, so eval mode needs no frozen running averages.
struct BackboneConfig {
    std::vector<int> channels = {16, 32, 64, 64};
    std::vector<int> strides = {2, 2, 1, 1};
    int kernel = 3;
    // max by default: average-pooling a statistic-transplanted map returns
    // only the donor's statistics, so the recomposed-feature loss would see
    // no recipient content at all
    Pooling pooling = Pooling::max;
    double norm_eps = 1e-5;
    /// L2-normalize the embedding fed to the attribute classifier and to
    /// retrieval (cosine scale); the identity-classifier input stays raw.
    bool normalize_embedding = true;

    int embedding_dim() const { return channels.back(); }
    std::pair<int, int> output_hw(int image_h, int image_w) const;
    void validate() const;
};

/// Spatial feature tensor for one sample (C x H x W).
struct FeatureMap {
    Tensor data;
    int channels() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

struct Embedding {
    std::vector<double> vector;
    bool normalized = false;

    /// Returns the L2-normalized copy with the flag set.
    Embedding normalized_copy() const;
};

/// Row ranges [h0, h1) for splitting H rows into P parts; heights differ by
/// at most one, remainder rows go to the last part.
std::vector<std::pair<int, int>> part_bounds(int height, int parts);

/// Horizontal split of a feature map; concatenating the result reconstructs
/// the input exactly.
std::vector<FeatureMap> part_split(const FeatureMap& map, int parts);

class Backbone {
  public:
    Backbone(BackboneConfig cfg, uint64_t init_seed);

    struct ForwardNodes {
        Var fmap;  // [B, C, H, W]
        Var emb;   // [B, C] pooled, unnormalized
    };

    /// Training path: parameters participate in the tape.
    ForwardNodes forward_t(Tape& tape, Var images_bchw);

    /// Inference path: parameters enter as constants (no gradients).
    ForwardNodes forward_frozen(Tape& tape, Var images_bchw) const;

    /// Value-level forward over a batch of H x W x 3 images in [0,1].
    /// Throws on non-finite or out-of-range pixels before any computation.
    std::pair<std::vector<FeatureMap>, std::vector<Embedding>> forward(
        const std::vector<Tensor>& images_hwc) const;

    std::vector<Parameter*> parameters();
    const BackboneConfig& config() const { return cfg_; }

  private:
    template <typename ParamToVar>
    ForwardNodes build(Tape& tape, Var x, ParamToVar to_var) const;

    BackboneConfig cfg_;
    struct Stage {
        Parameter conv_w, conv_b, gamma, beta;
    };
    std::vector<Stage> stages_;
};

/// Batch of HWC images -> [B,3,H,W] tensor. Validates range and finiteness.
Tensor images_to_batch(const std::vector<Tensor>& images_hwc);

}  // namespace fire2::featnet
