#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ecg_data.hpp"
#include "raster.hpp"
#include "tensor.hpp"

namespace vizecg {

// Architecture hyperparameters. Both streams end at `channels` feature
// channels and are pooled to `tokens` positions before attention, which is
// what makes the cross-modal product in the attention modules well defined.
struct ModelConfig {
    int channels = 64;    // C, shared by both streams
    int tokens = 16;      // L
    int head_hidden = 64; // MLP hidden width
    int classes = 6;
    int image_h = 192;
    int image_w = 256;

    // 4-stage residual extractors, one block per stage.
    std::array<int, 4> widths = {16, 32, 64, 64};
    int sig_stem_kernel = 9, sig_stem_stride = 8, sig_block_kernel = 5;
    std::array<int, 3> sig_trans_strides = {4, 4, 2};
    int img_stem_kernel = 9, img_stem_stride = 8, img_block_kernel = 3;
    std::array<int, 3> img_trans_strides = {2, 2, 1};

    bool enable_cmam = true;
    bool enable_smam = true;
    // Eq-faithful attention has no 1/sqrt(d) factor; optional and off by default.
    bool attention_scale = false;
    uint64_t init_seed = 42;

    void validate() const;
    // Minimum image edge sizes accepted by the image extractor.
    int min_image_h() const;
    int min_image_w() const;

    // Small configuration for end-to-end gradient checking.
    static ModelConfig tiny();
};

struct AttentionParams {
    TensorPtr w_q, w_k, w_v; // [C x d] each, d = C
};

struct ConvBlockParams {
    TensorPtr conv1_w, norm1_gain, norm1_bias;
    TensorPtr conv2_w, norm2_gain, norm2_bias;
};

struct ExtractorParams {
    TensorPtr stem_w, stem_gain, stem_bias;
    std::array<TensorPtr, 3> trans_w, trans_gain, trans_bias;
    std::array<ConvBlockParams, 4> blocks;
};

struct HeadParams {
    TensorPtr w1, b1, w2, b2;
};

// Attention matrices recorded during a forward pass (each row-stochastic).
struct ForwardTrace {
    std::vector<TensorPtr> attention;
};

struct TrainForward {
    TensorPtr p_signal; // [classes]
    TensorPtr p_image;  // [classes]
};

class ModelState {
public:
    explicit ModelState(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    void set_ablation(bool enable_cmam, bool enable_smam) {
        cfg_.enable_cmam = enable_cmam;
        cfg_.enable_smam = enable_smam;
    }

    // All learnable tensors in the fixed serialization order: signal
    // extractor, image extractor, CMAM (signal<-image), CMAM (image<-signal),
    // SMAM signal, SMAM image, signal head, image head.
    std::vector<TensorPtr> parameters() const;
    int64_t parameter_count() const;

    // Deep copy (independent parameter storage, same values).
    ModelState clone() const;

    // Shared-parameter per-lead extraction, averaged, tokenized to [L x C].
    // Expects a detrended 12-lead record.
    TensorPtr signal_stream_forward(Graph& g, const EcgRecord& record) const;
    // 2-D extraction + tokenization to [L x C].
    TensorPtr image_stream_forward(Graph& g, const EcgImage& image) const;

    // Both-stream training pass: extractors -> CMAM both directions ->
    // SMAM per stream -> heads.
    TrainForward forward_train(Graph& g, const EcgRecord& record, const EcgImage& image,
                               ForwardTrace* trace = nullptr) const;
    // Image-only inference: no signal argument exists; CMAM is bypassed as
    // identity, SMAM and head run unchanged.
    TensorPtr forward_infer(Graph& g, const EcgImage& image, ForwardTrace* trace = nullptr) const;

private:
    friend ModelState load_model(const std::string& path);

    ModelConfig cfg_;
    ExtractorParams sig_, img_;
    AttentionParams cmam_sig_from_img_, cmam_img_from_sig_;
    AttentionParams smam_sig_, smam_img_;
    HeadParams head_sig_, head_img_;
};

// Attention primitives (exposed for direct testing).
// CMAM per Eq.-style cross attention: queries/keys from z_attn, values from
// z_value; both [L x C] with equal L and C.
TensorPtr cmam_forward(Graph& g, const TensorPtr& z_value, const TensorPtr& z_attn,
                       const AttentionParams& params, bool scale = false,
                       ForwardTrace* trace = nullptr);
// Self attention within one stream.
TensorPtr smam_forward(Graph& g, const TensorPtr& z, const AttentionParams& params,
                       bool scale = false, ForwardTrace* trace = nullptr);
// GAP + (linear -> relu -> linear) -> sigmoid.
TensorPtr head_forward(Graph& g, const TensorPtr& z_hat, const HeadParams& head, int classes);

// Versioned binary checkpoint: magic "VZCK", u32 version, config block,
// then parameters as little-endian f64 in the documented order.
void save_model(const ModelState& state, const std::string& path);
ModelState load_model(const std::string& path);

} // namespace vizecg
