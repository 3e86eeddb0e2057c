#include "model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "rng.hpp"

namespace vizecg {

namespace {

constexpr uint32_t kCheckpointVersion = 1;

int conv_out(int in, int kernel, int stride) {
    const int padding = kernel / 2;
    return (in + 2 * padding - kernel) / stride + 1;
}

// Stage plan shared by both extractor dimensionalities.
struct StagePlan {
    int stem_kernel, stem_stride, block_kernel;
    std::array<int, 3> trans_strides;
    std::array<int, 4> widths;
};

StagePlan signal_plan(const ModelConfig& cfg) {
    return {cfg.sig_stem_kernel, cfg.sig_stem_stride, cfg.sig_block_kernel, cfg.sig_trans_strides,
            cfg.widths};
}

StagePlan image_plan(const ModelConfig& cfg) {
    return {cfg.img_stem_kernel, cfg.img_stem_stride, cfg.img_block_kernel, cfg.img_trans_strides,
            cfg.widths};
}

bool plan_fits(const StagePlan& plan, int extent) {
    int e = extent;
    if (plan.stem_kernel > e + 2 * (plan.stem_kernel / 2)) return false;
    e = conv_out(e, plan.stem_kernel, plan.stem_stride);
    if (e < 1) return false;
    for (int s = 0; s < 3; ++s) {
        e = conv_out(e, plan.block_kernel, plan.trans_strides[static_cast<size_t>(s)]);
        if (e < 1) return false;
    }
    return true;
}

int min_extent(const StagePlan& plan) {
    for (int e = 1; e < 1 << 16; ++e) {
        if (plan_fits(plan, e)) return e;
    }
    return 1 << 16;
}

void init_conv(Rng& rng, const TensorPtr& w, int fan_in) {
    const double bound = std::sqrt(3.0 / fan_in);
    for (auto& v : w->data) v = rng.uniform(-bound, bound);
}

ExtractorParams make_extractor(Rng& rng, const StagePlan& plan, bool two_d) {
    ExtractorParams p;
    const int k = plan.stem_kernel;
    const int bk = plan.block_kernel;
    auto conv_shape = [two_d](int c_out, int c_in, int kernel) {
        return two_d ? Shape{c_out, c_in, kernel, kernel} : Shape{c_out, c_in, kernel};
    };
    auto kernel_elems = [two_d](int kernel) { return two_d ? kernel * kernel : kernel; };

    p.stem_w = Tensor::create(conv_shape(plan.widths[0], 1, k), true);
    init_conv(rng, p.stem_w, 1 * kernel_elems(k));
    p.stem_gain = Tensor::create({plan.widths[0]}, true);
    std::fill(p.stem_gain->data.begin(), p.stem_gain->data.end(), 1.0);
    p.stem_bias = Tensor::create({plan.widths[0]}, true);

    for (int stage = 0; stage < 4; ++stage) {
        const int width = plan.widths[static_cast<size_t>(stage)];
        if (stage > 0) {
            const int prev = plan.widths[static_cast<size_t>(stage - 1)];
            auto& tw = p.trans_w[static_cast<size_t>(stage - 1)];
            tw = Tensor::create(conv_shape(width, prev, bk), true);
            init_conv(rng, tw, prev * kernel_elems(bk));
            auto& tg = p.trans_gain[static_cast<size_t>(stage - 1)];
            tg = Tensor::create({width}, true);
            std::fill(tg->data.begin(), tg->data.end(), 1.0);
            p.trans_bias[static_cast<size_t>(stage - 1)] = Tensor::create({width}, true);
        }
        auto& b = p.blocks[static_cast<size_t>(stage)];
        b.conv1_w = Tensor::create(conv_shape(width, width, bk), true);
        init_conv(rng, b.conv1_w, width * kernel_elems(bk));
        b.norm1_gain = Tensor::create({width}, true);
        std::fill(b.norm1_gain->data.begin(), b.norm1_gain->data.end(), 1.0);
        b.norm1_bias = Tensor::create({width}, true);
        b.conv2_w = Tensor::create(conv_shape(width, width, bk), true);
        init_conv(rng, b.conv2_w, width * kernel_elems(bk));
        b.norm2_gain = Tensor::create({width}, true);
        std::fill(b.norm2_gain->data.begin(), b.norm2_gain->data.end(), 1.0);
        b.norm2_bias = Tensor::create({width}, true);
    }
    return p;
}

AttentionParams make_attention(Rng& rng, int channels) {
    AttentionParams p;
    for (TensorPtr* w : {&p.w_q, &p.w_k, &p.w_v}) {
        *w = Tensor::create({channels, channels}, true);
        init_conv(rng, *w, channels);
    }
    return p;
}

HeadParams make_head(Rng& rng, int channels, int hidden, int classes) {
    HeadParams h;
    h.w1 = Tensor::create({channels, hidden}, true);
    init_conv(rng, h.w1, channels);
    h.b1 = Tensor::create({1, hidden}, true);
    h.w2 = Tensor::create({hidden, classes}, true);
    init_conv(rng, h.w2, hidden);
    h.b2 = Tensor::create({1, classes}, true);
    return h;
}

// [C x N] normalization helper for any spatial rank: callers reshape to 2-D.
TensorPtr norm_relu(Graph& g, const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias) {
    return g.relu(g.channel_norm(x, gain, bias));
}

TensorPtr residual_block_1d(Graph& g, const ConvBlockParams& b, int kernel, const TensorPtr& x) {
    const int pad = kernel / 2;
    auto y = g.conv1d(x, b.conv1_w, 1, pad);
    y = norm_relu(g, y, b.norm1_gain, b.norm1_bias);
    y = g.conv1d(y, b.conv2_w, 1, pad);
    y = g.channel_norm(y, b.norm2_gain, b.norm2_bias);
    return g.relu(g.add(y, x));
}

TensorPtr residual_block_2d(Graph& g, const ConvBlockParams& b, int kernel, const TensorPtr& x) {
    const int pad = kernel / 2;
    const int c = x->dim(0), h = x->dim(1), w = x->dim(2);
    auto n2d = [&g, h, w](const TensorPtr& t, const TensorPtr& gain, const TensorPtr& bias) {
        auto flat = g.reshape(t, {t->dim(0), h * w});
        return g.reshape(g.channel_norm(flat, gain, bias), {t->dim(0), h, w});
    };
    auto y = g.conv2d(x, b.conv1_w, 1, pad);
    y = g.relu(n2d(y, b.norm1_gain, b.norm1_bias));
    y = g.conv2d(y, b.conv2_w, 1, pad);
    y = n2d(y, b.norm2_gain, b.norm2_bias);
    (void)c;
    return g.relu(g.add(y, x));
}

} // namespace

void ModelConfig::validate() const {
    if (channels < 1 || tokens < 1 || head_hidden < 1 || classes < 1) {
        throw ContractError("model config: channels/tokens/head_hidden/classes must be positive");
    }
    if (widths[3] != channels) {
        throw ContractError("model config: widths[3] must equal channels (" +
                            std::to_string(widths[3]) + " vs " + std::to_string(channels) + ")");
    }
    for (int w : widths) {
        if (w < 1) throw ContractError("model config: stage widths must be positive");
    }
    auto check_plan = [](const StagePlan& p, const char* what) {
        if (p.stem_kernel < 1 || p.stem_stride < 1 || p.block_kernel < 1) {
            throw ContractError(std::string("model config: invalid ") + what + " extractor plan");
        }
        for (int s : p.trans_strides) {
            if (s < 1) throw ContractError(std::string("model config: invalid ") + what + " strides");
        }
    };
    check_plan(signal_plan(*this), "signal");
    check_plan(image_plan(*this), "image");
    if (image_h < min_image_h() || image_w < min_image_w()) {
        throw ContractError("model config: image " + std::to_string(image_w) + "x" +
                            std::to_string(image_h) + " below extractor minimum " +
                            std::to_string(min_image_w()) + "x" + std::to_string(min_image_h()));
    }
}

int ModelConfig::min_image_h() const { return min_extent(image_plan(*this)); }
int ModelConfig::min_image_w() const { return min_extent(image_plan(*this)); }

ModelConfig ModelConfig::tiny() {
    ModelConfig cfg;
    cfg.channels = 8;
    cfg.tokens = 4;
    cfg.head_hidden = 8;
    cfg.image_h = 16;
    cfg.image_w = 16;
    cfg.widths = {3, 4, 6, 8};
    cfg.sig_stem_kernel = 5;
    cfg.sig_stem_stride = 4;
    cfg.sig_block_kernel = 3;
    cfg.sig_trans_strides = {2, 2, 1};
    cfg.img_stem_kernel = 3;
    cfg.img_stem_stride = 2;
    cfg.img_block_kernel = 3;
    cfg.img_trans_strides = {2, 2, 1};
    return cfg;
}

ModelState::ModelState(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.init_seed, 0xd0de1));
    sig_ = make_extractor(rng, signal_plan(cfg_), false);
    img_ = make_extractor(rng, image_plan(cfg_), true);
    cmam_sig_from_img_ = make_attention(rng, cfg_.channels);
    cmam_img_from_sig_ = make_attention(rng, cfg_.channels);
    smam_sig_ = make_attention(rng, cfg_.channels);
    smam_img_ = make_attention(rng, cfg_.channels);
    head_sig_ = make_head(rng, cfg_.channels, cfg_.head_hidden, cfg_.classes);
    head_img_ = make_head(rng, cfg_.channels, cfg_.head_hidden, cfg_.classes);
}

std::vector<TensorPtr> ModelState::parameters() const {
    std::vector<TensorPtr> out;
    auto push_extractor = [&out](const ExtractorParams& p) {
        out.push_back(p.stem_w);
        out.push_back(p.stem_gain);
        out.push_back(p.stem_bias);
        for (int stage = 0; stage < 4; ++stage) {
            if (stage > 0) {
                out.push_back(p.trans_w[static_cast<size_t>(stage - 1)]);
                out.push_back(p.trans_gain[static_cast<size_t>(stage - 1)]);
                out.push_back(p.trans_bias[static_cast<size_t>(stage - 1)]);
            }
            const auto& b = p.blocks[static_cast<size_t>(stage)];
            out.push_back(b.conv1_w);
            out.push_back(b.norm1_gain);
            out.push_back(b.norm1_bias);
            out.push_back(b.conv2_w);
            out.push_back(b.norm2_gain);
            out.push_back(b.norm2_bias);
        }
    };
    auto push_attention = [&out](const AttentionParams& a) {
        out.push_back(a.w_q);
        out.push_back(a.w_k);
        out.push_back(a.w_v);
    };
    auto push_head = [&out](const HeadParams& h) {
        out.push_back(h.w1);
        out.push_back(h.b1);
        out.push_back(h.w2);
        out.push_back(h.b2);
    };
    push_extractor(sig_);
    push_extractor(img_);
    push_attention(cmam_sig_from_img_);
    push_attention(cmam_img_from_sig_);
    push_attention(smam_sig_);
    push_attention(smam_img_);
    push_head(head_sig_);
    push_head(head_img_);
    return out;
}

int64_t ModelState::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p->numel();
    return n;
}

ModelState ModelState::clone() const {
    auto src = parameters();
    // shallow-copy the structure, then swap in deep-copied tensors slot by slot
    ModelState fresh = *this;
    std::vector<TensorPtr*> slots;
    auto collect = [&slots](ModelState& m) {
        auto push_extractor = [&slots](ExtractorParams& p) {
            slots.push_back(&p.stem_w);
            slots.push_back(&p.stem_gain);
            slots.push_back(&p.stem_bias);
            for (int stage = 0; stage < 4; ++stage) {
                if (stage > 0) {
                    slots.push_back(&p.trans_w[static_cast<size_t>(stage - 1)]);
                    slots.push_back(&p.trans_gain[static_cast<size_t>(stage - 1)]);
                    slots.push_back(&p.trans_bias[static_cast<size_t>(stage - 1)]);
                }
                auto& b = p.blocks[static_cast<size_t>(stage)];
                slots.push_back(&b.conv1_w);
                slots.push_back(&b.norm1_gain);
                slots.push_back(&b.norm1_bias);
                slots.push_back(&b.conv2_w);
                slots.push_back(&b.norm2_gain);
                slots.push_back(&b.norm2_bias);
            }
        };
        auto push_attention = [&slots](AttentionParams& a) {
            slots.push_back(&a.w_q);
            slots.push_back(&a.w_k);
            slots.push_back(&a.w_v);
        };
        auto push_head = [&slots](HeadParams& h) {
            slots.push_back(&h.w1);
            slots.push_back(&h.b1);
            slots.push_back(&h.w2);
            slots.push_back(&h.b2);
        };
        push_extractor(m.sig_);
        push_extractor(m.img_);
        push_attention(m.cmam_sig_from_img_);
        push_attention(m.cmam_img_from_sig_);
        push_attention(m.smam_sig_);
        push_attention(m.smam_img_);
        push_head(m.head_sig_);
        push_head(m.head_img_);
    };
    collect(fresh);
    for (size_t i = 0; i < slots.size(); ++i) *slots[i] = src[i]->clone();
    return fresh;
}

TensorPtr ModelState::signal_stream_forward(Graph& g, const EcgRecord& record) const {
    if (record.samples.size() != static_cast<size_t>(kLeadCount) * record.t_len) {
        throw ContractError("signal_stream_forward: record must hold exactly 12 leads");
    }
    const StagePlan plan = signal_plan(cfg_);
    if (!plan_fits(plan, record.t_len)) {
        throw DimensionError("signal_stream_forward: record length " +
                             std::to_string(record.t_len) + " below extractor minimum " +
                             std::to_string(min_extent(plan)));
    }

    auto apply = [&](const TensorPtr& x) {
        auto y = g.conv1d(x, sig_.stem_w, plan.stem_stride, plan.stem_kernel / 2);
        y = norm_relu(g, y, sig_.stem_gain, sig_.stem_bias);
        y = residual_block_1d(g, sig_.blocks[0], plan.block_kernel, y);
        for (int s = 0; s < 3; ++s) {
            y = g.conv1d(y, sig_.trans_w[static_cast<size_t>(s)],
                         plan.trans_strides[static_cast<size_t>(s)], plan.block_kernel / 2);
            y = norm_relu(g, y, sig_.trans_gain[static_cast<size_t>(s)],
                          sig_.trans_bias[static_cast<size_t>(s)]);
            y = residual_block_1d(g, sig_.blocks[static_cast<size_t>(s + 1)], plan.block_kernel, y);
        }
        return y; // [C x T']
    };

    // One shared extractor applied to every lead, outputs averaged.
    TensorPtr sum;
    for (int l = 0; l < kLeadCount; ++l) {
        std::vector<double> lead(record.lead(l), record.lead(l) + record.t_len);
        auto x = g.constant({1, record.t_len}, std::move(lead));
        auto f = apply(x);
        sum = sum ? g.add(sum, f) : f;
    }
    auto z_avg = g.scale(sum, 1.0 / kLeadCount);
    auto tokens = g.avg_pool_cols(z_avg, cfg_.tokens); // [C x L]
    return g.transpose2d(tokens);                      // [L x C]
}

TensorPtr ModelState::image_stream_forward(Graph& g, const EcgImage& image) const {
    const StagePlan plan = image_plan(cfg_);
    if (!plan_fits(plan, image.height) || !plan_fits(plan, image.width)) {
        const int m = min_extent(plan);
        throw DimensionError("image_stream_forward: image " + std::to_string(image.width) + "x" +
                             std::to_string(image.height) + " below extractor minimum " +
                             std::to_string(m) + "x" + std::to_string(m));
    }

    auto x = g.constant({1, image.height, image.width}, image.pixels);
    auto y = g.conv2d(x, img_.stem_w, plan.stem_stride, plan.stem_kernel / 2);
    {
        auto flat = g.reshape(y, {y->dim(0), y->dim(1) * y->dim(2)});
        flat = norm_relu(g, flat, img_.stem_gain, img_.stem_bias);
        y = g.reshape(flat, y->shape);
    }
    y = residual_block_2d(g, img_.blocks[0], plan.block_kernel, y);
    for (int s = 0; s < 3; ++s) {
        y = g.conv2d(y, img_.trans_w[static_cast<size_t>(s)],
                     plan.trans_strides[static_cast<size_t>(s)], plan.block_kernel / 2);
        auto flat = g.reshape(y, {y->dim(0), y->dim(1) * y->dim(2)});
        flat = norm_relu(g, flat, img_.trans_gain[static_cast<size_t>(s)],
                         img_.trans_bias[static_cast<size_t>(s)]);
        y = g.reshape(flat, y->shape);
        y = residual_block_2d(g, img_.blocks[static_cast<size_t>(s + 1)], plan.block_kernel, y);
    }
    auto grid = g.reshape(y, {y->dim(0), y->dim(1) * y->dim(2)}); // [C x H'W']
    auto tokens = g.avg_pool_cols(grid, cfg_.tokens);             // [C x L]
    return g.transpose2d(tokens);                                 // [L x C]
}

TensorPtr cmam_forward(Graph& g, const TensorPtr& z_value, const TensorPtr& z_attn,
                       const AttentionParams& params, bool scale, ForwardTrace* trace) {
    if (z_value->shape != z_attn->shape) {
        throw ContractError("cmam_forward: streams must share token count and channels, got " +
                            shape_str(z_value->shape) + " vs " + shape_str(z_attn->shape));
    }
    auto q = g.matmul(z_attn, params.w_q);
    auto k = g.matmul(z_attn, params.w_k);
    auto v = g.matmul(z_value, params.w_v);
    auto scores = g.matmul(q, g.transpose2d(k));
    if (scale) scores = g.scale(scores, 1.0 / std::sqrt(static_cast<double>(params.w_q->dim(1))));
    auto attn = g.softmax_rows(scores);
    if (trace) trace->attention.push_back(attn);
    return g.matmul(attn, v);
}

TensorPtr smam_forward(Graph& g, const TensorPtr& z, const AttentionParams& params, bool scale,
                       ForwardTrace* trace) {
    return cmam_forward(g, z, z, params, scale, trace);
}

TensorPtr head_forward(Graph& g, const TensorPtr& z_hat, const HeadParams& head, int classes) {
    auto pooled = g.global_avg_pool(g.transpose2d(z_hat)); // [C]
    auto h = g.reshape(pooled, {1, pooled->dim(0)});
    h = g.relu(g.add(g.matmul(h, head.w1), head.b1));
    auto logits = g.add(g.matmul(h, head.w2), head.b2);
    return g.reshape(g.sigmoid(logits), {classes});
}

TrainForward ModelState::forward_train(Graph& g, const EcgRecord& record, const EcgImage& image,
                                       ForwardTrace* trace) const {
    auto z_sig = signal_stream_forward(g, record);
    auto z_img = image_stream_forward(g, image);

    TensorPtr zbar_sig = z_sig, zbar_img = z_img;
    if (cfg_.enable_cmam) {
        zbar_sig = cmam_forward(g, z_sig, z_img, cmam_sig_from_img_, cfg_.attention_scale, trace);
        zbar_img = cmam_forward(g, z_img, z_sig, cmam_img_from_sig_, cfg_.attention_scale, trace);
    }
    TensorPtr zhat_sig = zbar_sig, zhat_img = zbar_img;
    if (cfg_.enable_smam) {
        zhat_sig = smam_forward(g, zbar_sig, smam_sig_, cfg_.attention_scale, trace);
        zhat_img = smam_forward(g, zbar_img, smam_img_, cfg_.attention_scale, trace);
    }
    TrainForward out;
    out.p_signal = head_forward(g, zhat_sig, head_sig_, cfg_.classes);
    out.p_image = head_forward(g, zhat_img, head_img_, cfg_.classes);
    return out;
}

TensorPtr ModelState::forward_infer(Graph& g, const EcgImage& image, ForwardTrace* trace) const {
    auto z_img = image_stream_forward(g, image);
    // CMAM needs the absent signal modality; bypassed as identity here.
    TensorPtr zhat_img = z_img;
    if (cfg_.enable_smam) {
        zhat_img = smam_forward(g, z_img, smam_img_, cfg_.attention_scale, trace);
    }
    return head_forward(g, zhat_img, head_img_, cfg_.classes);
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32_ck(std::ifstream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw FormatError(std::string("checkpoint: truncated ") + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t read_u64_ck(std::ifstream& in, const char* what) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw FormatError(std::string("checkpoint: truncated ") + what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

std::vector<int32_t> config_fields(const ModelConfig& c) {
    std::vector<int32_t> f = {c.channels,       c.tokens,          c.head_hidden,
                              c.classes,        c.image_h,         c.image_w,
                              c.widths[0],      c.widths[1],       c.widths[2],
                              c.widths[3],      c.sig_stem_kernel, c.sig_stem_stride,
                              c.sig_block_kernel};
    for (int s : c.sig_trans_strides) f.push_back(s);
    f.push_back(c.img_stem_kernel);
    f.push_back(c.img_stem_stride);
    f.push_back(c.img_block_kernel);
    for (int s : c.img_trans_strides) f.push_back(s);
    f.push_back(c.enable_cmam ? 1 : 0);
    f.push_back(c.enable_smam ? 1 : 0);
    f.push_back(c.attention_scale ? 1 : 0);
    return f;
}

void apply_config_fields(ModelConfig& c, const std::vector<int32_t>& f) {
    size_t i = 0;
    c.channels = f[i++];
    c.tokens = f[i++];
    c.head_hidden = f[i++];
    c.classes = f[i++];
    c.image_h = f[i++];
    c.image_w = f[i++];
    for (auto& w : c.widths) w = f[i++];
    c.sig_stem_kernel = f[i++];
    c.sig_stem_stride = f[i++];
    c.sig_block_kernel = f[i++];
    for (auto& s : c.sig_trans_strides) s = f[i++];
    c.img_stem_kernel = f[i++];
    c.img_stem_stride = f[i++];
    c.img_block_kernel = f[i++];
    for (auto& s : c.img_trans_strides) s = f[i++];
    c.enable_cmam = f[i++] != 0;
    c.enable_smam = f[i++] != 0;
    c.attention_scale = f[i++] != 0;
}

} // namespace

void save_model(const ModelState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write("VZCK", 4);
    write_u32(out, kCheckpointVersion);
    const auto fields = config_fields(state.config());
    write_u32(out, static_cast<uint32_t>(fields.size()));
    for (int32_t f : fields) write_u32(out, static_cast<uint32_t>(f));
    write_u64(out, state.config().init_seed);
    const auto params = state.parameters();
    uint64_t total = 0;
    for (const auto& p : params) total += static_cast<uint64_t>(p->numel());
    write_u64(out, total);
    for (const auto& p : params) {
        out.write(reinterpret_cast<const char*>(p->data.data()),
                  static_cast<std::streamsize>(p->data.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + path);
}

ModelState load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "VZCK", 4) != 0) {
        throw FormatError("checkpoint: bad magic (expected \"VZCK\")");
    }
    const uint32_t version = read_u32_ck(in, "version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    const uint32_t n_fields = read_u32_ck(in, "config size");
    const auto expected_fields = config_fields(ModelConfig{});
    if (n_fields != expected_fields.size()) {
        throw FormatError("checkpoint: config block has " + std::to_string(n_fields) +
                          " fields, this build expects " + std::to_string(expected_fields.size()));
    }
    std::vector<int32_t> fields(n_fields);
    for (auto& f : fields) f = static_cast<int32_t>(read_u32_ck(in, "config field"));
    ModelConfig cfg;
    apply_config_fields(cfg, fields);
    cfg.init_seed = read_u64_ck(in, "init seed");
    try {
        cfg.validate();
    } catch (const ContractError& e) {
        throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
    }

    ModelState state(cfg);
    const uint64_t total = read_u64_ck(in, "parameter count");
    if (total != static_cast<uint64_t>(state.parameter_count())) {
        throw FormatError("checkpoint: parameter count " + std::to_string(total) +
                          " does not match architecture (" +
                          std::to_string(state.parameter_count()) + " expected)");
    }
    for (const auto& p : state.parameters()) {
        in.read(reinterpret_cast<char*>(p->data.data()),
                static_cast<std::streamsize>(p->data.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(p->data.size() * sizeof(double))) {
            throw FormatError("checkpoint: truncated parameter payload");
        }
    }
    return state;
}

} // namespace vizecg
