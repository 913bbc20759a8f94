#include "lungquant/unet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lungquant/errors.hpp"

namespace lungquant::unet {

using nn::Tensor;

void UNetConfig::validate() const {
    if (depth < 2) throw Error("UNetConfig: depth must be >= 2");
    if (convs_per_block < 1) throw Error("UNetConfig: convs_per_block must be >= 1");
    if (base_channels < 1) throw Error("UNetConfig: base_channels must be >= 1");
    if (in_channels < 1) throw Error("UNetConfig: in_channels must be >= 1");
    if (out_classes < 2) throw Error("UNetConfig: out_classes must be >= 2");
    if (input_dims.x < 1 || input_dims.y < 1 || input_dims.z < 1)
        throw Error("UNetConfig: input_dims must be >= 1, got " + input_dims.str());
    if (depth > 16) throw Error("UNetConfig: depth too large");
}

namespace detail {

Tensor ConvBlock::forward(const Tensor& t, bool retain) {
    return relu.forward(norm.forward(conv.forward(t, retain), retain), retain);
}

Tensor ConvBlock::backward(const Tensor& g) {
    return conv.backward(norm.backward(relu.backward(g)));
}

void ConvBlock::collect(const std::string& prefix, std::vector<nn::ParamView>& out) {
    conv.collect_params(prefix + ".conv", out);
    norm.collect_params(prefix + ".norm", out);
}

Tensor DeconvBlock::forward(const Tensor& t, bool retain) {
    return relu.forward(norm.forward(deconv.forward(t, retain), retain), retain);
}

Tensor DeconvBlock::backward(const Tensor& g) {
    return deconv.backward(norm.backward(relu.backward(g)));
}

void DeconvBlock::collect(const std::string& prefix, std::vector<nn::ParamView>& out) {
    deconv.collect_params(prefix + ".deconv", out);
    norm.collect_params(prefix + ".norm", out);
}

ResidualStage::ResidualStage(int channels, int n_convs) {
    convs.reserve(static_cast<std::size_t>(std::max(0, n_convs)));
    for (int i = 0; i < n_convs; ++i) convs.emplace_back(channels, channels, 3, 1);
}

Tensor ResidualStage::forward(const Tensor& t, bool retain) {
    if (convs.empty()) return t;
    Tensor out = t;
    for (auto& c : convs) out = c.forward(out, retain);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += t.v[i];
    return out;
}

Tensor ResidualStage::backward(const Tensor& g) {
    if (convs.empty()) return g;
    Tensor gi = g;
    for (auto it = convs.rbegin(); it != convs.rend(); ++it) gi = it->backward(gi);
    for (std::size_t i = 0; i < gi.size(); ++i) gi.v[i] += g.v[i];
    return gi;
}

void ResidualStage::init(Rng& rng) {
    for (auto& c : convs) c.init(rng);
}

void ResidualStage::zero_grad() {
    for (auto& c : convs) c.zero_grad();
}

void ResidualStage::collect(const std::string& prefix, std::vector<nn::ParamView>& out) {
    for (std::size_t i = 0; i < convs.size(); ++i)
        convs[i].collect(prefix + ".c" + std::to_string(i), out);
}

} // namespace detail

UNetModel::UNetModel(UNetConfig cfg, std::uint64_t init_seed)
    : cfg_((cfg.validate(), cfg)),
      stem_(cfg.in_channels, cfg.base_channels, 3, 1),
      head_(cfg.base_channels, cfg.out_classes, 1, 1) {
    const int d = cfg_.depth;
    down_.reserve(d - 1);
    enc_.reserve(d);
    up_.reserve(d - 1);
    fuse_.reserve(d - 1);
    dec_.reserve(d - 1);
    for (int l = 0; l < d; ++l) {
        if (l > 0) down_.emplace_back(cfg_.channels_at(l - 1), cfg_.channels_at(l), 2, 2);
        enc_.emplace_back(cfg_.channels_at(l), cfg_.convs_per_block);
    }
    for (int l = 0; l < d - 1; ++l) {
        up_.emplace_back(cfg_.channels_at(l + 1), cfg_.channels_at(l));
        fuse_.emplace_back(2 * cfg_.channels_at(l), cfg_.channels_at(l), 3, 1);
        dec_.emplace_back(cfg_.channels_at(l), cfg_.convs_per_block - 1);
    }

    Rng rng(init_seed);
    stem_.init(rng);
    for (auto& b : down_) b.init(rng);
    for (auto& s : enc_) s.init(rng);
    for (auto& b : up_) b.init(rng);
    for (auto& b : fuse_) b.init(rng);
    for (auto& s : dec_) s.init(rng);
    head_.init_he(rng);
}

Tensor UNetModel::forward(const Tensor& input, bool retain) {
    if (input.c != cfg_.in_channels)
        throw Error("UNetModel::forward: expected " + std::to_string(cfg_.in_channels) +
                    " input channels, got " + std::to_string(input.c));
    if (input.x != cfg_.input_dims.x || input.y != cfg_.input_dims.y || input.z != cfg_.input_dims.z)
        throw Error("UNetModel::forward: input dims " +
                    Dims3{input.x, input.y, input.z}.str() + " do not match configured " +
                    cfg_.input_dims.str());

    const int d = cfg_.depth;
    const int m = 1 << (d - 1);
    const int in_dims[3] = {input.z, input.y, input.x};
    int pad_lo[3], pad_hi[3];
    for (int i = 0; i < 3; ++i) {
        const int padded = ((in_dims[i] + m - 1) / m) * m;
        pad_lo[i] = (padded - in_dims[i]) / 2;
        pad_hi[i] = padded - in_dims[i] - pad_lo[i];
    }
    if (retain) {
        std::copy(pad_lo, pad_lo + 3, pad_lo_);
        std::copy(pad_hi, pad_hi + 3, pad_hi_);
    }

    Tensor t = pad_spatial(input, pad_lo, pad_hi);
    t = stem_.forward(t, retain);

    std::vector<Tensor> skips;
    skips.reserve(d - 1);
    for (int l = 0; l < d; ++l) {
        if (l > 0) t = down_[l - 1].forward(t, retain);
        t = enc_[l].forward(t, retain);
        if (l < d - 1) skips.push_back(t);
    }
    for (int l = d - 2; l >= 0; --l) {
        t = up_[l].forward(t, retain);
        t = nn::concat_channels(t, skips[l]);
        skips[l].release();
        t = fuse_[l].forward(t, retain);
        t = dec_[l].forward(t, retain);
    }
    Tensor logits = head_.forward(t, retain);
    t.release();
    logits = nn::crop_spatial(logits, pad_lo, in_dims);
    Tensor probs = nn::softmax_channels(logits);
    if (retain) probs_cache_ = probs;
    return probs;
}

void UNetModel::backward(const Tensor& gprobs) {
    if (probs_cache_.size() == 0) throw Error("UNetModel::backward without retained forward");
    if (!gprobs.same_shape(probs_cache_)) throw Error("UNetModel::backward: gradient shape mismatch");

    Tensor g = nn::softmax_backward(probs_cache_, gprobs);
    probs_cache_.release();
    g = nn::pad_spatial(g, pad_lo_, pad_hi_);
    g = head_.backward(g);

    const int d = cfg_.depth;
    std::vector<Tensor> gskip(static_cast<std::size_t>(d - 1));
    for (int l = 0; l <= d - 2; ++l) {
        g = dec_[l].backward(g);
        g = fuse_[l].backward(g);
        Tensor gup;
        nn::split_channels(g, cfg_.channels_at(l), gup, gskip[l]);
        g = up_[l].backward(gup);
    }
    for (int l = d - 1; l >= 0; --l) {
        if (l < d - 1) {
            for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += gskip[l].v[i];
            gskip[l].release();
        }
        g = enc_[l].backward(g);
        if (l > 0) g = down_[l - 1].backward(g);
    }
    stem_.backward(g);
}

Grid3<float> UNetModel::predict_foreground(const Grid3<float>& normalized) {
    Tensor probs = forward(nn::tensor_from_grid(normalized), false);
    return nn::grid_from_channel(probs, 1);
}

BinaryMask3D UNetModel::predict_mask(const CtVolume& normalized) {
    Tensor probs = forward(nn::tensor_from_grid(normalized.voxels), false);
    BinaryMask3D mask;
    mask.voxels = Grid3<std::uint8_t>(normalized.dims());
    const std::size_t ns = probs.spatial();
    const float* bg = probs.chan(0);
    const float* fg = probs.chan(1);
    for (std::size_t i = 0; i < ns; ++i) mask.voxels[i] = fg[i] > bg[i] ? 1 : 0;
    mask.spacing = normalized.spacing;
    mask.origin = normalized.origin;
    return mask;
}

std::vector<nn::ParamView> UNetModel::params() {
    std::vector<nn::ParamView> out;
    stem_.collect("stem", out);
    for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect("down" + std::to_string(i), out);
    for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].collect("enc" + std::to_string(i), out);
    for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect("up" + std::to_string(i), out);
    for (std::size_t i = 0; i < fuse_.size(); ++i) fuse_[i].collect("fuse" + std::to_string(i), out);
    for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].collect("dec" + std::to_string(i), out);
    head_.collect_params("head", out);
    return out;
}

void UNetModel::zero_grad() {
    stem_.zero_grad();
    for (auto& b : down_) b.zero_grad();
    for (auto& s : enc_) s.zero_grad();
    for (auto& b : up_) b.zero_grad();
    for (auto& b : fuse_) b.zero_grad();
    for (auto& s : dec_) s.zero_grad();
    head_.zero_grad();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kBlobMagic[8] = {'L', 'Q', 'N', 'E', 'T', '1', '\0', '\0'};

nlohmann::json window_to_json(const preprocess::HuWindow& w) {
    return {{"lo", w.lo}, {"hi", w.hi}};
}

nlohmann::json config_to_json(const UNetConfig& c) {
    return {{"depth", c.depth},
            {"convs_per_block", c.convs_per_block},
            {"base_channels", c.base_channels},
            {"in_channels", c.in_channels},
            {"out_classes", c.out_classes},
            {"input_dims", {c.input_dims.x, c.input_dims.y, c.input_dims.z}}};
}

UNetConfig config_from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.depth = j.at("depth").get<int>();
    c.convs_per_block = j.at("convs_per_block").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_classes = j.at("out_classes").get<int>();
    const auto& d = j.at("input_dims");
    c.input_dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    c.validate();
    return c;
}

} // namespace

void save_checkpoint(UNetModel& model, const CheckpointInfo& info, const std::string& path) {
    auto params = model.params();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open checkpoint for writing: " + path);
    f.write(kBlobMagic, sizeof(kBlobMagic));
    const std::uint32_t n = static_cast<std::uint32_t>(params.size());
    f.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (const auto& p : params) {
        const std::uint16_t name_len = static_cast<std::uint16_t>(p.name.size());
        f.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
        f.write(p.name.data(), name_len);
        const std::uint64_t count = p.n;
        f.write(reinterpret_cast<const char*>(&count), sizeof(count));
        f.write(reinterpret_cast<const char*>(p.value), static_cast<std::streamsize>(p.n * sizeof(float)));
    }
    if (!f) throw Error("checkpoint write failed: " + path);
    f.close();

    nlohmann::json j;
    j["format_version"] = 1;
    j["unet_config"] = config_to_json(info.config);
    j["hu_window"] = window_to_json(info.window);
    j["metrics"] = info.metrics;
    j["notes"] = info.notes;
    std::ofstream sf(path + ".json", std::ios::trunc);
    if (!sf) throw Error("cannot open checkpoint sidecar for writing: " + path + ".json");
    sf << j.dump(2) << "\n";
    if (!sf) throw Error("sidecar write failed: " + path + ".json");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream sf(path + ".json");
    if (!sf) throw ParseError("missing checkpoint sidecar: " + path + ".json");
    nlohmann::json j;
    try {
        sf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("invalid checkpoint sidecar " + path + ".json: " + e.what());
    }

    CheckpointInfo info;
    try {
        info.config = config_from_json(j.at("unet_config"));
        info.window.lo = j.at("hu_window").at("lo").get<double>();
        info.window.hi = j.at("hu_window").at("hi").get<double>();
        if (j.contains("metrics")) info.metrics = j.at("metrics").get<std::map<std::string, double>>();
        if (j.contains("notes")) info.notes = j.at("notes").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("invalid checkpoint sidecar fields in " + path + ".json: " + e.what());
    }

    auto model = std::make_unique<UNetModel>(info.config, 0);
    auto params = model->params();

    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kBlobMagic, sizeof(kBlobMagic)) != 0)
        throw ParseError("bad checkpoint magic: " + path);
    std::uint32_t n = 0;
    f.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!f || n != params.size())
        throw ParseError("checkpoint parameter count does not match the configured architecture");
    for (auto& p : params) {
        std::uint16_t name_len = 0;
        f.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        std::uint64_t count = 0;
        f.read(reinterpret_cast<char*>(&count), sizeof(count));
        if (!f || name != p.name || count != p.n)
            throw ParseError("checkpoint array mismatch at '" + name + "' (expected '" + p.name + "')");
        f.read(reinterpret_cast<char*>(p.value), static_cast<std::streamsize>(count * sizeof(float)));
        if (!f) throw ParseError("truncated checkpoint: " + path);
    }
    return {std::move(model), std::move(info)};
}

// ---------------------------------------------------------------------------
// Metrics and losses

double dice_metric(const BinaryMask3D& m_true, const BinaryMask3D& m_pred) {
    if (!m_true.voxels.same_dims(m_pred.voxels))
        throw Error("dice_metric: mask dims mismatch (" + m_true.dims().str() + " vs " +
                    m_pred.dims().str() + ")");
    std::size_t inter = 0, a = 0, b = 0;
    const auto& t = m_true.voxels.vec();
    const auto& p = m_pred.voxels.vec();
    for (std::size_t i = 0; i < t.size(); ++i) {
        a += t[i];
        b += p[i];
        inter += static_cast<std::size_t>(t[i] & p[i]);
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

ClassWeights compute_class_weights(const std::vector<const BinaryMask3D*>& masks) {
    if (masks.empty()) throw Error("compute_class_weights: empty training set");
    double fg = 0.0, bg = 0.0;
    for (const auto* m : masks) {
        const std::size_t f = m->foreground_count();
        fg += static_cast<double>(f);
        bg += static_cast<double>(m->voxels.size() - f);
    }
    ClassWeights w;
    w.f_foreground = fg / static_cast<double>(masks.size());
    w.f_background = bg / static_cast<double>(masks.size());
    if (w.f_foreground <= 0.0)
        throw Error("compute_class_weights: training set has no foreground voxels");
    if (w.f_background <= 0.0)
        throw Error("compute_class_weights: training set has no background voxels");
    w.w0 = (w.f_background + w.f_foreground) / 2.0;
    w.w_background = w.w0 / w.f_background;
    w.w_foreground = w.w0 / w.f_foreground;
    return w;
}

ClassWeights compute_class_weights(const std::vector<BinaryMask3D>& masks) {
    std::vector<const BinaryMask3D*> ptrs;
    ptrs.reserve(masks.size());
    for (const auto& m : masks) ptrs.push_back(&m);
    return compute_class_weights(ptrs);
}

namespace {

constexpr double kProbFloor = 1e-7;

void check_loss_dims(const Grid3<float>& p, const BinaryMask3D& m, const char* who) {
    if (!(p.dims() == m.dims()))
        throw Error(std::string(who) + ": field dims " + p.dims().str() +
                    " do not match mask dims " + m.dims().str());
}

struct DiceTerms {
    double inter; // sum p * m
    double denom; // sum p + sum m
};

DiceTerms dice_terms(const Grid3<float>& p, const BinaryMask3D& m) {
    double sp = 0.0, sm = 0.0, si = 0.0;
    const auto& pv = p.vec();
    const auto& mv = m.voxels.vec();
    for (std::size_t i = 0; i < pv.size(); ++i) {
        sp += pv[i];
        sm += mv[i];
        if (mv[i]) si += pv[i];
    }
    return {si, sp + sm};
}

} // namespace

double dice_loss(const Grid3<float>& p_fg, const BinaryMask3D& m_true) {
    check_loss_dims(p_fg, m_true, "dice_loss");
    const DiceTerms t = dice_terms(p_fg, m_true);
    if (t.denom == 0.0) return 0.0; // both-empty convention: Dice = 1
    return 1.0 - 2.0 * t.inter / t.denom;
}

LossValueGrad dice_loss_grad(const Grid3<float>& p_fg, const BinaryMask3D& m_true) {
    check_loss_dims(p_fg, m_true, "dice_loss");
    const DiceTerms t = dice_terms(p_fg, m_true);
    LossValueGrad out;
    out.grad = Grid3<float>(p_fg.dims());
    if (t.denom == 0.0) {
        out.value = 0.0;
        return out;
    }
    out.value = 1.0 - 2.0 * t.inter / t.denom;
    const double d2 = t.denom * t.denom;
    const auto& mv = m_true.voxels.vec();
    for (std::size_t i = 0; i < out.grad.size(); ++i)
        out.grad[i] = static_cast<float>((2.0 * t.inter - 2.0 * mv[i] * t.denom) / d2);
    return out;
}

double weighted_cross_entropy(const Grid3<float>& p_fg, const BinaryMask3D& m_true,
                              const ClassWeights& weights) {
    check_loss_dims(p_fg, m_true, "weighted_cross_entropy");
    const auto& pv = p_fg.vec();
    const auto& mv = m_true.voxels.vec();
    double sum = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double p_true = mv[i] ? pv[i] : 1.0 - pv[i];
        const double w = mv[i] ? weights.w_foreground : weights.w_background;
        sum += -w * std::log(std::max(p_true, kProbFloor));
    }
    return sum / static_cast<double>(pv.size());
}

LossValueGrad weighted_cross_entropy_grad(const Grid3<float>& p_fg, const BinaryMask3D& m_true,
                                          const ClassWeights& weights) {
    check_loss_dims(p_fg, m_true, "weighted_cross_entropy");
    const auto& pv = p_fg.vec();
    const auto& mv = m_true.voxels.vec();
    const double inv_n = 1.0 / static_cast<double>(pv.size());
    LossValueGrad out;
    out.grad = Grid3<float>(p_fg.dims());
    double sum = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double p_true = mv[i] ? pv[i] : 1.0 - pv[i];
        const double w = mv[i] ? weights.w_foreground : weights.w_background;
        sum += -w * std::log(std::max(p_true, kProbFloor));
        if (p_true > kProbFloor) {
            const double d = w / p_true * inv_n; // d(-log p_true)/dp_true scaled
            out.grad[i] = static_cast<float>(mv[i] ? -d : d);
        }
    }
    out.value = sum * inv_n;
    return out;
}

double combined_loss(const Grid3<float>& p_fg, const BinaryMask3D& m_true,
                     const ClassWeights& weights) {
    return dice_loss(p_fg, m_true) + weighted_cross_entropy(p_fg, m_true, weights);
}

LossValueGrad combined_loss_grad(const Grid3<float>& p_fg, const BinaryMask3D& m_true,
                                 const ClassWeights& weights) {
    LossValueGrad d = dice_loss_grad(p_fg, m_true);
    const LossValueGrad c = weighted_cross_entropy_grad(p_fg, m_true, weights);
    d.value += c.value;
    for (std::size_t i = 0; i < d.grad.size(); ++i) d.grad[i] += c.grad[i];
    return d;
}

} // namespace lungquant::unet
