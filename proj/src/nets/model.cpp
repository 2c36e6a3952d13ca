#include "eitphys/nets/model.hpp"

#include <cmath>

#include "eitphys/rng.hpp"

namespace eitphys::nets {

using ad::TensorPtr;

namespace {

template <typename T>
TensorPtr<T> uniform_init(Rng& rng, std::vector<int64_t> shape, double bound) {
    auto t = ad::make_tensor<T>(std::move(shape), true);
    for (auto& v : t->value) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(Rng::derive(seed, 0x4E7));

    auto reg = [&](const std::string& name, const TensorPtr<T>& p) {
        params_.emplace_back(name, p);
    };
    auto make_conv = [&](const std::string& name, int in_ch, int out_ch, int k, int stride,
                         int padding, bool counted) {
        Conv2dLayer<T> layer;
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * k * k);
        layer.w = uniform_init<T>(rng, {out_ch, in_ch, k, k}, bound);
        layer.b = ad::make_tensor<T>({out_ch}, true);
        layer.stride = stride;
        layer.padding = padding;
        reg(name + ".w", layer.w);
        reg(name + ".b", layer.b);
        if (counted) ++conv_count_;
        return layer;
    };
    auto make_bn = [&](const std::string& name, int ch) {
        BatchNormLayer<T> layer;
        layer.gamma = ad::full<T>({ch}, T(1), true);
        layer.beta = ad::make_tensor<T>({ch}, true);
        layer.running_mean.assign(static_cast<size_t>(ch), T(0));
        layer.running_var.assign(static_cast<size_t>(ch), T(1));
        reg(name + ".gamma", layer.gamma);
        reg(name + ".beta", layer.beta);
        return layer;
    };
    auto make_linear = [&](const std::string& name, int in_dim, int out_dim) {
        LinearLayer<T> layer;
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
        layer.w = uniform_init<T>(rng, {out_dim, in_dim}, bound);
        layer.b = ad::make_tensor<T>({out_dim}, true);
        reg(name + ".w", layer.w);
        reg(name + ".b", layer.b);
        return layer;
    };

    // Construction-time shape walk: every conv must produce an exact integer
    // spatial size and never collapse below 1x1.
    int spatial = cfg_.image_size;
    auto apply_conv = [&](int k, int stride, int padding, const std::string& where) {
        const int span = spatial + 2 * padding - k;
        if (span < 0 || span % stride != 0) {
            throw ConfigError("model config: " + where + " maps spatial size " +
                              std::to_string(spatial) + " to a non-integer output (k=" +
                              std::to_string(k) + ", stride=" + std::to_string(stride) + ")");
        }
        spatial = span / stride + 1;
        if (spatial < 1) {
            throw ConfigError("model config: spatial size collapsed below 1x1 at " + where);
        }
    };

    stem_ = make_conv("stem.conv", 1, cfg_.initial_features, 3, 1, 1, true);
    apply_conv(3, 1, 1, "stem");
    stem_bn_ = make_bn("stem.bn", cfg_.initial_features);

    int in_ch = cfg_.initial_features;
    for (int g = 0; g < cfg_.groups; ++g) {
        const int out_ch = cfg_.initial_features << g;
        for (int i = 0; i < cfg_.layers_per_group; ++i) {
            const bool down = g > 0 && i == 0;
            const int stride = down ? 2 : 1;
            const std::string base =
                "group" + std::to_string(g) + ".block" + std::to_string(i);
            ResBlock<T> block;
            block.conv1 = make_conv(base + ".conv1", in_ch, out_ch, down ? 2 : 3, stride,
                                    down ? 0 : 1, true);
            apply_conv(down ? 2 : 3, stride, down ? 0 : 1, base + ".conv1");
            block.bn1 = make_bn(base + ".bn1", out_ch);
            block.conv2 = make_conv(base + ".conv2", out_ch, out_ch, 3, 1, 1, true);
            apply_conv(3, 1, 1, base + ".conv2");
            block.bn2 = make_bn(base + ".bn2", out_ch);
            if (stride != 1 || in_ch != out_ch) {
                block.has_proj = true;
                block.proj = make_conv(base + ".proj", in_ch, out_ch, down ? 2 : 1, stride, 0,
                                       false);
                block.bnp = make_bn(base + ".bnp", out_ch);
            }
            blocks_.push_back(std::move(block));
            in_ch = out_ch;
        }
    }

    feat_proj_ = make_linear("feat_proj", in_ch, cfg_.intermed_dim);
    if (cfg_.variant == Variant::EitPlusPaw) {
        aux_ = make_linear("aux", 1, cfg_.aux_hidden);
    }

    const int d_in = cfg_.lstm_input_size();
    const int hidden = cfg_.lstm_hidden;
    auto make_lstm = [&](const std::string& name) {
        ad::LstmWeights<T> w;
        w.wx = uniform_init<T>(rng, {4 * hidden, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)));
        w.wh = uniform_init<T>(rng, {4 * hidden, hidden},
                               1.0 / std::sqrt(static_cast<double>(hidden)));
        w.bias = ad::make_tensor<T>({4 * hidden}, true);
        // Forget-gate bias starts at 1 so early training does not wash out state.
        for (int j = hidden; j < 2 * hidden; ++j) w.bias->value[static_cast<size_t>(j)] = T(1);
        reg(name + ".wx", w.wx);
        reg(name + ".wh", w.wh);
        reg(name + ".bias", w.bias);
        return w;
    };
    lstm_fwd_ = make_lstm("lstm.fwd");
    lstm_bwd_ = make_lstm("lstm.bwd");

    head_ = make_linear("head", 2 * hidden, cfg_.output_size());
}

template <typename T>
std::vector<std::pair<std::string, std::vector<T>*>> Model<T>::buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    auto add_bn = [&](const std::string& name, BatchNormLayer<T>& bn) {
        out.emplace_back(name + ".running_mean", &bn.running_mean);
        out.emplace_back(name + ".running_var", &bn.running_var);
    };
    add_bn("stem.bn", stem_bn_);
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const std::string base = "block" + std::to_string(i);
        add_bn(base + ".bn1", blocks_[i].bn1);
        add_bn(base + ".bn2", blocks_[i].bn2);
        if (blocks_[i].has_proj) add_bn(base + ".bnp", blocks_[i].bnp);
    }
    return out;
}

template <typename T>
TensorPtr<T> Model<T>::extract_features(Tape<T>* tape, const TensorPtr<T>& frames, bool training) {
    auto x = ad::conv2d(tape, frames, stem_.w, stem_.b, stem_.stride, stem_.padding);
    x = ad::batch_norm2d(tape, x, stem_bn_.gamma, stem_bn_.beta, stem_bn_.running_mean,
                         stem_bn_.running_var, training);
    x = ad::relu(tape, x);
    for (auto& block : blocks_) {
        auto main = ad::conv2d(tape, x, block.conv1.w, block.conv1.b, block.conv1.stride,
                               block.conv1.padding);
        main = ad::batch_norm2d(tape, main, block.bn1.gamma, block.bn1.beta,
                                block.bn1.running_mean, block.bn1.running_var, training);
        main = ad::relu(tape, main);
        main = ad::conv2d(tape, main, block.conv2.w, block.conv2.b, block.conv2.stride,
                          block.conv2.padding);
        main = ad::batch_norm2d(tape, main, block.bn2.gamma, block.bn2.beta,
                                block.bn2.running_mean, block.bn2.running_var, training);
        TensorPtr<T> skip = x;
        if (block.has_proj) {
            skip = ad::conv2d(tape, x, block.proj.w, block.proj.b, block.proj.stride,
                              block.proj.padding);
            skip = ad::batch_norm2d(tape, skip, block.bnp.gamma, block.bnp.beta,
                                    block.bnp.running_mean, block.bnp.running_var, training);
        }
        x = ad::relu(tape, ad::add(tape, main, skip));
    }
    x = ad::spatial_mean(tape, x);
    return ad::linear(tape, x, feat_proj_.w, feat_proj_.b);
}

template <typename T>
TensorPtr<T> Model<T>::forward(Tape<T>* tape, const FrameBatch<T>& batch, bool training) {
    const auto& eit = batch.eit;
    if (!eit || eit->rank() != 5 || eit->dim(2) != 1 || eit->dim(3) != cfg_.image_size ||
        eit->dim(4) != cfg_.image_size) {
        throw ShapeError("forward: eit must be [B,T,1," + std::to_string(cfg_.image_size) + "," +
                         std::to_string(cfg_.image_size) + "], got " +
                         (eit ? eit->shape_str() : std::string("null")));
    }
    const bool wants_aux = cfg_.variant == Variant::EitPlusPaw;
    if (wants_aux && !batch.aux_paw) {
        throw UsageError("forward: variant EitPlusPaw requires the aux airway-pressure input");
    }
    if (!wants_aux && batch.aux_paw) {
        throw UsageError("forward: aux airway-pressure input given but variant does not use it");
    }
    const int64_t b_sz = eit->dim(0), t_len = eit->dim(1);
    if (wants_aux && (batch.aux_paw->rank() != 3 || batch.aux_paw->dim(0) != b_sz ||
                      batch.aux_paw->dim(1) != t_len || batch.aux_paw->dim(2) != 1)) {
        throw ShapeError("forward: aux input must be [B,T,1], got " + batch.aux_paw->shape_str());
    }

    auto frames = ad::reshape(tape, eit, {b_sz * t_len, 1, cfg_.image_size, cfg_.image_size});
    auto feats = extract_features(tape, frames, training);
    auto seq = ad::reshape(tape, feats, {b_sz, t_len, cfg_.intermed_dim});
    if (wants_aux) {
        auto aux_h = ad::relu(tape, ad::linear(tape, batch.aux_paw, aux_.w, aux_.b));
        seq = ad::concat_last(tape, seq, aux_h);
    }

    std::vector<TensorPtr<T>> xs(static_cast<size_t>(t_len));
    for (int64_t t = 0; t < t_len; ++t) xs[static_cast<size_t>(t)] = ad::slice_time(tape, seq, t);

    const int64_t hidden = cfg_.lstm_hidden;
    std::vector<TensorPtr<T>> h_fwd(static_cast<size_t>(t_len)), h_bwd(static_cast<size_t>(t_len));
    {
        auto h = ad::make_tensor<T>({b_sz, hidden});
        auto c = ad::make_tensor<T>({b_sz, hidden});
        for (int64_t t = 0; t < t_len; ++t) {
            auto [hn, cn] = ad::lstm_step(tape, xs[static_cast<size_t>(t)], h, c, lstm_fwd_);
            h = hn;
            c = cn;
            h_fwd[static_cast<size_t>(t)] = hn;
        }
    }
    {
        auto h = ad::make_tensor<T>({b_sz, hidden});
        auto c = ad::make_tensor<T>({b_sz, hidden});
        for (int64_t t = t_len - 1; t >= 0; --t) {
            auto [hn, cn] = ad::lstm_step(tape, xs[static_cast<size_t>(t)], h, c, lstm_bwd_);
            h = hn;
            c = cn;
            h_bwd[static_cast<size_t>(t)] = hn;
        }
    }
    std::vector<TensorPtr<T>> joined(static_cast<size_t>(t_len));
    for (int64_t t = 0; t < t_len; ++t) {
        joined[static_cast<size_t>(t)] =
            ad::concat_last(tape, h_fwd[static_cast<size_t>(t)], h_bwd[static_cast<size_t>(t)]);
    }
    auto stacked = ad::stack_time(tape, joined);
    return ad::linear(tape, stacked, head_.w, head_.b);
}

template class Model<float>;
template class Model<double>;

}  // namespace eitphys::nets
