#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "eitphys/nets/checkpoint.hpp"
#include "eitphys/nets/model.hpp"
#include "eitphys/rng.hpp"
#include "testutil.hpp"

using namespace eitphys;
using namespace eitphys::nets;
using namespace eitphys::testutil;

namespace {

ModelConfig tiny_config(Variant variant = Variant::EitOnly, int image = 8) {
    ModelConfig cfg;
    cfg.groups = 1;
    cfg.layers_per_group = 1;
    cfg.initial_features = 2;
    cfg.intermed_dim = 4;
    cfg.lstm_hidden = 4;
    cfg.aux_hidden = 3;
    cfg.image_size = image;
    cfg.variant = variant;
    cfg.output_channels = {ChannelId::V};
    return cfg;
}

template <typename T>
ad::TensorPtr<T> random_eit(int64_t b, int64_t t, int64_t s, uint64_t seed) {
    auto x = ad::make_tensor<T>({b, t, 1, s, s});
    Rng rng(seed);
    for (auto& v : x->value) v = static_cast<T>(rng.uniform(-1.5, 1.5));
    return x;
}

}  // namespace

TEST_CASE("default configuration instantiates exactly 19 convolution layers") {
    ModelConfig cfg;
    cfg.output_channels = {ChannelId::V};
    CHECK(cfg.conv_layer_count() == 19);
    Model<float> model(cfg, 1);
    CHECK(model.conv_layer_count() == 19);
}

TEST_CASE("minimal configuration has 3 conv layers and runs forward") {
    auto cfg = tiny_config();
    CHECK(cfg.conv_layer_count() == 3);
    Model<float> model(cfg, 2);
    CHECK(model.conv_layer_count() == 3);
    FrameBatch<float> fb{random_eit<float>(1, 4, 8, 3), nullptr};
    auto y = model.forward(nullptr, fb, false);
    CHECK(y->shape == std::vector<int64_t>({1, 4, 1}));
}

TEST_CASE("variant 3 feeds the LSTM 32 + 32 features") {
    ModelConfig cfg;
    cfg.variant = Variant::EitPlusPaw;
    cfg.output_channels = {ChannelId::Ptp};
    CHECK(cfg.lstm_input_size() == 64);
    cfg.variant = Variant::EitOnly;
    CHECK(cfg.lstm_input_size() == 32);
}

TEST_CASE("forward output shape [2,128,1] with the default model") {
    ModelConfig cfg;
    cfg.output_channels = {ChannelId::V};
    Model<float> model(cfg, 5);
    FrameBatch<float> fb{random_eit<float>(2, 128, 32, 7), nullptr};
    auto y = model.forward(nullptr, fb, false);
    CHECK(y->shape == std::vector<int64_t>({2, 128, 1}));
}

TEST_CASE("joint-output variant predicts two channels per frame") {
    auto cfg = tiny_config();
    cfg.variant = Variant::EitJointOutputs;
    cfg.output_channels = {ChannelId::Ptp, ChannelId::Paw};
    Model<float> model(cfg, 6);
    FrameBatch<float> fb{random_eit<float>(3, 6, 8, 9), nullptr};
    auto y = model.forward(nullptr, fb, false);
    CHECK(y->shape == std::vector<int64_t>({3, 6, 2}));
}

TEST_CASE("aux input wiring is enforced") {
    auto cfg = tiny_config(Variant::EitPlusPaw);
    Model<float> model(cfg, 8);
    FrameBatch<float> no_aux{random_eit<float>(1, 4, 8, 1), nullptr};
    CHECK_THROWS_AS(model.forward(nullptr, no_aux, false), UsageError);

    auto aux = ad::make_tensor<float>({1, 4, 1});
    FrameBatch<float> with_aux{random_eit<float>(1, 4, 8, 1), aux};
    auto y = model.forward(nullptr, with_aux, false);
    CHECK(y->shape == std::vector<int64_t>({1, 4, 1}));

    auto cfg2 = tiny_config(Variant::EitOnly);
    Model<float> model2(cfg2, 8);
    CHECK_THROWS_AS(model2.forward(nullptr, with_aux, false), UsageError);
}

TEST_CASE("constant-zero frames produce finite outputs") {
    auto cfg = tiny_config();
    Model<float> model(cfg, 4);
    auto x = ad::make_tensor<float>({1, 5, 1, 8, 8});  // all zeros
    FrameBatch<float> fb{x, nullptr};
    for (bool training : {true, false}) {
        auto y = model.forward(nullptr, fb, training);
        for (float v : y->value) CHECK(std::isfinite(v));
    }
}

TEST_CASE("output shape [B,T,K] for any sequence length") {
    auto cfg = tiny_config();
    Model<float> model(cfg, 11);
    for (int64_t t : {1, 5, 33}) {
        FrameBatch<float> fb{random_eit<float>(2, t, 8, 100 + static_cast<uint64_t>(t)), nullptr};
        auto y = model.forward(nullptr, fb, false);
        CHECK(y->shape == std::vector<int64_t>({2, t, 1}));
    }
}

TEST_CASE("permuting the batch permutes the outputs identically") {
    auto cfg = tiny_config();
    Model<float> model(cfg, 13);
    auto x1 = random_eit<float>(1, 6, 8, 21);
    auto x2 = random_eit<float>(1, 6, 8, 22);
    auto pack = [&](const ad::TensorPtr<float>& a, const ad::TensorPtr<float>& b) {
        auto x = ad::make_tensor<float>({2, 6, 1, 8, 8});
        std::copy(a->value.begin(), a->value.end(), x->value.begin());
        std::copy(b->value.begin(), b->value.end(), x->value.begin() + a->numel());
        return x;
    };
    FrameBatch<float> ab{pack(x1, x2), nullptr};
    FrameBatch<float> ba{pack(x2, x1), nullptr};
    auto y_ab = model.forward(nullptr, ab, true);
    auto y_ba = model.forward(nullptr, ba, true);
    const auto half = static_cast<size_t>(y_ab->numel() / 2);
    for (size_t i = 0; i < half; ++i) {
        CHECK(y_ab->value[i] == y_ba->value[half + i]);
        CHECK(y_ab->value[half + i] == y_ba->value[i]);
    }
}

TEST_CASE("time reversal with tied directions reverses the output") {
    auto cfg = tiny_config();
    Model<double> model(cfg, 17);
    // tie backward LSTM to forward, and the two halves of the head
    model.lstm_backward().wx->value = model.lstm_forward().wx->value;
    model.lstm_backward().wh->value = model.lstm_forward().wh->value;
    model.lstm_backward().bias->value = model.lstm_forward().bias->value;
    auto& head = model.head();
    const int64_t h = cfg.lstm_hidden;
    for (int64_t n = 0; n < head.w->dim(0); ++n) {
        for (int64_t j = 0; j < h; ++j) {
            head.w->value[static_cast<size_t>(n * 2 * h + h + j)] =
                head.w->value[static_cast<size_t>(n * 2 * h + j)];
        }
    }
    const int64_t t_len = 7;
    auto x = random_eit<double>(1, t_len, 8, 33);
    auto x_rev = ad::make_tensor<double>(x->shape);
    const int64_t frame = 64;
    for (int64_t t = 0; t < t_len; ++t) {
        std::copy_n(x->data() + t * frame, frame, x_rev->data() + (t_len - 1 - t) * frame);
    }
    FrameBatch<double> fwd{x, nullptr}, rev{x_rev, nullptr};
    auto y = model.forward(nullptr, fwd, true);
    auto y_rev = model.forward(nullptr, rev, true);
    for (int64_t t = 0; t < t_len; ++t) {
        CHECK(y->value[static_cast<size_t>(t)] ==
              doctest::Approx(y_rev->value[static_cast<size_t>(t_len - 1 - t)]).epsilon(1e-9));
    }
}

TEST_CASE("end-to-end gradient check on the tiny configuration") {
    auto cfg = tiny_config();
    Model<double> model(cfg, 19);
    auto x = random_eit<double>(1, 5, 8, 55);
    FrameBatch<double> fb{x, nullptr};
    auto ref = model.forward(nullptr, fb, true);
    auto tgt = make_offset_target(ref, 77);
    auto fwd = [&](ad::Tape<double>* tape) {
        auto out = model.forward(tape, fb, true);
        return l1_to_target(tape, out, tgt);
    };
    auto res = grad_check(fwd, model.parameters(), 1e-4);
    CHECK_MESSAGE(res.max_rel < 1e-4, "worst ", res.worst, " rel ", res.max_rel);
}

TEST_CASE("end-to-end gradient check with the aux path") {
    auto cfg = tiny_config(Variant::EitPlusPaw);
    Model<double> model(cfg, 25);
    auto x = random_eit<double>(1, 4, 8, 66);
    auto aux = ad::make_tensor<double>({1, 4, 1});
    Rng rng(67);
    for (auto& v : aux->value) v = rng.uniform(0.3, 1.2);
    FrameBatch<double> fb{x, aux};
    auto ref = model.forward(nullptr, fb, true);
    auto tgt = make_offset_target(ref, 88);
    auto fwd = [&](ad::Tape<double>* tape) {
        return l1_to_target(tape, model.forward(tape, fb, true), tgt);
    };
    auto res = grad_check(fwd, model.parameters(), 1e-4);
    CHECK_MESSAGE(res.max_rel < 1e-4, "worst ", res.worst, " rel ", res.max_rel);
}

TEST_CASE("identical seeds give bit-identical models and outputs") {
    auto cfg = tiny_config();
    Model<float> a(cfg, 31), b(cfg, 31), c(cfg, 32);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters()[i].second->value == b.parameters()[i].second->value);
    }
    bool any_diff = false;
    for (size_t i = 0; i < a.parameters().size(); ++i) {
        any_diff |= a.parameters()[i].second->value != c.parameters()[i].second->value;
    }
    CHECK(any_diff);
    FrameBatch<float> fb{random_eit<float>(2, 5, 8, 44), nullptr};
    CHECK(a.forward(nullptr, fb, false)->value == b.forward(nullptr, fb, false)->value);
}

TEST_CASE("construction rejects impossible spatial reductions") {
    auto cfg = tiny_config();
    cfg.image_size = 9;  // odd: 2x2 stride-2 downsample cannot divide exactly
    cfg.groups = 2;
    CHECK_THROWS_AS(Model<float>(cfg, 1), ConfigError);

    auto deep = tiny_config();
    deep.image_size = 8;
    deep.groups = 6;  // 8 -> 4 -> 2 -> 1 -> collapse
    CHECK_THROWS_AS(Model<float>(deep, 1), ConfigError);

    auto bad = tiny_config();
    bad.output_channels = {};
    CHECK_THROWS_AS(Model<float>(bad, 1), ConfigError);
}

TEST_CASE("LSTM forget-gate bias starts at one") {
    auto cfg = tiny_config();
    Model<float> model(cfg, 3);
    const auto& bias = model.lstm_forward().bias->value;
    const int h = cfg.lstm_hidden;
    for (int j = 0; j < h; ++j) {
        CHECK(bias[static_cast<size_t>(j)] == 0.0f);
        CHECK(bias[static_cast<size_t>(h + j)] == 1.0f);
    }
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit-identically") {
    auto cfg = tiny_config(Variant::EitPlusPaw);
    cfg.output_channels = {ChannelId::Ptp};
    Model<float> model(cfg, 91);
    // push running stats away from the init so buffers matter
    auto x = random_eit<float>(2, 6, 8, 92);
    auto aux = ad::make_tensor<float>({2, 6, 1});
    for (auto& v : aux->value) v = 0.4f;
    FrameBatch<float> fb{x, aux};
    (void)model.forward(nullptr, fb, true);

    const std::string path = "test_tmp_ckpt.ckpt";
    std::vector<std::pair<std::string, std::vector<float>>> extra = {
        {"opt.m.head.w", {1.f, 2.f, 3.f}}};
    nlohmann::json meta;
    meta["epoch"] = 4;
    save_checkpoint(path, model, extra, meta);

    auto loaded = load_checkpoint(path);
    CHECK(loaded.meta.at("epoch") == 4);
    CHECK(loaded.extra.at("opt.m.head.w") == std::vector<float>({1.f, 2.f, 3.f}));
    CHECK(loaded.config.variant == Variant::EitPlusPaw);
    auto y0 = model.forward(nullptr, fb, false);
    auto y1 = loaded.model->forward(nullptr, fb, false);
    CHECK(y0->value == y1->value);
    std::filesystem::remove(path);
}
