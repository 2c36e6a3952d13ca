#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eitphys/rng.hpp"
#include "eitphys/sigproc/align.hpp"
#include "eitphys/sigproc/ops.hpp"
#include "eitphys/phantom/simulate.hpp"

using namespace eitphys;
using namespace eitphys::sigproc;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> sine(double freq, double rate, size_t n, double phase = 0.0) {
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        out[i] = std::sin(2.0 * kPi * freq * static_cast<double>(i) / rate + phase);
    }
    return out;
}

// Band-limited noise: a few incommensurate sines with random phases.
std::vector<double> smooth_noise(size_t n, uint64_t seed, double rate = 10.0) {
    Rng rng(seed);
    std::vector<double> out(n, 0.0);
    for (int h = 0; h < 6; ++h) {
        const double f = rng.uniform(0.1, 1.6);
        const double a = rng.uniform(0.3, 1.0);
        const double ph = rng.uniform(0, 2 * kPi);
        for (size_t i = 0; i < n; ++i) {
            out[i] += a * std::sin(2.0 * kPi * f * static_cast<double>(i) / rate + ph);
        }
    }
    return out;
}

// Slow noise (<= 0.35 Hz at 10 Hz) whose autocorrelation is unimodal over a
// +/-10 sample window: what the shifted-RMSE contract means by "smooth".
std::vector<double> slow_noise(size_t n, uint64_t seed, double rate = 10.0) {
    Rng rng(seed);
    std::vector<double> out(n, 0.0);
    for (int h = 0; h < 5; ++h) {
        const double f = rng.uniform(0.05, 0.35);
        const double a = rng.uniform(0.4, 1.0);
        const double ph = rng.uniform(0, 2 * kPi);
        for (size_t i = 0; i < n; ++i) {
            out[i] += a * std::sin(2.0 * kPi * f * static_cast<double>(i) / rate + ph);
        }
    }
    return out;
}

// Exhaustive enumeration of every monotone boundary-to-boundary path.
double dtw_path_oracle(const std::vector<double>& a, const std::vector<double>& b, size_t i,
                       size_t j) {
    const double c = std::abs(a[i] - b[j]);
    if (i == 0 && j == 0) return c;
    double best = std::numeric_limits<double>::infinity();
    if (i > 0) best = std::min(best, dtw_path_oracle(a, b, i - 1, j));
    if (j > 0) best = std::min(best, dtw_path_oracle(a, b, i, j - 1));
    if (i > 0 && j > 0) best = std::min(best, dtw_path_oracle(a, b, i - 1, j - 1));
    return c + best;
}

double dtw_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    return dtw_path_oracle(a, b, a.size() - 1, b.size() - 1);
}

std::vector<double> shift_with_wrap(const std::vector<double>& x, int k) {
    // delayed copy: out[i] = x[i-k], periodic extension at the edges
    const auto n = static_cast<int64_t>(x.size());
    std::vector<double> out(x.size());
    for (int64_t i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] = x[static_cast<size_t>(((i - k) % n + n) % n)];
    }
    return out;
}

}  // namespace

TEST_CASE("resample_10hz keeps a constant constant") {
    Channel ch;
    ch.rate = 100.0;
    ch.samples.assign(1000, 3.25);
    auto out = resample_10hz(ch);
    CHECK(out.rate == 10.0);
    CHECK(out.samples.size() == 100);
    for (double v : out.samples) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("resample_10hz reproduces a 1 Hz sine to 1e-2") {
    Channel ch;
    ch.rate = 100.0;
    ch.samples = sine(1.0, 100.0, 1000);
    auto out = resample_10hz(ch);
    double max_err = 0.0;
    for (size_t i = 0; i < out.samples.size(); ++i) {
        const double expect = std::sin(2.0 * kPi * 1.0 * static_cast<double>(i) / 10.0);
        max_err = std::max(max_err, std::abs(out.samples[i] - expect));
    }
    CHECK(max_err < 1e-2);
}

TEST_CASE("resample_10hz length contract: 1280 samples at 100 Hz -> 128") {
    Channel ch;
    ch.rate = 100.0;
    ch.samples = sine(0.5, 100.0, 1280);
    CHECK(resample_10hz(ch).samples.size() == 128);
}

TEST_CASE("resample_10hz suppresses out-of-band content") {
    // 8 Hz tone is above the 5 Hz cutoff and must be strongly attenuated.
    Channel ch;
    ch.rate = 100.0;
    ch.samples = sine(8.0, 100.0, 2000);
    auto out = resample_10hz(ch);
    double rms = 0.0;
    // interior only; the edge fallback is unfiltered by design
    for (size_t i = 10; i + 10 < out.samples.size(); ++i) rms += out.samples[i] * out.samples[i];
    rms = std::sqrt(rms / static_cast<double>(out.samples.size() - 20));
    CHECK(rms < 0.12);
}

TEST_CASE("resample_10hz rejects low rates and passes 10 Hz through") {
    Channel ch;
    ch.rate = 5.0;
    ch.samples.assign(100, 0.0);
    CHECK_THROWS_AS(resample_10hz(ch), UsageError);
    ch.rate = 10.0;
    ch.samples = sine(1.0, 10.0, 50);
    auto out = resample_10hz(ch);
    CHECK(out.samples == ch.samples);
}

TEST_CASE("standardize hand example and guards") {
    auto st = standardize(std::vector<double>{1, 2, 3});
    CHECK(st.mean == doctest::Approx(2.0));
    CHECK(st.y[0] == doctest::Approx(-1.224744871).epsilon(1e-8));
    CHECK(st.y[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(st.y[2] == doctest::Approx(1.224744871).epsilon(1e-8));
    CHECK_FALSE(st.degenerate);

    auto flat = standardize(std::vector<double>{5, 5, 5});
    CHECK(flat.degenerate);
    CHECK(flat.sd == doctest::Approx(1e-8));
    for (double v : flat.y) CHECK(v == 0.0);

    CHECK_THROWS_AS(standardize(std::vector<double>{}), UsageError);
    CHECK_THROWS_AS(standardize(std::vector<double>{1.0}), UsageError);
}

TEST_CASE("standardize is idempotent") {
    Rng rng(8);
    std::vector<double> x(64);
    for (auto& v : x) v = rng.uniform(-3, 7);
    auto once = standardize(x);
    auto twice = standardize(once.y);
    double sum = 0.0, sq = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sum += once.y[i];
        CHECK(std::abs(once.y[i] - twice.y[i]) < 1e-6);
    }
    for (double v : once.y) sq += v * v;
    CHECK(std::abs(sum / static_cast<double>(x.size())) < 1e-6);
    CHECK(std::abs(std::sqrt(sq / static_cast<double>(x.size())) - 1.0) < 1e-6);
}

TEST_CASE("estimate_lag recovers a constructed shift") {
    const auto a = smooth_noise(400, 31);
    std::vector<double> b(a.size(), 0.0);
    for (size_t i = 5; i < b.size(); ++i) b[i] = a[i - 5];  // b lags a by 5
    CHECK(estimate_lag(a, b, 30) == 5);
    CHECK(estimate_lag(a, a, 30) == 0);
}

TEST_CASE("estimate_lag ties break toward the smaller |lag|") {
    // pure 0.5 Hz sine at 10 Hz: period 20 samples; delay by 22 => equal
    // correlation maxima at lags 2 and 22
    const auto a = sine(0.5, 10.0, 300);
    const auto b = shift_with_wrap(a, 22);
    CHECK(estimate_lag(a, b, 25) == 2);
}

TEST_CASE("estimate_lag property: shifted band-limited signals") {
    for (int k : {-17, -3, 0, 4, 23}) {
        const auto a = smooth_noise(500, 100 + static_cast<uint64_t>(k + 20));
        const auto b = shift_with_wrap(a, k);
        CHECK(estimate_lag(a, b, 30) == k);
    }
}

TEST_CASE("estimate_lag error paths") {
    std::vector<double> a{1, 2, 3, 4};
    CHECK_THROWS_AS(estimate_lag(a, a, 4), UsageError);  // max_lag >= len
    std::vector<double> c1(16, 1.0), c2(16, 2.0);
    CHECK_THROWS_AS(estimate_lag(c1, c2, 3), AlignError);  // constant overlap everywhere
}

TEST_CASE("rmse basics") {
    std::vector<double> a{1, 2, 3, 4};
    CHECK(rmse(a, a) == 0.0);
    std::vector<double> b{2, 3, 4, 5};
    CHECK(rmse(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> c{1, 2};
    CHECK_THROWS_AS(rmse(a, c), UsageError);
}

TEST_CASE("shifted_rmse undoes a pure shift") {
    const auto pred = slow_noise(200, 55);
    for (int k : {-9, -3, 0, 2, 7, 10}) {
        const auto tgt = shift_with_wrap(pred, -k);
        CHECK(shifted_rmse(pred, tgt, 10) < 1e-6);
    }
    const auto tgt3 = shift_with_wrap(pred, -3);
    CHECK(rmse(pred, tgt3) > 10 * shifted_rmse(pred, tgt3, 10) + 1e-9);
    CHECK(shifted_rmse(pred, tgt3, 0) == doctest::Approx(rmse(pred, tgt3)));
}

TEST_CASE("shifted_rmse picks the local maximum closest to zero") {
    // periodic signal: correlation maxima at lag 0 and +/- one period; the
    // offset below keeps RMSE nonzero so a wrong peak would be visible
    auto pred = sine(1.0, 10.0, 200);
    auto tgt = pred;
    for (auto& v : tgt) v += 0.05;
    CHECK(shifted_rmse(pred, tgt, 10) == doctest::Approx(0.05).epsilon(1e-9));
    std::vector<double> short_v{1, 2, 3};
    CHECK_THROWS_AS(shifted_rmse(short_v, short_v, 2), UsageError);
}

TEST_CASE("dtw hand examples") {
    std::vector<double> a{1, 2, 3};
    CHECK(dtw(a, a) == 0.0);
    CHECK(dtw(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 2, 3}) == 0.0);
    CHECK(dtw(std::vector<double>{0, 3}, std::vector<double>{1}) == doctest::Approx(3.0));
    CHECK_THROWS_AS(dtw(std::vector<double>{}, a), UsageError);
}

TEST_CASE("dtw equals the exhaustive-path oracle on short alphabet sequences") {
    // all pairs up to length 4 over {0,1,2}; lengths 5-8 randomized
    std::vector<std::vector<double>> seqs;
    for (int len = 1; len <= 4; ++len) {
        const int total = static_cast<int>(std::pow(3, len));
        for (int code = 0; code < total; ++code) {
            std::vector<double> s(static_cast<size_t>(len));
            int c = code;
            for (int i = 0; i < len; ++i) {
                s[static_cast<size_t>(i)] = c % 3;
                c /= 3;
            }
            seqs.push_back(std::move(s));
        }
    }
    for (const auto& a : seqs) {
        for (const auto& b : seqs) {
            CHECK(dtw(a, b) == doctest::Approx(dtw_oracle(a, b)).epsilon(1e-12));
        }
    }
    Rng rng(9);
    for (int inst = 0; inst < 300; ++inst) {
        std::vector<double> a(static_cast<size_t>(rng.uniform_int(5, 8)));
        std::vector<double> b(static_cast<size_t>(rng.uniform_int(5, 8)));
        for (auto& v : a) v = static_cast<double>(rng.uniform_int(0, 2));
        for (auto& v : b) v = static_cast<double>(rng.uniform_int(0, 2));
        CHECK(dtw(a, b) == doctest::Approx(dtw_oracle(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("dtw properties: symmetry and the diagonal bound") {
    Rng rng(12);
    for (int inst = 0; inst < 50; ++inst) {
        std::vector<double> a(24), b(24);
        for (auto& v : a) v = rng.uniform(-2, 2);
        for (auto& v : b) v = rng.uniform(-2, 2);
        const double d_ab = dtw(a, b);
        CHECK(d_ab == doctest::Approx(dtw(b, a)).epsilon(1e-12));
        CHECK(dtw(a, a) == 0.0);
        double diag = 0.0;
        for (size_t i = 0; i < a.size(); ++i) diag += std::abs(a[i] - b[i]);
        CHECK(d_ab <= diag + 1e-12);
    }
}

TEST_CASE("visual rating: identity, scaling, noise") {
    const auto tgt = [&] {
        auto s = sine(0.3, 10.0, 128);
        auto s2 = sine(0.6, 10.0, 128, 0.7);
        for (size_t i = 0; i < s.size(); ++i) s[i] = 2.0 * s[i] + 0.5 * s2[i];
        return s;
    }();
    CHECK(visual_rating(tgt, tgt) == Rating::Plus);

    auto scaled = tgt;
    for (auto& v : scaled) v *= 0.3;
    CHECK(visual_rating(scaled, tgt) == Rating::Circle);

    Rng rng(19);
    std::vector<double> noise(128);
    for (auto& v : noise) v = rng.normal();
    CHECK(visual_rating(noise, tgt) == Rating::Minus);

    std::vector<double> flat(128, 0.42);
    CHECK(visual_rating(flat, tgt) == Rating::Minus);
}

TEST_CASE("visual rating is scale-detecting exactly at perfect shape") {
    const auto tgt = [&] {
        auto s = sine(0.35, 10.0, 128);
        for (auto& v : s) v *= 1.5;
        return s;
    }();
    struct Case {
        double c;
        Rating expect;
    };
    for (const Case tc : {Case{0.2, Rating::Circle}, Case{0.69, Rating::Circle},
                          Case{0.71, Rating::Plus}, Case{1.0, Rating::Plus},
                          Case{1.39, Rating::Plus}, Case{1.41, Rating::Circle},
                          Case{3.0, Rating::Circle}, Case{-0.9, Rating::Minus}}) {
        auto pred = tgt;
        for (auto& v : pred) v *= tc.c;
        CHECK_MESSAGE(visual_rating(pred, tgt) == tc.expect, "c = ", tc.c);
    }
}

TEST_CASE("align_records recovers injected lags") {
    phantom::PatientParams params;
    params.anatomy_seed = 3;
    phantom::SimulateOptions opts;
    opts.eit_lag = 7;
    opts.monitor_lag = -12;
    auto rec = phantom::simulate_record(params, 60.0, 1234, opts);
    CHECK(estimate_lag(rec.channel(ChannelId::V).samples,
                       rec.channel(ChannelId::EitSum).samples, 50) == 7);
    CHECK(estimate_lag(rec.channel(ChannelId::Paw).samples, rec.monitor_paw.samples, 50) == -12);

    auto aligned = align_records(rec);
    CHECK(aligned.meta.residual_eit_lag == 0);
    CHECK(aligned.meta.residual_monitor_lag == 0);
    CHECK_FALSE(aligned.meta.unalignable);
    CHECK(aligned.meta.aligned);

    // identity restored exactly on the overlap after alignment
    const auto& paw = aligned.channel(ChannelId::Paw).samples;
    const auto& pes = aligned.channel(ChannelId::Pes).samples;
    const auto& ptp = aligned.channel(ChannelId::Ptp).samples;
    for (size_t i = 0; i < paw.size(); ++i) {
        CHECK(paw[i] - pes[i] - ptp[i] == 0.0);
    }
}

TEST_CASE("align_records leaves a zero-lag record unchanged") {
    phantom::PatientParams params;
    params.anatomy_seed = 5;
    auto rec = phantom::simulate_record(params, 60.0, 77, {});
    auto aligned = align_records(rec);
    CHECK(aligned.frames == rec.frames);
    CHECK(aligned.channel(ChannelId::V).samples == rec.channel(ChannelId::V).samples);
    CHECK(aligned.eit == rec.eit);
    CHECK(aligned.meta.residual_eit_lag == 0);
}

TEST_CASE("align_records flags a pure-noise monitor channel") {
    phantom::PatientParams params;
    params.anatomy_seed = 9;
    auto rec = phantom::simulate_record(params, 60.0, 99, {});
    Rng rng(2);
    for (auto& v : rec.monitor_paw.samples) v = rng.normal();
    auto aligned = align_records(rec);
    CHECK(aligned.meta.unalignable);
}
