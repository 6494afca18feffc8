#include <doctest.h>

#include "../oracles.hpp"
#include "mmreg/mscmlp.hpp"

using namespace mmreg;

namespace {

struct Tiny {
    ModalityDims dims;
    Index basis = 0;
    Index shared = 0;
    Index rows = 0;
};

Tiny random_tiny(Rng& rng) {
    auto pick = [&](Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
    return {{pick(1, 6), pick(1, 6), pick(1, 6)}, pick(1, 6), pick(1, 5), pick(1, 4)};
}

MscmlpInput<double> random_input(const Tiny& t, Rng& rng) {
    return {oracle::random_matrix(t.rows, t.dims.audio, rng), oracle::random_matrix(t.rows, t.dims.video, rng),
            oracle::random_matrix(t.rows, t.dims.text, rng)};
}

MscmlpParams<double> random_params(const Tiny& t, Rng& rng) {
    auto p = MscmlpParams<double>::init(t.dims, t.basis, t.shared, rng);
    for (auto* k : {&p.keys_audio, &p.keys_video, &p.keys_text}) *k->bias = oracle::random_matrix(1, t.basis, rng);
    return p;
}

constexpr FusionDropout kNoDropout{0.0, 0.0, 0.0};

}  // namespace

TEST_SUITE("mscmlp") {

TEST_CASE("forward equals the loop-level weighted basis sum on 100 tiny configs") {
    Rng rng(41);
    for (int t = 0; t < 100; ++t) {
        const Tiny cfg = random_tiny(rng);
        const auto p = random_params(cfg, rng);
        const auto in = random_input(cfg, rng);
        Rng unused(0);
        const auto fwd = mscmlp_forward(in, p, FusionDropout{}, unused, /*training=*/false);
        const MatrixD ref = oracle::fusion(in, p);
        REQUIRE(fwd.fused.rows() == cfg.rows);
        REQUIRE(fwd.fused.cols() == 3 * cfg.shared);
        CHECK((fwd.fused - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("gradients match central differences with frozen dropout masks") {
    Rng rng(42);
    const FusionDropout drop{0.3, 0.1, 0.2};
    for (int t = 0; t < 20; ++t) {
        const Tiny cfg = random_tiny(rng);
        auto p = random_params(cfg, rng);
        auto in = random_input(cfg, rng);
        const MatrixD dir = oracle::random_matrix(cfg.rows, 3 * cfg.shared, rng);
        const Rng frozen(1000 + t);

        auto loss = [&] {
            Rng r = frozen;
            return (mscmlp_forward(in, p, drop, r, true).fused.array() * dir.array()).sum();
        };
        Rng r = frozen;
        const auto fwd = mscmlp_forward(in, p, drop, r, true);
        p.zero_grad();
        const auto g = mscmlp_backward(dir, fwd.cache, p);

        CHECK(oracle::rel_err(g.audio, oracle::numeric_grad(in.audio, loss)) < 1e-6);
        CHECK(oracle::rel_err(g.video, oracle::numeric_grad(in.video, loss)) < 1e-6);
        CHECK(oracle::rel_err(g.text, oracle::numeric_grad(in.text, loss)) < 1e-6);
        CHECK(oracle::rel_err(p.values.grad_weight, oracle::numeric_grad(p.values.weight, loss)) < 1e-6);
        for (auto* k : {&p.keys_audio, &p.keys_video, &p.keys_text}) {
            CHECK(oracle::rel_err(k->grad_weight, oracle::numeric_grad(k->weight, loss)) < 1e-6);
            CHECK(oracle::rel_err(k->grad_bias, oracle::numeric_grad(*k->bias, loss)) < 1e-6);
        }
    }
}

TEST_CASE("shared Values gradient is exactly the sum of the three modality contributions") {
    Rng rng(43);
    for (int t = 0; t < 50; ++t) {
        const Tiny cfg = random_tiny(rng);
        auto p = random_params(cfg, rng);
        const auto in = random_input(cfg, rng);
        Rng unused(0);
        const auto fwd = mscmlp_forward(in, p, kNoDropout, unused, false);
        const MatrixD dir = oracle::random_matrix(cfg.rows, 3 * cfg.shared, rng);

        p.zero_grad();
        mscmlp_backward(dir, fwd.cache, p);
        const MatrixD full = p.values.grad_weight;

        std::array<MatrixD, 3> parts;
        for (Index m = 0; m < 3; ++m) {
            MatrixD only = MatrixD::Zero(dir.rows(), dir.cols());
            only.middleCols(m * cfg.shared, cfg.shared) = dir.middleCols(m * cfg.shared, cfg.shared);
            p.zero_grad();
            mscmlp_backward(only, fwd.cache, p);
            parts[static_cast<std::size_t>(m)] = p.values.grad_weight;
        }
        CHECK(full == (parts[0] + parts[1]) + parts[2]);

        // Each contribution is activation^T * slice for its own modality.
        const MatrixD audio_ref = oracle::matmul(fwd.cache.audio.activation.transpose(), dir.leftCols(cfg.shared));
        CHECK((parts[0] - audio_ref).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("one Values matrix serves all modalities") {
    Rng rng(44);
    const Tiny cfg{{3, 3, 3}, 4, 2, 2};
    auto p = random_params(cfg, rng);
    p.keys_video = p.keys_audio;
    p.keys_text = p.keys_audio;
    MscmlpInput<double> in;
    in.audio = oracle::random_matrix(2, 3, rng);
    in.video = in.audio;
    in.text = in.audio;
    Rng unused(0);
    const auto fwd = mscmlp_forward(in, p, kNoDropout, unused, false);
    CHECK(fwd.fused.leftCols(2) == fwd.fused.middleCols(2, 2));
    CHECK(fwd.fused.leftCols(2) == fwd.fused.rightCols(2));
}

TEST_CASE("shape mismatches are rejected") {
    Rng rng(45);
    const Tiny cfg{{3, 4, 5}, 4, 2, 2};
    auto p = random_params(cfg, rng);
    auto in = random_input(cfg, rng);
    Rng r(0);
    in.video = oracle::random_matrix(2, 7, rng);
    CHECK_THROWS_AS(mscmlp_forward(in, p, kNoDropout, r, false), ShapeError);
    in = random_input(cfg, rng);
    in.text = oracle::random_matrix(3, 5, rng);
    CHECK_THROWS_AS(mscmlp_forward(in, p, kNoDropout, r, false), ShapeError);

    p.values = LinearParams<double>(4, 2, true);
    CHECK_THROWS_AS(p.validate(), ShapeError);
}

TEST_CASE("inference draws no random numbers and is repeatable") {
    Rng rng(46);
    const Tiny cfg{{3, 4, 5}, 4, 2, 3};
    const auto p = random_params(cfg, rng);
    const auto in = random_input(cfg, rng);
    Rng r(9);
    const auto before = r.state();
    const auto a = mscmlp_forward(in, p, FusionDropout{}, r, false);
    const auto b = mscmlp_forward(in, p, FusionDropout{}, r, false);
    CHECK(r.state() == before);
    CHECK(a.fused == b.fused);
}

}  // TEST_SUITE
