#include <doctest.h>

#include "fire2/featnet.hpp"
#include "fire2/rng.hpp"
#include "oracles.hpp"

using namespace fire2;
using namespace fire2::featnet;

namespace {

std::vector<Tensor> random_images(int n, int h, int w, uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> out;
    for (int i = 0; i < n; ++i) {
        Tensor t({h, w, 3});
        for (double& v : t.data) v = rng.uniform();
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

TEST_CASE("default config maps 32x16 inputs to (64,8,4) maps and 64-d embeddings") {
    Backbone net(BackboneConfig{}, 7);
    auto [maps, embs] = net.forward(random_images(4, 32, 16, 1));
    REQUIRE(maps.size() == 4);
    REQUIRE(embs.size() == 4);
    CHECK(maps[0].channels() == 64);
    CHECK(maps[0].height() == 8);
    CHECK(maps[0].width() == 4);
    CHECK(embs[0].vector.size() == 64);
    auto [oh, ow] = BackboneConfig{}.output_hw(32, 16);
    CHECK(oh == 8);
    CHECK(ow == 4);
}

TEST_CASE("all-zero images with a zero final conv give all-zero embeddings") {
    Backbone net(BackboneConfig{}, 7);
    auto params = net.parameters();
    // final stage conv weight + bias are the last 4-group's first two entries
    const size_t last = params.size() - 4;
    params[last]->value.fill(0.0);
    params[last + 1]->value.fill(0.0);
    std::vector<Tensor> zeros(3, Tensor({32, 16, 3}));
    auto [maps, embs] = net.forward(zeros);
    for (const auto& e : embs)
        for (double v : e.vector) CHECK(v == 0.0);
    for (const auto& m : maps)
        for (double v : m.data.data) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic given parameters and input") {
    Backbone net(BackboneConfig{}, 21);
    auto imgs = random_images(2, 32, 16, 5);
    auto [m1, e1] = net.forward(imgs);
    auto [m2, e2] = net.forward(imgs);
    for (size_t i = 0; i < e1.size(); ++i) CHECK(e1[i].vector == e2[i].vector);
    for (size_t i = 0; i < m1.size(); ++i) CHECK(m1[i].data.data == m2[i].data.data);
}

TEST_CASE("embedding gradient w.r.t. a conv weight matches central differences") {
    BackboneConfig cfg;
    cfg.channels = {4, 6};
    cfg.strides = {2, 2};
    Backbone net(cfg, 3);
    auto imgs = random_images(2, 16, 8, 9);
    Tensor batch = images_to_batch(imgs);

    Tape tape;
    auto nodes = net.forward_t(tape, tape.constant(batch));
    Tensor ones(tape.value(nodes.emb).shape);
    ones.fill(1.0);
    Var loss = tape.weighted_sum(nodes.emb, ones);
    tape.backward(loss);

    Parameter* w0 = net.parameters()[0];
    Tensor analytic = w0->grad;
    auto f = [&](const Tensor& wv) {
        Tensor saved = w0->value;
        w0->value = wv;
        Tape t2;
        auto n2 = net.forward_frozen(t2, t2.constant(batch));
        Var l2 = t2.weighted_sum(n2.emb, ones);
        double out = t2.value(l2).data[0];
        w0->value = saved;
        return out;
    };
    CHECK(oracle::grad_rel_err(f, w0->value, analytic) < 1e-4);
}

TEST_CASE("pooled embedding equals the spatial mean (or max) of the map") {
    for (Pooling mode : {Pooling::avg, Pooling::max}) {
        BackboneConfig cfg;
        cfg.pooling = mode;
        Backbone net(cfg, 11);
        auto [maps, embs] = net.forward(random_images(3, 32, 16, 2));
        for (size_t b = 0; b < maps.size(); ++b) {
            const auto& m = maps[b];
            const int64_t S = static_cast<int64_t>(m.height()) * m.width();
            for (int c = 0; c < m.channels(); ++c) {
                const double* p = &m.data.data[static_cast<size_t>(c) * S];
                double agg = mode == Pooling::avg ? 0.0 : p[0];
                for (int64_t i = 0; i < S; ++i)
                    agg = mode == Pooling::avg ? agg + p[i] : std::max(agg, p[i]);
                if (mode == Pooling::avg) agg /= static_cast<double>(S);
                CHECK(std::abs(embs[b].vector[static_cast<size_t>(c)] - agg) < 1e-6);
            }
        }
    }
}

TEST_CASE("part_split: shapes, remainder rule, exact reconstruction") {
    Rng rng(13);
    FeatureMap m{Tensor({3, 8, 4})};
    for (double& v : m.data.data) v = rng.normal();

    auto even = part_split(m, 2);
    REQUIRE(even.size() == 2);
    CHECK(even[0].height() == 4);
    CHECK(even[1].height() == 4);

    FeatureMap odd{Tensor({2, 5, 3})};
    for (double& v : odd.data.data) v = rng.normal();
    auto parts = part_split(odd, 2);
    CHECK(parts[0].height() == 2);
    CHECK(parts[1].height() == 3);

    SUBCASE("concatenation reconstructs the input") {
        for (int P : {1, 2, 3, 5}) {
            auto ps = part_split(odd, P);
            int row = 0;
            for (const auto& p : ps) {
                for (int c = 0; c < p.channels(); ++c)
                    for (int h = 0; h < p.height(); ++h)
                        for (int w = 0; w < p.width(); ++w)
                            CHECK(p.data.data[(static_cast<size_t>(c) * p.height() + h) * p.width() +
                                              w] ==
                                  odd.data.data[(static_cast<size_t>(c) * 5 + (row + h)) * 3 + w]);
                row += p.height();
            }
            CHECK(row == odd.height());
        }
    }

    SUBCASE("P above H is rejected") {
        CHECK_THROWS_AS(part_split(odd, 6), std::invalid_argument);
        CHECK_THROWS_AS(part_split(odd, 0), std::invalid_argument);
    }
}

TEST_CASE("part-wise avg pooling, height-weighted, equals whole-map avg pooling") {
    Rng rng(17);
    FeatureMap m{Tensor({4, 7, 3})};
    for (double& v : m.data.data) v = rng.normal();
    auto parts = part_split(m, 3);

    const int64_t S = static_cast<int64_t>(m.height()) * m.width();
    for (int c = 0; c < m.channels(); ++c) {
        double whole = 0.0;
        for (int64_t i = 0; i < S; ++i) whole += m.data.data[static_cast<size_t>(c) * S + i];
        whole /= static_cast<double>(S);

        double weighted = 0.0;
        for (const auto& p : parts) {
            const int64_t Sp = static_cast<int64_t>(p.height()) * p.width();
            double mean = 0.0;
            for (int64_t i = 0; i < Sp; ++i) mean += p.data.data[static_cast<size_t>(c) * Sp + i];
            mean /= static_cast<double>(Sp);
            weighted += mean * static_cast<double>(p.height()) / m.height();
        }
        CHECK(std::abs(whole - weighted) < 1e-6);
    }
}

TEST_CASE("non-finite or out-of-range input is rejected before any computation") {
    Backbone net(BackboneConfig{}, 7);
    std::vector<Tensor> imgs(1, Tensor({32, 16, 3}));
    imgs[0].data[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(net.forward(imgs), std::invalid_argument);
    imgs[0].data[5] = 1.5;
    CHECK_THROWS_AS(net.forward(imgs), std::invalid_argument);
    CHECK_THROWS_AS(net.forward({}), std::invalid_argument);
}

TEST_CASE("normalized embeddings land on the unit sphere") {
    Backbone net(BackboneConfig{}, 7);
    auto [maps, embs] = net.forward(random_images(2, 32, 16, 31));
    for (const auto& e : embs) {
        Embedding n = e.normalized_copy();
        CHECK(n.normalized);
        CHECK(std::abs(l2_norm(n.vector) - 1.0) <= 1e-5);
    }
}
