#include <doctest.h>

#include <cmath>

#include "fire2/errors.hpp"
#include "fire2/objectives.hpp"
#include "fire2/rng.hpp"
#include "oracles.hpp"

using namespace fire2;
using namespace fire2::objectives;

TEST_CASE("id_loss: perfect and uniform predictions") {
    const int Np = 8, C = 4;
    IdentityClassifier clf(Np, C, 3);

    Tensor emb({2, C});
    emb.at2(0, 0) = 1.0;
    emb.at2(1, 1) = 1.0;

    SUBCASE("uniform logits give ln(N_p)") {
        clf.w.value.fill(0.0);
        clf.b.value.fill(0.0);
        CHECK(id_loss(emb, {3, 5}, clf) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
    }

    SUBCASE("overwhelming true-class logit gives ~0") {
        clf.w.value.fill(0.0);
        clf.b.value.fill(0.0);
        clf.b.value[3] = 1e4;
        CHECK(id_loss(emb, {3, 3}, clf) < 1e-10);
    }

    SUBCASE("batch permutation leaves the loss unchanged") {
        Rng rng(9);
        Tensor e4({4, C});
        for (double& v : e4.data) v = rng.normal();
        const double a = id_loss(e4, {0, 1, 2, 3}, clf);
        Tensor perm({4, C});
        const int order[4] = {2, 0, 3, 1};
        for (int b = 0; b < 4; ++b)
            for (int c = 0; c < C; ++c) perm.at2(b, c) = e4.at2(order[b], c);
        const double b2 = id_loss(perm, {2, 0, 3, 1}, clf);
        CHECK(a == doctest::Approx(b2).epsilon(1e-12));
    }

    SUBCASE("label out of range throws") {
        CHECK_THROWS_AS(id_loss(emb, {Np, 0}, clf), std::out_of_range);
    }

    SUBCASE("gradient check against central differences") {
        Rng rng(13);
        Tensor e({5, C});
        for (double& v : e.data) v = rng.normal();
        std::vector<int> labels = {0, 3, 7, 1, 3};

        Tape tape;
        Var ev = tape.leaf(e);
        Var loss = id_loss_node(tape, ev, labels, clf);
        tape.backward(loss);

        auto f = [&](const Tensor& x) {
            IdentityClassifier c2 = clf;
            return id_loss(x, labels, c2);
        };
        CHECK(oracle::grad_rel_err(f, e, tape.grad(ev)) < 1e-4);

        Tensor analytic_w = clf.w.grad;
        auto fw = [&](const Tensor& wv) {
            IdentityClassifier c2 = clf;
            c2.w.value = wv;
            return id_loss(e, labels, c2);
        };
        CHECK(oracle::grad_rel_err(fw, clf.w.value, analytic_w) < 1e-4);
    }
}

TEST_CASE("triplet_loss: spec cases and brute-force agreement") {
    SUBCASE("well-separated identities with zero intra-distance: hinge inactive") {
        Tensor emb({4, 2});
        emb.at2(0, 0) = 10.0;
        emb.at2(1, 0) = 10.0;
        // identity 1 at origin
        CHECK(triplet_loss(emb, {0, 0, 1, 1}, 0.3) == doctest::Approx(0.0));
    }

    SUBCASE("all identical embeddings: loss equals the margin") {
        Tensor emb({6, 3});
        emb.fill(1.23);
        CHECK(triplet_loss(emb, {0, 0, 0, 1, 1, 1}, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
    }

    SUBCASE("random batches match the O(B^3) enumeration") {
        Rng rng(21);
        for (int trial = 0; trial < 30; ++trial) {
            const int B = 8, C = 5;
            Tensor emb({B, C});
            std::vector<std::vector<double>> ev(B, std::vector<double>(C));
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) ev[static_cast<size_t>(b)][static_cast<size_t>(c)] =
                    emb.at2(b, c) = rng.normal();
            std::vector<int> ids = {0, 0, 1, 1, 2, 2, 3, 3};
            const double margin = rng.uniform(0.0, 1.0);
            CHECK(triplet_loss(emb, ids, margin) ==
                  doctest::Approx(oracle::naive_batch_hard_triplet(ev, ids, margin)).epsilon(1e-12));
        }
    }

    SUBCASE("translation invariance") {
        Rng rng(31);
        Tensor emb({6, 4});
        for (double& v : emb.data) v = rng.normal();
        std::vector<int> ids = {0, 0, 1, 1, 2, 2};
        const double before = triplet_loss(emb, ids, 0.3);
        Tensor shifted = emb;
        for (int b = 0; b < 6; ++b)
            for (int c = 0; c < 4; ++c) shifted.at2(b, c) += 7.5;
        CHECK(before == doctest::Approx(triplet_loss(shifted, ids, 0.3)).epsilon(1e-9));
    }

    SUBCASE("batch without a positive names the sampler contract") {
        Tensor emb({2, 2});
        CHECK_THROWS_WITH_AS(triplet_loss(emb, {0, 1}, 0.3), doctest::Contains("PK sampler"),
                             std::invalid_argument);
    }
}

TEST_CASE("total_loss: staging and Eq.-7 arithmetic") {
    LossWeights w;  // defaults 1, 1, 1, 0.3
    LossComponents c{0.7, 0.4, 0.2, 0.9};

    SUBCASE("warm stage is exactly lambda1 * L_id") {
        CHECK(total_loss(c, w, Stage::warm) == 0.7);
        LossWeights w2 = w;
        w2.lambda1 = 2.0;
        CHECK(total_loss(c, w2, Stage::warm) == 1.4);
    }

    SUBCASE("all components at 1 with defaults: 3.3") {
        LossComponents ones{1, 1, 1, 1};
        CHECK(total_loss(ones, w, Stage::full) == doctest::Approx(3.3).epsilon(1e-15));
    }

    SUBCASE("linear in each component with coefficient lambda_i") {
        const double base = total_loss(c, w, Stage::full);
        LossComponents bumped = c;
        bumped.attr += 1.0;
        CHECK(total_loss(bumped, w, Stage::full) - base == doctest::Approx(w.lambda3));
        bumped = c;
        bumped.recomposed += 2.0;
        CHECK(total_loss(bumped, w, Stage::full) - base == doctest::Approx(2.0 * w.lambda4));
    }

    SUBCASE("negative weights are a config error") {
        LossWeights bad;
        bad.lambda4 = -0.1;
        CHECK_THROWS_AS(total_loss(c, bad, Stage::full), ConfigError);
    }

    SUBCASE("node version matches the value version and skips missing terms") {
        Tape tape;
        Var id = tape.constant(Tensor({1}, {0.7}));
        Var tri = tape.constant(Tensor({1}, {0.4}));
        Var attr = tape.constant(Tensor({1}, {0.2}));
        Var rec = tape.constant(Tensor({1}, {0.9}));
        CHECK(tape.value(total_loss_node(tape, id, tri, attr, rec, w, Stage::full)).data[0] ==
              doctest::Approx(total_loss(c, w, Stage::full)).epsilon(1e-15));
        CHECK(tape.value(total_loss_node(tape, id, tri, attr, rec, w, Stage::warm)).data[0] ==
              doctest::Approx(0.7));
        CHECK(tape.value(total_loss_node(tape, id, Var{}, Var{}, Var{}, w, Stage::full)).data[0] ==
              doctest::Approx(0.7));
    }
}
