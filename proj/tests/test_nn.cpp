#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fd_check.hpp"
#include "uhar/nn.hpp"
#include "uhar/rng.hpp"

using namespace uhar;

TEST_CASE("deterministic dense forward") {
    SECTION("identity weights pass input through") {
        DenseLayer l{Mat::identity(3), Vec(3, 0.0), Activation::Identity};
        const Vec x{0.5, -2.0, 7.0};
        REQUIRE(forward_deterministic(l, x) == x);
    }

    SECTION("relu clips negatives") {
        DenseLayer l{Mat::identity(2), Vec(2, 0.0), Activation::Relu};
        const Vec y = forward_deterministic(l, {-1.0, 2.0});
        REQUIRE(y == Vec{0.0, 2.0});
    }

    SECTION("1x1 affine") {
        DenseLayer l{Mat(1, 1), Vec{1.0}, Activation::Identity};
        l.weights(0, 0) = 2.0;
        REQUIRE(forward_deterministic(l, {3.0})[0] == 7.0);
    }

    SECTION("shape mismatch throws") {
        DenseLayer l{Mat(2, 3), Vec(2, 0.0), Activation::Identity};
        REQUIRE_THROWS_AS(forward_deterministic(l, {1.0, 2.0}), Error);
    }
}

TEST_CASE("reparameterized weight sampling") {
    GaussianPosterior p{{0.3, -1.2}, {0.0, 0.0}};

    SECTION("zero noise returns mu") {
        REQUIRE(sample_weights(p, {0.0, 0.0}) == p.mu);
    }

    SECTION("rho -> -inf collapses sigma") {
        GaussianPosterior tight{{0.3, -1.2}, {-100.0, -100.0}};
        const Vec w = sample_weights(tight, {5.0, -5.0});
        REQUIRE(w[0] == Catch::Approx(0.3).margin(1e-12));
        REQUIRE(w[1] == Catch::Approx(-1.2).margin(1e-12));
    }

    SECTION("softplus(0) = log 2") {
        GaussianPosterior zero{{0.0}, {0.0}};
        REQUIRE(sample_weights(zero, {1.0})[0] == Catch::Approx(0.6931471805599453).margin(1e-12));
    }

    SECTION("sigma positive for finite rho") {
        for (double rho : {-40.0, -5.0, 0.0, 3.0, 40.0}) REQUIRE(softplus(rho) > 0.0);
    }

    SECTION("sampling is unbiased") {
        GaussianPosterior q{{1.5}, {0.2}};
        const double sigma = softplus(0.2);
        Rng rng(42);
        const std::size_t n = 100000;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += sample_weights(q, {rng.normal()})[0];
        mean /= static_cast<double>(n);
        REQUIRE(std::abs(mean - 1.5) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
    }
}

TEST_CASE("gaussian KL to prior") {
    SECTION("matching distributions give zero") {
        const double rho_for_unit_sigma = std::log(std::exp(1.0) - 1.0);
        GaussianPosterior p{{0.0, 0.0}, {rho_for_unit_sigma, rho_for_unit_sigma}};
        REQUIRE(kl_gaussian_to_prior(p, 1.0) == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("unit shift gives 1/2") {
        GaussianPosterior p{{1.0}, {std::log(std::exp(1.0) - 1.0)}};
        REQUIRE(kl_gaussian_to_prior(p, 1.0) == Catch::Approx(0.5).margin(1e-12));
    }

    SECTION("matches the Monte-Carlo estimate") {
        // E_q[log q - log p] with w ~ q = N(mu, sigma^2), p = N(0, sp^2)
        Rng rng(7);
        for (int trial = 0; trial < 3; ++trial) {
            const double mu = rng.uniform(-1.0, 1.0);
            const double rho = rng.uniform(-2.0, 1.0);
            const double sp = rng.uniform(0.5, 2.0);
            const double sigma = softplus(rho);
            GaussianPosterior p{{mu}, {rho}};
            const double analytic = kl_gaussian_to_prior(p, sp);

            const std::size_t n = 100000;
            double sum = 0.0, sumsq = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double w = mu + sigma * rng.normal();
                const double logq = -0.5 * std::pow((w - mu) / sigma, 2) - std::log(sigma);
                const double logp = -0.5 * std::pow(w / sp, 2) - std::log(sp);
                const double v = logq - logp;
                sum += v;
                sumsq += v * v;
            }
            const double mc = sum / static_cast<double>(n);
            const double se = std::sqrt((sumsq / n - mc * mc) / static_cast<double>(n));
            REQUIRE(std::abs(analytic - mc) < 3.0 * se + 1e-12);
        }
    }

    SECTION("non-negative over random parameters") {
        Rng rng(99);
        for (int i = 0; i < 200; ++i) {
            GaussianPosterior p{{rng.uniform(-3.0, 3.0)}, {rng.uniform(-4.0, 2.0)}};
            REQUIRE(kl_gaussian_to_prior(p, rng.uniform(0.2, 3.0)) >= 0.0);
        }
    }

    SECTION("gradient of the mu term") {
        GaussianPosterior p{{1.0}, {std::log(std::exp(1.0) - 1.0)}};
        Vec dmu(1, 0.0), drho(1, 0.0);
        kl_gaussian_to_prior_backward(p, 1.0, 1.0, dmu, drho);
        REQUIRE(dmu[0] == Catch::Approx(1.0).margin(1e-12));
    }
}

namespace {

// tiny MLP on top of raw dense layers; loss = sum of squared outputs
struct TinyNet {
    std::vector<DenseLayer> layers;

    Vec flatten() const {
        Vec out;
        for (const auto& l : layers) {
            out.insert(out.end(), l.weights.data.begin(), l.weights.data.end());
            out.insert(out.end(), l.bias.begin(), l.bias.end());
        }
        return out;
    }
    void unflatten(const Vec& flat) {
        std::size_t k = 0;
        for (auto& l : layers) {
            std::copy_n(flat.begin() + static_cast<long>(k), l.weights.size(), l.weights.data.begin());
            k += l.weights.size();
            std::copy_n(flat.begin() + static_cast<long>(k), l.bias.size(), l.bias.begin());
            k += l.bias.size();
        }
    }
    double loss(const Vec& x) const {
        Vec h = x;
        for (const auto& l : layers) h = dense_forward(l, h);
        double s = 0.0;
        for (double v : h) s += v * v;
        return s;
    }
    Vec grad(const Vec& x) const {
        std::vector<DenseCache> caches(layers.size());
        Vec h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) h = dense_forward(layers[i], h, &caches[i]);
        Vec dh(h.size());
        for (std::size_t i = 0; i < h.size(); ++i) dh[i] = 2.0 * h[i];
        std::vector<DenseGrad> grads(layers.size());
        for (std::size_t i = layers.size(); i-- > 0;)
            dh = dense_backward(layers[i], caches[i], dh, grads[i]);
        Vec out;
        for (const auto& g : grads) {
            out.insert(out.end(), g.weights.data.begin(), g.weights.data.end());
            out.insert(out.end(), g.bias.begin(), g.bias.end());
        }
        return out;
    }
};

}  // namespace

TEST_CASE("zero upstream gradient yields zero parameter gradients") {
    Rng rng(6);
    TinyNet net;
    net.layers.push_back(make_dense(3, 4, Activation::Tanh, rng));
    net.layers.push_back(make_dense(4, 2, Activation::Identity, rng));
    std::vector<DenseCache> caches(2);
    Vec h = rng.normal_vec(3);
    for (std::size_t i = 0; i < 2; ++i) h = dense_forward(net.layers[i], h, &caches[i]);
    std::vector<DenseGrad> grads(2);
    Vec dh(2, 0.0);
    for (std::size_t i = 2; i-- > 0;) dh = dense_backward(net.layers[i], caches[i], dh, grads[i]);
    for (const auto& g : grads) {
        for (double v : g.weights.data) REQUIRE(v == 0.0);
        for (double v : g.bias) REQUIRE(v == 0.0);
    }
    for (double v : dh) REQUIRE(v == 0.0);
}

TEST_CASE("dense backward matches finite differences") {
    Rng rng(2024);
    for (int trial = 0; trial < 10; ++trial) {
        TinyNet net;
        net.layers.push_back(make_dense(4, 5, Activation::Tanh, rng));
        net.layers.push_back(make_dense(5, 3, Activation::Tanh, rng));
        net.layers.push_back(make_dense(3, 2, Activation::Identity, rng));
        const Vec x = rng.normal_vec(4);

        const Vec analytic = net.grad(x);
        TinyNet probe = net;
        const Vec numeric = testutil::fd_gradient(
            [&probe, &x](const Vec& params) {
                probe.unflatten(params);
                return probe.loss(x);
            },
            net.flatten());
        REQUIRE(testutil::max_rel_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("adam optimizer") {
    SECTION("zero gradient leaves parameters unchanged") {
        AdamState st;
        Vec p{1.0, -2.0};
        optimizer_step(st, p, {0.0, 0.0});
        REQUIRE(p == Vec{1.0, -2.0});
    }

    SECTION("one step on w^2 moves toward zero") {
        AdamState st;
        Vec p{1.0};
        optimizer_step(st, p, {2.0});  // d/dw w^2 at w=1
        REQUIRE(p[0] < 1.0);
        REQUIRE(p[0] > 0.9);
    }

    SECTION("identical seeds give identical trajectories") {
        auto run = [] {
            Rng rng(5);
            AdamState st;
            Vec p{2.0, -1.0, 0.5};
            for (int i = 0; i < 50; ++i) {
                Vec g(3);
                for (std::size_t j = 0; j < 3; ++j) g[j] = 2.0 * p[j] + 0.1 * rng.normal();
                optimizer_step(st, p, g);
            }
            return p;
        };
        REQUIRE(run() == run());
    }
}
