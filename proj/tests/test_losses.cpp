#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vtcfed/errors.hpp"
#include "vtcfed/losses.hpp"
#include "vtcfed/rng.hpp"

using namespace vtcfed;

namespace {

Tensor tensor2x2(std::vector<double> vals) { return Tensor({1, 1, 2, 2}, std::move(vals)); }

Vec vec(std::initializer_list<double> vals) {
    Vec v(static_cast<long>(vals.size()));
    long i = 0;
    for (double x : vals) v[i++] = x;
    return v;
}

Vec random_vec(RandomStream& rng, long p, double lo, double hi) {
    Vec v(p);
    for (long i = 0; i < p; ++i) v[i] = rng.uniform(lo, hi);
    return v;
}

// brute-force elementwise oracle for the squared distance
double squared_distance_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// Monte-Carlo KL( N(z,diag sigma^2) || N(c,I) ): mean of log q - log p over
// draws from q, with its standard error.
std::pair<double, double> mc_kl(const Vec& z, const Vec& c, const Vec& sigma, long n, RandomStream& rng) {
    const long p = z.size();
    double sum = 0.0, sum2 = 0.0;
    for (long s = 0; s < n; ++s) {
        double log_q = 0.0, log_p = 0.0;
        for (long i = 0; i < p; ++i) {
            const double eps = rng.gaussian();
            const double v = z[i] + sigma[i] * eps;
            log_q += -0.5 * eps * eps - std::log(sigma[i]);
            log_p += -0.5 * (v - c[i]) * (v - c[i]);
        }
        const double ratio = log_q - log_p;
        sum += ratio;
        sum2 += ratio * ratio;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - mean * mean;
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace

TEST_CASE("reconstruction_loss identity and basic values") {
    const Tensor x = tensor2x2({0.3, 0.7, 0.1, 0.9});
    CHECK(reconstruction_loss(x, x) == doctest::Approx(0.0));
    const Tensor ones = tensor2x2({1, 1, 1, 1});
    const Tensor zeros = tensor2x2({0, 0, 0, 0});
    CHECK(reconstruction_loss(ones, zeros) == doctest::Approx(4.0));
}

TEST_CASE("reconstruction_loss matches the element-loop oracle") {
    RandomStream rng(101);
    std::vector<double> a(8), b(8);
    for (auto& v : a) v = rng.uniform(-2, 2);
    for (auto& v : b) v = rng.uniform(-2, 2);
    const double got = reconstruction_loss(Tensor({8}, a), Tensor({8}, b));
    const double want = squared_distance_oracle(a, b);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("reconstruction_loss rejects shape mismatch") {
    CHECK_THROWS_AS(reconstruction_loss(Tensor({2, 2}), Tensor({4})), std::invalid_argument);
}

TEST_CASE("kl_gaussian trivial values") {
    const Vec ones = vec({1, 1});
    CHECK(kl_gaussian(vec({0.3, -0.7}), vec({0.3, -0.7}), ones) == doctest::Approx(0.0));
    // p=2, z-c=(1,0), sigma=(1,1): 0.5*(1 + 2 - 2 - 0) = 0.5
    CHECK(kl_gaussian(vec({1, 0}), vec({0, 0}), ones) == doctest::Approx(0.5));
}

TEST_CASE("kl_gaussian rejects bad input") {
    CHECK_THROWS_AS(kl_gaussian(vec({1, 2}), vec({1}), vec({1, 1})), std::invalid_argument);
    CHECK_THROWS_AS(kl_gaussian(vec({1, 2}), vec({1, 2}), vec({1, 0})), std::domain_error);
    CHECK_THROWS_AS(kl_gaussian(vec({1, 2}), vec({1, 2}), vec({1, -0.5})), std::domain_error);
}

TEST_CASE("kl_gaussian matches a Monte-Carlo estimator") {
    RandomStream rng(2024);
    const Vec z = random_vec(rng, 3, -1, 1);
    const Vec c = random_vec(rng, 3, -1, 1);
    const Vec sigma = random_vec(rng, 3, 0.5, 1.8);
    const double analytic = kl_gaussian(z, c, sigma);
    const auto [estimate, se] = mc_kl(z, c, sigma, 1000000, rng);
    CHECK(std::abs(analytic - estimate) < 3.0 * se);
}

TEST_CASE("kl_gaussian is nonnegative, zero only at the matched Gaussian") {
    RandomStream rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const long p = 1 + static_cast<long>(rng.below(5));
        const Vec z = random_vec(rng, p, -3, 3);
        const Vec c = random_vec(rng, p, -3, 3);
        const Vec sigma = random_vec(rng, p, 0.05, 3.0);
        CHECK(kl_gaussian(z, c, sigma) >= -1e-12);
    }
    const Vec z = vec({0.2, -0.4, 1.1});
    CHECK(kl_gaussian(z, z, vec({1, 1, 1})) == doctest::Approx(0.0));
    CHECK(kl_gaussian(z, z, vec({1, 1, 1.5})) > 1e-3);
}

TEST_CASE("reparameterize basics") {
    const Vec z = vec({1, -2, 3});
    CHECK((reparameterize(z, vec({0, 0, 0}), vec({5, 5, 5})) - z).norm() == doctest::Approx(0.0));
    const Vec eps = vec({0.3, -0.1, 2.2});
    CHECK((reparameterize(vec({0, 0, 0}), vec({1, 1, 1}), eps) - eps).norm() == doctest::Approx(0.0));
    CHECK_THROWS_AS(reparameterize(z, vec({1, 1}), eps), std::invalid_argument);
}

TEST_CASE("reparameterize sample statistics match N(z, diag(sigma^2))") {
    RandomStream rng(55);
    const Vec z = vec({0.5, -1.0});
    const Vec sigma = vec({0.7, 1.4});
    const long n = 100000;
    Vec sum = Vec::Zero(2), sum2 = Vec::Zero(2);
    for (long i = 0; i < n; ++i) {
        const Vec v = reparameterize(z, sigma, vec({rng.gaussian(), rng.gaussian()}));
        sum += v;
        sum2 += v.cwiseProduct(v);
    }
    for (int d = 0; d < 2; ++d) {
        const double mean = sum[d] / n;
        const double sd = std::sqrt(sum2[d] / n - mean * mean);
        const double se_mean = sigma[d] / std::sqrt(static_cast<double>(n));
        const double se_sd = sigma[d] / std::sqrt(2.0 * static_cast<double>(n));
        CHECK(std::abs(mean - z[d]) < 5.0 * se_mean);
        CHECK(std::abs(sd - sigma[d]) < 5.0 * se_sd);
    }
}

namespace {

ElboBatch two_sample_batch() {
    ElboBatch batch;
    ElboSample a;
    a.x = tensor2x2({0.1, 0.2, 0.3, 0.4});
    a.x_gen = tensor2x2({0.2, 0.0, 0.3, 0.8});
    a.z = vec({1.0, -0.5});
    batch[1].push_back(a);
    ElboSample b;
    b.x = tensor2x2({0, 0, 0, 0});
    b.x_gen = tensor2x2({1, 1, 1, 1});
    b.z = vec({0, 0});
    batch[2].push_back(b);
    return batch;
}

PrototypeMap two_sample_protos() {
    PrototypeMap protos;
    protos[1] = vec({0.5, 0.5});
    protos[2] = vec({2.0, 0.0});
    return protos;
}

}  // namespace

TEST_CASE("elbo_loss vanishes when x_gen = x, z = c, sigma = 1") {
    ElboBatch batch;
    ElboSample s;
    s.x = tensor2x2({0.2, 0.4, 0.6, 0.8});
    s.x_gen = s.x;
    s.z = vec({1.5, -0.5});
    batch[3].push_back(s);
    PrototypeMap protos;
    protos[3] = s.z;
    const auto out = elbo_loss(batch, protos, vec({1, 1}));
    CHECK(out.total == doctest::Approx(0.0));
    CHECK(out.reconstruction == doctest::Approx(0.0));
    CHECK(out.kl == doctest::Approx(0.0));
}

TEST_CASE("elbo_loss on the hand-evaluated two-sample instance") {
    // sigma=(0.5,2): tr=4.25, log|Sigma|=0.
    // class 1: rc = 0.01+0.04+0+0.16 = 0.21, kl = (1.25+4.25-2)/2 = 1.75
    // class 2: rc = 4, kl = (4+4.25-2)/2 = 3.125
    const auto out = elbo_loss(two_sample_batch(), two_sample_protos(), vec({0.5, 2.0}));
    CHECK(out.reconstruction == doctest::Approx(4.21).epsilon(1e-12));
    CHECK(out.kl == doctest::Approx(4.875).epsilon(1e-12));
    CHECK(out.total == doctest::Approx(9.085).epsilon(1e-12));
}

TEST_CASE("elbo_loss per-class mean is duplication invariant") {
    ElboBatch batch = two_sample_batch();
    const auto base = elbo_loss(batch, two_sample_protos(), vec({0.5, 2.0}));
    batch[1].push_back(batch[1].front());
    batch[1].push_back(batch[1].front());
    const auto dup = elbo_loss(batch, two_sample_protos(), vec({0.5, 2.0}));
    CHECK(dup.total == doctest::Approx(base.total).epsilon(1e-12));
}

TEST_CASE("elbo_loss raises on a missing prototype") {
    PrototypeMap protos = two_sample_protos();
    protos.erase(2);
    CHECK_THROWS_AS(elbo_loss(two_sample_batch(), protos, vec({0.5, 2.0})), MissingPrototypeError);
}

TEST_CASE("dm_loss trivial and oracle values") {
    PrototypeMap protos;
    protos[0] = vec({1, 2, 3});
    LatentGroups groups;
    groups[0] = {vec({1, 2, 3}), vec({1, 2, 3})};
    CHECK(dm_loss(groups, protos) == doctest::Approx(0.0));

    groups[0] = {vec({3, 2, 3})};  // distance (2,0,0)
    CHECK(dm_loss(groups, protos) == doctest::Approx(4.0));
}

TEST_CASE("dm_loss matches a nested-loop oracle on a random 3-class instance") {
    RandomStream rng(303);
    PrototypeMap protos;
    LatentGroups groups;
    for (int cls = 0; cls < 3; ++cls) {
        protos[cls] = random_vec(rng, 4, -1, 1);
        const int n = 1 + static_cast<int>(rng.below(5));
        for (int i = 0; i < n; ++i) groups[cls].push_back(random_vec(rng, 4, -2, 2));
    }
    double want = 0.0;
    for (const auto& [cls, latents] : groups) {
        double cls_sum = 0.0;
        for (const auto& u : latents)
            for (long d = 0; d < 4; ++d) cls_sum += (u[d] - protos[cls][d]) * (u[d] - protos[cls][d]);
        want += cls_sum / static_cast<double>(latents.size());
    }
    CHECK(dm_loss(groups, protos) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("dm_loss raises on a missing prototype") {
    LatentGroups groups;
    groups[9] = {vec({1, 2})};
    CHECK_THROWS_AS(dm_loss(groups, PrototypeMap{}), MissingPrototypeError);
}

TEST_CASE("vtc_loss combines the terms") {
    LossBreakdown elbo;
    elbo.reconstruction = 1.2;
    elbo.kl = 0.8;
    elbo.total = 2.0;

    const auto zero = vtc_loss(elbo, 3.0, 0.0);
    CHECK(zero.total == doctest::Approx(2.0));

    // the paper's lambda = 0.1 setting
    const auto combined = vtc_loss(elbo, 3.0, 0.1);
    CHECK(combined.total == doctest::Approx(2.3));
    CHECK(combined.dm == doctest::Approx(3.0));
    CHECK(combined.reconstruction == doctest::Approx(1.2));

    const auto doubled = vtc_loss(elbo, 3.0, 0.2);
    CHECK(doubled.total - elbo.total == doctest::Approx(2.0 * (combined.total - elbo.total)));

    CHECK_THROWS_AS(vtc_loss(elbo, 3.0, -0.1), std::invalid_argument);
}

TEST_CASE("vtc_loss is affine in lambda with slope dm") {
    RandomStream rng(404);
    LossBreakdown elbo;
    elbo.reconstruction = rng.uniform(0, 5);
    elbo.kl = rng.uniform(-1, 5);
    elbo.total = elbo.reconstruction + elbo.kl;
    const double dm = rng.uniform(0, 4);
    for (double lambda : {0.0, 0.3, 0.7, 1.9}) {
        const auto out = vtc_loss(elbo, dm, lambda);
        CHECK(out.total == doctest::Approx(elbo.total + lambda * dm).epsilon(1e-12));
    }
}

TEST_CASE("losses are permutation invariant within class groups") {
    RandomStream rng(505);
    ElboBatch batch;
    PrototypeMap protos;
    protos[0] = random_vec(rng, 3, -1, 1);
    for (int i = 0; i < 4; ++i) {
        ElboSample s;
        std::vector<double> xv(6), gv(6);
        for (auto& v : xv) v = rng.uniform(0, 1);
        for (auto& v : gv) v = rng.uniform(0, 1);
        s.x = Tensor({6}, xv);
        s.x_gen = Tensor({6}, gv);
        s.z = random_vec(rng, 3, -1, 1);
        batch[0].push_back(s);
    }
    const Vec sigma = random_vec(rng, 3, 0.3, 2.0);
    const auto base = elbo_loss(batch, protos, sigma);
    std::reverse(batch[0].begin(), batch[0].end());
    const auto flipped = elbo_loss(batch, protos, sigma);
    CHECK(base.total == doctest::Approx(flipped.total).epsilon(1e-12));
}

TEST_CASE("clamp_sigma floors entries") {
    const Vec out = clamp_sigma(vec({0.5, 0.0, -3.0, 1e-9}));
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(kSigmaFloor));
    CHECK(out[2] == doctest::Approx(kSigmaFloor));
    CHECK(out[3] == doctest::Approx(kSigmaFloor));
}
