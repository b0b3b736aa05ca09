#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "vtcfed/errors.hpp"
#include "vtcfed/zoo.hpp"

using namespace vtcfed;

namespace {

Tensor random_batch(RandomStream& rng, const zoo::DataProfile& profile, long n) {
    Tensor t({n, profile.channels, profile.height, profile.width});
    for (auto& v : t.data) v = rng.uniform(0, 1);
    return t;
}

}  // namespace

TEST_CASE("build_local_model is deterministic under seed") {
    const auto profile = zoo::profile_by_name("digits");
    const auto clusters = zoo::make_clusters(3);
    auto a = zoo::build_local_model(clusters[1], profile, 196, 42);
    auto b = zoo::build_local_model(clusters[1], profile, 196, 42);
    CHECK(a.extractor.state_flat() == b.extractor.state_flat());
    CHECK(a.head.state_flat() == b.head.state_flat());
    auto c = zoo::build_local_model(clusters[1], profile, 196, 43);
    CHECK(a.extractor.state_flat() != c.extractor.state_flat());
}

TEST_CASE("clusters 1..5 give strictly increasing parameter counts") {
    const auto profile = zoo::profile_by_name("mnist");
    long prev = 0;
    for (const auto& arch : zoo::make_clusters(5)) {
        auto m = zoo::build_local_model(arch, profile, 980, 1);
        CHECK(m.param_elements() > prev);
        prev = m.param_elements();
    }
}

TEST_CASE("forward on a zero input gives finite scores of length C") {
    const auto profile = zoo::profile_by_name("digits");
    for (const auto& arch : zoo::make_clusters(5)) {
        auto m = zoo::build_local_model(arch, profile, 196, 7);
        Tensor zero({2, profile.channels, profile.height, profile.width});
        Tensor scores = m.forward_scores(zero, nn::Mode::kEval);
        CHECK(scores.shape == std::vector<long>{2, profile.classes});
        CHECK(scores.all_finite());
    }
}

TEST_CASE("finite inputs give finite scores at initialization") {
    RandomStream rng(11);
    const auto profile = zoo::profile_by_name("toy");
    for (const auto& arch : zoo::make_clusters(4)) {
        auto m = zoo::build_local_model(arch, profile, 128, 5);
        Tensor scores = m.forward_scores(random_batch(rng, profile, 3), nn::Mode::kEval);
        CHECK(scores.all_finite());
    }
}

TEST_CASE("p must factor into the latent grid") {
    const auto profile = zoo::profile_by_name("digits");  // grid 7x7 = 49
    const auto clusters = zoo::make_clusters(2);
    CHECK_THROWS_AS(zoo::build_local_model(clusters[0], profile, 100, 1), ConfigError);
    CHECK_THROWS_AS(zoo::build_vtc_decoder(profile, 100, 1), ConfigError);
}

TEST_CASE("mnist-profile decoder matches the published geometry") {
    auto d = zoo::build_vtc_decoder(zoo::profile_by_name("mnist"), 980, 3);
    CHECK(d.latent_c == 20);
    CHECK(d.latent_h == 7);
    CHECK(d.latent_w == 7);
    RandomStream rng(5);
    Tensor latents({2, 980});
    for (auto& v : latents.data) v = rng.gaussian();
    Tensor out = d.decode(latents, nn::Mode::kEval);
    CHECK(out.shape == std::vector<long>{2, 1, 28, 28});
}

TEST_CASE("decoder output shape equals the profile input shape, spatial dims quadruple") {
    RandomStream rng(6);
    for (const char* name : {"mnist", "digits", "toy"}) {
        const auto profile = zoo::profile_by_name(name);
        auto d = zoo::build_vtc_decoder(profile, profile.default_p, 9);
        CHECK(d.output_shape == profile.input_shape());
        CHECK(d.output_shape[1] == 4 * d.latent_h);
        CHECK(d.output_shape[2] == 4 * d.latent_w);
        Tensor latents({3, static_cast<long>(profile.default_p)});
        for (auto& v : latents.data) v = 3.0 * rng.gaussian();
        Tensor out = d.decode(latents, nn::Mode::kEval);
        CHECK(out.shape[1] == profile.channels);
        CHECK(out.shape[2] == profile.height);
        CHECK(out.shape[3] == profile.width);
        for (double v : out.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("decoders with the same seed are identical") {
    const auto profile = zoo::profile_by_name("digits");
    auto a = zoo::build_vtc_decoder(profile, 196, 21);
    auto b = zoo::build_vtc_decoder(profile, 196, 21);
    CHECK(a.net.state_flat() == b.net.state_flat());
    auto c = a.clone();
    CHECK(c.net.state_flat() == a.net.state_flat());
}

TEST_CASE("classification_loss basics") {
    Vec uniform = Vec::Zero(10);
    CHECK(zoo::classification_loss(uniform, 4) == doctest::Approx(std::log(10.0)));

    Vec peaked = Vec::Zero(10);
    peaked[4] = 50.0;
    CHECK(zoo::classification_loss(peaked, 4) < 1e-10);

    CHECK_THROWS_AS(zoo::classification_loss(uniform, 10), std::invalid_argument);
    CHECK_THROWS_AS(zoo::classification_loss(uniform, -1), std::invalid_argument);
}

TEST_CASE("classification_loss matches a direct log-sum-exp oracle") {
    RandomStream rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        Vec scores(6);
        for (long i = 0; i < 6; ++i) scores[i] = rng.uniform(-5, 5);
        const int y = static_cast<int>(rng.below(6));
        double lse = 0.0;
        for (long i = 0; i < 6; ++i) lse += std::exp(scores[i]);
        const double want = std::log(lse) - scores[y];
        CHECK(zoo::classification_loss(scores, y) == doctest::Approx(want).epsilon(1e-10));
        // gradient sums to zero and is softmax - onehot
        const Vec g = zoo::classification_grad(scores, y);
        CHECK(g.sum() == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("local_prototypes: exact means of extractor outputs") {
    RandomStream rng(41);
    const auto profile = zoo::profile_by_name("toy");
    auto m = zoo::build_local_model(zoo::make_clusters(2)[0], profile, 128, 17);

    // one sample per class -> prototype equals that sample's latent
    Tensor xs = random_batch(rng, profile, 3);
    std::vector<int> ys = {0, 1, 2};
    auto protos = zoo::local_prototypes(m, xs, ys);
    CHECK(protos.size() == 3);
    Tensor z = m.extract(xs, nn::Mode::kEval);
    for (int i = 0; i < 3; ++i) CHECK((protos[i] - Vec(z.sample(i))).norm() == doctest::Approx(0.0));

    // two samples in a class -> mean of the two
    std::vector<int> ys2 = {1, 1, 2};
    auto protos2 = zoo::local_prototypes(m, xs, ys2);
    const Vec want = 0.5 * (Vec(z.sample(0)) + Vec(z.sample(1)));
    CHECK((protos2[1] - want).norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("local_prototypes matches a loop-and-average oracle and ignores order") {
    RandomStream rng(43);
    const auto profile = zoo::profile_by_name("toy");
    auto m = zoo::build_local_model(zoo::make_clusters(2)[1], profile, 128, 19);
    const long n = 30;
    Tensor xs = random_batch(rng, profile, n);
    std::vector<int> ys(n);
    for (auto& y : ys) y = static_cast<int>(rng.below(4));

    auto protos = zoo::local_prototypes(m, xs, ys);
    Tensor z = m.extract(xs, nn::Mode::kEval);
    std::map<int, std::pair<Vec, int>> oracle;
    for (long i = 0; i < n; ++i) {
        auto [it, fresh] = oracle.try_emplace(ys[static_cast<size_t>(i)], std::make_pair(Vec::Zero(128), 0));
        it->second.first += z.sample(i);
        it->second.second += 1;
    }
    for (auto& [y, acc] : oracle) {
        const Vec want = acc.first / acc.second;
        CHECK((protos[y] - want).norm() / std::max(1.0, want.norm()) < 1e-10);
    }

    // order invariance: reversed data gives the same prototypes
    std::vector<int> rev_idx(n);
    for (long i = 0; i < n; ++i) rev_idx[static_cast<size_t>(i)] = static_cast<int>(n - 1 - i);
    Tensor xs_rev({n, profile.channels, profile.height, profile.width});
    std::vector<int> ys_rev(n);
    const long per = xs.numel() / n;
    for (long i = 0; i < n; ++i) {
        std::copy(xs.data.begin() + (n - 1 - i) * per, xs.data.begin() + (n - i) * per,
                  xs_rev.data.begin() + i * per);
        ys_rev[static_cast<size_t>(i)] = ys[static_cast<size_t>(n - 1 - i)];
    }
    auto protos_rev = zoo::local_prototypes(m, xs_rev, ys_rev);
    for (auto& [y, v] : protos) CHECK((protos_rev[y] - v).norm() < 1e-10);
}

TEST_CASE("checkpoint round-trip preserves parameters at float32 precision") {
    const auto profile = zoo::profile_by_name("toy");
    auto m = zoo::build_local_model(zoo::make_clusters(2)[1], profile, 128, 23);
    const std::string path = std::filesystem::temp_directory_path() / "vtcfed_test_model.ckpt";
    zoo::save_model_checkpoint(path, m, 23);

    auto m2 = zoo::build_local_model(zoo::make_clusters(2)[1], profile, 128, 99);
    zoo::load_model_checkpoint(path, m2);
    const auto a = m.extractor.state_flat(), b = m2.extractor.state_flat();
    for (size_t i = 0; i < a.size(); ++i)
        CHECK(std::abs(a[i] - b[i]) <= std::abs(a[i]) * 1e-6 + 1e-7);  // float32 quantization

    // wrong architecture rejected
    auto wrong = zoo::build_local_model(zoo::make_clusters(2)[0], profile, 128, 1);
    CHECK_THROWS_AS(zoo::load_model_checkpoint(path, wrong), IngestionError);
    std::filesystem::remove(path);

    auto d = zoo::build_vtc_decoder(profile, 128, 5);
    const std::string dpath = std::filesystem::temp_directory_path() / "vtcfed_test_decoder.ckpt";
    zoo::save_decoder_checkpoint(dpath, d, 5);
    auto d2 = zoo::build_vtc_decoder(profile, 128, 77);
    zoo::load_decoder_checkpoint(dpath, d2);
    const auto da = d.net.state_flat(), db = d2.net.state_flat();
    for (size_t i = 0; i < da.size(); ++i) CHECK(std::abs(da[i] - db[i]) <= std::abs(da[i]) * 1e-6 + 1e-7);
    std::filesystem::remove(dpath);
}

TEST_CASE("unknown profile is rejected") { CHECK_THROWS_AS(zoo::profile_by_name("cifar99"), ConfigError); }
