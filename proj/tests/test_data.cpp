#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vtcfed/data.hpp"
#include "vtcfed/errors.hpp"
#include "vtcfed/rng.hpp"

using namespace vtcfed;
namespace fs = std::filesystem;

namespace {

std::vector<int> balanced_labels(int classes, int per_class) {
    std::vector<int> out;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) out.push_back(c);
    return out;
}

// mean over shards of TV(shard class distribution, global class distribution)
double mean_shard_tv(const data::PartitionSpec& spec, const std::vector<int>& labels, int classes) {
    std::vector<double> global(static_cast<size_t>(classes), 0.0);
    for (int y : labels) global[static_cast<size_t>(y)] += 1.0;
    for (auto& v : global) v /= static_cast<double>(labels.size());
    double sum = 0.0;
    for (const auto& shard : spec.shards) {
        std::vector<double> local(static_cast<size_t>(classes), 0.0);
        for (int idx : shard) local[static_cast<size_t>(labels[static_cast<size_t>(idx)])] += 1.0;
        for (auto& v : local) v /= static_cast<double>(shard.size());
        double tv = 0.0;
        for (int c = 0; c < classes; ++c) tv += std::abs(local[static_cast<size_t>(c)] - global[static_cast<size_t>(c)]);
        sum += 0.5 * tv;
    }
    return sum / static_cast<double>(spec.shards.size());
}

void check_disjoint_cover(const data::PartitionSpec& spec, size_t n) {
    std::set<int> seen;
    long total = 0;
    for (const auto& shard : spec.shards) {
        CHECK(!shard.empty());
        for (int idx : shard) {
            CHECK(seen.insert(idx).second);  // disjoint
            ++total;
        }
    }
    CHECK(static_cast<size_t>(total) == n);  // exact cover
}

}  // namespace

TEST_CASE("huge alpha gives near-uniform shards") {
    const auto labels = balanced_labels(4, 100);
    const auto spec = data::dirichlet_partition(labels, 4, 1e6, 7);
    check_disjoint_cover(spec, labels.size());
    for (const auto& shard : spec.shards) {
        std::map<int, int> hist;
        for (int idx : shard) hist[labels[static_cast<size_t>(idx)]]++;
        for (const auto& [cls, count] : hist)
            CHECK(std::abs(count - 25) <= 2);  // within 5% of uniform (25 per class per shard)
    }
}

TEST_CASE("K = 1 puts every index in the single shard") {
    const auto labels = balanced_labels(3, 10);
    const auto spec = data::dirichlet_partition(labels, 1, 0.5, 3);
    CHECK(spec.shards.size() == 1);
    CHECK(spec.shards[0].size() == labels.size());
}

TEST_CASE("alpha 0.1 is more skewed than alpha 1.0 (20-seed average)") {
    std::vector<int> labels;
    RandomStream rng(99);
    for (int i = 0; i < 1000; ++i) labels.push_back(static_cast<int>(rng.below(2)));
    double tv_01 = 0.0, tv_10 = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        tv_01 += mean_shard_tv(data::dirichlet_partition(labels, 10, 0.1, seed), labels, 2);
        tv_10 += mean_shard_tv(data::dirichlet_partition(labels, 10, 1.0, seed), labels, 2);
    }
    CHECK(tv_01 / 20.0 > tv_10 / 20.0);
}

TEST_CASE("partition determinism and error cases") {
    const auto labels = balanced_labels(5, 20);
    const auto a = data::dirichlet_partition(labels, 7, 0.3, 11);
    const auto b = data::dirichlet_partition(labels, 7, 0.3, 11);
    CHECK(a.shards == b.shards);
    const auto c = data::dirichlet_partition(labels, 7, 0.3, 12);
    CHECK(a.shards != c.shards);

    CHECK_THROWS_AS(data::dirichlet_partition(std::vector<int>{0, 1}, 3, 0.5, 1), PartitionError);
    CHECK_THROWS_AS(data::dirichlet_partition(labels, 0, 0.5, 1), PartitionError);
    CHECK_THROWS_AS(data::dirichlet_partition(labels, 3, 0.0, 1), PartitionError);
}

TEST_CASE("empty shards are repaired under extreme skew") {
    // one class, tiny alpha: the Dirichlet draw concentrates on few clients
    std::vector<int> labels(40, 0);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto spec = data::dirichlet_partition(labels, 8, 0.05, seed);
        check_disjoint_cover(spec, labels.size());
    }
}

TEST_CASE("procedural digits: deterministic, bounded, disjoint splits") {
    const auto profile = zoo::profile_by_name("digits");
    const auto a = data::load_dataset(profile, "", 200, 80, 5);
    const auto b = data::load_dataset(profile, "", 200, 80, 5);
    CHECK(a.train_x.data == b.train_x.data);
    CHECK(a.train_y == b.train_y);
    CHECK(a.train_x.shape == std::vector<long>{200, 1, 28, 28});
    CHECK(a.test_x.shape == std::vector<long>{80, 1, 28, 28});
    for (double v : a.train_x.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (int y : a.train_y) {
        CHECK(y >= 0);
        CHECK(y < 10);
    }
    // train and test come from different streams
    CHECK((a.train_x.sample(0) - a.test_x.sample(0)).norm() > 0.0);

    const auto c = data::load_dataset(profile, "", 200, 80, 6);
    CHECK(a.train_x.data != c.train_x.data);
}

TEST_CASE("toy profile loads with defaults") {
    const auto profile = zoo::profile_by_name("toy");
    const auto b = data::load_dataset(profile, "", 0, 0, 1);
    CHECK(b.train_x.dim(0) == 512);
    CHECK(b.test_x.dim(0) == 256);
    CHECK(b.classes == 4);
}

namespace {

void write_be32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(b), 4);
}

// fabricate a tiny IDX pair: `n` 28x28 images with pixel value = image index,
// labels = index mod 10
void write_fake_mnist(const fs::path& dir, const std::string& img_name, const std::string& lbl_name, int n) {
    std::ofstream fi(dir / img_name, std::ios::binary);
    write_be32(fi, 2051);
    write_be32(fi, static_cast<std::uint32_t>(n));
    write_be32(fi, 28);
    write_be32(fi, 28);
    for (int i = 0; i < n; ++i) {
        std::vector<unsigned char> img(28 * 28, static_cast<unsigned char>(i * 20));
        fi.write(reinterpret_cast<char*>(img.data()), 28 * 28);
    }
    std::ofstream fl(dir / lbl_name, std::ios::binary);
    write_be32(fl, 2049);
    write_be32(fl, static_cast<std::uint32_t>(n));
    for (int i = 0; i < n; ++i) {
        const unsigned char y = static_cast<unsigned char>(i % 10);
        fl.write(reinterpret_cast<const char*>(&y), 1);
    }
}

}  // namespace

TEST_CASE("IDX loader reads fabricated MNIST files") {
    const fs::path dir = fs::temp_directory_path() / "vtcfed_idx_test";
    fs::create_directories(dir);
    write_fake_mnist(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", 12);
    write_fake_mnist(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 6);

    const auto profile = zoo::profile_by_name("mnist");
    const auto bundle = data::load_dataset(profile, dir.string(), 0, 0, 1);
    CHECK(bundle.train_x.shape == std::vector<long>{12, 1, 28, 28});
    CHECK(bundle.test_x.dim(0) == 6);
    CHECK(bundle.train_y[3] == 3);
    CHECK(bundle.train_x.at(3, 0, 0, 0) == doctest::Approx(60.0 / 255.0));

    // capped subsampling is deterministic
    const auto c1 = data::load_dataset(profile, dir.string(), 5, 3, 9);
    const auto c2 = data::load_dataset(profile, dir.string(), 5, 3, 9);
    CHECK(c1.train_y == c2.train_y);
    CHECK(c1.train_x.dim(0) == 5);
    CHECK(c1.test_x.dim(0) == 3);

    fs::remove_all(dir);
}

TEST_CASE("missing dataset files raise an ingestion error naming the path") {
    const auto profile = zoo::profile_by_name("mnist");
    try {
        data::load_dataset(profile, "/nonexistent_vtcfed_dir", 0, 0, 1);
        CHECK(false);
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("/nonexistent_vtcfed_dir") != std::string::npos);
    }
}

TEST_CASE("corrupt IDX magic is rejected") {
    const fs::path dir = fs::temp_directory_path() / "vtcfed_idx_bad";
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "train-images-idx3-ubyte", std::ios::binary);
        write_be32(f, 1234);
    }
    {
        std::ofstream f(dir / "train-labels-idx1-ubyte", std::ios::binary);
        write_be32(f, 2049);
        write_be32(f, 0);
    }
    const auto profile = zoo::profile_by_name("mnist");
    CHECK_THROWS_AS(data::load_dataset(profile, dir.string(), 0, 0, 1), IngestionError);
    fs::remove_all(dir);
}

TEST_CASE("partition manifest round-trips") {
    const auto labels = balanced_labels(3, 30);
    const auto spec = data::dirichlet_partition(labels, 4, 0.4, 17);
    std::ostringstream out;
    data::write_partition_manifest(out, spec);
    std::istringstream in(out.str());
    const auto back = data::read_partition_manifest(in);
    CHECK(back.shards == spec.shards);
    CHECK(back.alpha == doctest::Approx(spec.alpha));
    CHECK(back.seed == spec.seed);
}
