#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vtcfed/tensor.hpp"
#include "vtcfed/zoo.hpp"

namespace vtcfed::data {

struct DatasetBundle {
    std::string profile;
    Tensor train_x;  // (N, C, H, W), values in [0,1]
    std::vector<int> train_y;
    Tensor test_x;  // disjoint from train
    std::vector<int> test_y;
    int classes = 0;
};

// Per-client index lists into the training set.
struct PartitionSpec {
    std::vector<std::vector<int>> shards;
    double alpha = 0.0;
    std::uint64_t seed = 0;

    int clients() const { return static_cast<int>(shards.size()); }
    long assigned() const {
        long n = 0;
        for (const auto& s : shards) n += static_cast<long>(s.size());
        return n;
    }
};

// Per-class Dirichlet(alpha) split: for each class, a K-dim Dirichlet draw
// allocates that class's (shuffled) indices at rounded cumulative cut points.
// Empty shards are repaired by moving one sample from the largest shard.
// Throws PartitionError when there are fewer samples than clients.
PartitionSpec dirichlet_partition(const std::vector<int>& labels, int clients, double alpha, std::uint64_t seed);

// Loads a dataset per profile. "mnist" reads IDX files from root_path;
// "digits" and "toy" are procedural and deterministic under seed. Caps, when
// nonzero, subsample deterministically under seed. Pixels are in [0,1].
DatasetBundle load_dataset(const zoo::DataProfile& profile, const std::string& root_path, long train_cap,
                           long test_cap, std::uint64_t seed);

// Reproducibility-audit manifest: header (convention, alpha, seed, counts)
// plus one "client <id> : <indices>" line per shard.
void write_partition_manifest(std::ostream& out, const PartitionSpec& spec);
void write_partition_manifest(const std::string& path, const PartitionSpec& spec);
PartitionSpec read_partition_manifest(std::istream& in);
PartitionSpec read_partition_manifest(const std::string& path);

}  // namespace vtcfed::data
