#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vfl/matrix.hpp"

namespace vfl {

struct Dataset {
    Matrix features; // K x D
    std::vector<int> labels;
    int n_classes = 0;
};

// Contiguous, disjoint column ranges covering [0, D), one per participant.
struct PartitionSpec {
    int n_participants = 0;
    std::vector<std::pair<std::size_t, std::size_t>> ranges; // [start, end)
    std::vector<std::size_t> widths() const;
};

// One split of a vertically partitioned dataset: per-participant feature
// blocks sharing a single row order, plus the (server-held) labels.
struct PartitionedSplit {
    std::vector<Matrix> blocks;
    std::vector<int> labels;
    std::size_t n_rows() const { return labels.size(); }
};

struct SplitFractions {
    double train = 0.0;
    double test = 0.0;
    double aux = 0.0;
};

struct PartitionedDataset {
    PartitionedSplit train;
    PartitionedSplit test;
    PartitionedSplit aux; // attacker-side auxiliary data, never seen by the server
    PartitionSpec spec;
    int n_classes = 0;
};

// Class prototypes drawn from N(0, separation^2) over all dims, samples from
// N(prototype, noise_std^2). Every participant's block correlates with every
// other's because the prototype spans all columns. Class counts balanced
// within +-1; bit-identical per seed.
Dataset generate_synthetic(int n_classes, std::size_t dim, std::size_t k_train,
                           std::size_t k_test, std::size_t k_aux, double separation,
                           double noise_std, std::uint64_t seed);

// Header row required; features min-max normalized per column to [0,1]
// (constant columns map to 0); labels mapped to ids by first appearance.
Dataset load_csv(const std::string& path, const std::string& label_column, int n_classes);

// Near-equal contiguous column blocks (widths differ by at most 1) and a
// shuffled row assignment into train/test/aux with the given fractions.
// Row order is identical across participants within each split.
PartitionedDataset partition_vertical(const Dataset& dataset, int n_participants,
                                      SplitFractions fractions, std::uint64_t seed);

} // namespace vfl
