#include "vfl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "vfl/errors.hpp"
#include "vfl/rng.hpp"

namespace vfl {

std::vector<std::size_t> PartitionSpec::widths() const {
    std::vector<std::size_t> w;
    w.reserve(ranges.size());
    for (const auto& [start, end] : ranges) w.push_back(end - start);
    return w;
}

Dataset generate_synthetic(int n_classes, std::size_t dim, std::size_t k_train,
                           std::size_t k_test, std::size_t k_aux, double separation,
                           double noise_std, std::uint64_t seed) {
    if (n_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (dim == 0) throw ConfigError("synthetic: dim must be >= 1");
    if (k_train == 0 || k_test == 0) throw ConfigError("synthetic: zero sample count");
    if (!(separation > 0.0)) throw ConfigError("synthetic: separation must be > 0");
    if (noise_std < 0.0) throw ConfigError("synthetic: noise_std must be >= 0");

    const std::size_t total = k_train + k_test + k_aux;
    std::mt19937_64 rng = make_rng(seed, 11);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix prototypes(static_cast<std::size_t>(n_classes), dim);
    for (double& v : prototypes.data) v = normal(rng) * separation;

    Dataset ds;
    ds.n_classes = n_classes;
    ds.features = Matrix(total, dim);
    ds.labels.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
        int y = static_cast<int>(i % static_cast<std::size_t>(n_classes));
        ds.labels[i] = y;
        const double* proto = prototypes.data.data() + static_cast<std::size_t>(y) * dim;
        double* x = ds.features.data.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) x[j] = proto[j] + normal(rng) * noise_std;
    }
    return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_cell(const std::string& cell, std::size_t data_row, const std::string& col_name) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw DataError("csv: non-numeric value '" + cell + "' at row " +
                        std::to_string(data_row) + ", column '" + col_name + "'");
    }
    return value;
}

} // namespace

Dataset load_csv(const std::string& path, const std::string& label_column, int n_classes) {
    std::ifstream is(path);
    if (!is) throw DataError("csv: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(is, line)) throw DataError("csv: '" + path + "' is empty");
    std::vector<std::string> header = split_csv_line(line);
    std::size_t label_idx = header.size();
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == label_column) label_idx = j;
    }
    if (label_idx == header.size()) {
        throw DataError("csv: label column '" + label_column + "' not found in header");
    }
    const std::size_t dim = header.size() - 1;
    if (dim == 0) throw DataError("csv: no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    std::unordered_map<std::string, int> label_ids;
    std::vector<std::string> label_order;
    std::size_t data_row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ++data_row;
        std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError("csv: row " + std::to_string(data_row) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        }
        for (std::size_t j = 0; j < cells.size(); ++j) {
            if (j == label_idx) continue;
            values.push_back(parse_cell(cells[j], data_row, header[j]));
        }
        const std::string& raw = cells[label_idx];
        auto it = label_ids.find(raw);
        if (it == label_ids.end()) {
            it = label_ids.emplace(raw, static_cast<int>(label_order.size())).first;
            label_order.push_back(raw);
        }
        labels.push_back(it->second);
    }
    if (data_row == 0) throw DataError("csv: no data rows in '" + path + "'");
    if (static_cast<int>(label_order.size()) != n_classes) {
        throw DataError("csv: found " + std::to_string(label_order.size()) +
                        " distinct labels, config says " + std::to_string(n_classes));
    }

    Dataset ds;
    ds.n_classes = n_classes;
    ds.labels = std::move(labels);
    ds.features = Matrix(data_row, dim);
    ds.features.data = std::move(values);

    // Per-column min-max to [0,1]; a constant column maps to all zeros.
    for (std::size_t j = 0; j < dim; ++j) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t i = 0; i < ds.features.rows; ++i) {
            lo = std::min(lo, ds.features(i, j));
            hi = std::max(hi, ds.features(i, j));
        }
        double span = hi - lo;
        for (std::size_t i = 0; i < ds.features.rows; ++i) {
            ds.features(i, j) = span > 0.0 ? (ds.features(i, j) - lo) / span : 0.0;
        }
    }
    return ds;
}

namespace {

PartitionedSplit make_split(const Dataset& ds, const PartitionSpec& spec,
                            std::span<const int> row_ids) {
    PartitionedSplit split;
    split.labels.reserve(row_ids.size());
    for (int r : row_ids) split.labels.push_back(ds.labels[static_cast<std::size_t>(r)]);
    split.blocks.reserve(spec.ranges.size());
    for (const auto& [start, end] : spec.ranges) {
        Matrix block(row_ids.size(), end - start);
        for (std::size_t i = 0; i < row_ids.size(); ++i) {
            const double* src =
                ds.features.data.data() + static_cast<std::size_t>(row_ids[i]) * ds.features.cols;
            double* dst = block.data.data() + i * block.cols;
            for (std::size_t j = start; j < end; ++j) *dst++ = src[j];
        }
        split.blocks.push_back(std::move(block));
    }
    return split;
}

} // namespace

PartitionedDataset partition_vertical(const Dataset& dataset, int n_participants,
                                      SplitFractions fractions, std::uint64_t seed) {
    if (n_participants < 2) throw ConfigError("partition: need at least 2 participants");
    if (static_cast<std::size_t>(n_participants) > dataset.features.cols) {
        throw ConfigError("partition: more participants than feature columns");
    }
    double sum = fractions.train + fractions.test + fractions.aux;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("partition: split fractions sum to " + std::to_string(sum) +
                          ", expected 1");
    }

    PartitionedDataset out;
    out.n_classes = dataset.n_classes;
    out.spec.n_participants = n_participants;
    const std::size_t d = dataset.features.cols;
    const std::size_t base = d / static_cast<std::size_t>(n_participants);
    const std::size_t rem = d % static_cast<std::size_t>(n_participants);
    std::size_t offset = 0;
    for (int i = 0; i < n_participants; ++i) {
        std::size_t w = base + (static_cast<std::size_t>(i) < rem ? 1 : 0);
        out.spec.ranges.emplace_back(offset, offset + w);
        offset += w;
    }

    const std::size_t k = dataset.features.rows;
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng = make_rng(seed, 13);
    std::shuffle(perm.begin(), perm.end(), rng);

    auto n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(k)));
    auto n_test = static_cast<std::size_t>(std::llround(fractions.test * static_cast<double>(k)));
    if (n_train + n_test > k) throw ConfigError("partition: rounded split sizes exceed dataset");
    std::span<const int> all(perm);
    out.train = make_split(dataset, out.spec, all.subspan(0, n_train));
    out.test = make_split(dataset, out.spec, all.subspan(n_train, n_test));
    out.aux = make_split(dataset, out.spec, all.subspan(n_train + n_test));

    std::vector<bool> seen(static_cast<std::size_t>(dataset.n_classes), false);
    for (int y : out.train.labels) seen[static_cast<std::size_t>(y)] = true;
    for (std::size_t c = 0; c < seen.size(); ++c) {
        if (!seen[c]) {
            throw DataError("partition: class " + std::to_string(c) +
                            " missing from the training split");
        }
    }
    return out;
}

} // namespace vfl
