// CSV ingestion for the 41-feature binary-label schema, train-statistics
// standardization, stratified splitting, and the synthetic generator used by
// tests and the --synthetic training path.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "regunet/matrix.hpp"
#include "regunet/textio.hpp"

namespace regunet {

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Per-column transform fitted on the training partition.
struct Standardization {
    std::vector<double> mean;
    std::vector<double> std_dev;
};

struct Dataset {
    Matrix X;                                  // n x features
    Matrix y;                                  // n x 1, entries in {0,1}
    std::vector<std::string> feature_names;
    std::optional<Standardization> standardization;
    std::size_t dropped_rows = 0;
};

struct SplitIndices {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
};

enum class MissingPolicy { drop, median };

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
    return s.substr(b, e - b);
}

/// Comma splitter with double-quote support ("" escapes a quote).
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') { cur += '"'; ++i; }
                else in_quotes = false;
            } else cur += c;
        } else {
            if (c == '"') in_quotes = true;
            else if (c == ',') { fields.push_back(cur); cur.clear(); }
            else cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::optional<double> parse_double(const std::string& raw) {
    const std::string s = trim(raw);
    if (s.empty()) return std::nullopt;
    double value = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last || !std::isfinite(value)) return std::nullopt;
    return value;
}

inline double median_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace detail

/// Loads a comma-separated file whose first row is the header. Every
/// non-label column becomes a feature in header order. Rows with missing or
/// unparseable cells are dropped (default) or median-imputed; a parseable
/// label outside {0,1} is a hard error. When any rows are dropped and a
/// report stream is given, a one-line count is written to it.
inline Dataset load_csv(const std::string& path, const std::string& label_column,
                        MissingPolicy policy = MissingPolicy::drop,
                        std::ostream* report = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("load_csv: cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.empty()) throw DataError("load_csv: '" + path + "' is empty");

    const std::vector<std::string> header_raw = detail::split_csv_line(lines[0]);
    std::vector<std::string> header;
    header.reserve(header_raw.size());
    for (const std::string& h : header_raw) header.push_back(detail::trim(h));

    std::size_t label_col = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == label_column) { label_col = j; break; }
    if (label_col == header.size())
        throw DataError("load_csv: label column '" + label_column + "' not found in '" + path + "'");

    std::vector<std::string> feature_names;
    std::vector<std::size_t> feature_cols;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != label_col) { feature_names.push_back(header[j]); feature_cols.push_back(j); }
    if (feature_names.empty()) throw DataError("load_csv: no feature columns besides the label");

    const std::size_t n_features = feature_cols.size();
    struct ParsedRow {
        std::vector<std::optional<double>> features;
        double label = 0.0;
        bool usable_structure = false;
    };
    std::vector<ParsedRow> parsed;
    std::vector<std::size_t> col_nonblank(n_features, 0), col_numeric(n_features, 0);
    std::vector<std::vector<double>> col_values(n_features);
    std::size_t dropped = 0;

    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (detail::trim(lines[li]).empty()) continue;  // ignore blank lines
        const std::size_t file_line = li + 1;
        const std::vector<std::string> fields = detail::split_csv_line(lines[li]);
        ParsedRow row;
        if (fields.size() != header.size()) {
            ++dropped;
            parsed.push_back(std::move(row));
            continue;
        }
        const std::string label_cell = detail::trim(fields[label_col]);
        const std::optional<double> label = detail::parse_double(label_cell);
        if (label && *label != 0.0 && *label != 1.0)
            throw DataError("load_csv: line " + std::to_string(file_line) + ": label value '" +
                            label_cell + "' is not binary");
        row.features.resize(n_features);
        for (std::size_t f = 0; f < n_features; ++f) {
            const std::string cell = detail::trim(fields[feature_cols[f]]);
            if (!cell.empty()) ++col_nonblank[f];
            const std::optional<double> v = detail::parse_double(cell);
            row.features[f] = v;
            if (v) { ++col_numeric[f]; col_values[f].push_back(*v); }
        }
        if (!label) {
            ++dropped;  // a row without a usable label can never be imputed
            parsed.push_back(std::move(row));
            continue;
        }
        row.label = *label;
        row.usable_structure = true;
        parsed.push_back(std::move(row));
    }

    for (std::size_t f = 0; f < n_features; ++f)
        if (col_nonblank[f] > 0 && col_numeric[f] == 0)
            throw DataError("load_csv: feature column '" + feature_names[f] + "' is not numeric");

    std::vector<double> medians(n_features, 0.0);
    if (policy == MissingPolicy::median) {
        for (std::size_t f = 0; f < n_features; ++f) {
            if (col_values[f].empty())
                throw DataError("load_csv: feature column '" + feature_names[f] +
                                "' has no numeric values to impute from");
            medians[f] = detail::median_of(col_values[f]);
        }
    }

    std::vector<double> x_data;
    std::vector<double> y_data;
    for (ParsedRow& row : parsed) {
        if (!row.usable_structure) continue;
        bool missing = false;
        for (const auto& v : row.features)
            if (!v) { missing = true; break; }
        if (missing && policy == MissingPolicy::drop) {
            ++dropped;
            continue;
        }
        for (std::size_t f = 0; f < n_features; ++f)
            x_data.push_back(row.features[f] ? *row.features[f] : medians[f]);
        y_data.push_back(row.label);
    }
    if (y_data.empty()) throw DataError("load_csv: zero usable rows in '" + path + "'");

    if (report && dropped > 0)
        *report << "load_csv: dropped " << dropped << " row(s) of '" << path
                << "' (missing or unparseable cells)\n";

    const std::size_t n = y_data.size();
    return Dataset{Matrix(n, n_features, std::move(x_data)), Matrix(n, 1, std::move(y_data)),
                   std::move(feature_names), std::nullopt, dropped};
}

/// Z-scores every column using mean/std fitted on the training rows only
/// (population std, floored to 1 for constant columns). Applying it twice is
/// rejected.
inline Dataset standardize(const Dataset& ds, const SplitIndices& split) {
    if (ds.standardization)
        throw std::logic_error("standardize: dataset is already standardized");
    if (split.train_idx.empty()) throw DataError("standardize: empty training partition");
    const std::size_t d = ds.X.cols();
    for (std::size_t idx : split.train_idx)
        if (idx >= ds.X.rows()) throw DataError("standardize: train index out of range");

    Standardization tr;
    tr.mean.assign(d, 0.0);
    tr.std_dev.assign(d, 0.0);
    const double inv_n = 1.0 / static_cast<double>(split.train_idx.size());
    for (std::size_t idx : split.train_idx) {
        const double* r = ds.X.row(idx);
        for (std::size_t j = 0; j < d; ++j) tr.mean[j] += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) tr.mean[j] *= inv_n;
    for (std::size_t idx : split.train_idx) {
        const double* r = ds.X.row(idx);
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = r[j] - tr.mean[j];
            tr.std_dev[j] += diff * diff;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        tr.std_dev[j] = std::sqrt(tr.std_dev[j] * inv_n);
        if (tr.std_dev[j] < 1e-12) tr.std_dev[j] = 1.0;  // constant columns map to zeros
    }

    Matrix X(ds.X.rows(), d);
    for (std::size_t i = 0; i < ds.X.rows(); ++i) {
        const double* src = ds.X.row(i);
        double* dst = X.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] = (src[j] - tr.mean[j]) / tr.std_dev[j];
    }
    return Dataset{std::move(X), ds.y, ds.feature_names, std::move(tr), ds.dropped_rows};
}

/// Applies an already-fitted transform (e.g. one restored from a checkpoint).
inline Dataset apply_standardization(const Dataset& ds, const Standardization& tr) {
    if (ds.standardization)
        throw std::logic_error("apply_standardization: dataset is already standardized");
    if (tr.mean.size() != ds.X.cols())
        throw DataError("apply_standardization: transform has " + std::to_string(tr.mean.size()) +
                        " columns, dataset has " + std::to_string(ds.X.cols()));
    Matrix X(ds.X.rows(), ds.X.cols());
    for (std::size_t i = 0; i < ds.X.rows(); ++i) {
        const double* src = ds.X.row(i);
        double* dst = X.row(i);
        for (std::size_t j = 0; j < ds.X.cols(); ++j) dst[j] = (src[j] - tr.mean[j]) / tr.std_dev[j];
    }
    return Dataset{std::move(X), ds.y, ds.feature_names, tr, ds.dropped_rows};
}

/// Deterministic per-class split: each class contributes its proportional
/// share of validation rows, remainders resolved largest-first.
inline SplitIndices stratified_split(const Dataset& ds, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 0.5))
        throw std::invalid_argument("stratified_split: val_fraction must be in (0, 0.5)");
    const std::size_t n = ds.y.rows();
    std::vector<std::vector<std::size_t>> by_class(2);
    for (std::size_t i = 0; i < n; ++i) by_class[ds.y(i, 0) == 1.0 ? 1 : 0].push_back(i);
    if (by_class[0].empty() || by_class[1].empty())
        throw DataError("stratified_split: a class has zero samples");

    const auto total_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    if (total_val == 0)
        throw DataError("stratified_split: val_fraction selects zero validation rows");

    double quota[2];
    std::size_t take[2];
    for (int c = 0; c < 2; ++c) {
        quota[c] = val_fraction * static_cast<double>(by_class[c].size());
        take[c] = static_cast<std::size_t>(std::floor(quota[c]));
    }
    std::size_t remaining = total_val - std::min(total_val, take[0] + take[1]);
    while (remaining-- > 0) {
        const double r0 = quota[0] - std::floor(quota[0]);
        const double r1 = quota[1] - std::floor(quota[1]);
        int pick = r0 >= r1 ? 0 : 1;
        if (take[pick] >= by_class[pick].size()) pick = 1 - pick;
        ++take[pick];
        quota[pick] = std::floor(quota[pick]);  // remainder consumed
    }

    Rng rng(seed);
    SplitIndices split;
    for (int c = 0; c < 2; ++c) {
        std::vector<std::size_t>& idx = by_class[c];
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.next_u64() % i]);
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < take[c] ? split.val_idx : split.train_idx).push_back(idx[i]);
    }
    std::sort(split.train_idx.begin(), split.train_idx.end());
    std::sort(split.val_idx.begin(), split.val_idx.end());
    return split;
}

/// Margin-separated two-class cloud: a random unit hyperplane through the
/// origin, points rejection-sampled to lie at least `margin` away, labeled by
/// side, then a Bernoulli(flip_rate) label flip per sample.
inline Dataset synthetic_dataset(std::size_t n, std::size_t dim, double margin,
                                 double flip_rate, std::uint64_t seed) {
    if (n < 4) throw std::invalid_argument("synthetic_dataset: n must be >= 4");
    if (dim < 1) throw std::invalid_argument("synthetic_dataset: dim must be >= 1");
    if (!(margin > 0.0)) throw std::invalid_argument("synthetic_dataset: margin must be > 0");
    if (!(flip_rate >= 0.0 && flip_rate < 0.5))
        throw std::invalid_argument("synthetic_dataset: flip_rate must be in [0, 0.5)");

    Rng rng(seed);
    std::vector<double> normal_vec(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& w : normal_vec) { w = rng.normal(); norm += w * w; }
        norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (double& w : normal_vec) w /= norm;

    Matrix X(n, dim);
    Matrix y(n, 1);
    std::vector<double> point(dim);
    for (std::size_t i = 0; i < n; ++i) {
        double side = 0.0;
        do {
            side = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                point[j] = rng.normal();
                side += normal_vec[j] * point[j];
            }
        } while (std::abs(side) < margin);
        for (std::size_t j = 0; j < dim; ++j) X(i, j) = point[j];
        double label = side > 0.0 ? 1.0 : 0.0;
        if (flip_rate > 0.0 && rng.uniform01() < flip_rate) label = 1.0 - label;
        y(i, 0) = label;
    }

    std::vector<std::string> names;
    names.reserve(dim);
    for (std::size_t j = 1; j <= dim; ++j) names.push_back("f" + std::to_string(j));
    return Dataset{std::move(X), std::move(y), std::move(names), std::nullopt, 0};
}

/// Writes the dataset back out as a loadable CSV (features then the label).
inline void save_csv(const Dataset& ds, const std::string& path,
                     const std::string& label_name = "label") {
    std::string out;
    for (const std::string& name : ds.feature_names) out += name + ",";
    out += label_name + "\n";
    for (std::size_t i = 0; i < ds.X.rows(); ++i) {
        for (std::size_t j = 0; j < ds.X.cols(); ++j) {
            out += fmt_double(ds.X(i, j));
            out += ',';
        }
        out += fmt_double(ds.y(i, 0));
        out += '\n';
    }
    atomic_write_text(path, out);
}

} // namespace regunet
