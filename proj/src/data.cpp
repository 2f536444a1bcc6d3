#include "fedlws/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <string_view>

#include "fedlws/error.hpp"
#include "fedlws/rng.hpp"

namespace fedlws {

namespace {

constexpr std::size_t kBlobsPerClass = 3;

Vector gaussian_means(const SyntheticSpec& spec, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(spec.feature_dim);
    Vector means(static_cast<Eigen::Index>(spec.num_classes) * d);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < means.size(); ++i) means[i] = spec.separation * normal(rng);
    return means;
}

Vector blob_means(const SyntheticSpec& spec, Rng& rng) {
    const std::size_t hw = spec.height * spec.width;
    const std::size_t per_class = spec.channels * hw;
    Vector means = Vector::Zero(static_cast<Eigen::Index>(spec.num_classes * per_class));
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(spec.width));
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(spec.height));
    std::uniform_real_distribution<double> amp(-1.0, 1.0);
    const double width = 0.2 * static_cast<double>(std::max(spec.height, spec.width)) + 0.5;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
            for (std::size_t b = 0; b < kBlobsPerClass; ++b) {
                const double cx = ux(rng);
                const double cy = uy(rng);
                const double a = spec.separation * amp(rng);
                for (std::size_t y = 0; y < spec.height; ++y) {
                    for (std::size_t x = 0; x < spec.width; ++x) {
                        const double dx = static_cast<double>(x) + 0.5 - cx;
                        const double dy = static_cast<double>(y) + 0.5 - cy;
                        means[static_cast<Eigen::Index>(c * per_class + ch * hw + y * spec.width + x)] +=
                            a * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
                    }
                }
            }
        }
    }
    return means;
}

Dataset sample_split(const SyntheticSpec& spec, const Vector& means, const Shape& sample_shape,
                     std::size_t per_class, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(shape_size(sample_shape));
    Shape shape{spec.num_classes * per_class};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    Dataset ds{Tensor(shape), {}, spec.num_classes};
    ds.labels.reserve(spec.num_classes * per_class);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        const auto mean = means.segment(static_cast<Eigen::Index>(c) * d, d);
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            auto x = ds.inputs.data().segment(row * d, d);
            x = mean;
            if (spec.noise_std > 0.0) {
                for (Eigen::Index j = 0; j < d; ++j) x[j] += spec.noise_std * normal(rng);
            }
            ds.labels.push_back(static_cast<Label>(c));
        }
    }
    return ds;
}

double parse_double(std::string_view field, std::size_t line) {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw FormatError("csv line " + std::to_string(line) + ": cannot parse '" + std::string(field) + "'");
    }
    return v;
}

}  // namespace

Shape Dataset::sample_shape() const {
    const auto& s = inputs.shape();
    return s.empty() ? Shape{} : Shape(s.begin() + 1, s.end());
}

void Dataset::check() const {
    if (labels.empty()) throw ContractError("dataset: no samples");
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
        throw ContractError("dataset: inputs " + shape_string(inputs.shape()) + " do not match " +
                            std::to_string(labels.size()) + " labels");
    }
    for (Label y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw ContractError("dataset: label " + std::to_string(y) + " outside [0, " +
                                std::to_string(num_classes) + ")");
        }
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Shape shape = inputs.shape();
    const auto d = static_cast<Eigen::Index>(shape_size(sample_shape()));
    shape[0] = indices.size();
    Dataset out{Tensor(shape), {}, num_classes};
    out.labels.reserve(indices.size());
    Eigen::Index row = 0;
    for (std::size_t i : indices) {
        if (i >= size()) throw ContractError("dataset: index " + std::to_string(i) + " out of range");
        out.inputs.data().segment(row++ * d, d) = inputs.data().segment(static_cast<Eigen::Index>(i) * d, d);
        out.labels.push_back(labels[i]);
    }
    return out;
}

SplitDataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes == 0 || spec.samples_per_class == 0) {
        throw ConfigError("data: num_classes and samples_per_class must be positive");
    }
    Rng rng = make_rng(spec.seed, {stream::kData});
    Vector means;
    Shape sample_shape;
    if (spec.kind == SyntheticKind::gaussian) {
        if (spec.feature_dim == 0) throw ConfigError("data.feature_dim: must be positive");
        means = gaussian_means(spec, rng);
        sample_shape = {spec.feature_dim};
    } else {
        if (spec.channels == 0 || spec.height == 0 || spec.width == 0) {
            throw ConfigError("data.image: channels, height and width must be positive");
        }
        means = blob_means(spec, rng);
        sample_shape = {spec.channels, spec.height, spec.width};
    }
    SplitDataset out;
    Rng train_rng = make_rng(spec.seed, {stream::kData, 1});
    Rng test_rng = make_rng(spec.seed, {stream::kTestSplit});
    out.train = sample_split(spec, means, sample_shape, spec.samples_per_class, train_rng);
    out.test = sample_split(spec, means, sample_shape, spec.test_samples_per_class, test_rng);
    SyntheticSpec noiseless = spec;
    noiseless.noise_std = 0.0;
    out.class_means = sample_split(noiseless, means, sample_shape, 1, rng);
    return out;
}

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw FormatError("csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError("csv: " + path.string() + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("label", 0) != 0) throw FormatError("csv: header must start with 'label'");
    const std::size_t features = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (features == 0) throw FormatError("csv: no feature columns");

    std::vector<double> values;
    std::vector<Label> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string_view rest(line);
        std::size_t column = 0;
        while (true) {
            const auto comma = rest.find(',');
            const auto field = rest.substr(0, comma);
            const double v = parse_double(field, line_no);
            if (column == 0) {
                if (v < 0 || v != std::floor(v) || v >= static_cast<double>(num_classes)) {
                    throw FormatError("csv line " + std::to_string(line_no) + ": label out of range");
                }
                labels.push_back(static_cast<Label>(v));
            } else {
                values.push_back(v);
            }
            ++column;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (column != features + 1) {
            throw FormatError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(features + 1) +
                              " columns, got " + std::to_string(column));
        }
    }
    if (labels.empty()) throw FormatError("csv: " + path.string() + " has no rows");
    Dataset ds{Tensor({labels.size(), features}, Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()))),
               std::move(labels), num_classes};
    return ds;
}

Partition dirichlet_partition(const Dataset& ds, const PartitionSpec& spec) {
    std::vector<std::string> errors;
    if (!(spec.alpha > 0.0) || !std::isfinite(spec.alpha)) errors.push_back("data.partition.alpha: must be > 0");
    if (spec.num_clients == 0) errors.push_back("fl.num_clients: must be >= 1");
    if (ds.size() == 0) errors.push_back("data: dataset is empty");
    if (errors.empty() && spec.min_samples_per_client * spec.num_clients > ds.size()) {
        errors.push_back("data.partition.min_samples_per_client: " + std::to_string(spec.min_samples_per_client) +
                         " x " + std::to_string(spec.num_clients) + " clients exceeds " +
                         std::to_string(ds.size()) + " samples");
    }
    if (!errors.empty()) throw ConfigError(std::move(errors));

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);

    const std::size_t k = spec.num_clients;
    for (std::size_t attempt = 0; attempt <= spec.max_retries; ++attempt) {
        Rng rng = make_rng(spec.seed, {stream::kPartition, attempt});
        std::gamma_distribution<double> gamma(spec.alpha, 1.0);
        Partition part;
        part.assignments.resize(k);
        for (auto indices : by_class) {
            std::shuffle(indices.begin(), indices.end(), rng);
            std::vector<double> p(k);
            for (auto& v : p) v = gamma(rng);
            const double total = std::accumulate(p.begin(), p.end(), 0.0);
            if (!(total > 0.0) || !std::isfinite(total)) {
                // Every draw underflowed: the whole class lands on one client.
                std::fill(p.begin(), p.end(), 0.0);
                p[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
            } else {
                for (auto& v : p) v /= total;
            }
            const auto n = static_cast<double>(indices.size());
            double cumulative = 0.0;
            std::size_t begin = 0;
            for (std::size_t c = 0; c < k; ++c) {
                cumulative += p[c];
                std::size_t end = c + 1 == k ? indices.size()
                                             : std::min(indices.size(), static_cast<std::size_t>(std::llround(cumulative * n)));
                end = std::max(end, begin);
                part.assignments[c].insert(part.assignments[c].end(), indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                           indices.begin() + static_cast<std::ptrdiff_t>(end));
                begin = end;
            }
        }
        const bool ok = std::all_of(part.assignments.begin(), part.assignments.end(),
                                    [&](const auto& a) { return a.size() >= spec.min_samples_per_client; });
        if (ok) {
            for (auto& a : part.assignments) std::sort(a.begin(), a.end());
            return part;
        }
    }
    throw ConfigError("data.partition: no split gave every client >= " + std::to_string(spec.min_samples_per_client) +
                      " samples within " + std::to_string(spec.max_retries) + " retries (alpha " +
                      std::to_string(spec.alpha) + ")");
}

double heterogeneity_stat(const Partition& part, const Dataset& ds) {
    const std::size_t c = ds.num_classes;
    std::vector<double> global(c, 0.0);
    std::size_t total = 0;
    for (const auto& a : part.assignments) {
        for (std::size_t i : a) {
            global[static_cast<std::size_t>(ds.labels.at(i))] += 1.0;
            ++total;
        }
    }
    if (total == 0) return 0.0;
    for (auto& g : global) g /= static_cast<double>(total);

    double sum = 0.0;
    std::size_t clients = 0;
    std::vector<double> local(c);
    for (const auto& a : part.assignments) {
        if (a.empty()) continue;
        std::fill(local.begin(), local.end(), 0.0);
        for (std::size_t i : a) local[static_cast<std::size_t>(ds.labels[i])] += 1.0;
        double tv = 0.0;
        for (std::size_t j = 0; j < c; ++j) tv += std::abs(local[j] / static_cast<double>(a.size()) - global[j]);
        sum += 0.5 * tv;
        ++clients;
    }
    return sum / static_cast<double>(clients);
}

}  // namespace fedlws
