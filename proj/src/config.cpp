#include "fedlws/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>
#include <string_view>
#include <type_traits>

#include <yaml-cpp/yaml.h>

#include "fedlws/error.hpp"

namespace fedlws {

namespace {

template <typename Enum>
using Names = std::initializer_list<std::pair<std::string_view, Enum>>;

const Names<ShrinkMode> kModes{{"off", ShrinkMode::off},
                               {"model_wise", ShrinkMode::model_wise},
                               {"layer_wise", ShrinkMode::layer_wise}};
const Names<ModelKind> kKinds{{"mlp", ModelKind::mlp}, {"cnn", ModelKind::cnn}};
const Names<ClientObjective> kObjectives{{"fedavg", ClientObjective::fedavg}, {"fedprox", ClientObjective::fedprox}};
const Names<SyntheticKind> kSynthetic{{"gaussian", SyntheticKind::gaussian}, {"blobs", SyntheticKind::blobs}};
const Names<DataSource> kSources{{"synthetic", DataSource::synthetic}, {"csv", DataSource::csv}};
const Names<SweepAxis> kAxes{{"beta", SweepAxis::beta},
                             {"alpha", SweepAxis::alpha},
                             {"clients", SweepAxis::clients},
                             {"local_epochs", SweepAxis::local_epochs},
                             {"participation", SweepAxis::participation},
                             {"mode", SweepAxis::mode}};

template <typename Enum>
std::string name_of(const Names<Enum>& names, Enum value) {
    for (const auto& [n, v] : names) {
        if (v == value) return std::string(n);
    }
    return "?";
}

template <typename Enum>
bool lookup(const Names<Enum>& names, std::string_view text, Enum& out) {
    for (const auto& [n, v] : names) {
        if (n == text) {
            out = v;
            return true;
        }
    }
    return false;
}

template <typename Enum>
std::string choices(const Names<Enum>& names) {
    std::string s;
    for (const auto& [n, v] : names) {
        if (!s.empty()) s += "|";
        s += n;
    }
    return s;
}

bool parse_number(std::string_view text, double& out) {
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end;
}

/// Reads fields while collecting one diagnostic per bad field.
class Reader {
public:
    std::vector<std::string> errors;

    bool section(const YAML::Node& node, const std::string& path, std::initializer_list<std::string_view> allowed) {
        if (!node) return false;
        if (!node.IsMap()) {
            errors.push_back(path + ": expected a mapping");
            return false;
        }
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            bool known = false;
            for (auto a : allowed) known = known || a == key;
            if (!known) errors.push_back(join(path, key) + ": unknown field");
        }
        return true;
    }

    template <typename T>
    bool read(const YAML::Node& node, const std::string& path, const char* key, T& out) {
        const YAML::Node child = node[key];
        if (!child) return false;
        const std::string where = join(path, key);
        try {
            if constexpr (std::is_same_v<T, std::vector<std::size_t>> || std::is_same_v<T, std::vector<double>>) {
                if (!child.IsSequence()) {
                    errors.push_back(where + ": expected a list");
                    return false;
                }
                T values;
                for (const auto& item : child) {
                    typename T::value_type v{};
                    if (!scalar(item, where, v)) return false;
                    values.push_back(v);
                }
                out = std::move(values);
                return true;
            } else {
                return scalar(child, where, out);
            }
        } catch (const YAML::Exception&) {
            errors.push_back(where + ": malformed value");
            return false;
        }
    }

    template <typename Enum>
    void read_enum(const YAML::Node& node, const std::string& path, const char* key, const Names<Enum>& names,
                   Enum& out) {
        std::string text;
        if (!read(node, path, key, text)) return;
        if (!lookup(names, text, out)) {
            errors.push_back(join(path, key) + ": expected one of " + choices(names) + " (got '" + text + "')");
        }
    }

    static std::string join(const std::string& path, std::string_view key) {
        return path.empty() ? std::string(key) : path + "." + std::string(key);
    }

private:
    template <typename T>
    bool scalar(const YAML::Node& node, const std::string& where, T& out) {
        if (!node.IsScalar()) {
            errors.push_back(where + ": expected a scalar");
            return false;
        }
        const std::string text = node.Scalar();
        if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
            out = text;
        } else if constexpr (std::is_same_v<T, bool>) {
            out = node.as<bool>();
        } else if constexpr (std::is_same_v<T, double>) {
            double v = 0.0;
            if (text == ".inf" || text == "inf") {
                v = INFINITY;
            } else if (!parse_number(text, v)) {
                errors.push_back(where + ": expected a number (got '" + text + "')");
                return false;
            }
            out = v;
        } else if constexpr (std::is_integral_v<T>) {
            long long v = 0;
            const auto* end = text.data() + text.size();
            auto [ptr, ec] = std::from_chars(text.data(), end, v);
            if (ec != std::errc() || ptr != end) {
                if constexpr (std::is_unsigned_v<T>) {
                    unsigned long long u = 0;
                    auto [p2, e2] = std::from_chars(text.data(), end, u);
                    if (e2 == std::errc() && p2 == end) {
                        out = static_cast<T>(u);
                        return true;
                    }
                }
                errors.push_back(where + ": expected an integer (got '" + text + "')");
                return false;
            }
            if (std::is_unsigned_v<T> && v < 0) {
                errors.push_back(where + ": must be >= 0 (got " + text + ")");
                return false;
            }
            out = static_cast<T>(v);
        }
        return true;
    }
};

void read_config(Reader& r, const YAML::Node& root, ExperimentConfig& cfg) {
    if (!root || root.IsNull()) return;
    if (!root.IsMap()) {
        r.errors.push_back("config: expected a mapping at the top level");
        return;
    }
    r.section(root, "", {"run_label", "output_dir", "model", "data", "fl", "lws"});
    r.read(root, "", "run_label", cfg.run_label);
    r.read(root, "", "output_dir", cfg.output_dir);

    bool explicit_classes = false;
    bool explicit_layers = false;
    bool explicit_input = false;
    if (const auto m = root["model"]; r.section(m, "model",
                                                {"kind", "layer_sizes", "num_classes", "init_seed", "input",
                                                 "conv_channels", "kernel_size", "dense_hidden"})) {
        r.read_enum(m, "model", "kind", kKinds, cfg.model.kind);
        explicit_layers = r.read(m, "model", "layer_sizes", cfg.model.layer_sizes);
        explicit_classes = r.read(m, "model", "num_classes", cfg.model.num_classes);
        r.read(m, "model", "init_seed", cfg.model.init_seed);
        if (const auto in = m["input"]; r.section(in, "model.input", {"channels", "height", "width"})) {
            explicit_input = true;
            r.read(in, "model.input", "channels", cfg.model.input_channels);
            r.read(in, "model.input", "height", cfg.model.input_height);
            r.read(in, "model.input", "width", cfg.model.input_width);
        }
        r.read(m, "model", "conv_channels", cfg.model.conv_channels);
        r.read(m, "model", "kernel_size", cfg.model.kernel_size);
        r.read(m, "model", "dense_hidden", cfg.model.dense_hidden);
    }

    auto& d = cfg.data;
    auto& s = d.synthetic;
    if (const auto n = root["data"]; r.section(n, "data",
                                               {"source", "kind", "num_classes", "samples_per_class",
                                                "test_samples_per_class", "feature_dim", "image", "separation",
                                                "noise_std", "seed", "train_csv", "test_csv", "partition"})) {
        r.read_enum(n, "data", "source", kSources, d.source);
        r.read_enum(n, "data", "kind", kSynthetic, s.kind);
        r.read(n, "data", "num_classes", s.num_classes);
        r.read(n, "data", "samples_per_class", s.samples_per_class);
        r.read(n, "data", "test_samples_per_class", s.test_samples_per_class);
        r.read(n, "data", "feature_dim", s.feature_dim);
        if (const auto img = n["image"]; r.section(img, "data.image", {"channels", "height", "width"})) {
            r.read(img, "data.image", "channels", s.channels);
            r.read(img, "data.image", "height", s.height);
            r.read(img, "data.image", "width", s.width);
        }
        r.read(n, "data", "separation", s.separation);
        r.read(n, "data", "noise_std", s.noise_std);
        r.read(n, "data", "seed", s.seed);
        r.read(n, "data", "train_csv", d.train_csv);
        r.read(n, "data", "test_csv", d.test_csv);
        if (const auto p = n["partition"];
            r.section(p, "data.partition", {"alpha", "seed", "min_samples_per_client", "max_retries"})) {
            r.read(p, "data.partition", "alpha", d.alpha);
            r.read(p, "data.partition", "seed", d.partition_seed);
            r.read(p, "data.partition", "min_samples_per_client", d.min_samples_per_client);
            r.read(p, "data.partition", "max_retries", d.max_retries);
        }
    }

    auto& f = cfg.fl;
    if (const auto n = root["fl"]; r.section(n, "fl",
                                             {"num_clients", "rounds", "local_epochs", "participation", "batch_size",
                                              "objective", "prox_mu", "seed", "threads", "record_timing", "sgd"})) {
        r.read(n, "fl", "num_clients", f.num_clients);
        r.read(n, "fl", "rounds", f.rounds);
        r.read(n, "fl", "local_epochs", f.local_epochs);
        r.read(n, "fl", "participation", f.participation);
        r.read(n, "fl", "batch_size", f.batch_size);
        r.read_enum(n, "fl", "objective", kObjectives, f.objective);
        r.read(n, "fl", "prox_mu", f.prox_mu);
        r.read(n, "fl", "seed", f.seed);
        r.read(n, "fl", "threads", f.threads);
        r.read(n, "fl", "record_timing", f.record_timing);
        if (const auto sgd = n["sgd"];
            r.section(sgd, "fl.sgd", {"learning_rate", "momentum", "weight_decay", "lr_decay_per_round"})) {
            r.read(sgd, "fl.sgd", "learning_rate", f.sgd.learning_rate);
            r.read(sgd, "fl.sgd", "momentum", f.sgd.momentum);
            r.read(sgd, "fl.sgd", "weight_decay", f.sgd.weight_decay);
            r.read(sgd, "fl.sgd", "lr_decay_per_round", f.sgd.lr_decay_per_round);
        }
    }

    if (const auto n = root["lws"]; r.section(n, "lws", {"mode", "beta", "oracle", "oracle_grid"})) {
        r.read_enum(n, "lws", "mode", kModes, cfg.lws.mode);
        r.read(n, "lws", "beta", cfg.lws.beta);
        r.read(n, "lws", "oracle", cfg.lws.oracle);
        r.read(n, "lws", "oracle_grid", cfg.lws.oracle_grid);
    }

    // Sizes the user left out follow the data section.
    if (!explicit_classes) cfg.model.num_classes = s.num_classes;
    if (!explicit_layers && cfg.model.kind == ModelKind::mlp && cfg.model.layer_sizes.size() >= 2) {
        cfg.model.layer_sizes.front() = s.feature_dim;
        cfg.model.layer_sizes.back() = s.num_classes;
    }
    if (!explicit_input) {
        cfg.model.input_channels = s.channels;
        cfg.model.input_height = s.height;
        cfg.model.input_width = s.width;
    }
}

YAML::Node load_yaml(const std::string& text) {
    try {
        return YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config: YAML syntax error: ") + e.what());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void emit_double(YAML::Emitter& out, const char* key, double v) {
    out << YAML::Key << key << YAML::Value << format_double(v);
}

template <typename T>
void emit_list(YAML::Emitter& out, const char* key, const std::vector<T>& values) {
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : values) {
        if constexpr (std::is_floating_point_v<T>) {
            out << format_double(v);
        } else {
            out << v;
        }
    }
    out << YAML::EndSeq;
}

}  // namespace

std::string format_double(double value) {
    if (std::isinf(value)) return value > 0 ? ".inf" : "-.inf";
    if (std::isnan(value)) return ".nan";
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

std::string to_string(ShrinkMode mode) { return name_of(kModes, mode); }
std::string to_string(ModelKind kind) { return name_of(kKinds, kind); }
std::string to_string(ClientObjective objective) { return name_of(kObjectives, objective); }
std::string to_string(SweepAxis axis) { return name_of(kAxes, axis); }

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.run_label = "run";
    cfg.output_dir = "results";

    auto& s = cfg.data.synthetic;
    s.kind = SyntheticKind::gaussian;
    s.num_classes = 10;
    s.samples_per_class = 200;
    s.test_samples_per_class = 100;
    s.feature_dim = 64;
    s.separation = 1.0;
    s.noise_std = 2.5;
    cfg.data.alpha = 0.5;

    cfg.model.kind = ModelKind::mlp;
    cfg.model.layer_sizes = {s.feature_dim, 64, s.num_classes};
    cfg.model.num_classes = s.num_classes;
    cfg.model.input_channels = s.channels;
    cfg.model.input_height = s.height;
    cfg.model.input_width = s.width;
    cfg.model.conv_channels = {8, 16};
    cfg.model.kernel_size = 3;
    cfg.model.dense_hidden = {32};

    cfg.fl.num_clients = 20;
    cfg.fl.rounds = 50;
    cfg.fl.local_epochs = 1;
    cfg.fl.participation = 1.0;
    cfg.fl.batch_size = 32;

    cfg.lws.mode = ShrinkMode::layer_wise;
    cfg.lws.beta = 0.3;
    return cfg;
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg = default_config();
    Reader r;
    read_config(r, load_yaml(text), cfg);
    if (!r.errors.empty()) throw ConfigError(std::move(r.errors));
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

std::string dump_config(const ExperimentConfig& cfg) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "run_label" << YAML::Value << cfg.run_label;
    out << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir.string();

    const auto& m = cfg.model;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << to_string(m.kind);
    emit_list(out, "layer_sizes", m.layer_sizes);
    out << YAML::Key << "num_classes" << YAML::Value << m.num_classes;
    out << YAML::Key << "init_seed" << YAML::Value << m.init_seed;
    out << YAML::Key << "input" << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "channels" << YAML::Value << m.input_channels;
    out << YAML::Key << "height" << YAML::Value << m.input_height;
    out << YAML::Key << "width" << YAML::Value << m.input_width;
    out << YAML::EndMap;
    emit_list(out, "conv_channels", m.conv_channels);
    out << YAML::Key << "kernel_size" << YAML::Value << m.kernel_size;
    emit_list(out, "dense_hidden", m.dense_hidden);
    out << YAML::EndMap;

    const auto& d = cfg.data;
    const auto& s = d.synthetic;
    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "source" << YAML::Value << name_of(kSources, d.source);
    out << YAML::Key << "kind" << YAML::Value << name_of(kSynthetic, s.kind);
    out << YAML::Key << "num_classes" << YAML::Value << s.num_classes;
    out << YAML::Key << "samples_per_class" << YAML::Value << s.samples_per_class;
    out << YAML::Key << "test_samples_per_class" << YAML::Value << s.test_samples_per_class;
    out << YAML::Key << "feature_dim" << YAML::Value << s.feature_dim;
    out << YAML::Key << "image" << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "channels" << YAML::Value << s.channels;
    out << YAML::Key << "height" << YAML::Value << s.height;
    out << YAML::Key << "width" << YAML::Value << s.width;
    out << YAML::EndMap;
    emit_double(out, "separation", s.separation);
    emit_double(out, "noise_std", s.noise_std);
    out << YAML::Key << "seed" << YAML::Value << s.seed;
    out << YAML::Key << "train_csv" << YAML::Value << d.train_csv.string();
    out << YAML::Key << "test_csv" << YAML::Value << d.test_csv.string();
    out << YAML::Key << "partition" << YAML::Value << YAML::BeginMap;
    emit_double(out, "alpha", d.alpha);
    out << YAML::Key << "seed" << YAML::Value << d.partition_seed;
    out << YAML::Key << "min_samples_per_client" << YAML::Value << d.min_samples_per_client;
    out << YAML::Key << "max_retries" << YAML::Value << d.max_retries;
    out << YAML::EndMap;
    out << YAML::EndMap;

    const auto& f = cfg.fl;
    out << YAML::Key << "fl" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "num_clients" << YAML::Value << f.num_clients;
    out << YAML::Key << "rounds" << YAML::Value << f.rounds;
    out << YAML::Key << "local_epochs" << YAML::Value << f.local_epochs;
    emit_double(out, "participation", f.participation);
    out << YAML::Key << "batch_size" << YAML::Value << f.batch_size;
    out << YAML::Key << "objective" << YAML::Value << to_string(f.objective);
    emit_double(out, "prox_mu", f.prox_mu);
    out << YAML::Key << "seed" << YAML::Value << f.seed;
    out << YAML::Key << "threads" << YAML::Value << f.threads;
    out << YAML::Key << "record_timing" << YAML::Value << YAML::TrueFalseBool << f.record_timing;
    out << YAML::Key << "sgd" << YAML::Value << YAML::BeginMap;
    emit_double(out, "learning_rate", f.sgd.learning_rate);
    emit_double(out, "momentum", f.sgd.momentum);
    emit_double(out, "weight_decay", f.sgd.weight_decay);
    emit_double(out, "lr_decay_per_round", f.sgd.lr_decay_per_round);
    out << YAML::EndMap;
    out << YAML::EndMap;

    out << YAML::Key << "lws" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "mode" << YAML::Value << to_string(cfg.lws.mode);
    emit_double(out, "beta", cfg.lws.beta);
    out << YAML::Key << "oracle" << YAML::Value << YAML::TrueFalseBool << cfg.lws.oracle;
    emit_list(out, "oracle_grid", cfg.lws.oracle_grid);
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("config: cannot write " + path.string());
    out << dump_config(cfg);
    if (!out) throw FormatError("config: write failed for " + path.string());
}

void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.data.synthetic.seed = seed;
    cfg.data.partition_seed = seed;
    cfg.model.init_seed = seed;
    cfg.fl.seed = seed;
}

SweepSpec parse_sweep(const std::string& text, const std::filesystem::path& base_dir) {
    const YAML::Node root = load_yaml(text);
    Reader r;
    SweepSpec spec;
    if (!r.section(root, "sweep", {"base", "axis", "values", "seeds"})) {
        throw ConfigError("sweep: expected a mapping");
    }
    const YAML::Node base = root["base"];
    if (!base) {
        r.errors.push_back("sweep.base: required");
    } else if (base.IsScalar()) {
        std::filesystem::path p = base.Scalar();
        if (p.is_relative()) p = base_dir / p;
        try {
            spec.base = load_config(p);
        } catch (const ConfigError& e) {
            for (const auto& d : e.diagnostics()) r.errors.push_back("sweep.base: " + d);
        }
    } else {
        spec.base = default_config();
        Reader inner;
        read_config(inner, base, spec.base);
        for (const auto& d : inner.errors) r.errors.push_back("sweep.base." + d);
    }
    if (!root["axis"]) r.errors.push_back("sweep.axis: required");
    r.read_enum(root, "sweep", "axis", kAxes, spec.axis);
    const YAML::Node values = root["values"];
    if (!values || !values.IsSequence() || values.size() == 0) {
        r.errors.push_back("sweep.values: expected a non-empty list");
    } else {
        for (const auto& v : values) {
            if (!v.IsScalar()) {
                r.errors.push_back("sweep.values: expected scalars");
                break;
            }
            spec.values.push_back(v.Scalar());
        }
    }
    std::vector<std::size_t> seeds;
    if (r.read(root, "sweep", "seeds", seeds)) {
        if (seeds.empty()) r.errors.push_back("sweep.seeds: expected a non-empty list");
        spec.seeds.assign(seeds.begin(), seeds.end());
    } else {
        spec.seeds = {spec.base.fl.seed};
    }
    if (!r.errors.empty()) throw ConfigError(std::move(r.errors));
    for (const auto& v : spec.values) apply_axis(spec.base, spec.axis, v);
    return spec;
}

SweepSpec load_sweep(const std::filesystem::path& path) {
    return parse_sweep(read_file(path), path.parent_path());
}

ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value) {
    ExperimentConfig cfg = base;
    const std::string field = "sweep.values[" + to_string(axis) + "]";
    if (axis == SweepAxis::mode) {
        if (!lookup(kModes, value, cfg.lws.mode)) {
            throw ConfigError(field + ": expected one of " + choices(kModes) + " (got '" + value + "')");
        }
        return cfg;
    }
    double v = 0.0;
    if (!parse_number(value, v)) throw ConfigError(field + ": expected a number (got '" + value + "')");
    const bool integral = v == std::floor(v) && v >= 0.0;
    switch (axis) {
        case SweepAxis::beta: cfg.lws.beta = v; break;
        case SweepAxis::alpha: cfg.data.alpha = v; break;
        case SweepAxis::participation: cfg.fl.participation = v; break;
        case SweepAxis::clients:
            if (!integral) throw ConfigError(field + ": expected a non-negative integer (got '" + value + "')");
            cfg.fl.num_clients = static_cast<std::size_t>(v);
            break;
        case SweepAxis::local_epochs:
            if (!integral) throw ConfigError(field + ": expected a non-negative integer (got '" + value + "')");
            cfg.fl.local_epochs = static_cast<int>(v);
            break;
        case SweepAxis::mode: break;
    }
    return cfg;
}

}  // namespace fedlws
