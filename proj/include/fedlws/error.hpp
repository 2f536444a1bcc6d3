#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fedlws {

/// Invalid user-supplied configuration. Carries one diagnostic per offending field.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> diagnostics)
        : std::runtime_error(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}
    explicit ConfigError(const std::string& diagnostic)
        : ConfigError(std::vector<std::string>{diagnostic}) {}

    const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

private:
    static std::string join(const std::vector<std::string>& lines) {
        std::string out;
        for (const auto& l : lines) {
            if (!out.empty()) out += "; ";
            out += l;
        }
        return out;
    }

    std::vector<std::string> diagnostics_;
};

/// A caller broke a precondition (shape mismatch, empty batch, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed file contents or an I/O failure.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fedlws
