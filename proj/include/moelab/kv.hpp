#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moelab {

/// `key = value` text with `#` comments. Keys are unique; order is preserved for output.
class KeyValues {
public:
    static KeyValues parse(const std::string& text);
    static KeyValues read(const std::filesystem::path& path);

    void set(const std::string& key, std::string value);
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> get(const std::string& key) const;
    const std::vector<std::string>& keys() const noexcept { return order_; }
    std::string to_text() const;

    /// Throws ConfigError naming the first key not in `allowed`.
    void require_known(const std::vector<std::string>& allowed) const;

    std::string str(const std::string& key, const std::string& fallback) const;
    long long integer(const std::string& key, long long fallback) const;
    double real(const std::string& key, double fallback) const;
    bool boolean(const std::string& key, bool fallback) const;
    std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) const;

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

/// Overlays environment variables `<prefix><KEY>` onto `kv` for every allowed key. KEY is the
/// key upper-cased with '.' replaced by '_', so model.d_model reads MOELAB_MODEL_D_MODEL.
void apply_env_overrides(KeyValues& kv, const std::string& prefix, const std::vector<std::string>& allowed);

}  // namespace moelab
