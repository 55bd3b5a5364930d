#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace glad {

// Flat key=value configuration. Grammar: one `key = value` pair per line,
// `#` starts a comment, blank lines ignored. Every key has a registered
// default and maps 1:1 to a CLI override `--key=value`. Unknown keys are
// errors; the fully resolved document is echoed into the run directory.
class RunConfig {
public:
    struct KeyInfo {
        std::string key;
        std::string desk_default;
        std::string paper_default;  // empty: same as desk
        std::string help;
    };

    static const std::vector<KeyInfo>& registry();

    RunConfig();  // desk defaults

    void apply_preset(const std::string& preset);          // desk | paper
    void load_file(const std::filesystem::path& path);     // overrides defaults
    void set(const std::string& key, const std::string& value);
    void apply_override(const std::string& assignment);    // "key=value"

    const std::string& str(const std::string& key) const;
    int64_t i64(const std::string& key) const;
    uint64_t u64(const std::string& key) const;
    double f64(const std::string& key) const;
    bool flag(const std::string& key) const;

    bool has_value(const std::string& key) const;  // non-empty

    std::string echo() const;  // full resolved document
    std::filesystem::path run_dir() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace glad
