#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace ppn::cli {

/// Merged view of one subcommand's settings with per-key provenance.
/// Precedence: defaults < config file < command-line flags.
class ConfigSet {
public:
    enum class Source { defaults, config_file, flag };

    template <typename T>
    void set_default(const std::string& key, const T& value) {
        entries_[key] = {nlohmann::json(value), Source::defaults};
    }

    /// Applies a config file object; unknown keys are rejected so typos
    /// cannot silently change a run.
    void apply_config_file(const nlohmann::json& file) {
        if (!file.is_object()) {
            throw std::runtime_error("config file must contain a JSON object");
        }
        for (const auto& [key, value] : file.items()) {
            auto it = entries_.find(key);
            if (it == entries_.end()) {
                throw std::runtime_error("config file has unknown key '" + key + "'");
            }
            it->second = {value, Source::config_file};
        }
    }

    template <typename T>
    void set_flag(const std::string& key, const T& value) {
        entries_.at(key) = {nlohmann::json(value), Source::flag};
    }

    template <typename T>
    T get(const std::string& key) const {
        return entries_.at(key).value.get<T>();
    }

    Source source(const std::string& key) const { return entries_.at(key).source; }

    nlohmann::json effective() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [key, entry] : entries_) j[key] = entry.value;
        return j;
    }

    nlohmann::json provenance() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [key, entry] : entries_) {
            switch (entry.source) {
                case Source::defaults: j[key] = "default"; break;
                case Source::config_file: j[key] = "config-file"; break;
                case Source::flag: j[key] = "flag"; break;
            }
        }
        return j;
    }

private:
    struct Entry {
        nlohmann::json value;
        Source source = Source::defaults;
    };
    std::map<std::string, Entry> entries_;
};

}  // namespace ppn::cli
