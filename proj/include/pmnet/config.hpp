#ifndef PMNET_CONFIG_HPP
#define PMNET_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "pmnet/errors.hpp"

namespace pmnet {

// Flat key=value config; keys match the field names exactly.
struct RunConfig {
    std::uint64_t seed = 7;
    int epochs = 50;
    int batch_size = 16;
    int steps_per_epoch = 300;
    double learning_rate = 3e-5;
    double weight_decay = 0.01;
    int window = 20;        // N
    int frame_stride = 8;   // R
    int clip_w = 4;         // w
    int d_tokens = 2;       // message tokens per clip
    int n_swaps = 4;
    int n_blocks = 2;       // SSM blocks
    int channels = 96;      // c
    int heads = 4;
    int state_dim = 16;
    int scan_chunk = 16;
    double lambda_cl = 0.1;
    double alpha = 0.99;    // prototype EMA momentum
    bool masking = true;
    bool region_in_all_blocks = true;
    bool share_region_encoder = false;
    bool ssm_identity = false;  // ablation: replace SSM blocks by identity
    bool aug_color_jitter = false;
    bool aug_hflip = false;
    std::string precision = "float32";  // float32 train / float64 check

    void validate() const {
        if (window < 1 || frame_stride < 1 || clip_w < 1 || d_tokens < 0 || n_swaps < 0 ||
            n_blocks < 1 || channels < 1 || heads < 1 || state_dim < 1 || scan_chunk < 1 ||
            epochs < 1 || batch_size < 1 || steps_per_epoch < 1)
            throw ConfigError("config: all counts must be positive");
        if (clip_w > window) throw ConfigError("config: clip_w must not exceed window");
        if (channels % heads != 0) throw ConfigError("config: channels must divide by heads");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("config: alpha must be in [0,1]");
        if (precision != "float32" && precision != "float64")
            throw ConfigError("config: precision must be float32 or float64");
    }
};

namespace config_detail {

template <class F>
void for_each_field(RunConfig& c, F&& f) {
    f("seed", c.seed);
    f("epochs", c.epochs);
    f("batch_size", c.batch_size);
    f("steps_per_epoch", c.steps_per_epoch);
    f("learning_rate", c.learning_rate);
    f("weight_decay", c.weight_decay);
    f("window", c.window);
    f("frame_stride", c.frame_stride);
    f("clip_w", c.clip_w);
    f("d_tokens", c.d_tokens);
    f("n_swaps", c.n_swaps);
    f("n_blocks", c.n_blocks);
    f("channels", c.channels);
    f("heads", c.heads);
    f("state_dim", c.state_dim);
    f("scan_chunk", c.scan_chunk);
    f("lambda_cl", c.lambda_cl);
    f("alpha", c.alpha);
    f("masking", c.masking);
    f("region_in_all_blocks", c.region_in_all_blocks);
    f("share_region_encoder", c.share_region_encoder);
    f("ssm_identity", c.ssm_identity);
    f("aug_color_jitter", c.aug_color_jitter);
    f("aug_hflip", c.aug_hflip);
    f("precision", c.precision);
}

inline void assign(const std::string& key, const std::string& value, std::uint64_t& field) {
    field = std::stoull(value);
    (void)key;
}
inline void assign(const std::string&, const std::string& value, int& field) {
    field = std::stoi(value);
}
inline void assign(const std::string&, const std::string& value, double& field) {
    field = std::stod(value);
}
inline void assign(const std::string& key, const std::string& value, bool& field) {
    if (value == "true" || value == "1")
        field = true;
    else if (value == "false" || value == "0")
        field = false;
    else
        throw ConfigError("config: bad boolean for " + key + ": " + value);
}
inline void assign(const std::string&, const std::string& value, std::string& field) {
    field = value;
}

}  // namespace config_detail

inline RunConfig parse_config_text(std::istream& in, const std::string& source) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::string key, eq, value;
        std::istringstream ls(line);
        if (!(ls >> key)) continue;
        if (!(ls >> eq >> value) || eq != "=")
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        bool found = false;
        try {
            config_detail::for_each_field(cfg, [&](const char* name, auto& field) {
                if (key == name) {
                    config_detail::assign(key, value, field);
                    found = true;
                }
            });
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": bad value for " + key);
        }
        if (!found)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown key " + key);
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path);
    return parse_config_text(f, path);
}

inline std::string config_to_text(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    std::ostringstream out;
    out.precision(17);
    config_detail::for_each_field(cfg, [&](const char* name, auto& field) {
        using F = std::decay_t<decltype(field)>;
        out << name << " = ";
        if constexpr (std::is_same_v<F, bool>)
            out << (field ? "true" : "false");
        else
            out << field;
        out << "\n";
    });
    return out.str();
}

}  // namespace pmnet

#endif  // PMNET_CONFIG_HPP
