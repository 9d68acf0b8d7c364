#include "deidvc/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace deidvc::cfg {

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;
using KeyTable = std::map<std::string, std::map<std::string, Setter>>;

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
    throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& v) {
    std::size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("not an integer: " + v);
    return r;
}

float to_float(const std::string& v) {
    std::size_t used = 0;
    const float r = std::stof(v, &used);
    if (used != v.size()) throw std::invalid_argument("not a number: " + v);
    return r;
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("not a number: " + v);
    return r;
}

const KeyTable& key_table() {
    static const KeyTable table = [] {
        KeyTable t;
#define INT_KEY(sec, key, field) \
    t[sec][key] = [](RunConfig& c, const std::string& v) { c.field = to_int(v); }
#define FLOAT_KEY(sec, key, field) \
    t[sec][key] = [](RunConfig& c, const std::string& v) { c.field = to_float(v); }
#define DOUBLE_KEY(sec, key, field) \
    t[sec][key] = [](RunConfig& c, const std::string& v) { c.field = to_double(v); }
        INT_KEY("data", "n_speakers", data.n_speakers);
        INT_KEY("data", "n_test_speakers", data.n_test_speakers);
        INT_KEY("data", "utts_per_speaker", data.utts_per_speaker);
        DOUBLE_KEY("data", "utt_seconds", data.utt_seconds);

        INT_KEY("spkemb", "steps", spkemb.steps);
        INT_KEY("spkemb", "batch_size", spkemb.batch_size);
        FLOAT_KEY("spkemb", "lr", spkemb.lr);
        INT_KEY("spkemb", "crop_frames", spkemb.crop_frames);

        FLOAT_KEY("vc", "mu", vc.mu);
        FLOAT_KEY("vc", "lambda", vc.lambda);
        FLOAT_KEY("vc", "lambda_stage2", vc.lambda_stage2);
        FLOAT_KEY("vc", "alpha", vc.alpha);
        FLOAT_KEY("vc", "beta", vc.beta);
        INT_KEY("vc", "stage1_steps", vc.stage1_steps);
        INT_KEY("vc", "stage2_steps", vc.stage2_steps);
        INT_KEY("vc", "batch_size", vc.batch_size);
        FLOAT_KEY("vc", "lr", vc.lr);
        INT_KEY("vc", "crop_frames", vc.crop_frames);

        FLOAT_KEY("psg", "lambda_dist", psg.lambda_dist);
        FLOAT_KEY("psg", "lr", psg.lr);
        INT_KEY("psg", "epochs", psg.epochs);
        INT_KEY("psg", "batch_size", psg.batch_size);

        INT_KEY("eval", "griffin_lim_iterations", eval.griffin_lim_iterations);
        INT_KEY("eval", "enroll_crops", eval.enroll_crops);
#undef INT_KEY
#undef FLOAT_KEY
#undef DOUBLE_KEY
        return t;
    }();
    return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    const KeyTable& table = key_table();
    std::istringstream in(text);
    std::string raw, section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(origin, lineno, "malformed section header: " + line);
            section = trim(line.substr(1, line.size() - 2));
            if (!table.count(section)) fail(origin, lineno, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(origin, lineno, "expected key=value, got: " + line);
        if (section.empty()) fail(origin, lineno, "key outside any section: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const auto& keys = table.at(section);
        const auto it = keys.find(key);
        if (it == keys.end())
            fail(origin, lineno, "unknown key '" + key + "' in section [" + section + "]");
        try {
            it->second(cfg, val);
        } catch (const std::exception& e) {
            fail(origin, lineno, std::string("bad value for '") + key + "': " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_config: cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path.string());
}

}  // namespace deidvc::cfg
