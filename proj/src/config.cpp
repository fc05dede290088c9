#include "mmrec/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mmrec/error.hpp"

namespace mmrec {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    int64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out, 10);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw Error(ErrorKind::config, "config: '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

uint64_t parse_u64_cfg(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out, 10);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw Error(ErrorKind::config,
                    "config: '" + key + "' expects an unsigned integer, got '" + v + "'");
    return out;
}

double parse_f64(const std::string& key, const std::string& v) {
    if (v.empty())
        throw Error(ErrorKind::config, "config: '" + key + "' expects a number, got ''");
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size())
        throw Error(ErrorKind::config, "config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

void apply_key(RunConfig& c, const std::string& k, const std::string& v) {
    if (k == "d_raw") c.d_raw = parse_i64(k, v);
    else if (k == "d") c.d = parse_i64(k, v);
    else if (k == "n_layers") c.n_layers = parse_i64(k, v);
    else if (k == "n_heads") c.n_heads = parse_i64(k, v);
    else if (k == "max_frames") c.max_frames = parse_i64(k, v);
    else if (k == "n_max") c.n_max = parse_i64(k, v);
    else if (k == "embed_dropout") c.embed_dropout = parse_f64(k, v);
    else if (k == "hidden_dropout") c.hidden_dropout = parse_f64(k, v);
    else if (k == "tau") c.tau = parse_f64(k, v);
    else if (k == "lambda_vv") c.lambda_vv = parse_f64(k, v);
    else if (k == "lambda_tt") c.lambda_tt = parse_f64(k, v);
    else if (k == "lambda_vt") c.lambda_vt = parse_f64(k, v);
    else if (k == "lambda_vtvt") c.lambda_vtvt = parse_f64(k, v);
    else if (k == "pretrain_batch") c.pretrain_batch = parse_i64(k, v);
    else if (k == "pretrain_epochs") c.pretrain_epochs = parse_i64(k, v);
    else if (k == "pretrain_lr") c.pretrain_lr = parse_f64(k, v);
    else if (k == "mask_ratio") c.mask_ratio = parse_f64(k, v);
    else if (k == "finetune_batch") c.finetune_batch = parse_i64(k, v);
    else if (k == "finetune_epochs") c.finetune_epochs = parse_i64(k, v);
    else if (k == "finetune_lr") c.finetune_lr = parse_f64(k, v);
    else if (k == "patience") c.patience = parse_i64(k, v);
    else if (k == "candidate_mode") {
        if (v == "full") c.candidate_mode = CandidateMode::full;
        else if (v == "in-batch") c.candidate_mode = CandidateMode::in_batch;
        else
            throw Error(ErrorKind::config,
                        "config: candidate_mode must be 'full' or 'in-batch', got '" + v + "'");
    } else if (k == "lr_decay") c.lr_decay = parse_f64(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_f64(k, v);
    else if (k == "adam_beta1") c.adam_beta1 = parse_f64(k, v);
    else if (k == "adam_beta2") c.adam_beta2 = parse_f64(k, v);
    else if (k == "adam_eps") c.adam_eps = parse_f64(k, v);
    else if (k == "seed") c.seed = parse_u64_cfg(k, v);
    else
        throw Error(ErrorKind::config, "config: unknown key '" + k + "'");
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream is(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::parse,
                        "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw Error(ErrorKind::parse, "config line " + std::to_string(lineno) + ": empty key");
        if (out.count(key))
            throw Error(ErrorKind::config, "config: duplicate key '" + key + "'");
        out.emplace(key, value);
    }
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::io, "cannot open for reading: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string format_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    for (const auto& [k, v] : parse_kv_text(text)) apply_key(cfg, k, v);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config_text(read_text_file(path));
}

std::string serialize_run_config(const RunConfig& c) {
    std::ostringstream os;
    os << "d_raw = " << c.d_raw << '\n'
       << "d = " << c.d << '\n'
       << "n_layers = " << c.n_layers << '\n'
       << "n_heads = " << c.n_heads << '\n'
       << "max_frames = " << c.max_frames << '\n'
       << "n_max = " << c.n_max << '\n'
       << "embed_dropout = " << format_double(c.embed_dropout) << '\n'
       << "hidden_dropout = " << format_double(c.hidden_dropout) << '\n'
       << "tau = " << format_double(c.tau) << '\n'
       << "lambda_vv = " << format_double(c.lambda_vv) << '\n'
       << "lambda_tt = " << format_double(c.lambda_tt) << '\n'
       << "lambda_vt = " << format_double(c.lambda_vt) << '\n'
       << "lambda_vtvt = " << format_double(c.lambda_vtvt) << '\n'
       << "pretrain_batch = " << c.pretrain_batch << '\n'
       << "pretrain_epochs = " << c.pretrain_epochs << '\n'
       << "pretrain_lr = " << format_double(c.pretrain_lr) << '\n'
       << "mask_ratio = " << format_double(c.mask_ratio) << '\n'
       << "finetune_batch = " << c.finetune_batch << '\n'
       << "finetune_epochs = " << c.finetune_epochs << '\n'
       << "finetune_lr = " << format_double(c.finetune_lr) << '\n'
       << "patience = " << c.patience << '\n'
       << "candidate_mode = " << (c.candidate_mode == CandidateMode::full ? "full" : "in-batch")
       << '\n'
       << "lr_decay = " << format_double(c.lr_decay) << '\n'
       << "weight_decay = " << format_double(c.weight_decay) << '\n'
       << "adam_beta1 = " << format_double(c.adam_beta1) << '\n'
       << "adam_beta2 = " << format_double(c.adam_beta2) << '\n'
       << "adam_eps = " << format_double(c.adam_eps) << '\n'
       << "seed = " << c.seed << '\n';
    return os.str();
}

void RunConfig::validate() const {
    model_config().validate();
    if (lambda_vv < 0 || lambda_tt < 0 || lambda_vt < 0 || lambda_vtvt < 0)
        throw Error(ErrorKind::config, "config: lambda weights must be non-negative");
    if (lambda_vv + lambda_tt + lambda_vt + lambda_vtvt <= 0.0)
        throw Error(ErrorKind::config, "config: at least one lambda weight must be positive");
    if (pretrain_batch < 1) throw Error(ErrorKind::config, "config: pretrain_batch must be >= 1");
    if (pretrain_epochs < 0) throw Error(ErrorKind::config, "config: pretrain_epochs must be >= 0");
    if (pretrain_lr <= 0.0) throw Error(ErrorKind::config, "config: pretrain_lr must be positive");
    if (mask_ratio < 0.0 || mask_ratio > 1.0)
        throw Error(ErrorKind::config, "config: mask_ratio must be in [0,1]");
    if (finetune_batch < 1) throw Error(ErrorKind::config, "config: finetune_batch must be >= 1");
    if (finetune_epochs < 0) throw Error(ErrorKind::config, "config: finetune_epochs must be >= 0");
    if (finetune_lr <= 0.0) throw Error(ErrorKind::config, "config: finetune_lr must be positive");
    if (patience < 1) throw Error(ErrorKind::config, "config: patience must be >= 1");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
        throw Error(ErrorKind::config, "config: lr_decay must be in (0,1]");
    if (weight_decay < 0.0) throw Error(ErrorKind::config, "config: weight_decay must be >= 0");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
        throw Error(ErrorKind::config, "config: adam betas must be in [0,1)");
    if (adam_eps <= 0.0) throw Error(ErrorKind::config, "config: adam_eps must be positive");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.d_raw = d_raw;
    m.d = d;
    m.n_layers = n_layers;
    m.n_heads = n_heads;
    m.max_frames = max_frames;
    m.n_max = n_max;
    m.embed_dropout = embed_dropout;
    m.hidden_dropout = hidden_dropout;
    m.tau = tau;
    return m;
}

AdamWConfig RunConfig::adamw_config() const {
    AdamWConfig a;
    a.beta1 = adam_beta1;
    a.beta2 = adam_beta2;
    a.eps = adam_eps;
    a.weight_decay = weight_decay;
    return a;
}

}  // namespace mmrec
