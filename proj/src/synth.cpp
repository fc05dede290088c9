#include "mmrec/synth.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mmrec/config.hpp"
#include "mmrec/rng.hpp"

namespace mmrec {

namespace {

double q32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::string padded(const char* prefix, int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%06lld", prefix, static_cast<long long>(i));
    return buf;
}

int64_t spec_i64(const std::map<std::string, std::string>& kv, const std::string& key,
                 int64_t fallback) {
    const auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    int64_t out = 0;
    const std::string& v = it->second;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out, 10);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw Error(ErrorKind::config, "synth spec: '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

double spec_f64(const std::map<std::string, std::string>& kv, const std::string& key,
                double fallback) {
    const auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    char* end = nullptr;
    const double out = std::strtod(it->second.c_str(), &end);
    if (it->second.empty() || end != it->second.c_str() + it->second.size())
        throw Error(ErrorKind::config,
                    "synth spec: '" + key + "' expects a number, got '" + it->second + "'");
    return out;
}

}  // namespace

void SynthSpec::validate() const {
    if (n_items < 1) throw Error(ErrorKind::config, "synth spec: n_items must be >= 1");
    if (n_users < 1) throw Error(ErrorKind::config, "synth spec: n_users must be >= 1");
    if (seq_len_min < 1 || seq_len_max < seq_len_min)
        throw Error(ErrorKind::config, "synth spec: need 1 <= seq_len_min <= seq_len_max");
    if (latent_dim < 1) throw Error(ErrorKind::config, "synth spec: latent_dim must be >= 1");
    if (d_raw < 1) throw Error(ErrorKind::config, "synth spec: d_raw must be >= 1");
    if (n_frames < 1) throw Error(ErrorKind::config, "synth spec: n_frames must be >= 1");
    if (branching < 0) throw Error(ErrorKind::config, "synth spec: branching must be >= 0");
    if (branching >= 1 && n_items < 2)
        throw Error(ErrorKind::config, "synth spec: successor structure needs >= 2 items");
    if (branching > n_items - 1)
        throw Error(ErrorKind::config, "synth spec: branching exceeds n_items - 1");
    if (noise_scale < 0.0) throw Error(ErrorKind::config, "synth spec: noise_scale must be >= 0");
}

SynthSpec parse_synth_spec_text(const std::string& text) {
    const auto kv = parse_kv_text(text);
    static const char* known[] = {"n_items",    "n_users", "seq_len_min", "seq_len_max",
                                  "latent_dim", "d_raw",   "n_frames",    "branching",
                                  "noise_scale"};
    for (const auto& [k, v] : kv) {
        bool ok = false;
        for (const char* K : known) ok = ok || k == K;
        if (!ok) throw Error(ErrorKind::config, "synth spec: unknown key '" + k + "'");
    }
    SynthSpec s;
    s.n_items = spec_i64(kv, "n_items", s.n_items);
    s.n_users = spec_i64(kv, "n_users", s.n_users);
    s.seq_len_min = spec_i64(kv, "seq_len_min", s.seq_len_min);
    s.seq_len_max = spec_i64(kv, "seq_len_max", s.seq_len_max);
    s.latent_dim = spec_i64(kv, "latent_dim", s.latent_dim);
    s.d_raw = spec_i64(kv, "d_raw", s.d_raw);
    s.n_frames = spec_i64(kv, "n_frames", s.n_frames);
    s.branching = spec_i64(kv, "branching", s.branching);
    s.noise_scale = spec_f64(kv, "noise_scale", s.noise_scale);
    s.validate();
    return s;
}

SynthSpec load_synth_spec(const std::string& path) {
    return parse_synth_spec_text(read_text_file(path));
}

std::string serialize_synth_spec(const SynthSpec& s) {
    std::ostringstream os;
    os << "n_items = " << s.n_items << '\n'
       << "n_users = " << s.n_users << '\n'
       << "seq_len_min = " << s.seq_len_min << '\n'
       << "seq_len_max = " << s.seq_len_max << '\n'
       << "latent_dim = " << s.latent_dim << '\n'
       << "d_raw = " << s.d_raw << '\n'
       << "n_frames = " << s.n_frames << '\n'
       << "branching = " << s.branching << '\n'
       << "noise_scale = " << format_double(s.noise_scale) << '\n';
    return os.str();
}

std::pair<Catalog, InteractionLog> generate_synthetic(const SynthSpec& spec, uint64_t seed) {
    spec.validate();
    Rng root(seed);

    // Per-item latents, drawn in ordinal order.
    Rng r_latent = root.stream(streams::synth_latent);
    std::vector<std::vector<double>> latents(static_cast<size_t>(spec.n_items));
    for (auto& z : latents) {
        z.resize(static_cast<size_t>(spec.latent_dim));
        for (double& v : z) v = r_latent.normal();
    }

    // Two fixed projections, scaled so feature magnitudes stay O(1).
    Rng r_proj = root.stream(streams::synth_projection);
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    const size_t proj_n = static_cast<size_t>(spec.d_raw * spec.latent_dim);
    std::vector<double> pv(proj_n), pt(proj_n);
    for (double& v : pv) v = r_proj.normal() * proj_scale;
    for (double& v : pt) v = r_proj.normal() * proj_scale;

    auto project = [&spec](const std::vector<double>& proj, const std::vector<double>& z) {
        std::vector<double> out(static_cast<size_t>(spec.d_raw), 0.0);
        for (int64_t i = 0; i < spec.d_raw; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < spec.latent_dim; ++j)
                acc += proj[static_cast<size_t>(i * spec.latent_dim + j)] *
                       z[static_cast<size_t>(j)];
            out[static_cast<size_t>(i)] = acc;
        }
        return out;
    };

    Catalog cat;
    cat.d_raw = spec.d_raw;
    Rng r_noise = root.stream(streams::synth_noise);
    for (int64_t i = 0; i < spec.n_items; ++i) {
        ItemRecord rec;
        rec.item_id = padded("item_", i);
        rec.has_visual = true;
        rec.has_text = true;
        const std::vector<double> base_v = project(pv, latents[static_cast<size_t>(i)]);
        const std::vector<double> base_t = project(pt, latents[static_cast<size_t>(i)]);
        rec.visual.resize(static_cast<size_t>(spec.n_frames));
        for (int64_t f = 0; f < spec.n_frames; ++f) {
            auto& frame = rec.visual[static_cast<size_t>(f)];
            frame.resize(static_cast<size_t>(spec.d_raw));
            for (int64_t j = 0; j < spec.d_raw; ++j)
                frame[static_cast<size_t>(j)] =
                    q32(base_v[static_cast<size_t>(j)] + spec.noise_scale * r_noise.normal());
        }
        rec.text.resize(static_cast<size_t>(spec.d_raw));
        for (int64_t j = 0; j < spec.d_raw; ++j)
            rec.text[static_cast<size_t>(j)] =
                q32(base_t[static_cast<size_t>(j)] + spec.noise_scale * r_noise.normal());
        cat.index.emplace(rec.item_id, i);
        cat.items.push_back(std::move(rec));
    }

    // Transition structure.
    Rng r_trans = root.stream(streams::synth_transitions);
    std::vector<std::vector<int64_t>> successors(static_cast<size_t>(spec.n_items));
    if (spec.branching == 1) {
        std::vector<int64_t> perm(static_cast<size_t>(spec.n_items));
        std::iota(perm.begin(), perm.end(), 0);
        r_trans.shuffle(perm);
        for (size_t j = 0; j < perm.size(); ++j)
            successors[static_cast<size_t>(perm[j])] = {perm[(j + 1) % perm.size()]};
    } else if (spec.branching > 1) {
        for (int64_t i = 0; i < spec.n_items; ++i) {
            // Sample `branching` distinct successors, excluding the item itself.
            std::vector<int64_t> pool(static_cast<size_t>(spec.n_items - 1));
            int64_t w = 0;
            for (int64_t j = 0; j < spec.n_items; ++j)
                if (j != i) pool[static_cast<size_t>(w++)] = j;
            for (int64_t pick = 0; pick < spec.branching; ++pick) {
                const uint64_t at = r_trans.uniform_below(static_cast<uint64_t>(pool.size()));
                successors[static_cast<size_t>(i)].push_back(pool[at]);
                pool.erase(pool.begin() + static_cast<int64_t>(at));
            }
        }
    }

    // User sequences; the timestamp is the event index within the user.
    Rng r_seq = root.stream(streams::synth_sequences);
    InteractionLog log;
    for (int64_t u = 0; u < spec.n_users; ++u) {
        const std::string user = padded("user_", u);
        const int64_t span = spec.seq_len_max - spec.seq_len_min + 1;
        const int64_t len =
            spec.seq_len_min +
            static_cast<int64_t>(r_seq.uniform_below(static_cast<uint64_t>(span)));
        int64_t cur = static_cast<int64_t>(r_seq.uniform_below(static_cast<uint64_t>(spec.n_items)));
        for (int64_t t = 0; t < len; ++t) {
            log.events.push_back({user, cat.items[static_cast<size_t>(cur)].item_id,
                                  static_cast<uint64_t>(t)});
            if (spec.branching == 0) {
                cur = static_cast<int64_t>(
                    r_seq.uniform_below(static_cast<uint64_t>(spec.n_items)));
            } else if (spec.branching == 1) {
                cur = successors[static_cast<size_t>(cur)][0];
            } else {
                const auto& succ = successors[static_cast<size_t>(cur)];
                cur = succ[r_seq.uniform_below(static_cast<uint64_t>(succ.size()))];
            }
        }
    }
    return {std::move(cat), std::move(log)};
}

}  // namespace mmrec
