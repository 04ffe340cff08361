#include "ctxseg/sweep/study.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ctxseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 rng;
    std::istringstream is(s);
    is >> rng;
    if (!is) throw StudyError("corrupt sampler state in study file");
    return rng;
}

json space_to_json(const SearchSpace& space) {
    json dims = json::array();
    for (const auto& d : space.dimensions) {
        json kinds = json::array();
        for (auto k : d.applies_to) kinds.push_back(std::string(to_string(k)));
        dims.push_back({{"name", d.name}, {"kind", std::string(to_string(d.kind))}, {"low", d.low}, {"high", d.high},
                        {"choices", d.choices}, {"applies_to", kinds}});
    }
    return dims;
}

SearchSpace space_from_json(const json& j) {
    SearchSpace s;
    for (const auto& d : j) {
        Dimension dim{d.at("name").get<std::string>(), parse_dim_kind(d.at("kind").get<std::string>()),
                      d.at("low").get<double>(), d.at("high").get<double>(),
                      d.at("choices").get<std::vector<double>>(), {}};
        for (const auto& k : d.at("applies_to")) dim.applies_to.push_back(parse_prompt_kind(k.get<std::string>()));
        s.dimensions.push_back(std::move(dim));
    }
    return s;
}

json record_to_json(const TrialRecord& r) {
    json j = {{"type", "trial"},
              {"trial_id", r.trial_id},
              {"config", r.config},
              {"val_dice", r.val_dice},
              {"test_dice", r.test_dice},
              {"status", r.status == TrialStatus::complete ? "complete" : "failed"},
              {"seed", r.seed},
              {"wall_time", r.wall_time}};
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

TrialRecord record_from_json(const json& j) {
    TrialRecord r;
    r.trial_id = j.at("trial_id").get<std::size_t>();
    r.config = j.at("config").get<TrialConfig>();
    r.val_dice = j.at("val_dice").get<double>();
    r.test_dice = j.at("test_dice").get<double>();
    const auto status = j.at("status").get<std::string>();
    if (status != "complete" && status != "failed") throw StudyError("unknown trial status '" + status + "'");
    r.status = status == "complete" ? TrialStatus::complete : TrialStatus::failed;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.wall_time = j.at("wall_time").get<double>();
    r.error = j.value("error", std::string());
    return r;
}

}  // namespace

std::optional<std::size_t> StudyState::best() const {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (trials[i].status != TrialStatus::complete) continue;
        if (!best || trials[i].val_dice > trials[*best].val_dice) best = i;
    }
    return best;
}

std::vector<Observation> StudyState::observations() const {
    std::vector<Observation> out;
    for (const auto& t : trials)
        if (t.status == TrialStatus::complete) out.push_back({t.config, t.val_dice});
    return out;
}

void save_study(const fs::path& path, const StudyState& state) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw StudyError("cannot write " + tmp.string());
        json header = {{"type", "header"},
                       {"kind", std::string(to_string(state.kind))},
                       {"sampler", std::string(to_string(state.sampler))},
                       {"seed", state.seed},
                       {"rng_state", state.rng_state},
                       {"space", space_to_json(state.space)}};
        out << header.dump() << '\n';
        for (const auto& r : state.trials) out << record_to_json(r).dump() << '\n';
        if (!out) throw StudyError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

StudyState load_study(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw StudyError("cannot open study file " + path.string());
    StudyState s;
    std::string line;
    bool header = false;
    std::size_t lineno = 0;
    try {
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const json j = json::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "header") {
                if (header) throw StudyError("duplicate header");
                header = true;
                s.kind = parse_prompt_kind(j.at("kind").get<std::string>());
                s.sampler = parse_sampler_kind(j.at("sampler").get<std::string>());
                s.seed = j.at("seed").get<std::uint64_t>();
                s.rng_state = j.at("rng_state").get<std::string>();
                s.space = space_from_json(j.at("space"));
            } else if (type == "trial") {
                if (!header) throw StudyError("trial before header");
                s.trials.push_back(record_from_json(j));
            } else {
                throw StudyError("unknown line type '" + type + "'");
            }
        }
    } catch (const json::exception& e) {
        throw StudyError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
        throw StudyError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!header) throw StudyError(path.string() + " has no header line");
    return s;
}

StudyState run_study(PromptKind kind, const SearchSpace& space, const Objective& objective,
                     const StudyOptions& options) {
    space.applicable(kind);
    StudyState st;
    if (options.path && fs::exists(*options.path)) {
        st = load_study(*options.path);
        if (st.kind != kind || !(st.space == space) || st.sampler != options.sampler || st.seed != options.seed)
            throw StudyError("study file " + options.path->string() + " belongs to a different study");
    } else {
        st.kind = kind;
        st.sampler = options.sampler;
        st.space = space;
        st.seed = options.seed;
        st.rng_state = rng_to_string(std::mt19937_64(options.seed));
    }
    std::mt19937_64 rng = rng_from_string(st.rng_state);

    std::size_t fresh = 0;
    while (st.trials.size() < options.n_trials && (!options.max_new_trials || fresh < *options.max_new_trials)) {
        TrialRecord rec;
        rec.trial_id = st.trials.size();
        rec.config = sample_trial(space, kind, st.observations(), rng, options.sampler, options.tpe);
        rec.seed = mix(options.seed, rec.trial_id);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const TrialOutcome o = objective(rec.config, rec.seed);
            auto ok = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
            if (!ok(o.val_dice) || !ok(o.test_dice)) throw std::runtime_error("objective returned a dice outside [0,1]");
            rec.val_dice = o.val_dice;
            rec.test_dice = o.test_dice;
        } catch (const FreezeViolation&) {
            throw;
        } catch (const std::exception& e) {
            rec.status = TrialStatus::failed;
            rec.error = e.what();
        }
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        st.trials.push_back(std::move(rec));
        st.rng_state = rng_to_string(rng);
        if (options.path) save_study(*options.path, st);
        ++fresh;
    }
    return st;
}

TrainRunConfig apply_trial(TrainRunConfig cfg, PromptKind kind, const TrialConfig& config) {
    cfg.kind = kind;
    auto get = [&](const char* key) -> std::optional<double> {
        auto it = config.find(key);
        if (it == config.end()) return std::nullopt;
        return it->second;
    };
    auto count = [](double v) { return static_cast<std::size_t>(std::llround(v)); };
    if (auto v = get("learning_rate")) cfg.optimizer.learning_rate = *v;
    if (auto v = get("weight_decay")) cfg.optimizer.weight_decay = *v;
    if (auto v = get("prompt_depth")) cfg.prompt_depth = count(*v);
    if (auto v = get("intermediate_dim")) cfg.coupler.intermediate_dim = count(*v);
    if (auto v = get("use_lora")) cfg.coupler.use_lora = *v != 0.0;
    if (auto v = get("attn_heads")) cfg.coupler.attn_heads = count(*v);
    if (auto v = get("attn_dropout")) cfg.coupler.attn_dropout = *v;
    if (auto v = get("attn_ff_dim")) cfg.coupler.attn_ff_dim = count(*v);
    if (auto v = get("layernorm_first")) cfg.coupler.layernorm_first = *v != 0.0;
    if (auto v = get("shared_dim")) cfg.coupler.unified_width = count(*v);
    return cfg;
}

Objective training_objective(const Backbone& backbone, const Dataset& data, TrainRunConfig base, PromptKind kind) {
    return [&backbone, &data, base, kind](const TrialConfig& config, std::uint64_t seed) {
        TrainRunConfig cfg = apply_trial(base, kind, config);
        cfg.seed = seed;
        const auto art = train(backbone, data, cfg);
        return TrialOutcome{art.val_dice, art.test_dice};
    };
}

Objective quadratic_objective(const SearchSpace& space, PromptKind kind, std::uint64_t seed) {
    const auto dims = space.applicable(kind);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    std::vector<double> optimum;
    for (std::size_t i = 0; i < dims.size(); ++i) optimum.push_back(u(rng));
    return [dims, optimum](const TrialConfig& config, std::uint64_t) {
        double dist = 0.0;
        for (std::size_t i = 0; i < dims.size(); ++i) {
            const auto& d = dims[i];
            const double v = config.at(d.name);
            double pos = 0.0;
            switch (d.kind) {
                case DimKind::log_uniform: pos = std::log(v / d.low) / std::log(d.high / d.low); break;
                case DimKind::uniform:
                case DimKind::integer: pos = d.high > d.low ? (v - d.low) / (d.high - d.low) : 0.5; break;
                case DimKind::categorical: {
                    const auto idx = std::find(d.choices.begin(), d.choices.end(), v) - d.choices.begin();
                    pos = d.choices.size() > 1 ? static_cast<double>(idx) / static_cast<double>(d.choices.size() - 1) : 0.5;
                    break;
                }
            }
            dist += (pos - optimum[i]) * (pos - optimum[i]);
        }
        const double value = std::exp(-3.0 * dist);
        return TrialOutcome{value, value};
    };
}

}  // namespace ctxseg
