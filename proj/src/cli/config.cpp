#include "ctxseg/cli/config.hpp"

#include <fstream>
#include <map>

namespace ctxseg {

namespace fs = std::filesystem;

namespace {

// Keys whose default is null, with the type they accept otherwise.
const std::map<std::string, Json::value_t>& nullable_keys() {
    static const std::map<std::string, Json::value_t> keys = {
        {"data.manifest", Json::value_t::string},
        {"train.mutate_backbone_at", Json::value_t::number_unsigned},
    };
    return keys;
}

bool is_integer(const Json& v) { return v.is_number_integer(); }

bool accepts(Json::value_t expected, const Json& v) {
    switch (expected) {
        case Json::value_t::number_float: return v.is_number();
        case Json::value_t::number_integer: return is_integer(v);
        case Json::value_t::number_unsigned: return v.is_number_unsigned() || (is_integer(v) && v.get<long long>() >= 0);
        case Json::value_t::boolean: return v.is_boolean();
        case Json::value_t::string: return v.is_string();
        default: return false;
    }
}

std::string type_name(Json::value_t t) {
    switch (t) {
        case Json::value_t::number_float: return "number";
        case Json::value_t::number_integer:
        case Json::value_t::number_unsigned: return "integer";
        case Json::value_t::boolean: return "boolean";
        case Json::value_t::string: return "string";
        case Json::value_t::array: return "list";
        case Json::value_t::object: return "object";
        default: return "null";
    }
}

void merge_at(Json& base, const Json& patch, const std::string& prefix) {
    if (!patch.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        Json& slot = base[it.key()];
        const Json& value = it.value();
        if (slot.is_object()) {
            merge_at(slot, value, key);
            continue;
        }
        if (slot.is_null()) {
            const auto nk = nullable_keys().find(key);
            if (value.is_null() || (nk != nullable_keys().end() && accepts(nk->second, value))) {
                slot = value;
                continue;
            }
            throw ConfigError("config key '" + key + "' expects " +
                              (nk == nullable_keys().end() ? "null" : type_name(nk->second)) + " or null");
        }
        if (slot.is_array()) {
            if (!value.is_array()) throw ConfigError("config key '" + key + "' expects a list");
            const auto elem = slot.empty() ? Json::value_t::string : slot.front().type();
            for (const auto& v : value)
                if (!accepts(elem, v)) throw ConfigError("config key '" + key + "' expects a list of " + type_name(elem));
            slot = value;
            continue;
        }
        if (!accepts(slot.type(), value))
            throw ConfigError("config key '" + key + "' expects " + type_name(slot.type()) + ", got " + type_name(value.type()));
        if (slot.is_number_float()) slot = value.get<double>();
        else slot = value;
    }
}

std::size_t as_size(const Json& v) { return v.get<std::size_t>(); }

}  // namespace

Json default_config() {
    const BackboneConfig b;
    const SyntheticTaskSpec t;
    const CouplerConfig c;
    const LossConfig l;
    Json all_kinds = Json::array();
    for (auto k : kAllPromptKinds) all_kinds.push_back(std::string(to_string(k)));
    return {
        {"backbone",
         {{"text_width", b.text_width}, {"vision_width", b.vision_width}, {"joint_width", b.joint_width},
          {"text_layers", b.text_layers}, {"vision_layers", b.vision_layers}, {"max_text_tokens", b.max_text_tokens},
          {"patch_size", b.patch_size}, {"image_size", b.image_size}, {"vocab_size", b.vocab_size},
          {"text_heads", b.text_heads}, {"vision_heads", b.vision_heads}, {"decoder_layers", b.decoder_layers},
          {"decoder_channels", b.decoder_channels}, {"mlp_ratio", b.mlp_ratio},
          {"upsampler_kernel", b.upsampler_kernel}, {"seed", b.seed}}},
        {"data",
         {{"manifest", nullptr},
          {"task",
           {{"n_classes", t.n_classes}, {"train_samples", t.train_samples}, {"val_samples", t.val_samples},
            {"test_samples", t.test_samples}, {"image_size", t.image_size}, {"seed", t.seed},
            {"min_extent", t.min_extent}, {"max_extent", t.max_extent}}}}},
        {"train",
         {{"steps", 500u}, {"batch_size", 32u}, {"micro_batch", 4u}, {"seed", 0u}, {"strategy", "coop"},
          {"prompt_length", 4u}, {"prompt_depth", 1u}, {"init", "gaussian"}, {"use_upsampler", true},
          {"eval_every", 50u}, {"augment", true}, {"learning_rate", 1e-3}, {"weight_decay", 0.0},
          {"mutate_backbone_at", nullptr}}},
        {"coupler",
         {{"unified_width", c.unified_width}, {"use_lora", c.use_lora}, {"intermediate_dim", c.intermediate_dim},
          {"attn_heads", c.attn_heads}, {"attn_dropout", c.attn_dropout}, {"attn_ff_dim", c.attn_ff_dim},
          {"layernorm_first", c.layernorm_first}, {"separate_layernorm", c.separate_layernorm}}},
        {"loss", {{"lambda_d", l.lambda_d}, {"lambda_ce", l.lambda_ce}, {"smooth", l.smooth}}},
        {"sweep",
         {{"strategies", Json::array({"coop"})}, {"n_trials", 20u}, {"sampler", "tpe"}, {"seed", 0u},
          {"trial_steps", 100u}, {"objective", "train"}, {"task", "synthetic"}}},
        {"ablation",
         {{"strategies", all_kinds},
          {"init_strategies", Json::array({"deep-textual", "coop", "cocoop", "maple"})},
          {"seeds", Json::array({0u, 1u, 2u})}}},
    };
}

void merge_config(Json& base, const Json& patch) { merge_at(base, patch, ""); }

void apply_override(Json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    // lists may also be given comma-separated
    Json patch = value;
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        parts.push_back(path.substr(start, dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    const Json* slot = &config;
    for (const auto& p : parts) {
        if (!slot->is_object() || !slot->contains(p)) throw ConfigError("unknown config key '" + path + "'");
        slot = &(*slot)[p];
    }
    if (slot->is_array() && value.is_string()) {
        Json list = Json::array();
        std::string s = value.get<std::string>();
        std::size_t b = 0;
        while (b <= s.size()) {
            const auto comma = s.find(',', b);
            const std::string item = s.substr(b, comma == std::string::npos ? std::string::npos : comma - b);
            if (!item.empty()) {
                Json parsed = Json::parse(item, nullptr, false);
                list.push_back(parsed.is_discarded() ? Json(item) : parsed);
            }
            if (comma == std::string::npos) break;
            b = comma + 1;
        }
        patch = list;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
    merge_config(config, patch);
}

Json load_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
    Json config = default_config();
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("cannot open config file " + path->string());
        Json file = Json::parse(in, nullptr, false);
        if (file.is_discarded()) throw ConfigError("config file " + path->string() + " is not valid JSON");
        merge_config(config, file);
    }
    for (const auto& o : overrides) apply_override(config, o);
    return config;
}

BackboneConfig backbone_config(const Json& config) {
    const Json& j = config.at("backbone");
    BackboneConfig b;
    b.text_width = as_size(j.at("text_width"));
    b.vision_width = as_size(j.at("vision_width"));
    b.joint_width = as_size(j.at("joint_width"));
    b.text_layers = as_size(j.at("text_layers"));
    b.vision_layers = as_size(j.at("vision_layers"));
    b.max_text_tokens = as_size(j.at("max_text_tokens"));
    b.patch_size = as_size(j.at("patch_size"));
    b.image_size = as_size(j.at("image_size"));
    b.vocab_size = as_size(j.at("vocab_size"));
    b.text_heads = as_size(j.at("text_heads"));
    b.vision_heads = as_size(j.at("vision_heads"));
    b.decoder_layers = as_size(j.at("decoder_layers"));
    b.decoder_channels = as_size(j.at("decoder_channels"));
    b.mlp_ratio = as_size(j.at("mlp_ratio"));
    b.upsampler_kernel = as_size(j.at("upsampler_kernel"));
    b.seed = j.at("seed").get<std::uint64_t>();
    b.validate();
    return b;
}

SyntheticTaskSpec task_spec(const Json& config) {
    const Json& j = config.at("data").at("task");
    SyntheticTaskSpec t;
    t.n_classes = as_size(j.at("n_classes"));
    t.train_samples = as_size(j.at("train_samples"));
    t.val_samples = as_size(j.at("val_samples"));
    t.test_samples = as_size(j.at("test_samples"));
    t.image_size = as_size(j.at("image_size"));
    t.seed = j.at("seed").get<std::uint64_t>();
    t.min_extent = j.at("min_extent").get<double>();
    t.max_extent = j.at("max_extent").get<double>();
    t.validate();
    return t;
}

std::vector<PromptKind> strategy_list(const Json& list) {
    std::vector<PromptKind> out;
    for (const auto& s : list) out.push_back(parse_prompt_kind(s.get<std::string>()));
    if (out.empty()) throw ConfigError("strategy list is empty");
    return out;
}

TrainRunConfig train_config(const Json& config) {
    const Json& j = config.at("train");
    const Json& c = config.at("coupler");
    const Json& l = config.at("loss");
    TrainRunConfig r;
    r.steps = as_size(j.at("steps"));
    r.batch_size = as_size(j.at("batch_size"));
    r.micro_batch = as_size(j.at("micro_batch"));
    r.seed = j.at("seed").get<std::uint64_t>();
    r.kind = parse_prompt_kind(j.at("strategy").get<std::string>());
    r.prompt_length = as_size(j.at("prompt_length"));
    r.prompt_depth = as_size(j.at("prompt_depth"));
    r.init = parse_init_mode(j.at("init").get<std::string>());
    r.use_upsampler = j.at("use_upsampler").get<bool>();
    r.eval_every = as_size(j.at("eval_every"));
    r.augment = j.at("augment").get<bool>();
    r.optimizer.learning_rate = j.at("learning_rate").get<double>();
    r.optimizer.weight_decay = j.at("weight_decay").get<double>();
    if (!j.at("mutate_backbone_at").is_null()) r.mutate_backbone_at = as_size(j.at("mutate_backbone_at"));
    r.coupler.unified_width = as_size(c.at("unified_width"));
    r.coupler.use_lora = c.at("use_lora").get<bool>();
    r.coupler.intermediate_dim = as_size(c.at("intermediate_dim"));
    r.coupler.attn_heads = as_size(c.at("attn_heads"));
    r.coupler.attn_dropout = c.at("attn_dropout").get<double>();
    r.coupler.attn_ff_dim = as_size(c.at("attn_ff_dim"));
    r.coupler.layernorm_first = c.at("layernorm_first").get<bool>();
    r.coupler.separate_layernorm = c.at("separate_layernorm").get<bool>();
    r.loss.lambda_d = l.at("lambda_d").get<double>();
    r.loss.lambda_ce = l.at("lambda_ce").get<double>();
    r.loss.smooth = l.at("smooth").get<double>();
    r.validate();
    return r;
}

SweepSettings sweep_settings(const Json& config) {
    const Json& j = config.at("sweep");
    SweepSettings s;
    s.strategies = strategy_list(j.at("strategies"));
    s.n_trials = as_size(j.at("n_trials"));
    s.sampler = parse_sampler_kind(j.at("sampler").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.trial_steps = as_size(j.at("trial_steps"));
    s.objective = j.at("objective").get<std::string>();
    if (s.objective != "train" && s.objective != "quadratic")
        throw ConfigError("sweep.objective must be 'train' or 'quadratic'");
    s.task = j.at("task").get<std::string>();
    if (s.n_trials == 0) throw ConfigError("sweep.n_trials must be at least 1");
    return s;
}

}  // namespace ctxseg
