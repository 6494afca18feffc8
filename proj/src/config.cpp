#include <set>

#include "mmreg/trainer.hpp"

namespace mmreg {

using nlohmann::json;

PoolMode parse_pool_mode(std::string_view s) {
    if (s == "max") return PoolMode::max;
    if (s == "mean") return PoolMode::mean;
    throw ConfigError("unknown pooling mode '" + std::string(s) + "' (expected max or mean)");
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (k < 2) throw ConfigError("k must be >= 2, got " + std::to_string(k));
    if (head_count < 1) throw ConfigError("head_count must be >= 1");
    if (hidden_dim < 1 || basis_count < 1 || shared_dim < 1)
        throw ConfigError("hidden_dim, basis_count and shared_dim must be >= 1");
    dropout.validate();
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("beta1 and beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

json TrainConfig::to_json() const {
    json j;
    j["lr"] = lr;
    j["batch_size"] = batch_size;
    j["max_epochs"] = max_epochs;
    j["early_stop_patience"] = early_stop_patience;
    j["k"] = k;
    j["seed"] = seed;
    j["head_count"] = head_count;
    j["hidden_dim"] = hidden_dim;
    j["basis_count"] = basis_count;
    j["shared_dim"] = shared_dim;
    j["video_pool"] = std::string(to_string(pooling.video));
    j["audio_pool"] = std::string(to_string(pooling.audio));
    j["dropout_temporal"] = dropout.temporal;
    j["dropout_text"] = dropout.text;
    j["dropout_adapter"] = dropout.adapter;
    j["dropout_head"] = dropout.head;
    j["clamp"] = clamp;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["eps"] = eps;
    j["weight_decay"] = weight_decay;
    j["target_train_mse"] = target_train_mse ? json(*target_train_mse) : json(nullptr);
    return j;
}

std::vector<std::string> train_config_keys() {
    std::vector<std::string> keys;
    const json doc = TrainConfig{}.to_json();
    for (const auto& [key, _] : doc.items()) keys.push_back(key);
    return keys;
}

TrainConfig TrainConfig::from_json(const json& doc, const TrainConfig& base) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    const auto known = train_config_keys();
    const std::set<std::string> known_set(known.begin(), known.end());
    for (const auto& [key, _] : doc.items())
        if (!known_set.count(key)) throw ConfigError("unknown config key '" + key + "'");

    TrainConfig c = base;
    auto get = [&](const char* key, auto& field) {
        if (!doc.contains(key)) return;
        try {
            field = doc.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "' has the wrong type: " + e.what());
        }
    };
    get("lr", c.lr);
    get("batch_size", c.batch_size);
    get("max_epochs", c.max_epochs);
    get("early_stop_patience", c.early_stop_patience);
    get("k", c.k);
    get("seed", c.seed);
    get("head_count", c.head_count);
    get("hidden_dim", c.hidden_dim);
    get("basis_count", c.basis_count);
    get("shared_dim", c.shared_dim);
    std::string pool;
    if (doc.contains("video_pool")) {
        get("video_pool", pool);
        c.pooling.video = parse_pool_mode(pool);
    }
    if (doc.contains("audio_pool")) {
        get("audio_pool", pool);
        c.pooling.audio = parse_pool_mode(pool);
    }
    get("dropout_temporal", c.dropout.temporal);
    get("dropout_text", c.dropout.text);
    get("dropout_adapter", c.dropout.adapter);
    get("dropout_head", c.dropout.head);
    get("clamp", c.clamp);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("weight_decay", c.weight_decay);
    if (doc.contains("target_train_mse")) {
        if (doc["target_train_mse"].is_null()) {
            c.target_train_mse.reset();
        } else {
            double t = 0;
            get("target_train_mse", t);
            c.target_train_mse = t;
        }
    }
    c.validate();
    return c;
}

}  // namespace mmreg
