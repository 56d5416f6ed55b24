#pragma once

#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "optimizer.hpp"
#include "types.hpp"

namespace hybridreg {

namespace detail {

inline void check_known_keys(const nlohmann::json& j, const std::set<std::string>& known,
                             const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw io_error("config: unknown key '" + where + it.key() + "'");
}

template <class T>
inline void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw io_error(std::string("config: key '") + key + "' has the wrong type");
    }
}

}  // namespace detail

inline RegistrationConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw io_error("config: top level must be a JSON object");
    detail::check_known_keys(
        j,
        {"lambda", "learning_rate", "pyramid_levels", "steps_per_level", "adam", "histogram",
         "enable_mi", "enable_boundary", "label_blur_size", "label_blur_sigma",
         "pyramid_blur_size", "pyramid_blur_sigma", "early_stop_patience",
         "early_stop_min_delta", "seed", "threads"},
        "");
    RegistrationConfig c;
    detail::read_key(j, "lambda", c.lambda);
    detail::read_key(j, "learning_rate", c.learning_rate);
    detail::read_key(j, "pyramid_levels", c.pyramid_levels);
    detail::read_key(j, "steps_per_level", c.steps_per_level);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        if (!a.is_object()) throw io_error("config: 'adam' must be an object");
        detail::check_known_keys(a, {"beta1", "beta2", "epsilon"}, "adam.");
        detail::read_key(a, "beta1", c.adam.beta1);
        detail::read_key(a, "beta2", c.adam.beta2);
        detail::read_key(a, "epsilon", c.adam.epsilon);
    }
    if (j.contains("histogram")) {
        const auto& h = j.at("histogram");
        if (!h.is_object()) throw io_error("config: 'histogram' must be an object");
        detail::check_known_keys(h, {"bins", "parzen_sigma"}, "histogram.");
        detail::read_key(h, "bins", c.histogram.bins);
        detail::read_key(h, "parzen_sigma", c.histogram.parzen_sigma);
    }
    detail::read_key(j, "enable_mi", c.enable_mi);
    detail::read_key(j, "enable_boundary", c.enable_boundary);
    detail::read_key(j, "label_blur_size", c.label_blur_size);
    detail::read_key(j, "label_blur_sigma", c.label_blur_sigma);
    detail::read_key(j, "pyramid_blur_size", c.pyramid_blur_size);
    detail::read_key(j, "pyramid_blur_sigma", c.pyramid_blur_sigma);
    detail::read_key(j, "early_stop_patience", c.early_stop_patience);
    detail::read_key(j, "early_stop_min_delta", c.early_stop_min_delta);
    detail::read_key(j, "seed", c.seed);
    detail::read_key(j, "threads", c.threads);
    validate_config(c);
    return c;
}

inline nlohmann::json config_to_json(const RegistrationConfig& c) {
    return nlohmann::json{
        {"lambda", c.lambda},
        {"learning_rate", c.learning_rate},
        {"pyramid_levels", c.pyramid_levels},
        {"steps_per_level", c.steps_per_level},
        {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
        {"histogram", {{"bins", c.histogram.bins}, {"parzen_sigma", c.histogram.parzen_sigma}}},
        {"enable_mi", c.enable_mi},
        {"enable_boundary", c.enable_boundary},
        {"label_blur_size", c.label_blur_size},
        {"label_blur_sigma", c.label_blur_sigma},
        {"pyramid_blur_size", c.pyramid_blur_size},
        {"pyramid_blur_sigma", c.pyramid_blur_sigma},
        {"early_stop_patience", c.early_stop_patience},
        {"early_stop_min_delta", c.early_stop_min_delta},
        {"seed", c.seed},
        {"threads", c.threads}};
}

inline RegistrationConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw io_error("config " + path + ": invalid JSON");
    return config_from_json(j);
}

}  // namespace hybridreg
