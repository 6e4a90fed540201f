#include <fstream>
#include <sstream>
#include <stdexcept>

#include "certgap/experiment.hpp"
#include "toml.hpp"

namespace certgap {

namespace {

template <class T>
void read(const toml::table& t, const char* key, T& out) {
    const toml::node* node = t.get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, double>) {
        if (auto v = node->value<double>()) {
            out = *v;
            return;
        }
    } else if constexpr (std::is_same_v<T, bool>) {
        if (auto v = node->value<bool>()) {
            out = *v;
            return;
        }
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (auto v = node->value<std::string>()) {
            out = *v;
            return;
        }
    } else if constexpr (std::is_integral_v<T>) {
        if (auto v = node->value<std::int64_t>()) {
            if (*v < 0 && std::is_unsigned_v<T>) {
                throw std::invalid_argument(std::string("config: key '") + key + "' must be nonnegative");
            }
            out = static_cast<T>(*v);
            return;
        }
    }
    throw std::invalid_argument(std::string("config: key '") + key + "' has the wrong type");
}

template <class T>
std::vector<T> read_array(const toml::table& t, const char* key, std::vector<T> fallback) {
    const toml::node* node = t.get(key);
    if (!node) return fallback;
    const toml::array* arr = node->as_array();
    if (!arr) throw std::invalid_argument(std::string("config: key '") + key + "' must be an array");
    std::vector<T> out;
    for (const toml::node& item : *arr) {
        if constexpr (std::is_same_v<T, std::string>) {
            auto v = item.value<std::string>();
            if (!v) throw std::invalid_argument(std::string("config: '") + key + "' must hold strings");
            out.push_back(*v);
        } else if constexpr (std::is_floating_point_v<T>) {
            auto v = item.value<double>();
            if (!v) throw std::invalid_argument(std::string("config: '") + key + "' must hold numbers");
            out.push_back(*v);
        } else {
            auto v = item.value<std::int64_t>();
            if (!v || *v < 0) throw std::invalid_argument(std::string("config: '") + key + "' must hold nonnegative integers");
            out.push_back(static_cast<T>(*v));
        }
    }
    return out;
}

const toml::table* section(const toml::table& root, const char* name) {
    const toml::node* node = root.get(name);
    if (!node) return nullptr;
    const toml::table* t = node->as_table();
    if (!t) throw std::invalid_argument(std::string("config: [") + name + "] must be a table");
    return t;
}

toml::table parse_text(const std::string& text) {
    try {
        return toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << "config: " << e.description() << " at line " << e.source().begin.line;
        throw std::invalid_argument(os.str());
    }
}

RunConfig run_config_from(const toml::table& root) {
    RunConfig cfg;
    cfg.seeds = read_array<std::uint64_t>(root, "seeds", cfg.seeds);
    if (const toml::table* t = section(root, "dataset")) {
        std::string kind = to_string(cfg.data.kind);
        read(*t, "kind", kind);
        cfg.data.kind = dataset_kind_from_string(kind);
        read(*t, "d", cfg.data.d);
        read(*t, "n_train", cfg.data.n_train);
        read(*t, "n_test", cfg.data.n_test);
        read(*t, "gamma", cfg.data.gamma);
        read(*t, "r_inner", cfg.data.r_inner);
        read(*t, "sigma", cfg.data.sigma);
    }
    if (const toml::table* t = section(root, "threat")) {
        std::string kind = to_string(cfg.threat.kind);
        read(*t, "kind", kind);
        cfg.threat.kind = threat_kind_from_string(kind);
        read(*t, "eps", cfg.threat.eps);
        read(*t, "k", cfg.threat.k);
        read(*t, "dir_seed", cfg.threat.dir_seed);
    }
    if (const toml::table* t = section(root, "train")) {
        std::string trainer = to_string(cfg.trainer);
        read(*t, "trainer", trainer);
        cfg.trainer = trainer_from_string(trainer);
        cfg.hidden = read_array<int>(*t, "hidden", cfg.hidden);
        read(*t, "learning_rate", cfg.train.learning_rate);
        read(*t, "momentum", cfg.train.momentum);
        read(*t, "epochs", cfg.train.epochs);
        read(*t, "batch_size", cfg.train.batch_size);
        read(*t, "eps_start", cfg.train.eps_schedule.start);
        read(*t, "ramp_epochs", cfg.train.eps_schedule.ramp_epochs);
        read(*t, "freeze_bounds", cfg.certified.freeze_bounds);
        read(*t, "ibp_intermediate", cfg.certified.ibp_intermediate);
        std::string unstable = cfg.unstable_method == BoundMethod::Ibp ? "ibp" : "coap";
        read(*t, "unstable_method", unstable);
        if (unstable != "ibp" && unstable != "coap") throw std::invalid_argument("config: unstable_method must be ibp or coap");
        cfg.unstable_method = unstable == "ibp" ? BoundMethod::Ibp : BoundMethod::Coap;
    }
    if (const toml::table* t = section(root, "attack")) {
        read(*t, "steps", cfg.eval_attack.steps);
        read(*t, "restarts", cfg.eval_attack.restarts);
        read(*t, "step_size", cfg.eval_attack.step_size);
        read(*t, "train_steps", cfg.train_attack.steps);
        read(*t, "train_restarts", cfg.train_attack.restarts);
        read(*t, "train_step_size", cfg.train_attack.step_size);
    }
    if (const toml::table* t = section(root, "eval")) {
        const auto modes = read_array<std::string>(*t, "modes", {});
        if (!modes.empty()) {
            cfg.eval_modes.clear();
            for (const std::string& m : modes) cfg.eval_modes.push_back(eval_mode_from_string(m));
        }
    }
    cfg.validate();
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& toml_text) { return run_config_from(parse_text(toml_text)); }

AblationConfig parse_ablation_config(const std::string& toml_text) {
    const toml::table root = parse_text(toml_text);
    AblationConfig cfg;
    cfg.base = run_config_from(root);
    if (const toml::table* t = section(root, "ablate")) {
        std::string axis = to_string(cfg.axis);
        read(*t, "axis", axis);
        cfg.axis = axis_from_string(axis);
        cfg.values = read_array<double>(*t, "values", {});
        const auto trainers = read_array<std::string>(*t, "trainers", {});
        if (!trainers.empty()) {
            cfg.trainers.clear();
            for (const std::string& s : trainers) cfg.trainers.push_back(trainer_from_string(s));
        }
        cfg.learning_rates = read_array<double>(*t, "learning_rates", cfg.learning_rates);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(slurp(path)); }

AblationConfig load_ablation_config(const std::string& path) { return parse_ablation_config(slurp(path)); }

}  // namespace certgap
