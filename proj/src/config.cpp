#include "soapkd/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "soapkd/common.hpp"

namespace soapkd {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> int_list(const std::string& s) {
    std::vector<int> out;
    for (const auto& item : split_list(s)) out.push_back(std::stoi(item));
    return out;
}

std::vector<double> double_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(std::stod(item));
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

template <class T>
std::string join_num(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

void add_schedule(std::map<std::string, Setter>& table, const std::string& section,
                  TrainSchedule RunConfig::*sched) {
    table[section + ".epochs"] = [sched](RunConfig& c, const std::string& v) {
        (c.*sched).epochs = std::stoi(v);
    };
    table[section + ".batch_size"] = [sched](RunConfig& c, const std::string& v) {
        (c.*sched).batch_size = std::stoi(v);
    };
    table[section + ".lr0"] = [sched](RunConfig& c, const std::string& v) {
        (c.*sched).lr0 = std::stod(v);
    };
    table[section + ".lr_decay_epochs"] = [sched](RunConfig& c, const std::string& v) {
        (c.*sched).lr_decay_epochs = int_list(v);
    };
    table[section + ".lr_decay_factor"] = [sched](RunConfig& c, const std::string& v) {
        (c.*sched).lr_decay_factor = std::stod(v);
    };
    table[section + ".momentum"] = [sched](RunConfig& c, const std::string& v) {
        (c.*sched).momentum = std::stod(v);
    };
    table[section + ".weight_decay"] = [sched](RunConfig& c, const std::string& v) {
        (c.*sched).weight_decay = std::stod(v);
    };
    table[section + ".augment"] = [sched](RunConfig& c, const std::string& v) {
        (c.*sched).augment = v == "true" || v == "1";
    };
}

const std::map<std::string, Setter>& setter_table() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        t["run.out"] = [](RunConfig& c, const std::string& v) { c.out_dir = v; };
        t["run.seed"] = [](RunConfig& c, const std::string& v) {
            c.seed = std::stoull(v);
        };
        t["run.resolution"] = [](RunConfig& c, const std::string& v) {
            c.resolution = std::stoi(v);
        };
        t["run.stages"] = [](RunConfig& c, const std::string& v) {
            c.stages = split_list(v);
        };
        t["run.short_profile"] = [](RunConfig& c, const std::string& v) {
            c.short_profile = v == "true" || v == "1";
        };

        t["data.source"] = [](RunConfig& c, const std::string& v) { c.data.source = v; };
        t["data.n_train_pool"] = [](RunConfig& c, const std::string& v) {
            c.data.n_train_pool = std::stoi(v);
        };
        t["data.n_test"] = [](RunConfig& c, const std::string& v) {
            c.data.n_test = std::stoi(v);
        };

        t["teacher.spec"] = [](RunConfig& c, const std::string& v) {
            c.teacher_spec = v;
        };
        add_schedule(t, "teacher", &RunConfig::teacher);

        t["embed.latent_dim"] = [](RunConfig& c, const std::string& v) {
            c.embed.latent_dim = std::stoi(v);
        };
        t["embed.t1t2_epochs"] = [](RunConfig& c, const std::string& v) {
            c.embed.t1t2_epochs = std::stoi(v);
        };
        t["embed.t3_iterations"] = [](RunConfig& c, const std::string& v) {
            c.embed.t3_iterations = std::stoi(v);
        };
        t["embed.batch_size"] = [](RunConfig& c, const std::string& v) {
            c.embed.batch_size = std::stoi(v);
        };
        t["embed.noise_var"] = [](RunConfig& c, const std::string& v) {
            c.embed.noise_var = std::stod(v);
        };
        t["embed.epsilon_embed"] = [](RunConfig& c, const std::string& v) {
            c.embed.epsilon_embed = std::stod(v);
        };
        t["embed.t3_lr"] = [](RunConfig& c, const std::string& v) {
            c.embed.t3_lr = std::stod(v);
        };

        t["gan.iterations"] = [](RunConfig& c, const std::string& v) {
            c.gan.iterations = std::stoi(v);
        };
        t["gan.batch_size"] = [](RunConfig& c, const std::string& v) {
            c.gan.batch_size = std::stoi(v);
        };
        t["gan.noise_dim"] = [](RunConfig& c, const std::string& v) {
            c.gan.noise_dim = std::stoi(v);
        };
        t["gan.vicinity"] = [](RunConfig& c, const std::string& v) {
            if (v != "hard" && v != "soft")
                throw ConfigError("gan.vicinity must be hard or soft");
            c.gan.vicinity = v;
        };
        t["gan.kappa"] = [](RunConfig& c, const std::string& v) {
            c.gan.kappa = v == "auto" ? -1.0 : std::stod(v);
        };
        t["gan.label_noise_sigma"] = [](RunConfig& c, const std::string& v) {
            c.gan.label_noise_sigma = std::stod(v);
        };
        t["gan.lr_g"] = [](RunConfig& c, const std::string& v) {
            c.gan.lr_g = std::stod(v);
        };
        t["gan.lr_d"] = [](RunConfig& c, const std::string& v) {
            c.gan.lr_d = std::stod(v);
        };
        t["gan.beta1"] = [](RunConfig& c, const std::string& v) {
            c.gan.beta1 = std::stod(v);
        };
        t["gan.beta2"] = [](RunConfig& c, const std::string& v) {
            c.gan.beta2 = std::stod(v);
        };
        t["gan.base_channels"] = [](RunConfig& c, const std::string& v) {
            c.gan.base_channels = std::stoi(v);
        };
        t["gan.checkpoint_every"] = [](RunConfig& c, const std::string& v) {
            c.gan.checkpoint_every = std::stoi(v);
        };

        t["gen.n_fakes"] = [](RunConfig& c, const std::string& v) {
            c.gen.n_fakes = std::stoi(v);
        };

        t["refinery.classifier_spec"] = [](RunConfig& c, const std::string& v) {
            c.refinery.classifier_spec = v;
        };
        t["refinery.classifier_epochs"] = [](RunConfig& c, const std::string& v) {
            c.refinery.classifier_epochs = std::stoi(v);
        };
        t["refinery.classifier_batch"] = [](RunConfig& c, const std::string& v) {
            c.refinery.classifier_batch = std::stoi(v);
        };
        t["refinery.classifier_lr"] = [](RunConfig& c, const std::string& v) {
            c.refinery.classifier_lr = std::stod(v);
        };
        t["refinery.dre_iterations"] = [](RunConfig& c, const std::string& v) {
            c.refinery.dre_iterations = std::stoi(v);
        };
        t["refinery.dre_batch"] = [](RunConfig& c, const std::string& v) {
            c.refinery.dre_batch = std::stoi(v);
        };
        t["refinery.dre_lr"] = [](RunConfig& c, const std::string& v) {
            c.refinery.dre_lr = std::stod(v);
        };
        t["refinery.dre_penalty"] = [](RunConfig& c, const std::string& v) {
            c.refinery.dre_penalty = std::stod(v);
        };
        t["refinery.rho"] = [](RunConfig& c, const std::string& v) {
            c.refinery.rho = std::stod(v);
            if (c.refinery.rho <= 0.0 || c.refinery.rho > 1.0)
                throw ConfigError("refinery.rho must be in (0, 1]");
        };
        t["refinery.alpha_override"] = [](RunConfig& c, const std::string& v) {
            c.refinery.alpha_override = std::stod(v);
        };

        t["distill.student"] = [](RunConfig& c, const std::string& v) {
            c.distill.student = v;
        };
        t["distill.lambda"] = [](RunConfig& c, const std::string& v) {
            c.distill.lambda = v == "auto" ? -1.0 : std::stod(v);
        };
        t["distill.lambda_grid"] = [](RunConfig& c, const std::string& v) {
            c.distill.lambda_grid = double_list(v);
        };
        t["distill.grid_full_schedule"] = [](RunConfig& c, const std::string& v) {
            c.distill.grid_full_schedule = v == "true" || v == "1";
        };
        t["distill.grid_epochs"] = [](RunConfig& c, const std::string& v) {
            c.distill.grid_epochs = std::stoi(v);
        };
        t["distill.epochs"] = [](RunConfig& c, const std::string& v) {
            c.distill.schedule.epochs = std::stoi(v);
        };
        t["distill.batch_size"] = [](RunConfig& c, const std::string& v) {
            c.distill.schedule.batch_size = std::stoi(v);
        };
        t["distill.lr0"] = [](RunConfig& c, const std::string& v) {
            c.distill.schedule.lr0 = std::stod(v);
        };
        t["distill.lr_decay_epochs"] = [](RunConfig& c, const std::string& v) {
            c.distill.schedule.lr_decay_epochs = int_list(v);
        };
        t["distill.lr_decay_factor"] = [](RunConfig& c, const std::string& v) {
            c.distill.schedule.lr_decay_factor = std::stod(v);
        };
        t["distill.momentum"] = [](RunConfig& c, const std::string& v) {
            c.distill.schedule.momentum = std::stod(v);
        };
        t["distill.weight_decay"] = [](RunConfig& c, const std::string& v) {
            c.distill.schedule.weight_decay = std::stod(v);
        };
        return t;
    }();
    return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream lines(text);
    std::string line, section;
    int line_no = 0;
    const auto& table = setter_table();
    while (std::getline(lines, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string full_key = section.empty() ? key : section + "." + key;
        const auto it = table.find(full_key);
        if (it == table.end())
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": unknown key '" + full_key + "'");
        try {
            it->second(cfg, value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": bad value '" +
                              value + "' for '" + full_key + "': " + e.what());
        }
    }
    if (cfg.short_profile) apply_short_profile(cfg);
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse_config_text(os.str());
}

std::string config_to_text(const RunConfig& c) {
    std::ostringstream os;
    os.precision(12);
    os << "[run]\n";
    os << "out = " << c.out_dir << "\n";
    os << "seed = " << c.seed << "\n";
    os << "resolution = " << c.resolution << "\n";
    os << "stages = " << join(c.stages) << "\n";
    os << "short_profile = " << (c.short_profile ? "true" : "false") << "\n";
    os << "[data]\n";
    os << "source = " << c.data.source << "\n";
    os << "n_train_pool = " << c.data.n_train_pool << "\n";
    os << "n_test = " << c.data.n_test << "\n";
    auto schedule = [&](const char* name, const TrainSchedule& s) {
        os << "[" << name << "]\n";
        if (std::string(name) == "teacher") os << "spec = " << c.teacher_spec << "\n";
        os << "epochs = " << s.epochs << "\n";
        os << "batch_size = " << s.batch_size << "\n";
        os << "lr0 = " << s.lr0 << "\n";
        os << "lr_decay_epochs = " << join_num(s.lr_decay_epochs) << "\n";
        os << "lr_decay_factor = " << s.lr_decay_factor << "\n";
        os << "momentum = " << s.momentum << "\n";
        os << "weight_decay = " << s.weight_decay << "\n";
        os << "augment = " << (s.augment ? "true" : "false") << "\n";
    };
    schedule("teacher", c.teacher);
    os << "[embed]\n";
    os << "latent_dim = " << c.embed.latent_dim << "\n";
    os << "t1t2_epochs = " << c.embed.t1t2_epochs << "\n";
    os << "t3_iterations = " << c.embed.t3_iterations << "\n";
    os << "batch_size = " << c.embed.batch_size << "\n";
    os << "noise_var = " << c.embed.noise_var << "\n";
    os << "epsilon_embed = " << c.embed.epsilon_embed << "\n";
    os << "t3_lr = " << c.embed.t3_lr << "\n";
    os << "[gan]\n";
    os << "iterations = " << c.gan.iterations << "\n";
    os << "batch_size = " << c.gan.batch_size << "\n";
    os << "noise_dim = " << c.gan.noise_dim << "\n";
    os << "vicinity = " << c.gan.vicinity << "\n";
    os << "kappa = " << (c.gan.kappa < 0 ? std::string("auto")
                                         : std::to_string(c.gan.kappa))
       << "\n";
    os << "label_noise_sigma = " << c.gan.label_noise_sigma << "\n";
    os << "lr_g = " << c.gan.lr_g << "\n";
    os << "lr_d = " << c.gan.lr_d << "\n";
    os << "beta1 = " << c.gan.beta1 << "\n";
    os << "beta2 = " << c.gan.beta2 << "\n";
    os << "base_channels = " << c.gan.base_channels << "\n";
    os << "checkpoint_every = " << c.gan.checkpoint_every << "\n";
    os << "[gen]\n";
    os << "n_fakes = " << c.gen.n_fakes << "\n";
    os << "[refinery]\n";
    os << "classifier_spec = " << c.refinery.classifier_spec << "\n";
    os << "classifier_epochs = " << c.refinery.classifier_epochs << "\n";
    os << "classifier_batch = " << c.refinery.classifier_batch << "\n";
    os << "classifier_lr = " << c.refinery.classifier_lr << "\n";
    os << "dre_iterations = " << c.refinery.dre_iterations << "\n";
    os << "dre_batch = " << c.refinery.dre_batch << "\n";
    os << "dre_lr = " << c.refinery.dre_lr << "\n";
    os << "dre_penalty = " << c.refinery.dre_penalty << "\n";
    os << "rho = " << c.refinery.rho << "\n";
    os << "alpha_override = " << c.refinery.alpha_override << "\n";
    os << "[distill]\n";
    os << "student = " << c.distill.student << "\n";
    os << "lambda = " << (c.distill.lambda < 0 ? std::string("auto")
                                               : std::to_string(c.distill.lambda))
       << "\n";
    os << "lambda_grid = " << join_num(c.distill.lambda_grid) << "\n";
    os << "grid_full_schedule = " << (c.distill.grid_full_schedule ? "true" : "false")
       << "\n";
    os << "grid_epochs = " << c.distill.grid_epochs << "\n";
    os << "epochs = " << c.distill.schedule.epochs << "\n";
    os << "batch_size = " << c.distill.schedule.batch_size << "\n";
    os << "lr0 = " << c.distill.schedule.lr0 << "\n";
    os << "lr_decay_epochs = " << join_num(c.distill.schedule.lr_decay_epochs) << "\n";
    os << "lr_decay_factor = " << c.distill.schedule.lr_decay_factor << "\n";
    os << "momentum = " << c.distill.schedule.momentum << "\n";
    os << "weight_decay = " << c.distill.schedule.weight_decay << "\n";
    return os.str();
}

std::string config_fingerprint(const RunConfig& cfg) {
    return hex64(fnv1a64(config_to_text(cfg)));
}

void apply_short_profile(RunConfig& cfg) {
    cfg.short_profile = true;
    cfg.teacher.epochs = 80;
    cfg.teacher.batch_size = 64;
    cfg.teacher.lr_decay_epochs = {40, 64};
    cfg.embed.t1t2_epochs = 10;
    cfg.embed.t3_iterations = 1500;
    cfg.gan.iterations = 2000;
    cfg.gan.batch_size = 24;
    cfg.gan.base_channels = 16;
    cfg.gan.checkpoint_every = 1000;
    cfg.gen.n_fakes = 2000;
    cfg.refinery.classifier_epochs = 8;
    cfg.refinery.dre_iterations = 800;
    cfg.distill.schedule.epochs = 20;
    cfg.distill.schedule.batch_size = 64;
    cfg.distill.schedule.lr_decay_epochs = {10, 16};
    cfg.distill.grid_epochs = 8;
}

}  // namespace soapkd
