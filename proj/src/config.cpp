#include "jana/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace jana {

namespace {

using nlohmann::json;

/// Reads keys out of one JSON object and complains about anything left over.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError("'" + where_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError("'" + where_ + "." + key + "' has the wrong type");
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string path(const char* key) const { return where_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key '" + where_ + "." + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

template <class F>
auto parse_enum(const std::string& where, const std::string& v, F f) {
    try {
        return f(v);
    } catch (const Error&) {
        throw ConfigError("'" + where + "' has unknown value '" + v + "'");
    }
}

void read_flow(const json& j, const std::string& where, FlowConfig& c) {
    Section s(j, where);
    s.get("n_couplings", c.n_couplings);
    s.get("hidden_widths", c.hidden_widths);
    std::string act = to_string(c.activation), latent = to_string(c.latent);
    s.get("activation", act);
    s.get("latent", latent);
    c.activation = parse_enum(s.path("activation"), act, activation_from_string);
    c.latent = parse_enum(s.path("latent"), latent, latent_kind_from_string);
    s.get("latent_df", c.latent_df);
    s.get("memory_hidden", c.memory_hidden);
    s.get("scale_clamp", c.scale_clamp);
    s.get("weight_init_scale", c.weight_init_scale);
    s.finish();
}

void read_summary(const json& j, SummaryConfig& c) {
    Section s(j, "architecture.summary");
    std::string kind = c.kind ? to_string(*c.kind) : "auto";
    s.get("kind", kind);
    if (kind == "auto")
        c.kind.reset();
    else
        c.kind = parse_enum(s.path("kind"), kind, summary_kind_from_string);
    s.get("summary_dim", c.summary_dim);
    s.get("n_equivariant_modules", c.n_equivariant_modules);
    s.get("equivariant_width", c.equivariant_width);
    s.get("equivariant_hidden", c.equivariant_hidden);
    s.get("post_pool_hidden", c.post_pool_hidden);
    std::string act = to_string(c.activation), pool = to_string(c.pool);
    s.get("activation", act);
    s.get("pool", pool);
    c.activation = parse_enum(s.path("activation"), act, activation_from_string);
    c.pool = parse_enum(s.path("pool"), pool, pool_kind_from_string);
    s.get("recurrent_hidden", c.recurrent_hidden);
    s.finish();
}

json flow_json(const FlowConfig& c) {
    return {{"n_couplings", c.n_couplings},
            {"hidden_widths", c.hidden_widths},
            {"activation", to_string(c.activation)},
            {"latent", to_string(c.latent)},
            {"latent_df", c.latent_df},
            {"memory_hidden", c.memory_hidden},
            {"scale_clamp", c.scale_clamp},
            {"weight_init_scale", c.weight_init_scale}};
}

json resolved(const RunConfig& c, bool with_paths) {
    const auto& s = c.architecture.summary;
    json j = {
        {"model", {{"name", c.model.name}, {"constants", c.model.constants}, {"size", c.model.size}}},
        {"training",
         {{"budget", c.training.budget},
          {"epochs", c.training.epochs},
          {"batch_size", c.training.batch_size},
          {"initial_lr", c.training.initial_lr},
          {"min_lr", c.training.min_lr},
          {"lambda_mmd", c.training.lambda_mmd},
          {"weight_decay", c.training.weight_decay},
          {"regime", to_string(c.training.regime)},
          {"validation_fraction", c.training.validation_fraction},
          {"seed", c.training.seed}}},
        {"architecture",
         {{"posterior", flow_json(c.architecture.posterior)},
          {"likelihood", flow_json(c.architecture.likelihood)},
          {"summary",
           {{"kind", s.kind ? to_string(*s.kind) : "auto"},
            {"summary_dim", s.summary_dim},
            {"n_equivariant_modules", s.n_equivariant_modules},
            {"equivariant_width", s.equivariant_width},
            {"equivariant_hidden", s.equivariant_hidden},
            {"post_pool_hidden", s.post_pool_hidden},
            {"activation", to_string(s.activation)},
            {"pool", to_string(s.pool)},
            {"recurrent_hidden", s.recurrent_hidden}}}}},
        {"diagnostics",
         {{"n_datasets", c.diagnostics.n_datasets},
          {"n_draws", c.diagnostics.n_draws},
          {"level", c.diagnostics.level},
          {"band_simulations", c.diagnostics.band_simulations}}},
        {"estimation",
         {{"n_draws", c.estimation.n_draws},
          {"critic_quantile", c.estimation.critic_quantile},
          {"critic_probes", c.estimation.critic_probes}}}};
    if (with_paths)
        j["paths"] = {{"dataset", c.paths.dataset}, {"checkpoint", c.paths.checkpoint}, {"reports", c.paths.reports}};
    return j;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    Section top(root, "config");
    if (const json* j = top.child("model")) {
        Section s(*j, "model");
        s.get("name", c.model.name);
        s.get("constants", c.model.constants);
        s.get("size", c.model.size);
        s.finish();
    }
    if (const json* j = top.child("training")) {
        Section s(*j, "training");
        auto& t = c.training;
        s.get("budget", t.budget);
        s.get("epochs", t.epochs);
        s.get("batch_size", t.batch_size);
        s.get("initial_lr", t.initial_lr);
        s.get("min_lr", t.min_lr);
        s.get("lambda_mmd", t.lambda_mmd);
        s.get("weight_decay", t.weight_decay);
        std::string regime = to_string(t.regime);
        s.get("regime", regime);
        t.regime = parse_enum("training.regime", regime, regime_from_string);
        s.get("validation_fraction", t.validation_fraction);
        s.get("seed", t.seed);
        s.finish();
    }
    if (const json* j = top.child("architecture")) {
        Section s(*j, "architecture");
        if (const json* f = s.child("posterior")) read_flow(*f, "architecture.posterior", c.architecture.posterior);
        if (const json* f = s.child("likelihood")) read_flow(*f, "architecture.likelihood", c.architecture.likelihood);
        if (const json* f = s.child("summary")) read_summary(*f, c.architecture.summary);
        s.finish();
    }
    if (const json* j = top.child("diagnostics")) {
        Section s(*j, "diagnostics");
        s.get("n_datasets", c.diagnostics.n_datasets);
        s.get("n_draws", c.diagnostics.n_draws);
        s.get("level", c.diagnostics.level);
        s.get("band_simulations", c.diagnostics.band_simulations);
        s.finish();
    }
    if (const json* j = top.child("estimation")) {
        Section s(*j, "estimation");
        s.get("n_draws", c.estimation.n_draws);
        s.get("critic_quantile", c.estimation.critic_quantile);
        s.get("critic_probes", c.estimation.critic_probes);
        s.finish();
    }
    if (const json* j = top.child("paths")) {
        Section s(*j, "paths");
        s.get("dataset", c.paths.dataset);
        s.get("checkpoint", c.paths.checkpoint);
        s.get("reports", c.paths.reports);
        s.finish();
    }
    top.finish();
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void RunConfig::validate() const {
    try {
        training.validate();
        build_model();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (!(diagnostics.level > 0.0 && diagnostics.level < 1.0)) throw ConfigError("diagnostics.level must lie in (0, 1)");
    if (diagnostics.n_datasets < 2) throw ConfigError("diagnostics.n_datasets must be >= 2");
    if (diagnostics.n_draws < 1) throw ConfigError("diagnostics.n_draws must be >= 1");
    if (diagnostics.band_simulations < 1000) throw ConfigError("diagnostics.band_simulations must be >= 1000");
    if (estimation.n_draws < 1) throw ConfigError("estimation.n_draws must be >= 1");
    if (!(estimation.critic_quantile > 0.0 && estimation.critic_quantile <= 1.0))
        throw ConfigError("estimation.critic_quantile must lie in (0, 1]");
}

std::string RunConfig::to_json() const { return resolved(*this, true).dump(2); }

std::string RunConfig::hash() const {
    const std::string text = resolved(*this, false).dump();
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << fnv1a(text.data(), text.size());
    return out.str();
}

void RunConfig::apply_env_overrides() {
    const std::pair<const char*, std::string*> vars[] = {
        {"JANA_DATASET", &paths.dataset}, {"JANA_CHECKPOINT", &paths.checkpoint}, {"JANA_REPORTS", &paths.reports}};
    for (const auto& [name, field] : vars)
        if (const char* v = std::getenv(name)) *field = v;
}

BayesianModel RunConfig::build_model() const {
    try {
        return make_model(model.name, model.constants, model.size);
    } catch (const Error& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
}

std::string config_schema() {
    const RunConfig defaults;
    std::ostringstream out;
    out << "Configuration file (JSON). Every key is optional; unknown keys are rejected.\n"
           "Defaults shown below.\n\n"
        << defaults.to_json() << "\n\n"
        << "model.name        one of:";
    for (const auto& n : model_names()) out << ' ' << n;
    out << "\n"
           "model.constants   overrides of named model constants\n"
           "model.size        n_obs or series length (0 = model default)\n"
           "training.regime   offline | online\n"
           "architecture.*.activation  relu | tanh\n"
           "architecture.*.latent      standard_gaussian | student_t\n"
           "architecture.summary.kind  auto | identity | deep_set | recurrent\n"
           "architecture.summary.pool  mean | sum\n"
           "paths.*           overridden by JANA_DATASET, JANA_CHECKPOINT, JANA_REPORTS\n";
    return out.str();
}

}  // namespace jana
