#include "strata/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <initializer_list>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <utility>

#include "json.hpp"

#include "strata/common.hpp"
#include "strata/csv.hpp"
#include "strata/dates.hpp"

namespace strata {

namespace fs = std::filesystem;
using json = nlohmann::json;

void MatchingConfig::validate() const {
    if (visit_window_days <= 0)
        throw ValidationError(strfmt("matching: visit_window_days = %lld, need > 0",
                                     static_cast<long long>(visit_window_days)));
}

void FeaturizeConfig::validate() const {
    if (window_days <= 0)
        throw ValidationError(strfmt("featurize: window_days = %lld, need > 0",
                                     static_cast<long long>(window_days)));
    if (sentinel != kSentinel)
        throw ValidationError(strfmt("featurize: sentinel is fixed at %d", kSentinel));
}

void SelectionConfig::validate() const {
    quotas.validate();
    if (k < 1) throw ValidationError(strfmt("selection: k = %d, need at least 1", k));
    stage2.validate();
}

void TuningConfig::validate() const {
    tpe.validate();
    if (folds < 2) throw ValidationError(strfmt("tuning: folds = %d, need at least 2", folds));
    space.validate();
}

void EvaluationConfig::validate() const {
    if (folds < 2) throw ValidationError(strfmt("evaluation: folds = %d, need at least 2", folds));
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ValidationError(strfmt("evaluation: threshold = %g, need a value in (0,1)", threshold));
}

void PipelineConfig::validate() const {
    if (input_dir.empty()) throw ValidationError("config: input_dir must not be empty");
    if (out_dir.empty()) throw ValidationError("config: out_dir must not be empty");
    if (synth) synth->validate();
    phenotype.validate();
    matching.validate();
    featurize.validate();
    selection.validate();
    model.validate();
    tuning.validate();
    evaluation.validate();
}

PipelineConfig default_config() {
    PipelineConfig c;
    c.phenotype.crs_code_set = {"CRS420", "CRS421", "CRS422"};
    return c;
}

namespace {

const json* find_key(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<std::string_view> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (std::string_view k : allowed)
            if (k == it.key()) known = true;
        if (!known)
            throw ValidationError(strfmt("config: unknown key \"%s\" in %s", it.key().c_str(),
                                         where.c_str()));
    }
}

const json& as_object(const json& v, const std::string& where) {
    if (!v.is_object()) throw ValidationError(strfmt("config: %s must be an object", where.c_str()));
    return v;
}

double as_number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ValidationError(strfmt("config: %s must be a number", where.c_str()));
    return v.get<double>();
}

std::int64_t as_integer(const json& v, const std::string& where) {
    if (!v.is_number_integer())
        throw ValidationError(strfmt("config: %s must be an integer", where.c_str()));
    return v.get<std::int64_t>();
}

int as_int(const json& v, const std::string& where) {
    std::int64_t raw = as_integer(v, where);
    if (raw < std::numeric_limits<int>::min() || raw > std::numeric_limits<int>::max())
        throw ValidationError(strfmt("config: %s is out of range", where.c_str()));
    return static_cast<int>(raw);
}

std::uint64_t as_seed(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ValidationError(strfmt("config: %s must be a non-negative integer", where.c_str()));
}

bool as_boolean(const json& v, const std::string& where) {
    if (!v.is_boolean()) throw ValidationError(strfmt("config: %s must be a boolean", where.c_str()));
    return v.get<bool>();
}

std::string as_text(const json& v, const std::string& where) {
    if (!v.is_string()) throw ValidationError(strfmt("config: %s must be a string", where.c_str()));
    return v.get<std::string>();
}

std::vector<std::string> as_text_array(const json& v, const std::string& where) {
    if (!v.is_array()) throw ValidationError(strfmt("config: %s must be an array", where.c_str()));
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(as_text(v[i], strfmt("%s[%zu]", where.c_str(), i)));
    return out;
}

GBDTParams parse_model_block(const json& obj, const std::string& where, GBDTParams base) {
    as_object(obj, where);
    check_keys(obj, where,
               {"n_estimators", "max_depth", "learning_rate", "subsample", "colsample_bytree",
                "reg_alpha", "reg_lambda", "gamma", "min_child_weight", "base_score"});
    if (auto* v = find_key(obj, "n_estimators")) base.n_estimators = as_int(*v, where + ".n_estimators");
    if (auto* v = find_key(obj, "max_depth")) base.max_depth = as_int(*v, where + ".max_depth");
    if (auto* v = find_key(obj, "learning_rate")) base.learning_rate = as_number(*v, where + ".learning_rate");
    if (auto* v = find_key(obj, "subsample")) base.subsample = as_number(*v, where + ".subsample");
    if (auto* v = find_key(obj, "colsample_bytree")) base.colsample_bytree = as_number(*v, where + ".colsample_bytree");
    if (auto* v = find_key(obj, "reg_alpha")) base.reg_alpha = as_number(*v, where + ".reg_alpha");
    if (auto* v = find_key(obj, "reg_lambda")) base.reg_lambda = as_number(*v, where + ".reg_lambda");
    if (auto* v = find_key(obj, "gamma")) base.gamma = as_number(*v, where + ".gamma");
    if (auto* v = find_key(obj, "min_child_weight")) base.min_child_weight = as_number(*v, where + ".min_child_weight");
    if (auto* v = find_key(obj, "base_score")) base.base_score = as_number(*v, where + ".base_score");
    return base;
}

SearchSpace parse_space(const json& obj, const std::string& where, SearchSpace base) {
    as_object(obj, where);
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        int dim = base.index_of(it.key());
        if (dim < 0)
            throw ValidationError(strfmt("config: %s has no tunable parameter \"%s\"",
                                         where.c_str(), it.key().c_str()));
        const json& bounds = *it;
        std::string w = where + "." + it.key();
        if (!bounds.is_array() || bounds.size() != 2)
            throw ValidationError(strfmt("config: %s must be [lower, upper]", w.c_str()));
        base.params[dim].lo = as_number(bounds[0], w + "[0]");
        base.params[dim].hi = as_number(bounds[1], w + "[1]");
    }
    return base;
}

SynthConfig parse_synth(const json& obj) {
    as_object(obj, "synth");
    check_keys(obj, "synth",
               {"n_participants", "n_concepts", "strata_proportions", "target_fraction",
                "background_prevalence", "crs_codes", "planted", "planted_signals"});
    SynthConfig s;
    if (auto* v = find_key(obj, "n_participants")) s.n_participants = as_int(*v, "synth.n_participants");
    if (auto* v = find_key(obj, "n_concepts")) {
        if (!v->is_array() || v->size() != 3)
            throw ValidationError("config: synth.n_concepts must be [conditions, procedures, medications]");
        for (int d = 0; d < 3; ++d)
            s.n_concepts_per_domain[d] = as_int((*v)[d], strfmt("synth.n_concepts[%d]", d));
    }
    if (auto* v = find_key(obj, "strata_proportions")) {
        if (!v->is_array() || v->size() != static_cast<std::size_t>(kNumStrata))
            throw ValidationError("config: synth.strata_proportions must hold six shares");
        for (int i = 0; i < kNumStrata; ++i)
            s.strata_proportions[i] = as_number((*v)[i], strfmt("synth.strata_proportions[%d]", i));
    }
    if (auto* v = find_key(obj, "target_fraction")) s.target_fraction = as_number(*v, "synth.target_fraction");
    if (auto* v = find_key(obj, "background_prevalence"))
        s.background_prevalence = as_number(*v, "synth.background_prevalence");
    if (auto* v = find_key(obj, "crs_codes")) s.crs_codes = as_text_array(*v, "synth.crs_codes");

    const json* planted = find_key(obj, "planted");
    const json* planted_signals = find_key(obj, "planted_signals");
    if (planted && planted_signals)
        throw ValidationError("config: synth.planted and synth.planted_signals are mutually exclusive");
    if (planted_signals) {
        if (!planted_signals->is_array())
            throw ValidationError("config: synth.planted_signals must be an array");
        for (std::size_t i = 0; i < planted_signals->size(); ++i) {
            const json& e = (*planted_signals)[i];
            std::string w = strfmt("synth.planted_signals[%zu]", i);
            as_object(e, w);
            check_keys(e, w, {"stratum", "concept_code", "target_prevalence", "control_prevalence",
                              "recency_mean_days"});
            PlantedSignal sig;
            std::string stratum = as_text(e.at("stratum"), w + ".stratum");
            auto parsed = parse_stratum(stratum);
            if (!parsed)
                throw ValidationError(strfmt("config: %s.stratum \"%s\" is not a stratum token",
                                             w.c_str(), stratum.c_str()));
            sig.stratum = *parsed;
            sig.concept_code = as_text(e.at("concept_code"), w + ".concept_code");
            sig.target_prevalence = as_number(e.at("target_prevalence"), w + ".target_prevalence");
            sig.control_prevalence = as_number(e.at("control_prevalence"), w + ".control_prevalence");
            if (auto* r = find_key(e, "recency_mean_days"))
                sig.recency_mean_days = as_number(*r, w + ".recency_mean_days");
            s.planted_signals.push_back(std::move(sig));
        }
    } else {
        int per_stratum = 10;
        double target_prevalence = 0.30;
        double control_prevalence = 0.05;
        double recency_mean_days = 90.0;
        bool shared = false;
        if (planted) {
            as_object(*planted, "synth.planted");
            check_keys(*planted, "synth.planted",
                       {"per_stratum", "target_prevalence", "control_prevalence",
                        "recency_mean_days", "shared"});
            if (auto* v = find_key(*planted, "per_stratum")) per_stratum = as_int(*v, "synth.planted.per_stratum");
            if (auto* v = find_key(*planted, "target_prevalence"))
                target_prevalence = as_number(*v, "synth.planted.target_prevalence");
            if (auto* v = find_key(*planted, "control_prevalence"))
                control_prevalence = as_number(*v, "synth.planted.control_prevalence");
            if (auto* v = find_key(*planted, "recency_mean_days"))
                recency_mean_days = as_number(*v, "synth.planted.recency_mean_days");
            if (auto* v = find_key(*planted, "shared")) shared = as_boolean(*v, "synth.planted.shared");
        }
        if (per_stratum < 0) throw ValidationError("config: synth.planted.per_stratum must be >= 0");
        if (per_stratum > 0) {
            s.planted_signals =
                shared ? shared_planted_signals(s.n_concepts_per_domain, per_stratum * kNumStrata,
                                                target_prevalence, control_prevalence,
                                                recency_mean_days)
                       : default_planted_signals(s.n_concepts_per_domain, per_stratum,
                                                 target_prevalence, control_prevalence,
                                                 recency_mean_days);
        }
    }
    return s;
}

json params_json(const GBDTParams& p) {
    json j;
    j["n_estimators"] = p.n_estimators;
    j["max_depth"] = p.max_depth;
    j["learning_rate"] = p.learning_rate;
    j["subsample"] = p.subsample;
    j["colsample_bytree"] = p.colsample_bytree;
    j["reg_alpha"] = p.reg_alpha;
    j["reg_lambda"] = p.reg_lambda;
    j["gamma"] = p.gamma;
    j["min_child_weight"] = p.min_child_weight;
    j["base_score"] = p.base_score;
    return j;
}

}  // namespace

PipelineConfig parse_config(const std::string& text, std::string_view where) {
    std::string wh(where);
    json root;
    try {
        root = json::parse(text);
    } catch (const std::exception& e) {
        throw ValidationError(strfmt("config %s: %s", wh.c_str(), e.what()));
    }
    if (!root.is_object())
        throw ValidationError(strfmt("config %s: top level must be an object", wh.c_str()));
    check_keys(root, "config",
               {"input_dir", "out_dir", "seed", "synth", "phenotype", "matching", "featurize",
                "selection", "model", "tuning", "evaluation"});

    PipelineConfig out = default_config();
    if (auto* v = find_key(root, "input_dir")) out.input_dir = as_text(*v, "input_dir");
    if (auto* v = find_key(root, "out_dir")) out.out_dir = as_text(*v, "out_dir");
    if (auto* v = find_key(root, "seed")) out.seed = as_seed(*v, "seed");
    if (auto* v = find_key(root, "synth")) out.synth = parse_synth(*v);
    if (auto* v = find_key(root, "phenotype")) {
        as_object(*v, "phenotype");
        check_keys(*v, "phenotype", {"crs_codes", "min_code_count", "qualifying_span_days"});
        if (auto* c = find_key(*v, "crs_codes"))
            out.phenotype.crs_code_set = as_text_array(*c, "phenotype.crs_codes");
        if (auto* c = find_key(*v, "min_code_count"))
            out.phenotype.min_code_count = as_int(*c, "phenotype.min_code_count");
        if (auto* c = find_key(*v, "qualifying_span_days"))
            out.phenotype.qualifying_span_days = as_integer(*c, "phenotype.qualifying_span_days");
    }
    if (auto* v = find_key(root, "matching")) {
        as_object(*v, "matching");
        check_keys(*v, "matching", {"visit_window_days"});
        if (auto* c = find_key(*v, "visit_window_days"))
            out.matching.visit_window_days = as_integer(*c, "matching.visit_window_days");
    }
    if (auto* v = find_key(root, "featurize")) {
        as_object(*v, "featurize");
        check_keys(*v, "featurize", {"window_days", "sentinel"});
        if (auto* c = find_key(*v, "window_days"))
            out.featurize.window_days = as_integer(*c, "featurize.window_days");
        if (auto* c = find_key(*v, "sentinel"))
            out.featurize.sentinel = static_cast<std::int32_t>(as_integer(*c, "featurize.sentinel"));
    }
    if (auto* v = find_key(root, "selection")) {
        as_object(*v, "selection");
        check_keys(*v, "selection", {"quotas", "k", "paper_mode", "stage2"});
        if (auto* c = find_key(*v, "quotas")) {
            as_object(*c, "selection.quotas");
            check_keys(*c, "selection.quotas", {"condition", "procedure", "medication"});
            if (auto* q = find_key(*c, "condition"))
                out.selection.quotas.conditions = as_int(*q, "selection.quotas.condition");
            if (auto* q = find_key(*c, "procedure"))
                out.selection.quotas.procedures = as_int(*q, "selection.quotas.procedure");
            if (auto* q = find_key(*c, "medication"))
                out.selection.quotas.medications = as_int(*q, "selection.quotas.medication");
        }
        if (auto* c = find_key(*v, "k")) out.selection.k = as_int(*c, "selection.k");
        if (auto* c = find_key(*v, "paper_mode"))
            out.selection.paper_mode = as_boolean(*c, "selection.paper_mode");
        if (auto* c = find_key(*v, "stage2"))
            out.selection.stage2 = parse_model_block(*c, "selection.stage2", out.selection.stage2);
    }
    if (auto* v = find_key(root, "model")) out.model = parse_model_block(*v, "model", out.model);
    if (auto* v = find_key(root, "tuning")) {
        as_object(*v, "tuning");
        check_keys(*v, "tuning", {"enabled", "n_trials", "gamma_fraction", "n_startup",
                                  "n_candidates", "folds", "space"});
        if (auto* c = find_key(*v, "enabled")) out.tuning.enabled = as_boolean(*c, "tuning.enabled");
        if (auto* c = find_key(*v, "n_trials")) out.tuning.tpe.n_trials = as_int(*c, "tuning.n_trials");
        if (auto* c = find_key(*v, "gamma_fraction"))
            out.tuning.tpe.gamma_fraction = as_number(*c, "tuning.gamma_fraction");
        if (auto* c = find_key(*v, "n_startup")) out.tuning.tpe.n_startup = as_int(*c, "tuning.n_startup");
        if (auto* c = find_key(*v, "n_candidates"))
            out.tuning.tpe.n_candidates = as_int(*c, "tuning.n_candidates");
        if (auto* c = find_key(*v, "folds")) out.tuning.folds = as_int(*c, "tuning.folds");
        if (auto* c = find_key(*v, "space"))
            out.tuning.space = parse_space(*c, "tuning.space", out.tuning.space);
    }
    if (auto* v = find_key(root, "evaluation")) {
        as_object(*v, "evaluation");
        check_keys(*v, "evaluation", {"folds", "threshold"});
        if (auto* c = find_key(*v, "folds")) out.evaluation.folds = as_int(*c, "evaluation.folds");
        if (auto* c = find_key(*v, "threshold"))
            out.evaluation.threshold = as_number(*c, "evaluation.threshold");
    }
    out.validate();
    return out;
}

PipelineConfig load_config(const std::string& path) {
    return parse_config(read_text_file(path), path);
}

std::string config_echo(const PipelineConfig& c) {
    json root;
    root["seed"] = c.seed;
    if (c.synth) {
        const SynthConfig& s = *c.synth;
        json sj;
        sj["n_participants"] = s.n_participants;
        sj["n_concepts"] = s.n_concepts_per_domain;
        sj["strata_proportions"] = s.strata_proportions;
        sj["target_fraction"] = s.target_fraction;
        sj["background_prevalence"] = s.background_prevalence;
        sj["crs_codes"] = s.crs_codes;
        json planted = json::array();
        for (const PlantedSignal& sig : s.planted_signals) {
            json e;
            e["stratum"] = std::string(to_string(sig.stratum));
            e["concept_code"] = sig.concept_code;
            e["target_prevalence"] = sig.target_prevalence;
            e["control_prevalence"] = sig.control_prevalence;
            e["recency_mean_days"] = sig.recency_mean_days;
            planted.push_back(std::move(e));
        }
        sj["planted_signals"] = std::move(planted);
        root["synth"] = std::move(sj);
    }
    root["phenotype"] = {{"crs_codes", c.phenotype.crs_code_set},
                         {"min_code_count", c.phenotype.min_code_count},
                         {"qualifying_span_days", c.phenotype.qualifying_span_days}};
    root["matching"] = {{"visit_window_days", c.matching.visit_window_days}};
    root["featurize"] = {{"window_days", c.featurize.window_days},
                         {"sentinel", c.featurize.sentinel}};
    root["selection"] = {{"quotas",
                          {{"condition", c.selection.quotas.conditions},
                           {"procedure", c.selection.quotas.procedures},
                           {"medication", c.selection.quotas.medications}}},
                         {"k", c.selection.k},
                         {"paper_mode", c.selection.paper_mode},
                         {"stage2", params_json(c.selection.stage2)}};
    root["model"] = params_json(c.model);
    json space;
    for (const ParamSpec& p : c.tuning.space.params)
        space[p.name] = {{"kind", std::string(to_string(p.kind))}, {"lo", p.lo}, {"hi", p.hi}};
    root["tuning"] = {{"enabled", c.tuning.enabled},
                      {"n_trials", c.tuning.tpe.n_trials},
                      {"gamma_fraction", c.tuning.tpe.gamma_fraction},
                      {"n_startup", c.tuning.tpe.n_startup},
                      {"n_candidates", c.tuning.tpe.n_candidates},
                      {"folds", c.tuning.folds},
                      {"space", std::move(space)}};
    root["evaluation"] = {{"folds", c.evaluation.folds}, {"threshold", c.evaluation.threshold}};
    return root.dump(2) + "\n";
}

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::synth: return "synth";
        case Stage::phenotype: return "phenotype";
        case Stage::match: return "match";
        case Stage::encode: return "encode";
        case Stage::select: return "select";
        case Stage::tune: return "tune";
        case Stage::train: return "train";
        case Stage::eval: return "eval";
        case Stage::report: return "report";
    }
    throw ValidationError("unknown stage");
}

std::optional<Stage> parse_stage(std::string_view text) {
    for (int i = 0; i < kNumStages; ++i) {
        Stage s = static_cast<Stage>(i);
        if (to_string(s) == text) return s;
    }
    return std::nullopt;
}

namespace {

constexpr std::size_t idx(Stage s) { return static_cast<std::size_t>(s); }

std::array<std::string, kNumStages> stage_hashes(const PipelineConfig& cfg) {
    json echo = json::parse(config_echo(cfg));
    auto mix = [](std::initializer_list<std::string_view> parts) {
        std::uint64_t h = kFnvBasis;
        for (std::string_view p : parts) {
            h = fnv1a64(static_cast<std::uint64_t>(p.size()), h);
            h = fnv1a64(p, h);
        }
        return strfmt("%016llx", static_cast<unsigned long long>(h));
    };
    std::string seed_text = strfmt("%llu", static_cast<unsigned long long>(cfg.seed));
    std::string synth_dump = cfg.synth ? echo.at("synth").dump() : std::string("external");
    std::array<std::string, kNumStages> h;
    h[idx(Stage::synth)] = mix({"synth", cfg.input_dir, seed_text, synth_dump});
    h[idx(Stage::phenotype)] =
        mix({"phenotype", h[idx(Stage::synth)], echo.at("phenotype").dump()});
    h[idx(Stage::match)] = mix({"match", h[idx(Stage::phenotype)], echo.at("matching").dump()});
    h[idx(Stage::encode)] = mix({"encode", h[idx(Stage::match)], echo.at("featurize").dump()});
    h[idx(Stage::select)] = mix({"select", h[idx(Stage::encode)], echo.at("selection").dump()});
    h[idx(Stage::tune)] =
        mix({"tune", h[idx(Stage::select)], echo.at("tuning").dump(), echo.at("model").dump()});
    h[idx(Stage::train)] = mix({"train", h[idx(Stage::tune)]});
    h[idx(Stage::eval)] = mix({"eval", h[idx(Stage::train)], echo.at("evaluation").dump()});
    h[idx(Stage::report)] = mix({"report", h[idx(Stage::eval)], echo.dump()});
    return h;
}

struct StageContext {
    const PipelineConfig& cfg;
    int workers;
    fs::path in;
    fs::path out;
    std::array<std::string, kNumStages> hashes;
    json state;
};

json load_state(const fs::path& out) {
    fs::path p = out / "stage_state.json";
    if (!fs::exists(p)) return json::object();
    try {
        json j = json::parse(read_text_file(p.string()));
        if (j.is_object()) return j;
    } catch (const std::exception&) {
    }
    log::warn("stage_state.json is unreadable, ignoring the stage cache");
    return json::object();
}

bool stage_cached(const StageContext& ctx, Stage s, std::initializer_list<fs::path> artifacts) {
    std::string key(to_string(s));
    auto it = ctx.state.find(key);
    if (it == ctx.state.end() || !it->is_string() ||
        it->get<std::string>() != ctx.hashes[idx(s)])
        return false;
    for (const fs::path& a : artifacts)
        if (!fs::exists(a)) return false;
    log::info(strfmt("%s: cached, skipping", key.c_str()));
    return true;
}

void record_stage(StageContext& ctx, Stage s) {
    ctx.state[std::string(to_string(s))] = ctx.hashes[idx(s)];
    write_text_file((ctx.out / "stage_state.json").string(), ctx.state.dump(2) + "\n");
}

void require_artifact(const fs::path& p, const char* producer) {
    if (!fs::exists(p))
        throw ValidationError(strfmt("%s is missing; run the %s stage first",
                                     p.string().c_str(), producer));
}

EventStore open_store(const StageContext& ctx) {
    fs::path participants = ctx.in / "participants.csv";
    fs::path events = ctx.in / "events.csv";
    for (const fs::path& p : {participants, events})
        if (!fs::exists(p))
            throw ValidationError(strfmt(
                "%s is missing; run the synth stage first or point input_dir at existing data",
                p.string().c_str()));
    return EventStore::load(participants.string(), events.string());
}

std::int64_t parse_i64(std::string_view text, const std::string& where) {
    std::string t(text);
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(t.c_str(), &end, 10);
    if (t.empty() || errno != 0 || end != t.c_str() + t.size())
        throw ValidationError(strfmt("%s: \"%s\" is not an integer", where.c_str(), t.c_str()));
    return v;
}

double parse_f64(std::string_view text, const std::string& where) {
    std::string t(text);
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (t.empty() || errno != 0 || end != t.c_str() + t.size())
        throw ValidationError(strfmt("%s: \"%s\" is not a number", where.c_str(), t.c_str()));
    return v;
}

void write_targets(const std::vector<CohortLabel>& targets, const std::string& path) {
    CsvWriter w(path, {"person_id", "index_date"});
    for (const CohortLabel& t : targets) w.row({t.person_id, format_date(t.index_date)});
    w.close();
}

std::vector<CohortLabel> read_targets(const std::string& path) {
    CsvReader reader(path, {"person_id", "index_date"});
    std::vector<CohortLabel> out;
    std::set<std::string> seen;
    reader.for_each_row([&](std::size_t line, const std::vector<std::string_view>& f) {
        CohortLabel t;
        t.person_id = std::string(f[0]);
        if (t.person_id.empty())
            throw ValidationError(strfmt("%s line %zu: empty person_id", path.c_str(), line));
        if (!seen.insert(t.person_id).second)
            throw ValidationError(strfmt("%s line %zu: duplicate person %s", path.c_str(), line,
                                         t.person_id.c_str()));
        t.label = CohortGroup::target;
        t.index_date = parse_date(f[1], strfmt("%s line %zu", path.c_str(), line));
        out.push_back(std::move(t));
    });
    if (out.empty()) throw ValidationError(strfmt("%s holds no targets", path.c_str()));
    return out;
}

void write_selected(const SelectedFeatureSet& set, const std::string& path) {
    CsvWriter w(path, {"rank", "concept_code", "domain", "stage", "score"});
    for (std::size_t i = 0; i < set.features.size(); ++i) {
        const SelectedFeature& f = set.features[i];
        w.row({std::to_string(i + 1), f.concept_code, std::string(to_string(f.domain)),
               std::to_string(f.stage), strfmt("%.17g", f.score)});
    }
    w.close();
}

SelectedFeatureSet read_selected(const std::string& path) {
    CsvReader reader(path, {"rank", "concept_code", "domain", "stage", "score"});
    SelectedFeatureSet out;
    std::int64_t expected = 0;
    reader.for_each_row([&](std::size_t line, const std::vector<std::string_view>& f) {
        std::string where = strfmt("%s line %zu", path.c_str(), line);
        if (parse_i64(f[0], where) != ++expected)
            throw ValidationError(strfmt("%s: ranks must be 1..n in order", where.c_str()));
        SelectedFeature sf;
        sf.concept_code = std::string(f[1]);
        sf.domain = parse_domain(f[2], where);
        sf.stage = static_cast<int>(parse_i64(f[3], where));
        sf.score = parse_f64(f[4], where);
        out.features.push_back(std::move(sf));
    });
    if (out.features.empty()) throw ValidationError(strfmt("%s holds no features", path.c_str()));
    return out;
}

void write_heterogeneity(const std::vector<FeatureHeterogeneity>& tests, const std::string& path) {
    CsvWriter w(path, {"concept_code", "H", "p"});
    for (const FeatureHeterogeneity& t : tests)
        w.row({t.concept_code, strfmt("%.17g", t.test.H), strfmt("%.17g", t.test.p)});
    w.close();
}

void write_trials(const std::vector<RegimeTuning>& tuned, const SearchSpace& space,
                  const std::string& path) {
    std::vector<std::string> header = {"regime", "trial"};
    for (const ParamSpec& p : space.params) header.push_back(p.name);
    header.push_back("objective");
    header.push_back("status");
    CsvWriter w(path, header);
    for (const RegimeTuning& rt : tuned) {
        for (std::size_t i = 0; i < rt.trials.size(); ++i) {
            const Trial& trial = rt.trials[i];
            std::vector<std::string> row = {rt.name, std::to_string(i)};
            for (double v : trial.point) row.push_back(strfmt("%.17g", v));
            row.push_back(trial.complete ? strfmt("%.17g", trial.objective) : std::string("-inf"));
            row.push_back(trial.complete ? "complete" : "failed");
            w.row(row);
        }
    }
    w.close();
}

void write_tuned_params(const std::vector<RegimeTuning>& tuned, const std::string& path) {
    json regimes = json::object();
    for (const RegimeTuning& rt : tuned) {
        json r = params_json(rt.params);
        double best = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (const Trial& t : rt.trials)
            if (t.complete && t.objective > best) {
                best = t.objective;
                any = true;
            }
        if (any) r["objective"] = best;
        regimes[rt.name] = std::move(r);
    }
    json root;
    root["regimes"] = std::move(regimes);
    write_text_file(path, root.dump(2) + "\n");
}

std::map<std::string, GBDTParams> read_tuned_params(const std::string& path, GBDTParams base) {
    json root;
    try {
        root = json::parse(read_text_file(path));
    } catch (const std::exception& e) {
        throw ValidationError(strfmt("%s: %s", path.c_str(), e.what()));
    }
    if (!root.is_object() || !root.contains("regimes") || !root["regimes"].is_object())
        throw ValidationError(strfmt("%s: expected an object with a regimes map", path.c_str()));
    std::map<std::string, GBDTParams> out;
    for (auto it = root["regimes"].begin(); it != root["regimes"].end(); ++it) {
        if (it.key() != "global" && !parse_stratum(it.key()))
            throw ValidationError(strfmt("%s: \"%s\" is not a regime name", path.c_str(),
                                         it.key().c_str()));
        json obj = *it;
        obj.erase("objective");
        out[it.key()] = parse_model_block(obj, path + ":" + it.key(), base);
    }
    if (!out.count("global"))
        throw ValidationError(strfmt("%s lacks the global regime; rerun the tune stage",
                                     path.c_str()));
    return out;
}

json metrics_json(const Metrics& m) {
    json j;
    j["auc"] = m.auc;
    j["f1"] = m.f1;
    j["sensitivity"] = m.sensitivity;
    j["specificity"] = m.specificity;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["tn"] = m.tn;
    j["fn"] = m.fn;
    return j;
}

json count_json(const StratumCount& c) {
    json j;
    j["name"] = c.name;
    j["n"] = c.n;
    j["targets"] = c.targets;
    j["target_share"] = c.target_share;
    return j;
}

json regime_json(const RegimeResult& r) {
    json j;
    j["name"] = r.name;
    j["n_rows"] = r.rows.size();
    j["folds"] = r.folds_used;
    j["params"] = params_json(r.params);
    j["pooled"] = metrics_json(r.pooled);
    j["fold_auc_mean"] = r.fold_auc_mean;
    j["fold_auc_std"] = r.fold_auc_std;
    json folds = json::array();
    for (const Metrics& m : r.fold_metrics) folds.push_back(metrics_json(m));
    j["fold_metrics"] = std::move(folds);
    j["n_trials"] = r.trials.size();
    return j;
}

json benchmark_json(const GroupReport& g) {
    json j;
    json strata_counts = json::array();
    for (const StratumCount& c : g.statistics.strata) strata_counts.push_back(count_json(c));
    j["statistics"] = {{"strata", std::move(strata_counts)},
                       {"remainder", count_json(g.statistics.remainder)},
                       {"total", count_json(g.statistics.total)}};
    j["global"] = regime_json(g.global);
    json groups = json::array();
    for (const RegimeResult& r : g.groups) groups.push_back(regime_json(r));
    j["groups"] = std::move(groups);
    json strata = json::array();
    for (const StratumComparison& c : g.strata) {
        json e;
        e["stratum"] = std::string(to_string(c.stratum));
        e["display"] = std::string(display_name(c.stratum));
        e["n"] = c.n;
        e["targets"] = c.targets;
        e["evaluated"] = c.evaluated;
        e["share"] = c.share;
        e["auc_global"] = c.auc_global;
        e["auc_group"] = c.auc_group;
        e["delta"] = c.delta;
        strata.push_back(std::move(e));
    }
    j["strata"] = std::move(strata);
    j["weighted"] = {{"global", g.weighted_global},
                     {"group", g.weighted_group},
                     {"delta", g.weighted_delta}};
    json remainder;
    remainder["n"] = g.remainder_n;
    remainder["auc_global"] = g.remainder_auc ? json(*g.remainder_auc) : json(nullptr);
    j["remainder"] = std::move(remainder);
    json roc = json::array();
    for (const RocPoint& p : g.roc) roc.push_back({p.fpr, p.tpr});
    j["roc"] = std::move(roc);
    return j;
}

BenchmarkConfig make_benchmark_config(const PipelineConfig& cfg, bool fold_internal) {
    BenchmarkConfig bc;
    bc.n_folds = cfg.evaluation.folds;
    bc.threshold = cfg.evaluation.threshold;
    bc.model = cfg.model;
    bc.tune = false;
    bc.space = cfg.tuning.space;
    bc.tpe = cfg.tuning.tpe;
    bc.tuning_folds = cfg.tuning.folds;
    bc.seed = cfg.seed;
    if (fold_internal)
        bc.fold_selection =
            FoldSelectionConfig{cfg.selection.quotas, cfg.selection.k, cfg.selection.stage2};
    return bc;
}

void stage_synth(StageContext& ctx) {
    if (!ctx.cfg.synth)
        throw ValidationError("config has no synth block; add one or provide input data");
    fs::path participants = ctx.in / "participants.csv";
    fs::path events = ctx.in / "events.csv";
    fs::path truth = ctx.in / "ground_truth.csv";
    fs::path planted = ctx.in / "planted_concepts.csv";
    if (stage_cached(ctx, Stage::synth, {participants, events, truth, planted})) return;
    fs::create_directories(ctx.in);
    SynthConfig sc = *ctx.cfg.synth;
    sc.seed = fnv1a64("synth", fnv1a64(ctx.cfg.seed));
    SynthData data = generate(sc);
    write_synth(data, {participants.string(), events.string(), truth.string(), planted.string()});
    log::info(strfmt("synth: %zu participants, %zu events", data.participants.size(),
                     data.events.size()));
    record_stage(ctx, Stage::synth);
}

void stage_phenotype(StageContext& ctx) {
    fs::path targets_path = ctx.out / "targets.csv";
    if (stage_cached(ctx, Stage::phenotype, {targets_path})) return;
    EventStore store = open_store(ctx);
    std::vector<CohortLabel> targets = phenotype(store, ctx.cfg.phenotype);
    if (targets.empty()) throw PipelineError("phenotype: no person meets the target definition");
    write_targets(targets, targets_path.string());
    log::info(strfmt("phenotype: %zu targets", targets.size()));
    record_stage(ctx, Stage::phenotype);
}

void stage_match(StageContext& ctx) {
    fs::path cohort_path = ctx.out / "cohort.csv";
    fs::path balance_path = ctx.out / "balance.csv";
    if (stage_cached(ctx, Stage::match, {cohort_path, balance_path})) return;
    require_artifact(ctx.out / "targets.csv", "phenotype");
    EventStore store = open_store(ctx);
    std::vector<CohortLabel> targets = read_targets((ctx.out / "targets.csv").string());

    MatchingData data = build_matching_input(store, targets, ctx.cfg.matching.visit_window_days);
    if (data.control_ids.empty()) throw PipelineError("match: no candidate controls");

    std::vector<std::vector<int>> rows;
    std::vector<std::uint8_t> labels;
    rows.reserve(data.target_rows.size() + data.control_rows.size());
    for (const auto& r : data.target_rows) {
        rows.push_back(r);
        labels.push_back(1);
    }
    for (const auto& r : data.control_rows) {
        rows.push_back(r);
        labels.push_back(0);
    }
    PropensityModel propensity = fit_propensity(data.schema, rows, labels);

    std::vector<ScoredPerson> scored_targets(data.target_ids.size());
    for (std::size_t i = 0; i < data.target_ids.size(); ++i)
        scored_targets[i] = {data.target_ids[i], propensity.score(data.target_rows[i])};
    std::vector<ScoredPerson> scored_controls(data.control_ids.size());
    for (std::size_t i = 0; i < data.control_ids.size(); ++i)
        scored_controls[i] = {data.control_ids[i], propensity.score(data.control_rows[i])};

    MatchResult match = match_by_score(scored_targets, scored_controls);
    if (match.pairs.empty()) throw PipelineError("match: no pairs could be formed");
    if (!match.unmatched_targets.empty())
        log::warn(strfmt("match: %zu targets left unmatched", match.unmatched_targets.size()));

    std::vector<CovariateBalance> balance = covariate_balance(data, match);
    std::vector<CohortLabel> cohort = assemble_cohort(targets, match);
    write_cohort_file(cohort, cohort_path.string());
    CsvWriter w(balance_path.string(), {"covariate", "pre_smd", "post_smd"});
    for (const CovariateBalance& b : balance)
        w.row({b.covariate, strfmt("%.17g", b.pre), strfmt("%.17g", b.post)});
    w.close();
    log::info(strfmt("match: %zu pairs, propensity converged in %d iterations",
                     match.pairs.size(), propensity.n_iterations));
    record_stage(ctx, Stage::match);
}

void stage_encode(StageContext& ctx) {
    fs::path features_path = ctx.out / "features.csv";
    fs::path columns_path = ctx.out / "feature_columns.csv";
    if (stage_cached(ctx, Stage::encode, {features_path, columns_path})) return;
    require_artifact(ctx.out / "cohort.csv", "match");
    EventStore store = open_store(ctx);
    std::vector<CohortLabel> cohort = read_cohort_file((ctx.out / "cohort.csv").string());
    RecencyFeatureMatrix matrix = encode_recency(store, cohort, ctx.cfg.featurize.window_days);
    matrix = strip_leakage(std::move(matrix), ctx.cfg.phenotype.crs_code_set);
    write_features(matrix, features_path.string(), columns_path.string());
    log::info(strfmt("encode: %zu rows, %zu columns", matrix.n_rows(), matrix.n_columns()));
    record_stage(ctx, Stage::encode);
}

// Shared by the select/tune/train/eval stages.
struct LoadedFeatures {
    EventStore store;
    std::vector<CohortLabel> cohort;
    RecencyFeatureMatrix matrix;
};

LoadedFeatures load_features(const StageContext& ctx) {
    require_artifact(ctx.out / "cohort.csv", "match");
    require_artifact(ctx.out / "features.csv", "encode");
    require_artifact(ctx.out / "feature_columns.csv", "encode");
    EventStore store = open_store(ctx);
    std::vector<CohortLabel> cohort = read_cohort_file((ctx.out / "cohort.csv").string());
    RecencyFeatureMatrix matrix =
        read_features((ctx.out / "features.csv").string(),
                      (ctx.out / "feature_columns.csv").string(), cohort,
                      ctx.cfg.featurize.window_days);
    return {std::move(store), std::move(cohort), std::move(matrix)};
}

std::vector<int> stratum_ints(const std::vector<std::optional<StratumId>>& strata) {
    std::vector<int> out(strata.size(), -1);
    for (std::size_t i = 0; i < strata.size(); ++i)
        if (strata[i]) out[i] = static_cast<int>(*strata[i]);
    return out;
}

void stage_select(StageContext& ctx) {
    fs::path selected_path = ctx.out / "selected_features.csv";
    fs::path heterogeneity_path = ctx.out / "heterogeneity.csv";
    fs::path summary_path = ctx.out / "selection.json";
    if (stage_cached(ctx, Stage::select, {selected_path, heterogeneity_path, summary_path})) return;
    LoadedFeatures loaded = load_features(ctx);

    SelectedFeatureSet stage1 = stage1_prevalence(loaded.matrix, ctx.cfg.selection.quotas);
    RecencyFeatureMatrix screened = loaded.matrix.restricted_to(stage1.codes());
    GBDTParams screen_params = ctx.cfg.selection.stage2;
    screen_params.seed = fnv1a64("select", fnv1a64(ctx.cfg.seed));
    GBDTModel screen = train(screened, screen_params, ctx.workers);
    SelectedFeatureSet selected = stage2_rank(screen, screened, ctx.cfg.selection.k);
    double coverage = shap_coverage(screen, screened, selected.codes(), ctx.workers);

    RecencyFeatureMatrix final_matrix = loaded.matrix.restricted_to(selected.codes());
    std::vector<int> row_strata =
        stratum_ints(feature_row_strata(loaded.store, loaded.cohort, final_matrix));
    std::vector<FeatureHeterogeneity> tests =
        stratum_heterogeneity(final_matrix, row_strata, ctx.workers);
    int significant = count_significant(tests);

    write_selected(selected, selected_path.string());
    write_heterogeneity(tests, heterogeneity_path.string());
    json summary;
    summary["stage1_count"] = stage1.features.size();
    summary["selected_count"] = selected.features.size();
    summary["k"] = ctx.cfg.selection.k;
    summary["paper_mode"] = ctx.cfg.selection.paper_mode;
    summary["shap_coverage"] = coverage;
    summary["heterogeneity"] = {{"columns", tests.size()},
                                {"significant", significant},
                                {"alpha", 0.05}};
    write_text_file(summary_path.string(), summary.dump(2) + "\n");
    log::info(strfmt("select: %zu stage-1, %zu selected, coverage %.4f, %d heterogeneous columns",
                     stage1.features.size(), selected.features.size(), coverage, significant));
    record_stage(ctx, Stage::select);
}

void stage_tune(StageContext& ctx) {
    fs::path trials_path = ctx.out / "trials.csv";
    fs::path params_path = ctx.out / "tuned_params.json";
    if (stage_cached(ctx, Stage::tune, {trials_path, params_path})) return;
    require_artifact(ctx.out / "selected_features.csv", "select");
    LoadedFeatures loaded = load_features(ctx);
    SelectedFeatureSet selected = read_selected((ctx.out / "selected_features.csv").string());
    RecencyFeatureMatrix matrix = loaded.matrix.restricted_to(selected.codes());

    std::vector<RegimeTuning> tuned;
    if (ctx.cfg.tuning.enabled) {
        // The objective sees the fixed full-cohort selection; fold-internal
        // re-screening stays an evaluation-stage concern.
        BenchmarkConfig bc = make_benchmark_config(ctx.cfg, false);
        tuned = tune_regimes(loaded.store, loaded.cohort, matrix, bc, ctx.workers);
    } else {
        log::info("tune: disabled, recording configured model params for every regime");
        std::vector<std::optional<StratumId>> row_strata =
            feature_row_strata(loaded.store, loaded.cohort, matrix);
        tuned.push_back({"global", ctx.cfg.model, {}});
        for (int s = 0; s < kNumStrata; ++s) {
            std::size_t n = 0;
            std::size_t targets = 0;
            for (std::size_t i = 0; i < matrix.n_rows(); ++i) {
                if (row_strata[i] != kAllStrata[s]) continue;
                n++;
                targets += matrix.labels[i] ? 1 : 0;
            }
            if (std::min(targets, n - targets) < 2) continue;
            tuned.push_back({std::string(to_string(kAllStrata[s])), ctx.cfg.model, {}});
        }
    }
    write_trials(tuned, ctx.cfg.tuning.space, trials_path.string());
    write_tuned_params(tuned, params_path.string());
    log::info(strfmt("tune: %zu regimes", tuned.size()));
    record_stage(ctx, Stage::tune);
}

void stage_train(StageContext& ctx) {
    fs::path models_dir = ctx.out / "models";
    fs::path manifest_path = models_dir / "manifest.json";
    fs::path global_path = models_dir / "global.txt";
    if (stage_cached(ctx, Stage::train, {manifest_path, global_path})) return;
    require_artifact(ctx.out / "tuned_params.json", "tune");
    require_artifact(ctx.out / "selected_features.csv", "select");
    LoadedFeatures loaded = load_features(ctx);
    SelectedFeatureSet selected = read_selected((ctx.out / "selected_features.csv").string());
    RecencyFeatureMatrix matrix = loaded.matrix.restricted_to(selected.codes());
    std::map<std::string, GBDTParams> regimes =
        read_tuned_params((ctx.out / "tuned_params.json").string(), ctx.cfg.model);

    std::vector<std::optional<StratumId>> row_strata =
        feature_row_strata(loaded.store, loaded.cohort, matrix);
    fs::create_directories(models_dir);
    json manifest_models = json::array();
    for (const auto& [name, base_params] : regimes) {
        std::vector<std::size_t> rows;
        if (name == "global") {
            rows.resize(matrix.n_rows());
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        } else {
            StratumId stratum = *parse_stratum(name);
            for (std::size_t i = 0; i < matrix.n_rows(); ++i)
                if (row_strata[i] == stratum) rows.push_back(i);
        }
        if (rows.empty()) {
            log::warn(strfmt("train: regime %s has no rows, skipped", name.c_str()));
            continue;
        }
        GBDTParams params = base_params;
        params.seed = fnv1a64("train", fnv1a64(name, fnv1a64(ctx.cfg.seed)));
        GBDTModel model = train(subset_rows(matrix, rows), params, ctx.workers);
        save_model(model, (models_dir / (name + ".txt")).string());
        manifest_models.push_back(name);
    }
    json manifest;
    manifest["models"] = std::move(manifest_models);
    write_text_file(manifest_path.string(), manifest.dump(2) + "\n");
    log::info(strfmt("train: %zu models", manifest["models"].size()));
    record_stage(ctx, Stage::train);
}

void stage_eval(StageContext& ctx) {
    fs::path eval_path = ctx.out / "evaluation.json";
    if (stage_cached(ctx, Stage::eval, {eval_path})) return;
    require_artifact(ctx.out / "tuned_params.json", "tune");
    require_artifact(ctx.out / "selected_features.csv", "select");
    require_artifact(ctx.out / "models" / "global.txt", "train");
    LoadedFeatures loaded = load_features(ctx);
    SelectedFeatureSet selected = read_selected((ctx.out / "selected_features.csv").string());
    RecencyFeatureMatrix selected_matrix = loaded.matrix.restricted_to(selected.codes());

    BenchmarkConfig bc = make_benchmark_config(ctx.cfg, !ctx.cfg.selection.paper_mode);
    bc.regime_params = read_tuned_params((ctx.out / "tuned_params.json").string(), ctx.cfg.model);
    const RecencyFeatureMatrix& bench_matrix =
        ctx.cfg.selection.paper_mode ? selected_matrix : loaded.matrix;
    GroupReport report = run_benchmark(loaded.store, loaded.cohort, bench_matrix, bc, ctx.workers);

    GBDTModel global_model = load_model((ctx.out / "models" / "global.txt").string());
    std::vector<double> gains = gain_importance(global_model);
    std::vector<double> contributions =
        mean_abs_contributions(global_model, selected_matrix, ctx.workers);
    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < gains.size(); ++c)
        if (gains[c] > 0.0) order.push_back(c);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (gains[a] != gains[b]) return gains[a] > gains[b];
        return global_model.feature_names[a] < global_model.feature_names[b];
    });
    if (order.size() > 25) order.resize(25);
    json top = json::array();
    for (std::size_t c : order) {
        json e;
        e["concept_code"] = global_model.feature_names[c];
        e["gain"] = gains[c];
        e["mean_abs_contribution"] = contributions[c];
        top.push_back(std::move(e));
    }

    json doc;
    doc["benchmark"] = benchmark_json(report);
    doc["top_features"] = std::move(top);
    doc["global_model_file"] = "models/global.txt";
    write_text_file(eval_path.string(), doc.dump(2) + "\n");
    log::info(strfmt("eval: global pooled AUC %.4f, weighted delta %+.4f",
                     report.global.pooled.auc, report.weighted_delta));
    record_stage(ctx, Stage::eval);
}

std::string render_markdown(const json& root) {
    const json& bench = root.at("evaluation").at("benchmark");
    std::string md;
    md += "# CRS risk model report\n\n";
    md += strfmt("Master seed %llu.\n\n",
                 static_cast<unsigned long long>(root.at("seed").get<std::uint64_t>()));

    md += "## Cohort\n\n";
    md += "| Group | n | Targets | Target share |\n|---|---:|---:|---:|\n";
    const json& stats = bench.at("statistics");
    auto stat_row = [&](const json& c) {
        md += strfmt("| %s | %llu | %llu | %s |\n", c.at("name").get<std::string>().c_str(),
                     static_cast<unsigned long long>(c.at("n").get<std::uint64_t>()),
                     static_cast<unsigned long long>(c.at("targets").get<std::uint64_t>()),
                     c.at("target_share").get<std::string>().c_str());
    };
    for (const json& c : stats.at("strata")) stat_row(c);
    if (stats.at("remainder").at("n").get<std::uint64_t>() > 0) stat_row(stats.at("remainder"));
    stat_row(stats.at("total"));

    const json& global = bench.at("global");
    const json& pooled = global.at("pooled");
    md += "\n## Global model\n\n";
    md += strfmt("Pooled out-of-fold over %d folds: AUC %.4f, F1 %.4f, sensitivity %.4f, "
                 "specificity %.4f.\n",
                 global.at("folds").get<int>(), pooled.at("auc").get<double>(),
                 pooled.at("f1").get<double>(), pooled.at("sensitivity").get<double>(),
                 pooled.at("specificity").get<double>());
    md += strfmt("Per-fold AUC %.4f +/- %.4f.\n", global.at("fold_auc_mean").get<double>(),
                 global.at("fold_auc_std").get<double>());

    md += "\n## Stratified comparison\n\n";
    md += "| Stratum | n | Share | AUC (global) | AUC (stratum) | Delta |\n";
    md += "|---|---:|---:|---:|---:|---:|\n";
    for (const json& c : bench.at("strata")) {
        if (c.at("evaluated").get<bool>()) {
            md += strfmt("| %s | %llu | %.1f%% | %.4f | %.4f | %+.4f |\n",
                         c.at("display").get<std::string>().c_str(),
                         static_cast<unsigned long long>(c.at("n").get<std::uint64_t>()),
                         100.0 * c.at("share").get<double>(), c.at("auc_global").get<double>(),
                         c.at("auc_group").get<double>(), c.at("delta").get<double>());
        } else {
            md += strfmt("| %s | %llu | - | - | - | excluded |\n",
                         c.at("display").get<std::string>().c_str(),
                         static_cast<unsigned long long>(c.at("n").get<std::uint64_t>()));
        }
    }
    const json& weighted = bench.at("weighted");
    md += strfmt("| Weighted total | | 100.0%% | %.4f | %.4f | %+.4f |\n",
                 weighted.at("global").get<double>(), weighted.at("group").get<double>(),
                 weighted.at("delta").get<double>());
    const json& remainder = bench.at("remainder");
    if (remainder.at("n").get<std::uint64_t>() > 0) {
        if (remainder.at("auc_global").is_null()) {
            md += strfmt("\n%llu participants outside the six strata were scored by the global "
                         "model only (single-class, no AUC).\n",
                         static_cast<unsigned long long>(remainder.at("n").get<std::uint64_t>()));
        } else {
            md += strfmt("\n%llu participants outside the six strata, global model AUC %.4f.\n",
                         static_cast<unsigned long long>(remainder.at("n").get<std::uint64_t>()),
                         remainder.at("auc_global").get<double>());
        }
    }

    const json& selection = root.at("selection");
    md += "\n## Feature selection\n\n";
    md += strfmt("Stage 1 kept %llu concepts, stage 2 kept %llu; the selected set covers %.4f of "
                 "the screening model's attribution mass.\n",
                 static_cast<unsigned long long>(selection.at("stage1_count").get<std::uint64_t>()),
                 static_cast<unsigned long long>(selection.at("selected_count").get<std::uint64_t>()),
                 selection.at("shap_coverage").get<double>());
    const json& het = selection.at("heterogeneity");
    md += strfmt("%d of %llu selected features differ across strata (Kruskal-Wallis, alpha %.2f).\n",
                 het.at("significant").get<int>(),
                 static_cast<unsigned long long>(het.at("columns").get<std::uint64_t>()),
                 het.at("alpha").get<double>());

    const json& top = root.at("evaluation").at("top_features");
    if (!top.empty()) {
        md += "\n## Top features of the deployed global model\n\n";
        md += "| Rank | Concept | Gain | Mean abs contribution |\n|---:|---|---:|---:|\n";
        int rank = 0;
        for (const json& e : top)
            md += strfmt("| %d | %s | %.6g | %.6g |\n", ++rank,
                         e.at("concept_code").get<std::string>().c_str(),
                         e.at("gain").get<double>(), e.at("mean_abs_contribution").get<double>());
    }
    return md;
}

void stage_report(StageContext& ctx) {
    fs::path report_json_path = ctx.out / "report.json";
    fs::path report_md_path = ctx.out / "report.md";
    if (stage_cached(ctx, Stage::report, {report_json_path, report_md_path})) return;
    require_artifact(ctx.out / "evaluation.json", "eval");
    require_artifact(ctx.out / "selection.json", "select");

    json evaluation;
    json selection;
    try {
        evaluation = json::parse(read_text_file((ctx.out / "evaluation.json").string()));
        selection = json::parse(read_text_file((ctx.out / "selection.json").string()));
    } catch (const std::exception& e) {
        throw ValidationError(strfmt("report: unreadable upstream artifact: %s", e.what()));
    }

    json root;
    root["config"] = json::parse(config_echo(ctx.cfg));
    root["seed"] = ctx.cfg.seed;
    root["selection"] = std::move(selection);
    root["evaluation"] = std::move(evaluation);
    write_text_file(report_json_path.string(), root.dump(2) + "\n");
    write_text_file(report_md_path.string(), render_markdown(root));
    log::info("report: wrote report.json and report.md");
    record_stage(ctx, Stage::report);
}

}  // namespace

void write_cohort_file(const std::vector<CohortLabel>& cohort, const std::string& path) {
    CsvWriter w(path, {"person_id", "label", "index_date", "matched_to"});
    for (const CohortLabel& c : cohort)
        w.row({c.person_id, std::string(to_string(c.label)), format_date(c.index_date),
               c.matched_to});
    w.close();
}

std::vector<CohortLabel> read_cohort_file(const std::string& path) {
    CsvReader reader(path, {"person_id", "label", "index_date", "matched_to"});
    std::vector<CohortLabel> out;
    std::set<std::string> seen;
    reader.for_each_row([&](std::size_t line, const std::vector<std::string_view>& f) {
        std::string where = strfmt("%s line %zu", path.c_str(), line);
        CohortLabel c;
        c.person_id = std::string(f[0]);
        if (c.person_id.empty()) throw ValidationError(where + ": empty person_id");
        if (!seen.insert(c.person_id).second)
            throw ValidationError(strfmt("%s: duplicate person %s", where.c_str(),
                                         c.person_id.c_str()));
        c.label = parse_cohort_group(f[1], where);
        c.index_date = parse_date(f[2], where);
        c.matched_to = std::string(f[3]);
        if (c.label == CohortGroup::control && c.matched_to.empty())
            throw ValidationError(where + ": control row lacks matched_to");
        out.push_back(std::move(c));
    });
    if (out.empty()) throw ValidationError(strfmt("%s holds no cohort rows", path.c_str()));
    return out;
}

void run_stage(const PipelineConfig& config, Stage stage, int workers) {
    config.validate();
    if (workers < 1) throw ValidationError("workers must be positive");
    StageContext ctx{config,          workers, fs::path(config.input_dir),
                     fs::path(config.out_dir), stage_hashes(config), json::object()};
    fs::create_directories(ctx.out);
    ctx.state = load_state(ctx.out);
    switch (stage) {
        case Stage::synth: stage_synth(ctx); break;
        case Stage::phenotype: stage_phenotype(ctx); break;
        case Stage::match: stage_match(ctx); break;
        case Stage::encode: stage_encode(ctx); break;
        case Stage::select: stage_select(ctx); break;
        case Stage::tune: stage_tune(ctx); break;
        case Stage::train: stage_train(ctx); break;
        case Stage::eval: stage_eval(ctx); break;
        case Stage::report: stage_report(ctx); break;
    }
}

void run_all(const PipelineConfig& config, int workers) {
    if (config.synth)
        run_stage(config, Stage::synth, workers);
    else
        log::info("synth: no config block, using existing input data");
    for (Stage s : {Stage::phenotype, Stage::match, Stage::encode, Stage::select, Stage::tune,
                    Stage::train, Stage::eval, Stage::report})
        run_stage(config, s, workers);
}

}  // namespace strata
