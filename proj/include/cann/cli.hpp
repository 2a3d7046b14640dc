#pragma once

// Command-line pipeline: synth, prepare, fit-glm, tune, fit-cann, evaluate,
// explain. One JSON configuration drives every command; flags override it.
//
// Output layout under --out:
//   SCHEMA_VERSION
//   data/      contracts.csv trips.csv truth.csv
//   prepared/  features.csv recipe.json splits.csv
//   glm/       glm_<head>_<mode>.json
//   tune/      grid_<head>.csv best_<head>.json
//   cann/      cann_<head>[_fixed_beta].json and *_epochs.csv
//   eval/      scores.csv scores.json report.txt balance.csv
//   explain/   fi_<model>.csv fi_<model>.svg pdp_<model>_<input>.csv/.svg summary.json

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cann/error.hpp"
#include "cann/evaluation.hpp"
#include "cann/features/feature_table.hpp"
#include "cann/features/preprocessing.hpp"
#include "cann/glm.hpp"
#include "cann/synthetic.hpp"
#include "cann/training.hpp"
#include "json.hpp"

namespace cann::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline constexpr std::string_view kSchemaVersion = "1";

struct RunConfig {
  json raw = json::object();
  std::uint64_t seed = 0;
  fs::path out = "cann_out";
  Family head = Family::poisson;
  features::CovariateMode mode = features::CovariateMode::trad;
  bool fixed_beta = false;
  int workers = 1;

  const json& section(const char* name) const {
    static const json empty = json::object();
    return raw.contains(name) ? raw.at(name) : empty;
  }
};

namespace detail {

inline void ensure_dir(const fs::path& p) { fs::create_directories(p); }

inline void write_text(const fs::path& p, const std::string& s) {
  ensure_dir(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write '" + p.string() + "'");
  f << s;
}

inline std::string read_text(const fs::path& p, std::string_view produced_by) {
  std::ifstream f(p, std::ios::binary);
  if (!f) {
    throw DataError("missing " + p.string() + (produced_by.empty() ? "" : "; run `" + std::string(produced_by) + "` first"));
  }
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

inline io::CsvTable read_csv(const fs::path& p, std::string_view produced_by) {
  std::istringstream in(read_text(p, produced_by));
  return io::CsvTable::read(in, p.string());
}

inline void check_schema(const fs::path& out) {
  const fs::path f = out / "SCHEMA_VERSION";
  if (fs::exists(f)) {
    std::string v = read_text(f, "");
    while (!v.empty() && (v.back() == '\n' || v.back() == '\r')) v.pop_back();
    if (v != kSchemaVersion) {
      throw DataError(out.string() + " was written with schema version " + v + ", this build uses " +
                      std::string(kSchemaVersion) + "; use a fresh --out directory");
    }
  } else {
    write_text(f, std::string(kSchemaVersion) + "\n");
  }
}

template <class T>
T value_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline TrainConfig train_config(const RunConfig& rc) {
  const json& t = rc.section("train");
  TrainConfig c;
  c.head = rc.head;
  c.seed = rc.seed;
  c.fixed_beta = rc.fixed_beta;
  c.lr_start = value_or(t, "lr_start", c.lr_start);
  c.factor = value_or(t, "factor", c.factor);
  c.dropout_p = value_or(t, "dropout_p", c.dropout_p);
  c.batch_size = value_or(t, "batch_size", c.batch_size);
  c.max_epochs = value_or(t, "max_epochs", c.max_epochs);
  c.early_stopping = value_or(t, "early_stopping", c.early_stopping);
  c.layer_widths = value_or(t, "layer_widths", c.layer_widths);
  c.batchnorm_momentum = value_or(t, "batchnorm_momentum", c.batchnorm_momentum);
  c.batchnorm_eps = value_or(t, "batchnorm_eps", c.batchnorm_eps);
  return c;
}

struct Prepared {
  features::FeatureTable table;
  features::PreprocessingRecipe recipe;
  features::LearningSet train, valid, test;
};

inline Prepared load_prepared(const RunConfig& rc) {
  Prepared p;
  p.table = features::read_feature_table(read_csv(rc.out / "prepared" / "features.csv", "prepare"));
  p.recipe = features::recipe_from_json(ojson::parse(read_text(rc.out / "prepared" / "recipe.json", "prepare")));
  if (p.table.split.empty()) throw DataError("prepared/features.csv carries no split labels; rerun `prepare`");
  p.train = features::apply_recipe(p.recipe, p.table.subset(p.table.rows_in("train")));
  p.valid = features::apply_recipe(p.recipe, p.table.subset(p.table.rows_in("valid")));
  p.test = features::apply_recipe(p.recipe, p.table.subset(p.table.rows_in("test")));
  return p;
}

inline std::string glm_name(Family f, features::CovariateMode m) {
  return "glm_" + std::string(to_string(f)) + "_" + features::to_string(m);
}

inline std::string cann_name(Family f, bool fixed_beta) {
  return "cann_" + std::string(to_string(f)) + (fixed_beta ? "_fixed_beta" : "");
}

inline std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

/// The GLM of the given family on the traditional design: reused from glm/
/// when present, otherwise fitted on the training split.
inline glm::GlmFit initializer(const RunConfig& rc, const Prepared& p, Family f) {
  const fs::path file = rc.out / "glm" / (glm_name(f, features::CovariateMode::trad) + ".json");
  if (fs::exists(file)) return glm::glm_fit_from_json(ojson::parse(read_text(file, "fit-glm")).at("fit"));
  return fit_initializer(p.train, f);
}

}  // namespace detail

inline int cmd_synth(const RunConfig& rc, std::ostream& out) {
  synth::GeneratorConfig g = synth::generator_config_from_json(rc.section("synth"));
  g.seed = rc.seed;
  const auto pf = synth::generate(g);
  detail::check_schema(rc.out);
  std::ostringstream c, t, tr;
  features::write_contracts(c, pf.contracts);
  features::write_trips(t, pf.trips);
  synth::write_truth(tr, pf.truth);
  detail::write_text(rc.out / "data" / "contracts.csv", c.str());
  detail::write_text(rc.out / "data" / "trips.csv", t.str());
  detail::write_text(rc.out / "data" / "truth.csv", tr.str());
  out << "synth: " << g.n_vehicles << " vehicles, " << pf.contracts.size() << " contracts, " << pf.trips.size()
      << " trips -> " << (rc.out / "data").string() << "\n";
  return 0;
}

inline int cmd_prepare(const RunConfig& rc, std::ostream& out) {
  const json& d = rc.section("data");
  const fs::path contracts = detail::value_or<std::string>(d, "contracts", (rc.out / "data" / "contracts.csv").string());
  const fs::path trips = detail::value_or<std::string>(d, "trips", (rc.out / "data" / "trips.csv").string());
  auto cs = features::read_contracts(detail::read_csv(contracts, "synth"));
  auto ts = features::read_trips(detail::read_csv(trips, "synth"));
  const auto weighting = features::parse_time_weighting(detail::value_or<std::string>(rc.raw, "time_weighting", "duration"));
  auto table = features::build_feature_table(std::move(cs), ts, weighting);
  const json& s = rc.section("split");
  features::SplitFractions f;
  f.train = detail::value_or(s, "train", f.train);
  f.valid = detail::value_or(s, "valid", f.valid);
  f.test = detail::value_or(s, "test", f.test);
  features::assign_splits(table, f, rc.seed);
  const auto recipe = features::fit_recipe(table.subset(table.rows_in("train")),
                                           detail::value_or(rc.raw, "rare_share", 0.05));
  detail::check_schema(rc.out);
  std::ostringstream ft, sp;
  features::write_feature_table(ft, table);
  sp << "vin,split\n";
  for (std::size_t i = 0; i < table.size(); ++i)
    if (table.contract_index[i] == 1) sp << table.contracts[i].vin << ',' << table.split[i] << '\n';
  detail::write_text(rc.out / "prepared" / "features.csv", ft.str());
  detail::write_text(rc.out / "prepared" / "splits.csv", sp.str());
  detail::write_text(rc.out / "prepared" / "recipe.json", detail::dump(features::to_json(recipe)));
  out << "prepare: " << table.size() << " contracts (train " << table.rows_in("train").size() << ", valid "
      << table.rows_in("valid").size() << ", test " << table.rows_in("test").size() << "), "
      << table.discarded_trips << " unlinked trips discarded\n";
  return 0;
}

inline int cmd_fit_glm(const RunConfig& rc, std::ostream& out) {
  if (rc.mode == features::CovariateMode::cann) throw DataError("fit-glm needs --mode trad, handcrafted or televector");
  const auto p = detail::load_prepared(rc);
  glm::GlmOptions opt;
  opt.max_iters = detail::value_or(rc.section("glm"), "max_iters", opt.max_iters);
  auto fit = glm::fit_log_linear(p.train.design(rc.mode), p.train.y, &p.train.panel, rc.head, opt);
  fit.names = p.train.design_names(rc.mode);
  detail::check_schema(rc.out);
  const std::string name = detail::glm_name(rc.head, rc.mode);
  ojson j;
  j["model"] = name;
  j["mode"] = features::to_string(rc.mode);
  j["fit"] = glm::to_json(fit);
  detail::write_text(rc.out / "glm" / (name + ".json"), detail::dump(j));
  out << "fit-glm: " << name << " loss " << io::format_fixed(fit.final_loss, 6)
      << (fit.phi ? ", phi " + io::format_fixed(*fit.phi, 4) : std::string()) << ", "
      << (fit.converged ? "converged" : "NOT converged") << " after " << fit.iterations << " iterations\n";
  return 0;
}

inline int cmd_tune(const RunConfig& rc, std::ostream& out) {
  const auto p = detail::load_prepared(rc);
  const json& g = rc.section("grid");
  GridSpec grid;
  grid.lr_start = detail::value_or(g, "lr_start", std::vector<double>{1e-3});
  grid.factor = detail::value_or(g, "factor", std::vector<double>{0.5});
  grid.dropout_p = detail::value_or(g, "dropout_p", std::vector<double>{0.0});
  TrainConfig base = detail::train_config(rc);
  base.max_epochs = detail::value_or(g, "epochs", 30);
  const auto init = detail::initializer(rc, p, base.initializer_family());
  const auto res = grid_search(p.train, p.valid, grid, base, &init, rc.workers);
  detail::check_schema(rc.out);
  std::ostringstream t;
  write_grid_table(t, res, rc.head);
  const std::string head(to_string(rc.head));
  detail::write_text(rc.out / "tune" / ("grid_" + head + ".csv"), t.str());
  const auto& b = res.rows[res.best];
  ojson j{{"head", head}, {"lr_start", b.lr_start}, {"factor", b.factor}, {"dropout_p", b.dropout_p},
          {"valid_loss", b.valid_loss}, {"epochs", b.epochs}};
  detail::write_text(rc.out / "tune" / ("best_" + head + ".json"), detail::dump(j));
  std::size_t failed = 0;
  for (const auto& r : res.rows) failed += r.failed;
  out << "tune: " << res.rows.size() << " cells (" << failed << " failed), best lr_start " << io::format_double(b.lr_start)
      << " factor " << io::format_double(b.factor) << " p " << io::format_double(b.dropout_p) << " valid loss "
      << io::format_fixed(b.valid_loss, 6) << " at epoch " << b.epochs << "\n";
  return 0;
}

inline int cmd_fit_cann(const RunConfig& rc, std::ostream& out) {
  const auto p = detail::load_prepared(rc);
  TrainConfig cfg = detail::train_config(rc);
  const fs::path tuned = rc.out / "tune" / ("best_" + std::string(to_string(rc.head)) + ".json");
  std::string source = "config";
  if (fs::exists(tuned)) {
    const auto b = json::parse(detail::read_text(tuned, "tune"));
    cfg.lr_start = b.at("lr_start").get<double>();
    cfg.factor = b.at("factor").get<double>();
    cfg.dropout_p = b.at("dropout_p").get<double>();
    source = "tuned";
  }
  const auto init = detail::initializer(rc, p, cfg.initializer_family());
  const std::string name = detail::cann_name(rc.head, rc.fixed_beta);
  std::ostringstream log;
  write_epoch_log_header(log);
  TrainHooks hooks;
  hooks.log = &log;
  TrainedCann model = train_cann(p.train, p.valid, cfg, &init, hooks);
  model.recipe = p.recipe;
  detail::check_schema(rc.out);
  ojson j = to_json(model);
  j["model"] = name;
  j["config"] = {{"lr_start", cfg.lr_start}, {"factor", cfg.factor},       {"dropout_p", cfg.dropout_p},
                 {"batch_size", cfg.batch_size}, {"max_epochs", cfg.max_epochs}, {"seed", cfg.seed},
                 {"hyperparameters", source},    {"initializer", std::string(to_string(cfg.initializer_family()))}};
  detail::write_text(rc.out / "cann" / (name + ".json"), detail::dump(j));
  detail::write_text(rc.out / "cann" / (name + "_epochs.csv"), log.str());
  out << "fit-cann: " << name << " best epoch " << model.best_epoch << " valid loss "
      << io::format_fixed(model.best_valid_loss(), 6) << " (" << source << " hyperparameters, beta "
      << (model.params.beta_trainable ? "trainable" : "fixed") << ")\n";
  return 0;
}

namespace detail {

inline std::vector<std::unique_ptr<eval::CountModel>> load_models(const RunConfig& rc) {
  std::vector<std::unique_ptr<eval::CountModel>> models;
  std::vector<fs::path> files;
  for (const char* dir : {"glm", "cann"}) {
    const fs::path d = rc.out / dir;
    if (!fs::exists(d)) continue;
    for (const auto& e : fs::directory_iterator(d))
      if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto j = ojson::parse(read_text(f, ""));
    const std::string name = j.at("model").get<std::string>();
    if (j.contains("fit")) {
      models.push_back(std::make_unique<eval::GlmModel>(glm::glm_fit_from_json(j.at("fit")),
                                                        features::parse_covariate_mode(j.at("mode").get<std::string>()), name));
    } else {
      models.push_back(std::make_unique<eval::CannModel>(trained_cann_from_json(j).params, name));
    }
  }
  return models;
}

}  // namespace detail

inline int cmd_evaluate(const RunConfig& rc, std::ostream& out) {
  const auto p = detail::load_prepared(rc);
  std::vector<Count> learning = p.train.y;
  learning.insert(learning.end(), p.valid.y.begin(), p.valid.y.end());
  const auto baseline = eval::BaselineModel::from_learning(learning);
  const auto base_score = eval::score(baseline, p.test);
  std::vector<eval::ScoreReport> reports{base_score};
  std::vector<std::pair<std::string, eval::BalanceRow>> balance;
  auto add_balance = [&](const eval::CountModel& m) {
    balance.emplace_back(m.name(), eval::balance(m, p.train, "train"));
    balance.emplace_back(m.name(), eval::balance(m, p.valid, "valid"));
    balance.emplace_back(m.name(), eval::balance(m, p.test, "test"));
  };
  add_balance(baseline);
  for (const auto& m : detail::load_models(rc)) {
    reports.push_back(eval::score(*m, p.test));
    add_balance(*m);
  }
  detail::check_schema(rc.out);
  std::ostringstream csv, bal;
  eval::write_scores_csv(csv, reports, base_score);
  eval::write_balance_csv(bal, balance);
  ojson j;
  j["split"] = "test";
  j["baseline_mean"] = baseline.mean();
  j["scores"] = ojson::array();
  for (const auto& r : reports) {
    auto e = eval::to_json(r);
    const auto imp = eval::improvement(r, base_score);
    e["improvement"] = {{"deviance", imp.deviance}, {"log_score", imp.log_score}, {"squared_error", imp.squared_error}};
    j["scores"].push_back(e);
  }
  std::string report = eval::format_score_table(reports, base_score) + "\nbalance (sum predicted, sum actual, ratio)\n";
  for (const auto& [model, row] : balance) report += model + " " + row.split + " " + eval::format_balance_row(row) + "\n";
  detail::write_text(rc.out / "eval" / "scores.csv", csv.str());
  detail::write_text(rc.out / "eval" / "balance.csv", bal.str());
  detail::write_text(rc.out / "eval" / "scores.json", detail::dump(j));
  detail::write_text(rc.out / "eval" / "report.txt", report);
  out << "evaluate: " << reports.size() << " models scored on " << p.test.rows() << " test contracts\n";
  return 0;
}

inline int cmd_explain(const RunConfig& rc, std::ostream& out) {
  const auto p = detail::load_prepared(rc);
  const std::string name = detail::cann_name(rc.head, rc.fixed_beta);
  const auto j = ojson::parse(detail::read_text(rc.out / "cann" / (name + ".json"), "fit-cann"));
  const eval::CannModel model(trained_cann_from_json(j).params, name);
  const json& e = rc.section("explain");
  const auto inputs = detail::value_or(e, "inputs", p.test.mlp_input_names());
  const auto reps = detail::value_or<std::size_t>(e, "repetitions", 100);
  const auto points = detail::value_or<std::size_t>(e, "pdp_points", 50);
  const auto fi = eval::permutation_importance(model, p.test, inputs, reps, rc.seed);

  std::vector<std::string> pdp_inputs = detail::value_or(e, "pdp_inputs", std::vector<std::string>{});
  if (pdp_inputs.empty()) {
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fi.median(a) > fi.median(b); });
    for (std::size_t k = 0; k < std::min<std::size_t>(5, order.size()); ++k) pdp_inputs.push_back(inputs[order[k]]);
  }
  const auto to_raw_for = [&](const std::string& input) {
    for (const auto* s : {&p.recipe.trad, &p.recipe.hand, &p.recipe.tele}) {
      auto it = std::find(s->names.begin(), s->names.end(), input);
      if (it != s->names.end()) {
        const auto k = static_cast<std::size_t>(it - s->names.begin());
        const double c = s->center[k], sc = s->scale[k];
        return std::function<double(double)>([c, sc](double v) { return v * sc + c; });
      }
    }
    throw DataError("unknown input '" + input + "'");
  };
  detail::check_schema(rc.out);
  const fs::path dir = rc.out / "explain";
  std::ostringstream fcsv;
  eval::write_importance_csv(fcsv, fi);
  detail::write_text(dir / ("fi_" + name + ".csv"), fcsv.str());
  detail::write_text(dir / ("fi_" + name + ".svg"), eval::svg::importance_plot(fi));
  ojson summary;
  summary["model"] = name;
  summary["original_loss"] = fi.original_loss;
  summary["median_fi"] = ojson::object();
  for (std::size_t k = 0; k < inputs.size(); ++k) summary["median_fi"][inputs[k]] = fi.median(k);
  summary["pdp_inputs"] = pdp_inputs;
  for (const auto& in : pdp_inputs) {
    const auto col = eval::column(p.test, in);
    const auto pdp = eval::partial_dependence(model, p.test, in, eval::default_grid(col, points));
    std::ostringstream pcsv;
    eval::write_pdp_csv(pcsv, pdp, to_raw_for(in));
    detail::write_text(dir / ("pdp_" + name + "_" + in + ".csv"), pcsv.str());
    detail::write_text(dir / ("pdp_" + name + "_" + in + ".svg"), eval::svg::pdp_plot(pdp));
  }
  detail::write_text(dir / "summary.json", detail::dump(summary));
  out << "explain: " << name << ", " << inputs.size() << " inputs x " << reps << " permutations, " << pdp_inputs.size()
      << " partial dependence curves\n";
  return 0;
}

/// Runs one CLI invocation. `args` excludes the program name. Returns the
/// process exit code; messages go to `out` and errors to `err`.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Combined actuarial neural network pipeline for telematics claim-frequency models"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir, head, mode;
  bool fixed_beta = false;
  std::optional<int> workers;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_option("--out", out_dir, "Output directory (overrides the config)");
  app.add_option("--head", head, "poisson | negbin | mvnb")->check(CLI::IsMember({"poisson", "negbin", "mvnb"}));
  app.add_option("--mode", mode, "trad | handcrafted | televector | cann")
      ->check(CLI::IsMember({"trad", "handcrafted", "televector", "cann"}));
  app.add_flag("--fixed-beta", fixed_beta, "Keep the log-linear coefficients at their GLM values");
  app.add_option("--workers", workers, "Parallel grid cells for tune")->check(CLI::PositiveNumber);
  const std::map<std::string, std::function<int(const RunConfig&, std::ostream&)>> commands{
      {"synth", cmd_synth},       {"prepare", cmd_prepare},   {"fit-glm", cmd_fit_glm}, {"tune", cmd_tune},
      {"fit-cann", cmd_fit_cann}, {"evaluate", cmd_evaluate}, {"explain", cmd_explain}};
  const std::map<std::string, std::string> help{
      {"synth", "Generate a synthetic portfolio (contracts, trips, truth)"},
      {"prepare", "Link trips, build features, split vehicles, fit the recipe"},
      {"fit-glm", "Fit a log-linear benchmark"},
      {"tune", "Grid search over lr_start x factor x dropout"},
      {"fit-cann", "Train a CANN head"},
      {"evaluate", "Score all fitted models and the baseline on the test split"},
      {"explain", "Permutation importance and partial dependence for a CANN"}};
  for (const auto& [name, fn] : commands) app.add_subcommand(name, help.at(name));

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    RunConfig rc;
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw DataError("cannot open config '" + config_path + "'");
      rc.raw = json::parse(f, nullptr, true, true);
    }
    if (!seed && !rc.raw.contains("seed")) throw DataError("a seed is required (--seed or \"seed\" in the config)");
    rc.seed = seed ? *seed : rc.raw.at("seed").get<std::uint64_t>();
    rc.out = !out_dir.empty() ? fs::path(out_dir) : fs::path(detail::value_or<std::string>(rc.raw, "out", "cann_out"));
    rc.head = parse_family(!head.empty() ? head : detail::value_or<std::string>(rc.raw, "head", "poisson"));
    rc.mode = features::parse_covariate_mode(!mode.empty() ? mode : detail::value_or<std::string>(rc.raw, "mode", "trad"));
    rc.fixed_beta = fixed_beta || detail::value_or(rc.raw, "fixed_beta", false);
    rc.workers = workers ? *workers : detail::value_or(rc.raw, "workers", 1);
    for (const auto* sub : app.get_subcommands()) return commands.at(sub->get_name())(rc, out);
  } catch (const json::exception& e) {
    err << "error: configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace cann::cli
