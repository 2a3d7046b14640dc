#pragma once

// Mini-batch training of the CANN heads (Poisson, NB, MVNB), early stopping
// on the validation loss, fixed-beta mode and hyperparameter grid search.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "cann/error.hpp"
#include "cann/features/preprocessing.hpp"
#include "cann/glm.hpp"
#include "cann/io/csv.hpp"
#include "cann/model.hpp"
#include "cann/nn/mlp.hpp"
#include "cann/nn/optim.hpp"
#include "cann/random.hpp"

namespace cann {

struct TrainConfig {
  Family head = Family::poisson;
  double lr_start = 1e-3;
  double factor = 0.5;
  double dropout_p = 0.0;
  int batch_size = 256;
  int max_epochs = 30;
  bool early_stopping = true;
  std::uint64_t seed = 0;
  std::vector<int> layer_widths{128, 64, 32};
  double batchnorm_momentum = 0.1;
  double batchnorm_eps = 1e-5;
  int patience = 2;
  bool fixed_beta = false;
  // Family of the GLM used to initialize beta; defaults to the head, or to
  // mvnb in fixed-beta mode.
  std::optional<Family> init_family;

  Family initializer_family() const {
    if (init_family) return *init_family;
    return fixed_beta ? Family::mvnb : head;
  }

  void validate() const {
    if (!(lr_start >= 0.0) || !std::isfinite(lr_start)) throw DataError("lr_start must be finite and >= 0");
    if (!(factor > 0.0 && factor < 1.0)) throw DataError("factor must be in (0, 1)");
    if (batch_size < 2) throw DataError("batch_size must be >= 2");
    if (max_epochs < 0) throw DataError("max_epochs must be >= 0");
  }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

struct TrainedCann {
  CannParameters params;
  int best_epoch = 0;
  std::vector<EpochRecord> trace;
  Family head = Family::poisson;
  // Validation history states the best epoch was scored with (mvnb only).
  std::vector<HistoryState> best_valid_history;
  std::optional<features::PreprocessingRecipe> recipe;

  double best_valid_loss() const { return trace.at(static_cast<std::size_t>(best_epoch)).valid_loss; }
};

/// Called at the start of every training epoch with the parameters that the
/// epoch's history snapshot was computed from and the training-split past-mu
/// sums the loop will use (empty unless the head is mvnb).
using EpochObserver = std::function<void(int epoch, const CannParameters&, std::span<const double> train_past_mu)>;

struct TrainHooks {
  EpochObserver on_epoch_start;
  std::ostream* log = nullptr;  // per-epoch delimited log
};

inline void write_epoch_log_header(std::ostream& out) { out << "epoch,lr,train_loss,valid_loss\n"; }

inline void write_epoch_log_row(std::ostream& out, const EpochRecord& r) {
  io::RowWriter w(out);
  w.field(r.epoch).field(r.lr).field(r.train_loss).field(r.valid_loss);
  w.end();
}

/// Parameters at initialization: beta (and phi) from the GLM, zero network output.
inline CannParameters initial_parameters(const features::LearningSet& train, const TrainConfig& cfg,
                                         const glm::GlmFit& init) {
  CannParameters p;
  p.head = cfg.head;
  p.beta = init.beta;
  p.beta_trainable = !cfg.fixed_beta;
  nn::MlpConfig mc;
  mc.layer_widths = cfg.layer_widths;
  mc.dropout_p = cfg.dropout_p;
  mc.batchnorm_momentum = cfg.batchnorm_momentum;
  mc.batchnorm_eps = cfg.batchnorm_eps;
  mc.seed = derive_seed(cfg.seed, {0x6e6574});
  p.theta = nn::init_mlp(static_cast<int>(train.trad.cols() + train.tele.cols()), mc);
  if (has_dispersion(cfg.head)) p.w_phi = special::softplus_inverse(init.phi ? *init.phi : 1.0);
  p.validate(train.trad.cols(), train.trad.cols() + train.tele.cols());
  return p;
}

inline glm::GlmFit fit_initializer(const features::LearningSet& train, Family family) {
  auto fit = glm::fit_log_linear(train.design(features::CovariateMode::trad), train.y, &train.panel, family);
  fit.names = train.design_names(features::CovariateMode::trad);
  return fit;
}

namespace detail {

struct SplitData {
  MatrixXd design;
  MatrixXd input;
  const features::LearningSet* set = nullptr;
  std::vector<Count> past_claims;

  explicit SplitData(const features::LearningSet& s)
      : design(s.design(features::CovariateMode::trad)), input(s.mlp_input()), set(&s),
        past_claims(cann::past_claims(s.panel, s.y)) {}

  /// Past-mu sums under the current parameters (eval mode).
  std::vector<double> past_mu_snapshot(const CannParameters& p) const {
    const VectorXd mu = cann_predict_mu(p, design, input);
    return cann::past_mu(set->panel, std::span<const double>(mu.data(), set->rows()));
  }

  std::vector<HistoryState> history(const std::vector<double>& pm) const {
    std::vector<HistoryState> h(set->rows());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = {past_claims[i], pm[i]};
    return h;
  }

  double loss(const CannParameters& p, const std::vector<HistoryState>& hist) const {
    const VectorXd mu = cann_predict_mu(p, design, input);
    return average_head_loss(p.head, p.phi(), set->y, mu, hist);
  }
};

inline MatrixXd gather_rows(const MatrixXd& m, std::span<const std::size_t> rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

/// Batch boundaries over n rows; a trailing batch of one row joins the previous batch.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t b) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < n; s += b) out.emplace_back(s, std::min(n, s + b));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

/// Flat optimizer vector layout: [beta if trainable][network][w_phi if present].
inline std::vector<double> pack(const CannParameters& p) {
  std::vector<double> v;
  if (p.beta_trainable) v.assign(p.beta.data(), p.beta.data() + p.beta.size());
  const auto net = nn::flatten(p.theta);
  v.insert(v.end(), net.begin(), net.end());
  if (p.w_phi) v.push_back(*p.w_phi);
  return v;
}

inline void unpack(CannParameters& p, const std::vector<double>& v) {
  std::size_t k = 0;
  if (p.beta_trainable) {
    for (Eigen::Index j = 0; j < p.beta.size(); ++j) p.beta(j) = v[k++];
  }
  k += nn::unflatten(p.theta, v.data() + k);
  if (p.w_phi) p.w_phi = v[k++];
}

struct BatchResult {
  double loss = 0.0;
  std::vector<double> grad;  // pack() layout
};

/// Mean head loss of one batch in train mode and its gradient. `rng` drives
/// the dropout masks; running batch-norm statistics in `p` are updated.
inline BatchResult batch_loss_grad(CannParameters& p, const MatrixXd& design, const MatrixXd& input,
                                   std::span<const Count> y, std::span<const HistoryState> hist, Rng& rng) {
  nn::MlpCache cache;
  const VectorXd out = nn::mlp_forward(p.theta, input, nn::Mode::train, rng, &cache);
  const VectorXd eta = linear_predictor(design, p.beta) + out;
  const auto n = static_cast<double>(y.size());
  const double phi = p.phi();
  const HistoryState none{};
  VectorXd deta(eta.size());
  double dphi = 0.0;
  BatchResult r;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double mu = special::softplus(eta(i));
    const auto lg = family_loss_grad(p.head, y[k], mu, phi, p.head == Family::mvnb ? hist[k] : none);
    r.loss += lg.loss / n;
    deta(i) = lg.dloss_dmu * special::softplus_grad(eta(i)) / n;
    dphi += lg.dloss_dphi / n;
  }
  const auto g = nn::mlp_backward(p.theta, cache, deta);
  if (p.beta_trainable) {
    const VectorXd gb = design.transpose() * deta;
    r.grad.assign(gb.data(), gb.data() + gb.size());
  }
  const auto gn = nn::flatten(g.params);
  r.grad.insert(r.grad.end(), gn.begin(), gn.end());
  if (p.w_phi) r.grad.push_back(dphi * special::softplus_grad(*p.w_phi));
  return r;
}

}  // namespace detail

/// Trains a CANN head. `init` supplies the GLM initialization; when null it
/// is fitted on `train` with cfg.initializer_family().
inline TrainedCann train_cann(const features::LearningSet& train, const features::LearningSet& valid,
                              const TrainConfig& cfg, const glm::GlmFit* init = nullptr, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train.rows() < 2) throw DataError("training split needs at least 2 contracts");
  if (cfg.early_stopping && valid.rows() == 0) throw DataError("early stopping needs a nonempty validation split");
  if (valid.rows() > 0 && (valid.trad.cols() != train.trad.cols() || valid.tele.cols() != train.tele.cols())) {
    throw ShapeError("train and validation splits have different widths");
  }
  std::optional<glm::GlmFit> own_init;
  if (!init) {
    own_init = fit_initializer(train, cfg.initializer_family());
    init = &*own_init;
  }

  CannParameters p = initial_parameters(train, cfg, *init);
  const detail::SplitData tr(train);
  std::optional<detail::SplitData> va;
  if (valid.rows() > 0) va.emplace(valid);
  const bool mvnb = cfg.head == Family::mvnb;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto hist_of = [&](const detail::SplitData& d) {
    return mvnb ? d.history(d.past_mu_snapshot(p)) : std::vector<HistoryState>{};
  };

  TrainedCann out;
  out.head = cfg.head;
  nn::AdamState adam(detail::pack(p).size());
  nn::PlateauScheduler sched(cfg.lr_start, cfg.factor, cfg.patience);

  // Epoch 0: the GLM-initialized model.
  std::vector<HistoryState> valid_hist = va ? hist_of(*va) : std::vector<HistoryState>{};
  {
    EpochRecord r{0, sched.current_lr, tr.loss(p, hist_of(tr)), va ? va->loss(p, valid_hist) : nan};
    out.trace.push_back(r);
    if (hooks.log) write_epoch_log_row(*hooks.log, r);
  }
  CannParameters best = p;
  out.best_valid_history = valid_hist;
  double best_loss = out.trace[0].valid_loss;

  std::vector<std::size_t> order(train.rows());
  const auto bounds = detail::batch_bounds(order.size(), static_cast<std::size_t>(cfg.batch_size));
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<double> train_pm;
    std::vector<HistoryState> train_hist;
    if (mvnb) {
      train_pm = tr.past_mu_snapshot(p);
      train_hist = tr.history(train_pm);
      if (va) valid_hist = hist_of(*va);
    }
    if (hooks.on_epoch_start) hooks.on_epoch_start(epoch, p, train_pm);

    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(epoch), 0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(shuffle_rng)]);
    }
    Rng dropout_rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(epoch), 1});

    const double lr = sched.current_lr;
    double train_loss = 0.0;
    std::vector<Count> yb;
    std::vector<HistoryState> hb;
    for (std::size_t b = 0; b < bounds.size(); ++b) {
      const std::span<const std::size_t> rows(order.data() + bounds[b].first, bounds[b].second - bounds[b].first);
      yb.clear();
      hb.clear();
      for (std::size_t r : rows) {
        yb.push_back(train.y[r]);
        if (mvnb) hb.push_back(train_hist[r]);
      }
      auto res = detail::batch_loss_grad(p, detail::gather_rows(tr.design, rows), detail::gather_rows(tr.input, rows),
                                         yb, hb, dropout_rng);
      if (!std::isfinite(res.loss)) {
        throw NumericalError("non-finite training loss in epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b));
      }
      train_loss += res.loss * static_cast<double>(rows.size());
      auto flat = detail::pack(p);
      nn::adam_step(adam, flat, res.grad, lr);
      detail::unpack(p, flat);
    }
    train_loss /= static_cast<double>(order.size());

    const double vloss = va ? va->loss(p, valid_hist) : nan;
    if (va && !std::isfinite(vloss)) throw NumericalError("non-finite validation loss in epoch " + std::to_string(epoch));
    EpochRecord r{epoch, lr, train_loss, vloss};
    out.trace.push_back(r);
    if (hooks.log) write_epoch_log_row(*hooks.log, r);
    if (va) {
      sched.step(vloss);
      if (vloss < best_loss) {
        best_loss = vloss;
        best = p;
        out.best_epoch = epoch;
        out.best_valid_history = valid_hist;
      }
    }
  }
  if (cfg.early_stopping) {
    out.params = std::move(best);
  } else {
    out.params = std::move(p);
    out.best_epoch = static_cast<int>(out.trace.size()) - 1;
    if (va) out.best_valid_history = valid_hist;
  }
  return out;
}

struct GridSpec {
  std::vector<double> lr_start;
  std::vector<double> factor;
  std::vector<double> dropout_p;
};

struct GridRow {
  double lr_start = 0.0;
  double factor = 0.0;
  double dropout_p = 0.0;
  double valid_loss = std::numeric_limits<double>::quiet_NaN();
  int epochs = 0;  // epoch attaining the minimum validation loss
  bool failed = false;
  std::string error;
};

struct GridResult {
  std::vector<GridRow> rows;  // grid order: lr_start, then factor, then dropout_p
  std::size_t best = 0;
  TrainConfig best_config;
};

namespace detail {

inline std::uint64_t double_bits(double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, sizeof u);
  return u;
}

/// Seed of one grid cell; depends only on the master seed and the cell's values.
inline std::uint64_t cell_seed(std::uint64_t master, double lr, double factor, double p) {
  return derive_seed(master, {0x67726964, double_bits(lr), double_bits(factor), double_bits(p)});
}

/// Strict weak order: lower loss, then fewer epochs, then (lr, factor, p).
inline bool better_row(const GridRow& a, const GridRow& b) {
  if (a.failed != b.failed) return !a.failed;
  if (a.valid_loss != b.valid_loss) return a.valid_loss < b.valid_loss;
  if (a.epochs != b.epochs) return a.epochs < b.epochs;
  if (a.lr_start != b.lr_start) return a.lr_start < b.lr_start;
  if (a.factor != b.factor) return a.factor < b.factor;
  return a.dropout_p < b.dropout_p;
}

}  // namespace detail

/// Trains one early-stopped model per grid cell. Cells are independent and
/// run on up to `workers` threads; results do not depend on `workers`.
inline GridResult grid_search(const features::LearningSet& train, const features::LearningSet& valid,
                              const GridSpec& grid, const TrainConfig& base, const glm::GlmFit* init = nullptr,
                              int workers = 1) {
  if (grid.lr_start.empty() || grid.factor.empty() || grid.dropout_p.empty()) throw DataError("grid_search: empty grid");
  std::optional<glm::GlmFit> own_init;
  if (!init) {
    own_init = fit_initializer(train, base.initializer_family());
    init = &*own_init;
  }
  GridResult res;
  for (double lr : grid.lr_start)
    for (double f : grid.factor)
      for (double d : grid.dropout_p) res.rows.push_back({lr, f, d, std::numeric_limits<double>::quiet_NaN(), 0, false, {}});

  auto config_of = [&](const GridRow& row) {
    TrainConfig c = base;
    c.lr_start = row.lr_start;
    c.factor = row.factor;
    c.dropout_p = row.dropout_p;
    c.early_stopping = true;
    c.seed = detail::cell_seed(base.seed, row.lr_start, row.factor, row.dropout_p);
    return c;
  };
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < res.rows.size(); i = next++) {
      GridRow& row = res.rows[i];
      try {
        const auto fit = train_cann(train, valid, config_of(row), init);
        row.valid_loss = fit.best_valid_loss();
        row.epochs = fit.best_epoch;
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(res.rows.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  for (std::size_t i = 1; i < res.rows.size(); ++i)
    if (detail::better_row(res.rows[i], res.rows[res.best])) res.best = i;
  res.best_config = config_of(res.rows[res.best]);
  return res;
}

/// Tuning table: one row per cell in grid order, with its rank (1 = best).
inline void write_grid_table(std::ostream& out, const GridResult& g, Family head) {
  std::vector<std::size_t> order(g.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detail::better_row(g.rows[a], g.rows[b]); });
  std::vector<std::size_t> rank(g.rows.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  out << "lr_start,factor,p," << to_string(head) << "_valid_loss,epochs,rank,status\n";
  io::RowWriter w(out);
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto& r = g.rows[i];
    w.field(r.lr_start).field(r.factor).field(r.dropout_p);
    if (r.failed) w.field(std::string_view{}).field(std::string_view{});
    else w.field(r.valid_loss).field(r.epochs);
    w.field(rank[i]).field(r.failed ? std::string_view("failed") : std::string_view("ok"));
    w.end();
  }
}

inline nlohmann::ordered_json to_json(const TrainedCann& t) {
  nlohmann::ordered_json j;
  j["head"] = std::string(to_string(t.head));
  j["best_epoch"] = t.best_epoch;
  nlohmann::ordered_json trace = nlohmann::ordered_json::array();
  for (const auto& r : t.trace) {
    trace.push_back({{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss},
                     {"valid_loss", std::isfinite(r.valid_loss) ? nlohmann::ordered_json(r.valid_loss) : nlohmann::ordered_json(nullptr)}});
  }
  j["trace"] = trace;
  j["parameters"] = to_json(t.params);
  if (t.recipe) j["recipe"] = features::to_json(*t.recipe);
  return j;
}

inline TrainedCann trained_cann_from_json(const nlohmann::ordered_json& j) {
  TrainedCann t;
  t.head = parse_family(j.at("head").get<std::string>());
  t.best_epoch = j.at("best_epoch").get<int>();
  for (const auto& r : j.at("trace")) {
    t.trace.push_back({r.at("epoch").get<int>(), r.at("lr").get<double>(), r.at("train_loss").get<double>(),
                       r.at("valid_loss").is_null() ? std::numeric_limits<double>::quiet_NaN() : r.at("valid_loss").get<double>()});
  }
  t.params = cann_parameters_from_json(j.at("parameters"));
  if (j.contains("recipe")) t.recipe = features::recipe_from_json(j.at("recipe"));
  return t;
}

}  // namespace cann
