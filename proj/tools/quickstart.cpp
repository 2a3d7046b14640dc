// Library walk-through: simulate a small telematics portfolio, fit the GLM
// benchmark and a Poisson CANN on top of it, and score both on the test split.

#include <iostream>

#include "cann/evaluation.hpp"
#include "cann/features/feature_table.hpp"
#include "cann/features/preprocessing.hpp"
#include "cann/synthetic.hpp"
#include "cann/training.hpp"

int main() {
  using namespace cann;
  using features::CovariateMode;

  synth::GeneratorConfig g;
  g.n_vehicles = 20000;
  g.intercept = -3.0;
  g.effect = {1.5, 0.1};  // claims rise with the share of trips above 150 km/h
  g.seed = 1;
  const auto portfolio = synth::generate(g);

  auto table = features::build_feature_table(portfolio.contracts, portfolio.trips);
  features::assign_splits(table, {0.6, 0.2, 0.2}, 7);
  const auto train_rows = table.subset(table.rows_in("train"));
  const auto recipe = features::fit_recipe(train_rows);
  const auto train = features::apply_recipe(recipe, train_rows);
  const auto valid = features::apply_recipe(recipe, table.subset(table.rows_in("valid")));
  const auto test = features::apply_recipe(recipe, table.subset(table.rows_in("test")));

  const eval::GlmModel glm(
      glm::fit_log_linear(train.design(CovariateMode::handcrafted), train.y, nullptr, Family::poisson),
      CovariateMode::handcrafted, "glm_poisson_handcrafted");

  TrainConfig cfg;
  cfg.layer_widths = {32, 16, 8};
  cfg.dropout_p = 0.1;
  cfg.max_epochs = 20;
  cfg.seed = 404;
  const auto fit = train_cann(train, valid, cfg);
  std::cout << "cann: best epoch " << fit.best_epoch << ", validation loss " << fit.best_valid_loss() << "\n\n";
  const eval::CannModel cann_model(fit.params, "cann_poisson");

  std::vector<Count> learning = train.y;
  learning.insert(learning.end(), valid.y.begin(), valid.y.end());
  const auto baseline = eval::score(eval::BaselineModel::from_learning(learning), test);
  std::cout << eval::format_score_table({baseline, eval::score(glm, test), eval::score(cann_model, test)}, baseline);

  const auto fi = eval::permutation_importance(cann_model, test, {"vma_16", "h_12", "years_licensed"}, 20, 3);
  std::cout << "\nmedian permutation importance\n";
  for (std::size_t k = 0; k < fi.inputs.size(); ++k) std::cout << "  " << fi.inputs[k] << "  " << fi.median(k) << "\n";
}
