#pragma once

#include <vector>

#include "json.hpp"
#include "otalign/core.hpp"
#include "otalign/errors.hpp"
#include "otalign/losses.hpp"
#include "otalign/synth.hpp"

namespace otalign {

struct TrainConfig {
  int steps = 200;
  double lr = 0.1;
  LossConfig loss;
  double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
  int refresh_plan_every = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Seeded shuffle split; sizes are llround(frac * n) for train and val,
// remainder test.
SplitIndices make_split(int n, double train_frac, double val_frac,
                        double test_frac, std::uint64_t seed);

struct ProbeResult {
  Matrix weights;  // (dim+1) x num_classes, bias row last
  double train_acc = 0.0, test_acc = 0.0;
};

// Multinomial logistic regression, full-batch gradient descent: 500
// iterations at lr 0.1 from zero weights, no regularization.
ProbeResult fit_probe_on(const EmbeddingMatrix& features,
                         const std::vector<int>& labels,
                         const SplitIndices& split);

ProbeResult fit_probe(const EmbeddingMatrix& features,
                      const std::vector<int>& labels, double train_frac,
                      double val_frac, double test_frac, std::uint64_t seed);

// Mean cross-entropy of the probe on the given rows (frozen weights).
double probe_loss(const EmbeddingMatrix& features,
                  const std::vector<int>& labels,
                  const std::vector<int>& rows, const Matrix& weights);

struct TrainTrace {
  std::vector<double> l_total, l_mha, l_lhm, l_nc;  // one entry per step
  std::vector<int> probe_steps;          // steps at which the probe was refit
  std::vector<double> probe_train_acc;   // parallel to probe_steps
  std::vector<double> probe_test_acc;
  EmbeddingMatrix final_h_struct, final_h_text;
  Matrix initial_lhm_plan, final_lhm_plan;  // cropped N x N

  nlohmann::json to_json() const;  // scalars and curves, not the matrices
};

// Gradient descent on free h_struct/h_text under
// l = l_nc + lambda * (l_mha + l_lhm), with transport plans refrozen every
// refresh_plan_every steps and the probe refit every 25 steps.
TrainTrace align(const SyntheticTag& tag, const TrainConfig& cfg);

// Fraction of planted deleted edges (i, j) whose plan mass q_ij strictly
// exceeds the median off-diagonal mass of row i.
double latent_recovery_score(const SyntheticTag& tag, const Matrix& plan);

}  // namespace otalign
