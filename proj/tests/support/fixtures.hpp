#pragma once

// Trained models shared by the slow tests. Each is trained once per build
// tree and cached as a checkpoint plus a small metadata record.

#include <memory>
#include <utility>
#include <vector>

#include "rectflow/flow.hpp"
#include "rectflow/objectives.hpp"

namespace rectflow::testing {

struct FlowFixture {
  std::shared_ptr<const VelocityField> field;
  std::vector<double> losses;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct ClassifierFixture {
  std::shared_ptr<const Classifier> classifier;
  double heldout_accuracy = 0.0;
  std::vector<std::pair<double, double>> accuracy_curve;
};

/// 2-D checkerboard, seed 7.
DatasetSpec checkerboard_spec();
/// Four labeled clusters in 2-D, seed 3.
DatasetSpec clusters_spec();

const FlowFixture& checkerboard_flow();
/// One reflow round on checkerboard_flow().
const FlowFixture& checkerboard_reflow();
const FlowFixture& clusters_flow();
const ClassifierFixture& clusters_clean_classifier();
const ClassifierFixture& clusters_noise_classifier();

}  // namespace rectflow::testing
