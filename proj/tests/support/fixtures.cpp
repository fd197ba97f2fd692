#include "fixtures.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>

#include <json.hpp>

#include "rectflow/checkpoint.hpp"

namespace rectflow::testing {

namespace fs = std::filesystem;

namespace {

fs::path cache_dir() {
  fs::path dir(RECTFLOW_TEST_CACHE);
  fs::create_directories(dir);
  return dir;
}

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
  }
  fs::rename(tmp, path);
}

std::optional<nlohmann::json> read_meta(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

FlowFixture cached_flow(const std::string& name, const DatasetSpec& spec, std::uint64_t seed,
                        const std::function<TrainingResult()>& train) {
  const fs::path ckpt = cache_dir() / (name + ".ckpt");
  const fs::path meta = cache_dir() / (name + ".json");
  if (fs::exists(ckpt)) {
    if (auto m = read_meta(meta)) {
      try {
        FlowFixture f;
        f.field = std::make_shared<const VelocityField>(field_from_checkpoint(load_checkpoint(ckpt)));
        f.losses = (*m)["losses"].get<std::vector<double>>();
        f.initial_loss = (*m)["initial_loss"].get<double>();
        f.final_loss = (*m)["final_loss"].get<double>();
        return f;
      } catch (const std::exception&) {
      }
    }
  }
  TrainingResult r = train();
  Checkpoint c = make_checkpoint(r.field, spec, seed);
  const fs::path tmp = ckpt.string() + ".tmp";
  save_checkpoint(tmp, c);
  fs::rename(tmp, ckpt);
  write_atomically(meta, nlohmann::json{{"losses", r.loss_series},
                                        {"initial_loss", r.initial_loss},
                                        {"final_loss", r.final_loss}}
                             .dump());
  FlowFixture f;
  f.losses = r.loss_series;
  f.initial_loss = r.initial_loss;
  f.final_loss = r.final_loss;
  f.field = std::make_shared<const VelocityField>(std::move(r.field));
  return f;
}

ClassifierFixture cached_classifier(const std::string& name, bool noise_aware) {
  const fs::path ckpt = cache_dir() / (name + ".ckpt");
  const fs::path meta = cache_dir() / (name + ".json");
  const DatasetSpec spec = clusters_spec();
  if (fs::exists(ckpt)) {
    if (auto m = read_meta(meta)) {
      try {
        ClassifierFixture f;
        f.classifier = classifier_from_checkpoint(load_checkpoint(ckpt));
        f.heldout_accuracy = (*m)["heldout_accuracy"].get<double>();
        f.accuracy_curve = (*m)["accuracy_curve"].get<std::vector<std::pair<double, double>>>();
        return f;
      } catch (const std::exception&) {
      }
    }
  }
  ClassifierTrainingConfig cfg;
  cfg.seed = spec.seed;
  const SyntheticDataset data(spec);
  ClassifierTrainingResult r = noise_aware ? train_noise_aware_classifier(data, cfg) : train_clean_classifier(data, cfg);
  Checkpoint c = make_checkpoint(*r.classifier, spec, spec.seed);
  const fs::path tmp = ckpt.string() + ".tmp";
  save_checkpoint(tmp, c);
  fs::rename(tmp, ckpt);
  write_atomically(meta, nlohmann::json{{"heldout_accuracy", r.heldout_accuracy},
                                        {"accuracy_curve", r.accuracy_curve}}
                             .dump());
  return {r.classifier, r.heldout_accuracy, r.accuracy_curve};
}

TrainingConfig flow_training(std::uint64_t seed) {
  TrainingConfig cfg;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

DatasetSpec checkerboard_spec() {
  DatasetSpec spec;
  spec.kind = DatasetKind::Checkerboard;
  spec.dim = 2;
  spec.seed = 7;
  return spec;
}

DatasetSpec clusters_spec() {
  DatasetSpec spec;
  spec.kind = DatasetKind::LabeledClusters;
  spec.dim = 2;
  spec.components = 4;
  spec.seed = 3;
  return spec;
}

const FlowFixture& checkerboard_flow() {
  static const FlowFixture f = cached_flow("checkerboard_flow", checkerboard_spec(), 7, [] {
    return train_flow(SyntheticDataset(checkerboard_spec()), FieldArchitecture{}, flow_training(7));
  });
  return f;
}

const FlowFixture& checkerboard_reflow() {
  static const FlowFixture f = cached_flow("checkerboard_reflow", checkerboard_spec(), 7, [] {
    ReflowConfig cfg;
    cfg.training = flow_training(7);
    return reflow(*checkerboard_flow().field, cfg);
  });
  return f;
}

const FlowFixture& clusters_flow() {
  static const FlowFixture f = cached_flow("clusters_flow", clusters_spec(), 3, [] {
    return train_flow(SyntheticDataset(clusters_spec()), FieldArchitecture{}, flow_training(3));
  });
  return f;
}

const ClassifierFixture& clusters_clean_classifier() {
  static const ClassifierFixture f = cached_classifier("clusters_clean_classifier", false);
  return f;
}

const ClassifierFixture& clusters_noise_classifier() {
  static const ClassifierFixture f = cached_classifier("clusters_noise_classifier", true);
  return f;
}

}  // namespace rectflow::testing
