#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "commands.hpp"
#include "rectflow/checkpoint.hpp"
#include "rectflow/error.hpp"
#include "rectflow/flow.hpp"
#include "rectflow/objectives.hpp"
#include "rectflow/svg.hpp"

namespace rectflow::cli {

namespace {

const std::vector<KeySpec> kTrainSchema = {
    {"run.seed", "0"},
    {"run.out", ""},
    {"dataset.kind", std::nullopt},
    {"dataset.dim", "2"},
    {"dataset.components", "4"},
    {"dataset.radius", "3.0"},
    {"dataset.stddev", "0.35"},
    {"train.model", "flow"},
    {"train.steps", "2000"},
    {"train.batch_size", "256"},
    {"train.learning_rate", "0.01"},
    {"train.momentum", "0.9"},
    {"train.clip_norm", "1.0"},
    {"train.eval_batch", "2048"},
    {"flow.hidden", "128,128,128"},
    {"flow.time_features", "16"},
    {"flow.activation", "tanh"},
    {"reflow.rounds", "0"},
    {"reflow.pairs", "4096"},
    {"reflow.sampling_steps", "100"},
    {"reflow.steps", "2000"},
    {"classifier.hidden", "64,64"},
    {"classifier.time_features", "8"},
    {"classifier.steps", "1500"},
    {"classifier.batch_size", "256"},
    {"classifier.learning_rate", "0.05"},
    {"classifier.momentum", "0.9"},
    {"classifier.heldout", "2048"},
};

void write_losses(const std::filesystem::path& dir, const std::vector<std::pair<std::string, std::vector<double>>>& phases) {
  std::ostringstream csv;
  write_csv_preamble(csv, "loss-curve", {"phase", "step", "loss"});
  std::vector<PlotSeries> series;
  for (const auto& [phase, losses] : phases) {
    PlotSeries s{phase, {}, {}, false};
    for (std::size_t i = 0; i < losses.size(); ++i) {
      csv << csv_row({phase, std::to_string(i), format_double(losses[i])});
      s.x.push_back(static_cast<double>(i));
      s.y.push_back(losses[i]);
    }
    series.push_back(std::move(s));
  }
  write_file(dir / "losses.csv", csv.str());
  write_file(dir / "losses.svg", render_plot({"Training loss", "step", "loss", true, false}, series));
}

}  // namespace

int cmd_train(const CommonOptions& opts) {
  const RunConfig config = load_config(opts, kTrainSchema, "train");
  persist_config(config);
  const auto dir = output_dir(config);
  const DatasetSpec spec = dataset_from_config(config);
  const SyntheticDataset dataset(spec);
  const auto seed = static_cast<std::uint64_t>(config.get_int("run.seed"));
  const std::string model = config.get("train.model");
  nlohmann::json summary{{"model", model}, {"dataset", spec.to_json()}, {"seed", seed}};

  if (model == "flow") {
    FieldArchitecture arch;
    arch.state_dim = spec.dim;
    arch.hidden = widths(config, "flow.hidden");
    arch.time_features = config.get_int("flow.time_features");
    arch.activation = activation_from_string(config.get("flow.activation"));
    TrainingConfig tc;
    tc.steps = config.get_int("train.steps");
    tc.batch_size = config.get_int("train.batch_size");
    tc.learning_rate = config.get_double("train.learning_rate");
    tc.momentum = config.get_double("train.momentum");
    tc.clip_norm = config.get_double("train.clip_norm");
    tc.eval_batch = config.get_int("train.eval_batch");
    tc.seed = seed;
    const long rounds = config.get_int("reflow.rounds");
    if (rounds < 0 || rounds > 1) throw ConfigError("reflow.rounds must be 0 or 1");

    TrainingResult base = train_flow(dataset, arch, tc);
    std::vector<std::pair<std::string, std::vector<double>>> phases{{"flow", base.loss_series}};
    summary["initial_loss"] = base.initial_loss;
    summary["final_loss"] = base.final_loss;
    const VelocityField* final_field = &base.field;
    std::optional<TrainingResult> second;
    if (rounds == 1) {
      Checkpoint first = make_checkpoint(base.field, spec, seed);
      save_checkpoint(dir / "model_base.ckpt", first);
      summary["base_checksum"] = first.checksum;
      ReflowConfig rc;
      rc.training = tc;
      rc.training.steps = config.get_int("reflow.steps");
      rc.pairs = config.get_int("reflow.pairs");
      rc.sampling_steps = static_cast<int>(config.get_int("reflow.sampling_steps"));
      second = reflow(base.field, rc);
      phases.emplace_back("reflow", second->loss_series);
      summary["reflow_initial_loss"] = second->initial_loss;
      summary["reflow_final_loss"] = second->final_loss;
      final_field = &second->field;
    }
    Checkpoint ckpt = make_checkpoint(*final_field, spec, seed);
    save_checkpoint(dir / "model.ckpt", ckpt);
    summary["checksum"] = ckpt.checksum;
    write_losses(dir, phases);
  } else if (model == "clean-classifier" || model == "noise-aware-classifier") {
    ClassifierTrainingConfig cc;
    cc.hidden = widths(config, "classifier.hidden");
    cc.time_features = config.get_int("classifier.time_features");
    cc.steps = config.get_int("classifier.steps");
    cc.batch_size = config.get_int("classifier.batch_size");
    cc.learning_rate = config.get_double("classifier.learning_rate");
    cc.momentum = config.get_double("classifier.momentum");
    cc.heldout = config.get_int("classifier.heldout");
    cc.seed = seed;
    const bool noisy = model == "noise-aware-classifier";
    ClassifierTrainingResult r = noisy ? train_noise_aware_classifier(dataset, cc) : train_clean_classifier(dataset, cc);
    Checkpoint ckpt = make_checkpoint(*r.classifier, spec, seed);
    save_checkpoint(dir / "model.ckpt", ckpt);
    summary["checksum"] = ckpt.checksum;
    summary["heldout_accuracy"] = r.heldout_accuracy;
    if (noisy) {
      std::ostringstream csv;
      write_csv_preamble(csv, "accuracy-curve", {"t", "accuracy"});
      for (auto [t, acc] : r.accuracy_curve) csv << csv_row({format_double(t), format_double(acc)});
      write_file(dir / "accuracy.csv", csv.str());
    }
    write_losses(dir, {{model, r.loss_series}});
  } else {
    throw ConfigError(fmt::format(
        "train.model must be flow, clean-classifier or noise-aware-classifier, got '{}'", model));
  }
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << fmt::format("trained {} -> {} (checksum {:08x})\n", model, (dir / "model.ckpt").string(),
                           summary["checksum"].get<std::uint32_t>());
  return kOk;
}

}  // namespace rectflow::cli
