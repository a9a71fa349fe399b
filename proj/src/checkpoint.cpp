#include "wcell/checkpoint.hpp"

#include <set>

namespace wcell {

namespace {

constexpr const char* kAdamStep = "adam.step";
const std::string kAdamFirst = "adam.m.";
const std::string kAdamSecond = "adam.v.";

}  // namespace

RecordFile make_checkpoint(const WCellNet<float>& net, const AdamState<float>* adam) {
  const ModelConfig& cfg = net.config();
  RecordFile file;
  file.version = kCheckpointVersion;
  if (adam != nullptr) file.flags |= checkpoint_flags::kOptimizerState;
  if (cfg.upsample == UpsampleMode::kNearest) file.flags |= checkpoint_flags::kNearestUpsample;
  if (cfg.head_kernel == 1) file.flags |= checkpoint_flags::kPointwiseHead;
  file.config[0] = static_cast<std::uint32_t>(cfg.k);
  file.config[1] = static_cast<std::uint32_t>(cfg.frames);
  file.config[2] = static_cast<std::uint32_t>(cfg.blocks);
  file.config[3] = static_cast<std::uint32_t>(cfg.input_h);
  file.config[4] = static_cast<std::uint32_t>(cfg.input_w);

  net.params().for_each([&](const Parameter<float>& p) { file.records.push_back({p.name, p.value}); });
  if (adam != nullptr) {
    file.records.push_back({kAdamStep, TensorF({1}, static_cast<float>(adam->step))});
    net.params().for_each([&](const Parameter<float>& p) {
      if (!p.trainable) return;
      auto m = adam->first.find(p.name);
      auto v = adam->second.find(p.name);
      file.records.push_back({kAdamFirst + p.name, m != adam->first.end() ? m->second : TensorF(p.value.shape())});
      file.records.push_back({kAdamSecond + p.name, v != adam->second.end() ? v->second : TensorF(p.value.shape())});
    });
  }
  return file;
}

WCellNet<float> restore_checkpoint(const RecordFile& file, AdamState<float>* adam) {
  ModelConfig cfg;
  cfg.k = file.config[0];
  cfg.frames = file.config[1];
  cfg.blocks = file.config[2];
  cfg.input_h = file.config[3];
  cfg.input_w = file.config[4];
  cfg.upsample = (file.flags & checkpoint_flags::kNearestUpsample) ? UpsampleMode::kNearest : UpsampleMode::kTransposed;
  cfg.head_kernel = (file.flags & checkpoint_flags::kPointwiseHead) ? 1 : 3;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }

  WCellNet<float> net(cfg, 0);
  const bool has_adam = (file.flags & checkpoint_flags::kOptimizerState) != 0;
  AdamState<float> state;
  std::set<std::string> seen;
  for (const auto& rec : file.records) {
    if (!seen.insert(rec.name).second) throw FormatError("duplicate record " + rec.name);
    if (net.params().contains(rec.name)) {
      Parameter<float>& p = net.params().at(rec.name);
      if (p.value.shape() != rec.tensor.shape()) {
        throw FormatError("record " + rec.name + " has shape " + to_string(rec.tensor.shape()) + ", expected " +
                          to_string(p.value.shape()));
      }
      p.value = rec.tensor;
      continue;
    }
    if (has_adam && rec.name == kAdamStep) {
      state.step = static_cast<std::int64_t>(rec.tensor.item());
      continue;
    }
    const bool first = rec.name.starts_with(kAdamFirst);
    const bool second = rec.name.starts_with(kAdamSecond);
    if (has_adam && (first || second)) {
      const std::string target = rec.name.substr(kAdamFirst.size());
      if (!net.params().contains(target) || net.params().at(target).value.shape() != rec.tensor.shape()) {
        throw FormatError("optimizer record " + rec.name + " does not match a parameter");
      }
      (first ? state.first : state.second)[target] = rec.tensor;
      continue;
    }
    throw FormatError("unknown parameter name in checkpoint: " + rec.name);
  }
  net.params().for_each([&](const Parameter<float>& p) {
    if (seen.count(p.name) == 0) throw FormatError("checkpoint is missing parameter " + p.name);
  });
  if (adam != nullptr) *adam = std::move(state);
  return net;
}

void save_checkpoint(const WCellNet<float>& net, const std::filesystem::path& path, const AdamState<float>* adam) {
  write_record_file(path, make_checkpoint(net, adam));
}

WCellNet<float> load_checkpoint(const std::filesystem::path& path, AdamState<float>* adam) {
  return restore_checkpoint(read_record_file(path), adam);
}

FeatureExtractor<float> load_vgg16_extractor(const std::filesystem::path& path) {
  return FeatureExtractor<float>::from_records(read_record_file(path).records);
}

}  // namespace wcell
