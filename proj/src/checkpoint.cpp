#include "udm/tensor_io.hpp"
#include "udm/trainer.hpp"

namespace udm {

namespace {

const std::string kMagic = "UDMCKPT1";

std::vector<std::pair<std::string, torch::Tensor>> named_state(const TrainSystem& sys) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  collect_named_tensors("model", *sys.model, out);
  collect_named_tensors("dis", *sys.dis, out);
  collect_named_tensors("density_g", *sys.density_g, out);
  collect_named_tensors("density_l", *sys.density_l, out);
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainSystem& system,
                     const TrainConfig& config, int step,
                     const std::map<std::string, std::string>& blobs) {
  nlohmann::json extra;
  extra["step"] = step;
  extra["config"] = config.to_json();
  save_tensor_container(path, kMagic, extra, named_state(system), blobs);
}

CheckpointData load_checkpoint(const std::string& path) {
  auto container = load_tensor_container(path, kMagic);

  CheckpointData data;
  data.config = TrainConfig::from_json(container.extra.at("config"));
  data.step = container.extra.value("step", 0);
  data.system = TrainSystem::build(data.config);
  data.blobs = std::move(container.blobs);
  restore_named_tensors(container.tensors, named_state(data.system), "checkpoint");
  return data;
}

}  // namespace udm
