#include "cloudseg/checkpoint.hpp"

#include "cloudseg/json_util.hpp"

namespace cloudseg {

void save_checkpoint(const UNetModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  for (const auto& p : model.parameters()) {
    const std::string file = p.name + ".cseg";
    save_tensor(Tensor(p.shape, p.values), dir / file);
    tensors.push_back({{"name", p.name}, {"file", file}, {"shape", p.shape}});
  }
  write_canonical_json(dir / "index.json", {{"config", to_json(model.config())},
                                            {"config_hash", config_hash(model.config())},
                                            {"tensors", tensors}});
}

UNetModel load_checkpoint(const std::filesystem::path& dir) {
  const json index = read_json(dir / "index.json");
  PipelineConfig config;
  try {
    config = config_from_json(index.at("config"));
    require(index.at("config_hash").get<std::string>() == config_hash(config), ErrorKind::Consistency,
            dir.string() + ": config hash does not match stored config");
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, dir.string() + ": malformed index.json: " + e.what());
  }
  UNetModel model(config);
  auto& params = model.mutable_parameters();
  for (const auto& entry : index.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto& p = params[model.parameter_index(name)];
    auto t = load_tensor(dir / entry.at("file").get<std::string>());
    require(t.dtype() == DType::F32 && t.dims() == p.shape, ErrorKind::Consistency,
            "checkpoint tensor " + name + " has the wrong shape or dtype");
    p.values = t.values<float>();
  }
  require(index.at("tensors").size() == params.size(), ErrorKind::Consistency,
          dir.string() + ": checkpoint is missing parameter tensors");
  return model;
}

}  // namespace cloudseg
