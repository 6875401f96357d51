#include "pcrl/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pcrl {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'C', 'R', 'L', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, std::uint64_t value) {
  char bytes[8];
  std::memcpy(bytes, &value, 8);
  out.write(bytes, 8);
}

std::uint64_t read_u64(std::istream& in) {
  char bytes[8];
  in.read(bytes, 8);
  std::uint64_t value = 0;
  std::memcpy(&value, bytes, 8);
  return value;
}

void write_matrix(std::ostream& out, const nn::Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      char bytes[8];
      std::memcpy(bytes, &v, 8);
      out.write(bytes, 8);
    }
  }
}

void read_matrix(std::istream& in, nn::Mat* m) {
  for (Eigen::Index r = 0; r < m->rows(); ++r) {
    for (Eigen::Index c = 0; c < m->cols(); ++c) {
      char bytes[8];
      in.read(bytes, 8);
      double v = 0;
      std::memcpy(&v, bytes, 8);
      (*m)(r, c) = v;
    }
  }
}

json header_json(const Trainer& trainer) {
  json header;
  header["version"] = 1;
  header["environment"] = json::parse(env_config_to_json_text(trainer.env_config()));
  header["network"] = json::parse(network_config_to_json_text(trainer.net_config()));
  header["trainer"] = json::parse(trainer_config_to_json_text(trainer.config()));
  header["seed"] = trainer.seed();
  header["progress"] = {
      {"episodes_completed", trainer.episodes_completed()},
      {"env_steps", trainer.env_steps()},
      {"gradient_steps", trainer.gradient_steps()},
      {"smoothed_return", trainer.smoothed_return()},
      {"have_smoothed", trainer.have_smoothed()},
      {"buffer_inserted", trainer.buffer().total_inserted()},
      {"adam_steps", trainer.optimizer().steps_taken()},
  };
  header["rng"] = {
      {"policy", trainer.policy_rng_state()},
      {"replay", trainer.replay_rng_state()},
  };
  header["deviations"] = rainbow_deviations(trainer.config());

  json manifest = json::array();
  const auto params = trainer.online().parameters();
  const auto names = trainer.online().parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    manifest.push_back({{"name", names[i]},
                        {"rows", params[i]->rows()},
                        {"cols", params[i]->cols()}});
  }
  header["parameters"] = manifest;
  return header;
}

json parse_header(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw ConfigError("checkpoint: '" + path + "' is not a checkpoint file");
  }
  const std::uint64_t length = read_u64(in);
  if (!in || length == 0 || length > (1ULL << 24)) {
    throw ConfigError("checkpoint: implausible header length in '" + path + "'");
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw ConfigError("checkpoint: truncated header in '" + path + "'");
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad header: ") + e.what());
  }
}

CheckpointInfo info_from_header(const json& header) {
  CheckpointInfo info;
  try {
    info.env = env_config_from_json_text(header.at("environment").dump());
    info.net = network_config_from_json_text(header.at("network").dump());
    info.trainer = trainer_config_from_json_text(header.at("trainer").dump());
    info.seed = header.at("seed").get<std::uint64_t>();
    const json& progress = header.at("progress");
    info.episodes_completed = progress.at("episodes_completed").get<int>();
    info.env_steps = progress.at("env_steps").get<std::uint64_t>();
    info.gradient_steps = progress.at("gradient_steps").get<std::uint64_t>();
    info.buffer_inserted = progress.at("buffer_inserted").get<std::uint64_t>();
    info.adam_steps = progress.at("adam_steps").get<std::uint64_t>();
    info.smoothed_return = progress.at("smoothed_return").get<double>();
    info.have_smoothed = progress.at("have_smoothed").get<bool>();
    if (const auto it = header.find("deviations"); it != header.end()) {
      info.deviations = it->get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: incomplete header: ") + e.what());
  }
  return info;
}

}  // namespace

void save_checkpoint(const std::string& path, const Trainer& trainer) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");

  const std::string header = header_json(trainer).dump();
  out.write(kMagic, 8);
  write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  for (const nn::Mat* m : trainer.online().parameters()) write_matrix(out, *m);
  for (const nn::Mat& m : trainer.optimizer().moment1()) write_matrix(out, m);
  for (const nn::Mat& m : trainer.optimizer().moment2()) write_matrix(out, m);
  for (const nn::Mat* m : trainer.online().power_vectors()) write_matrix(out, *m);
  for (const nn::Mat* m : trainer.target().parameters()) write_matrix(out, *m);
  for (const nn::Mat* m : trainer.target().power_vectors()) write_matrix(out, *m);

  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  return info_from_header(parse_header(in, path));
}

std::unique_ptr<Trainer> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  const json header = parse_header(in, path);
  const CheckpointInfo info = info_from_header(header);

  auto trainer =
      std::make_unique<Trainer>(info.env, info.net, info.trainer, info.seed);

  // the stored manifest must match what the rebuilt network reports
  const auto params = trainer->online().parameters();
  const auto names = trainer->online().parameter_names();
  const json& manifest = header.at("parameters");
  if (manifest.size() != params.size()) {
    throw ConfigError("checkpoint: parameter count does not match the config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& entry = manifest[i];
    if (entry.at("name").get<std::string>() != names[i] ||
        entry.at("rows").get<Eigen::Index>() != params[i]->rows() ||
        entry.at("cols").get<Eigen::Index>() != params[i]->cols()) {
      throw ConfigError("checkpoint: parameter manifest mismatch at '" + names[i] +
                        "'");
    }
  }

  for (nn::Mat* m : trainer->online().parameters()) read_matrix(in, m);
  for (nn::Mat& m : trainer->optimizer().moment1()) read_matrix(in, &m);
  for (nn::Mat& m : trainer->optimizer().moment2()) read_matrix(in, &m);
  for (nn::Mat* m : trainer->online().power_vectors()) read_matrix(in, m);
  for (nn::Mat* m : trainer->mutable_target().parameters()) read_matrix(in, m);
  for (nn::Mat* m : trainer->mutable_target().power_vectors()) read_matrix(in, m);
  if (!in) throw std::runtime_error("checkpoint: truncated payload in '" + path + "'");

  trainer->optimizer().set_steps_taken(info.adam_steps);
  trainer->restore_progress(info.episodes_completed, info.env_steps,
                            info.gradient_steps, info.smoothed_return,
                            info.have_smoothed,
                            header.at("rng").at("policy").get<std::string>(),
                            header.at("rng").at("replay").get<std::string>());
  return trainer;
}

}  // namespace pcrl
