#include "mivise/checkpoint.hpp"

#include <fstream>
#include <set>

#include "mivise/binary_io.hpp"

namespace mivise {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("MVCK", 4);
  io::put_u32(os, kCheckpointFormatVersion);
  const auto& entries = ck.model.params.entries();
  io::put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, e] : entries) {
    io::put_u32(os, static_cast<std::uint32_t>(name.size()));
    io::put_bytes(os, name);
    io::put_u32(os, 2);
    io::put_u32(os, static_cast<std::uint32_t>(e.value.rows()));
    io::put_u32(os, static_cast<std::uint32_t>(e.value.cols()));
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = e.value;
    io::put_f32_array(os, rm.data(), static_cast<std::size_t>(rm.size()));
  }
  nlohmann::json meta = {{"config", to_json(ck.model.config)}, {"epoch", ck.epoch}, {"running_loss", ck.running_loss}};
  const std::string text = meta.dump();
  io::put_u32(os, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(os, text);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  io::Reader r(is);
  const std::string where = path.string();
  char magic[4];
  if (!r.read_raw(magic, 4) || std::string(magic, 4) != "MVCK") throw FormatError(where + ": bad magic, not a checkpoint");
  const std::uint32_t version = r.u32(where + " header");
  if (version != kCheckpointFormatVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32(where + " header");

  std::map<std::string, Matrix<float>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string ctx = where + " parameter " + std::to_string(i);
    const std::string name = r.bytes(r.u32(ctx), ctx);
    const std::uint32_t rank = r.u32(ctx);
    if (rank < 1 || rank > 2) throw FormatError(ctx + ": unsupported rank " + std::to_string(rank));
    const std::uint32_t rows = r.u32(ctx);
    const std::uint32_t cols = rank == 2 ? r.u32(ctx) : 1;
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    r.f32_array(rm.data(), static_cast<std::size_t>(rm.size()), ctx);
    if (!tensors.emplace(name, Matrix<float>(rm)).second) throw FormatError(ctx + ": duplicate name '" + name + "'");
  }
  const std::uint32_t json_len = r.u32(where + " config block");
  const std::string text = r.bytes(json_len, where + " config block");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": config block is not valid JSON: " + e.what());
  }

  Checkpoint ck;
  const TrainConfig cfg = train_config_from_json(meta.at("config"));
  ck.model = init_model(cfg, cfg.video.input_dim, cfg.sentence.input_dim);
  ck.epoch = meta.at("epoch").get<int>();
  ck.running_loss = meta.at("running_loss").get<double>();
  if (tensors.size() != ck.model.params.size()) {
    throw FormatError(where + ": holds " + std::to_string(tensors.size()) + " parameters, config implies " +
                      std::to_string(ck.model.params.size()));
  }
  for (auto& [name, value] : tensors) {
    if (!ck.model.params.contains(name)) throw FormatError(where + ": unexpected parameter '" + name + "'");
    auto& dst = ck.model.params.value(name);
    if (dst.rows() != value.rows() || dst.cols() != value.cols()) {
      throw FormatError(where + ": parameter '" + name + "' has the wrong shape");
    }
    dst = std::move(value);
  }
  return ck;
}

}  // namespace mivise
