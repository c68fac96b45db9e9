#pragma once

// OODM checkpoint files.
//
//   "OODM"                magic
//   u8                    version (= 1)
//   u32 n, u32 dims[n]    [E, encoder dims (E), H, head dims (H), outputs, combine]
//   u32 count, f32[count] flattened parameters (layer order, weights then bias)
//   u32 len, u8[len]      UTF-8 JSON: training config echo and final loss
//
// Little-endian throughout.

#include <filesystem>

#include "json.hpp"
#include "marginlab/model.hpp"
#include "marginlab/oodf.hpp"

namespace marginlab {

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint8_t version = kCheckpointVersion;
  ModelParams params;
  TrainConfig config;
  double final_loss = 0.0;
  Vector epoch_losses;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"loss", to_string(c.loss)},
      {"learning_rate", c.learning_rate},
      {"momentum", c.momentum},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"pairs_per_epoch", c.pairs_per_epoch},
      {"seed", c.seed},
      {"encoder_hidden", c.encoder_hidden},
      {"emb_dim", c.emb_dim},
      {"head_hidden", c.head_hidden},
      {"pair_dim", c.pair_dim},
      {"combine", c.combine == PairCombine::symmetric ? "symmetric" : "concat"},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.loss = parse_loss_spec(j.at("loss").get<std::string>());
  c.learning_rate = j.at("learning_rate").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.pairs_per_epoch = j.at("pairs_per_epoch").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
  c.emb_dim = j.at("emb_dim").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.pair_dim = j.at("pair_dim").get<std::size_t>();
  c.combine = j.at("combine").get<std::string>() == "symmetric" ? PairCombine::symmetric
                                                                  : PairCombine::concat;
  return c;
}

inline Checkpoint make_checkpoint(const TrainConfig& config, TrainResult result) {
  Checkpoint ck;
  ck.params = std::move(result.params);
  ck.config = config;
  ck.epoch_losses = std::move(result.epoch_losses);
  ck.final_loss = ck.epoch_losses.empty() ? 0.0 : ck.epoch_losses.back();
  return ck;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  const Architecture& a = ck.params.arch;
  std::vector<std::uint32_t> dims;
  dims.push_back(static_cast<std::uint32_t>(a.encoder.size()));
  for (auto d : a.encoder) dims.push_back(static_cast<std::uint32_t>(d));
  dims.push_back(static_cast<std::uint32_t>(a.head.size()));
  for (auto d : a.head) dims.push_back(static_cast<std::uint32_t>(d));
  dims.push_back(static_cast<std::uint32_t>(a.outputs));
  dims.push_back(static_cast<std::uint32_t>(a.combine));

  std::string out = "OODM";
  out.push_back(static_cast<char>(ck.version));
  oodf::detail::put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) oodf::detail::put_u32(out, d);
  const Vector flat = ck.params.flatten();
  oodf::detail::put_u32(out, static_cast<std::uint32_t>(flat.size()));
  for (double v : flat) oodf::detail::put_f32(out, static_cast<float>(v));

  nlohmann::json meta = {{"config", to_json(ck.config)},
                         {"final_loss", ck.final_loss},
                         {"epoch_losses", ck.epoch_losses}};
  const std::string text = meta.dump();
  oodf::detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>") {
  oodf::detail::Reader in(bytes, source);
  if (in.raw(4) != "OODM") in.error("bad magic, expected OODM");
  Checkpoint ck;
  ck.version = in.u8();
  if (ck.version != kCheckpointVersion) {
    std::ostringstream msg;
    msg << source << ": unsupported checkpoint version " << int(ck.version);
    fail(ErrorKind::unsupported_version, msg.str());
  }
  const std::uint32_t n_dims = in.u32();
  if (n_dims > 1024) in.error("implausible dims count");
  std::vector<std::uint32_t> dims(n_dims);
  for (auto& d : dims) d = in.u32();

  Architecture a;
  std::size_t k = 0;
  auto take = [&]() -> std::uint32_t {
    if (k >= dims.size()) in.error("dims array too short");
    return dims[k++];
  };
  a.encoder.resize(take());
  for (auto& d : a.encoder) d = take();
  a.head.resize(take());
  for (auto& d : a.head) d = take();
  a.outputs = take();
  const std::uint32_t combine = take();
  if (k != dims.size()) in.error("dims array has trailing entries");
  if (combine > 1) in.error("unknown pair combine mode");
  a.combine = static_cast<PairCombine>(combine);
  try {
    validate(a);
  } catch (const Error& e) {
    in.error(e.what());
  }
  ck.params = zero_params(a);

  const std::uint32_t count = in.u32();
  if (count != ck.params.parameter_count()) in.error("parameter count does not match architecture");
  in.need(std::size_t{count} * 4);
  Vector flat(count);
  for (double& v : flat) v = in.f32();
  ck.params.unflatten(flat);

  const std::uint32_t len = in.u32();
  const std::string text = in.raw(len);
  if (!in.at_end()) in.error("trailing bytes after checkpoint");
  try {
    const auto meta = nlohmann::json::parse(text);
    ck.config = train_config_from_json(meta.at("config"));
    ck.final_loss = meta.at("final_loss").get<double>();
    ck.epoch_losses = meta.at("epoch_losses").get<Vector>();
  } catch (const nlohmann::json::exception& e) {
    in.error(std::string("malformed config echo: ") + e.what());
  } catch (const Error& e) {
    in.error(std::string("malformed config echo: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  oodf::detail::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(oodf::detail::read_file(path), path.string());
}

}  // namespace marginlab
