// SPDX-License-Identifier: Apache-2.0
// Model container: "SWMODEL\0", u32 version, u64 header length, header JSON, u64 tensor
// count, tensors (u32 name length, name, u32 rank, u64 dims..., f64 data...), and a
// trailing u64 FNV-1a digest of everything before it. Integers are little-endian.
#include "sidewatch/error.hpp"
#include "sidewatch/models.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace sidewatch::models {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'W', 'M', 'O', 'D', 'E', 'L', '\0'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }
  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error(ErrorCode::kCorruptArtifact, "artifact is truncated");
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

json reg_json(const nn::Regularizer& r) { return {{"l1", r.l1}, {"l2", r.l2}, {"activity_l2", r.activity_l2}}; }

json layer_json(const nn::LayerSpec& s) {
  json j{{"kind", nn::layer_kind_name(s.kind)}, {"parameters", s.parameters}};
  switch (s.kind) {
    case nn::LayerKind::kDense:
      j.update({{"input", s.input}, {"units", s.units}, {"activation", nn::activation_name(s.activation)},
                {"regularizer", reg_json(s.reg)}});
      break;
    case nn::LayerKind::kConv1d:
      j.update({{"input", s.input}, {"filters", s.units}, {"kernel", s.kernel},
                {"activation", nn::activation_name(s.activation)}});
      break;
    case nn::LayerKind::kGlobalMaxPool1d:
      j["channels"] = s.units;
      break;
    case nn::LayerKind::kDropout:
      j.update({{"rate", s.rate}, {"units", s.units}});
      break;
    default:
      j.update({{"input", s.input}, {"units", s.units}, {"cell", nn::cell_name(s.cell)},
                {"return_sequences", s.return_sequences}});
      break;
  }
  return j;
}

json header_json(const ModelArtifact& m) {
  json j;
  j["format"] = "sidewatch-model";
  j["family"] = family_name(m.family);
  j["input_dim"] = m.input_dim;
  j["raw_input_dim"] = m.raw_input_dim();
  j["sample_period_s"] = m.sample_period_s;
  j["seed"] = m.seed;
  j["epochs_trained"] = m.epochs_trained;
  j["parameters"] = m.parameter_count();
  switch (m.family) {
    case Family::kMlp:
      j["mlp"] = {{"hidden", m.mlp.hidden}};
      break;
    case Family::kConvMultibranch: {
      const auto& c = m.conv;
      const auto& s = std::get<ConvNet>(m.net).sizes;
      j["conv"] = {{"filters", c.filters},
                   {"kernel", c.kernel},
                   {"dense_units", c.dense_units},
                   {"dropout", c.dropout},
                   {"head_regularizer", reg_json(c.head_reg)},
                   {"branches",
                    {{"smooth_short_s", c.branches.smooth_short_s},
                     {"smooth_long_s", c.branches.smooth_long_s},
                     {"down_mid_s", c.branches.down_mid_s},
                     {"down_long_s", c.branches.down_long_s},
                     {"raw_window", c.branches.raw_window},
                     {"down_window", c.branches.down_window}}},
                   {"window_samples",
                    {{"smooth_short", s.smooth_short},
                     {"smooth_long", s.smooth_long},
                     {"down_mid", s.down_mid},
                     {"down_long", s.down_long},
                     {"raw_window", s.raw_window},
                     {"down_window", s.down_window}}}};
      break;
    }
    case Family::kAutoencoder:
      j["autoencoder"] = {{"dim", m.autoencoder.dim}};
      break;
    default:
      j["rnn"] = {{"layers", m.rnn.layers}, {"sequence_length", m.rnn.sequence_length}};
      break;
  }
  json layers = json::array();
  for (const auto& s : m.layer_specs()) layers.push_back(layer_json(s));
  j["layers"] = std::move(layers);
  j["encoder"] = m.encoder ? header_json(*m.encoder) : json(nullptr);
  return j;
}

void collect_tensors(const ModelArtifact& m, const std::string& prefix,
                     std::vector<std::pair<std::string, const Matrix*>>& out) {
  out.emplace_back(prefix + "norm/mean", nullptr);
  out.emplace_back(prefix + "norm/std", nullptr);
  for (const auto& [name, p] : m.named_params()) out.emplace_back(prefix + name, &p->value);
  if (m.encoder) collect_tensors(*m.encoder, prefix + "encoder/", out);
}

void put_tensor(std::string& out, const std::string& name, Eigen::Index rows, Eigen::Index cols, const double* data) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(rows));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(cols));
  out.append(reinterpret_cast<const char*>(data), static_cast<std::size_t>(rows * cols) * sizeof(double));
}

void write_tensors(std::string& out, const ModelArtifact& m, const std::string& prefix) {
  put_tensor(out, prefix + "norm/mean", 1, m.norm.mean.size(), m.norm.mean.data());
  put_tensor(out, prefix + "norm/std", 1, m.norm.std.size(), m.norm.std.data());
  for (const auto& [name, p] : m.named_params())
    put_tensor(out, prefix + name, p->value.rows(), p->value.cols(), p->value.data());
  if (m.encoder) write_tensors(out, *m.encoder, prefix + "encoder/");
}

std::size_t tensor_count(const ModelArtifact& m) {
  return 2 + m.named_params().size() + (m.encoder ? tensor_count(*m.encoder) : 0);
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::kCorruptArtifact, std::string("artifact header lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptArtifact, std::string("artifact header field '") + key + "': " + e.what());
  }
}

nn::Regularizer reg_from(const json& j) {
  return {field<double>(j, "l1"), field<double>(j, "l2"), field<double>(j, "activity_l2")};
}

ModelArtifact skeleton_from(const json& j) {
  const Family family = parse_family(field<std::string>(j, "family"));
  const auto input_dim = field<std::size_t>(j, "input_dim");
  ModelArtifact m;
  switch (family) {
    case Family::kMlp:
      m = build_mlp(input_dim, {field<std::vector<std::size_t>>(field<json>(j, "mlp"), "hidden")});
      break;
    case Family::kConvMultibranch: {
      const json c = field<json>(j, "conv");
      const json b = field<json>(c, "branches");
      ConvSettings s;
      s.filters = field<std::size_t>(c, "filters");
      s.kernel = field<std::size_t>(c, "kernel");
      s.dense_units = field<std::size_t>(c, "dense_units");
      s.dropout = field<double>(c, "dropout");
      s.head_reg = reg_from(field<json>(c, "head_regularizer"));
      s.branches.smooth_short_s = field<double>(b, "smooth_short_s");
      s.branches.smooth_long_s = field<double>(b, "smooth_long_s");
      s.branches.down_mid_s = field<double>(b, "down_mid_s");
      s.branches.down_long_s = field<double>(b, "down_long_s");
      s.branches.raw_window = field<std::size_t>(b, "raw_window");
      s.branches.down_window = field<std::size_t>(b, "down_window");
      m = build_conv_multibranch(input_dim, s, field<double>(j, "sample_period_s"));
      break;
    }
    case Family::kAutoencoder:
      m = build_autoencoder(input_dim, field<std::size_t>(field<json>(j, "autoencoder"), "dim"));
      break;
    default: {
      const json r = field<json>(j, "rnn");
      m = build_rnn(input_dim, family,
                    {field<std::vector<std::size_t>>(r, "layers"), field<std::size_t>(r, "sequence_length")});
      break;
    }
  }
  m.sample_period_s = field<double>(j, "sample_period_s");
  m.seed = field<std::uint64_t>(j, "seed");
  m.epochs_trained = field<std::size_t>(j, "epochs_trained");
  if (j.contains("encoder") && !j.at("encoder").is_null())
    m.encoder = std::make_shared<ModelArtifact>(skeleton_from(j.at("encoder")));
  return m;
}

// Mutable views of every tensor slot of a skeleton, keyed by serialized name.
void tensor_slots(ModelArtifact& m, const std::string& prefix, std::map<std::string, Matrix*>& params,
                  std::map<std::string, RowVector*>& norms) {
  norms[prefix + "norm/mean"] = &m.norm.mean;
  norms[prefix + "norm/std"] = &m.norm.std;
  for (auto& [name, p] : m.named_params()) params[prefix + name] = &p->value;
  if (m.encoder) {
    auto enc = std::make_shared<ModelArtifact>(*m.encoder);
    tensor_slots(*enc, prefix + "encoder/", params, norms);
    m.encoder = enc;
  }
}

}  // namespace

std::string serialize_model(const ModelArtifact& model) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kArtifactVersion);
  const std::string header = header_json(model).dump(2);
  put<std::uint64_t>(out, header.size());
  out += header;
  put<std::uint64_t>(out, tensor_count(model));
  write_tensors(out, model, "");
  put<std::uint64_t>(out, fnv1a(out));
  return out;
}

ModelArtifact deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  if (r.remaining() < sizeof(kMagic) || std::memcmp(r.take(sizeof(kMagic)).data(), kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorCode::kCorruptArtifact, "not a sidewatch model artifact");
  const auto version = r.get<std::uint32_t>();
  if (version != kArtifactVersion)
    throw Error(ErrorCode::kVersionMismatch, "artifact version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kArtifactVersion));
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 8 + 8) throw Error(ErrorCode::kCorruptArtifact, "artifact is truncated");
  std::uint64_t digest;
  std::memcpy(&digest, bytes.data() + bytes.size() - 8, 8);
  if (digest != fnv1a(bytes.substr(0, bytes.size() - 8)))
    throw Error(ErrorCode::kCorruptArtifact, "artifact checksum mismatch (truncated or modified)");

  const auto header_len = r.get<std::uint64_t>();
  json header;
  try {
    header = json::parse(r.take(header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptArtifact, std::string("artifact header: ") + e.what());
  }
  if (header.value("format", "") != "sidewatch-model")
    throw Error(ErrorCode::kCorruptArtifact, "artifact header has wrong format tag");
  ModelArtifact m;
  try {
    m = skeleton_from(header);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruptArtifact) throw;
    throw Error(ErrorCode::kCorruptArtifact, std::string("artifact header describes an invalid model: ") + e.what());
  }
  std::map<std::string, Matrix*> params;
  std::map<std::string, RowVector*> norms;
  tensor_slots(m, "", params, norms);

  const auto count = r.get<std::uint64_t>();
  if (count != params.size() + norms.size()) throw Error(ErrorCode::kCorruptArtifact, "unexpected tensor count");
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::string name(r.take(r.get<std::uint32_t>()));
    if (r.get<std::uint32_t>() != 2) throw Error(ErrorCode::kCorruptArtifact, "tensor '" + name + "' is not rank 2");
    const auto rows = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    const auto data = r.take(static_cast<std::size_t>(rows * cols) * sizeof(double));
    if (auto it = params.find(name); it != params.end()) {
      if (it->second->rows() != rows || it->second->cols() != cols)
        throw Error(ErrorCode::kCorruptArtifact, "tensor '" + name + "' has the wrong shape");
      std::memcpy(it->second->data(), data.data(), data.size());
      params.erase(it);
    } else if (auto nt = norms.find(name); nt != norms.end()) {
      if (rows != 1) throw Error(ErrorCode::kCorruptArtifact, "tensor '" + name + "' has the wrong shape");
      nt->second->resize(cols);
      std::memcpy(nt->second->data(), data.data(), data.size());
      norms.erase(nt);
    } else {
      throw Error(ErrorCode::kCorruptArtifact, "unexpected tensor '" + name + "'");
    }
  }
  if (!params.empty() || !norms.empty()) throw Error(ErrorCode::kCorruptArtifact, "artifact is missing tensors");
  if (r.remaining() != 8) throw Error(ErrorCode::kCorruptArtifact, "trailing bytes in artifact");
  return m;
}

void save_model(const std::filesystem::path& path, const ModelArtifact& model) {
  if (path.empty()) throw Error(ErrorCode::kIoFailure, "empty model path");
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

ModelArtifact load_model(const std::filesystem::path& path) {
  if (path.empty()) throw Error(ErrorCode::kIoFailure, "empty model path");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

std::string model_id(const ModelArtifact& model) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(serialize_model(model));
  return out.str();
}

}  // namespace sidewatch::models
