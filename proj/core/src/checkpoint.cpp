#include "hourglass/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hourglass/data.hpp"

namespace hourglass {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof v);
  }
  void put_string32(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void put_raw(const void* data, std::size_t n) { buf_.append(static_cast<const char*>(data), n); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string what) : p_(data), end_(data + size), what_(std::move(what)) {}

  template <typename V>
  V get() {
    V v;
    need(sizeof v);
    std::memcpy(&v, p_, sizeof v);
    p_ += sizeof v;
    return v;
  }
  std::string get_string32() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* out = p_;
    p_ += n;
    return out;
  }
  bool done() const { return p_ == end_; }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw IoError("truncated checkpoint " + what_);
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
  std::string what_;
};

void put_section(Writer& out, const std::string& name, const std::string& payload) {
  out.put_string32(name);
  out.put(static_cast<std::uint64_t>(payload.size()));
  out.put_raw(payload.data(), payload.size());
}

std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  Writer w;
  w.put(static_cast<std::uint64_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.put_string32(t.path);
    w.put(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) w.put(static_cast<std::uint64_t>(e));
    w.put(t.width);
    if (t.width == 4) {
      for (double v : t.values) w.put(static_cast<float>(v));
    } else {
      for (double v : t.values) w.put(v);
    }
  }
  return w.str();
}

std::vector<NamedTensor> decode_tensors(const std::uint8_t* data, std::size_t size, const std::string& section) {
  Reader r(data, size, "section '" + section + "'");
  std::vector<NamedTensor> out(r.get<std::uint64_t>());
  for (auto& t : out) {
    t.path = r.get_string32();
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    t.width = r.get<std::uint8_t>();
    if (t.width != 4 && t.width != 8) throw IoError("checkpoint tensor '" + t.path + "' has bad element width");
    const std::size_t n = numel(t.shape);
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.values[i] = t.width == 4 ? r.get<float>() : r.get<double>();
  }
  if (!r.done()) throw IoError("trailing bytes in checkpoint section '" + section + "'");
  return out;
}

template <typename T>
NamedTensor to_named(const std::string& path, const Tensor<T>& t) {
  NamedTensor n;
  n.path = path;
  n.shape = t.shape();
  n.width = sizeof(T);
  n.values.assign(t.data().begin(), t.data().end());
  return n;
}

template <typename T>
Tensor<T> from_named(const NamedTensor& n, const Shape& expect) {
  if (n.shape != expect) {
    throw IoError("checkpoint tensor '" + n.path + "' has shape " + shape_str(n.shape) + ", model expects " +
                  shape_str(expect));
  }
  std::vector<T> v(n.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(n.values[i]);
  return Tensor<T>(n.shape, std::move(v));
}

}  // namespace

RunConfig CheckpointData::run_config() const {
  RunConfig cfg;
  apply_config_text(cfg, config_text, "checkpoint config");
  return cfg;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  Writer out;
  out.put_raw(kCheckpointMagic, 8);
  put_section(out, "config", data.config_text);
  Writer state;
  state.put(data.step);
  state.put(data.seed);
  state.put(data.adam_steps);
  state.put(data.wall_seconds);
  put_section(out, "state", state.str());
  put_section(out, "params", encode_tensors(data.params));
  put_section(out, "adam_m", encode_tensors(data.adam_m));
  put_section(out, "adam_v", encode_tensors(data.adam_v));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    f.write(out.str().data(), static_cast<std::streamsize>(out.str().size()));
    if (!f) throw IoError("error while writing checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError("bad checkpoint header in '" + path.string() + "'");
  }
  Reader r(bytes.data() + 8, bytes.size() - 8, "'" + path.string() + "'");
  CheckpointData data;
  bool have_config = false, have_state = false, have_params = false;
  while (!r.done()) {
    const std::string name = r.get_string32();
    const auto len = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::uint8_t* payload = r.take(len);
    if (name == "config") {
      data.config_text.assign(reinterpret_cast<const char*>(payload), len);
      have_config = true;
    } else if (name == "state") {
      Reader s(payload, len, "section 'state'");
      data.step = s.get<std::uint64_t>();
      data.seed = s.get<std::uint64_t>();
      data.adam_steps = s.get<std::uint64_t>();
      data.wall_seconds = s.get<double>();
      have_state = true;
    } else if (name == "params") {
      data.params = decode_tensors(payload, len, name);
      have_params = true;
    } else if (name == "adam_m") {
      data.adam_m = decode_tensors(payload, len, name);
    } else if (name == "adam_v") {
      data.adam_v = decode_tensors(payload, len, name);
    }
  }
  if (!have_config || !have_state || !have_params) {
    throw IoError("checkpoint '" + path.string() + "' lacks a required section");
  }
  return data;
}

template <typename T>
std::vector<NamedTensor> snapshot(const ParamStore<T>& params) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(to_named(params[i].path, params[i].value));
  return out;
}

template <typename T>
std::vector<NamedTensor> snapshot(const ParamStore<T>& params, const std::vector<Tensor<T>>& values) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back(to_named(params[i].path, values[i]));
  return out;
}

template <typename T>
void restore_params(ParamStore<T>& params, const std::vector<NamedTensor>& stored) {
  if (stored.size() != params.size()) {
    throw IoError("checkpoint holds " + std::to_string(stored.size()) + " parameters, model has " +
                  std::to_string(params.size()));
  }
  for (const auto& n : stored) {
    if (!params.contains(n.path)) throw IoError("checkpoint parameter '" + n.path + "' is unknown to the model");
    Parameter<T>& p = params.get(n.path);
    p.value = from_named<T>(n, p.value.shape());
  }
}

template <typename T>
std::vector<Tensor<T>> restore_moments(const ParamStore<T>& params, const std::vector<NamedTensor>& stored) {
  if (stored.size() != params.size()) throw IoError("checkpoint optimizer state does not match the model");
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < stored.size(); ++i) {
    if (stored[i].path != params[i].path) throw IoError("checkpoint optimizer state order does not match the model");
    out.push_back(from_named<T>(stored[i], params[i].value.shape()));
  }
  return out;
}

template <typename T>
HourglassModel<T> load_model(const CheckpointData& data) {
  const RunConfig cfg = data.run_config();
  HourglassModel<T> model(cfg.model_spec(), data.seed);
  restore_params(model.params(), data.params);
  return model;
}

template std::vector<NamedTensor> snapshot<float>(const ParamStore<float>&);
template std::vector<NamedTensor> snapshot<double>(const ParamStore<double>&);
template std::vector<NamedTensor> snapshot<float>(const ParamStore<float>&, const std::vector<Tensor<float>>&);
template std::vector<NamedTensor> snapshot<double>(const ParamStore<double>&, const std::vector<Tensor<double>>&);
template void restore_params<float>(ParamStore<float>&, const std::vector<NamedTensor>&);
template void restore_params<double>(ParamStore<double>&, const std::vector<NamedTensor>&);
template std::vector<Tensor<float>> restore_moments<float>(const ParamStore<float>&, const std::vector<NamedTensor>&);
template std::vector<Tensor<double>> restore_moments<double>(const ParamStore<double>&,
                                                             const std::vector<NamedTensor>&);
template HourglassModel<float> load_model<float>(const CheckpointData&);
template HourglassModel<double> load_model<double>(const CheckpointData&);

}  // namespace hourglass
