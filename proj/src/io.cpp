#include "mapguide/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mapguide {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace {

fs::path blob_path_for(const fs::path& manifest_path, const json& manifest) {
  if (manifest.contains("blob")) return manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  fs::path p = manifest_path;
  p.replace_extension(".f32");
  return p;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const void* data, std::size_t n) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
T required(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) throw FormatError(where.string() + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where.string() + ": bad value for '" + key + "': " + e.what());
  }
}

struct GridBlob {
  Matrix data;
  double tr = 0.0;
  double t0 = 0.0;
  json manifest;
};

GridBlob load_grid(const fs::path& manifest_path) {
  GridBlob g;
  g.manifest = read_json_file(manifest_path);
  const auto m = required<std::int64_t>(g.manifest, "m", manifest_path);
  const auto v = required<std::int64_t>(g.manifest, "V", manifest_path);
  g.tr = required<double>(g.manifest, "tr", manifest_path);
  g.t0 = g.manifest.value("t0", 0.0);
  if (m < 1 || v < 1) throw FormatError(manifest_path.string() + ": m and V must be >= 1");
  const auto bytes = read_bytes(blob_path_for(manifest_path, g.manifest));
  const auto expected = static_cast<std::size_t>(m) * static_cast<std::size_t>(v) * sizeof(float);
  if (bytes.size() != expected)
    throw FormatError("blob size " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(expected) +
                      " for " + std::to_string(m) + "x" + std::to_string(v) + " float32");
  std::vector<float> values(static_cast<std::size_t>(m * v));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  g.data.resize(m, v);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < v; ++j) g.data(i, j) = static_cast<double>(values[static_cast<std::size_t>(i * v + j)]);
  if (!g.data.allFinite()) throw ValidationError(manifest_path.string() + ": blob contains non-finite values");
  return g;
}

void save_grid(const Matrix& data, double tr, double t0, json manifest, const fs::path& manifest_path) {
  fs::path blob = manifest_path;
  blob.replace_extension(".f32");
  manifest["m"] = data.rows();
  manifest["V"] = data.cols();
  manifest["tr"] = tr;
  manifest["t0"] = t0;
  manifest["blob"] = blob.filename().string();
  manifest["dtype"] = "float32_le";
  std::vector<float> values(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.rows(); ++i)
    for (Index j = 0; j < data.cols(); ++j)
      values[static_cast<std::size_t>(i * data.cols() + j)] = static_cast<float>(data(i, j));
  write_bytes(blob, values.data(), values.size() * sizeof(float));
  write_text_file(manifest_path, manifest.dump(2) + "\n");
}

}  // namespace

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

std::string read_text_file(const fs::path& path) {
  auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown key '" + key + "' in " + std::string(where));
  }
}

FmriSeries load_fmri(const fs::path& manifest_path) {
  auto g = load_grid(manifest_path);
  FmriSeries s;
  s.data = std::move(g.data);
  s.tr_seconds = g.tr;
  s.t0 = g.t0;
  if (g.manifest.contains("voxel_ids")) {
    s.voxel_ids = g.manifest.at("voxel_ids").get<std::vector<std::int64_t>>();
  } else {
    s.voxel_ids.resize(static_cast<std::size_t>(s.data.cols()));
    for (std::size_t i = 0; i < s.voxel_ids.size(); ++i) s.voxel_ids[i] = static_cast<std::int64_t>(i);
  }
  s.validate();
  return s;
}

void save_fmri(const FmriSeries& series, const fs::path& manifest_path) {
  series.validate();
  json manifest;
  manifest["voxel_ids"] = series.voxel_ids;
  save_grid(series.data, series.tr_seconds, series.t0, std::move(manifest), manifest_path);
}

EmbeddingSeries load_embeddings(const fs::path& manifest_path) {
  auto g = load_grid(manifest_path);
  EmbeddingSeries s;
  s.vectors = std::move(g.data);
  s.delayed = g.manifest.value("delayed", false);
  s.times.resize(static_cast<std::size_t>(s.vectors.rows()));
  for (std::size_t i = 0; i < s.times.size(); ++i) s.times[i] = g.t0 + static_cast<double>(i) * g.tr;
  s.validate();
  return s;
}

void save_embeddings(const EmbeddingSeries& series, const fs::path& manifest_path) {
  series.validate();
  if (series.times.size() < 2) throw ArgumentError("embedding series needs >= 2 rows to define a grid");
  const double t0 = series.times.front();
  const double tr = series.times[1] - series.times[0];
  for (std::size_t i = 0; i < series.times.size(); ++i)
    if (std::abs(series.times[i] - (t0 + static_cast<double>(i) * tr)) > 1e-6 * std::max(1.0, std::abs(tr)))
      throw ArgumentError("embedding times are not on a uniform grid");
  json manifest;
  manifest["delayed"] = series.delayed;
  save_grid(series.vectors, tr, t0, std::move(manifest), manifest_path);
}

WordTimeline load_timeline(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  WordTimeline tl;
  std::string line;
  std::size_t lineno = 0;
  double last_time = -std::numeric_limits<double>::infinity();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("word") || !j.contains("time") || !j.at("word").is_string() ||
        !j.at("time").is_number())
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected {\"word\": str, \"time\": num}");
    const double t = j.at("time").get<double>();
    if (!std::isfinite(t)) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": non-finite time");
    if (t < last_time)
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": word times must be non-decreasing");
    last_time = t;
    auto token = normalize_token(j.at("word").get<std::string>());
    if (token.empty()) continue;
    tl.entries.push_back({std::move(token), t});
  }
  return tl;
}

std::string timeline_to_jsonl(const WordTimeline& timeline) {
  std::string out;
  for (const auto& e : timeline.entries) {
    json j;
    j["word"] = e.token;
    j["time"] = e.time;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_timeline(const WordTimeline& timeline, const fs::path& path) {
  timeline.validate();
  write_text_file(path, timeline_to_jsonl(timeline));
}

std::vector<WordTimeline> load_corpus(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<WordTimeline> stories;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("words") || !j.at("words").is_array())
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected {\"words\": [...]}");
    WordTimeline story;
    for (const auto& w : j.at("words")) {
      auto token = normalize_token(w.get<std::string>());
      if (token.empty()) continue;
      story.entries.push_back({std::move(token), static_cast<double>(story.entries.size())});
    }
    stories.push_back(std::move(story));
  }
  return stories;
}

void save_corpus(const std::vector<WordTimeline>& stories, const fs::path& path) {
  std::string out;
  for (const auto& s : stories) {
    json j;
    j["words"] = s.tokens();
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

void save_tensor_dir(const TensorMap& tensors, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest = json::object();
  json entries = json::array();
  for (const auto& [name, m] : tensors) {
    std::string file = name;
    for (auto& c : file)
      if (c == '/') c = '.';
    file += ".bin";
    const std::size_t bytes = static_cast<std::size_t>(m.size()) * sizeof(double);
    write_bytes(dir / file, m.data(), bytes);
    entries.push_back({{"name", name}, {"file", file}, {"rows", m.rows()}, {"cols", m.cols()},
                       {"dtype", "float64_le"}, {"bytes", bytes}});
  }
  manifest["tensors"] = entries;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

TensorMap load_tensor_dir(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IntegrityError("missing " + manifest_path.string());
  const auto manifest = read_json_file(manifest_path);
  if (!manifest.contains("tensors") || !manifest.at("tensors").is_array())
    throw IntegrityError(manifest_path.string() + ": no tensor list");
  TensorMap out;
  for (const auto& e : manifest.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto file = dir / e.at("file").get<std::string>();
    const auto rows = e.at("rows").get<Index>();
    const auto cols = e.at("cols").get<Index>();
    if (!fs::exists(file)) throw IntegrityError("tensor '" + name + "' missing blob " + file.string());
    const auto bytes = read_bytes(file);
    const auto expected = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (bytes.size() != expected)
      throw IntegrityError("tensor '" + name + "' blob has " + std::to_string(bytes.size()) + " bytes, expected " +
                           std::to_string(expected));
    Matrix m(rows, cols);
    if (expected > 0) std::memcpy(m.data(), bytes.data(), expected);
    out.emplace(name, std::move(m));
  }
  return out;
}

json to_json(const MapperConfig& c) {
  return {{"input_voxels", c.input_voxels},
          {"embed_dim", c.embed_dim},
          {"encoder_layers", c.encoder_layers},
          {"encoder_width", c.encoder_width},
          {"n_heads", c.n_heads},
          {"patch_size", c.patch_size},
          {"tap_layer", c.tap_layer},
          {"mask_ratio", c.mask_ratio},
          {"contrastive_weight", c.contrastive_weight},
          {"temperature", c.temperature},
          {"projector_dim", c.projector_dim},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"response_lag", c.response_lag},
          {"symmetric_infonce", c.symmetric_infonce},
          {"masked_in_mse", c.masked_in_mse},
          {"train_fraction", c.train_fraction},
          {"seed", c.seed}};
}

MapperConfig mapper_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"input_voxels", "embed_dim", "encoder_layers", "encoder_width", "n_heads", "patch_size",
                       "tap_layer", "mask_ratio", "contrastive_weight", "temperature", "projector_dim", "batch_size",
                       "learning_rate", "max_epochs", "patience", "response_lag", "symmetric_infonce",
                       "masked_in_mse", "train_fraction", "seed"},
                      "mapper config");
  MapperConfig c;
  try {
    c.input_voxels = j.value("input_voxels", c.input_voxels);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.encoder_width = j.value("encoder_width", c.encoder_width);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.tap_layer = j.value("tap_layer", c.tap_layer);
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
    c.contrastive_weight = j.value("contrastive_weight", c.contrastive_weight);
    c.temperature = j.value("temperature", c.temperature);
    c.projector_dim = j.value("projector_dim", c.projector_dim);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.response_lag = j.value("response_lag", c.response_lag);
    c.symmetric_infonce = j.value("symmetric_infonce", c.symmetric_infonce);
    c.masked_in_mse = j.value("masked_in_mse", c.masked_in_mse);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("mapper config: ") + e.what());
  }
  return c;
}

json to_json(const SyntheticSpec& s) {
  return {{"vocab_size", s.vocab_size},
          {"n_words", s.n_words},
          {"n_trs", s.n_trs},
          {"voxels", s.voxels},
          {"duplication_factor", s.duplication_factor},
          {"noise_sigma", s.noise_sigma},
          {"nonlinearity", s.nonlinearity == Nonlinearity::tanh ? "tanh" : "none"},
          {"tr_seconds", s.tr_seconds},
          {"auditory_voxels", s.auditory_voxels},
          {"branching", s.branching},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"vocab_size", "n_words", "n_trs", "voxels", "duplication_factor", "noise_sigma",
                       "nonlinearity", "tr_seconds", "auditory_voxels", "branching", "seed"},
                      "synthetic spec");
  SyntheticSpec s;
  try {
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.n_words = j.value("n_words", s.n_words);
    s.n_trs = j.value("n_trs", s.n_trs);
    s.voxels = j.value("voxels", s.voxels);
    s.duplication_factor = j.value("duplication_factor", s.duplication_factor);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    const auto nl = j.value("nonlinearity", std::string("none"));
    if (nl == "none") {
      s.nonlinearity = Nonlinearity::none;
    } else if (nl == "tanh") {
      s.nonlinearity = Nonlinearity::tanh;
    } else {
      throw ValidationError("synthetic spec: nonlinearity must be 'none' or 'tanh'");
    }
    s.tr_seconds = j.value("tr_seconds", s.tr_seconds);
    s.auditory_voxels = j.value("auditory_voxels", s.auditory_voxels);
    s.branching = j.value("branching", s.branching);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

void save_checkpoint(const MapperCheckpoint& ckpt, const fs::path& dir) {
  ckpt.config.validate();
  TensorMap all;
  for (const auto& [k, v] : ckpt.encoder) all.emplace("encoder/" + k, v);
  for (const auto& [k, v] : ckpt.embedding_projector) all.emplace("embedding_projector/" + k, v);
  for (const auto& [k, v] : ckpt.contrastive_projector) all.emplace("contrastive_projector/" + k, v);
  save_tensor_dir(all, dir);
  write_text_file(dir / "config.json", to_json(ckpt.config).dump(2) + "\n");
}

MapperCheckpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "config.json")) throw IntegrityError("missing " + (dir / "config.json").string());
  MapperCheckpoint ckpt;
  ckpt.config = mapper_config_from_json(read_json_file(dir / "config.json"));
  ckpt.config.validate();
  for (auto& [name, m] : load_tensor_dir(dir)) {
    const auto slash = name.find('/');
    if (slash == std::string::npos) throw IntegrityError("tensor '" + name + "' has no group prefix");
    const auto group = name.substr(0, slash);
    auto key = name.substr(slash + 1);
    if (group == "encoder") {
      ckpt.encoder.emplace(std::move(key), std::move(m));
    } else if (group == "embedding_projector") {
      ckpt.embedding_projector.emplace(std::move(key), std::move(m));
    } else if (group == "contrastive_projector") {
      ckpt.contrastive_projector.emplace(std::move(key), std::move(m));
    } else {
      throw IntegrityError("unknown tensor group '" + group + "'");
    }
  }
  return ckpt;
}

}  // namespace mapguide
