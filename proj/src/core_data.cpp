#include "mapguide/core_data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

namespace mapguide {

std::vector<double> FmriSeries::times() const {
  std::vector<double> out(static_cast<std::size_t>(n_trs()));
  for (Index i = 0; i < n_trs(); ++i) out[static_cast<std::size_t>(i)] = time_at(i);
  return out;
}

void FmriSeries::validate() const {
  if (data.rows() < 1 || data.cols() < 1) throw ValidationError("fmri series must have m >= 1 and V >= 1");
  if (!(tr_seconds > 0.0) || !std::isfinite(tr_seconds)) throw ValidationError("tr_seconds must be positive");
  if (!std::isfinite(t0)) throw ValidationError("t0 must be finite");
  if (!data.allFinite()) throw ValidationError("fmri data contains non-finite values");
  if (static_cast<Index>(voxel_ids.size()) != data.cols())
    throw ValidationError("voxel_ids length " + std::to_string(voxel_ids.size()) + " != V " +
                          std::to_string(data.cols()));
  std::unordered_set<std::int64_t> seen(voxel_ids.begin(), voxel_ids.end());
  if (seen.size() != voxel_ids.size()) throw ValidationError("voxel_ids are not unique");
}

FmriSeries FmriSeries::select_voxels(const std::vector<std::int64_t>& ids) const {
  FmriSeries out;
  out.tr_seconds = tr_seconds;
  out.t0 = t0;
  out.voxel_ids = ids;
  out.data.resize(data.rows(), static_cast<Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) {
    auto it = std::find(voxel_ids.begin(), voxel_ids.end(), ids[k]);
    if (it == voxel_ids.end()) throw ShapeError("voxel id " + std::to_string(ids[k]) + " not present in series");
    out.data.col(static_cast<Index>(k)) = data.col(it - voxel_ids.begin());
  }
  return out;
}

FmriSeries FmriSeries::slice_rows(Index begin, Index count) const {
  if (begin < 0 || count < 0 || begin + count > n_trs()) throw ArgumentError("row slice out of range");
  FmriSeries out;
  out.data = data.middleRows(begin, count);
  out.tr_seconds = tr_seconds;
  out.t0 = time_at(begin);
  out.voxel_ids = voxel_ids;
  return out;
}

std::vector<std::string> WordTimeline::tokens() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.token);
  return out;
}

std::vector<double> WordTimeline::times() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.time);
  return out;
}

void WordTimeline::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.token.empty()) throw ValidationError("empty token at entry " + std::to_string(i));
    if (!is_clean_token(e.token)) throw ValidationError("token '" + e.token + "' is not normalized");
    if (!std::isfinite(e.time)) throw ValidationError("non-finite time at entry " + std::to_string(i));
    if (i > 0 && e.time < entries[i - 1].time)
      throw ValidationError("word times decrease at entry " + std::to_string(i));
  }
}

WordTimeline WordTimeline::between(double begin, double end) const {
  WordTimeline out;
  for (const auto& e : entries)
    if (e.time >= begin && e.time < end) out.entries.push_back(e);
  return out;
}

std::string normalize_token(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && (std::ispunct(u) || std::isspace(u) || std::iscntrl(u))) continue;
    out.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
  }
  return out;
}

bool is_clean_token(std::string_view token) {
  return !token.empty() && normalize_token(token) == token;
}

void EmbeddingSeries::validate() const {
  if (static_cast<Index>(times.size()) != vectors.rows())
    throw ValidationError("embedding row count does not match times length");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw ValidationError("embedding times must be strictly increasing");
  if (!vectors.allFinite()) throw ValidationError("embedding vectors contain non-finite values");
}

Index EmbeddingSeries::nearest_row(double t) const {
  if (times.empty()) throw ArgumentError("empty embedding series");
  auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  if (it == times.end()) return static_cast<Index>(times.size()) - 1;
  const auto hi = it - times.begin();
  const auto lo = hi - 1;
  return (t - times[static_cast<std::size_t>(lo)] <= times[static_cast<std::size_t>(hi)] - t) ? lo : hi;
}

EmbeddingSeries EmbeddingSeries::slice_rows(Index begin, Index count) const {
  if (begin < 0 || count < 0 || begin + count > rows()) throw ArgumentError("row slice out of range");
  EmbeddingSeries out;
  out.vectors = vectors.middleRows(begin, count);
  out.times.assign(times.begin() + begin, times.begin() + begin + count);
  out.delayed = delayed;
  return out;
}

void MapperConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("mapper config: " + m); };
  if (input_voxels < 1) fail("input_voxels must be >= 1");
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (encoder_layers < 1) fail("encoder_layers must be >= 1");
  if (encoder_width < 1) fail("encoder_width must be >= 1");
  if (n_heads < 1 || encoder_width % n_heads != 0) fail("n_heads must divide encoder_width");
  if (patch_size < 1) fail("patch_size must be >= 1");
  if (tap_layer < 1 || tap_layer > encoder_layers) fail("tap_layer must be in [1, encoder_layers]");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must be in [0, 1)");
  if (!(contrastive_weight >= 0.0)) fail("contrastive_weight must be >= 0");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
  if (projector_dim < 1) fail("projector_dim must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
  if (response_lag < 0) fail("response_lag must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction must be in (0, 1)");
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("synthetic spec: " + m); };
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (n_words < 1) fail("n_words must be >= 1");
  if (n_trs < 2) fail("n_trs must be >= 2");
  if (duplication_factor < 1) fail("duplication_factor must be >= 1");
  if (voxels < duplication_factor) fail("voxels must be >= duplication_factor");
  if (voxels % duplication_factor != 0) fail("voxels must be a multiple of duplication_factor");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(tr_seconds > 0.0)) fail("tr_seconds must be > 0");
  if (auditory_voxels < 1 || auditory_voxels > voxels / duplication_factor)
    fail("auditory_voxels must be in [1, voxels / duplication_factor]");
  if (branching < 1 || branching > vocab_size) fail("branching must be in [1, vocab_size]");
}

}  // namespace mapguide
