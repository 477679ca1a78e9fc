#pragma once

#include "mapguide/core_data.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mapguide {

namespace fs = std::filesystem;
using json = nlohmann::json;

// fMRI manifest + blob. The manifest carries {m, V, tr, t0} and optionally
// `blob` (relative to the manifest) and `voxel_ids`. The blob is m*V
// little-endian float32 values, TR-major.
FmriSeries load_fmri(const fs::path& manifest_path);
void save_fmri(const FmriSeries& series, const fs::path& manifest_path);

// Same container for embeddings; the manifest adds `delayed`. Times are
// reconstructed as t0 + i * tr.
EmbeddingSeries load_embeddings(const fs::path& manifest_path);
void save_embeddings(const EmbeddingSeries& series, const fs::path& manifest_path);

// JSON lines of {"word", "time"}. Tokens are normalized on load.
WordTimeline load_timeline(const fs::path& path);
void save_timeline(const WordTimeline& timeline, const fs::path& path);
std::string timeline_to_jsonl(const WordTimeline& timeline);

// One story per line: {"words": [...]}; times are synthesized at 1 word/s.
std::vector<WordTimeline> load_corpus(const fs::path& path);
void save_corpus(const std::vector<WordTimeline>& stories, const fs::path& path);

// Directory of float64 tensors: manifest.json + one .bin per tensor.
void save_tensor_dir(const TensorMap& tensors, const fs::path& dir);
TensorMap load_tensor_dir(const fs::path& dir);

json to_json(const MapperConfig& c);
MapperConfig mapper_config_from_json(const json& j);
json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const json& j);

// Checkpoint directory: config.json, manifest.json, *.bin.
void save_checkpoint(const MapperCheckpoint& ckpt, const fs::path& dir);
MapperCheckpoint load_checkpoint(const fs::path& dir);

json read_json_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);
std::string read_text_file(const fs::path& path);

// Reject keys in `j` that are not in `allowed`.
void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view where);

}  // namespace mapguide
