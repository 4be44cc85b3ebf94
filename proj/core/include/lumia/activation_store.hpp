#pragma once

// Binary dump formats that decouple activation extraction from probing.
//
// Activation file ("LUMA"), all integers little-endian:
//   magic "LUMA" | version u32 | stream_count u16
//   per stream: name_len u16, name, layer_count u16, layer_count x dim u32
//   record_count u32
//   per record: id_len u16, id, label u8, token_count u32,
//               then for each stream, each layer: dim x float32
//
// Log-prob file ("LULP"):
//   magic "LULP" | version u32 | record_count u32
//   per record: id_len u16, id, label u8, count u32, count x float32,
//               raw_len u32, raw bytes
//
// Activation files carry a JSON manifest sidecar at "<path>.manifest.json".

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lumia::store {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::string_view kActivationMagic = "LUMA";
inline constexpr std::string_view kLogProbMagic = "LULP";

struct StreamLayout {
  std::string name;
  std::vector<std::uint32_t> layer_dims;

  std::size_t layer_count() const { return layer_dims.size(); }
  bool operator==(const StreamLayout&) const = default;
};

/// Per-layer activation vectors of one stream, already token-averaged.
struct StreamActivations {
  std::string name;
  std::vector<std::vector<float>> layers;

  bool operator==(const StreamActivations&) const = default;
};

struct ActivationRecord {
  std::string sample_id;
  std::uint8_t label = 0;  // 1 = member
  std::vector<StreamActivations> streams;
  std::uint32_t token_count = 1;

  /// Returns nullptr when the record has no such stream.
  const StreamActivations* stream(std::string_view name) const;
  bool operator==(const ActivationRecord&) const = default;
};

struct TokenLogProbRecord {
  std::string sample_id;
  std::uint8_t label = 0;
  std::vector<float> log_probs;
  std::vector<std::uint8_t> raw_bytes;

  bool operator==(const TokenLogProbRecord&) const = default;
};

struct DatasetManifest {
  std::string dataset_name;
  std::vector<StreamLayout> streams;
  std::uint32_t member_count = 0;
  std::uint32_t nonmember_count = 0;
  std::uint64_t seed = 0;
  std::uint32_t format_version = kFormatVersion;

  bool operator==(const DatasetManifest&) const = default;
};

/// Layout implied by a record (stream names and per-layer dims).
std::vector<StreamLayout> layout_of(const ActivationRecord& record);

/// Throws ValidationError naming the sample when the record violates the
/// layout or the record invariants (label, token_count, finiteness).
void validate_record(const ActivationRecord& record, std::span<const StreamLayout> layout);

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);

/// Writes the binary dump and its manifest sidecar. Nothing is written when
/// validation fails.
void write_dataset(std::span<const ActivationRecord> records, const DatasetManifest& manifest,
                   const std::filesystem::path& path);

struct Dataset {
  std::vector<ActivationRecord> records;
  DatasetManifest manifest;
};

Dataset read_dataset(const std::filesystem::path& path);

/// In-memory forms of the activation format, used by the file functions.
std::vector<std::uint8_t> encode_dataset(std::span<const ActivationRecord> records,
                                         const DatasetManifest& manifest);
/// Decodes a payload and checks it against the manifest.
std::vector<ActivationRecord> decode_dataset(std::span<const std::uint8_t> bytes,
                                             const DatasetManifest& manifest);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view text);

void write_logprobs(std::span<const TokenLogProbRecord> records,
                    const std::filesystem::path& path);
std::vector<TokenLogProbRecord> read_logprobs(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_logprobs(std::span<const TokenLogProbRecord> records);
std::vector<TokenLogProbRecord> decode_logprobs(std::span<const std::uint8_t> bytes);

/// Throws ValidationError unless log_probs is non-empty, finite and <= 0.
void validate_logprob_record(const TokenLogProbRecord& record);

struct JoinResult {
  /// (activation index, log-prob index), in activation order.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t unmatched_activations = 0;
  std::size_t unmatched_logprobs = 0;
};

/// Inner join on sample_id. Duplicate ids within either list are an error.
JoinResult join_on_sample_id(std::span<const ActivationRecord> acts,
                             std::span<const TokenLogProbRecord> lps);

}  // namespace lumia::store
