#include "lumia/activation_store.hpp"

#include <cmath>
#include <unordered_map>

#include "binary_io.hpp"
#include "json.hpp"
#include "lumia/error.hpp"

namespace lumia::store {
namespace {

using detail::ByteReader;
using detail::ByteWriter;
using json = nlohmann::json;

void check_magic(ByteReader& in, std::string_view magic) {
  if (in.remaining() < magic.size() + 4) {
    throw FormatError("file too short for a " + std::string(magic) + " header");
  }
  std::string got = in.string(magic.size());
  if (got != magic) {
    throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
  }
  std::uint32_t version = in.u32();
  if (version != kFormatVersion) {
    throw FormatError("unsupported " + std::string(magic) + " format version " +
                      std::to_string(version) + " (expected " +
                      std::to_string(kFormatVersion) + ")");
  }
}

std::string layout_string(std::span<const StreamLayout> layout) {
  std::string s;
  for (const auto& st : layout) {
    if (!s.empty()) s += "; ";
    s += st.name + "[";
    for (std::size_t i = 0; i < st.layer_dims.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(st.layer_dims[i]);
    }
    s += "]";
  }
  return s;
}

}  // namespace

const StreamActivations* ActivationRecord::stream(std::string_view name) const {
  for (const auto& s : streams) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::vector<StreamLayout> layout_of(const ActivationRecord& record) {
  std::vector<StreamLayout> layout;
  for (const auto& s : record.streams) {
    StreamLayout st{s.name, {}};
    for (const auto& layer : s.layers) st.layer_dims.push_back(static_cast<std::uint32_t>(layer.size()));
    layout.push_back(std::move(st));
  }
  return layout;
}

void validate_record(const ActivationRecord& record, std::span<const StreamLayout> layout) {
  const auto fail = [&](const std::string& why) {
    throw ValidationError("record '" + record.sample_id + "': " + why);
  };
  if (record.label > 1) fail("label must be 0 or 1");
  if (record.token_count < 1) fail("token_count must be >= 1");
  if (record.streams.size() != layout.size()) fail("stream count differs from layout");
  for (std::size_t s = 0; s < layout.size(); ++s) {
    const auto& st = record.streams[s];
    if (st.name != layout[s].name) fail("stream '" + st.name + "' where layout has '" + layout[s].name + "'");
    if (st.layers.size() != layout[s].layer_count()) fail("layer count mismatch in stream " + st.name);
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      if (st.layers[l].size() != layout[s].layer_dims[l]) {
        fail("dim mismatch at stream " + st.name + " layer " + std::to_string(l));
      }
      for (float v : st.layers[l]) {
        if (!std::isfinite(v)) fail("non-finite activation at stream " + st.name + " layer " + std::to_string(l));
      }
    }
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p += ".manifest.json";
  return p;
}

std::vector<std::uint8_t> encode_dataset(std::span<const ActivationRecord> records,
                                         const DatasetManifest& manifest) {
  if (manifest.format_version != kFormatVersion) {
    throw ValidationError("manifest format_version " + std::to_string(manifest.format_version) +
                          " is not writable");
  }
  if (manifest.streams.empty()) throw ValidationError("manifest declares no streams");
  if (manifest.streams.size() > 0xFFFF) throw ValidationError("too many streams");
  if (manifest.member_count < 2 || manifest.nonmember_count < 2) {
    throw ValidationError("manifest needs at least 2 members and 2 non-members");
  }

  std::uint32_t members = 0;
  std::uint32_t nonmembers = 0;
  for (const auto& r : records) {
    validate_record(r, manifest.streams);
    (r.label == 1 ? members : nonmembers)++;
  }
  if (members != manifest.member_count || nonmembers != manifest.nonmember_count) {
    throw ValidationError("count mismatch: manifest declares " + std::to_string(manifest.member_count) +
                          " members / " + std::to_string(manifest.nonmember_count) +
                          " non-members, records hold " + std::to_string(members) + " / " +
                          std::to_string(nonmembers));
  }

  ByteWriter out;
  out.bytes(kActivationMagic);
  out.u32(kFormatVersion);
  out.u16(static_cast<std::uint16_t>(manifest.streams.size()));
  for (const auto& st : manifest.streams) {
    out.short_string(st.name, "stream name");
    if (st.layer_count() > 0xFFFF) throw ValidationError("too many layers in stream " + st.name);
    out.u16(static_cast<std::uint16_t>(st.layer_count()));
    for (auto d : st.layer_dims) out.u32(d);
  }
  out.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    out.short_string(r.sample_id, "sample id");
    out.u8(r.label);
    out.u32(r.token_count);
    for (const auto& st : r.streams) {
      for (const auto& layer : st.layers) {
        for (float v : layer) out.f32(v);
      }
    }
  }
  return out.buffer();
}

std::vector<ActivationRecord> decode_dataset(std::span<const std::uint8_t> bytes,
                                             const DatasetManifest& manifest) {
  ByteReader in(bytes);
  check_magic(in, kActivationMagic);
  if (manifest.format_version != kFormatVersion) {
    throw FormatError("manifest format_version " + std::to_string(manifest.format_version) +
                      " does not match payload");
  }

  std::vector<StreamLayout> layout;
  const std::uint16_t stream_count = in.u16();
  std::size_t floats_per_record = 0;
  for (std::uint16_t s = 0; s < stream_count; ++s) {
    StreamLayout st;
    st.name = in.string(in.u16());
    const std::uint16_t layers = in.u16();
    in.require(std::size_t{layers} * 4, "layer dims");
    for (std::uint16_t l = 0; l < layers; ++l) {
      st.layer_dims.push_back(in.u32());
      floats_per_record += st.layer_dims.back();
    }
    layout.push_back(std::move(st));
  }
  if (layout != manifest.streams) {
    throw ValidationError("payload layout {" + layout_string(layout) +
                          "} differs from manifest layout {" + layout_string(manifest.streams) + "}");
  }

  const std::size_t count_offset = in.offset();
  const std::uint32_t record_count = in.u32();
  // Smallest possible record: empty id, label, token_count, payload.
  const std::uint64_t min_record = 2 + 1 + 4 + 4ull * floats_per_record;
  if (min_record * record_count > in.remaining()) {
    throw CorruptionError("record_count " + std::to_string(record_count) +
                              " exceeds the remaining payload",
                          count_offset);
  }
  const std::uint64_t declared = std::uint64_t{manifest.member_count} + manifest.nonmember_count;
  if (record_count != declared) {
    throw ValidationError("count mismatch: manifest declares " + std::to_string(declared) +
                          " records, payload header holds " + std::to_string(record_count));
  }

  std::vector<ActivationRecord> records;
  records.reserve(record_count);
  std::uint32_t members = 0;
  for (std::uint32_t i = 0; i < record_count; ++i) {
    ActivationRecord r;
    r.sample_id = in.string(in.u16());
    const std::size_t label_offset = in.offset();
    r.label = in.u8();
    if (r.label > 1) throw CorruptionError("label byte " + std::to_string(r.label), label_offset);
    r.token_count = in.u32();
    for (const auto& st : layout) {
      StreamActivations acts{st.name, {}};
      acts.layers.reserve(st.layer_count());
      for (auto d : st.layer_dims) {
        in.require(std::size_t{d} * 4, "activation vector");
        std::vector<float> v(d);
        in.f32_array(v);
        acts.layers.push_back(std::move(v));
      }
      r.streams.push_back(std::move(acts));
    }
    validate_record(r, layout);
    members += r.label;
    records.push_back(std::move(r));
  }
  if (in.remaining() != 0) {
    throw CorruptionError("trailing bytes after last record", in.offset());
  }
  if (members != manifest.member_count) {
    throw ValidationError("count mismatch: manifest declares " + std::to_string(manifest.member_count) +
                          " members, payload holds " + std::to_string(members));
  }
  return records;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json j;
  j["dataset"] = manifest.dataset_name;
  j["format_version"] = manifest.format_version;
  j["member_count"] = manifest.member_count;
  j["nonmember_count"] = manifest.nonmember_count;
  j["seed"] = manifest.seed;
  json streams = json::array();
  for (const auto& st : manifest.streams) {
    streams.push_back({{"name", st.name}, {"layer_dims", st.layer_dims}});
  }
  j["streams"] = std::move(streams);
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    DatasetManifest m;
    m.dataset_name = j.at("dataset").get<std::string>();
    m.format_version = j.at("format_version").get<std::uint32_t>();
    m.member_count = j.at("member_count").get<std::uint32_t>();
    m.nonmember_count = j.at("nonmember_count").get<std::uint32_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& st : j.at("streams")) {
      m.streams.push_back({st.at("name").get<std::string>(),
                           st.at("layer_dims").get<std::vector<std::uint32_t>>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
}

void write_dataset(std::span<const ActivationRecord> records, const DatasetManifest& manifest,
                   const std::filesystem::path& path) {
  const auto bytes = encode_dataset(records, manifest);
  detail::write_file(path, bytes);
  detail::write_text_file(manifest_path(path), manifest_to_json(manifest));
}

Dataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  Dataset ds;
  ds.manifest = manifest_from_json(detail::read_text_file(manifest_path(path)));
  ds.records = decode_dataset(bytes, ds.manifest);
  return ds;
}

void validate_logprob_record(const TokenLogProbRecord& record) {
  if (record.label > 1) throw ValidationError("record '" + record.sample_id + "': label must be 0 or 1");
  if (record.log_probs.empty()) throw ValidationError("record '" + record.sample_id + "': empty log_probs");
  for (float v : record.log_probs) {
    if (!std::isfinite(v) || v > 0.0f) {
      throw ValidationError("record '" + record.sample_id + "': log-prob must be finite and <= 0");
    }
  }
}

std::vector<std::uint8_t> encode_logprobs(std::span<const TokenLogProbRecord> records) {
  ByteWriter out;
  out.bytes(kLogProbMagic);
  out.u32(kFormatVersion);
  out.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    validate_logprob_record(r);
    out.short_string(r.sample_id, "sample id");
    out.u8(r.label);
    out.u32(static_cast<std::uint32_t>(r.log_probs.size()));
    for (float v : r.log_probs) out.f32(v);
    out.u32(static_cast<std::uint32_t>(r.raw_bytes.size()));
    out.bytes(r.raw_bytes);
  }
  return out.buffer();
}

std::vector<TokenLogProbRecord> decode_logprobs(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  check_magic(in, kLogProbMagic);
  const std::size_t count_offset = in.offset();
  const std::uint32_t count = in.u32();
  // id_len + label + count + one float + raw_len
  if (std::uint64_t{count} * 15 > in.remaining()) {
    throw CorruptionError("record_count " + std::to_string(count) + " exceeds the remaining payload",
                          count_offset);
  }
  std::vector<TokenLogProbRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TokenLogProbRecord r;
    r.sample_id = in.string(in.u16());
    r.label = in.u8();
    const std::uint32_t n = in.u32();
    in.require(std::size_t{n} * 4, "log-prob array");
    r.log_probs.resize(n);
    in.f32_array(r.log_probs);
    r.raw_bytes = in.raw(in.u32());
    validate_logprob_record(r);
    records.push_back(std::move(r));
  }
  if (in.remaining() != 0) throw CorruptionError("trailing bytes after last record", in.offset());
  return records;
}

void write_logprobs(std::span<const TokenLogProbRecord> records, const std::filesystem::path& path) {
  detail::write_file(path, encode_logprobs(records));
}

std::vector<TokenLogProbRecord> read_logprobs(const std::filesystem::path& path) {
  return decode_logprobs(detail::read_file(path));
}

JoinResult join_on_sample_id(std::span<const ActivationRecord> acts,
                             std::span<const TokenLogProbRecord> lps) {
  std::unordered_map<std::string_view, std::size_t> lp_index;
  lp_index.reserve(lps.size());
  for (std::size_t i = 0; i < lps.size(); ++i) {
    if (!lp_index.emplace(lps[i].sample_id, i).second) {
      throw ValidationError("duplicate sample_id '" + lps[i].sample_id + "' in log-prob records");
    }
  }
  std::unordered_map<std::string_view, std::size_t> seen;
  seen.reserve(acts.size());
  JoinResult out;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (!seen.emplace(acts[i].sample_id, i).second) {
      throw ValidationError("duplicate sample_id '" + acts[i].sample_id + "' in activation records");
    }
    auto it = lp_index.find(acts[i].sample_id);
    if (it == lp_index.end()) {
      ++out.unmatched_activations;
    } else {
      out.pairs.emplace_back(i, it->second);
    }
  }
  out.unmatched_logprobs = lps.size() - out.pairs.size();
  return out;
}

}  // namespace lumia::store
