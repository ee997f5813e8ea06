#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "v2v/tensor.hpp"
#include "v2v/tensor_io.hpp"

namespace v2v {

/// One video with its ground truth. Segmentation labels are stored as floats.
struct ClipSample {
  Tensor clip;      // [3,L,H,W] in [0,1]
  Tensor gt_flow;   // [2,L,H,W] px/frame
  Tensor gt_seg;    // [L,H,W] class ids
  Tensor gt_color;  // [3,L,H,W]
  std::string id;
};

struct ManifestEntry {
  std::string id;
  std::filesystem::path clip, flow, seg, color;
};

/// Tab-separated "id clip flow seg color" lines. Relative paths are resolved
/// against the manifest's directory.
struct Manifest {
  std::filesystem::path dir;
  std::vector<ManifestEntry> entries;
};

namespace detail {

// Paths inside the manifest's directory are stored relative to it, anything
// else as an absolute path.
inline std::string manifest_path_str(const std::filesystem::path& p, const std::filesystem::path& dir) {
  const auto abs = std::filesystem::absolute(p).lexically_normal();
  const auto rel = abs.lexically_relative(std::filesystem::absolute(dir).lexically_normal());
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return abs.generic_string();
}

}  // namespace detail

inline std::string encode_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& dir) {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << e.id << '\t' << detail::manifest_path_str(e.clip, dir) << '\t' << detail::manifest_path_str(e.flow, dir)
       << '\t' << detail::manifest_path_str(e.seg, dir) << '\t' << detail::manifest_path_str(e.color, dir) << '\n';
  }
  return os.str();
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  const std::string text = encode_manifest(entries, path.parent_path());
  detail::write_file(path, std::vector<char>(text.begin(), text.end()));
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  Manifest m;
  m.dir = std::filesystem::absolute(path).parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      cols.push_back(line.substr(start, tab - start));
    cols.push_back(line.substr(start));
    if (cols.size() != 5)
      throw Error(ErrorCode::InvalidConfig, path.string() + ":" + std::to_string(lineno) + ": expected 5 columns, got " +
                                                std::to_string(cols.size()));
    auto resolve = [&](const std::string& s) {
      std::filesystem::path p(s);
      return p.is_relative() ? m.dir / p : p;
    };
    m.entries.push_back({cols[0], resolve(cols[1]), resolve(cols[2]), resolve(cols[3]), resolve(cols[4])});
  }
  return m;
}

inline ClipSample load_sample(const ManifestEntry& e) {
  ClipSample s{tensor_read(e.clip), tensor_read(e.flow), tensor_read(e.seg), tensor_read(e.color), e.id};
  const Shape& c = s.clip.shape();
  if (c.rank() != 4 || c[0] != 3)
    throw Error(ErrorCode::ShapeMismatch, e.id + ": clip must be [3,L,H,W], got " + c.str());
  const std::int64_t L = c[1], H = c[2], W = c[3];
  if (!(s.gt_flow.shape() == Shape{2, L, H, W}) || !(s.gt_seg.shape() == Shape{L, H, W}) ||
      !(s.gt_color.shape() == Shape{3, L, H, W}))
    throw Error(ErrorCode::ShapeMismatch, e.id + ": ground truth does not match clip " + c.str());
  return s;
}

inline std::vector<ClipSample> load_dataset(const Manifest& m) {
  std::vector<ClipSample> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_sample(e));
  return out;
}

}  // namespace v2v
