#pragma once

// Photo/sketch corpora: in-memory containers, offset normalization and the
// on-disk layout
//
//   <dir>/manifest.tsv     id <TAB> labeled|unlabeled <TAB> photos/<id>.ppm
//   <dir>/sketches.ndjson  {"id": ..., "photo": ..., "points": [[dx,dy,p1,p2,p3], ...]}
//   <dir>/photos/*.ppm     binary 8-bit RGB
//
// Photos are stored at 8 bits per channel, so values that are multiples of
// 1/255 (everything the synthetic generator emits) round-trip bit-exactly.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sbir/sketch.hpp"

namespace sbir {

struct LabeledPair {
  std::string id;
  RasterImage photo;
  StrokeSequence sketch;
};

struct UnlabeledPhoto {
  std::string id;
  RasterImage photo;
};

struct Corpus {
  std::vector<LabeledPair> labeled;
  std::vector<UnlabeledPhoto> unlabeled;

  bool empty() const { return labeled.empty() && unlabeled.empty(); }
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Divides every offset by the pooled population standard deviation of all
// offsets in the set. Returns the rescaled set and the divisor.
inline std::pair<std::vector<LabeledPair>, double> normalize_offsets(const std::vector<LabeledPair>& pairs) {
  if (pairs.empty()) throw CorpusError("normalize_offsets: empty dataset");
  std::vector<const StrokeSequence*> seqs;
  for (const auto& p : pairs) seqs.push_back(&p.sketch);
  const double scale = offset_std(seqs);
  if (!(scale > 0.0)) throw CorpusError("degenerate sketch corpus");
  std::vector<LabeledPair> out = pairs;
  for (auto& p : out) p.sketch = scale_offsets(p.sketch, 1.0 / scale, static_cast<int>(p.sketch.size()));
  return {std::move(out), scale};
}

// ---------------------------------------------------------------------------
// PPM

inline void write_ppm(const std::filesystem::path& path, const RasterImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CorpusError("cannot write " + path.string());
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(3) * img.width * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw CorpusError("short write " + path.string());
}

inline RasterImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorpusError("cannot read " + path.string());
  auto token = [&]() {
    std::string t;
    while (is >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return t;
    }
    throw CorpusError(path.string() + ": truncated PPM header");
  };
  if (token() != "P6") throw CorpusError(path.string() + ": not a binary PPM (P6)");
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  if (maxval != 255 || w <= 0 || h <= 0) throw CorpusError(path.string() + ": unsupported PPM geometry");
  is.get();
  std::vector<unsigned char> buf(static_cast<std::size_t>(3) * w * h);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw CorpusError(path.string() + ": truncated PPM data");
  RasterImage img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0);
  return img;
}

// ---------------------------------------------------------------------------
// NDJSON sketches

struct SketchRecord {
  std::string id;
  std::string photo;
  StrokeSequence sketch;
};

inline std::string sketch_to_ndjson(const SketchRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["photo"] = r.photo;
  auto pts = nlohmann::json::array();
  for (const auto& p : r.sketch.points()) {
    const auto s5 = p.stroke5();
    pts.push_back({s5[0], s5[1], static_cast<int>(s5[2]), static_cast<int>(s5[3]), static_cast<int>(s5[4])});
  }
  j["points"] = std::move(pts);
  return j.dump();
}

// Parses one NDJSON line; `where` prefixes error messages.
inline SketchRecord sketch_from_ndjson(const std::string& line, const std::string& where,
                                       int max_length = kDefaultMaxLength) {
  try {
    const auto j = nlohmann::json::parse(line);
    SketchRecord r;
    r.id = j.at("id").get<std::string>();
    r.photo = j.at("photo").get<std::string>();
    std::vector<StrokePoint> pts;
    for (const auto& row : j.at("points")) {
      if (!row.is_array() || row.size() != 5) throw SketchError("point is not a 5-vector");
      pts.push_back({row[0].get<double>(), row[1].get<double>(),
                     pen_from_one_hot(row[2].get<double>(), row[3].get<double>(), row[4].get<double>())});
    }
    r.sketch = StrokeSequence(std::move(pts), max_length);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(where + ": malformed sketch record: " + e.what());
  } catch (const SketchError& e) {
    throw CorpusError(where + ": " + e.what());
  }
}

inline std::vector<SketchRecord> read_sketches(std::istream& is, const std::string& name,
                                               int max_length = kDefaultMaxLength) {
  std::vector<SketchRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(sketch_from_ndjson(line, name + ":" + std::to_string(lineno), max_length));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Directory layout

inline void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "photos");
  std::ofstream manifest(dir / "manifest.tsv");
  std::ofstream sketches(dir / "sketches.ndjson");
  if (!manifest || !sketches) throw CorpusError("cannot write corpus in " + dir.string());
  for (const auto& p : corpus.labeled) {
    const std::string rel = "photos/" + p.id + ".ppm";
    write_ppm(dir / rel, p.photo);
    manifest << p.id << "\tlabeled\t" << rel << "\n";
    sketches << sketch_to_ndjson({p.id, p.id, p.sketch}) << "\n";
  }
  for (const auto& p : corpus.unlabeled) {
    const std::string rel = "photos/" + p.id + ".ppm";
    write_ppm(dir / rel, p.photo);
    manifest << p.id << "\tunlabeled\t" << rel << "\n";
  }
}

inline Corpus load_corpus(const std::filesystem::path& dir, int max_length = kDefaultMaxLength) {
  namespace fs = std::filesystem;
  Corpus corpus;
  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw CorpusError("missing " + (dir / "manifest.tsv").string());

  struct Entry {
    std::string kind, path;
  };
  std::map<std::string, Entry> photos;
  std::vector<std::string> order;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, kind, path;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, kind, '\t') || !std::getline(ls, path))
      throw CorpusError("manifest.tsv:" + std::to_string(lineno) + ": expected id<TAB>kind<TAB>path");
    if (kind != "labeled" && kind != "unlabeled")
      throw CorpusError("manifest.tsv:" + std::to_string(lineno) + ": unknown kind '" + kind + "'");
    if (!photos.emplace(id, Entry{kind, path}).second)
      throw CorpusError("manifest.tsv:" + std::to_string(lineno) + ": duplicate id '" + id + "'");
    order.push_back(id);
  }

  std::map<std::string, StrokeSequence> by_photo;
  if (fs::exists(dir / "sketches.ndjson")) {
    std::ifstream is(dir / "sketches.ndjson");
    for (auto& r : read_sketches(is, "sketches.ndjson", max_length)) {
      auto it = photos.find(r.photo);
      if (it == photos.end()) throw CorpusError("sketch '" + r.id + "' references unknown photo '" + r.photo + "'");
      if (!by_photo.emplace(r.photo, std::move(r.sketch)).second)
        throw CorpusError("photo '" + r.photo + "' has more than one sketch");
    }
  }

  for (const auto& id : order) {
    const Entry& e = photos.at(id);
    RasterImage img = read_ppm(dir / e.path);
    if (e.kind == "labeled") {
      auto it = by_photo.find(id);
      if (it == by_photo.end()) throw CorpusError("labeled photo '" + id + "' has no sketch");
      corpus.labeled.push_back({id, std::move(img), it->second});
    } else {
      corpus.unlabeled.push_back({id, std::move(img)});
    }
  }
  return corpus;
}

}  // namespace sbir
