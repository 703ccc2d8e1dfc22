#include "ciss/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ciss {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedFile, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename Fn>
auto parse_each(const std::filesystem::path& path, Fn&& fn) {
  const auto records = read_jsonl(path);
  std::vector<decltype(fn(records.front()))> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      out.push_back(fn(records[i]));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedFile, path.string() + ": record " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

void write_lines(const std::vector<json>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::MalformedFile, "box must be [x,y,w,h]");
  auto coord = [&](std::size_t i) { return static_cast<int>(std::lround(j.at(i).get<double>())); };
  return {coord(0), coord(1), coord(2), coord(3)};
}

json box_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

void check_csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") != std::string::npos)
    throw Error(ErrorCode::InvalidArgument, "CSV field contains a separator: " + s);
}

}  // namespace

std::vector<Detection> read_detections_jsonl(const std::filesystem::path& path) {
  return parse_each(path, [](const json& j) {
    return Detection{j.at("image_id").get<std::string>(), j.at("category").get<std::string>(),
                     box_from_json(j.at("box")), j.at("score").get<double>()};
  });
}

void write_detections_jsonl(std::span<const Detection> dets, const std::filesystem::path& path) {
  std::vector<json> records;
  for (const auto& d : dets)
    records.push_back({{"image_id", d.image_id}, {"category", d.category}, {"box", box_to_json(d.box)}, {"score", d.base_score}});
  write_lines(records, path);
}

std::vector<GroundTruth> read_ground_truth_jsonl(const std::filesystem::path& path) {
  return parse_each(path, [](const json& j) {
    return GroundTruth{j.at("image_id").get<std::string>(), j.at("category").get<std::string>(),
                       box_from_json(j.at("box")), j.value("difficult", false)};
  });
}

void write_ground_truth_jsonl(std::span<const GroundTruth> gts, const std::filesystem::path& path) {
  std::vector<json> records;
  for (const auto& g : gts)
    records.push_back({{"image_id", g.image_id}, {"category", g.category}, {"box", box_to_json(g.box)}, {"difficult", g.difficult}});
  write_lines(records, path);
}

std::vector<PairSample> read_pairs_jsonl(const std::filesystem::path& path) {
  return parse_each(path, [](const json& j) {
    PairSample p{j.at("distance").get<double>(), j.at("s1").get<double>(), j.at("s2").get<double>(),
                 j.at("l1").get<int>(), j.at("l2").get<int>(), j.value("same_label", false)};
    if (!(p.distance >= 0.0) || !(p.s1 >= 0.0 && p.s1 <= 1.0) || !(p.s2 >= 0.0 && p.s2 <= 1.0))
      throw Error(ErrorCode::MalformedFile, "pair sample out of range");
    return p;
  });
}

void write_pairs_jsonl(std::span<const PairSample> pairs, const std::filesystem::path& path) {
  std::vector<json> records;
  records.reserve(pairs.size());
  for (const auto& p : pairs)
    records.push_back({{"distance", p.distance}, {"s1", p.s1}, {"s2", p.s2}, {"l1", p.l1}, {"l2", p.l2}, {"same_label", p.same_label}});
  write_lines(records, path);
}

std::vector<PatchSample> read_patches_jsonl(const std::filesystem::path& path) {
  return parse_each(path, [](const json& j) {
    PatchSample p;
    p.categories = j.value("categories", std::vector<std::string>{});
    if (j.contains("scores"))
      for (const auto& [c, s] : j.at("scores").items()) p.scores[c] = s.get<double>();
    return p;
  });
}

void write_patches_jsonl(std::span<const PatchSample> patches, const std::filesystem::path& path) {
  std::vector<json> records;
  for (const auto& p : patches) {
    json scores = json::object();
    for (const auto& [c, s] : p.scores) scores[c] = s;
    records.push_back({{"categories", p.categories}, {"scores", scores}});
  }
  write_lines(records, path);
}

RescoredRow to_row(const RescoredDetection& r) {
  return {r.detection, r.revised_base, r.ciss_score, static_cast<int>(r.supporters.size()), r.fallback,
          r.revised_base_raw, r.ciss_raw};
}

void write_rescored_csv(std::span<const RescoredRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << kRescoredCsvHeader << '\n';
  for (const auto& r : rows) {
    check_csv_field(r.detection.image_id);
    check_csv_field(r.detection.category);
    const Box& b = r.detection.box;
    out << r.detection.image_id << ',' << r.detection.category << ',' << b.x << ',' << b.y << ',' << b.w << ','
        << b.h << ',' << format_double(r.detection.base_score) << ',' << format_double(r.revised_base) << ','
        << format_double(r.ciss_score) << ',' << r.n_supporters << ',' << (r.fallback ? 1 : 0) << ','
        << format_double(r.revised_base_raw) << ',' << format_double(r.ciss_raw) << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::vector<RescoredRow> read_rescored_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedFile, "empty CSV: " + path.string());
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) header.push_back(f);
  }
  if (header.size() < 11) throw Error(ErrorCode::MalformedFile, "rescored CSV header too short");
  const bool has_raw = header.size() >= 13;
  std::vector<RescoredRow> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != header.size())
      throw Error(ErrorCode::MalformedFile, path.string() + ":" + std::to_string(lineno) + ": wrong field count");
    try {
      RescoredRow r;
      r.detection = {f[0], f[1], {std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]), std::stoi(f[5])}, std::stod(f[6])};
      r.revised_base = std::stod(f[7]);
      r.ciss_score = std::stod(f[8]);
      r.n_supporters = std::stoi(f[9]);
      r.fallback = f[10] == "1";
      r.revised_base_raw = has_raw ? std::stod(f[11]) : r.revised_base;
      r.ciss_raw = has_raw ? std::stod(f[12]) : r.ciss_score;
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::MalformedFile, path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

}  // namespace ciss
