#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ciss/eval.hpp"
#include "ciss/model.hpp"
#include "ciss/rescore.hpp"

namespace ciss {

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);

// JSON lines: {"image_id","category","box":[x,y,w,h],"score"}
std::vector<Detection> read_detections_jsonl(const std::filesystem::path& path);
void write_detections_jsonl(std::span<const Detection> dets, const std::filesystem::path& path);

// JSON lines: {"image_id","category","box":[x,y,w,h],"difficult"}
std::vector<GroundTruth> read_ground_truth_jsonl(const std::filesystem::path& path);
void write_ground_truth_jsonl(std::span<const GroundTruth> gts, const std::filesystem::path& path);

// JSON lines: {"distance","s1","s2","l1","l2","same_label"}
std::vector<PairSample> read_pairs_jsonl(const std::filesystem::path& path);
void write_pairs_jsonl(std::span<const PairSample> pairs, const std::filesystem::path& path);

// JSON lines: {"categories":[...],"scores":{category: score}}
std::vector<PatchSample> read_patches_jsonl(const std::filesystem::path& path);
void write_patches_jsonl(std::span<const PatchSample> patches, const std::filesystem::path& path);

/// One row of the rescored CSV.
struct RescoredRow {
  Detection detection;
  double revised_base = 0.0;
  double ciss_score = 0.0;
  int n_supporters = 0;
  bool fallback = false;
  double revised_base_raw = 0.0;
  double ciss_raw = 0.0;
};

RescoredRow to_row(const RescoredDetection& r);

inline constexpr const char* kRescoredCsvHeader =
    "image_id,category,x,y,w,h,base_score,revised_base,ciss_score,n_supporters,fallback_flag,"
    "revised_base_raw,ciss_raw";

void write_rescored_csv(std::span<const RescoredRow> rows, const std::filesystem::path& path);
std::vector<RescoredRow> read_rescored_csv(const std::filesystem::path& path);

}  // namespace ciss
