#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvgan/dataio.hpp"
#include "tvgan/recog.hpp"
#include "tvgan/train.hpp"

namespace tvgan {

// Per-split identification results for one method.
struct Metrics {
  std::string split;
  std::string method;
  Protocol protocol = Protocol::A;
  std::map<int, double> accuracies;  // fractions in [0, 1]
  std::vector<double> cmc;
};

void to_json(nlohmann::json& j, const Metrics& m);
void from_json(const nlohmann::json& j, Metrics& m);
Metrics read_metrics(const std::filesystem::path& path);
void write_metrics(const std::filesystem::path& path, const Metrics& m);

enum class QuerySet { test, train, all };
QuerySet parse_query_set(const std::string& text);

struct EvalOptions {
  GallerySpec gallery = GallerySpec::protocol_a();
  std::vector<int> ks = {1, 3, 5, 7};
  RankMode rank_mode = RankMode::per_image;
  QuerySet queries = QuerySet::test;
  std::uint64_t gallery_seed = 0;
  std::filesystem::path export_dir;  // transformed queries are written here when set
};

// Transforms the selected thermal queries, embeds them and the visible
// gallery (every subject of the dataset) and ranks each query.
Metrics evaluate_split(const std::vector<PairedSample>& dataset, const DatasetSplit& split,
                       const std::string& split_name, const TransformModel& model,
                       const std::string& method, const Embedder& embedder,
                       const EvalOptions& options);

// ---------------------------------------------------------------------------
// Reporting

struct ResultsTable {
  Protocol protocol = Protocol::A;
  std::vector<int> ks;
  std::vector<std::string> methods;          // canonical order: plain, patch, pix2pix, tvgan, others
  std::vector<std::vector<double>> percent;  // [method][k], mean over splits
  std::vector<int> n_splits;                 // per method
};

// Averages metrics per method. Mixed protocols or rank levels are errors.
ResultsTable aggregate_metrics(const std::vector<Metrics>& metrics);

std::string render_csv(const ResultsTable& table);
std::string render_markdown(const ResultsTable& table);
std::string format_percent(double value);  // one decimal place

// Rank column followed by one averaged CMC column per method.
std::string render_cmc_csv(const std::vector<Metrics>& metrics);

// Lays out rows of equally sized images with a white gutter. Single-channel
// images are replicated to three channels.
ImageTensor compose_grid(const std::vector<std::vector<ImageTensor>>& rows, int gutter = 2);

}  // namespace tvgan
