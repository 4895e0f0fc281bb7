#include "tvgan/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tvgan/error.hpp"
#include "tvgan/imageio.hpp"

namespace tvgan {

void to_json(nlohmann::json& j, const Metrics& m) {
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [k, v] : m.accuracies) acc[std::to_string(k)] = v;
  j = {{"split", m.split},
       {"method", m.method},
       {"protocol", to_string(m.protocol)},
       {"accuracies", acc},
       {"cmc", m.cmc}};
}

void from_json(const nlohmann::json& j, Metrics& m) {
  m.split = j.at("split").get<std::string>();
  m.method = j.at("method").get<std::string>();
  m.protocol = parse_protocol(j.at("protocol").get<std::string>());
  m.accuracies.clear();
  for (const auto& [k, v] : j.at("accuracies").items()) {
    std::size_t used = 0;
    const int rank = std::stoi(k, &used);
    if (used != k.size()) throw DecodeError("metrics: bad rank level '" + k + "'");
    m.accuracies[rank] = v.get<double>();
  }
  m.cmc = j.at("cmc").get<std::vector<double>>();
}

Metrics read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open metrics file: " + path.string());
  try {
    return nlohmann::json::parse(in).get<Metrics>();
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError("metrics file " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw DecodeError("metrics file " + path.string() + ": bad rank level");
  }
}

void write_metrics(const std::filesystem::path& path, const Metrics& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  nlohmann::ordered_json acc = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.accuracies) acc[std::to_string(k)] = v;
  const nlohmann::ordered_json j = {{"split", m.split},
                                    {"method", m.method},
                                    {"protocol", to_string(m.protocol)},
                                    {"accuracies", acc},
                                    {"cmc", m.cmc}};
  out << j.dump(2) << "\n";
}

QuerySet parse_query_set(const std::string& text) {
  if (text == "test") return QuerySet::test;
  if (text == "train") return QuerySet::train;
  if (text == "all") return QuerySet::all;
  throw InvalidArgument("unknown query set '" + text + "' (test, train or all)");
}

Metrics evaluate_split(const std::vector<PairedSample>& dataset, const DatasetSplit& split,
                       const std::string& split_name, const TransformModel& model,
                       const std::string& method, const Embedder& embedder,
                       const EvalOptions& options) {
  const auto gallery_samples = build_gallery_samples(dataset, options.gallery, options.gallery_seed);
  const Gallery gallery = build_gallery(embedder, gallery_samples, options.gallery);

  std::vector<Query> queries;
  int index = 0;
  for (const auto& s : dataset) {
    const bool in_test = split.test_subjects.count(s.subject_id) > 0;
    const bool in_train = split.train_subjects.count(s.subject_id) > 0;
    const bool take = options.queries == QuerySet::all ? (in_test || in_train)
                      : options.queries == QuerySet::test ? in_test
                                                          : in_train;
    if (!take) continue;
    const ImageTensor y = transform(model, s.thermal);
    if (!options.export_dir.empty()) {
      const std::string stem = s.thermal_path.empty()
                                   ? "query_" + std::to_string(index)
                                   : std::filesystem::path(s.thermal_path).stem().string();
      write_png(options.export_dir / (stem + ".png"), y);
    }
    ++index;
    Embedding e = embedder.embed(y);
    if (static_cast<int>(e.size()) != gallery.dim) {
      throw ShapeError("query embedding dimension " + std::to_string(e.size()) +
                       " differs from gallery dimension " + std::to_string(gallery.dim));
    }
    queries.push_back({std::move(e), s.subject_id});
  }
  if (queries.empty()) throw InvalidArgument("split " + split_name + " has no query images");

  Metrics m;
  m.split = split_name;
  m.method = method;
  m.protocol = options.gallery.protocol;
  m.accuracies = rank_k_accuracy(queries, gallery, options.ks, options.rank_mode);
  m.cmc = cmc_curve(queries, gallery, options.rank_mode);
  return m;
}

// ---------------------------------------------------------------------------

namespace {

int method_order(const std::string& m) {
  static const char* const order[] = {"plain", "patch", "pix2pix", "tvgan"};
  for (int i = 0; i < 4; ++i)
    if (m == order[i]) return i;
  return 4;
}

std::string display_name(const std::string& m) {
  if (m == "plain") return "Plain thermal";
  if (m == "patch") return "Patch-based";
  if (m == "pix2pix") return "Pix2Pix";
  if (m == "tvgan") return "TV-GAN";
  return m;
}

std::vector<std::string> sorted_methods(const std::vector<Metrics>& metrics) {
  std::vector<std::string> methods;
  for (const auto& m : metrics)
    if (std::find(methods.begin(), methods.end(), m.method) == methods.end()) methods.push_back(m.method);
  std::stable_sort(methods.begin(), methods.end(), [](const auto& a, const auto& b) {
    return method_order(a) < method_order(b);
  });
  return methods;
}

}  // namespace

ResultsTable aggregate_metrics(const std::vector<Metrics>& metrics) {
  if (metrics.empty()) throw InvalidArgument("no metrics to report");
  ResultsTable t;
  t.protocol = metrics.front().protocol;
  for (const auto& [k, v] : metrics.front().accuracies) t.ks.push_back(k);
  for (const auto& m : metrics) {
    if (m.protocol != t.protocol) {
      throw InvalidArgument("metrics mix protocols " + to_string(t.protocol) + " and " +
                            to_string(m.protocol));
    }
    std::vector<int> ks;
    for (const auto& [k, v] : m.accuracies) ks.push_back(k);
    if (ks != t.ks) throw InvalidArgument("metrics use different rank levels");
  }
  t.methods = sorted_methods(metrics);
  for (const auto& method : t.methods) {
    std::vector<double> sum(t.ks.size(), 0.0);
    int n = 0;
    for (const auto& m : metrics) {
      if (m.method != method) continue;
      ++n;
      for (std::size_t i = 0; i < t.ks.size(); ++i) sum[i] += m.accuracies.at(t.ks[i]);
    }
    for (auto& v : sum) v = 100.0 * v / n;
    t.percent.push_back(std::move(sum));
    t.n_splits.push_back(n);
  }
  return t;
}

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", value);
  return buf;
}

std::string render_csv(const ResultsTable& t) {
  std::ostringstream out;
  out << "method";
  for (int k : t.ks) out << ",rank" << k;
  out << ",n_splits\n";
  for (std::size_t i = 0; i < t.methods.size(); ++i) {
    out << t.methods[i];
    for (double v : t.percent[i]) out << "," << format_percent(v);
    out << "," << t.n_splits[i] << "\n";
  }
  return out.str();
}

std::string render_markdown(const ResultsTable& t) {
  std::ostringstream out;
  out << "| Method |";
  for (int k : t.ks) out << " Rank " << k << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < t.ks.size(); ++i) out << "---|";
  out << "\n";
  for (std::size_t i = 0; i < t.methods.size(); ++i) {
    out << "| " << display_name(t.methods[i]) << " |";
    for (double v : t.percent[i]) out << " " << format_percent(v) << " |";
    out << "\n";
  }
  out << "\nProtocol " << to_string(t.protocol) << "; average recognition accuracy (%) over ";
  const bool same = std::all_of(t.n_splits.begin(), t.n_splits.end(),
                                [&](int n) { return n == t.n_splits.front(); });
  if (same) out << t.n_splits.front() << " split(s).\n";
  else out << "a varying number of splits per method.\n";
  return out.str();
}

std::string render_cmc_csv(const std::vector<Metrics>& metrics) {
  aggregate_metrics(metrics);  // protocol and rank-level checks
  const auto methods = sorted_methods(metrics);
  std::vector<std::vector<double>> curves;
  for (const auto& method : methods) {
    std::vector<std::vector<double>> per_split;
    for (const auto& m : metrics)
      if (m.method == method) per_split.push_back(m.cmc);
    curves.push_back(average_curves(per_split));
  }
  const std::size_t length = curves.front().size();
  for (const auto& c : curves)
    if (c.size() != length) throw InvalidArgument("CMC curves differ in length across methods");
  std::ostringstream out;
  out << "rank";
  for (const auto& m : methods) out << "," << m;
  out << "\n";
  char buf[32];
  for (std::size_t r = 0; r < length; ++r) {
    out << r + 1;
    for (const auto& c : curves) {
      std::snprintf(buf, sizeof buf, "%.6f", c[r]);
      out << "," << buf;
    }
    out << "\n";
  }
  return out.str();
}

ImageTensor compose_grid(const std::vector<std::vector<ImageTensor>>& rows, int gutter) {
  if (rows.empty() || rows.front().empty()) throw InvalidArgument("grid has no images");
  const int h = rows.front().front().height(), w = rows.front().front().width();
  std::size_t cols = 0;
  for (const auto& row : rows) cols = std::max(cols, row.size());
  const int height = static_cast<int>(rows.size()) * (h + gutter) + gutter;
  const int width = static_cast<int>(cols) * (w + gutter) + gutter;
  ImageTensor grid(3, height, width, 1.0);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const ImageTensor img = to_three_channels(rows[r][c]);
      if (img.height() != h || img.width() != w) {
        throw ShapeError("grid images must share one size; got " + img.shape_string());
      }
      const int y0 = gutter + static_cast<int>(r) * (h + gutter);
      const int x0 = gutter + static_cast<int>(c) * (w + gutter);
      for (int k = 0; k < 3; ++k)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) grid.at(k, y0 + y, x0 + x) = img.at(k, y, x);
    }
  return grid;
}

}  // namespace tvgan
