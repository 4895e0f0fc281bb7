#include "tvgan/recog.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "tvgan/error.hpp"
#include "tvgan/hash.hpp"
#include "tvgan/imageio.hpp"

namespace tvgan {

namespace {

constexpr int kLevels = 4;
constexpr int kGrid = 8;
constexpr double kHistogramWeight = 1.0;
constexpr double kGridWeight = 2.0;

int level_of(double v) {
  const int q = static_cast<int>(std::floor((v + 1.0) * 0.5 * kLevels));
  return std::clamp(q, 0, kLevels - 1);
}

Embedding parse_embedding(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw DecodeError(what + ": embedding must be a non-empty array");
  Embedding e;
  e.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw DecodeError(what + ": embedding entries must be numbers");
    e.push_back(v.get<double>());
  }
  for (double v : e)
    if (!std::isfinite(v)) throw DecodeError(what + ": non-finite embedding value");
  return e;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out.push_back(c);
  }
  return out + "'";
}

}  // namespace

ToyEmbedder::ToyEmbedder(int resolution) : resolution_(resolution) {
  if (resolution < kGrid) throw InvalidArgument("toy embedder resolution must be >= 8");
}

Embedding ToyEmbedder::embed(const ImageTensor& image) const {
  if (image.height() != resolution_ || image.width() != resolution_) {
    throw ShapeError("toy embedder expects " + std::to_string(resolution_) + "x" +
                     std::to_string(resolution_) + " images, got " + image.shape_string());
  }
  const ImageTensor rgb = image.channels() == 3 ? image : to_three_channels(image);
  const int h = rgb.height(), w = rgb.width();
  std::array<double, kLevels * kLevels * kLevels> hist{};
  std::array<double, kGrid * kGrid * 2> grid{};
  std::array<int, kGrid * kGrid> cell_count{};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r = rgb.at(0, y, x), g = rgb.at(1, y, x), b = rgb.at(2, y, x);
      hist[(level_of(r) * kLevels + level_of(g)) * kLevels + level_of(b)] += 1.0;
      const int cell = (y * kGrid / h) * kGrid + x * kGrid / w;
      grid[2 * cell] += r - g;
      grid[2 * cell + 1] += b - 0.5 * (r + g);
      ++cell_count[cell];
    }
  Embedding e;
  e.reserve(kDim);
  const double total = static_cast<double>(h) * w;
  for (double c : hist) e.push_back(kHistogramWeight * std::sqrt(c / total));
  for (int cell = 0; cell < kGrid * kGrid; ++cell) {
    e.push_back(kGridWeight * grid[2 * cell] / cell_count[cell]);
    e.push_back(kGridWeight * grid[2 * cell + 1] / cell_count[cell]);
  }
  return e;
}

std::unique_ptr<Embedder> toy_embedder(int resolution) {
  return std::make_unique<ToyEmbedder>(resolution);
}

std::string content_hash(const ImageTensor& image) {
  const auto pixels = to_u8_hwc(image);
  std::string bytes = "tvgan-u8:" + std::to_string(image.height()) + "x" +
                      std::to_string(image.width()) + "x" + std::to_string(image.channels()) + "\n";
  bytes.append(pixels.begin(), pixels.end());
  return sha256_hex(bytes);
}

std::unordered_map<std::string, Embedding> read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open embedding file: " + path.string());
  std::unordered_map<std::string, Embedding> table;
  std::string line;
  std::size_t dim = 0;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DecodeError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("sha256") || !j.contains("embedding") ||
        !j["sha256"].is_string()) {
      throw DecodeError(where + ": expected {\"sha256\", \"embedding\"}");
    }
    Embedding e = parse_embedding(j["embedding"], where);
    if (dim == 0) dim = e.size();
    if (e.size() != dim) {
      throw ShapeError(where + ": embedding dimension " + std::to_string(e.size()) +
                       " differs from " + std::to_string(dim));
    }
    table[j["sha256"].get<std::string>()] = std::move(e);
  }
  return table;
}

ExternalEmbedder::ExternalEmbedder(std::optional<std::filesystem::path> embedding_file,
                                   std::optional<std::string> command)
    : command_(std::move(command)) {
  if (!embedding_file && !command_) {
    throw InvalidArgument("external embedder needs an embedding file or a command");
  }
  if (embedding_file) {
    table_ = read_embedding_file(*embedding_file);
    if (!table_.empty()) dim_ = static_cast<int>(table_.begin()->second.size());
    source_ = "file:" + embedding_file->string();
  }
  if (command_) source_ += (source_.empty() ? "cmd:" : ",cmd:") + *command_;
}

std::string ExternalEmbedder::name() const { return source_; }

int ExternalEmbedder::dim() const {
  std::lock_guard lock(mutex_);
  return dim_;
}

void ExternalEmbedder::check_dim(const Embedding& e, const std::string& what) const {
  if (dim_ == 0) dim_ = static_cast<int>(e.size());
  if (static_cast<int>(e.size()) != dim_) {
    throw ShapeError(what + ": embedding dimension " + std::to_string(e.size()) +
                     ", expected " + std::to_string(dim_));
  }
}

Embedding ExternalEmbedder::run_command(const ImageTensor& image, const std::string& hash) const {
  const auto dir = std::filesystem::temp_directory_path() / "tvgan-embed";
  std::filesystem::create_directories(dir);
  const auto png = dir / (hash + ".png");
  write_png(png, image);
  const std::string cmd = *command_ + " " + shell_quote(png.string());
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw LoadError("cannot run embedder command: " + *command_);
  std::string output;
  char buffer[4096];
  while (std::size_t n = std::fread(buffer, 1, sizeof buffer, pipe)) output.append(buffer, n);
  const int status = ::pclose(pipe);
  std::error_code ignored;
  std::filesystem::remove(png, ignored);
  if (status != 0) {
    throw LoadError("embedder command failed (status " + std::to_string(status) +
                    ") for image " + hash);
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(output);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError("embedder command output for image " + hash + ": " + e.what());
  }
  return parse_embedding(j, "embedder command output for image " + hash);
}

Embedding ExternalEmbedder::embed(const ImageTensor& image) const {
  const std::string hash = content_hash(image);
  if (auto it = table_.find(hash); it != table_.end()) return it->second;
  std::lock_guard lock(mutex_);
  if (auto it = cache_.find(hash); it != cache_.end()) return it->second;
  if (!command_) throw LookupError("no embedding for image " + hash + " and no endpoint configured");
  Embedding e = run_command(image, hash);
  check_dim(e, "embedder command output for image " + hash);
  cache_[hash] = e;
  return e;
}

std::unique_ptr<Embedder> make_embedder(const std::string& spec, int resolution) {
  if (spec == "toy") return toy_embedder(resolution);
  std::optional<std::filesystem::path> file;
  std::optional<std::string> command;
  std::string rest = spec;
  if (rest.starts_with("file:")) {
    const auto cut = rest.find(",cmd:");
    file = rest.substr(5, cut == std::string::npos ? std::string::npos : cut - 5);
    rest = cut == std::string::npos ? "" : rest.substr(cut + 1);
  }
  if (rest.starts_with("cmd:")) {
    command = rest.substr(4);
    rest.clear();
  }
  if (!rest.empty() || (file && file->empty()) || (command && command->empty()) ||
      (!file && !command)) {
    throw InvalidArgument("embedder spec must be toy, file:<path>, cmd:<command> or "
                          "file:<path>,cmd:<command>; got '" + spec + "'");
  }
  return std::make_unique<ExternalEmbedder>(file, command);
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_distance: dimension mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine_distance: zero vector");
  const double d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(d, 0.0, 2.0);
}

Gallery build_gallery(const Embedder& embedder, const std::vector<PairedSample>& gallery_samples,
                      const GallerySpec& spec) {
  spec.validate();
  if (gallery_samples.empty()) throw InvalidArgument("gallery is empty");
  Gallery gallery;
  gallery.spec = spec;
  std::map<std::string, int> per_subject;
  for (const auto& s : gallery_samples) {
    Embedding e = embedder.embed(s.visible);
    if (gallery.dim == 0) gallery.dim = static_cast<int>(e.size());
    if (static_cast<int>(e.size()) != gallery.dim || (embedder.dim() > 0 && embedder.dim() != gallery.dim)) {
      throw ShapeError("embedder " + embedder.name() + " returned dimension " +
                       std::to_string(e.size()) + ", expected " + std::to_string(gallery.dim));
    }
    ++per_subject[s.subject_id];
    gallery.entries.push_back({s.subject_id, std::move(e)});
  }
  for (const auto& [subject, n] : per_subject) {
    if (n != spec.images_per_subject) {
      throw InvalidArgument("gallery subject " + subject + " has " + std::to_string(n) +
                            " images, protocol expects " + std::to_string(spec.images_per_subject));
    }
  }
  return gallery;
}

RankMode parse_rank_mode(const std::string& text) {
  if (text == "per-image" || text == "per_image") return RankMode::per_image;
  if (text == "per-subject-min" || text == "per_subject_min") return RankMode::per_subject_min;
  throw InvalidArgument("unknown rank mode '" + text + "' (per-image or per-subject-min)");
}

RankResult rank_of_query(std::span<const double> query, const std::string& true_subject,
                         const Gallery& gallery, RankMode mode) {
  if (gallery.entries.empty()) throw InvalidArgument("gallery is empty");
  // Candidates: gallery images, or subjects collapsed to their closest image.
  std::vector<std::string> subjects;
  std::vector<double> dist;
  if (mode == RankMode::per_image) {
    for (const auto& e : gallery.entries) {
      subjects.push_back(e.subject);
      dist.push_back(cosine_distance(query, e.embedding));
    }
  } else {
    std::map<std::string, std::size_t> slot;
    for (const auto& e : gallery.entries) {
      const double d = cosine_distance(query, e.embedding);
      auto [it, inserted] = slot.emplace(e.subject, subjects.size());
      if (inserted) {
        subjects.push_back(e.subject);
        dist.push_back(d);
      } else {
        dist[it->second] = std::min(dist[it->second], d);
      }
    }
  }
  double best = 0.0;
  bool found = false;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (subjects[i] == true_subject && (!found || dist[i] < best)) {
      best = dist[i];
      found = true;
    }
  }
  if (!found) throw LookupError("query subject " + true_subject + " is not in the gallery");

  RankResult result;
  result.query_subject = true_subject;
  result.rank = 1;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] < best || (dist[i] == best && subjects[i] != true_subject)) ++result.rank;
  }
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  result.sorted_gallery_subjects.reserve(order.size());
  for (auto i : order) result.sorted_gallery_subjects.push_back(subjects[i]);
  return result;
}

namespace {

std::vector<int> query_ranks(const std::vector<Query>& queries, const Gallery& gallery,
                             RankMode mode, std::size_t* list_length) {
  if (queries.empty()) throw InvalidArgument("query set is empty");
  std::vector<int> ranks;
  ranks.reserve(queries.size());
  for (const auto& q : queries) {
    auto r = rank_of_query(q.embedding, q.subject, gallery, mode);
    *list_length = r.sorted_gallery_subjects.size();
    ranks.push_back(r.rank);
  }
  return ranks;
}

}  // namespace

std::map<int, double> rank_k_accuracy(const std::vector<Query>& queries, const Gallery& gallery,
                                      const std::vector<int>& ks, RankMode mode) {
  if (ks.empty()) throw InvalidArgument("rank levels are empty");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1) throw InvalidArgument("rank levels must be >= 1");
    if (i > 0 && ks[i] <= ks[i - 1]) throw InvalidArgument("rank levels must be strictly ascending");
  }
  std::size_t m = 0;
  const auto ranks = query_ranks(queries, gallery, mode, &m);
  std::map<int, double> acc;
  for (int k : ks) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](int r) { return r <= k; });
    acc[k] = static_cast<double>(hits) / ranks.size();
  }
  return acc;
}

std::vector<double> cmc_curve(const std::vector<Query>& queries, const Gallery& gallery,
                              RankMode mode) {
  std::size_t m = 0;
  const auto ranks = query_ranks(queries, gallery, mode, &m);
  std::vector<double> hits(m, 0.0);
  for (int r : ranks) hits[r - 1] += 1.0;
  std::vector<double> curve(m);
  double running = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    running += hits[k];
    curve[k] = running / ranks.size();
  }
  return curve;
}

std::vector<double> average_curves(const std::vector<std::vector<double>>& curves) {
  if (curves.empty()) throw InvalidArgument("no curves to average");
  const std::size_t m = curves.front().size();
  std::vector<double> mean(m, 0.0);
  for (const auto& c : curves) {
    if (c.size() != m) throw ShapeError("curves differ in length");
    for (std::size_t i = 0; i < m; ++i) mean[i] += c[i];
  }
  for (auto& v : mean) v /= curves.size();
  return mean;
}

}  // namespace tvgan
