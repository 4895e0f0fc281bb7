#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tvgan/dataio.hpp"
#include "tvgan/tensor.hpp"

namespace tvgan {

using Embedding = std::vector<double>;

// Face embedder interface. Implementations must return vectors of a fixed
// dimension with finite values, deterministically for a given image.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Embedding embed(const ImageTensor& image) const = 0;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
};

// Hand-crafted features for the procedural toy faces: a 64-bin joint colour
// histogram (square-rooted) and an 8x8 grid of opponent-colour means.
class ToyEmbedder final : public Embedder {
 public:
  static constexpr int kDim = 192;
  explicit ToyEmbedder(int resolution);

  Embedding embed(const ImageTensor& image) const override;
  std::string name() const override { return "toy"; }
  int dim() const override { return kDim; }

 private:
  int resolution_;
};

std::unique_ptr<Embedder> toy_embedder(int resolution);

// sha256 (hex) of the image quantized to 8 bits: the ASCII header
// "tvgan-u8:<H>x<W>x<C>\n" followed by the HWC pixel bytes. This is the key
// used by embedding files.
std::string content_hash(const ImageTensor& image);

// Precomputed embeddings keyed by content hash, optionally backed by an
// external command. The command is run as `<command> <png path>` and must
// print the embedding as a JSON array and exit with status 0.
class ExternalEmbedder final : public Embedder {
 public:
  ExternalEmbedder(std::optional<std::filesystem::path> embedding_file,
                   std::optional<std::string> command);

  Embedding embed(const ImageTensor& image) const override;
  std::string name() const override;
  int dim() const override;  // 0 until known

  std::size_t size() const { return table_.size(); }

 private:
  Embedding run_command(const ImageTensor& image, const std::string& hash) const;
  void check_dim(const Embedding& e, const std::string& what) const;

  std::optional<std::string> command_;
  std::string source_;
  std::unordered_map<std::string, Embedding> table_;
  mutable std::unordered_map<std::string, Embedding> cache_;
  mutable int dim_ = 0;
  mutable std::mutex mutex_;
};

// "toy", "file:<path>", "cmd:<command>" or "file:<path>,cmd:<command>".
std::unique_ptr<Embedder> make_embedder(const std::string& spec, int resolution);

// Reads a JSON-lines embedding file: {"sha256": hex, "embedding": [..]}.
std::unordered_map<std::string, Embedding> read_embedding_file(const std::filesystem::path& path);

// 1 - cos(a, b), computed in double precision. Throws on zero vectors or
// dimension mismatch.
double cosine_distance(std::span<const double> a, std::span<const double> b);

struct GalleryEntry {
  std::string subject;
  Embedding embedding;
};

struct Gallery {
  std::vector<GalleryEntry> entries;
  GallerySpec spec;
  int dim = 0;

  std::size_t size() const { return entries.size(); }
};

Gallery build_gallery(const Embedder& embedder, const std::vector<PairedSample>& gallery_samples,
                      const GallerySpec& spec);

// per_image ranks gallery images and succeeds on the first correct-subject
// image; per_subject_min first collapses each subject to its closest image.
enum class RankMode { per_image, per_subject_min };

RankMode parse_rank_mode(const std::string& text);

struct RankResult {
  std::string query_subject;
  std::vector<std::string> sorted_gallery_subjects;  // ascending distance, ties by gallery order
  int rank = 0;  // pessimistic: wrong-subject ties count against the query
};

RankResult rank_of_query(std::span<const double> query, const std::string& true_subject,
                         const Gallery& gallery, RankMode mode = RankMode::per_image);

struct Query {
  Embedding embedding;
  std::string subject;
};

// Fraction of queries with rank <= k, for each k.
std::map<int, double> rank_k_accuracy(const std::vector<Query>& queries, const Gallery& gallery,
                                      const std::vector<int>& ks,
                                      RankMode mode = RankMode::per_image);

// Entry k - 1 is the rank-k accuracy for k = 1 .. M (M = ranked list length).
std::vector<double> cmc_curve(const std::vector<Query>& queries, const Gallery& gallery,
                              RankMode mode = RankMode::per_image);

// Element-wise mean of equal-length curves.
std::vector<double> average_curves(const std::vector<std::vector<double>>& curves);

}  // namespace tvgan
