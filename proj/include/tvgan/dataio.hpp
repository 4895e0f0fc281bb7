#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvgan/tensor.hpp"

namespace tvgan {

// An aligned thermal/visible pair. Thermal images are single-channel,
// visible images three-channel (RGB); both in [-1, 1] and of equal size.
struct PairedSample {
  ImageTensor thermal;
  ImageTensor visible;
  std::string subject_id;
  std::string pose_tag;
  std::set<std::string> attributes;
  std::string thermal_path;
  std::string visible_path;
};

struct DatasetSplit {
  std::set<std::string> train_subjects;
  std::set<std::string> test_subjects;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const DatasetSplit& s);
void from_json(const nlohmann::json& j, DatasetSplit& s);
void write_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_split(const std::filesystem::path& path);

// Maps training subjects onto [0, N); class N is reserved for generated images.
struct IdentityEncoding {
  std::map<std::string, int> subject_to_index;
  int num_subjects = 0;

  int generated_class() const { return num_subjects; }
  int index_of(const std::string& subject) const;  // throws LookupError
  static IdentityEncoding from_subjects(const std::set<std::string>& subjects);
};

// One-hot vector of length N + 1 with the subject's index set.
std::vector<Scalar> encode_identity(const std::string& subject_id, const IdentityEncoding& enc);
// One-hot vector selecting the reserved generated class.
std::vector<Scalar> encode_generated(const IdentityEncoding& enc);

enum class Protocol { A, B };

struct GallerySpec {
  Protocol protocol = Protocol::A;
  int images_per_subject = 1;
  std::string pose_policy = "frontal-only";

  static GallerySpec protocol_a();
  static GallerySpec protocol_b();
  void validate() const;
};

Protocol parse_protocol(const std::string& text);
std::string to_string(Protocol p);

// Attribute tokens understood by the loader; others are kept with a warning.
const std::set<std::string>& known_attributes();

// Loads a JSON manifest (array of {thermal, visible, subject, pose,
// attributes}) with paths relative to the manifest directory. Images are
// resized bilinearly to resolution x resolution. Warnings (unknown
// attribute tokens) go to `warnings` when given, else to stderr.
std::vector<PairedSample> load_paired_dataset(const std::filesystem::path& manifest_path,
                                              int resolution,
                                              std::vector<std::string>* warnings = nullptr);

std::set<std::string> subjects_of(const std::vector<PairedSample>& samples);

// Seeded uniform choice of n_test subjects for the test side.
DatasetSplit make_subject_disjoint_split(const std::vector<PairedSample>& samples,
                                         int n_test_subjects, std::uint64_t seed);

// Every subject with at least one sample carrying `attribute` goes to test.
DatasetSplit make_attribute_split(const std::vector<PairedSample>& samples,
                                  const std::string& attribute);

// Visible-only gallery entries covering every subject images_per_subject
// times. Protocol A takes the first frontal sample of each subject; protocol
// B takes one sample each of a seeded choice of distinct poses.
std::vector<PairedSample> build_gallery_samples(const std::vector<PairedSample>& samples,
                                                const GallerySpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentOp { hflip, rotate, crop };
using AugmentSet = std::set<AugmentOp>;

AugmentOp parse_augment_op(const std::string& text);
std::string to_string(AugmentOp op);

inline constexpr double kMaxRotationDegrees = 10.0;
inline constexpr double kMinCropFraction = 0.875;

// A single geometric transform: optional horizontal flip, rotation about the
// image centre, then a crop window (side fraction and normalized offset)
// resized back to the original size.
struct AugmentParams {
  bool flip = false;
  double angle_degrees = 0.0;
  double crop_fraction = 1.0;
  double crop_offset_x = 0.0;  // in [0, 1] of the free margin
  double crop_offset_y = 0.0;

  bool identity() const { return !flip && angle_degrees == 0.0 && crop_fraction == 1.0; }
};

AugmentParams draw_augment_params(const AugmentSet& ops, std::uint64_t seed);
ImageTensor apply_geometry(const ImageTensor& image, AugmentParams params);
// Applies the same seeded transform to both images of the pair.
PairedSample augment(const PairedSample& sample, const AugmentSet& ops, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Toy data

// Procedural face-like pairs. Each subject carries a glyph whose position,
// shape and hue identify it; the thermal side is a blurred, contrast-remapped
// luminance rendition of the same geometry. Every fourth subject (index 1
// mod 4) wears eyeglasses.
std::vector<PairedSample> synthesize_toy_dataset(int n_subjects, int n_per_subject, int resolution,
                                                 std::uint64_t seed);

// Writes PNGs plus manifest.json under `dir` (paths relative to it).
void write_toy_dataset(const std::vector<PairedSample>& samples, const std::filesystem::path& dir);

}  // namespace tvgan
