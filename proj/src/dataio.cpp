#include "tvgan/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include "tvgan/error.hpp"
#include "tvgan/imageio.hpp"
#include "tvgan/rng.hpp"

namespace tvgan {

// ---------------------------------------------------------------------------
// Splits and identity encoding

void to_json(nlohmann::json& j, const DatasetSplit& s) {
  j = {{"seed", s.seed},
       {"train", std::vector<std::string>(s.train_subjects.begin(), s.train_subjects.end())},
       {"test", std::vector<std::string>(s.test_subjects.begin(), s.test_subjects.end())}};
}

void from_json(const nlohmann::json& j, DatasetSplit& s) {
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto train = j.at("train").get<std::vector<std::string>>();
  const auto test = j.at("test").get<std::vector<std::string>>();
  s.train_subjects = {train.begin(), train.end()};
  s.test_subjects = {test.begin(), test.end()};
  for (const auto& t : s.test_subjects) {
    if (s.train_subjects.contains(t)) throw DecodeError("split lists subject '" + t + "' on both sides");
  }
}

void write_split(const std::filesystem::path& path, const DatasetSplit& split) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write split file " + path.string());
  out << nlohmann::json(split).dump(2) << "\n";
}

DatasetSplit read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open split file " + path.string());
  try {
    return nlohmann::json::parse(in).get<DatasetSplit>();
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError("malformed split file " + path.string() + ": " + e.what());
  }
}

int IdentityEncoding::index_of(const std::string& subject) const {
  auto it = subject_to_index.find(subject);
  if (it == subject_to_index.end()) {
    throw LookupError("subject '" + subject + "' is not a training subject of this encoding");
  }
  return it->second;
}

IdentityEncoding IdentityEncoding::from_subjects(const std::set<std::string>& subjects) {
  IdentityEncoding enc;
  int i = 0;
  for (const auto& s : subjects) {
    if (s.empty()) throw InvalidArgument("empty subject id");
    enc.subject_to_index[s] = i++;
  }
  enc.num_subjects = i;
  return enc;
}

std::vector<Scalar> encode_identity(const std::string& subject_id, const IdentityEncoding& enc) {
  std::vector<Scalar> y(enc.num_subjects + 1, 0.0);
  y[enc.index_of(subject_id)] = 1.0;
  return y;
}

std::vector<Scalar> encode_generated(const IdentityEncoding& enc) {
  std::vector<Scalar> y(enc.num_subjects + 1, 0.0);
  y[enc.generated_class()] = 1.0;
  return y;
}

GallerySpec GallerySpec::protocol_a() { return {Protocol::A, 1, "frontal-only"}; }
GallerySpec GallerySpec::protocol_b() { return {Protocol::B, 4, "several pose angles"}; }

void GallerySpec::validate() const {
  if ((protocol == Protocol::A && images_per_subject != 1) ||
      (protocol == Protocol::B && images_per_subject != 4)) {
    throw InvalidArgument("gallery spec: protocol A needs 1 image per subject, protocol B needs 4");
  }
}

Protocol parse_protocol(const std::string& text) {
  if (text == "A" || text == "a") return Protocol::A;
  if (text == "B" || text == "b") return Protocol::B;
  throw InvalidArgument("unknown protocol '" + text + "' (expected A or B)");
}

std::string to_string(Protocol p) { return p == Protocol::A ? "A" : "B"; }

const std::set<std::string>& known_attributes() {
  static const std::set<std::string> kKnown = {"eyeglasses", "hat", "beard", "mustache",
                                               "expression", "occlusion"};
  return kKnown;
}

// ---------------------------------------------------------------------------
// Manifest loading

std::vector<PairedSample> load_paired_dataset(const std::filesystem::path& manifest_path,
                                              int resolution, std::vector<std::string>* warnings) {
  if (resolution < 1) throw InvalidArgument("resolution must be positive");
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  if (!manifest.is_array()) throw DecodeError("manifest " + manifest_path.string() + " must be a JSON array");
  const auto base = manifest_path.parent_path();

  std::vector<PairedSample> samples;
  samples.reserve(manifest.size());
  for (std::size_t row = 0; row < manifest.size(); ++row) {
    const auto& r = manifest[row];
    const std::string where = manifest_path.string() + " row " + std::to_string(row);
    PairedSample s;
    try {
      s.thermal_path = r.at("thermal").get<std::string>();
      s.visible_path = r.at("visible").get<std::string>();
      s.subject_id = r.at("subject").get<std::string>();
      s.pose_tag = r.value("pose", std::string{});
      for (const auto& a : r.value("attributes", std::vector<std::string>{})) s.attributes.insert(a);
    } catch (const nlohmann::json::exception& e) {
      throw DecodeError(where + ": " + e.what());
    }
    if (s.subject_id.empty()) throw DecodeError(where + ": empty subject id");
    for (const auto& a : s.attributes) {
      if (!known_attributes().contains(a)) {
        const std::string msg = where + ": unknown attribute token '" + a + "' (kept)";
        if (warnings) {
          warnings->push_back(msg);
        } else {
          std::cerr << "warning: " << msg << "\n";
        }
      }
    }
    const auto thermal_file = base / s.thermal_path;
    const auto visible_file = base / s.visible_path;
    for (const auto& f : {thermal_file, visible_file}) {
      if (!std::filesystem::exists(f)) throw LoadError(where + ": missing image " + f.string());
    }
    RawImage thermal = decode_image(thermal_file, 1);
    RawImage visible = decode_image(visible_file, 3);
    if (!(thermal.size == visible.size)) {
      throw PairIntegrityError(where + ": thermal " + std::to_string(thermal.size.height) + "x" +
                               std::to_string(thermal.size.width) + " and visible " +
                               std::to_string(visible.size.height) + "x" +
                               std::to_string(visible.size.width) + " sizes differ");
    }
    s.thermal = to_tensor(thermal, resolution);
    s.visible = to_tensor(visible, resolution);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::set<std::string> subjects_of(const std::vector<PairedSample>& samples) {
  std::set<std::string> out;
  for (const auto& s : samples) out.insert(s.subject_id);
  return out;
}

DatasetSplit make_subject_disjoint_split(const std::vector<PairedSample>& samples,
                                         int n_test_subjects, std::uint64_t seed) {
  const auto subjects = subjects_of(samples);
  if (n_test_subjects < 0 || n_test_subjects >= static_cast<int>(subjects.size())) {
    throw InvalidArgument("n_test_subjects = " + std::to_string(n_test_subjects) +
                          " must lie in [0, " + std::to_string(subjects.size()) + ")");
  }
  std::vector<std::string> order(subjects.begin(), subjects.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(order));
  DatasetSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (static_cast<int>(i) < n_test_subjects ? split.test_subjects : split.train_subjects)
        .insert(order[i]);
  }
  return split;
}

DatasetSplit make_attribute_split(const std::vector<PairedSample>& samples,
                                  const std::string& attribute) {
  if (attribute.empty()) throw InvalidArgument("attribute must be non-empty");
  DatasetSplit split;
  for (const auto& s : samples)
    if (s.attributes.contains(attribute)) split.test_subjects.insert(s.subject_id);
  for (const auto& s : samples)
    if (!split.test_subjects.contains(s.subject_id)) split.train_subjects.insert(s.subject_id);
  if (split.test_subjects.empty()) {
    throw InvalidArgument("attribute '" + attribute + "' matches no subject");
  }
  if (split.train_subjects.empty()) {
    throw InvalidArgument("attribute '" + attribute +
                          "' matches every subject; the training side would be empty");
  }
  return split;
}

std::vector<PairedSample> build_gallery_samples(const std::vector<PairedSample>& samples,
                                                const GallerySpec& spec, std::uint64_t seed) {
  spec.validate();
  std::map<std::string, std::vector<const PairedSample*>> by_subject;
  for (const auto& s : samples) by_subject[s.subject_id].push_back(&s);

  auto visible_only = [](const PairedSample& s) {
    PairedSample g;
    g.visible = s.visible;
    g.subject_id = s.subject_id;
    g.pose_tag = s.pose_tag;
    g.attributes = s.attributes;
    g.visible_path = s.visible_path;
    return g;
  };

  std::vector<PairedSample> gallery;
  for (const auto& [subject, items] : by_subject) {
    if (spec.protocol == Protocol::A) {
      auto it = std::find_if(items.begin(), items.end(),
                             [](const PairedSample* s) { return s->pose_tag == "frontal"; });
      if (it == items.end()) throw InvalidArgument("subject '" + subject + "' has no frontal sample");
      gallery.push_back(visible_only(**it));
    } else {
      std::map<std::string, const PairedSample*> first_by_pose;
      for (const auto* s : items) first_by_pose.try_emplace(s->pose_tag, s);
      if (static_cast<int>(first_by_pose.size()) < spec.images_per_subject) {
        throw InvalidArgument("subject '" + subject + "' has only " +
                              std::to_string(first_by_pose.size()) + " distinct poses, needs " +
                              std::to_string(spec.images_per_subject));
      }
      std::vector<std::string> poses;
      for (const auto& [pose, _] : first_by_pose) poses.push_back(pose);
      Rng rng(derive_seed(seed, hash_string(subject)));
      rng.shuffle(std::span<std::string>(poses));
      poses.resize(spec.images_per_subject);
      std::sort(poses.begin(), poses.end());
      for (const auto& pose : poses) gallery.push_back(visible_only(*first_by_pose[pose]));
    }
  }
  return gallery;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentOp parse_augment_op(const std::string& text) {
  if (text == "hflip") return AugmentOp::hflip;
  if (text == "rotate") return AugmentOp::rotate;
  if (text == "crop") return AugmentOp::crop;
  throw InvalidArgument("unknown augmentation '" + text + "' (expected hflip, rotate or crop)");
}

std::string to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::hflip: return "hflip";
    case AugmentOp::rotate: return "rotate";
    case AugmentOp::crop: return "crop";
  }
  return "?";
}

AugmentParams draw_augment_params(const AugmentSet& ops, std::uint64_t seed) {
  Rng rng(seed);
  AugmentParams p;
  // Every draw is consumed regardless of `ops` so one op's parameters do not
  // depend on which others are enabled.
  const bool flip = rng.bernoulli(0.5);
  const double angle = rng.uniform(-kMaxRotationDegrees, kMaxRotationDegrees);
  const double fraction = rng.uniform(kMinCropFraction, 1.0);
  const double ox = rng.uniform();
  const double oy = rng.uniform();
  if (ops.contains(AugmentOp::hflip)) p.flip = flip;
  if (ops.contains(AugmentOp::rotate)) p.angle_degrees = angle;
  if (ops.contains(AugmentOp::crop)) {
    p.crop_fraction = fraction;
    p.crop_offset_x = ox;
    p.crop_offset_y = oy;
  }
  return p;
}

ImageTensor apply_geometry(const ImageTensor& image, AugmentParams p) {
  if (p.identity()) return image;
  p.angle_degrees = std::clamp(p.angle_degrees, -kMaxRotationDegrees, kMaxRotationDegrees);
  p.crop_fraction = std::clamp(p.crop_fraction, kMinCropFraction, 1.0);
  p.crop_offset_x = std::clamp(p.crop_offset_x, 0.0, 1.0);
  p.crop_offset_y = std::clamp(p.crop_offset_y, 0.0, 1.0);

  const int h = image.height();
  const int w = image.width();
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const double ox = p.crop_offset_x * (1.0 - p.crop_fraction) * (w - 1);
  const double oy = p.crop_offset_y * (1.0 - p.crop_fraction) * (h - 1);
  const double theta = p.angle_degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);

  ImageTensor out(image.channels(), h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Output pixel -> crop window -> un-rotate -> un-flip.
      const double qx = ox + x * p.crop_fraction;
      const double qy = oy + y * p.crop_fraction;
      double rx = qx, ry = qy;
      if (p.angle_degrees != 0.0) {
        rx = cx + cos_t * (qx - cx) + sin_t * (qy - cy);
        ry = cy - sin_t * (qx - cx) + cos_t * (qy - cy);
      }
      if (p.flip) rx = (w - 1) - rx;
      rx = std::clamp(rx, 0.0, static_cast<double>(w - 1));
      ry = std::clamp(ry, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(std::floor(rx));
      const int y0 = static_cast<int>(std::floor(ry));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = rx - x0;
      const double fy = ry - y0;
      for (int c = 0; c < image.channels(); ++c) {
        const double top = image.at(c, y0, x0) * (1 - fx) + (fx > 0 ? image.at(c, y0, x1) * fx : 0.0);
        const double bottom =
            fy > 0 ? image.at(c, y1, x0) * (1 - fx) + (fx > 0 ? image.at(c, y1, x1) * fx : 0.0) : 0.0;
        out.at(c, y, x) = top * (1 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

PairedSample augment(const PairedSample& sample, const AugmentSet& ops, std::uint64_t seed) {
  if (ops.empty()) return sample;
  const AugmentParams p = draw_augment_params(ops, seed);
  PairedSample out = sample;
  out.thermal = apply_geometry(sample.thermal, p);
  out.visible = apply_geometry(sample.visible, p);
  return out;
}

// ---------------------------------------------------------------------------
// Toy data

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hue_color(double hue) {
  // HSV with full saturation and value.
  const double h = 6.0 * (hue - std::floor(hue));
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  switch (sector) {
    case 0: return {1, f, 0};
    case 1: return {1 - f, 1, 0};
    case 2: return {0, 1, f};
    case 3: return {0, 1 - f, 1};
    case 4: return {f, 0, 1};
    default: return {1, 0, 1 - f};
  }
}

double luminance(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

// Soft coverage from a signed distance (negative inside), one pixel wide.
double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

double ellipse_distance(double x, double y, double cx, double cy, double rx, double ry) {
  const double nx = (x - cx) / rx;
  const double ny = (y - cy) / ry;
  return (std::sqrt(nx * nx + ny * ny) - 1.0) * std::min(rx, ry);
}

double box_distance(double x, double y, double cx, double cy, double half) {
  return std::max(std::abs(x - cx), std::abs(y - cy)) - half;
}

struct Canvas {
  int size;
  std::vector<Rgb> pixels;

  void paint(const Rgb& color, auto&& distance) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double a = coverage(distance(x + 0.5, y + 0.5));
        if (a <= 0.0) continue;
        Rgb& p = pixels[static_cast<std::size_t>(y) * size + x];
        p = {p.r + a * (color.r - p.r), p.g + a * (color.g - p.g), p.b + a * (color.b - p.b)};
      }
    }
  }
};

struct SubjectLook {
  double glyph_angle;
  Rgb glyph;
  bool square;
  Rgb skin;
  bool eyeglasses;
};

struct Pose {
  const char* tag;
  double dx, dy;  // head offset in units of the resolution
};

constexpr Pose kPoses[] = {{"frontal", 0, 0},         {"left15", -0.025, 0},
                           {"right15", 0.025, 0},     {"up15", 0, -0.025},
                           {"down15", 0, 0.025},      {"left30", -0.045, 0.005},
                           {"right30", 0.045, 0.005}};

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

std::vector<double> blur(const std::vector<double>& img, int n, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(img.size()), out(img.size());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * img[y * n + std::clamp(x + i, 0, n - 1)];
      tmp[y * n + x] = s;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[std::clamp(y + i, 0, n - 1) * n + x];
      out[y * n + x] = s;
    }
  return out;
}

PairedSample render_toy(const SubjectLook& look, const std::string& subject, const Pose& pose,
                        double jx, double jy, int n) {
  const double R = n;
  Canvas canvas{n, std::vector<Rgb>(static_cast<std::size_t>(n) * n)};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double t = static_cast<double>(y) / n;
      canvas.pixels[static_cast<std::size_t>(y) * n + x] = {0.12 + 0.08 * t, 0.14 + 0.08 * t, 0.22 + 0.1 * t};
    }
  const double cx = R / 2 + (pose.dx + jx) * R;
  const double cy = R / 2 + (pose.dy + jy) * R;
  // Neck and shoulders, then head.
  canvas.paint({0.25, 0.25, 0.3}, [&](double x, double y) {
    return ellipse_distance(x, y, cx, cy + 0.55 * R, 0.42 * R, 0.2 * R);
  });
  canvas.paint(look.skin, [&](double x, double y) {
    return ellipse_distance(x, y, cx, cy, 0.3 * R, 0.38 * R);
  });
  const Rgb dark{0.08, 0.07, 0.09};
  for (double side : {-1.0, 1.0}) {
    canvas.paint(dark, [&](double x, double y) {
      return ellipse_distance(x, y, cx + side * 0.12 * R, cy - 0.08 * R, 0.045 * R, 0.03 * R);
    });
    if (look.eyeglasses) {
      canvas.paint({0.02, 0.02, 0.02}, [&](double x, double y) {
        const double d = box_distance(x, y, cx + side * 0.12 * R, cy - 0.08 * R, 0.075 * R);
        return std::abs(d) - 0.012 * R;
      });
    }
  }
  canvas.paint({0.45, 0.15, 0.15}, [&](double x, double y) {
    return ellipse_distance(x, y, cx, cy + 0.2 * R, 0.1 * R, 0.028 * R);
  });
  const double gx = cx + 0.2 * R * std::cos(look.glyph_angle);
  const double gy = cy + 0.24 * R * std::sin(look.glyph_angle);
  const double half = 0.085 * R;
  auto glyph_distance = [&](double x, double y) {
    return look.square ? box_distance(x, y, gx, gy, half * 0.9)
                       : ellipse_distance(x, y, gx, gy, half, half);
  };
  canvas.paint(dark, [&](double x, double y) { return glyph_distance(x, y) - 0.02 * R; });
  canvas.paint(look.glyph, glyph_distance);

  PairedSample s;
  s.subject_id = subject;
  s.pose_tag = pose.tag;
  s.visible = ImageTensor(3, n, n);
  std::vector<double> lum(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const Rgb& p = canvas.pixels[static_cast<std::size_t>(y) * n + x];
      s.visible.at(0, y, x) = 2 * p.r - 1;
      s.visible.at(1, y, x) = 2 * p.g - 1;
      s.visible.at(2, y, x) = 2 * p.b - 1;
      lum[static_cast<std::size_t>(y) * n + x] = luminance(p);
    }
  const auto blurred = blur(lum, n, 1.2 * R / 64.0);
  s.thermal = ImageTensor(1, n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double v = blurred[static_cast<std::size_t>(y) * n + x];
      const double remapped = 1.0 / (1.0 + std::exp(-9.0 * (v - 0.33)));
      s.thermal.at(0, y, x) = 2 * remapped - 1;
    }
  return s;
}

}  // namespace

std::vector<PairedSample> synthesize_toy_dataset(int n_subjects, int n_per_subject, int resolution,
                                                 std::uint64_t seed) {
  if (n_subjects < 2) throw InvalidArgument("toy dataset needs at least 2 subjects");
  if (n_per_subject < 1) throw InvalidArgument("toy dataset needs at least 1 sample per subject");
  if (resolution < 64 || (resolution & (resolution - 1)) != 0) {
    throw InvalidArgument("toy resolution must be a power of two >= 64, got " +
                          std::to_string(resolution));
  }
  Rng rng(seed);
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  std::vector<PairedSample> samples;
  samples.reserve(static_cast<std::size_t>(n_subjects) * n_per_subject);
  const int id_width = n_subjects >= 100 ? 3 : 2;
  for (int s = 0; s < n_subjects; ++s) {
    SubjectLook look;
    const double fraction = static_cast<double>(s) / n_subjects;
    look.glyph_angle = phase + 2 * std::numbers::pi * fraction;
    look.glyph = hue_color(fraction);
    look.square = s % 2 == 1;
    const double tone = rng.uniform(-0.06, 0.06);
    look.skin = {0.62 + tone, 0.42 + tone, 0.32 + tone};
    look.eyeglasses = s % 4 == 1;
    std::string subject = std::to_string(s);
    subject = "subject" + std::string(id_width - std::min<int>(id_width, subject.size()), '0') + subject;
    for (int k = 0; k < n_per_subject; ++k) {
      const Pose& pose = kPoses[k % std::size(kPoses)];
      const double jx = k == 0 ? 0.0 : rng.uniform(-0.01, 0.01);
      const double jy = k == 0 ? 0.0 : rng.uniform(-0.01, 0.01);
      PairedSample sample = render_toy(look, subject, pose, jx, jy, resolution);
      if (look.eyeglasses) sample.attributes.insert("eyeglasses");
      const std::string stem = subject + "_" + std::to_string(k);
      sample.thermal_path = "thermal/" + stem + ".png";
      sample.visible_path = "visible/" + stem + ".png";
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

void write_toy_dataset(const std::vector<PairedSample>& samples, const std::filesystem::path& dir) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& s : samples) {
    write_png(dir / s.thermal_path, s.thermal);
    write_png(dir / s.visible_path, s.visible);
    manifest.push_back({{"thermal", s.thermal_path},
                        {"visible", s.visible_path},
                        {"subject", s.subject_id},
                        {"pose", s.pose_tag},
                        {"attributes", std::vector<std::string>(s.attributes.begin(), s.attributes.end())}});
  }
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw LoadError("cannot write manifest under " + dir.string());
  out << manifest.dump(2) << "\n";
}

}  // namespace tvgan
