#include "nsedit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "nsedit/checkpoint.hpp"
#include "nsedit/image_io.hpp"

namespace nsedit {

IngestionError::IngestionError(const std::string& what, std::vector<std::string> paths)
    : std::runtime_error([&] {
        std::string msg = what;
        for (const auto& p : paths) msg += "\n  " + p;
        return msg;
      }()),
      paths_(std::move(paths)) {}

Tensor center_crop_resize(const Tensor& image, int resolution) {
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const int side = std::min(H, W);
  const int y0 = (H - side) / 2, x0 = (W - side) / 2;
  Tensor crop({C, side, side});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        crop[(static_cast<std::size_t>(c) * side + y) * side + x] =
            image[(static_cast<std::size_t>(c) * H + y + y0) * W + x + x0];
  if (side == resolution) return crop;
  return resize_bilinear(crop, resolution, resolution);
}

Dataset load_image_directory(const std::filesystem::path& dir, int channels, int resolution, ValueRange range) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IngestionError("dataset directory does not exist", {dir.string()});
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IngestionError("dataset directory contains no PNG images", {dir.string()});
  Dataset d;
  std::vector<std::string> bad;
  for (const auto& f : files) {
    try {
      d.images.push_back(to_model_range(center_crop_resize(read_png(f, channels), resolution), range));
      d.names.push_back(f.filename().string());
    } catch (const std::exception&) {
      bad.push_back(f.string());
    }
  }
  if (!bad.empty()) throw IngestionError("unreadable images in dataset", bad);
  return d;
}

DatasetSplit split_by_name_hash(const Dataset& data, double validation_fraction) {
  DatasetSplit s;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double u = static_cast<double>(fnv1a(data.names[i]) % 1000003ULL) / 1000003.0;
    Dataset& dst = u < validation_fraction ? s.validation : s.train;
    dst.images.push_back(data.images[i]);
    dst.names.push_back(data.names[i]);
  }
  return s;
}

namespace {

double smooth_inside(double signed_dist, double softness) {
  // 1 inside (negative distance), 0 outside, linear ramp of width `softness`.
  return std::clamp(0.5 - signed_dist / softness, 0.0, 1.0);
}

}  // namespace

Tensor synthesize_face(int resolution, int channels, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double a, double b) { return a + (b - a) * u(rng); };
  using Color = std::array<double, 3>;
  auto color = [&](double lo, double hi) { return Color{range(lo, hi), range(lo, hi), range(lo, hi)}; };

  const Color bg_top = color(0.1, 0.9), bg_bottom = color(0.1, 0.9);
  const double skin_base = range(0.35, 0.9);
  const Color skin{skin_base, skin_base * range(0.7, 0.9), skin_base * range(0.5, 0.8)};
  const Color hair = color(0.0, 0.6);
  const Color iris = color(0.0, 0.5);
  const Color lips{range(0.5, 0.9), range(0.1, 0.35), range(0.15, 0.4)};
  const double cx = range(0.45, 0.55), cy = range(0.48, 0.56);
  const double rx = range(0.26, 0.34), ry = range(0.33, 0.41);
  const double hair_line = cy - ry * range(0.3, 0.6);
  const double eye_dx = range(0.09, 0.14), eye_y = cy - range(0.04, 0.1), eye_r = range(0.035, 0.055);
  const double mouth_y = cy + range(0.15, 0.22), mouth_w = range(0.06, 0.12);
  const double texture_amp = range(0.02, 0.08);
  std::normal_distribution<double> grain(0.0, 1.0);

  const double px = 1.0 / resolution;
  Tensor img({channels, resolution, resolution});
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const double fx = (x + 0.5) * px, fy = (y + 0.5) * px;
      Color c;
      const double t = fy;
      for (int k = 0; k < 3; ++k) c[k] = bg_top[k] * (1 - t) + bg_bottom[k] * t;
      const double head_d = (std::hypot((fx - cx) / rx, (fy - cy) / ry) - 1.0) * std::min(rx, ry);
      const double head = smooth_inside(head_d, 1.5 * px);
      const double hair_mask = head * smooth_inside(fy - hair_line, 1.5 * px);
      for (int k = 0; k < 3; ++k) c[k] = c[k] * (1 - head) + skin[k] * head;
      for (int k = 0; k < 3; ++k) c[k] = c[k] * (1 - hair_mask) + hair[k] * hair_mask;
      for (double side : {-1.0, 1.0}) {
        const double ed = std::hypot(fx - (cx + side * eye_dx), (fy - eye_y) * 1.6) - eye_r;
        const double eye = smooth_inside(ed, 1.0 * px);
        for (int k = 0; k < 3; ++k) c[k] = c[k] * (1 - eye) + iris[k] * eye;
      }
      const double md = std::max(std::fabs(fx - cx) - mouth_w, std::fabs(fy - mouth_y) - 0.018);
      const double mouth = smooth_inside(md, 1.0 * px);
      for (int k = 0; k < 3; ++k) c[k] = c[k] * (1 - mouth) + lips[k] * mouth;
      const double g = texture_amp * grain(rng);
      for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k] + g, 0.0, 1.0);
      if (channels == 1) {
        img[static_cast<std::size_t>(y) * resolution + x] = static_cast<real>(0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]);
      } else {
        for (int k = 0; k < 3; ++k)
          img[(static_cast<std::size_t>(k) * resolution + y) * resolution + x] = static_cast<real>(c[k]);
      }
    }
  }
  return img;
}

Dataset synthesize_dataset(int count, int resolution, int channels, std::uint64_t seed, ValueRange range) {
  std::mt19937_64 rng(seed);
  Dataset d;
  for (int i = 0; i < count; ++i) {
    // Round-trip through 8-bit so in-memory data matches what a directory load yields.
    const Tensor face = synthesize_face(resolution, channels, rng);
    d.images.push_back(to_model_range(decode_png(encode_png(face), channels), range));
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%05d.png", i);
    d.names.emplace_back(name);
  }
  return d;
}

void write_synthetic_dataset(const std::filesystem::path& dir, int count, int resolution, int channels,
                             std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%05d.png", i);
    write_png(dir / name, synthesize_face(resolution, channels, rng));
  }
}

}  // namespace nsedit
