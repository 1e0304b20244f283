#include "rccm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace rccm::synth {

namespace fs = std::filesystem;

const char* class_name(int label) {
  switch (label) {
    case 0: return "hyperechoic";
    case 1: return "hypoechoic";
    case 2: return "mixed";
    default: throw std::invalid_argument("class label must be 0, 1 or 2");
  }
}

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int64_t kMargin = 2;        // blob-to-border clearance in pixels
constexpr double kRadiusSlack = 1.35; // head-room for aspect + boundary wobble

double max_feasible_radius(const PhantomConfig& cfg) {
  return (static_cast<double>(std::min(cfg.image_height, cfg.image_width)) / 2.0 -
          static_cast<double>(kMargin) - 1.0) /
         kRadiusSlack;
}

// Largest 4-connected component, then hole filling (background components not
// touching the border become foreground).
Mask cleanup_blob(const Mask& raw) {
  const int64_t h = raw.h, w = raw.w;
  std::vector<int32_t> comp(static_cast<size_t>(h * w), -1);
  int32_t ncomp = 0;
  int64_t best_size = 0;
  int32_t best = -1;
  std::vector<int64_t> stack;
  for (int64_t i = 0; i < h * w; ++i) {
    if (!raw.v[static_cast<size_t>(i)] || comp[static_cast<size_t>(i)] >= 0) continue;
    int64_t size = 0;
    stack.push_back(i);
    comp[static_cast<size_t>(i)] = ncomp;
    while (!stack.empty()) {
      const int64_t p = stack.back();
      stack.pop_back();
      ++size;
      const int64_t y = p / w, x = p % w;
      const int64_t nbr[4] = {p - w, p + w, p - 1, p + 1};
      const bool ok[4] = {y > 0, y < h - 1, x > 0, x < w - 1};
      for (int k = 0; k < 4; ++k) {
        if (ok[k] && raw.v[static_cast<size_t>(nbr[k])] && comp[static_cast<size_t>(nbr[k])] < 0) {
          comp[static_cast<size_t>(nbr[k])] = ncomp;
          stack.push_back(nbr[k]);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = ncomp;
    }
    ++ncomp;
  }
  Mask out(h, w);
  if (best < 0) return out;
  for (int64_t i = 0; i < h * w; ++i) {
    out.v[static_cast<size_t>(i)] = comp[static_cast<size_t>(i)] == best ? 1 : 0;
  }
  // flood background from the border; unreached background pixels are holes
  std::vector<uint8_t> outside(static_cast<size_t>(h * w), 0);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      if (y != 0 && y != h - 1 && x != 0 && x != w - 1) continue;
      const int64_t i = y * w + x;
      if (!out.v[static_cast<size_t>(i)] && !outside[static_cast<size_t>(i)]) {
        outside[static_cast<size_t>(i)] = 1;
        stack.push_back(i);
        while (!stack.empty()) {
          const int64_t p = stack.back();
          stack.pop_back();
          const int64_t py = p / w, px = p % w;
          const int64_t nbr[4] = {p - w, p + w, p - 1, p + 1};
          const bool ok[4] = {py > 0, py < h - 1, px > 0, px < w - 1};
          for (int k = 0; k < 4; ++k) {
            if (ok[k] && !out.v[static_cast<size_t>(nbr[k])] &&
                !outside[static_cast<size_t>(nbr[k])]) {
              outside[static_cast<size_t>(nbr[k])] = 1;
              stack.push_back(nbr[k]);
            }
          }
        }
      }
    }
  }
  for (int64_t i = 0; i < h * w; ++i) {
    if (!out.v[static_cast<size_t>(i)] && !outside[static_cast<size_t>(i)]) {
      out.v[static_cast<size_t>(i)] = 1;  // fill hole
    }
  }
  return out;
}

struct BlobShape {
  double cy = 0.0, cx = 0.0;
  double ry = 1.0, rx = 1.0;
  std::array<double, 3> amp{};    // harmonics 2..4
  std::array<double, 3> phase{};
};

Mask rasterize(const BlobShape& s, int64_t h, int64_t w) {
  Mask m(h, w);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) - s.cx) / s.rx;
      const double v = (static_cast<double>(y) - s.cy) / s.ry;
      const double d = std::sqrt(u * u + v * v);
      const double theta = std::atan2(v, u);
      double boundary = 1.0;
      for (int k = 0; k < 3; ++k) {
        boundary += s.amp[static_cast<size_t>(k)] *
                    std::cos(static_cast<double>(k + 2) * theta + s.phase[static_cast<size_t>(k)]);
      }
      if (d <= boundary) m.set(y, x, 1);
    }
  }
  return m;
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

void PhantomConfig::validate() const {
  if (image_height <= 0 || image_width <= 0) {
    throw std::invalid_argument("phantom: image dimensions must be positive");
  }
  if (pixel_spacing <= 0.0) throw std::invalid_argument("phantom: pixel_spacing must be > 0");
  if (!(area_min_mm2 < area_max_mm2) || area_min_mm2 <= 0.0) {
    throw std::invalid_argument("phantom: area range must satisfy 0 < min < max");
  }
  if (speckle_scale < 0.0) throw std::invalid_argument("phantom: speckle_scale must be >= 0");
  for (const auto& c : class_contrasts) {
    if (c.plaque < 0.0 || c.plaque > 1.0 || c.background < 0.0 || c.background > 1.0) {
      throw std::invalid_argument("phantom: class contrasts must lie in [0,1]");
    }
  }
  const double min_area_px = area_min_mm2 / (pixel_spacing * pixel_spacing);
  const double r_needed = std::sqrt(min_area_px / kPi);
  if (r_needed > max_feasible_radius(*this) || min_area_px < 4.0) {
    throw std::invalid_argument(
        "phantom: area range is infeasible for the configured image size/spacing");
  }
}

Sample generate_phantom(const PhantomConfig& cfg, int class_label, uint64_t sample_seed,
                        std::string id) {
  cfg.validate();
  if (class_label < 0 || class_label > 2) {
    throw std::invalid_argument("generate_phantom: class label must be 0, 1 or 2");
  }
  Rng rng(mix_seed(cfg.seed, sample_seed));

  const double px_area = cfg.pixel_spacing * cfg.pixel_spacing;
  const double min_px = cfg.area_min_mm2 / px_area;
  const double max_px = cfg.area_max_mm2 / px_area;
  const double r_cap = max_feasible_radius(cfg);
  const double cap_px = kPi * r_cap * r_cap;

  // aim inside the range with a small guard band
  const double lo = min_px + 0.04 * (max_px - min_px);
  const double hi = std::min(max_px - 0.04 * (max_px - min_px), cap_px);
  double target_px = std::clamp(lo + (hi - lo) * rng.uniform(), min_px, std::min(max_px, cap_px));

  BlobShape s;
  const double aspect = rng.uniform(0.78, 1.28);
  for (int k = 0; k < 3; ++k) {
    s.amp[static_cast<size_t>(k)] = rng.uniform(0.0, 0.12 / static_cast<double>(k + 2) * 2.0);
    s.phase[static_cast<size_t>(k)] = rng.uniform(0.0, 2.0 * kPi);
  }

  double r0 = std::sqrt(target_px / kPi);
  Mask mask;
  bool center_set = false;
  for (int attempt = 0; attempt < 40; ++attempt) {
    s.rx = r0 * std::sqrt(aspect);
    s.ry = r0 / std::sqrt(aspect);
    const double rmax = std::max(s.rx, s.ry) * kRadiusSlack;
    const double xlo = rmax + kMargin, xhi = static_cast<double>(cfg.image_width - 1) - rmax - kMargin;
    const double ylo = rmax + kMargin, yhi = static_cast<double>(cfg.image_height - 1) - rmax - kMargin;
    if (xlo >= xhi || ylo >= yhi) {
      r0 *= 0.9;  // shrink until the blob fits
      center_set = false;
      continue;
    }
    if (!center_set) {
      s.cx = rng.uniform(xlo, xhi);
      s.cy = rng.uniform(ylo, yhi);
      center_set = true;
    } else {
      s.cx = std::clamp(s.cx, xlo, xhi);
      s.cy = std::clamp(s.cy, ylo, yhi);
    }
    mask = cleanup_blob(rasterize(s, cfg.image_height, cfg.image_width));
    const double area = static_cast<double>(mask.area_px());
    if (area >= min_px && area <= max_px) break;
    if (area <= 0.0) {
      r0 = std::max(r0, 2.0);
      continue;
    }
    r0 *= std::sqrt(target_px / area);
  }
  {
    const double area = static_cast<double>(mask.area_px());
    if (area < min_px || area > max_px) {
      throw std::runtime_error("generate_phantom: failed to fit a blob inside the area range");
    }
  }

  // intensity field
  const ClassContrast contrast = cfg.class_contrasts[static_cast<size_t>(class_label)];
  const int64_t hw = cfg.image_height * cfg.image_width;
  std::vector<double> base(static_cast<size_t>(hw), contrast.background);
  if (class_label == static_cast<int>(PlaqueClass::mixed)) {
    // split along a random line through the centroid; each side gets a
    // brighter/darker value chosen so the area-weighted mean stays on target
    double gy = 0.0, gx = 0.0;
    for (int64_t y = 0; y < mask.h; ++y) {
      for (int64_t x = 0; x < mask.w; ++x) {
        if (mask.at(y, x)) {
          gy += static_cast<double>(y);
          gx += static_cast<double>(x);
        }
      }
    }
    const double area = static_cast<double>(mask.area_px());
    gy /= area;
    gx /= area;
    double psi = rng.uniform(0.0, kPi);
    std::vector<uint8_t> side(static_cast<size_t>(hw), 0);
    int64_t a_bright = 0, a_dark = 0;
    for (int tries = 0; tries < 24; ++tries) {
      a_bright = a_dark = 0;
      const double cs = std::cos(psi), sn = std::sin(psi);
      for (int64_t y = 0; y < mask.h; ++y) {
        for (int64_t x = 0; x < mask.w; ++x) {
          if (!mask.at(y, x)) continue;
          const bool bright = (static_cast<double>(x) - gx) * cs + (static_cast<double>(y) - gy) * sn >= 0.0;
          side[static_cast<size_t>(y * mask.w + x)] = bright ? 1 : 0;
          (bright ? a_bright : a_dark)++;
        }
      }
      if (std::min(a_bright, a_dark) >= static_cast<int64_t>(0.25 * area)) break;
      psi += 0.618 * kPi;  // try another cut
    }
    const double total = static_cast<double>(a_bright + a_dark);
    const double delta = cfg.mixed_contrast_split;
    const double bright_val =
        std::clamp(contrast.plaque + 2.0 * delta * static_cast<double>(a_dark) / total, 0.02, 0.98);
    const double dark_val =
        std::clamp(contrast.plaque - 2.0 * delta * static_cast<double>(a_bright) / total, 0.02, 0.98);
    for (int64_t i = 0; i < hw; ++i) {
      if (mask.v[static_cast<size_t>(i)]) {
        base[static_cast<size_t>(i)] = side[static_cast<size_t>(i)] ? bright_val : dark_val;
      }
    }
  } else {
    for (int64_t i = 0; i < hw; ++i) {
      if (mask.v[static_cast<size_t>(i)]) base[static_cast<size_t>(i)] = contrast.plaque;
    }
  }

  Tensor image({cfg.image_height, cfg.image_width});
  for (int64_t i = 0; i < hw; ++i) {
    const double f = std::max(0.0, 1.0 + cfg.speckle_scale * rng.normal());
    image[i] = quantize8(base[static_cast<size_t>(i)] * f);
  }

  Sample out;
  out.image = std::move(image);
  out.mask = std::move(mask);
  out.class_label = class_label;
  out.pixel_spacing = cfg.pixel_spacing;
  out.id = id.empty() ? ("sample_" + std::to_string(sample_seed)) : std::move(id);
  return out;
}

std::vector<Sample> generate_dataset(const PhantomConfig& cfg, const std::array<int, 3>& counts) {
  cfg.validate();
  for (int c : counts) {
    if (c < 0) throw std::invalid_argument("generate_dataset: counts must be >= 0");
  }
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(counts[0] + counts[1] + counts[2]));
  uint64_t index = 0;
  for (int cls = 0; cls < 3; ++cls) {
    for (int i = 0; i < counts[static_cast<size_t>(cls)]; ++i) {
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%05llu_%s", static_cast<unsigned long long>(index),
                    class_name(cls));
      out.push_back(generate_phantom(cfg, cls, index, idbuf));
      ++index;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM I/O
// ---------------------------------------------------------------------------

namespace {

void write_pgm_bytes(const fs::path& path, int64_t h, int64_t w,
                     const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open for writing: " + path.string());
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DatasetError("write failed: " + path.string());
}

std::vector<uint8_t> read_pgm_bytes(const fs::path& path, int64_t& h, int64_t& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorruptImageError("cannot open image file: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw CorruptImageError("not a binary PGM: " + path.string());
  int64_t maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255) {
    throw CorruptImageError("bad PGM header: " + path.string());
  }
  f.get();  // single whitespace after maxval
  std::vector<uint8_t> bytes(static_cast<size_t>(h * w));
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw CorruptImageError("truncated PGM payload: " + path.string());
  }
  return bytes;
}

}  // namespace

void write_pgm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 2) throw std::invalid_argument("write_pgm: expected [H,W] image");
  std::vector<uint8_t> bytes(static_cast<size_t>(image.numel()));
  for (int64_t i = 0; i < image.numel(); ++i) {
    bytes[static_cast<size_t>(i)] =
        static_cast<uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  write_pgm_bytes(path, image.dim(0), image.dim(1), bytes);
}

void write_mask_pgm(const fs::path& path, const Mask& mask) {
  std::vector<uint8_t> bytes(mask.v.size());
  for (size_t i = 0; i < mask.v.size(); ++i) bytes[i] = mask.v[i] ? 255 : 0;
  write_pgm_bytes(path, mask.h, mask.w, bytes);
}

Tensor read_pgm(const fs::path& path) {
  int64_t h = 0, w = 0;
  const auto bytes = read_pgm_bytes(path, h, w);
  Tensor image({h, w});
  for (size_t i = 0; i < bytes.size(); ++i) {
    image[static_cast<int64_t>(i)] = static_cast<double>(bytes[i]) / 255.0;
  }
  return image;
}

Mask read_mask_pgm(const fs::path& path) {
  int64_t h = 0, w = 0;
  const auto bytes = read_pgm_bytes(path, h, w);
  Mask m(h, w);
  for (size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] != 0 && bytes[i] != 255) {
      throw CorruptImageError("mask PGM has non-binary values: " + path.string());
    }
    m.v[i] = bytes[i] ? 1 : 0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Dataset directory
// ---------------------------------------------------------------------------

void save_dataset(const std::vector<Sample>& samples, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::string manifest = "id,image_path,mask_path,class_label,pixel_spacing_mm\n";
  char buf[64];
  for (const auto& s : samples) {
    const std::string img_rel = "images/" + s.id + ".pgm";
    const std::string msk_rel = "masks/" + s.id + ".pgm";
    write_pgm(dir / img_rel, s.image);
    write_mask_pgm(dir / msk_rel, s.mask);
    std::snprintf(buf, sizeof(buf), "%.17g", s.pixel_spacing);
    manifest += s.id + "," + img_rel + "," + msk_rel + "," + std::to_string(s.class_label) + "," +
                buf + "\n";
  }
  std::ofstream f(dir / "manifest.csv", std::ios::binary);
  if (!f) throw DatasetError("cannot write manifest: " + (dir / "manifest.csv").string());
  f << manifest;
}

std::vector<Sample> load_dataset(const fs::path& dir) {
  if (!fs::exists(dir)) throw MissingManifestError("dataset directory does not exist: " + dir.string());
  if (fs::is_empty(dir)) throw EmptyDatasetError("dataset directory is empty: " + dir.string());
  const fs::path mpath = dir / "manifest.csv";
  if (!fs::exists(mpath)) throw MissingManifestError("manifest.csv not found in " + dir.string());
  std::ifstream f(mpath);
  if (!f) throw MissingManifestError("cannot read " + mpath.string());

  std::string line;
  if (!std::getline(f, line) || line.rfind("id,image_path,mask_path,class_label", 0) != 0) {
    throw ManifestMismatchError("unexpected manifest header in " + mpath.string());
  }
  std::vector<Sample> out;
  size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<std::string, 5> cols;
    size_t start = 0, coli = 0;
    for (; coli < 4; ++coli) {
      const size_t comma = line.find(',', start);
      if (comma == std::string::npos) break;
      cols[coli] = line.substr(start, comma - start);
      start = comma + 1;
    }
    if (coli != 4) {
      throw ManifestMismatchError("malformed manifest row " + std::to_string(lineno) + " in " +
                                  mpath.string());
    }
    cols[4] = line.substr(start);

    Sample s;
    s.id = cols[0];
    const fs::path img = dir / cols[1];
    const fs::path msk = dir / cols[2];
    if (!fs::exists(img)) throw ManifestMismatchError("manifest references missing file: " + img.string());
    if (!fs::exists(msk)) throw ManifestMismatchError("manifest references missing file: " + msk.string());
    s.image = read_pgm(img);
    s.mask = read_mask_pgm(msk);
    if (s.image.dim(0) != s.mask.h || s.image.dim(1) != s.mask.w) {
      throw ManifestMismatchError("image/mask size mismatch for id " + s.id);
    }
    if (s.mask.empty_mask()) throw CorruptImageError("mask has no plaque pixels: " + msk.string());
    try {
      s.class_label = std::stoi(cols[3]);
      s.pixel_spacing = std::stod(cols[4]);
    } catch (const std::exception&) {
      throw ManifestMismatchError("bad numeric fields in manifest row " + std::to_string(lineno));
    }
    if (s.class_label < 0 || s.class_label > 2 || s.pixel_spacing <= 0.0) {
      throw ManifestMismatchError("invalid label/spacing in manifest row " + std::to_string(lineno));
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw EmptyDatasetError("manifest has no samples: " + mpath.string());
  return out;
}

DatasetSplit split_dataset(std::vector<Sample> samples, std::array<double, 3> ratios,
                           uint64_t seed) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
  if (samples.size() < 3) throw std::invalid_argument("split needs at least 3 samples");

  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < samples.size(); ++i) by_class[samples[i].class_label].push_back(i);

  DatasetSplit out;
  out.split_seed = seed;
  for (auto& [cls, idx] : by_class) {
    Rng rng(mix_seed(seed, 0x5711D0 + static_cast<uint64_t>(cls)));
    rng.shuffle(idx);
    const double n = static_cast<double>(idx.size());
    std::array<int64_t, 3> take{};
    std::array<double, 3> frac{};
    int64_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double exact = ratios[static_cast<size_t>(k)] * n;
      take[static_cast<size_t>(k)] = static_cast<int64_t>(std::floor(exact));
      frac[static_cast<size_t>(k)] = exact - std::floor(exact);
      assigned += take[static_cast<size_t>(k)];
    }
    // floor-then-distribute: leftovers go to the largest fractional parts,
    // ties resolved in train/val/test order
    int64_t leftover = static_cast<int64_t>(idx.size()) - assigned;
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return frac[static_cast<size_t>(a)] > frac[static_cast<size_t>(b)]; });
    for (int64_t l = 0; l < leftover; ++l) take[static_cast<size_t>(order[static_cast<size_t>(l % 3)])]++;

    size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      auto& dst = k == 0 ? out.train : (k == 1 ? out.val : out.test);
      for (int64_t t = 0; t < take[static_cast<size_t>(k)]; ++t) {
        dst.push_back(samples[idx[pos++]]);
      }
    }
  }
  auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
  std::sort(out.train.begin(), out.train.end(), by_id);
  std::sort(out.val.begin(), out.val.end(), by_id);
  std::sort(out.test.begin(), out.test.end(), by_id);
  return out;
}

}  // namespace rccm::synth
