// Copyright 2026 The StyleSeg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "styleseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <numbers>
#include <regex>

#include "styleseg/container.hpp"
#include "styleseg/errors.hpp"
#include "styleseg/metrics.hpp"
#include "styleseg/parallel.hpp"
#include "styleseg/serialize.hpp"

namespace styleseg {

// ---- Styles -----------------------------------------------------------------

void StyleTransform::validate() const {
  if (kind == StyleKind::Identity) return;
  if (kind == StyleKind::RemoveSmall ? param < 0 : param < 1)
    throw ValidationError("style " + to_string(*this) + ": parameter out of range");
}

std::string to_string(const StyleTransform& s) {
  switch (s.kind) {
    case StyleKind::Identity: return "identity";
    case StyleKind::RemoveSmall: return "remove_small(" + std::to_string(s.param) + ")";
    case StyleKind::BoundaryGrow: return "grow(" + std::to_string(s.param) + ")";
    case StyleKind::BoundaryShrink: return "shrink(" + std::to_string(s.param) + ")";
    case StyleKind::DilateIfMarker: return "dilate_if_marker(" + std::to_string(s.param) + ")";
  }
  return "?";
}

StyleTransform parse_style(const std::string& text) {
  if (text == "identity") return StyleTransform::identity();
  static const std::regex re(R"(^(remove_small|grow|shrink|dilate_if_marker)\((\d+)\)$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw ConfigError("unrecognized style '" + text + "'");
  const Index p = std::stoll(m[2].str());
  const std::string name = m[1].str();
  StyleTransform s = name == "remove_small" ? StyleTransform::remove_small(p)
                     : name == "grow"       ? StyleTransform::grow(p)
                     : name == "shrink"     ? StyleTransform::shrink(p)
                                            : StyleTransform::dilate_if_marker(p);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

std::vector<std::pair<Index, Index>> disc_offsets(Index radius) {
  if (radius < 0) throw ValidationError("disc radius must be non-negative");
  std::vector<std::pair<Index, Index>> out;
  for (Index dy = -radius; dy <= radius; ++dy)
    for (Index dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) out.emplace_back(dy, dx);
  return out;
}

Mask dilate(const Mask& mask, Index radius) {
  const auto disc = disc_offsets(radius);
  Mask out(mask.height, mask.width);
  for (Index y = 0; y < mask.height; ++y)
    for (Index x = 0; x < mask.width; ++x) {
      if (!mask(y, x)) continue;
      for (auto [dy, dx] : disc) {
        const Index ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < mask.height && nx >= 0 && nx < mask.width) out(ny, nx) = 1;
      }
    }
  return out;
}

Mask erode(const Mask& mask, Index radius) {
  const auto disc = disc_offsets(radius);
  Mask out(mask.height, mask.width);
  for (Index y = 0; y < mask.height; ++y)
    for (Index x = 0; x < mask.width; ++x) {
      if (!mask(y, x)) continue;
      bool keep = true;
      for (auto [dy, dx] : disc) {
        const Index ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= mask.height || nx < 0 || nx >= mask.width || !mask(ny, nx)) {
          keep = false;
          break;
        }
      }
      out(y, x) = keep ? 1 : 0;
    }
  return out;
}

Mask remove_small_components(const Mask& mask, Index max_size) {
  const Components cc = connected_components(mask, Connectivity::Eight);
  Mask out = mask;
  for (Index i = 0; i < out.size(); ++i)
    if (cc.labels[i] && cc.sizes[cc.labels[i] - 1] <= max_size) out.bits[i] = 0;
  return out;
}

bool image_has_marker(const Tensor& image) {
  check_rank(image, 3, "image");
  if (image.dim(0) <= kMarkerChannel) return false;
  const Index plane = image.dim(1) * image.dim(2);
  const double* m = image.data() + kMarkerChannel * plane;
  return std::any_of(m, m + plane, [](double v) { return v > kMarkerThreshold; });
}

Mask apply_style(const Mask& base, const Tensor& image, const StyleTransform& style) {
  switch (style.kind) {
    case StyleKind::Identity: return base;
    case StyleKind::RemoveSmall: return remove_small_components(base, style.param);
    case StyleKind::BoundaryGrow: return dilate(base, style.param);
    case StyleKind::BoundaryShrink: return erode(base, style.param);
    case StyleKind::DilateIfMarker:
      return image_has_marker(image) ? dilate(base, style.param) : base;
  }
  return base;
}

// ---- Generation -------------------------------------------------------------

void CohortSpec::validate() const {
  const auto fail = [&](const std::string& what) {
    throw ValidationError("cohort '" + source + "': " + what);
  };
  if (source.empty()) fail("source id is empty");
  if (n_samples < 1) fail("n_samples must be >= 1");
  if (height < 8 || width < 8 || height % 8 || width % 8)
    fail("height and width must be positive multiples of 8");
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (lesion_count_min < 0 || lesion_count_max < lesion_count_min)
    fail("lesion count range is empty");
  if (!(radius_min > 0.0) || radius_max < radius_min) fail("lesion radius range is invalid");
  if (2.0 * radius_max >= static_cast<double>(std::min(height, width)))
    fail("lesion radius does not fit in the image");
  if (!(marker_probability >= 0.0 && marker_probability <= 1.0))
    fail("marker_probability must be in [0,1]");
  if (marker_probability > 0.0 && in_channels <= kMarkerChannel)
    fail("markers need a second image channel");
  if (!(noise >= 0.0)) fail("noise must be non-negative");
  style.validate();
}

namespace {

constexpr double kEccentricityMax = 0.3;
constexpr double kMarkerAmplitude = 1.0;
constexpr double kMarkerSigma = 2.5;

Sample generate_sample(const CohortSpec& spec, Index index) {
  Rng rng = Rng(spec.seed).split(static_cast<std::uint64_t>(index));
  const Index H = spec.height, W = spec.width;
  const bool marker = rng.bernoulli(spec.marker_probability);
  const Index count = rng.uniform_int(spec.lesion_count_min, spec.lesion_count_max);

  // Each lesion is an anisotropic Gaussian bump whose half-maximum contour is
  // an ellipse with semi-axes r(1 +- e).
  std::vector<double> field(static_cast<std::size_t>(H * W), 0.0);
  const double half_max_scale = std::sqrt(2.0 * std::numbers::ln2);
  for (Index l = 0; l < count; ++l) {
    const double r = rng.uniform(spec.radius_min, spec.radius_max);
    const double e = rng.uniform(0.0, kEccentricityMax);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double cy = rng.uniform(r, static_cast<double>(H) - r);
    const double cx = rng.uniform(r, static_cast<double>(W) - r);
    const double sa = r * (1.0 + e) / half_max_scale, sb = r * (1.0 - e) / half_max_scale;
    const double c = std::cos(theta), s = std::sin(theta);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double u = (c * dx + s * dy) / sa, v = (-s * dx + c * dy) / sb;
        field[y * W + x] += std::exp(-0.5 * (u * u + v * v));
      }
  }

  Sample out;
  out.has_marker = marker;
  out.source = spec.source;
  out.base_truth = Mask(H, W);
  out.image = Tensor({spec.in_channels, H, W});
  for (Index i = 0; i < H * W; ++i) {
    const double f = std::min(field[i], 1.0);
    out.base_truth.bits[i] = field[i] >= 0.5 ? 1 : 0;
    out.image[kIntensityChannel * H * W + i] = 0.1 + 0.8 * f + spec.noise * rng.normal();
    if (spec.in_channels > kMarkerChannel) {
      const double n = std::clamp(spec.noise * rng.normal(), -4.0 * spec.noise, 4.0 * spec.noise);
      out.image[kMarkerChannel * H * W + i] = 0.05 + 0.15 * f + n;
    }
  }
  for (Index ch = 2; ch < spec.in_channels; ++ch)
    for (Index i = 0; i < H * W; ++i) out.image[ch * H * W + i] = spec.noise * rng.normal();
  if (marker) {
    const double my = rng.uniform(0.0, static_cast<double>(H - 1));
    const double mx = rng.uniform(0.0, static_cast<double>(W - 1));
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double d2 = (y - my) * (y - my) + (x - mx) * (x - mx);
        out.image[kMarkerChannel * H * W + y * W + x] +=
            kMarkerAmplitude * std::exp(-0.5 * d2 / (kMarkerSigma * kMarkerSigma));
      }
  }
  // Store exactly what the float32 container can hold.
  for (Index i = 0; i < out.image.size(); ++i)
    out.image[i] = static_cast<double>(static_cast<float>(out.image[i]));
  out.label = apply_style(out.base_truth, out.image, spec.style);
  return out;
}

}  // namespace

Cohort generate_cohort(const CohortSpec& spec, int threads) {
  spec.validate();
  Cohort c{spec, std::vector<Sample>(static_cast<std::size_t>(spec.n_samples))};
  parallel_for(spec.n_samples, threads, [&](Index i) { c.samples[i] = generate_sample(spec, i); });
  return c;
}

std::vector<Sample> restyle(const std::vector<Sample>& samples, const StyleTransform& style) {
  std::vector<Sample> out = samples;
  for (auto& s : out) s.label = apply_style(s.base_truth, s.image, style);
  return out;
}

SplitIndices split_indices(Index n, const std::string& source, std::uint64_t seed,
                           SplitFractions f) {
  const double total = f.train + f.val + f.test;
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(total - 1.0) > 1e-9)
    throw ValidationError("split fractions must be non-negative and sum to 1");
  const Index n_train = static_cast<Index>(std::llround(f.train * static_cast<double>(n)));
  const Index n_val =
      static_cast<Index>(std::llround((f.train + f.val) * static_cast<double>(n))) - n_train;
  const Index n_test = n - n_train - n_val;
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw ValidationError("cohort '" + source + "' with " + std::to_string(n) +
                          " samples cannot give every split at least one sample");
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).split("split").split(source);
  for (Index i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

CohortSplit split_cohort(const Cohort& cohort, std::uint64_t seed, SplitFractions fractions) {
  const SplitIndices idx =
      split_indices(static_cast<Index>(cohort.samples.size()), cohort.spec.source, seed, fractions);
  CohortSplit out;
  for (Index i : idx.train) out.train.push_back(cohort.samples[i]);
  for (Index i : idx.val) out.val.push_back(cohort.samples[i]);
  for (Index i : idx.test) out.test.push_back(cohort.samples[i]);
  return out;
}

// ---- Container --------------------------------------------------------------

namespace {

std::string pack_masks(const std::vector<Sample>& samples, bool labels) {
  std::string bytes;
  for (const auto& s : samples) {
    const Mask& m = labels ? s.label : s.base_truth;
    std::string packed(static_cast<std::size_t>((m.size() + 7) / 8), '\0');
    for (Index i = 0; i < m.size(); ++i)
      if (m.bits[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
    bytes += packed;
  }
  return bytes;
}

Mask unpack_mask(const std::string& bytes, std::size_t offset, Index H, Index W) {
  Mask m(H, W);
  for (Index i = 0; i < m.size(); ++i)
    m.bits[i] = (static_cast<unsigned char>(bytes[offset + i / 8]) >> (i % 8)) & 1;
  return m;
}

std::string read_blob(const std::filesystem::path& path, std::size_t expected) {
  std::string bytes;
  try {
    bytes = read_text_file(path);
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  if (bytes.size() != expected)
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(bytes.size()));
  return bytes;
}

}  // namespace

void save_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
  const CohortSpec& spec = cohort.spec;
  std::filesystem::create_directories(dir);
  Json manifest;
  manifest["format"] = "styleseg-cohort";
  manifest["schema_version"] = kCohortSchemaVersion;
  manifest["spec"] = to_json(spec);
  manifest["channels"] = spec.in_channels;
  manifest["height"] = spec.height;
  manifest["width"] = spec.width;
  Json list = Json::array();
  std::ostringstream images;
  for (std::size_t i = 0; i < cohort.samples.size(); ++i) {
    const Sample& s = cohort.samples[i];
    list.push_back({{"index", i}, {"has_marker", s.has_marker}});
    std::vector<float> f(s.image.span().begin(), s.image.span().end());
    write_f32_le(images, f);
  }
  manifest["samples"] = list;
  write_text_file(dir / "images.f32", images.str());
  write_text_file(dir / "labels.bits", pack_masks(cohort.samples, true));
  write_text_file(dir / "base.bits", pack_masks(cohort.samples, false));
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Cohort load_cohort(const std::filesystem::path& dir) {
  Json manifest;
  try {
    manifest = Json::parse(read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  if (manifest.value("format", "") != "styleseg-cohort")
    throw FormatError(dir.string() + ": not a cohort container");
  if (manifest.value("schema_version", 0) != kCohortSchemaVersion)
    throw FormatError(dir.string() + ": unsupported cohort schema version " +
                      manifest.value("schema_version", Json(0)).dump());
  Cohort c;
  try {
    c.spec = cohort_spec_from_json(manifest.at("spec"), "cohort spec");
  } catch (const ConfigError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  const Index C = manifest.at("channels").get<Index>(), H = manifest.at("height").get<Index>(),
              W = manifest.at("width").get<Index>();
  const auto& list = manifest.at("samples");
  const std::size_t n = list.size();
  const std::size_t mask_bytes = static_cast<std::size_t>((H * W + 7) / 8);
  const std::string images = read_blob(dir / "images.f32", n * C * H * W * sizeof(float));
  const std::string labels = read_blob(dir / "labels.bits", n * mask_bytes);
  const std::string base = read_blob(dir / "base.bits", n * mask_bytes);
  std::istringstream is(images);
  std::vector<float> buf(static_cast<std::size_t>(C * H * W));
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.source = c.spec.source;
    s.has_marker = list[i].at("has_marker").get<bool>();
    read_f32_le(is, buf);
    s.image = Tensor({C, H, W});
    for (std::size_t k = 0; k < buf.size(); ++k) s.image[k] = buf[k];
    s.label = unpack_mask(labels, i * mask_bytes, H, W);
    s.base_truth = unpack_mask(base, i * mask_bytes, H, W);
    c.samples.push_back(std::move(s));
  }
  return c;
}

}  // namespace styleseg
