// SPDX-License-Identifier: Apache-2.0
#include "corrguide/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace corrguide::synth {

namespace {

using ordered_json = nlohmann::ordered_json;

// Seeded value noise: a coarse lattice of normals, bilinearly interpolated,
// with a white component mixed on top. Each channel is standardized.
Matrix value_noise(const GridShape& shape, int d, SplitMix64& rng, double corr_len,
                   double fine_amp) {
  corr_len = std::max(1.0, corr_len);
  const int n = shape.half_tokens();
  Matrix out(n, d);
  const int lh = static_cast<int>(std::ceil((shape.h - 1) / corr_len)) + 2;
  const int lw = static_cast<int>(std::ceil((shape.w - 1) / corr_len)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(lh) * lw);
  for (int c = 0; c < d; ++c) {
    for (double& v : lattice) v = rng.next_normal();
    for (int i = 0; i < shape.h; ++i) {
      const double x = i / corr_len;
      const int x0 = static_cast<int>(x);
      const double fx = x - x0;
      for (int j = 0; j < shape.w; ++j) {
        const double y = j / corr_len;
        const int y0 = static_cast<int>(y);
        const double fy = y - y0;
        const double v00 = lattice[static_cast<std::size_t>(x0) * lw + y0];
        const double v01 = lattice[static_cast<std::size_t>(x0) * lw + y0 + 1];
        const double v10 = lattice[static_cast<std::size_t>(x0 + 1) * lw + y0];
        const double v11 = lattice[static_cast<std::size_t>(x0 + 1) * lw + y0 + 1];
        const double smooth = v00 * (1 - fx) * (1 - fy) + v01 * (1 - fx) * fy +
                              v10 * fx * (1 - fy) + v11 * fx * fy;
        out(i * shape.w + j, c) = smooth + fine_amp * rng.next_normal();
      }
    }
    const double mean = out.col(c).mean();
    const double var = (out.col(c).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    out.col(c) = (out.col(c).array() - mean) / (sd > 1e-12 ? sd : 1.0);
  }
  // Equalize per-token norms. Dot-product attention ranks keys by
  // similarity-times-magnitude; without this, large-norm tokens act as
  // indiscriminate attention sinks and token identity is not recoverable
  // even from clean features.
  const double target_norm = std::sqrt(static_cast<double>(d));
  for (int r = 0; r < n; ++r) {
    const double norm = out.row(r).norm();
    if (norm > 1e-12) out.row(r) *= target_norm / norm;
  }
  return out;
}

// Target-token coordinate mapped into the reference frame; nullopt when the
// mapped coordinate leaves the grid.
std::optional<TokenCoord> warp_coord(TokenCoord c, const SceneParams& p) {
  int i = c.i;
  int j = c.j;
  if (p.warp == SceneParams::Warp::Affine) {
    if (p.flip_h) j = p.shape.w - 1 - j;
    for (int r = 0; r < ((p.rot_quarter % 4) + 4) % 4; ++r) {
      const int ni = j;
      const int nj = p.shape.h - 1 - i;
      i = ni;
      j = nj;
    }
  }
  i += p.shift_i;
  j += p.shift_j;
  if (i < 0 || i >= p.shape.h || j < 0 || j >= p.shape.w) return std::nullopt;
  return TokenCoord{i, j};
}

void validate_params(const SceneParams& p) {
  if (p.d < 1) throw ArgumentError("generate_scene: d must be >= 1");
  if (std::abs(p.shift_i) > p.shape.h / 2 || std::abs(p.shift_j) > p.shape.w / 2)
    throw ArgumentError("generate_scene: shift exceeds half the grid extent");
  if (p.warp == SceneParams::Warp::Affine && (p.rot_quarter % 2) != 0 && p.shape.h != p.shape.w)
    throw ArgumentError("generate_scene: quarter turns require a square half grid");
}

struct Bbox {
  int i0, i1, j0, j1;  // inclusive
  int height() const { return i1 - i0 + 1; }
  int width() const { return j1 - j0 + 1; }
};

Bbox overlap_bbox(const ScenePair& scene) {
  Bbox b{scene.shape.h, -1, scene.shape.w, -1};
  for (int i = 0; i < scene.shape.h; ++i)
    for (int j = 0; j < scene.shape.w; ++j)
      if (scene.overlap[i * scene.shape.w + j] > 0.5) {
        b.i0 = std::min(b.i0, i);
        b.i1 = std::max(b.i1, i);
        b.j0 = std::min(b.j0, j);
        b.j1 = std::max(b.j1, j);
      }
  return b;
}

}  // namespace

ScenePair generate_scene(std::uint64_t seed, const SceneParams& params, const MaskParams& mask) {
  validate_params(params);
  const GridShape shape = params.shape;
  const int n = shape.half_tokens();

  ScenePair scene;
  scene.shape = shape;
  scene.d = params.d;
  scene.seed = seed;
  scene.params = params;
  scene.gt_flat.assign(n, -1);
  scene.overlap = Vector::Zero(n);

  SplitMix64 root(seed);
  SplitMix64 ref_rng = root.fork(0);
  SplitMix64 fill_rng = root.fork(1);
  scene.reference = value_noise(shape, params.d, ref_rng, params.texture_corr_len,
                                params.texture_fine_amp);
  const Matrix filler = value_noise(shape, params.d, fill_rng, params.texture_corr_len,
                                    params.texture_fine_amp);

  scene.target = filler;
  int overlap_count = 0;
  for (int i = 0; i < shape.h; ++i) {
    for (int j = 0; j < shape.w; ++j) {
      const int idx = i * shape.w + j;
      if (const auto mapped = warp_coord(TokenCoord{i, j}, params)) {
        scene.gt_flat[idx] = flatten_half(*mapped, shape);
        scene.overlap[idx] = 1.0;
        scene.target.row(idx) = scene.reference.row(scene.gt_flat[idx]);
        ++overlap_count;
      }
    }
  }
  if (overlap_count == 0)
    throw ArgumentError("generate_scene: warp parameters leave no overlap");

  scene.value_min = std::min(scene.reference.minCoeff(), scene.target.minCoeff());
  scene.value_max = std::max(scene.reference.maxCoeff(), scene.target.maxCoeff());
  if (!(scene.value_max > scene.value_min)) scene.value_max = scene.value_min + 1.0;

  scene.inpaint = generate_mask(root.fork(2).next(), scene, mask);
  return scene;
}

Vector generate_mask(std::uint64_t seed, const ScenePair& scene, const MaskParams& params) {
  if (!(params.ratio_lo > 0.0 && params.ratio_lo < params.ratio_hi && params.ratio_hi < 1.0))
    throw ArgumentError("generate_mask: need 0 < ratio_lo < ratio_hi < 1");
  if (params.min_strokes < 0 || params.max_strokes < params.min_strokes)
    throw ArgumentError("generate_mask: invalid stroke count range");

  const GridShape shape = scene.shape;
  const int n = shape.half_tokens();
  const Bbox box = overlap_bbox(scene);
  SplitMix64 rng(seed);

  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    Vector mask = Vector::Zero(n);

    const double ratio_goal =
        params.ratio_lo + rng.next_unit() * (params.ratio_hi - params.ratio_lo);
    const int budget = std::max(1, static_cast<int>(std::lround(ratio_goal * n)));

    // Rectangle inside the overlap bounding box, sized to most of the budget.
    const double rect_frac = 0.55 + 0.35 * rng.next_unit();
    const int area = std::max(1, static_cast<int>(budget * rect_frac));
    int rh = std::clamp(static_cast<int>(std::lround(std::sqrt(static_cast<double>(area)))),
                        1, box.height());
    int rw = std::clamp((area + rh - 1) / rh, 1, box.width());
    const int ri = rng.next_int(box.i0, box.i1 - rh + 1);
    const int rj = rng.next_int(box.j0, box.j1 - rw + 1);
    for (int i = ri; i < ri + rh; ++i)
      for (int j = rj; j < rj + rw; ++j) mask[i * shape.w + j] = 1.0;

    // Width-1 random-walk strokes starting inside the overlap.
    const int strokes = params.max_strokes == 0
                            ? 0
                            : rng.next_int(params.min_strokes, params.max_strokes);
    for (int s = 0; s < strokes; ++s) {
      int ci = rng.next_int(box.i0, box.i1);
      int cj = rng.next_int(box.j0, box.j1);
      const int len = rng.next_int(2, std::max(3, (shape.h + shape.w) / 2));
      for (int step = 0; step < len; ++step) {
        mask[ci * shape.w + cj] = 1.0;
        const int dir = rng.next_int(0, 3);
        const int di = dir == 0 ? -1 : dir == 1 ? 1 : 0;
        const int dj = dir == 2 ? -1 : dir == 3 ? 1 : 0;
        ci = std::clamp(ci + di, 0, shape.h - 1);
        cj = std::clamp(cj + dj, 0, shape.w - 1);
      }
    }

    int masked = 0;
    int inside = 0;
    for (int idx = 0; idx < n; ++idx) {
      if (mask[idx] > 0.5) {
        ++masked;
        if (scene.overlap[idx] > 0.5) ++inside;
      }
    }
    const double ratio = static_cast<double>(masked) / n;
    const double coverage = masked == 0 ? 0.0 : static_cast<double>(inside) / masked;
    if (ratio >= params.ratio_lo && ratio <= params.ratio_hi &&
        coverage >= params.min_overlap_coverage)
      return mask;
  }
  throw GenerationError("generate_mask: could not satisfy ratio/coverage constraints");
}

ScenePair with_mask(ScenePair scene, Vector inpaint) {
  if (inpaint.size() != scene.shape.half_tokens())
    throw ArgumentError("with_mask: mask size mismatch");
  for (int i = 0; i < inpaint.size(); ++i)
    if (inpaint[i] != 0.0 && inpaint[i] != 1.0)
      throw ArgumentError("with_mask: mask must be binary");
  scene.inpaint = std::move(inpaint);
  return scene;
}

LatentTensor embed_stitched(const ScenePair& scene) {
  const GridShape shape = scene.shape;
  const int n = shape.stitched_tokens();
  Matrix image = Matrix::Zero(n, scene.d);
  Vector damage = Vector::Zero(n);
  for (int i = 0; i < shape.h; ++i) {
    for (int j = 0; j < shape.w; ++j) {
      const int half = i * shape.w + j;
      image.row(flatten(TokenCoord{i, j}, Half::Reference, shape)) = scene.reference.row(half);
      const int tgt = flatten(TokenCoord{i, j}, Half::Target, shape);
      image.row(tgt) = scene.target.row(half);
      damage[tgt] = scene.inpaint[half];
    }
  }
  SplitMix64 noise_rng = SplitMix64(scene.seed).fork(3);
  Matrix noise(n, scene.d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < scene.d; ++c) noise(r, c) = noise_rng.next_normal();
  return LatentTensor(shape, std::move(image), std::move(noise), std::move(damage));
}

CorrespondenceField ground_truth_field(const ScenePair& scene) {
  CorrespondenceField field = CorrespondenceField::empty(scene.shape);
  for (int idx = 0; idx < scene.shape.half_tokens(); ++idx) {
    if (scene.gt_flat[idx] < 0) continue;
    const TokenCoord own = unflatten_half(idx, scene.shape);
    const TokenCoord ref = unflatten_half(scene.gt_flat[idx], scene.shape);
    field.status[idx] = CorrStatus::Inlier;
    field.target[idx] = ref;
    field.consensus[idx] = 1.0;
    field.displacement(idx, 0) = ref.i - own.i;
    field.displacement(idx, 1) = ref.j - own.j;
  }
  return field;
}

namespace {

constexpr char kMagic[4] = {'C', 'R', 'F', 'S'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

std::string sidecar_path(const std::string& path) {
  std::filesystem::path p(path);
  p.replace_extension(".json");
  return p.string();
}

}  // namespace

void save_scene(const ScenePair& scene, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_scene: cannot open " + path);
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint8_t>(scene.params.warp));
  write_pod(out, static_cast<std::uint8_t>(scene.params.rot_quarter));
  write_pod(out, static_cast<std::uint8_t>(scene.params.flip_h ? 1 : 0));
  write_pod(out, static_cast<std::uint8_t>(0));
  write_pod(out, static_cast<std::uint32_t>(scene.shape.h));
  write_pod(out, static_cast<std::uint32_t>(scene.shape.w));
  write_pod(out, static_cast<std::uint32_t>(scene.d));
  write_pod(out, static_cast<std::int32_t>(scene.params.shift_i));
  write_pod(out, static_cast<std::int32_t>(scene.params.shift_j));
  write_pod(out, scene.seed);
  write_pod(out, scene.value_min);
  write_pod(out, scene.value_max);
  write_pod(out, scene.params.texture_corr_len);
  write_pod(out, scene.params.texture_fine_amp);

  const int n = scene.shape.half_tokens();
  // Matrices are written row-major token by token.
  std::vector<double> buffer;
  auto write_matrix = [&](const Matrix& m) {
    buffer.resize(static_cast<std::size_t>(n) * scene.d);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < scene.d; ++c) buffer[static_cast<std::size_t>(r) * scene.d + c] = m(r, c);
    write_doubles(out, buffer.data(), buffer.size());
  };
  write_matrix(scene.reference);
  write_matrix(scene.target);
  buffer.resize(n);
  for (int r = 0; r < n; ++r) buffer[r] = static_cast<double>(scene.gt_flat[r]);
  write_doubles(out, buffer.data(), buffer.size());
  write_doubles(out, scene.overlap.data(), static_cast<std::size_t>(n));
  write_doubles(out, scene.inpaint.data(), static_cast<std::size_t>(n));
  if (!out) throw IoError("save_scene: write failed for " + path);
  out.close();

  ordered_json meta;
  meta["schema"] = 1;
  meta["seed"] = scene.seed;
  meta["h"] = scene.shape.h;
  meta["w"] = scene.shape.w;
  meta["d"] = scene.d;
  meta["warp"] = scene.params.warp == SceneParams::Warp::Shift ? "shift" : "affine";
  meta["shift_i"] = scene.params.shift_i;
  meta["shift_j"] = scene.params.shift_j;
  meta["rot_quarter"] = scene.params.rot_quarter;
  meta["flip_h"] = scene.params.flip_h;
  meta["texture_corr_len"] = scene.params.texture_corr_len;
  meta["texture_fine_amp"] = scene.params.texture_fine_amp;
  meta["overlap_tokens"] = static_cast<int>((scene.overlap.array() > 0.5).count());
  meta["mask_tokens"] = static_cast<int>((scene.inpaint.array() > 0.5).count());
  meta["mask_ratio"] = scene.inpaint.sum() / scene.shape.half_tokens();
  meta["value_min"] = scene.value_min;
  meta["value_max"] = scene.value_max;
  meta["file"] = std::filesystem::path(path).filename().string();
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  if (!side) throw IoError("save_scene: cannot open sidecar for " + path);
  side << meta.dump(2) << '\n';
}

ScenePair load_scene(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_scene: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("load_scene: bad magic in " + path);
  if (read_pod<std::uint16_t>(in) != kVersion)
    throw IoError("load_scene: unsupported version in " + path);

  ScenePair scene;
  scene.params.warp = static_cast<SceneParams::Warp>(read_pod<std::uint8_t>(in));
  scene.params.rot_quarter = read_pod<std::uint8_t>(in);
  scene.params.flip_h = read_pod<std::uint8_t>(in) != 0;
  read_pod<std::uint8_t>(in);
  const auto h = static_cast<int>(read_pod<std::uint32_t>(in));
  const auto w = static_cast<int>(read_pod<std::uint32_t>(in));
  scene.d = static_cast<int>(read_pod<std::uint32_t>(in));
  scene.shape = GridShape(h, w);
  scene.params.shape = scene.shape;
  scene.params.d = scene.d;
  scene.params.shift_i = read_pod<std::int32_t>(in);
  scene.params.shift_j = read_pod<std::int32_t>(in);
  scene.seed = read_pod<std::uint64_t>(in);
  scene.value_min = read_pod<double>(in);
  scene.value_max = read_pod<double>(in);
  scene.params.texture_corr_len = read_pod<double>(in);
  scene.params.texture_fine_amp = read_pod<double>(in);

  const int n = scene.shape.half_tokens();
  std::vector<double> buffer(static_cast<std::size_t>(n) * scene.d);
  auto read_matrix = [&](Matrix& m) {
    m.resize(n, scene.d);
    read_doubles(in, buffer.data(), buffer.size());
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < scene.d; ++c) m(r, c) = buffer[static_cast<std::size_t>(r) * scene.d + c];
  };
  read_matrix(scene.reference);
  read_matrix(scene.target);
  buffer.resize(n);
  read_doubles(in, buffer.data(), n);
  scene.gt_flat.resize(n);
  for (int r = 0; r < n; ++r) scene.gt_flat[r] = static_cast<int>(buffer[r]);
  scene.overlap.resize(n);
  read_doubles(in, scene.overlap.data(), n);
  scene.inpaint.resize(n);
  read_doubles(in, scene.inpaint.data(), n);
  if (!in) throw IoError("load_scene: truncated file " + path);
  return scene;
}

}  // namespace corrguide::synth
