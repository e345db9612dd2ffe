#include "anatomatch/similarity.hpp"

#include <algorithm>
#include <limits>

#include "anatomatch/parallel.hpp"

namespace anatomatch {
namespace {

constexpr int64_t kGrainVoxels = 4096;

// Strict "better than" under the tie rule: higher score, then smaller index.
bool better(double s, int64_t idx, double best_s, int64_t best_idx) {
  return s > best_s || (s == best_s && idx < best_idx);
}

void check_channels(std::span<const float> v, const EmbeddingVolume& query) {
  require(static_cast<int>(v.size()) == query.channels(),
          "template vector has " + std::to_string(v.size()) + " channels, query has " +
              std::to_string(query.channels()));
}

struct Best {
  double score = -std::numeric_limits<double>::infinity();
  int64_t index = std::numeric_limits<int64_t>::max();
};

// Best voxel over a box, scanning rows in parallel chunks.
Best scan_box(std::span<const float> v, const EmbeddingVolume& query, const Box& box) {
  const Dims ext = box.extent();
  const Dims& d = query.dims();
  const int64_t rows = ext.z * ext.y;
  const int64_t grain = std::max<int64_t>(1, kGrainVoxels / ext.x);
  const int64_t chunks = (rows + grain - 1) / grain;
  std::vector<Best> partial(static_cast<size_t>(chunks));

  parallel_chunks(rows, grain, [&](int64_t r0, int64_t r1) {
    Best b;
    for (int64_t r = r0; r < r1; ++r) {
      const int64_t z = box.lo.z + r / ext.y, y = box.lo.y + r % ext.y;
      const int64_t base = (z * d.y + y) * d.x;
      for (int64_t x = box.lo.x; x <= box.hi.x; ++x) {
        const int64_t idx = base + x;
        const double s = dot(v, query.at_linear(idx));
        if (better(s, idx, b.score, b.index)) b = {s, idx};
      }
    }
    partial[static_cast<size_t>(r0 / grain)] = b;
  });

  Best best;
  for (const Best& b : partial)
    if (better(b.score, b.index, best.score, best.index)) best = b;
  return best;
}

}  // namespace

Box resolve(const SearchRegion& region, const Dims& dims) {
  Box b{{0, 0, 0}, {dims.z - 1, dims.y - 1, dims.x - 1}};
  if (region.lo) {
    b.lo = {std::max<int64_t>(region.lo->z, 0), std::max<int64_t>(region.lo->y, 0),
            std::max<int64_t>(region.lo->x, 0)};
  }
  if (region.hi) {
    b.hi = {std::min(region.hi->z, dims.z - 1), std::min(region.hi->y, dims.y - 1),
            std::min(region.hi->x, dims.x - 1)};
  }
  require(b.lo.z <= b.hi.z && b.lo.y <= b.hi.y && b.lo.x <= b.hi.x, "search region is empty");
  return b;
}

double SimilarityMap::at(const VoxelPoint& p) const {
  if (!box.contains(p)) fail(ErrorKind::Bounds, "point outside similarity map region");
  const Dims ext = box.extent();
  return scores[ext.linear({p.z - box.lo.z, p.y - box.lo.y, p.x - box.lo.x})];
}

SimilarityMap similarity_map(std::span<const float> v, const EmbeddingVolume& query,
                             const SearchRegion& region) {
  check_channels(v, query);
  SimilarityMap m{resolve(region, query.dims()), {}};
  const Dims ext = m.box.extent();
  const Dims& d = query.dims();
  m.scores.resize(static_cast<size_t>(ext.count()));
  parallel_chunks(ext.z * ext.y, 16, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const int64_t z = m.box.lo.z + r / ext.y, y = m.box.lo.y + r % ext.y;
      for (int64_t x = m.box.lo.x; x <= m.box.hi.x; ++x)
        m.scores[static_cast<size_t>(r * ext.x + (x - m.box.lo.x))] =
            dot(v, query.at_linear((z * d.y + y) * d.x + x));
    }
  });
  return m;
}

NNMatch nn_match_vector(std::span<const float> v, const EmbeddingVolume& query,
                        const SearchRegion& region) {
  check_channels(v, query);
  const Best b = scan_box(v, query, resolve(region, query.dims()));
  return {query.dims().unlinear(b.index), b.score};
}

NNMatch nn_match(const EmbeddingVolume& templ, const VoxelPoint& t, const EmbeddingVolume& query,
                 const SearchRegion& region) {
  return nn_match_vector(embedding_at(templ, t), query, region);
}

EmbeddingVolume downsample(const EmbeddingVolume& fine, int factor) {
  require(factor >= 1, "downsample factor must be >= 1");
  const Dims fd = fine.dims();
  const Dims cd{(fd.z + factor - 1) / factor, (fd.y + factor - 1) / factor,
                (fd.x + factor - 1) / factor};
  const Spacing fs = fine.spacing();
  const int c = fine.channels();
  EmbeddingVolume out(cd, c, {fs.z * factor, fs.y * factor, fs.x * factor}, false);
  std::vector<double> acc(static_cast<size_t>(c));
  for (int64_t i = 0; i < cd.count(); ++i) {
    const VoxelPoint cp = cd.unlinear(i);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int64_t z = cp.z * factor; z < std::min(fd.z, (cp.z + 1) * factor); ++z)
      for (int64_t y = cp.y * factor; y < std::min(fd.y, (cp.y + 1) * factor); ++y)
        for (int64_t x = cp.x * factor; x < std::min(fd.x, (cp.x + 1) * factor); ++x) {
          auto v = fine.at_linear(fd.linear({z, y, x}));
          for (int k = 0; k < c; ++k) acc[k] += v[k];
        }
    auto dst = out.at_linear(i);
    for (int k = 0; k < c; ++k) dst[k] = static_cast<float>(acc[k]);
  }
  return normalize(out).volume;
}

int downsample_factor(const Dims& coarse, const Dims& fine) {
  auto ceil_div = [](int64_t a, int64_t b) { return (a + b - 1) / b; };
  for (int64_t f = 1; f <= fine.z || f <= fine.y || f <= fine.x; ++f) {
    if (ceil_div(fine.z, f) == coarse.z && ceil_div(fine.y, f) == coarse.y &&
        ceil_div(fine.x, f) == coarse.x)
      return static_cast<int>(f);
  }
  fail(ErrorKind::Validation, "coarse dims are not a consistent downsampling of fine dims");
}

CoarseToFineMatch coarse_to_fine_match(const EmbeddingVolume& template_coarse,
                                       const EmbeddingVolume& template_fine, const VoxelPoint& t,
                                       const EmbeddingVolume& query_coarse,
                                       const EmbeddingVolume& query_fine,
                                       const CoarseToFineOptions& opts) {
  require(opts.top_k >= 1, "top_k must be >= 1");
  require(opts.window >= 1, "window must be >= 1");
  const int factor = downsample_factor(template_coarse.dims(), template_fine.dims());
  if (downsample_factor(query_coarse.dims(), query_fine.dims()) != factor)
    fail(ErrorKind::Validation, "template and query use different downsample factors");
  check_bounds(template_fine.dims(), t);

  const VoxelPoint tc{t.z / factor, t.y / factor, t.x / factor};
  const SimilarityMap coarse_map =
      similarity_map(embedding_at(template_coarse, tc), query_coarse);

  // Top-k coarse peaks, ordered by score then linear index.
  std::vector<int64_t> order(coarse_map.scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  const size_t k = std::min(order.size(), static_cast<size_t>(opts.top_k));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](int64_t a, int64_t b) {
                      return better(coarse_map.scores[a], a, coarse_map.scores[b], b);
                    });

  CoarseToFineMatch result;
  result.factor = factor;
  auto fine_vec = embedding_at(template_fine, t);
  const Dims qd = query_fine.dims();
  const int64_t before = (opts.window - 1) / 2, after = opts.window / 2;
  Best best;
  for (size_t i = 0; i < k; ++i) {
    const VoxelPoint cp = query_coarse.dims().unlinear(order[i]);
    const VoxelPoint centre{std::min(cp.z * factor + factor / 2, qd.z - 1),
                            std::min(cp.y * factor + factor / 2, qd.y - 1),
                            std::min(cp.x * factor + factor / 2, qd.x - 1)};
    const Box box = resolve(SearchRegion::box({centre.z - before, centre.y - before, centre.x - before},
                                              {centre.z + after, centre.y + after, centre.x + after}),
                            qd);
    result.searched.push_back(box);
    const Best b = scan_box(fine_vec, query_fine, box);
    if (better(b.score, b.index, best.score, best.index)) best = b;
  }
  result.match = {qd.unlinear(best.index), best.score};
  return result;
}

}  // namespace anatomatch
