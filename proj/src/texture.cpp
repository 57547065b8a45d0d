#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "volxai/concepts.hpp"
#include "volxai/errors.hpp"

namespace volxai::concepts {

namespace {

double plogp(double p) { return p > 0.0 ? -p * std::log2(p) : 0.0; }

double entropy(const Eigen::MatrixXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) h += plogp(p.data()[i]);
  return h;
}

bool labelled(const LabelVolume& lv, int x, int y, int z) {
  return in_grid(lv.dims, x, y, z) && lv(x, y, z) > 0;
}

int max_extent(const Index3& d) { return std::max({d[0], d[1], d[2]}); }

std::vector<Index3> neighbour_offsets_26() {
  std::vector<Index3> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (dx || dy || dz) out.push_back({dx, dy, dz});
  return out;
}

FeatureSet all_undefined(std::initializer_list<const char*> names, const std::string& why) {
  FeatureSet fs;
  for (const char* n : names) fs.push_back({n, std::nullopt, why});
  return fs;
}

// MCC for one normalized symmetric co-occurrence matrix. Q = Px^-1 P Py^-1 P^T
// restricted to occupied levels is similar to the symmetric matrix
// D^-1/2 P D^-1 P D^-1/2, so its eigenvalues are real and non-negative.
std::optional<double> mcc_of(const Eigen::MatrixXd& p) {
  const Eigen::VectorXd px = p.rowwise().sum();
  std::vector<Eigen::Index> occ;
  for (Eigen::Index i = 0; i < px.size(); ++i)
    if (px(i) > 0) occ.push_back(i);
  const auto n = static_cast<Eigen::Index>(occ.size());
  if (n < 2) return std::nullopt;
  Eigen::MatrixXd s(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) {
        acc += p(occ[a], occ[k]) * p(occ[b], occ[k]) / px(occ[k]);
      }
      s(a, b) = acc / std::sqrt(px(occ[a]) * px(occ[b]));
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return std::nullopt;
  const double second = es.eigenvalues()(n - 2);  // ascending order
  return std::sqrt(std::max(second, 0.0));
}

}  // namespace

const std::array<Index3, 13>& unique_directions() {
  static const std::array<Index3, 13> dirs = [] {
    std::array<Index3, 13> d{};
    std::size_t k = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          // Keep the representative whose first non-zero component is positive.
          const int first = dx != 0 ? dx : (dy != 0 ? dy : dz);
          if (first > 0) d[k++] = {dx, dy, dz};
        }
    return d;
  }();
  return dirs;
}

std::size_t LabelVolume::masked_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l > 0; }));
}

std::vector<Eigen::MatrixXd> glcm_matrices(const LabelVolume& lv) {
  const int nb = lv.bin_count;
  std::vector<Eigen::MatrixXd> out;
  for (const Index3& d : unique_directions()) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nb, nb);
    for (int z = 0; z < lv.dims[2]; ++z)
      for (int y = 0; y < lv.dims[1]; ++y)
        for (int x = 0; x < lv.dims[0]; ++x) {
          const int a = lv(x, y, z);
          if (a == 0 || !labelled(lv, x + d[0], y + d[1], z + d[2])) continue;
          const int b = lv(x + d[0], y + d[1], z + d[2]);
          p(a - 1, b - 1) += 1.0;
          p(b - 1, a - 1) += 1.0;
        }
    const double total = p.sum();
    if (total > 0) out.push_back(p / total);
  }
  return out;
}

FeatureSet glcm_features(const LabelVolume& lv) {
  const auto mats = glcm_matrices(lv);
  if (mats.empty()) {
    return all_undefined({"JointAverage", "SumAverage", "SumEntropy", "DifferenceAverage",
                          "DifferenceEntropy", "MCC"},
                         "no voxel pairs in any direction");
  }
  const int nb = lv.bin_count;
  double ja = 0, sa = 0, se = 0, da = 0, de = 0, mcc = 0;
  bool degenerate = false;
  for (const auto& p : mats) {
    Eigen::VectorXd psum = Eigen::VectorXd::Zero(2 * nb + 1);
    Eigen::VectorXd pdiff = Eigen::VectorXd::Zero(nb);
    double joint = 0;
    for (int i = 1; i <= nb; ++i)
      for (int j = 1; j <= nb; ++j) {
        const double v = p(i - 1, j - 1);
        joint += i * v;
        psum(i + j) += v;
        pdiff(std::abs(i - j)) += v;
      }
    ja += joint;
    for (int k = 2; k <= 2 * nb; ++k) {
      sa += k * psum(k);
      se += plogp(psum(k));
    }
    for (int k = 0; k < nb; ++k) {
      da += k * pdiff(k);
      de += plogp(pdiff(k));
    }
    if (auto m = mcc_of(p)) {
      mcc += *m;
    } else {
      mcc += 1.0;
      degenerate = true;
    }
  }
  const double n = static_cast<double>(mats.size());
  return {
      {"JointAverage", ja / n, ""},
      {"SumAverage", sa / n, ""},
      {"SumEntropy", se / n, ""},
      {"DifferenceAverage", da / n, ""},
      {"DifferenceEntropy", de / n, ""},
      {"MCC", mcc / n, degenerate ? "degenerate" : ""},
  };
}

std::vector<Eigen::MatrixXd> glrlm_matrices(const LabelVolume& lv) {
  const int nb = lv.bin_count;
  const int max_len = max_extent(lv.dims);
  std::vector<Eigen::MatrixXd> out;
  for (const Index3& d : unique_directions()) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nb, max_len);
    for (int z = 0; z < lv.dims[2]; ++z)
      for (int y = 0; y < lv.dims[1]; ++y)
        for (int x = 0; x < lv.dims[0]; ++x) {
          const int g = lv(x, y, z);
          if (g == 0) continue;
          // Only run starts: the predecessor along d is outside or different.
          const int px = x - d[0], py = y - d[1], pz = z - d[2];
          if (labelled(lv, px, py, pz) && lv(px, py, pz) == g) continue;
          int len = 1;
          int cx = x + d[0], cy = y + d[1], cz = z + d[2];
          while (labelled(lv, cx, cy, cz) && lv(cx, cy, cz) == g) {
            ++len;
            cx += d[0];
            cy += d[1];
            cz += d[2];
          }
          p(g - 1, len - 1) += 1.0;
        }
    const double total = p.sum();
    if (total > 0) out.push_back(p / total);
  }
  return out;
}

FeatureSet glrlm_features(const LabelVolume& lv) {
  const auto mats = glrlm_matrices(lv);
  if (mats.empty()) {
    return all_undefined({"RunEntropy", "RunLengthNonUniformityNormalized"}, "empty mask");
  }
  double re = 0, rlnn = 0;
  for (const auto& p : mats) {
    re += entropy(p);
    rlnn += p.colwise().sum().array().square().sum();
  }
  const double n = static_cast<double>(mats.size());
  return {{"RunEntropy", re / n, ""}, {"RunLengthNonUniformityNormalized", rlnn / n, ""}};
}

namespace {

// Zone sizes per gray level via breadth-first flood fill.
Eigen::MatrixXd glszm_counts(const LabelVolume& lv) {
  const int nb = lv.bin_count;
  const std::size_t n = lv.labels.size();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(nb, static_cast<Eigen::Index>(std::max<std::size_t>(n, 1)));
  std::vector<std::uint8_t> seen(n, 0);
  const auto offsets = neighbour_offsets_26();
  std::deque<Index3> queue;
  for (int z = 0; z < lv.dims[2]; ++z)
    for (int y = 0; y < lv.dims[1]; ++y)
      for (int x = 0; x < lv.dims[0]; ++x) {
        const std::size_t i = linear_index(lv.dims, x, y, z);
        const int g = lv.labels[i];
        if (g == 0 || seen[i]) continue;
        seen[i] = 1;
        queue.push_back({x, y, z});
        long long size = 0;
        while (!queue.empty()) {
          const Index3 v = queue.front();
          queue.pop_front();
          ++size;
          for (const Index3& o : offsets) {
            const int nx = v[0] + o[0], ny = v[1] + o[1], nz = v[2] + o[2];
            if (!in_grid(lv.dims, nx, ny, nz)) continue;
            const std::size_t j = linear_index(lv.dims, nx, ny, nz);
            if (seen[j] || lv.labels[j] != g) continue;
            seen[j] = 1;
            queue.push_back({nx, ny, nz});
          }
        }
        counts(g - 1, size - 1) += 1.0;
      }
  return counts;
}

}  // namespace

Eigen::MatrixXd glszm_matrix(const LabelVolume& lv) {
  const Eigen::MatrixXd c = glszm_counts(lv);
  const double nz = c.sum();
  return nz > 0 ? Eigen::MatrixXd(c / nz) : c;
}

FeatureSet glszm_features(const LabelVolume& lv) {
  const Eigen::MatrixXd c = glszm_counts(lv);
  const double nz = c.sum();
  if (nz == 0) {
    return all_undefined(
        {"SizeZoneNonUniformity", "SizeZoneNonUniformityNormalized", "ZoneEntropy"}, "empty mask");
  }
  const double col_sq = c.colwise().sum().array().square().sum();
  return {
      {"SizeZoneNonUniformity", col_sq / nz, ""},
      {"SizeZoneNonUniformityNormalized", col_sq / (nz * nz), ""},
      {"ZoneEntropy", entropy(c / nz), ""},
  };
}

Eigen::MatrixXd gldm_matrix(const LabelVolume& lv) {
  const int nb = lv.bin_count;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nb, 27);
  const auto offsets = neighbour_offsets_26();
  for (int z = 0; z < lv.dims[2]; ++z)
    for (int y = 0; y < lv.dims[1]; ++y)
      for (int x = 0; x < lv.dims[0]; ++x) {
        const int g = lv(x, y, z);
        if (g == 0) continue;
        int dep = 0;
        for (const Index3& o : offsets) {
          const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (labelled(lv, nx, ny, nz) && lv(nx, ny, nz) == g) ++dep;
        }
        p(g - 1, dep) += 1.0;
      }
  const double total = p.sum();
  return total > 0 ? Eigen::MatrixXd(p / total) : p;
}

FeatureSet gldm_features(const LabelVolume& lv) {
  const Eigen::MatrixXd p = gldm_matrix(lv);
  if (p.sum() == 0) {
    return all_undefined({"SmallDependenceEmphasis", "DependenceEntropy"}, "empty mask");
  }
  double sde = 0;
  for (Eigen::Index d = 0; d < p.cols(); ++d) {
    const double dd = static_cast<double>(d + 1);
    sde += p.col(d).sum() / (dd * dd);
  }
  return {{"SmallDependenceEmphasis", sde, ""}, {"DependenceEntropy", entropy(p), ""}};
}

}  // namespace volxai::concepts
