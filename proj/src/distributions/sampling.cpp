#include "amd/distributions.hpp"

#include <algorithm>
#include <fstream>

namespace amd::dist {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string model_id(const ValueModel& model) {
  if (const auto* m = std::get_if<MarginalDistribution>(&model)) return "iid:" + m->id();
  const auto& g = std::get<GridJointDistribution>(model);
  return "grid" + std::to_string(g.size()) + "x" + std::to_string(g.size());
}

nlohmann::json model_to_json(const ValueModel& model) {
  if (const auto* m = std::get_if<MarginalDistribution>(&model)) return m->to_json();
  auto j = std::get<GridJointDistribution>(model).to_json();
  j["kind"] = "grid";
  return j;
}

ValueModel model_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "grid") return MarginalDistribution::from_json(j);
  if (j.contains("file")) return GridJointDistribution::load(j.at("file").get<std::string>());
  if (j.contains("cells")) return GridJointDistribution::from_json(j);
  return correlated_grid();
}

SampleBatch sample(const ValueModel& model, std::size_t n_bidders, std::size_t batch_size,
                   std::uint64_t seed) {
  if (batch_size == 0) {
    throw DistributionError(DistributionError::Kind::Invalid, "batch_size must be at least 1");
  }
  const auto* grid = std::get_if<GridJointDistribution>(&model);
  if (grid != nullptr && n_bidders != 2) {
    throw DistributionError(DistributionError::Kind::Invalid,
                            "grid distribution requires exactly two bidders");
  }
  SampleBatch batch;
  batch.n_bidders = n_bidders;
  batch.batch_size = batch_size;
  batch.seed = seed;
  batch.distribution_id = model_id(model);
  batch.values.resize(n_bidders * batch_size);

  const std::size_t blocks = (batch_size + kSampleBlock - 1) / kSampleBlock;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    const std::size_t begin = static_cast<std::size_t>(b) * kSampleBlock;
    const std::size_t end = std::min(batch_size, begin + kSampleBlock);
    for (std::size_t k = begin; k < end; ++k) {
      std::span<double> profile(batch.values.data() + k * n_bidders, n_bidders);
      if (grid != nullptr) {
        grid->sample_into(rng, profile);
      } else {
        const auto& m = std::get<MarginalDistribution>(model);
        for (double& v : profile) v = m.sample(rng);
      }
    }
  }
  return batch;
}

}  // namespace amd::dist
