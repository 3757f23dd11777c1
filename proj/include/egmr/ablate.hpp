#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "egmr/train.hpp"

namespace egmr {

struct AblationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<int> mask_sizes{1, 3, 5};
  std::string variant_rows = "ABCD";  // subset of the grid to run
  bool variants = true;
  bool mask_sweep = true;
};

struct AblationRow {
  std::string label;
  bool use_c2sa = false;
  bool use_ega = false;
  int mask_size = 3;
  std::vector<double> psnr;  // one per seed
  std::vector<double> ssim;
  double median_psnr = 0;
  double median_ssim = 0;
};

struct AblationResult {
  std::vector<AblationRow> variants;
  std::vector<AblationRow> mask_sweep;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ParameterError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Trains one model per (row, seed) on `train_set` and scores it on `eval_set`.
/// Variant rows follow the table layout: A baseline, B +C2SA, C +EGA, D both.
inline AblationResult run_ablation(const TrainConfig& base, const Dataset& train_set, const Dataset& eval_set,
                                   const AblationOptions& opt,
                                   const std::function<void(const std::string&)>& progress = {}) {
  if (opt.seeds.empty()) throw ParameterError("ablation needs at least one seed");
  if (opt.variants) {
    if (opt.variant_rows.empty()) throw ParameterError("ablation variant list is empty");
    for (char c : opt.variant_rows) {
      if (c < 'A' || c > 'D') throw ParameterError(std::string("unknown ablation variant '") + c + "', expected A-D");
    }
  }
  auto run_row = [&](AblationRow row, const std::string& tag) {
    for (auto seed : opt.seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.model.init_seed = seed;
      cfg.model.use_c2sa = row.use_c2sa;
      cfg.model.use_ega = row.use_ega;
      cfg.model.mask_size = row.mask_size;
      cfg.out_dir = base.out_dir + "/" + tag + "_seed" + std::to_string(seed);
      cfg.checkpoint_every = 0;
      EgmrModel<float> model(cfg.model);
      train(model, train_set, cfg);
      const auto rep = evaluate(model_predictor(model), eval_set);
      if (rep.entries.empty()) throw InputError("ablation evaluation set has no ground-truth samples");
      row.psnr.push_back(rep.mean_psnr);
      row.ssim.push_back(rep.mean_ssim);
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s seed %llu: psnr %.4f ssim %.4f", tag.c_str(),
                      static_cast<unsigned long long>(seed), rep.mean_psnr, rep.mean_ssim);
        progress(buf);
      }
    }
    row.median_psnr = median(row.psnr);
    row.median_ssim = median(row.ssim);
    return row;
  };

  AblationResult res;
  if (opt.variants) {
    const struct {
      const char* label;
      bool c2sa, ega;
    } grid[] = {{"A", false, false}, {"B", true, false}, {"C", false, true}, {"D", true, true}};
    for (const auto& g : grid) {
      if (opt.variant_rows.find(g.label[0]) == std::string::npos) continue;
      AblationRow row;
      row.label = g.label;
      row.use_c2sa = g.c2sa;
      row.use_ega = g.ega;
      row.mask_size = base.model.mask_size;
      res.variants.push_back(run_row(row, std::string("variant_") + g.label));
    }
  }
  if (opt.mask_sweep) {
    for (int m : opt.mask_sizes) {
      AblationRow row;
      row.label = std::to_string(m) + "x" + std::to_string(m);
      row.use_c2sa = true;
      row.use_ega = true;
      row.mask_size = m;
      res.mask_sweep.push_back(run_row(row, "mask_" + std::to_string(m)));
    }
  }
  return res;
}

inline void write_ablation(const AblationResult& r, const AblationOptions& opt, std::ostream& os) {
  os << "# egmr-ablation v1\n";
  os << "# seeds:";
  for (auto s : opt.seeds) os << " " << s;
  os << "\n";
  char buf[256];
  auto row_line = [&](const AblationRow& row, const char* a, const char* b) {
    std::snprintf(buf, sizeof(buf), "%-6s %-6s %-6s %10.4f %8.4f", row.label.c_str(), a, b, row.median_psnr,
                  row.median_ssim);
    os << buf;
    for (std::size_t i = 0; i < row.psnr.size(); ++i) {
      std::snprintf(buf, sizeof(buf), " %.4f/%.4f", row.psnr[i], row.ssim[i]);
      os << buf;
    }
    os << "\n";
  };
  if (!r.variants.empty()) {
    os << "table variants\n";
    os << "# row    c2sa   ega    median_psnr median_ssim per-seed psnr/ssim\n";
    for (const auto& row : r.variants) row_line(row, row.use_c2sa ? "yes" : "no", row.use_ega ? "yes" : "no");
  }
  if (!r.mask_sweep.empty()) {
    os << "table mask_size\n";
    os << "# mask   c2sa   ega    median_psnr median_ssim per-seed psnr/ssim\n";
    for (const auto& row : r.mask_sweep) row_line(row, "yes", "yes");
  }
}

}  // namespace egmr
