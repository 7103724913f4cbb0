#include "mer/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "mer/error.hpp"

namespace mer {

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double spread_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return (*hi - *lo) / 2.0;
}

std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

double AblationRow::uf1_mean() const { return mean_of(uf1); }
double AblationRow::uar_mean() const { return mean_of(uar); }
double AblationRow::uf1_spread() const { return spread_of(uf1); }
double AblationRow::uar_spread() const { return spread_of(uar); }

std::vector<AblationRow> ablation_lattice() {
  return {
      {"baseline", false, false, false, false, {}, {}, {}},
      {"+Mag", true, false, false, false, {}, {}, {}},
      {"+Mag+ECA", true, true, false, false, {}, {}, {}},
      {"+Mag+TSM", true, false, true, false, {}, {}, {}},
      {"+Mag+ECA+TSM", true, true, true, false, {}, {}, {}},
      {"+Mag+ECA+TSM+SKD", true, true, true, true, {}, {}, {}},
  };
}

std::vector<AblationRow> run_ablation(const Dataset& ds, const ModelConfig& cfg, const TrainSchedule& schedule,
                                      std::size_t num_seeds, const ProtocolOptions& opts) {
  if (num_seeds == 0) throw ParameterError("ablation needs at least one seed");
  auto rows = ablation_lattice();
  for (auto& row : rows) {
    ModelConfig mc = cfg;
    mc.use_mag = row.mag;
    mc.use_eca = row.eca;
    mc.use_tsm = row.tsm;
    mc.use_skd = row.skd;
    ProtocolOptions po = opts;
    po.classifiers = {Classifier::Deepest};
    po.log_dir.clear();
    for (std::size_t k = 0; k < num_seeds; ++k) {
      po.base_seed = opts.base_seed + 1000 * k;
      const EvalReport r = run_loso(ds, mc, schedule, po);
      const auto& deep = r.result(Classifier::Deepest);
      row.seeds.push_back(po.base_seed);
      row.uf1.push_back(deep.uf1);
      row.uar.push_back(deep.uar);
      spdlog::info("ablation {} seed {}: UF1 {:.4f} UAR {:.4f}", row.name, po.base_seed, deep.uf1, deep.uar);
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "row,mag,eca,tsm,skd,uf1_mean,uf1_spread,uar_mean,uar_spread,seeds,uf1_per_seed,uar_per_seed\n";
  for (const auto& r : rows) {
    auto join = [](const auto& v, auto fmt) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ";") + fmt(x);
      return s;
    };
    out << r.name << ',' << r.mag << ',' << r.eca << ',' << r.tsm << ',' << r.skd << ',' << f4(r.uf1_mean()) << ','
        << f4(r.uf1_spread()) << ',' << f4(r.uar_mean()) << ',' << f4(r.uar_spread()) << ','
        << join(r.seeds, [](std::uint64_t x) { return std::to_string(x); }) << ',' << join(r.uf1, f4) << ','
        << join(r.uar, f4) << '\n';
  }
  return out.str();
}

std::string ablation_text(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %3s %3s %3s %3s  %-16s %-16s\n", "row", "Mag", "ECA", "TSM", "SKD", "UF1",
                "UAR");
  out << line;
  auto mark = [](bool b) { return b ? "x" : "-"; };
  for (const auto& r : rows) {
    const std::string uf = f4(r.uf1_mean()) + " +- " + f4(r.uf1_spread());
    const std::string ua = f4(r.uar_mean()) + " +- " + f4(r.uar_spread());
    std::snprintf(line, sizeof line, "%-18s %3s %3s %3s %3s  %-16s %-16s\n", r.name.c_str(), mark(r.mag), mark(r.eca),
                  mark(r.tsm), mark(r.skd), uf.c_str(), ua.c_str());
    out << line;
  }
  return out.str();
}

}  // namespace mer
