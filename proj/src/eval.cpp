#include "lmn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

#include "lmn/rng.hpp"

namespace lmn {

MetricsReport score(const ThetaTable& theta, const OracleTable& oracle) {
  const int a_count = theta.action_count;
  if (a_count < 1) throw std::invalid_argument("theta table has no actions");

  // Canonical (unit, time) -> per-action values, so the result cannot depend
  // on the row order of the input table.
  std::map<std::pair<UnitId, int32_t>, std::vector<double>> by_record;
  std::vector<std::string> missing;
  for (const Estimate& e : theta.rows) {
    if (!oracle.contains(e.unit, e.time)) {
      if (missing.size() < 8)
        missing.push_back("(" + std::to_string(e.unit) + "," + std::to_string(e.time) + ")");
      continue;
    }
    auto& slot = by_record[{e.unit, e.time}];
    if (slot.empty()) slot.assign(static_cast<size_t>(a_count), std::nan(""));
    slot[static_cast<size_t>(e.action)] = e.theta;
  }
  if (!missing.empty()) {
    std::string keys;
    for (const auto& k : missing) keys += " " + k;
    throw LookupError("oracle does not cover these theta records:" + keys);
  }

  MetricsReport report;
  report.rmse_per_action = Eigen::VectorXd::Zero(a_count);
  report.bias_per_action = Eigen::VectorXd::Zero(a_count);
  Eigen::VectorXd sq_err = Eigen::VectorXd::Zero(a_count);
  Eigen::VectorXd err = Eigen::VectorXd::Zero(a_count);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(a_count);
  double pehe_sq = 0.0;
  long pehe_terms = 0;
  double policy_hat = 0.0, policy_true = 0.0;
  long policy_count = 0;

  for (const auto& [key, hats] : by_record) {
    const OracleRecord& rec = oracle.at(key.first, key.second);
    for (int a = 0; a < a_count; ++a) {
      if (std::isnan(hats[static_cast<size_t>(a)])) continue;
      double d = hats[static_cast<size_t>(a)] - rec.theta[a];
      sq_err[a] += d * d;
      err[a] += d;
      counts[a] += 1.0;
    }
    for (int a = 0; a < a_count; ++a) {
      if (std::isnan(hats[static_cast<size_t>(a)])) continue;
      for (int b = a + 1; b < a_count; ++b) {
        if (std::isnan(hats[static_cast<size_t>(b)])) continue;
        double d = (hats[static_cast<size_t>(a)] - hats[static_cast<size_t>(b)]) -
                   (rec.theta[a] - rec.theta[b]);
        pehe_sq += d * d;
        ++pehe_terms;
      }
    }
    int best = 0;
    for (int a = 1; a < a_count; ++a)
      if (rec.theta[a] < rec.theta[best]) best = a;
    if (!std::isnan(hats[static_cast<size_t>(best)])) {
      policy_hat += hats[static_cast<size_t>(best)];
      policy_true += rec.theta[best];
      ++policy_count;
    }
  }

  double total_sq = 0.0, total_n = 0.0;
  for (int a = 0; a < a_count; ++a) {
    report.rmse_per_action[a] = counts[a] > 0 ? std::sqrt(sq_err[a] / counts[a]) : 0.0;
    report.bias_per_action[a] = counts[a] > 0 ? err[a] / counts[a] : 0.0;
    total_sq += sq_err[a];
    total_n += counts[a];
  }
  report.rmse_overall = total_n > 0 ? std::sqrt(total_sq / total_n) : 0.0;
  report.pehe = pehe_terms > 0 ? std::sqrt(pehe_sq / static_cast<double>(pehe_terms)) : 0.0;
  report.policy_value_gap =
      policy_count > 0 ? std::abs(policy_hat - policy_true) / static_cast<double>(policy_count)
                       : 0.0;
  report.n_records = static_cast<int>(by_record.size());
  return report;
}

int PhenotypeAssignment::cluster_of_unit(UnitId unit) const {
  auto it = index_.find(unit);
  if (it == index_.end())
    throw LookupError("unit " + std::to_string(unit) + " has no phenotype");
  return it->second;
}

PhenotypeAssignment assign_phenotypes(const LatentTable& table, int n_clusters,
                                      uint64_t seed) {
  if (n_clusters < 1) throw ConfigError("phenotype cluster count must be >= 1");

  // Per-unit trajectory summary: the time average of the unit's latents.
  std::map<UnitId, std::pair<Eigen::VectorXd, int>> sums;
  for (int i = 0; i < table.size(); ++i) {
    auto& slot = sums[table.rows[static_cast<size_t>(i)].unit];
    if (slot.second == 0) slot.first = Eigen::VectorXd::Zero(table.dim());
    slot.first += table.z.col(i);
    slot.second += 1;
  }
  const int n = static_cast<int>(sums.size());
  if (n < n_clusters)
    throw std::runtime_error("fewer units (" + std::to_string(n) +
                             ") than phenotype clusters (" + std::to_string(n_clusters) + ")");

  PhenotypeAssignment out;
  Eigen::MatrixXd points(table.dim(), n);
  {
    int i = 0;
    for (auto& [unit, sum] : sums) {
      out.units.push_back(unit);
      points.col(i++) = sum.first / sum.second;
    }
  }

  // k-means++ seeding.
  Rng rng(hash_combine(seed, 0x93ea));
  out.centers.resize(table.dim(), n_clusters);
  std::vector<double> best_d2(static_cast<size_t>(n), 0.0);
  int first = static_cast<int>(rng.integer(static_cast<uint64_t>(n)));
  out.centers.col(0) = points.col(first);
  for (int c = 1; c < n_clusters; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double d2 = (points.col(i) - out.centers.col(0)).squaredNorm();
      for (int j = 1; j < c; ++j)
        d2 = std::min(d2, (points.col(i) - out.centers.col(j)).squaredNorm());
      best_d2[static_cast<size_t>(i)] = d2;
      total += d2;
    }
    int pick = n - 1;
    if (total > 0) {
      double u = rng.uniform() * total, acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += best_d2[static_cast<size_t>(i)];
        if (u < acc) { pick = i; break; }
      }
    } else {
      pick = static_cast<int>(rng.integer(static_cast<uint64_t>(n)));
    }
    out.centers.col(c) = points.col(pick);
  }

  out.cluster_of.assign(static_cast<size_t>(n), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_dist = (points.col(i) - out.centers.col(0)).squaredNorm();
      for (int c = 1; c < n_clusters; ++c) {
        double d = (points.col(i) - out.centers.col(c)).squaredNorm();
        if (d < best_dist) { best_dist = d; best = c; }
      }
      if (out.cluster_of[static_cast<size_t>(i)] != best) {
        out.cluster_of[static_cast<size_t>(i)] = best;
        changed = true;
      }
    }

    // Centroid update; an empty cluster keeps its previous center, which
    // preserves the monotone objective.
    Eigen::MatrixXd new_centers = Eigen::MatrixXd::Zero(table.dim(), n_clusters);
    std::vector<int> counts(static_cast<size_t>(n_clusters), 0);
    for (int i = 0; i < n; ++i) {
      new_centers.col(out.cluster_of[static_cast<size_t>(i)]) += points.col(i);
      ++counts[static_cast<size_t>(out.cluster_of[static_cast<size_t>(i)])];
    }
    for (int c = 0; c < n_clusters; ++c) {
      if (counts[static_cast<size_t>(c)] > 0)
        out.centers.col(c) = new_centers.col(c) / counts[static_cast<size_t>(c)];
    }

    double inertia = 0.0;
    for (int i = 0; i < n; ++i)
      inertia += (points.col(i) - out.centers.col(out.cluster_of[static_cast<size_t>(i)]))
                     .squaredNorm();
    out.inertia_trace.push_back(inertia);
    if (!changed) break;
  }

  for (int i = 0; i < n; ++i)
    out.index_.emplace(out.units[static_cast<size_t>(i)], out.cluster_of[static_cast<size_t>(i)]);
  return out;
}

std::vector<EffectCurve> effect_curves(const ThetaTable& theta,
                                       const PhenotypeAssignment* phenotypes,
                                       int action_count) {
  // Per (unit, action): mean theta_hat across the unit's records.
  struct UnitAgg {
    Eigen::VectorXd sum;
    Eigen::VectorXd count;
  };
  std::map<UnitId, UnitAgg> per_unit;
  for (const Estimate& e : theta.rows) {
    auto& agg = per_unit[e.unit];
    if (agg.sum.size() == 0) {
      agg.sum = Eigen::VectorXd::Zero(action_count);
      agg.count = Eigen::VectorXd::Zero(action_count);
    }
    agg.sum[e.action] += e.theta;
    agg.count[e.action] += 1.0;
  }

  const int n_groups = phenotypes ? phenotypes->cluster_count() : 1;
  struct GroupAgg {
    Eigen::VectorXd sum, sum_sq;
    int n = 0;
  };
  std::vector<GroupAgg> groups(static_cast<size_t>(n_groups));
  for (auto& g : groups) {
    g.sum = Eigen::VectorXd::Zero(action_count);
    g.sum_sq = Eigen::VectorXd::Zero(action_count);
  }

  for (const auto& [unit, agg] : per_unit) {
    int g = phenotypes ? phenotypes->cluster_of_unit(unit) : 0;
    Eigen::VectorXd unit_mean(action_count);
    for (int a = 0; a < action_count; ++a)
      unit_mean[a] = agg.count[a] > 0 ? agg.sum[a] / agg.count[a] : 0.0;
    groups[static_cast<size_t>(g)].sum += unit_mean;
    groups[static_cast<size_t>(g)].sum_sq += unit_mean.cwiseProduct(unit_mean);
    groups[static_cast<size_t>(g)].n += 1;
  }

  std::vector<EffectCurve> curves;
  for (int g = 0; g < n_groups; ++g) {
    const GroupAgg& agg = groups[static_cast<size_t>(g)];
    std::string name = phenotypes ? "phenotype_" + std::to_string(g) : "all";
    if (agg.n == 0) {
      std::cerr << "warning: effect curve group '" << name << "' is empty; omitted\n";
      continue;
    }
    EffectCurve curve;
    curve.group = name;
    curve.n_units = agg.n;
    curve.mean_theta = agg.sum / agg.n;
    curve.sd_theta = Eigen::VectorXd::Zero(action_count);
    if (agg.n > 1) {
      for (int a = 0; a < action_count; ++a) {
        double var = (agg.sum_sq[a] - agg.sum[a] * agg.sum[a] / agg.n) / (agg.n - 1);
        curve.sd_theta[a] = std::sqrt(std::max(0.0, var));
      }
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::vector<DifferenceCurve> curve_differences(const std::vector<EffectCurve>& curves,
                                               const std::vector<EffectCurve>& baseline) {
  std::vector<DifferenceCurve> out;
  for (const EffectCurve& c : curves) {
    for (const EffectCurve& b : baseline) {
      if (b.group != c.group) continue;
      out.push_back({c.group, c.mean_theta - b.mean_theta});
      break;
    }
  }
  return out;
}

void save_curves_csv(const std::vector<EffectCurve>& curves, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write curves file: " + path);
  out << "group,action,mean_theta,sd_theta,n\n";
  for (const EffectCurve& c : curves)
    for (int a = 0; a < c.mean_theta.size(); ++a)
      out << c.group << ',' << a << ',' << format_g(c.mean_theta[a]) << ','
          << format_g(c.sd_theta[a]) << ',' << c.n_units << '\n';
}

void save_differences_csv(const std::vector<DifferenceCurve>& diffs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write differences file: " + path);
  out << "group,action,delta_vs_all\n";
  for (const DifferenceCurve& d : diffs)
    for (int a = 0; a < d.delta.size(); ++a)
      out << d.group << ',' << a << ',' << format_g(d.delta[a]) << '\n';
}

void save_curves_svg(const std::vector<EffectCurve>& curves, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write svg file: " + path);

  const int width = 640, height = 400, margin = 48;
  double lo = 0.0, hi = 1.0;
  int actions = 0;
  bool first = true;
  for (const EffectCurve& c : curves) {
    actions = std::max(actions, static_cast<int>(c.mean_theta.size()));
    for (int a = 0; a < c.mean_theta.size(); ++a) {
      double low = c.mean_theta[a] - c.sd_theta[a];
      double high = c.mean_theta[a] + c.sd_theta[a];
      if (first) { lo = low; hi = high; first = false; }
      lo = std::min(lo, low);
      hi = std::max(hi, high);
    }
  }
  if (hi <= lo) hi = lo + 1.0;

  auto sx = [&](double a) {
    return margin + a / std::max(1, actions - 1) * (width - 2 * margin);
  };
  auto sy = [&](double v) {
    return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin);
  };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
      << width - margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  for (int a = 0; a < actions; ++a) {
    out << "<text x=\"" << sx(a) << "\" y=\"" << height - margin + 16
        << "\" font-size=\"11\" text-anchor=\"middle\">" << a << "</text>\n";
  }
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 8
      << "\" font-size=\"12\" text-anchor=\"middle\">action (cumulative doses)</text>\n";
  out << "<text x=\"14\" y=\"" << height / 2
      << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << height / 2 << ")\">estimated theta</text>\n";

  int color_idx = 0;
  int legend_y = margin;
  for (const EffectCurve& c : curves) {
    const char* color = kColors[color_idx++ % 8];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (int a = 0; a < c.mean_theta.size(); ++a)
      out << format_double(sx(a), 1) << ',' << format_double(sy(c.mean_theta[a]), 1) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << width - margin + 4 << "\" y=\"" << legend_y
        << "\" font-size=\"11\" fill=\"" << color << "\">" << c.group << "</text>\n";
    legend_y += 14;
  }
  out << "</svg>\n";
}

}  // namespace lmn
