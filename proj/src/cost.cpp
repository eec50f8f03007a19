// Parameter census and FLOP accounting over a built network's layer records.
#include <cstring>

#include "dpt/networks.hpp"

namespace dpt {

namespace {

bool has_suffix(const std::string& s, const char* suffix) {
  size_t n = std::strlen(suffix);
  return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

bool has_prefix(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

double slp_flops(size_t ci, size_t co, int groups, double positions) {
  return positions * (2.0 * double(ci) * double(co) / double(groups) + double(co));
}

// FLOPs of one layer in evaluation mode, split into the report's buckets.
void tally_flops(const LayerInfo& li, bool post_norm, CostRow& row, CostBreakdown& bd) {
  auto add = [&](double v, double* bucket) {
    row.flops += v;
    *bucket += v;
  };
  if (li.kind == "ppool" || li.kind == "global_pool" || li.kind == "pconv") {
    double pos = double(li.centers) * double(li.neighbors);
    add(slp_flops(li.in_channels, li.out_channels, 1, pos), &bd.expansion_slp);
    double norm_elems = double(post_norm ? li.out_channels : li.in_channels) * pos;
    add(2.0 * norm_elems, &bd.norm);
    add(norm_elems, &bd.other);  // activation
    add(double(li.out_channels) * double(li.centers) * double(li.neighbors - 1), &bd.other);
  } else if (li.kind == "epconv") {
    double pos = double(li.centers) * double(li.neighbors);
    add(slp_flops(li.in_channels, li.expansion, li.groups, pos), &bd.expansion_slp);
    double n1 = double(post_norm ? li.expansion : li.in_channels) * pos;
    add(2.0 * n1, &bd.norm);
    add(n1, &bd.other);
    add(double(li.expansion) * double(li.centers) * double(li.neighbors - 1), &bd.other);
    add(slp_flops(li.expansion, li.out_channels, 1, double(li.centers)), &bd.integration_slp);
    double n2 = double(post_norm ? li.out_channels : li.expansion) * double(li.centers);
    add(2.0 * n2, &bd.norm);
    add(n2, &bd.other);
  } else if (li.kind == "fp") {
    // inverse-distance interpolation of the coarse channels onto fine points
    add(double(li.expansion) * double(li.out_points) * 2.0 * double(li.interp_k), &bd.other);
    size_t in = li.in_channels;
    for (size_t d : li.mlp_dims) {
      add(slp_flops(in, d, 1, double(li.out_points)), &bd.fc);
      double elems = double(d) * double(li.out_points);
      add(2.0 * elems, &bd.norm);
      add(elems, &bd.other);
      in = d;
    }
  } else if (li.kind == "fc") {
    double pos = li.out_points ? double(li.out_points) : 1.0;
    add(slp_flops(li.in_channels, li.out_channels, 1, pos), &bd.fc);
    if (!li.terminal_fc) {
      double elems = double(li.out_channels) * pos;
      add(2.0 * elems, &bd.norm);
      add(elems, &bd.other);
    }
  }
}

CostReport make_report(const Network& net, const std::vector<LayerInfo>& infos, bool with_flops) {
  CostReport rep;
  bool post = net.config.order == Order::PostNorm;
  for (const LayerInfo& li : infos) {
    if (li.kind == "input" || li.kind == "stage_out") continue;
    CostRow row;
    row.name = li.name;
    row.kind = li.kind;
    row.out_channels = li.out_channels;
    row.out_points = li.out_points;
    std::string prefix = li.name + ".";
    for (const Parameter& p : net.store.params) {
      if (!has_prefix(p.name, prefix)) continue;
      row.params += p.tensor.numel();
      if (has_suffix(p.name, ".gamma") || has_suffix(p.name, ".beta"))
        row.bn_params += p.tensor.numel();
      else
        row.linear_params += p.tensor.numel();
    }
    if (with_flops) tally_flops(li, post, row, rep.flop_breakdown);
    rep.rows.push_back(std::move(row));
  }
  rep.total.name = "total";
  rep.total.kind = "total";
  for (const CostRow& r : rep.rows) {
    rep.total.params += r.params;
    rep.total.linear_params += r.linear_params;
    rep.total.bn_params += r.bn_params;
    rep.total.flops += r.flops;
  }
  DPT_CHECK(rep.total.params == net.store.param_count(),
            "cost report lost parameters: rows sum to "
                << rep.total.params << " but the store holds " << net.store.param_count());
  return rep;
}

}  // namespace

CostReport count_params(const Network& net) { return make_report(net, net.layers, false); }

CostReport count_flops(const Network& net, size_t n_points) {
  DPT_CHECK(n_points > 0, "count_flops: n_points must be positive");
  if (n_points == net.config.points) return make_report(net, net.layers, true);
  // re-derive the layout at the requested resolution; parameters are unchanged
  NetworkConfig cfg = net.config;
  cfg.points = n_points;
  auto scaled = build_network(cfg, 0);
  return make_report(net, scaled->layers, true);
}

}  // namespace dpt
