// Composite layer implementations and parameter registration.
#include "dpt/layers.hpp"

#include <cmath>

namespace dpt {

Tensor ParamStore::add_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params.push_back(Parameter{name, t});
  return t;
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor t) {
  buffers.push_back(Parameter{name, t});
  return t;
}

std::vector<Parameter> ParamStore::all_records() const {
  std::vector<Parameter> out = params;
  out.insert(out.end(), buffers.begin(), buffers.end());
  return out;
}

size_t ParamStore::param_count() const {
  size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Rho rho_from_string(const std::string& s) {
  if (s == "max") return Rho::Max;
  if (s == "avg") return Rho::Avg;
  if (s == "sum") return Rho::Sum;
  fail("unknown aggregation '" + s + "' (expected max|avg|sum)");
}

std::string to_string(Rho rho) {
  switch (rho) {
    case Rho::Max: return "max";
    case Rho::Avg: return "avg";
    case Rho::Sum: return "sum";
  }
  fail("invalid aggregation enum");
}

Order order_from_string(const std::string& s) {
  if (s == "post") return Order::PostNorm;
  if (s == "pre") return Order::PreNorm;
  fail("unknown composite order '" + s + "' (expected post|pre)");
}

std::string to_string(Order order) {
  return order == Order::PostNorm ? "post" : "pre";
}

Tensor aggregate(const Tensor& x, Rho rho) {
  size_t axis = x.dim() - 1;
  switch (rho) {
    case Rho::Max: return reduce_max(x, axis);
    case Rho::Avg: return reduce_mean(x, axis);
    case Rho::Sum: return reduce_sum(x, axis);
  }
  fail("invalid aggregation enum");
}

namespace {

// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)); weight elements first, bias after.
Tensor uniform_init(const Shape& shape, size_t fan_in, Rng& rng) {
  DPT_CHECK(fan_in > 0, "uniform_init: fan_in must be positive");
  double bound = std::sqrt(1.0 / double(fan_in));
  Tensor t(shape);
  double* d = t.data();
  for (size_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Linear make_linear(size_t ci, size_t co, const std::string& name, ParamStore& store, Rng& rng) {
  DPT_CHECK(ci > 0 && co > 0, "make_linear: channels must be positive");
  Linear lin;
  lin.in_channels = ci;
  lin.out_channels = co;
  lin.weight = store.add_param(name + ".weight", uniform_init({co, ci}, ci, rng));
  lin.bias = store.add_param(name + ".bias", uniform_init({co}, ci, rng));
  return lin;
}

GroupedLinear make_grouped_linear(size_t ci, size_t co, int groups, const std::string& name,
                                  ParamStore& store, Rng& rng) {
  DPT_CHECK(groups >= 1, "make_grouped_linear: groups must be >= 1");
  size_t g = size_t(groups);
  DPT_CHECK(ci % g == 0 && co % g == 0,
            "make_grouped_linear: " << ci << "->" << co << " not divisible by " << groups
                                    << " groups");
  GroupedLinear lin;
  lin.in_channels = ci;
  lin.out_channels = co;
  lin.groups = groups;
  lin.weight = store.add_param(name + ".weight", uniform_init({g, co / g, ci / g}, ci / g, rng));
  lin.bias = store.add_param(name + ".bias", uniform_init({co}, ci / g, rng));
  return lin;
}

BatchNorm make_batch_norm(size_t channels, const std::string& name, ParamStore& store) {
  DPT_CHECK(channels > 0, "make_batch_norm: channels must be positive");
  BatchNorm bn;
  bn.channels = channels;
  bn.gamma = store.add_param(name + ".gamma", Tensor::full({channels}, 1.0));
  bn.beta = store.add_param(name + ".beta", Tensor::zeros({channels}));
  bn.stats = BatchNormStats(channels);
  store.add_buffer(name + ".running_mean", bn.stats.running_mean);
  store.add_buffer(name + ".running_var", bn.stats.running_var);
  return bn;
}

Tensor PConv::forward(const Tensor& gathered, bool training) {
  DPT_CHECK(gathered.dim() == 4, "point conv expects (B, C, N, M), got "
                                     << shape_str(gathered.shape()));
  Tensor h = gathered;
  if (order == Order::PostNorm) {
    DPT_CHECK(h.size(1) == slp.in_channels, "point conv fed " << h.size(1) << " channels, expects "
                                                              << slp.in_channels);
    h = slp.forward(h);
    h = bn.forward(h, training);
    h = relu(h);
  } else {
    h = bn.forward(h, training);
    h = relu(h);
    h = slp.forward(h);
  }
  return aggregate(h, rho);
}

Tensor EPConv::forward(const Tensor& gathered, bool training, Rng& rng) {
  DPT_CHECK(gathered.dim() == 4, "enhanced point conv expects (B, C, N, M), got "
                                     << shape_str(gathered.shape()));
  Tensor h = gathered;
  if (order == Order::PostNorm) {
    h = phi.forward(h);
    h = phi_bn.forward(h, training);
    h = relu(h);
    h = aggregate(h, rho);
    h = psi.forward(h);
    h = psi_bn.forward(h, training);
    h = relu(h);
  } else {
    h = phi_bn.forward(h, training);
    h = relu(h);
    h = phi.forward(h);
    h = aggregate(h, rho);
    h = psi_bn.forward(h, training);
    h = relu(h);
    h = psi.forward(h);
  }
  return dropout(h, dropout_ratio, training, rng);
}

PConv make_pconv(size_t ci, size_t co, const std::string& name, ParamStore& store, Rng& rng,
                 Rho rho, Order order) {
  PConv conv;
  conv.rho = rho;
  conv.order = order;
  conv.slp = make_linear(ci, co, name + ".slp", store, rng);
  conv.bn = make_batch_norm(order == Order::PostNorm ? co : ci, name + ".bn", store);
  return conv;
}

EPConv make_epconv(size_t ci, size_t expansion, size_t co, int groups, const std::string& name,
                   ParamStore& store, Rng& rng, Rho rho, Order order, double dropout_ratio) {
  EPConv conv;
  conv.rho = rho;
  conv.order = order;
  conv.dropout_ratio = dropout_ratio;
  conv.phi = make_grouped_linear(ci, expansion, groups, name + ".phi", store, rng);
  conv.phi_bn = make_batch_norm(order == Order::PostNorm ? expansion : ci, name + ".phi_bn", store);
  conv.psi = make_linear(expansion, co, name + ".psi", store, rng);
  conv.psi_bn = make_batch_norm(order == Order::PostNorm ? co : expansion, name + ".psi_bn", store);
  return conv;
}

Tensor FPLayer::forward(const Tensor& coarse, const std::vector<InterpPlan>& plans,
                        const Tensor& skip, bool training) {
  Tensor up = idw_interpolate(coarse, plans);
  Tensor h = concat_channels({up, skip});
  DPT_CHECK(!slps.empty() && h.size(1) == slps[0].in_channels,
            "feature propagation fed " << h.size(1) << " channels, expects "
                                       << (slps.empty() ? 0 : slps[0].in_channels));
  for (size_t i = 0; i < slps.size(); ++i) {
    h = slps[i].forward(h);
    h = bns[i].forward(h, training);
    h = relu(h);
  }
  return h;
}

FPLayer make_fp_layer(size_t ci, const std::vector<size_t>& dims, const std::string& name,
                      ParamStore& store, Rng& rng) {
  DPT_CHECK(!dims.empty(), "make_fp_layer: need at least one output width");
  FPLayer fp;
  size_t in = ci;
  for (size_t i = 0; i < dims.size(); ++i) {
    std::string idx = std::to_string(i + 1);
    fp.slps.push_back(make_linear(in, dims[i], name + ".slp" + idx, store, rng));
    fp.bns.push_back(make_batch_norm(dims[i], name + ".bn" + idx, store));
    in = dims[i];
  }
  return fp;
}

Tensor FCLayer::forward(const Tensor& x, bool training, Rng& rng) {
  Tensor h = lin.forward(x);
  if (terminal) return h;
  h = bn.forward(h, training);
  h = relu(h);
  return dropout(h, dropout_ratio, training, rng);
}

FCLayer make_fc_layer(size_t ci, size_t co, bool terminal, double dropout_ratio,
                      const std::string& name, ParamStore& store, Rng& rng) {
  FCLayer fc;
  fc.terminal = terminal;
  fc.dropout_ratio = dropout_ratio;
  fc.lin = make_linear(ci, co, name, store, rng);
  if (!terminal) fc.bn = make_batch_norm(co, name + ".bn", store);
  return fc;
}

Tensor pconv_apply(PConv& conv, const Tensor& feats, const std::vector<Neighborhood>& nbhd,
                   int normalize_channels, bool training) {
  Tensor g = gather_and_normalize(feats, nbhd, normalize_channels);
  return conv.forward(g, training);
}

Tensor epconv_apply(EPConv& conv, const Tensor& feats, const std::vector<Neighborhood>& nbhd,
                    bool training, Rng& rng) {
  Tensor g = gather_and_normalize(feats, nbhd, 0);
  return conv.forward(g, training, rng);
}

}  // namespace dpt
