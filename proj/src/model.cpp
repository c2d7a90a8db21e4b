#include "caql/model.hpp"

#include <json.hpp>

#include "caql/errors.hpp"

namespace caql {

DenseMatrix ManifoldProjector::project(const DenseMatrix& z,
                                       Mlp::Cache* cache) const {
  if (z.cols != net.d_in())
    throw DimensionError("project: feature dim " + z.shape_str() +
                         " does not match projector input " +
                         std::to_string(net.d_in()));
  DenseMatrix out = net.forward(z, cache);
  add_inplace(out, z);
  return out;
}

DenseMatrix ManifoldProjector::backward(const DenseMatrix& upstream,
                                        const Mlp::Cache& cache) {
  DenseMatrix dz = net.backward(upstream, cache);
  add_inplace(dz, upstream);  // identity path
  return dz;
}

std::vector<ParamBlock*> ModelState::trainable_params() {
  std::vector<ParamBlock*> out;
  for (auto* p : backbone.net.params()) out.push_back(p);
  for (auto* p : regressor.net.params()) out.push_back(p);
  for (auto* p : projector.net.params()) out.push_back(p);
  return out;
}

ModelState make_model(std::size_t d_in, const ModelConfig& cfg, Rng& rng) {
  if (cfg.backbone_widths.size() < 2)
    throw DomainError("model: backbone needs at least 2 layers");
  ModelState state;

  std::size_t prev = d_in;
  for (std::size_t l = 0; l < cfg.backbone_widths.size(); ++l) {
    const bool last = l + 1 == cfg.backbone_widths.size();
    state.backbone.net.layers.emplace_back(
        "f.l" + std::to_string(l), prev, cfg.backbone_widths[l],
        last ? Activation::None : Activation::Relu);
    prev = cfg.backbone_widths[l];
  }
  const std::size_t feat = cfg.feature_dim();
  state.regressor.net.layers.emplace_back("g.l0", feat, cfg.regressor_hidden,
                                          Activation::Relu);
  state.regressor.net.layers.emplace_back("g.l1", cfg.regressor_hidden, 1,
                                          Activation::None);
  state.projector.net.layers.emplace_back("p.l0", feat, cfg.projector_hidden,
                                          Activation::Relu);
  state.projector.net.layers.emplace_back("p.l1", cfg.projector_hidden, feat,
                                          Activation::None);

  state.backbone.net.init(rng);
  state.regressor.net.init(rng);
  state.projector.net.init(rng);
  // Zero final layer: the residual map starts as the exact identity.
  auto& out_layer = state.projector.net.layers.back();
  std::fill(out_layer.weight.value.data.begin(),
            out_layer.weight.value.data.end(), 0.0);
  std::fill(out_layer.bias.value.data.begin(), out_layer.bias.value.data.end(),
            0.0);
  return state;
}

void snapshot_prev_backbone(ModelState& state) {
  state.frozen_prev_backbone = state.backbone;
}

namespace {

using nlohmann::json;

json block_to_json(const ParamBlock& p) {
  return json{{"name", p.name},
              {"rows", p.value.rows},
              {"cols", p.value.cols},
              {"value", p.value.data},
              {"m1", p.m1.data},
              {"m2", p.m2.data},
              {"step", p.step}};
}

void block_from_json(const json& j, ParamBlock& p) {
  p.name = j.at("name").get<std::string>();
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  p.value = DenseMatrix(rows, cols);
  p.grad = DenseMatrix(rows, cols);
  p.m1 = DenseMatrix(rows, cols);
  p.m2 = DenseMatrix(rows, cols);
  p.value.data = j.at("value").get<std::vector<double>>();
  p.m1.data = j.at("m1").get<std::vector<double>>();
  p.m2.data = j.at("m2").get<std::vector<double>>();
  p.step = j.at("step").get<std::uint64_t>();
  if (p.value.data.size() != rows * cols)
    throw ParseError("checkpoint: block '" + p.name + "' has wrong length");
}

json mlp_to_json(const Mlp& m) {
  json layers = json::array();
  for (const auto& l : m.layers) {
    layers.push_back(json{{"act", l.act == Activation::Relu ? "relu" : "none"},
                          {"weight", block_to_json(l.weight)},
                          {"bias", block_to_json(l.bias)}});
  }
  return layers;
}

Mlp mlp_from_json(const json& j) {
  Mlp m;
  for (const auto& jl : j) {
    AffineLayer l;
    l.act = jl.at("act").get<std::string>() == "relu" ? Activation::Relu
                                                      : Activation::None;
    block_from_json(jl.at("weight"), l.weight);
    block_from_json(jl.at("bias"), l.bias);
    m.layers.push_back(std::move(l));
  }
  return m;
}

}  // namespace

std::string save_checkpoint_json(const ModelState& state) {
  json j{{"format", "caql-checkpoint"},
         {"version", 1},
         {"backbone", mlp_to_json(state.backbone.net)},
         {"regressor", mlp_to_json(state.regressor.net)},
         {"projector", mlp_to_json(state.projector.net)}};
  if (state.frozen_prev_backbone)
    j["frozen_prev_backbone"] = mlp_to_json(state.frozen_prev_backbone->net);
  return j.dump(2);
}

ModelState load_checkpoint_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("format", "") != "caql-checkpoint" || j.value("version", 0) != 1)
    throw ParseError("checkpoint: unknown format or version");
  ModelState state;
  state.backbone.net = mlp_from_json(j.at("backbone"));
  state.regressor.net = mlp_from_json(j.at("regressor"));
  state.projector.net = mlp_from_json(j.at("projector"));
  if (j.contains("frozen_prev_backbone")) {
    Backbone fb;
    fb.net = mlp_from_json(j.at("frozen_prev_backbone"));
    state.frozen_prev_backbone = std::move(fb);
  }
  return state;
}

}  // namespace caql
