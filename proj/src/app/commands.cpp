// Copyright 2026 The vggtocc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vggtocc/app.hpp"
#include "vggtocc/binio.hpp"
#include "vggtocc/checkpoint.hpp"
#include "vggtocc/verify.hpp"
#include "vggtocc/vogd.hpp"

namespace vggtocc::app {
namespace {

using ojson = nlohmann::ordered_json;

std::vector<char> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw binio::IoError(dir.string() + ": " + ec.message());
}

std::vector<std::string> class_names(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < n; ++c) {
    names.push_back(c == 0 ? "free" : c == 1 ? "ground" : "object" + std::to_string(c));
  }
  return names;
}

diff::ParamSet load_params(const train::RunConfig& cfg, const fs::path& path) {
  diff::ParamSet ps = train::initial_params(cfg);
  checkpoint::load_into(ps, path);
  return ps;
}

std::vector<synth::Sample> load_split(const train::RunConfig& cfg, const fs::path& dir,
                                      synth::Split split) {
  const Manifest m = read_manifest(dir);
  auto data = read_split(dir, m, split);
  check_compatible(cfg, data);
  return data;
}

ojson metrics_json(const objective::Metrics& m) {
  ojson j;
  j["iou"] = m.iou();
  j["miou"] = m.miou();
  ojson per = ojson::array();
  for (std::size_t c = 0; c < m.n_classes; ++c) per.push_back(m.class_iou(c));
  j["class_iou"] = per;
  return j;
}

}  // namespace

Tensor gate_map(const Tensor& gate) {
  if (gate.rank() != 4) throw ShapeError("gate_map: expected [X, Y, Z, C]");
  const std::size_t nx = gate.shape()[0], ny = gate.shape()[1];
  const std::size_t inner = gate.shape()[2] * gate.shape()[3];
  Tensor out({nx, ny});
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t y = 0; y < ny; ++y) {
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += gate[(x * ny + y) * inner + i];
      out[x * ny + y] = s / static_cast<double>(inner);
    }
  return out;
}

std::array<std::uint8_t, 3> colormap(double g) {
  // Blue, light grey and red anchors at 0, 0.5 and 1.
  static constexpr double kAnchors[3][3] = {{59, 76, 192}, {221, 221, 221}, {180, 4, 38}};
  if (!(g >= 0.0)) g = 0.0;
  g = std::min(g, 1.0);
  const int seg = g < 0.5 ? 0 : 1;
  const double t = g < 0.5 ? g / 0.5 : (g - 0.5) / 0.5;
  std::array<std::uint8_t, 3> rgb{};
  for (int k = 0; k < 3; ++k) {
    const double v = kAnchors[seg][k] + t * (kAnchors[seg + 1][k] - kAnchors[seg][k]);
    rgb[k] = static_cast<std::uint8_t>(std::lround(v));
  }
  return rgb;
}

std::vector<char> encode_ppm(const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("encode_ppm: expected [X, Y]");
  const std::size_t nx = map.shape()[0], ny = map.shape()[1];
  std::string header = "P6\n" + std::to_string(nx) + " " + std::to_string(ny) + "\n255\n";
  std::vector<char> out(header.begin(), header.end());
  for (std::size_t row = 0; row < ny; ++row) {
    const std::size_t y = ny - 1 - row;
    for (std::size_t x = 0; x < nx; ++x) {
      for (auto c : colormap(map[x * ny + y])) out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

flops::FusionDims parse_dims(const std::string& text) {
  std::vector<std::uint64_t> v;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    char* end = nullptr;
    const auto x = std::strtoull(tok.c_str(), &end, 10);
    if (tok.empty() || *end != '\0' || x == 0) {
      throw UsageError("--dims: '" + tok + "' is not a positive integer");
    }
    v.push_back(x);
  }
  if (v.size() != 5) {
    throw UsageError("--dims expects coarse_voxels,fine_voxels,coarse_channels,fine_channels,gate_hidden");
  }
  return {v[0], v[1], v[2], v[3], v[4]};
}

int cmd_gen(const train::RunConfig& cfg, const fs::path& out, std::ostream& os) {
  const Manifest m = write_dataset(cfg, out);
  os << "wrote " << m.n_train << " training and " << m.n_val << " validation scenes ("
     << m.files.size() << " files) to " << out.string() << '\n';
  return kOk;
}

int cmd_train(const train::RunConfig& cfg, const fs::path& data, const fs::path& out,
              std::ostream& os) {
  const auto samples = load_split(cfg, data, synth::Split::kTrain);
  spdlog::info("training on {} scenes for {} steps", samples.size(), cfg.optim.steps);
  std::string log;
  const auto result = train::train(cfg, samples, [&](const train::StepLog& s) {
    ojson j;
    j["step"] = s.step;
    j["lr"] = s.lr;
    j["grad_norm"] = s.grad_norm;
    j["ce"] = s.loss.ce;
    j["sem_scal"] = s.loss.sem_scal;
    j["geo_scal"] = s.loss.geo_scal;
    j["lovasz"] = s.loss.lovasz;
    j["total"] = s.loss.total;
    log += j.dump() + "\n";
    if (s.step % 50 == 0 || s.step + 1 == cfg.optim.steps) {
      spdlog::info("step {:4d}  loss {:.4f}  grad {:.3f}  lr {:.2e}", s.step, s.loss.total,
                   s.grad_norm, s.lr);
    }
    spdlog::debug("step {} ce {} sem {} geo {} lovasz {}", s.step, s.loss.ce, s.loss.sem_scal,
                  s.loss.geo_scal, s.loss.lovasz);
  });
  ensure_dir(out);
  train::RunConfig resolved = cfg;
  resolved.loss.class_weights = result.class_weights;
  binio::write_file(out / "config.json", to_bytes(config_to_json(resolved)));
  checkpoint::save(result.params, out / "checkpoint.vocp");
  binio::write_file(out / "train_log.jsonl", to_bytes(log));
  if (result.log.empty()) {
    os << "0 steps: checkpoint holds the initialization\n";
  } else {
    os << "loss " << result.log.front().loss.total << " -> " << result.log.back().loss.total
       << " over " << result.log.size() << " steps\n";
  }
  os << "wrote " << (out / "checkpoint.vocp").string() << '\n';
  return kOk;
}

int cmd_eval(const train::RunConfig& cfg, const EvalArgs& args, std::ostream& os) {
  auto params = load_params(cfg, args.checkpoint);
  const auto data = load_split(cfg, args.data, args.split);
  const std::size_t k = cfg.data.grid.n_classes;
  train::EvalOptions opts;
  opts.corrupt_degrees = args.corrupt_degrees;
  opts.corrupt_seed = args.corrupt_seed;
  opts.threads = cfg.threads;
  const auto m = train::evaluate(cfg, params, data, opts);
  const auto names = class_names(k);
  const auto hist = train::fine_histogram(data, k);
  const std::uint8_t majority = objective::majority_class(hist);
  const auto all_free = train::constant_baseline(data, 0, k);
  const auto major = train::constant_baseline(data, majority, k);
  os << "split " << (args.split == synth::Split::kTrain ? "train" : "val") << ", "
     << data.size() << " scenes";
  if (args.corrupt_degrees != 0.0) os << ", extrinsics rotated by " << args.corrupt_degrees << " deg";
  os << '\n' << objective::format_report(m, names);
  char buf[160];
  std::snprintf(buf, sizeof buf, "baseline all-free        IoU %.4f  mIoU %.4f\n", all_free.iou(),
                all_free.miou());
  os << buf;
  std::snprintf(buf, sizeof buf, "baseline majority (%-6s) IoU %.4f  mIoU %.4f\n",
                names[majority].c_str(), major.iou(), major.miou());
  os << buf;
  if (args.out) {
    ensure_dir(*args.out);
    ojson j;
    j["split"] = args.split == synth::Split::kTrain ? "train" : "val";
    j["scenes"] = data.size();
    j["corrupt_degrees"] = args.corrupt_degrees;
    j["model"] = metrics_json(m);
    j["baseline_all_free"] = metrics_json(all_free);
    j["baseline_majority"] = metrics_json(major);
    j["majority_class"] = majority;
    binio::write_file(*args.out / "eval.json", to_bytes(j.dump(2) + "\n"));
  }
  return kOk;
}

int cmd_gradcheck(std::ostream& os) {
  const auto rows = verify::gradient_suite();
  os << verify::format_rows(rows);
  const auto failed = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.pass(); });
  os << (failed == 0 ? "all checks passed\n" : std::to_string(failed) + " checks failed\n");
  return failed == 0 ? kOk : kNumeric;
}

int cmd_flops(const train::RunConfig& cfg, const FlopsArgs& args, std::ostream& os) {
  const flops::FusionDims dims = args.dims.value_or(flops::FusionDims{});
  std::vector<flops::FlopReport> reports;
  for (auto v : flops::all_variants()) reports.push_back(flops::count_fusion_variant(v, dims));
  if (args.json) {
    os << flops::format_json(reports);
  } else {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& r = reports[i];
      os << flops::format_table(r);
      if (const auto ref = flops::reference_gflops(flops::all_variants()[i])) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "  reference %.2f G (ratio %.3f)\n", *ref,
                      static_cast<double>(r.total()) / 1e9 / *ref);
        os << buf;
      }
      os << '\n';
    }
    const auto unet = flops::count_fusion_variant(flops::Variant::kUnet, dims).total();
    const auto dw = flops::count_fusion_variant(flops::Variant::kChannelGateDw, dims).total();
    char buf[96];
    std::snprintf(buf, sizeof buf, "unet / channel_gate_dw = %.2f\n",
                  static_cast<double>(unet) / static_cast<double>(dw));
    os << buf;
  }
  if (args.parameters) {
    os << flops::format_parameters(flops::report_parameters(decoder::parameter_specs(cfg.head_config())));
  }
  return kOk;
}

int cmd_gates(const train::RunConfig& cfg, const GatesArgs& args, std::ostream& os) {
  const auto head = cfg.head_config();
  if (head.fusion == decoder::FusionVariant::kNone ||
      head.fusion == decoder::FusionVariant::kDirectAdd) {
    throw UsageError("gates: fusion '" + std::string(decoder::to_string(head.fusion)) +
                     "' has no gates");
  }
  auto params = load_params(cfg, args.checkpoint);
  const auto data = load_split(cfg, args.data, args.split);
  if (args.index >= data.size()) {
    throw UsageError("gates: scene " + std::to_string(args.index) + " out of range (" +
                     std::to_string(data.size()) + " scenes)");
  }
  const auto& s = data[args.index];
  diff::Graph g;
  decoder::Binder bind(g, params);
  const auto views = train::make_views(g, s.cameras, s.features);
  decoder::ForwardOptions fo;
  fo.stages = cfg.stages;
  const auto out = decoder::head_forward(bind, head, views, fo);
  ensure_dir(args.out);
  for (std::size_t t = 0; t < 2; ++t) {
    const diff::Var gate = out.fusions[t].gate;
    if (gate.node() == nullptr) continue;
    const Tensor map = gate_map(gate.value());
    const std::string stem = "gate_t" + std::to_string(t);
    binio::write_file(args.out / (stem + ".ppm"), encode_ppm(map));
    vogd::save(vogd::from_tensor(map), args.out / (stem + ".vogd"));
    const auto [lo, hi] = std::minmax_element(map.vec().begin(), map.vec().end());
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s: %zux%zu map, gate range [%.4f, %.4f]\n", stem.c_str(),
                  map.shape()[0], map.shape()[1], *lo, *hi);
    os << buf;
  }
  return kOk;
}

void configure_logging(const char* level) {
  const std::string l = level ? level : "info";
  if (spdlog::default_logger()->name() != "vggtocc") {
    spdlog::set_default_logger(std::make_shared<spdlog::logger>(
        "vggtocc", std::make_shared<spdlog::sinks::stderr_color_sink_mt>()));
  }
  if (l == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (l == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (l == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw UsageError("VGGTOCC_LOG must be error, info or debug, got '" + l + "'");
  }
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const checkpoint::MismatchError& e) {
    spdlog::error("checkpoint does not fit the model: {}", e.what());
    return kIo;
  } catch (const binio::IoError& e) {
    spdlog::error("{}", e.what());
    return kIo;
  } catch (const train::DivergenceError& e) {
    spdlog::error("training diverged: {}", e.what());
    return kNumeric;
  } catch (const NumericError& e) {
    spdlog::error("{}", e.what());
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kIo;
  }
}

}  // namespace vggtocc::app
