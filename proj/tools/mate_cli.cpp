// mate: command-line front end for scan audits, oracle checks, cost tables, toy training
// and sampling.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure (including a
// failed check), 1 anything else (I/O).

#include "CLI11.hpp"
#include "json.hpp"

#include "mate/costmodel.hpp"
#include "mate/gradcheck.hpp"
#include "mate/mate.hpp"
#include "mate/parallel.hpp"
#include "mate/reference.hpp"
#include "mate/scan.hpp"
#include "mate/ssd.hpp"
#include "mate/tensor_io.hpp"
#include "mate/tesa.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace mate;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

/// Raised by a subcommand whose checks ran but did not pass.
struct CheckFailed : NumericFailure {
  using NumericFailure::NumericFailure;
};

class Output {
 public:
  explicit Output(const std::string& path) : path_(path) {}
  std::ostream& stream() { return buffer_; }
  /// Written only after the command succeeds, so a failed run leaves no partial file.
  void commit() {
    if (path_.empty() || path_ == "-") {
      std::cout << buffer_.str() << std::flush;
      return;
    }
    std::ofstream f(path_, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path_ + "'");
    f << buffer_.str();
    if (!f) throw std::runtime_error("write failed for '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ostringstream buffer_;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tokens gaussian(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tokens m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

Mat gaussian_mat(Index rows, Index cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

SsdParams<double> random_ssd(Index n, Index ds, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> decay(0.5, 0.99);
  const double s = 1.0 / std::sqrt(double(ds));
  SsdParams<double> p{Vector<double>(n), gaussian(n, ds, rng, s), gaussian(n, ds, rng, s)};
  for (Index i = 0; i < n; ++i) p.decay[i] = decay(rng);
  return p;
}

// ---------------------------------------------------------------------------

struct ScanAuditArgs {
  std::string shape;
  std::string family = "rms";
  Index k = 4;
  std::string out;
};

void run_scan_audit(const ScanAuditArgs& a) {
  const Shape3 shape = parse_shape(a.shape);
  const ScanFamily family = parse_family(a.family);
  const AdjacencyReport r = adjacency_d_k(shape, family, a.k);
  Output out(a.out);
  auto& os = out.stream();
  os << "# mate-scan-audit v1\n";
  os << "shape,family,k,axis,mean_min_distance,d_k\n";
  const char* axes[] = {"x", "y", "t"};
  for (int ax = 0; ax < 3; ++ax)
    os << shape.to_string() << ',' << family_name(family) << ',' << a.k << ',' << axes[ax] << ','
       << num(r.per_axis_min_mean[ax]) << ',' << num(r.d_k) << '\n';
  out.commit();
}

// ---------------------------------------------------------------------------

struct SsdCheckArgs {
  Index n = 64;
  Index dstate = 8;
  Index dhead = 4;
  Index seeds = 5;
  Index grad_n = 32;
  std::uint64_t seed = 0;
  std::string out;
};

constexpr double kDualityTolerance = 1e-8;

void run_ssd_check(const SsdCheckArgs& a) {
  if (a.n < 1 || a.dstate < 1 || a.dhead < 1 || a.seeds < 1 || a.grad_n < 1)
    throw std::invalid_argument("ssd-check: --n, --dstate, --dhead, --seeds and --grad-n must be >= 1");
  if (a.n > kDefaultOracleCap)
    throw std::invalid_argument("ssd-check: --n above the dense oracle cap of " + std::to_string(kDefaultOracleCap));
  Output out(a.out);
  auto& os = out.stream();
  os << "# mate-ssd-check v1\n";
  bool all_ok = true;
  for (Index s = 0; s < a.seeds; ++s) {
    const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(s);
    std::mt19937_64 rng(seed);
    const auto p = random_ssd(a.n, a.dstate, rng);
    const Tokens x = gaussian(a.n, a.dhead, rng);
    const Tokens ref = ssd_dense_oracle<double>(x, p);
    const double max_dev = (ssd_scan_forward<double>(x, p).y - ref).cwiseAbs().maxCoeff();
    const double rel_dev = max_dev / std::max(ref.cwiseAbs().maxCoeff(), 1e-300);

    // gradient check on a shorter problem; finite differences cost one scan per coordinate
    const Index gn = std::min(a.n, a.grad_n);
    const auto gp = random_ssd(gn, a.dstate, rng);
    const Tokens gx = gaussian(gn, a.dhead, rng);
    const Tokens up = gaussian(gn, a.dhead, rng);
    const auto g = ssd_backward<double>(gx, gp, up);
    const Index nx = gx.size(), nb = gp.input_proj.size();
    Vec analytic(nx + gn + 2 * nb), probe(nx + gn + 2 * nb);
    analytic << Eigen::Map<const Vec>(g.x.data(), nx), g.decay, Eigen::Map<const Vec>(g.input_proj.data(), nb),
        Eigen::Map<const Vec>(g.output_proj.data(), nb);
    probe << Eigen::Map<const Vec>(gx.data(), nx), gp.decay, Eigen::Map<const Vec>(gp.input_proj.data(), nb),
        Eigen::Map<const Vec>(gp.output_proj.data(), nb);
    auto loss = [&](const Vec& v) {
      Tokens xs = gx;
      SsdParams<double> ps = gp;
      Eigen::Map<Vec>(xs.data(), nx) = v.head(nx);
      ps.decay = v.segment(nx, gn);
      Eigen::Map<Vec>(ps.input_proj.data(), nb) = v.segment(nx + gn, nb);
      Eigen::Map<Vec>(ps.output_proj.data(), nb) = v.segment(nx + gn + nb, nb);
      return (ssd_scan_forward<double>(xs, ps).y.array() * up.array()).sum();
    };
    const double grad_err = max_relative_error(analytic, numeric_gradient(loss, probe));

    const bool ok = rel_dev <= kDualityTolerance && grad_err <= kGradientTolerance;
    all_ok = all_ok && ok;
    json line = {{"seed", seed},     {"n", a.n},           {"dstate", a.dstate},   {"dhead", a.dhead},
                 {"max_dev", max_dev}, {"rel_dev", rel_dev}, {"grad_n", gn},         {"grad_max_rel_err", grad_err},
                 {"ok", ok}};
    os << line.dump() << '\n';
  }
  out.commit();
  if (!all_ok) throw CheckFailed("ssd-check: at least one seed exceeded tolerance");
}

// ---------------------------------------------------------------------------

struct TesaCheckArgs {
  std::string shape = "4x8x8";
  Index tw = 8;
  Index sw = 4;
  Index d = 8;
  Index heads = 2;
  std::uint64_t seed = 0;
  std::string out;
};

void run_tesa_check(const TesaCheckArgs& a) {
  const Shape3 shape = parse_shape(a.shape);
  if (a.tw < 1 || a.sw < 1) throw std::invalid_argument("tesa-check: --tw and --sw must be >= 1");
  if (a.d < 1 || a.heads < 1 || a.d % a.heads != 0)
    throw std::invalid_argument("tesa-check: --heads must divide --d");
  if (shape.size() > 4096) throw std::invalid_argument("tesa-check: dense oracle limited to 4096 tokens");
  std::mt19937_64 rng(a.seed);
  const double s = 1.0 / std::sqrt(double(a.d));
  const TesaWeights<double> w{gaussian_mat(a.d, a.d, rng, s), gaussian_mat(a.d, a.d, rng, s),
                              gaussian_mat(a.d, a.d, rng, s), gaussian_mat(a.d, a.d, rng, s)};
  const Tensor x(shape, gaussian(shape.size(), a.d, rng));

  Output out(a.out);
  auto& os = out.stream();
  os << "# mate-tesa-check v1\n";

  const TesaConfig full{shape.t_len, std::max(shape.h_len, shape.w_len), a.heads};
  const Tokens y = tesa_forward<double>(x, full, w).data;
  const Tokens ref = reference::dense_attention<double>(x.data, w.query, w.key, w.value, w.output, a.heads);
  const double dense_dev = (y - ref).cwiseAbs().maxCoeff();
  bool all_ok = dense_dev <= 1e-10;
  os << json{{"check", "dense_oracle"}, {"shape", shape.to_string()}, {"heads", a.heads}, {"max_dev", dense_dev},
             {"ok", dense_dev <= 1e-10}}
            .dump()
     << '\n';

  for (ShiftParity par : {ShiftParity::Unshifted, ShiftParity::Shifted}) {
    const TesaConfig cfg{a.tw, a.sw, a.heads, par};
    const WindowPartition part = partition_windows(shape, cfg);
    std::vector<int> hits(static_cast<std::size_t>(shape.size()), 0);
    Index largest = 0, smallest = shape.size();
    for (const auto& win : part.windows) {
      for (Index i : win) ++hits[static_cast<std::size_t>(i)];
      largest = std::max<Index>(largest, static_cast<Index>(win.size()));
      smallest = std::min<Index>(smallest, static_cast<Index>(win.size()));
    }
    bool exact_once = true;
    for (int h : hits) exact_once = exact_once && h == 1;
    double row_sum_dev = 0.0;
    for (const auto& win : tesa_attention_weights<double>(x, cfg, w))
      for (const auto& p : win) row_sum_dev = std::max(row_sum_dev, (p.rowwise().sum().array() - 1.0).abs().maxCoeff());
    const bool ok = exact_once && row_sum_dev <= 1e-12;
    all_ok = all_ok && ok;
    os << json{{"check", "coverage"},
               {"shape", shape.to_string()},
               {"tw", a.tw},
               {"sw", a.sw},
               {"parity", par == ShiftParity::Shifted ? "shifted" : "unshifted"},
               {"windows", part.windows.size()},
               {"min_window_tokens", smallest},
               {"max_window_tokens", largest},
               {"exact_once", exact_once},
               {"softmax_row_sum_dev", row_sum_dev},
               {"ok", ok}}
              .dump()
       << '\n';
  }
  out.commit();
  if (!all_ok) throw CheckFailed("tesa-check: a check exceeded tolerance");
}

// ---------------------------------------------------------------------------

struct CostArgs {
  std::string config;
  std::string n_list;
  std::string out;
};

std::vector<Index> parse_n_list(const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v < 1)
      throw std::invalid_argument("--n-list: '" + item + "' is not a positive integer");
    if (!out.empty() && v <= out.back()) throw std::invalid_argument("--n-list must be strictly ascending");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("--n-list is empty");
  return out;
}

void run_cost(const CostArgs& a) {
  const RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  // Large-model dimensions; width, windows and pooling come from the run config.
  MateConfig model = large_model_config();
  model.d = rc.cost.model_dim;
  model.tesa.t_window = rc.model.tesa.t_window;
  model.tesa.s_window = rc.model.tesa.s_window;
  model.review = rc.model.review;
  const bool bidir = rc.cost.bidirectional;

  std::vector<Index> ns;
  Output out(a.out);
  auto& os = out.stream();
  os << "# mate-cost v1 d=" << model.d << " E=" << model.expansion << " d_s=" << model.state_dim
     << " d_h=" << model.head_dim << " K=" << model.conv_kernel << " window=" << model.tesa.t_window << 'x'
     << model.tesa.s_window << 'x' << model.tesa.s_window << " review="
     << (model.review.enabled ? std::to_string(model.review.pt) + 'x' + std::to_string(model.review.py) + 'x' +
                                    std::to_string(model.review.px)
                              : std::string("off"))
     << " bidirectional=" << (bidir ? "true" : "false") << '\n';
  if (a.n_list.empty()) {
    for (const auto& pub : kPublishedSpeedups) {
      const Shape3 s = rc.cost.latent_shape(pub.seconds);
      ns.push_back(s.size());
      os << "# " << pub.seconds << "s latent " << s.to_string() << " N=" << s.size() << " published speedup "
         << num(pub.speedup) << "x\n";
    }
  } else {
    ns = parse_n_list(a.n_list);
  }
  os << cost_csv_header() << '\n';
  for (Index n : ns) os << cost_csv_row(cost_report(n, model, bidir)) << '\n';
  out.commit();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  Index steps = 200;
  std::optional<std::uint64_t> seed;
  std::string log;
  std::string checkpoint;
};

void run_train(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.steps < 1) throw std::invalid_argument("train-toy: --steps must be >= 1");
  const TrainLog log = train_toy(rc.model, rc.train, a.steps, rc.train.seed);
  Output out(a.log);
  out.stream() << log.to_csv(rc.train.smoothing);
  out.commit();
  if (!a.checkpoint.empty()) save_checkpoint(a.checkpoint, Checkpoint{rc, log.weights});
  const auto sm = log.smoothed(rc.train.smoothing);
  const std::size_t first = std::min<std::size_t>(sm.size(), static_cast<std::size_t>(rc.train.smoothing)) - 1;
  std::fprintf(stderr, "trained %lld steps: smoothed loss %.6g -> %.6g\n", static_cast<long long>(a.steps), sm[first],
               sm.back());
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string checkpoint;
  Index steps = 16;
  std::uint64_t seed = 0;
  std::string shape;
  std::string out;
};

void run_sample(const SampleArgs& a) {
  if (a.steps < 1) throw std::invalid_argument("sample: --steps must be >= 1");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Shape3 shape = a.shape.empty() ? ck.config.train.shape : parse_shape(a.shape);
  const Tensor x = euler_sample(ck.weights, ck.config.model, a.steps, shape, a.seed);
  write_tensor_file(a.out, x);
  std::fprintf(stderr, "wrote %s (%s x %lld, mean energy %.6g)\n", a.out.c_str(), shape.to_string().c_str(),
               static_cast<long long>(x.channels()), mean_energy(x.data));
}

int threads_from_env(int fallback) {
  const char* env = std::getenv("MATE_THREADS");
  if (!env || !*env) return fallback;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw std::invalid_argument("MATE_THREADS must be an integer in [1, 1024]");
  return static_cast<int>(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MATE video denoiser toolkit: scan audits, oracle checks, cost tables, toy training"};
  app.name("mate");
  app.fallthrough();
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (MATE_THREADS overrides)")->check(CLI::Range(1, 1024));
  app.require_subcommand(1);

  ScanAuditArgs scan;
  auto* c_scan = app.add_subcommand("scan-audit", "Adjacency metric d_k for a scan family");
  c_scan->add_option("--shape", scan.shape, "Token grid TxHxW")->required();
  c_scan->add_option("--family", scan.family, "rms, rowmajor or zigzag")->capture_default_str();
  c_scan->add_option("--k", scan.k, "Number of consecutive layers")->capture_default_str()->check(CLI::PositiveNumber);
  c_scan->add_option("--out", scan.out, "CSV output (default stdout)");

  SsdCheckArgs ssd;
  auto* c_ssd = app.add_subcommand("ssd-check", "Scan vs dense oracle and gradient check, one JSON line per seed");
  c_ssd->add_option("--n", ssd.n, "Sequence length")->capture_default_str();
  c_ssd->add_option("--dstate", ssd.dstate, "State dim d_s")->capture_default_str();
  c_ssd->add_option("--dhead", ssd.dhead, "Head dim d_h")->capture_default_str();
  c_ssd->add_option("--seeds", ssd.seeds, "Number of seeds")->capture_default_str();
  c_ssd->add_option("--grad-n", ssd.grad_n, "Length used for the gradient check")->capture_default_str();
  c_ssd->add_option("--seed", ssd.seed, "First seed")->capture_default_str();
  c_ssd->add_option("--out", ssd.out, "JSON lines output (default stdout)");

  TesaCheckArgs tesa;
  auto* c_tesa = app.add_subcommand("tesa-check", "Full-window oracle deviation and window coverage audit");
  c_tesa->add_option("--shape", tesa.shape, "Token grid TxHxW")->capture_default_str();
  c_tesa->add_option("--tw", tesa.tw, "Temporal window")->capture_default_str();
  c_tesa->add_option("--sw", tesa.sw, "Spatial window")->capture_default_str();
  c_tesa->add_option("--d", tesa.d, "Token dim")->capture_default_str();
  c_tesa->add_option("--heads", tesa.heads, "Attention heads")->capture_default_str();
  c_tesa->add_option("--seed", tesa.seed, "Seed")->capture_default_str();
  c_tesa->add_option("--out", tesa.out, "JSON lines output (default stdout)");

  CostArgs cost;
  auto* c_cost = app.add_subcommand("cost", "FLOP table for MATE vs a global-attention layer");
  c_cost->add_option("--config", cost.config, "Run config file");
  c_cost->add_option("--n-list", cost.n_list, "Ascending token counts a,b,c (default: 17s/34s/68s clips)");
  c_cost->add_option("--out", cost.out, "CSV output (default stdout)");

  TrainArgs train;
  std::uint64_t train_seed = 0;
  auto* c_train = app.add_subcommand("train-toy", "Flow-matching training on synthetic moving squares");
  c_train->add_option("--config", train.config, "Run config file");
  c_train->add_option("--steps", train.steps, "Optimizer steps")->capture_default_str();
  auto* seed_opt = c_train->add_option("--seed", train_seed, "Seed (default: train.seed from config)");
  c_train->add_option("--log", train.log, "Loss CSV output (default stdout)");
  c_train->add_option("--checkpoint", train.checkpoint, "Write trained weights here");

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Euler sampling from a checkpoint");
  c_sample->add_option("--checkpoint", sample.checkpoint, "Checkpoint from train-toy")->required();
  c_sample->add_option("--steps", sample.steps, "Euler steps")->capture_default_str();
  c_sample->add_option("--seed", sample.seed, "Noise seed")->capture_default_str();
  c_sample->add_option("--shape", sample.shape, "Token grid TxHxW (default: training shape)");
  c_sample->add_option("--out", sample.out, "Tensor file")->required();

  if (argc < 2) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    set_thread_count(threads_from_env(threads));
    if (*c_scan) run_scan_audit(scan);
    if (*c_ssd) run_ssd_check(ssd);
    if (*c_tesa) run_tesa_check(tesa);
    if (*c_cost) run_cost(cost);
    if (*c_train) {
      if (*seed_opt) train.seed = train_seed;
      run_train(train);
    }
    if (*c_sample) run_sample(sample);
  } catch (const NumericFailure& e) {
    std::cerr << "mate: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "mate: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "mate: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "mate: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
