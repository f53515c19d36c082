// latent-spectra: spectral analysis toolkit for video-latent tensors.
//
// One subcommand per analysis; every run writes its artifacts plus a
// summary.json carrying the resolved config, input content hashes and all
// scalar metrics. Randomized subcommands require an explicit --seed, and a
// fixed seed makes every artifact byte-reproducible.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lspec/correlation.hpp"
#include "lspec/dynamics.hpp"
#include "lspec/eigenspectrum.hpp"
#include "lspec/hash.hpp"
#include "lspec/masking.hpp"
#include "lspec/npy.hpp"
#include "lspec/rng.hpp"
#include "lspec/spectrum.hpp"
#include "lspec/synth.hpp"
#include "lspec/tensor.hpp"

using json = nlohmann::ordered_json;
using namespace lspec;

namespace {

// ----------------------------- small helpers -----------------------------

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path + ": write failed");
}

struct CsvWriter {
  std::ostringstream os;

  explicit CsvWriter(const std::string& header) { os << header << "\n"; }
  void row(const std::vector<double>& values) {
    for (size_t i = 0; i < values.size(); ++i) {
      if (i > 0) os << ",";
      os << fmt_g17(values[i]);
    }
    os << "\n";
  }
  void save(const std::string& path) { write_text(path, os.str()); }
};

// Run summary: config echo, input hashes, scalar metrics.
struct Summary {
  json doc;

  Summary(const std::string& command, const json& config) {
    doc["command"] = command;
    doc["config"] = config;
    doc["inputs"] = json::object();
    doc["metrics"] = json::object();
  }
  void input(const std::string& path) {
    doc["inputs"][path] = {{"fnv1a64", file_hash_hex(path)}};
  }
  void metric(const std::string& key, const json& value) {
    doc["metrics"][key] = value;
  }
  void save(const std::string& dir) {
    write_text(dir + "/summary.json", doc.dump(2) + "\n");
  }
};

std::string ensure_outdir(const std::string& dir) {
  std::filesystem::create_directories(dir);
  return dir;
}

TensorDims parse_dims(const std::string& text) {
  TensorDims d;
  if (std::sscanf(text.c_str(), "%ldx%ldx%ldx%ld", &d.t, &d.h, &d.w, &d.c) != 4)
    throw std::invalid_argument("dims must look like TxHxWxC, got '" + text + "'");
  check_dims(d);
  return d;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list");
  return out;
}

TimestepDist parse_dist(const std::string& text) {
  if (text == "uniform") return TimestepDist::uniform();
  if (text.rfind("fixed:", 0) == 0)
    return TimestepDist::fixed(std::stod(text.substr(6)));
  if (text.rfind("logit-normal:", 0) == 0) {
    const auto params = parse_doubles(text.substr(13));
    if (params.size() != 2)
      throw std::invalid_argument("logit-normal needs mean,std");
    return TimestepDist::logit_normal(params[0], params[1]);
  }
  if (text == "logit-normal") return TimestepDist::logit_normal();
  throw std::invalid_argument("unknown dist '" + text +
                              "' (use logit-normal:M,S | uniform | fixed:T)");
}

LatentBatch<double> load_double(const std::string& path) {
  return std::visit(
      [](const auto& batch) { return batch.template cast<double>(); },
      read_tensor(path));
}

LatentBatch<double> load_standardized(const std::string& path, bool raw) {
  LatentBatch<double> batch = load_double(path);
  if (raw) return batch;
  return standardize(batch).first;
}

json dims_json(const TensorDims& d) {
  return {{"t", d.t}, {"h", d.h}, {"w", d.w}, {"c", d.c}};
}

Index auto_band(Index requested, Index len) {
  if (requested >= 0) return requested;
  return std::min<Index>(1, len - 1);
}

// diagonal-covariance batch for simulate --lambdas (positions i.i.d.,
// channel variance lambda_c; intentionally not standardized so the
// prescribed eigenvalues survive verbatim)
LatentBatch<double> diag_spectrum_batch(const Eigen::VectorXd& lam,
                                        const TensorDims& dims, Index b,
                                        uint64_t seed) {
  auto batch = gen_white(dims, b, seed);
  for (Index i = 0; i < b; ++i)
    for (Index c = 0; c < dims.c; ++c)
      batch[i].mat().col(c) *= std::sqrt(lam[c]);
  return batch;
}

// ----------------------------- synth -----------------------------

struct SynthOptions {
  std::string out;
  std::string kind = "white";
  std::string dims_text = "4x16x16x8";
  Index batch = 1;
  uint64_t seed = 0;
  std::string rho_text;
  std::string eigenvalues_text;
  std::string mixing_path;
  std::string dtype = "f8";
  std::string spec_path;
};

void apply_spec_file(SynthOptions& opt) {
  std::ifstream in(opt.spec_path);
  if (!in) throw std::invalid_argument(opt.spec_path + ": cannot open spec file");
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const size_t a = s.find_first_not_of(" \t\r");
    const size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(opt.spec_path + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "kind") opt.kind = value;
    else if (key == "dims") opt.dims_text = value;
    else if (key == "batch") opt.batch = std::stol(value);
    else if (key == "rho") opt.rho_text = value;
    else if (key == "rho_t" || key == "rho_h" || key == "rho_w") {
      auto rho = opt.rho_text.empty() ? std::vector<double>{0, 0, 0}
                                      : parse_doubles(opt.rho_text);
      rho.resize(3, 0.0);
      rho[key == "rho_t" ? 0 : key == "rho_h" ? 1 : 2] = std::stod(value);
      opt.rho_text =
          fmt_g17(rho[0]) + "," + fmt_g17(rho[1]) + "," + fmt_g17(rho[2]);
    } else if (key == "eigenvalues") opt.eigenvalues_text = value;
    else if (key == "mixing") opt.mixing_path = value;
    else if (key == "dtype") opt.dtype = value;
    else
      throw std::invalid_argument(opt.spec_path + ":" + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
  }
}

int run_synth(SynthOptions opt) {
  if (!opt.spec_path.empty()) apply_spec_file(opt);
  const TensorDims dims = parse_dims(opt.dims_text);
  if (opt.dtype != "f8" && opt.dtype != "f4")
    throw std::invalid_argument("dtype must be f8 or f4");

  json config{{"kind", opt.kind},   {"dims", dims_json(dims)},
              {"batch", opt.batch}, {"seed", opt.seed},
              {"dtype", opt.dtype}};

  LatentBatch<double> batch = [&] {
    if (opt.kind == "white") return gen_white(dims, opt.batch, opt.seed);
    if (opt.kind == "ar") {
      auto rho = opt.rho_text.empty() ? std::vector<double>{0, 0, 0}
                                      : parse_doubles(opt.rho_text);
      if (rho.size() != 3)
        throw std::invalid_argument("--rho needs three values t,h,w");
      config["rho"] = rho;
      return gen_ar_field(dims, opt.batch,
                          {.rho_t = rho[0], .rho_h = rho[1], .rho_w = rho[2]},
                          opt.seed);
    }
    if (opt.kind == "spectrum") {
      if (opt.eigenvalues_text.empty())
        throw std::invalid_argument("kind=spectrum requires --eigenvalues");
      SpectrumSpec spec;
      const auto lam = parse_doubles(opt.eigenvalues_text);
      spec.eigenvalues =
          Eigen::Map<const Eigen::VectorXd>(lam.data(), lam.size());
      config["eigenvalues"] = lam;
      if (!opt.mixing_path.empty()) {
        const NpyArray arr = read_npy(opt.mixing_path);
        if (arr.shape.size() != 2 || arr.shape[0] != arr.shape[1])
          throw std::invalid_argument(opt.mixing_path +
                                      ": mixing matrix must be square rank-2");
        Eigen::MatrixXd q(arr.shape[0], arr.shape[1]);
        for (Index i = 0; i < arr.shape[0]; ++i)
          for (Index j = 0; j < arr.shape[1]; ++j) {
            const Index flat = i * arr.shape[1] + j;
            q(i, j) = arr.is_f8 ? arr.f8[flat] : arr.f4[flat];
          }
        spec.mixing = q;
        config["mixing"] = opt.mixing_path;
      }
      return gen_spectrum_field(dims, opt.batch, spec, opt.seed);
    }
    throw std::invalid_argument("unknown kind '" + opt.kind +
                                "' (white | ar | spectrum)");
  }();

  ensure_outdir(opt.out);
  const std::string tensor_path = opt.out + "/batch.npy";
  if (opt.dtype == "f8")
    write_tensor(batch, tensor_path);
  else
    write_tensor(batch.cast<float>(), tensor_path);

  Summary summary("synth", config);
  if (!opt.mixing_path.empty()) summary.input(opt.mixing_path);
  summary.metric("output", tensor_path);
  summary.metric("output_fnv1a64", file_hash_hex(tensor_path));
  summary.save(opt.out);
  std::cout << "synth: wrote " << tensor_path << " (" << opt.kind << " "
            << dims.str() << " x" << opt.batch << ")\n";
  return 0;
}

// ----------------------------- psd -----------------------------

int run_psd(const std::string& input, const std::string& out, Index bins,
            const std::string& band_text, bool raw) {
  auto batch = load_standardized(input, raw);
  const PsdCurve curve = psd(batch, bins);

  const auto band = band_text.empty() ? std::vector<double>{-1, -1, -1}
                                      : parse_doubles(band_text);
  if (band.size() != 3) throw std::invalid_argument("--low-band needs t,h,w");
  const Index mt = auto_band(static_cast<Index>(band[0]), batch.dims().t);
  const Index mh = auto_band(static_cast<Index>(band[1]), batch.dims().h);
  const Index mw = auto_band(static_cast<Index>(band[2]), batch.dims().w);
  const double low = low_freq_energy(batch, mt, mh, mw);

  ensure_outdir(out);
  CsvWriter csv("bin_index,bin_start_zigzag,bin_end_zigzag,energy");
  for (Index b = 0; b < curve.energy.size(); ++b)
    csv.row({static_cast<double>(b), static_cast<double>(curve.bin_start[b]),
             static_cast<double>(curve.bin_end[b]), curve.energy[b]});
  csv.save(out + "/psd.csv");

  json config{{"input", input},
              {"bins", bins},
              {"standardize", !raw},
              {"low_band", {mt, mh, mw}}};
  Summary summary("psd", config);
  summary.input(input);
  summary.metric("dims", dims_json(batch.dims()));
  summary.metric("batch", batch.size());
  summary.metric("normalized", curve.normalized);
  summary.metric("low_freq_fraction", low);
  summary.metric("bin0_energy", curve.energy[0]);
  summary.save(out);
  std::cout << "psd: " << bins << " bins, low-freq fraction " << low << "\n";
  return 0;
}

// ----------------------------- localcorr -----------------------------

int run_localcorr(const std::string& input, const std::string& out,
                  Index patch_size, const std::string& similarity,
                  bool no_first_frame, bool raw) {
  auto batch = load_standardized(input, raw);
  PatchSpec spec;
  spec.size = patch_size;
  spec.first_frame_spatial = !no_first_frame;
  if (similarity != "dot" && similarity != "cosine")
    throw std::invalid_argument("--similarity must be cosine or dot");
  spec.similarity = similarity == "dot" ? Similarity::dot : Similarity::cosine;

  const double mean = local_correlation(batch, spec);

  // pooled per-patch histogram, 20 bins on [-1, 1]
  constexpr Index kBins = 20;
  std::vector<Index> hist(kBins, 0);
  for (Index i = 0; i < batch.size(); ++i) {
    for (double r : per_patch_local_correlation(batch[i], spec)) {
      const double unit = std::clamp((r + 1.0) / 2.0, 0.0, 1.0);
      hist[std::min<Index>(static_cast<Index>(unit * kBins), kBins - 1)] += 1;
    }
  }

  ensure_outdir(out);
  json config{{"input", input},
              {"patch_size", patch_size},
              {"similarity", similarity},
              {"first_frame_spatial", !no_first_frame},
              {"standardize", !raw}};
  json hist_json = json::array();
  for (Index b = 0; b < kBins; ++b) {
    hist_json.push_back({{"lo", -1.0 + 2.0 * b / kBins},
                         {"hi", -1.0 + 2.0 * (b + 1) / kBins},
                         {"count", hist[b]}});
  }
  json doc{{"mean_local_corr", mean}, {"per_patch_histogram", hist_json}};
  write_text(out + "/localcorr.json", doc.dump(2) + "\n");

  Summary summary("localcorr", config);
  summary.input(input);
  summary.metric("mean_local_corr", mean);
  summary.save(out);
  std::cout << "localcorr: mean local correlation " << mean << "\n";
  return 0;
}

// ----------------------------- optimize-lcr -----------------------------

int run_optimize_lcr(const std::string& input, const std::string& out,
                     double alpha, double omega, Index steps, double step_size,
                     Index patch_size, const std::string& similarity) {
  auto batch = load_double(input);
  if (batch.size() != 1)
    throw std::invalid_argument(
        "optimize-lcr expects a single tensor (B = 1), got B = " +
        std::to_string(batch.size()));
  PatchSpec spec;
  spec.size = patch_size;
  spec.similarity = similarity == "dot" ? Similarity::dot : Similarity::cosine;

  auto result =
      optimize_latent_lcr(batch[0], alpha, omega, steps, step_size, spec);

  ensure_outdir(out);
  CsvWriter csv("step,loss,local_corr,low_freq_fraction");
  for (const auto& row : result.trajectory)
    csv.row({static_cast<double>(row.step), row.loss, row.local_corr,
             row.low_freq_fraction});
  csv.save(out + "/trajectory.csv");
  write_tensor(LatentBatch<double>::single(std::move(result.tensor)),
               out + "/optimized.npy");

  json config{{"input", input},         {"alpha", alpha},
              {"omega", omega},         {"steps", steps},
              {"step_size", step_size}, {"patch_size", patch_size},
              {"similarity", similarity}};
  Summary summary("optimize-lcr", config);
  summary.input(input);
  const auto& first = result.trajectory.front();
  const auto& last = result.trajectory.back();
  summary.metric("initial_local_corr", first.local_corr);
  summary.metric("final_local_corr", last.local_corr);
  summary.metric("initial_low_freq_fraction", first.low_freq_fraction);
  summary.metric("final_low_freq_fraction", last.low_freq_fraction);
  summary.metric("final_loss", last.loss);
  summary.save(out);
  std::cout << "optimize-lcr: local corr " << first.local_corr << " -> "
            << last.local_corr << " in " << steps << " steps\n";
  return 0;
}

// ----------------------------- eigen -----------------------------

int run_eigen(const std::string& input, const std::string& out, Index k,
              bool raw) {
  auto batch = load_standardized(input, raw);
  const Eigen::MatrixXd sigma = channel_autocorr(batch);
  const EigenSpectrum spec = eigh(sigma);
  const Eigen::VectorXd cumvar = cumulative_explained_variance(spec);
  const double erank = effective_rank(spec);
  if (k < 1 || k > spec.eigenvalues.size())
    throw std::invalid_argument("--k out of range");
  const double top_k_share =
      spec.eigenvalues.head(k).sum() / spec.eigenvalues.sum();

  ensure_outdir(out);
  CsvWriter csv("mode_index,eigenvalue,cumulative_explained_variance");
  for (Index l = 0; l < spec.eigenvalues.size(); ++l)
    csv.row({static_cast<double>(l), spec.eigenvalues[l], cumvar[l]});
  csv.save(out + "/eigen.csv");

  json config{{"input", input}, {"k", k}, {"standardize", !raw}};
  Summary summary("eigen", config);
  summary.input(input);
  summary.metric("effective_rank", erank);
  summary.metric("top_k_share", top_k_share);
  summary.metric("trace", sigma.trace());
  summary.save(out);
  std::cout << "eigen: effective rank " << erank << ", top-" << k << " share "
            << top_k_share << "\n";
  return 0;
}

// ----------------------------- optimize-covpen -----------------------------

int run_optimize_covpen(const std::string& input, const std::string& out,
                        Index k, Index steps, double step_size) {
  auto batch = load_double(input);
  const auto result = optimize_latent_covpen(batch, k, steps, step_size);

  ensure_outdir(out);
  CsvWriter csv("step,penalty,effective_rank");
  for (const auto& row : result.trajectory)
    csv.row({static_cast<double>(row.step), row.penalty, row.effective_rank});
  csv.save(out + "/trajectory.csv");
  write_tensor(result.batch, out + "/optimized.npy");

  json config{
      {"input", input}, {"k", k}, {"steps", steps}, {"step_size", step_size}};
  Summary summary("optimize-covpen", config);
  summary.input(input);
  summary.metric("initial_penalty", result.trajectory.front().penalty);
  summary.metric("final_penalty", result.trajectory.back().penalty);
  summary.metric("initial_effective_rank",
                 result.trajectory.front().effective_rank);
  summary.metric("final_effective_rank",
                 result.trajectory.back().effective_rank);
  summary.save(out);
  std::cout << "optimize-covpen: effective rank "
            << result.trajectory.front().effective_rank << " -> "
            << result.trajectory.back().effective_rank << "\n";
  return 0;
}

// ----------------------------- modes -----------------------------

int run_modes(const std::string& input, const std::string& lambdas_text,
              const std::string& out, const std::string& dist_text,
              const std::string& method, Index mc_n, int nodes,
              std::optional<uint64_t> seed) {
  const TimestepDist dist = parse_dist(dist_text);
  Eigen::VectorXd lambdas;
  if (!lambdas_text.empty()) {
    const auto values = parse_doubles(lambdas_text);
    lambdas = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
  } else if (!input.empty()) {
    lambdas =
        eigh(channel_autocorr(load_standardized(input, false))).eigenvalues;
  } else {
    throw std::invalid_argument("modes needs --lambdas or --input");
  }

  json config{{"dist", dist_text}, {"method", method}, {"nodes", nodes}};
  if (!input.empty()) config["input"] = input;
  config["lambdas"] =
      std::vector<double>(lambdas.data(), lambdas.data() + lambdas.size());

  ModeStrengthCurve curve;
  if (method == "quadrature") {
    curve = expected_mode_strength_quad(lambdas, dist, nodes);
  } else if (method == "mc") {
    if (!seed.has_value())
      throw std::invalid_argument("--method mc requires --seed");
    config["mc_n"] = mc_n;
    config["seed"] = *seed;
    curve = expected_mode_strength_mc(lambdas, dist, mc_n, *seed).curve;
  } else {
    throw std::invalid_argument("--method must be quadrature or mc");
  }

  ensure_outdir(out);
  CsvWriter csv("mode,lambda,s_bar,abs_s_bar");
  for (Index l = 0; l < lambdas.size(); ++l)
    csv.row({static_cast<double>(l), curve.lambdas[l], curve.s_bar[l],
             curve.abs_s_bar[l]});
  csv.save(out + "/modes.csv");

  Summary summary("modes", config);
  if (!input.empty()) summary.input(input);
  summary.metric("mean_t", curve.mean_t);
  summary.metric("lambda_star", curve.mean_t / (1.0 - curve.mean_t));
  summary.save(out);
  std::cout << "modes: E[t] = " << curve.mean_t << ", " << lambdas.size()
            << " modes\n";
  return 0;
}

// ----------------------------- simulate -----------------------------

int run_simulate(const std::string& input, const std::string& lambdas_text,
                 const std::string& dims_text, Index batch_size,
                 const std::string& out, const std::string& dist_text,
                 Index steps, double step_size, Index batch_draws,
                 Index repeats, uint64_t seed, double threshold,
                 int smooth_window) {
  const TimestepDist dist = parse_dist(dist_text);
  if (repeats < 1) throw std::invalid_argument("--repeats must be >= 1");
  LatentBatch<double> batch = [&] {
    if (!input.empty()) return load_standardized(input, false);
    if (lambdas_text.empty())
      throw std::invalid_argument("simulate needs --input or --lambdas");
    const auto values = parse_doubles(lambdas_text);
    const Eigen::VectorXd lam =
        Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
    const TensorDims dims = parse_dims(dims_text);
    if (dims.c != lam.size())
      throw std::invalid_argument("--dims channel count must match --lambdas");
    return diag_spectrum_batch(lam, dims, batch_size, seed ^ 0x5eedULL);
  }();

  const EigenSpectrum es = eigh(channel_autocorr(batch));
  const auto strengths = expected_mode_strength_quad(es.eigenvalues, dist);

  ModeErrorCurve avg;
  for (Index r = 0; r < repeats; ++r) {
    DenoiserConfig cfg;
    cfg.steps = steps;
    cfg.step_size = step_size;
    cfg.batch_draws = batch_draws;
    cfg.seed = seed + static_cast<uint64_t>(r);
    const auto traj = train_linear_denoiser(batch, dist, cfg);
    const auto curve = mode_error_curve(traj, es, strengths.s_bar, dist);
    if (r == 0) {
      avg = curve;
    } else {
      avg.error += curve.error;
      avg.learned += curve.learned;
    }
  }
  avg.error /= static_cast<double>(repeats);
  avg.learned /= static_cast<double>(repeats);

  const Eigen::VectorXd steps50 =
      steps_to_error_threshold(avg, threshold, smooth_window);
  const double rho = spearman(strengths.abs_s_bar, steps50);

  ensure_outdir(out);
  CsvWriter csv("step,mode,learned_strength,rel_error");
  for (size_t s = 0; s < avg.steps.size(); ++s)
    for (Index l = 0; l < es.eigenvalues.size(); ++l)
      csv.row({static_cast<double>(avg.steps[s]), static_cast<double>(l),
               avg.learned(static_cast<Index>(s), l),
               avg.error(static_cast<Index>(s), l)});
  csv.save(out + "/simulate.csv");

  json config{{"dist", dist_text},      {"steps", steps},
              {"step_size", step_size}, {"batch_draws", batch_draws},
              {"repeats", repeats},     {"seed", seed},
              {"threshold", threshold}, {"smooth_window", smooth_window}};
  if (!input.empty()) config["input"] = input;
  if (!lambdas_text.empty()) {
    config["lambdas"] = parse_doubles(lambdas_text);
    config["dims"] = dims_text;
    config["batch"] = batch_size;
  }
  Summary summary("simulate", config);
  if (!input.empty()) summary.input(input);
  summary.metric("spearman_abs_strength_vs_steps50", rho);
  json per_mode = json::array();
  for (Index l = 0; l < es.eigenvalues.size(); ++l) {
    per_mode.push_back({{"mode", l},
                        {"lambda", es.eigenvalues[l]},
                        {"s_bar", strengths.s_bar[l]},
                        {"steps_to_threshold",
                         std::isfinite(steps50[l]) ? json(steps50[l])
                                                   : json("unreached")}});
  }
  summary.metric("modes", per_mode);
  summary.save(out);
  std::cout << "simulate: Spearman(|s_bar|, steps-to-" << threshold
            << ") = " << rho << "\n";
  return 0;
}

// ----------------------------- mask -----------------------------

int run_mask(const std::string& input, const std::string& out,
             const std::string& ratios_text, const std::string& probs_text,
             Index unit, const std::string& token_text, uint64_t seed) {
  RatioSchedule schedule;
  if (!ratios_text.empty()) schedule.ratios = parse_doubles(ratios_text);
  if (!probs_text.empty()) schedule.probs = parse_doubles(probs_text);
  schedule.validate();

  AnyBatch any = read_tensor(input);
  return std::visit(
      [&]<class S>(const LatentBatch<S>& batch) -> int {
        const Index c = batch.dims().c;
        Eigen::VectorXd token = Eigen::VectorXd::Zero(c);
        if (!token_text.empty()) {
          const auto values = parse_doubles(token_text);
          if (values.size() == 1) {
            token.setConstant(values[0]);
          } else if (static_cast<Index>(values.size()) == c) {
            token = Eigen::Map<const Eigen::VectorXd>(values.data(), c);
          } else {
            throw std::invalid_argument(
                "--token needs one value or one per channel");
          }
        }

        std::vector<LatentTensor<S>> masked;
        json per_item = json::array();
        for (Index i = 0; i < batch.size(); ++i) {
          const auto result = masked_identity_pipeline(
              batch[i], schedule, token, unit, seed + static_cast<uint64_t>(i));
          masked.push_back(result.masked);
          per_item.push_back({{"item", i},
                              {"ratio_requested", result.ratio_requested},
                              {"ratio_realized", result.ratio_realized},
                              {"l1_perturbation", result.l1}});
        }

        ensure_outdir(out);
        write_tensor(LatentBatch<S>(std::move(masked)), out + "/masked.npy");

        json config{{"input", input},
                    {"ratios", schedule.ratios},
                    {"probs", schedule.probs},
                    {"unit", unit},
                    {"seed", seed}};
        Summary summary("mask", config);
        summary.input(input);
        summary.metric("items", per_item);
        summary.save(out);
        std::cout << "mask: wrote " << out << "/masked.npy (" << batch.size()
                  << " items)\n";
        return 0;
      },
      any);
}

// ----------------------------- verify-theorem1 -----------------------------

int run_verify_theorem1(const std::string& input, const std::string& out,
                        Index n_noise, uint64_t seed) {
  struct Case {
    std::string name;
    LatentBatch<double> batch;
  };
  std::vector<Case> cases;
  if (!input.empty()) {
    cases.push_back({input, load_standardized(input, false)});
  } else {
    // built-in suite: C in {4, 8, 16} with assorted structure
    SpectrumSpec spiky;
    spiky.eigenvalues = Eigen::Vector4d(3.4, 0.3, 0.2, 0.1);
    Eigen::VectorXd lam8(8);
    lam8 << 3.0, 1.6, 1.2, 0.8, 0.6, 0.4, 0.25, 0.15;
    SpectrumSpec mid;
    mid.eigenvalues = lam8;
    cases.push_back(
        {"white_c4", standardize(gen_white({4, 12, 12, 4}, 8, seed)).first});
    cases.push_back(
        {"spectrum_c4",
         standardize(gen_spectrum_field({4, 12, 12, 4}, 8, spiky, seed + 1)).first});
    cases.push_back(
        {"spectrum_c8",
         standardize(gen_spectrum_field({4, 12, 12, 8}, 8, mid, seed + 2)).first});
    cases.push_back(
        {"ar_c8",
         standardize(gen_ar_field({4, 12, 12, 8}, 8,
                                  {.rho_t = 0.6, .rho_h = 0.8, .rho_w = 0.8},
                                  seed + 3)).first});
    cases.push_back(
        {"white_c16", standardize(gen_white({4, 12, 12, 16}, 8, seed + 4)).first});
  }

  json report = json::array();
  double worst_z = 0.0;
  double worst_comm = 0.0;
  for (size_t k = 0; k < cases.size(); ++k) {
    const auto& c = cases[k];
    const Eigen::MatrixXd sigma = channel_autocorr(c.batch);
    json ts = json::array();
    for (int step = 0; step <= 10; ++step) {
      const double t = step / 10.0;
      const auto emp =
          cross_corr_empirical(c.batch, t, n_noise, seed + 100 * (k + 1) + step);
      const Eigen::MatrixXd analytic = cross_corr_analytic(sigma, t);
      const double max_z =
          ((emp.mean - analytic).cwiseAbs().cwiseQuotient(emp.stderr_)).maxCoeff();
      const double comm =
          (sigma * analytic - analytic * sigma).cwiseAbs().maxCoeff();
      worst_z = std::max(worst_z, max_z);
      worst_comm = std::max(worst_comm, comm);
      ts.push_back({{"t", t}, {"max_z", max_z}, {"commutator_max", comm}});
    }
    report.push_back({{"case", c.name},
                      {"channels", c.batch.dims().c},
                      {"samples", c.batch.total_positions() * n_noise},
                      {"grid", ts}});
  }

  ensure_outdir(out);
  write_text(out + "/theorem1.json", report.dump(2) + "\n");

  json config{{"n_noise", n_noise}, {"seed", seed}};
  if (!input.empty()) config["input"] = input;
  Summary summary("verify-theorem1", config);
  if (!input.empty()) summary.input(input);
  summary.metric("max_z_overall", worst_z);
  summary.metric("commutator_max_overall", worst_comm);
  summary.metric("within_3_sigma", worst_z < 3.0);
  summary.metric("eigenvectors_shared_1e10", worst_comm < 1e-10);
  summary.save(out);
  std::cout << "verify-theorem1: max |z| " << worst_z << ", commutator max "
            << worst_comm << "\n";
  return 0;
}

// ----------------------------- wk-check -----------------------------

int run_wk_check(const std::string& input, const std::string& out, Index n,
                 Index signals, uint64_t seed) {
  ensure_outdir(out);
  double worst = 0.0;
  json config;
  WienerKhinchinResult first;
  if (!input.empty()) {
    const NpyArray arr = read_npy(input);
    if (arr.shape.size() != 1)
      throw std::invalid_argument(input + ": wk-check needs a rank-1 npy");
    Eigen::VectorXd x(arr.count());
    for (Index i = 0; i < arr.count(); ++i)
      x[i] = arr.is_f8 ? arr.f8[i] : arr.f4[i];
    first = wiener_khinchin_check(x);
    worst = first.max_rel_diff;
    config = {{"input", input}};
  } else {
    if (signals < 1) throw std::invalid_argument("--signals must be >= 1");
    Philox rng(seed);
    for (Index s = 0; s < signals; ++s) {
      Eigen::VectorXd x(n);
      for (Index i = 0; i < n; ++i) x[i] = rng.normal();
      const auto result = wiener_khinchin_check(x);
      worst = std::max(worst, result.max_rel_diff);
      if (s == 0) first = result;
    }
    config = {{"n", n}, {"signals", signals}, {"seed", seed}};
  }

  CsvWriter csv("m,psd_from_autocorr,psd_direct");
  for (Index m = 0; m < first.psd_direct.size(); ++m)
    csv.row({static_cast<double>(m), first.psd_from_autocorr[m],
             first.psd_direct[m]});
  csv.save(out + "/wk.csv");

  Summary summary("wk-check", config);
  if (!input.empty()) summary.input(input);
  summary.metric("max_rel_diff", worst);
  summary.save(out);
  std::cout << "wk-check: max relative difference " << worst << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent-spectra: frequency- and eigen-spectrum analysis for "
               "video latent tensors"};
  app.require_subcommand(1);

  // synth
  SynthOptions synth_opt;
  auto* synth = app.add_subcommand("synth", "generate synthetic latent batches");
  synth->add_option("--out", synth_opt.out, "output directory")->required();
  synth->add_option("--seed", synth_opt.seed, "RNG seed")->required();
  synth->add_option("--kind", synth_opt.kind, "white | ar | spectrum");
  synth->add_option("--dims", synth_opt.dims_text, "TxHxWxC");
  synth->add_option("--batch", synth_opt.batch, "batch size");
  synth->add_option("--rho", synth_opt.rho_text, "AR coefficients t,h,w");
  synth->add_option("--eigenvalues", synth_opt.eigenvalues_text,
                    "channel eigenvalues, descending, summing to C");
  synth->add_option("--mixing", synth_opt.mixing_path,
                    "orthonormal CxC mixing matrix (.npy)");
  synth->add_option("--dtype", synth_opt.dtype, "f8 | f4");
  synth->add_option("--spec", synth_opt.spec_path, "key = value spec file");

  // psd
  std::string psd_input, psd_out = ".", psd_band;
  Index psd_bins = 20;
  bool psd_raw = false;
  auto* psd_cmd =
      app.add_subcommand("psd", "zigzag-binned power spectral density");
  psd_cmd->add_option("--input", psd_input, "input tensor (.npy or directory)")
      ->required();
  psd_cmd->add_option("--out", psd_out, "output directory");
  psd_cmd->add_option("--bins", psd_bins, "bin count");
  psd_cmd->add_option("--low-band", psd_band, "low-frequency band t,h,w");
  psd_cmd->add_flag("--raw", psd_raw, "skip per-channel standardization");

  // localcorr
  std::string lc_input, lc_out = ".", lc_sim = "cosine";
  Index lc_patch = 2;
  bool lc_no_first = false, lc_raw = false;
  auto* lc_cmd = app.add_subcommand("localcorr", "patch-mean local correlation");
  lc_cmd->add_option("--input", lc_input, "input tensor")->required();
  lc_cmd->add_option("--out", lc_out, "output directory");
  lc_cmd->add_option("--patch-size", lc_patch, "patch edge length");
  lc_cmd->add_option("--similarity", lc_sim, "cosine | dot");
  lc_cmd->add_flag("--no-first-frame-spatial", lc_no_first,
                   "tile all frames into temporal blocks");
  lc_cmd->add_flag("--raw", lc_raw, "skip per-channel standardization");

  // optimize-lcr
  std::string olcr_input, olcr_out = ".", olcr_sim = "cosine";
  double olcr_alpha = 0.75, olcr_omega = 0.02, olcr_step = 0.0;
  Index olcr_steps = 500, olcr_patch = 2;
  auto* olcr_cmd = app.add_subcommand(
      "optimize-lcr", "gradient descent on the local-correlation hinge");
  olcr_cmd->add_option("--input", olcr_input, "input tensor")->required();
  olcr_cmd->add_option("--out", olcr_out, "output directory");
  olcr_cmd->add_option("--alpha", olcr_alpha, "hinge threshold");
  olcr_cmd->add_option("--omega", olcr_omega, "loss weight");
  olcr_cmd->add_option("--steps", olcr_steps, "descent steps");
  olcr_cmd->add_option("--step-size", olcr_step, "step size (0 = auto)");
  olcr_cmd->add_option("--patch-size", olcr_patch, "patch edge length");
  olcr_cmd->add_option("--similarity", olcr_sim, "cosine | dot");

  // eigen
  std::string eig_input, eig_out = ".";
  Index eig_k = 3;
  bool eig_raw = false;
  auto* eig_cmd = app.add_subcommand("eigen", "channel eigenspectrum analysis");
  eig_cmd->add_option("--input", eig_input, "input tensor")->required();
  eig_cmd->add_option("--out", eig_out, "output directory");
  eig_cmd->add_option("--k", eig_k, "top-k share to report");
  eig_cmd->add_flag("--raw", eig_raw, "skip per-channel standardization");

  // optimize-covpen
  std::string ocp_input, ocp_out = ".";
  Index ocp_k = 3, ocp_steps = 300;
  double ocp_step = 0.0;
  auto* ocp_cmd = app.add_subcommand(
      "optimize-covpen", "gradient descent on the covariance tail penalty");
  ocp_cmd->add_option("--input", ocp_input, "input tensor")->required();
  ocp_cmd->add_option("--out", ocp_out, "output directory");
  ocp_cmd->add_option("--k", ocp_k, "protected top-k modes");
  ocp_cmd->add_option("--steps", ocp_steps, "descent steps");
  ocp_cmd->add_option("--step-size", ocp_step, "step size (0 = auto)");

  // modes
  std::string modes_input, modes_lambdas, modes_out = ".",
                           modes_dist = "logit-normal:0,1",
                           modes_method = "quadrature";
  Index modes_mc_n = 100000;
  int modes_nodes = 64;
  std::optional<uint64_t> modes_seed;
  auto* modes_cmd =
      app.add_subcommand("modes", "expected cross-correlation mode strengths");
  modes_cmd->add_option("--input", modes_input, "tensor whose spectrum to use");
  modes_cmd->add_option("--lambdas", modes_lambdas, "explicit eigenvalues");
  modes_cmd->add_option("--out", modes_out, "output directory");
  modes_cmd->add_option("--dist", modes_dist,
                        "logit-normal:M,S | uniform | fixed:T");
  modes_cmd->add_option("--method", modes_method, "quadrature | mc");
  modes_cmd->add_option("--mc-n", modes_mc_n, "MC sample count");
  modes_cmd->add_option("--nodes", modes_nodes, "quadrature nodes");
  modes_cmd->add_option("--seed", modes_seed, "RNG seed (required for mc)");

  // simulate
  std::string sim_input, sim_lambdas, sim_dims = "4x16x16x8", sim_out = ".",
                         sim_dist = "logit-normal:0,1";
  Index sim_batch = 8, sim_steps = 30000, sim_draws = 2, sim_repeats = 8;
  double sim_step = 0.08, sim_threshold = 0.5;
  int sim_smooth = 5;
  uint64_t sim_seed = 0;
  auto* sim_cmd = app.add_subcommand(
      "simulate", "linear-denoiser training and mode-wise convergence");
  sim_cmd->add_option("--input", sim_input, "tensor batch to train on");
  sim_cmd->add_option("--lambdas", sim_lambdas,
                      "diagonal channel spectrum for a synthetic batch");
  sim_cmd->add_option("--dims", sim_dims, "dims for --lambdas batches");
  sim_cmd->add_option("--batch", sim_batch, "batch size for --lambdas batches");
  sim_cmd->add_option("--out", sim_out, "output directory");
  sim_cmd->add_option("--dist", sim_dist, "timestep distribution");
  sim_cmd->add_option("--steps", sim_steps, "SGD steps");
  sim_cmd->add_option("--step-size", sim_step, "SGD step size");
  sim_cmd->add_option("--batch-draws", sim_draws, "samples per SGD step");
  sim_cmd->add_option("--repeats", sim_repeats, "independent runs to average");
  sim_cmd->add_option("--threshold", sim_threshold, "error threshold");
  sim_cmd->add_option("--smooth-window", sim_smooth, "smoothing window");
  sim_cmd->add_option("--seed", sim_seed, "RNG seed")->required();

  // mask
  std::string mask_input, mask_out = ".", mask_ratios, mask_probs, mask_token;
  Index mask_unit = 1;
  uint64_t mask_seed = 0;
  auto* mask_cmd = app.add_subcommand("mask", "masked-reconstruction masking");
  mask_cmd->add_option("--input", mask_input, "input tensor")->required();
  mask_cmd->add_option("--out", mask_out, "output directory");
  mask_cmd->add_option("--ratios", mask_ratios,
                       "drop ratios (default 0,0.25,0.5,0.75)");
  mask_cmd->add_option("--probs", mask_probs,
                       "selection probabilities (default 0.7,0.1,0.1,0.1)");
  mask_cmd->add_option("--unit", mask_unit, "block edge: 1 or 2");
  mask_cmd->add_option("--token", mask_token,
                       "mask token (scalar or per channel)");
  mask_cmd->add_option("--seed", mask_seed, "RNG seed")->required();

  // verify-theorem1
  std::string vt_input, vt_out = ".";
  Index vt_noise = 16;
  uint64_t vt_seed = 0;
  auto* vt_cmd = app.add_subcommand(
      "verify-theorem1",
      "empirical vs analytic velocity-input cross-correlation");
  vt_cmd->add_option("--input", vt_input,
                     "tensor batch (default: built-in suite)");
  vt_cmd->add_option("--out", vt_out, "output directory");
  vt_cmd->add_option("--n-noise", vt_noise, "noise draws per position");
  vt_cmd->add_option("--seed", vt_seed, "RNG seed")->required();

  // wk-check
  std::string wk_input, wk_out = ".";
  Index wk_n = 1024, wk_signals = 100;
  uint64_t wk_seed = 0;
  auto* wk_cmd =
      app.add_subcommand("wk-check", "discrete Wiener-Khinchin identity check");
  wk_cmd->add_option("--input", wk_input, "rank-1 .npy signal");
  wk_cmd->add_option("--out", wk_out, "output directory");
  wk_cmd->add_option("--n", wk_n, "random signal length");
  wk_cmd->add_option("--signals", wk_signals, "random signal count");
  wk_cmd->add_option("--seed", wk_seed, "RNG seed")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // validation errors exit 1
  }

  try {
    if (synth->parsed()) return run_synth(synth_opt);
    if (psd_cmd->parsed())
      return run_psd(psd_input, psd_out, psd_bins, psd_band, psd_raw);
    if (lc_cmd->parsed())
      return run_localcorr(lc_input, lc_out, lc_patch, lc_sim, lc_no_first,
                           lc_raw);
    if (olcr_cmd->parsed())
      return run_optimize_lcr(olcr_input, olcr_out, olcr_alpha, olcr_omega,
                              olcr_steps, olcr_step, olcr_patch, olcr_sim);
    if (eig_cmd->parsed()) return run_eigen(eig_input, eig_out, eig_k, eig_raw);
    if (ocp_cmd->parsed())
      return run_optimize_covpen(ocp_input, ocp_out, ocp_k, ocp_steps, ocp_step);
    if (modes_cmd->parsed())
      return run_modes(modes_input, modes_lambdas, modes_out, modes_dist,
                       modes_method, modes_mc_n, modes_nodes, modes_seed);
    if (sim_cmd->parsed())
      return run_simulate(sim_input, sim_lambdas, sim_dims, sim_batch, sim_out,
                          sim_dist, sim_steps, sim_step, sim_draws, sim_repeats,
                          sim_seed, sim_threshold, sim_smooth);
    if (mask_cmd->parsed())
      return run_mask(mask_input, mask_out, mask_ratios, mask_probs, mask_unit,
                      mask_token, mask_seed);
    if (vt_cmd->parsed())
      return run_verify_theorem1(vt_input, vt_out, vt_noise, vt_seed);
    if (wk_cmd->parsed())
      return run_wk_check(wk_input, wk_out, wk_n, wk_signals, wk_seed);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
