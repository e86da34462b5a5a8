#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "emp/errors.hpp"
#include "emp/evaluation.hpp"
#include "emp/export.hpp"
#include "emp/io_util.hpp"
#include "emp/simulator.hpp"
#include "emp/training.hpp"

#ifndef EMP_VERSION
#define EMP_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("EMP_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(raw, &used);
    if (used != std::string(raw).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw emp::InvalidArgument(std::string("EMP_SEED is not an unsigned integer: ") + raw);
  }
}

std::uint64_t resolve_seed(std::uint64_t configured) { return env_seed().value_or(configured); }

/// Command, arguments, resolved configuration, seeds, paths and version of one invocation.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  ordered_json config = ordered_json::object();
  ordered_json seeds = ordered_json::object();
  ordered_json inputs = ordered_json::object();
  ordered_json outputs = ordered_json::object();

  void write(const fs::path& dir) const {
    ordered_json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seeds"] = seeds;
    const auto env = env_seed();
    j["emp_seed"] = env ? ordered_json(*env) : ordered_json(nullptr);
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["version"] = EMP_VERSION;
    fs::create_directories(dir);
    std::ofstream out(dir / "run_manifest.json", std::ios::trunc);
    if (!out) throw emp::InvalidArgument("cannot write " + (dir / "run_manifest.json").string());
    out << j.dump(2) << '\n';
  }
};

fs::path parent_dir(const std::string& file) {
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw emp::InvalidArgument("cannot write " + path.string());
  return out;
}

ordered_json option_snapshot(const CLI::App& sub) {
  ordered_json j = ordered_json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
    if (name == "help") continue;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      j[name] = results.size() == 1 ? ordered_json(results.front()) : ordered_json(results);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

emp::Variant parse_variant(const std::string& v) {
  return v == "pose" ? emp::Variant::kPose : emp::Variant::kPlain;
}

emp::PipelineOptions pipeline_options(const std::string& variant) {
  emp::PipelineOptions options;
  options.mode = variant == "pose" ? emp::LocaliseMode::kSoft : emp::LocaliseMode::kHard;
  return options;
}

std::unique_ptr<emp::Embedder> load_embedder(const std::string& ckpt) {
  if (ckpt == "oracle") return std::make_unique<emp::OracleEmbedder>();
  if (!fs::exists(ckpt)) throw MissingInput("checkpoint not found: " + ckpt);
  return std::make_unique<emp::ConvEmbedder>(emp::load_checkpoint(ckpt));
}

std::vector<emp::Sequence> load_data(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json")) {
    throw MissingInput("dataset manifest not found in " + dir);
  }
  return emp::read_dataset(dir);
}

const emp::Sequence& pick_sequence(const std::vector<emp::Sequence>& seqs, int index) {
  if (index < 0 || index >= static_cast<int>(seqs.size())) {
    throw emp::InvalidArgument("sequence index " + std::to_string(index) + " out of range");
  }
  return seqs[static_cast<std::size_t>(index)];
}

/// Memory holding `count` frames starting at `first`, aligned with ground-truth poses and
/// expressed in the camera of the last of them.
emp::SpatialMemory ground_truth_memory(const std::vector<emp::Frame>& frames, int first,
                                       int count, const emp::Embedder& embedder) {
  const emp::Frame& anchor = frames.at(static_cast<std::size_t>(first + count - 1));
  if (!anchor.gt_pose) throw emp::PreconditionError("frames need ground-truth poses");
  const emp::Pose anchor_inv = anchor.gt_pose->inverse();
  std::optional<emp::SpatialMemory> mem;
  for (int i = first; i < first + count; ++i) {
    const emp::Frame& f = frames.at(static_cast<std::size_t>(i));
    if (!f.gt_pose) throw emp::PreconditionError("frames need ground-truth poses");
    const emp::PointEmbeddings pe = embedder.extract(f);
    if (!mem) mem.emplace(count, pe.size(), pe.channels());
    mem->insert(pe, anchor_inv.compose(*f.gt_pose), i + 1);
  }
  return std::move(*mem);
}

template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < count; i += static_cast<std::size_t>(jobs)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Frame-to-frame ICP on the embedding-grid clouds, chained into a trajectory.
emp::Trajectory icp_trajectory(const std::vector<emp::Frame>& seq, int grid_height, int grid_width) {
  emp::Trajectory traj;
  emp::Pose pose;
  std::optional<emp::PointCloud> previous;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    emp::PointCloud cloud = emp::grid_coordinates(seq[t], grid_height, grid_width);
    bool flag = false;
    if (previous) {
      try {
        pose = pose.compose(emp::icp(cloud, *previous).pose);
      } catch (const emp::NumericalError&) {
        flag = true;
      }
    }
    traj.push(static_cast<int>(t) + 1, pose, flag);
    previous = std::move(cloud);
  }
  return traj;
}

ordered_json mean_metrics(const std::vector<emp::MetricsReport>& reports) {
  ordered_json j;
  auto mean = [&](auto member) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) {
      if (r.*member) {
        sum += *(r.*member);
        ++n;
      }
    }
    return n == reports.size() && n > 0 ? ordered_json(sum / static_cast<double>(n)) : ordered_json(nullptr);
  };
  j["ape_5"] = mean(&emp::MetricsReport::ape_5);
  j["ape_50"] = mean(&emp::MetricsReport::ape_50);
  j["ate_50"] = mean(&emp::MetricsReport::ate_50);
  return j;
}

struct Cli {
  CLI::App app{"Embedding-memory localisation toolkit"};
  std::vector<std::string> args;
  int jobs = 1;

  CLI::App* simulate = nullptr;
  std::uint64_t scene_seed = 0;
  std::uint64_t traj_seed = 1;
  int frames = 50;
  int sequences = 1;
  double depth_noise = 0.0;
  bool full_rotation = false;
  std::string sim_out;

  CLI::App* train = nullptr;
  std::string data;
  std::string variant = "plain";
  int epochs = 10;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string ckpt_out;
  std::string checkpoint_dir;

  CLI::App* eval = nullptr;
  std::string ckpt;
  std::string report;
  std::string baseline;

  CLI::App* sweep = nullptr;
  std::vector<int> offsets{0, 2, 4, 8, 16};
  std::string sweep_out;

  CLI::App* gradcheck = nullptr;
  std::string grad_variant = "both";
  std::uint64_t param_seed = 1;
  double step = 1e-4;
  std::string grad_out;

  CLI::App* heatmap = nullptr;
  int sequence_index = 0;
  int frame = 5;
  std::string heat_out;

  CLI::App* clusters = nullptr;
  int k = 8;
  std::string clusters_out;

  CLI::App* replay = nullptr;
  std::string manifest_path;

  Cli() {
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    app.set_version_flag("--version", std::string(EMP_VERSION));
    app.add_option("--jobs", jobs, "Threads across independent sequences")->check(CLI::PositiveNumber);
    const auto variants = CLI::IsMember({"plain", "pose"});

    simulate = app.add_subcommand("simulate", "Render synthetic RGB-D sequences into a dataset");
    simulate->add_option("--scene-seed", scene_seed);
    simulate->add_option("--traj-seed", traj_seed, "Seed of the first sequence; later ones add 1");
    simulate->add_option("--frames", frames)->check(CLI::PositiveNumber);
    simulate->add_option("--sequences", sequences)->check(CLI::PositiveNumber);
    simulate->add_option("--depth-noise", depth_noise)->check(CLI::NonNegativeNumber);
    simulate->add_flag("--full-rotation", full_rotation);
    simulate->add_option("--out", sim_out)->required();

    train = app.add_subcommand("train", "Train the convolutional embedder");
    train->add_option("--data", data)->required();
    train->add_option("--variant", variant)->check(variants);
    train->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
    train->add_option("--batch", batch)->check(CLI::PositiveNumber);
    train->add_option("--lr", lr)->check(CLI::NonNegativeNumber);
    train->add_option("--seed", seed);
    train->add_option("--checkpoint-dir", checkpoint_dir, "Per-epoch checkpoints");
    train->add_option("--out", ckpt_out)->required();

    eval = app.add_subcommand("eval", "Run the localisation pipeline and report trajectory errors");
    eval->add_option("--data", data)->required();
    eval->add_option("--ckpt", ckpt, "Checkpoint path or 'oracle'")->required();
    eval->add_option("--variant", variant)->check(variants);
    eval->add_option("--baseline", baseline)->check(CLI::IsMember({"icp"}));
    eval->add_option("--report", report)->required();

    sweep = app.add_subcommand("sweep", "Fixed-memory growing-baseline experiment");
    sweep->add_option("--data", data)->required();
    sweep->add_option("--ckpt", ckpt)->required();
    sweep->add_option("--variant", variant)->check(variants);
    sweep->add_option("--offsets", offsets)->delimiter(',');
    sweep->add_option("--out", sweep_out, "CSV table")->required();

    gradcheck = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
    gradcheck->add_option("--variant", grad_variant)->check(CLI::IsMember({"plain", "pose", "both"}));
    gradcheck->add_option("--param-seed", param_seed);
    gradcheck->add_option("--step", step)->check(CLI::PositiveNumber);
    gradcheck->add_option("--out", grad_out, "JSON report");

    heatmap = app.add_subcommand("heatmap", "Match-weight map of one frame against the memory");
    heatmap->add_option("--data", data)->required();
    heatmap->add_option("--ckpt", ckpt)->required();
    heatmap->add_option("--sequence", sequence_index);
    heatmap->add_option("--frame", frame, "1-based frame, memory holds the preceding frames")
        ->check(CLI::PositiveNumber);
    heatmap->add_option("--out", heat_out, "Output prefix (.pgm and .csv)")->required();

    clusters = app.add_subcommand("clusters", "k-means over memory embeddings");
    clusters->add_option("--data", data)->required();
    clusters->add_option("--ckpt", ckpt)->required();
    clusters->add_option("--sequence", sequence_index);
    clusters->add_option("-k,--clusters", k)->check(CLI::PositiveNumber);
    clusters->add_option("--seed", seed);
    clusters->add_option("--out", clusters_out, "Labelled memory CSV")->required();

    replay = app.add_subcommand("replay", "Rerun the command recorded in a run manifest");
    replay->add_option("manifest", manifest_path)->required();
  }

  RunManifest manifest(const CLI::App* sub) const {
    RunManifest m;
    m.command = sub->get_name();
    m.argv = args;
    m.config = option_snapshot(*sub);
    m.config["jobs"] = jobs;
    return m;
  }

  int run_simulate() {
    const std::uint64_t scene = resolve_seed(scene_seed);
    const std::uint64_t traj = resolve_seed(traj_seed);
    const emp::Scene s = emp::Scene::generate(scene);
    std::vector<emp::Sequence> seqs(static_cast<std::size_t>(sequences));
    parallel_for(seqs.size(), jobs, [&](std::size_t i) {
      emp::TrajectorySpec spec;
      spec.frames = frames;
      spec.seed = traj + i;
      spec.depth_noise = depth_noise;
      spec.full_rotation = full_rotation;
      char id[32];
      std::snprintf(id, sizeof(id), "seq_%04zu", i);
      seqs[i] = {id, emp::generate_sequence(s, spec)};
    });
    emp::write_dataset(seqs, sim_out);
    RunManifest m = manifest(simulate);
    m.seeds = {{"scene", scene}, {"trajectory", traj}};
    m.outputs = {{"dataset", sim_out}};
    m.write(sim_out);
    std::cout << "wrote " << seqs.size() << " sequence(s) x " << frames << " frames to " << sim_out << '\n';
    return kExitOk;
  }

  int run_train() {
    const std::vector<emp::Sequence> seqs = load_data(data);
    emp::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.seed = resolve_seed(seed);
    cfg.variant = parse_variant(variant);
    cfg.jobs = jobs;
    cfg.checkpoint_dir = checkpoint_dir;
    cfg.validate();
    const auto windows = emp::training_windows(seqs, cfg.sequence_length);
    emp::EmbedderParams initial = emp::EmbedderParams::initialise({}, cfg.seed);

    const fs::path out_dir = parent_dir(ckpt_out);
    RunManifest m = manifest(train);
    m.seeds = {{"init_and_shuffle", cfg.seed}};
    m.inputs = {{"data", data}};
    m.outputs = {{"checkpoint", ckpt_out}};

    if (epochs == 0) {
      fs::create_directories(out_dir);
      emp::save_checkpoint(ckpt_out, initial);
      m.write(out_dir);
      std::cout << "wrote initial checkpoint " << ckpt_out << '\n';
      return kExitOk;
    }
    if (windows.empty()) throw emp::InvalidArgument("dataset has no complete training window");

    emp::TrainResult result;
    try {
      result = emp::train(windows, std::move(initial), cfg);
    } catch (const emp::NumericalError& e) {
      std::cerr << "training diverged: " << e.what() << '\n';
      if (!checkpoint_dir.empty()) std::cerr << "last good checkpoint is in " << checkpoint_dir << '\n';
      return kExitNumerical;
    }
    fs::create_directories(out_dir);
    emp::save_checkpoint(ckpt_out, result.params);
    const fs::path loss_path = fs::path(ckpt_out).replace_extension(".loss.csv");
    std::ofstream loss = open_output(loss_path);
    emp::write_loss_csv(loss, result.curve);
    m.outputs["loss_curve"] = loss_path.string();
    m.write(out_dir);
    if (!result.curve.empty()) {
      std::cout << "loss_c " << result.curve.front().loss_c << " -> " << result.curve.back().loss_c << '\n';
    }
    std::cout << "wrote " << ckpt_out << " and " << loss_path.string() << '\n';
    return kExitOk;
  }

  int run_eval() {
    const std::vector<emp::Sequence> seqs = load_data(data);
    const auto embedder = load_embedder(ckpt);
    const emp::PipelineOptions options = pipeline_options(variant);
    const bool with_icp = baseline == "icp";
    std::vector<emp::MetricsReport> reports(seqs.size());
    std::vector<emp::MetricsReport> icp_reports(with_icp ? seqs.size() : 0);
    parallel_for(seqs.size(), jobs, [&](std::size_t i) {
      const auto& frames_i = seqs[i].frames;
      const emp::Trajectory gt = emp::ground_truth(frames_i);
      reports[i] = emp::compute_metrics(emp::run_pipeline(frames_i, *embedder, options), gt);
      if (with_icp) {
        const emp::PointEmbeddings probe = embedder->extract(frames_i.front());
        icp_reports[i] = emp::compute_metrics(
            icp_trajectory(frames_i, probe.grid_height, probe.grid_width), gt);
      }
    });

    const fs::path out_dir = parent_dir(report);
    RunManifest m = manifest(eval);
    m.inputs = {{"data", data}, {"checkpoint", ckpt}};
    m.outputs = {{"report", report}, {"trajectories", ordered_json::array()}};
    ordered_json j;
    j["variant"] = variant;
    j["embedder"] = ckpt;
    j.update(mean_metrics(reports));
    ordered_json per_seq = ordered_json::array();
    auto write_traj = [&](const std::string& name, const emp::Trajectory& t) {
      const fs::path p = out_dir / name;
      std::ofstream out = open_output(p);
      emp::write_trajectory_csv(out, t);
      m.outputs["trajectories"].push_back(p.string());
    };
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      ordered_json s;
      s["id"] = seqs[i].id;
      s.update(emp::metrics_json(reports[i]));
      per_seq.push_back(s);
      write_traj(seqs[i].id + ".pred.csv", reports[i].pred);
      write_traj(seqs[i].id + ".gt.csv", reports[i].gt);
    }
    j["sequences"] = per_seq;
    if (with_icp) {
      ordered_json icp_j = mean_metrics(icp_reports);
      ordered_json icp_seq = ordered_json::array();
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        ordered_json s;
        s["id"] = seqs[i].id;
        s.update(emp::metrics_json(icp_reports[i]));
        icp_seq.push_back(s);
        write_traj(seqs[i].id + ".icp.csv", icp_reports[i].pred);
      }
      icp_j["sequences"] = icp_seq;
      j["icp"] = icp_j;
    }
    std::ofstream out = open_output(report);
    out << j.dump(2) << '\n';
    m.write(out_dir);
    std::cout << "ape_5 " << j["ape_5"].dump() << " ape_50 " << j["ape_50"].dump() << " ate_50 "
              << j["ate_50"].dump() << '\n';
    return kExitOk;
  }

  int run_sweep() {
    const std::vector<emp::Sequence> seqs = load_data(data);
    const auto embedder = load_embedder(ckpt);
    const emp::PipelineOptions options = pipeline_options(variant);
    std::vector<std::vector<emp::SweepRow>> tables(seqs.size());
    parallel_for(seqs.size(), jobs, [&](std::size_t i) {
      tables[i] = emp::fixed_memory_sweep(seqs[i].frames, *embedder, offsets, options);
    });
    std::ofstream out = open_output(sweep_out);
    out << "sequence,offset,frame,emp_error,icp_error,low_confidence_fraction,degenerate\n";
    char buf[256];
    std::vector<double> offs, lows;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      for (const emp::SweepRow& r : tables[i]) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.17g,%.17g,%.17g,%d\n", seqs[i].id.c_str(), r.offset,
                      r.frame, r.emp_error, r.icp_error, r.low_confidence_fraction, r.degenerate ? 1 : 0);
        out << buf;
        offs.push_back(r.offset);
        lows.push_back(r.low_confidence_fraction);
      }
    }
    RunManifest m = manifest(sweep);
    m.inputs = {{"data", data}, {"checkpoint", ckpt}};
    m.outputs = {{"table", sweep_out}};
    m.write(parent_dir(sweep_out));
    std::cout << "spearman(offset, low-confidence fraction) = " << emp::spearman(offs, lows) << '\n';
    return kExitOk;
  }

  int run_gradcheck() {
    std::vector<emp::Variant> variants;
    if (grad_variant != "pose") variants.push_back(emp::Variant::kPlain);
    if (grad_variant != "plain") variants.push_back(emp::Variant::kPose);
    const std::uint64_t pseed = resolve_seed(param_seed);
    ordered_json j = ordered_json::array();
    double worst = 0.0;
    for (emp::Variant v : variants) {
      const emp::GradientCheckInstance inst = emp::small_gradient_instance(v, pseed);
      const emp::GradientReport r = emp::gradient_check(inst.sequence, inst.params, inst.config, step);
      ordered_json tensors = ordered_json::array();
      for (const auto& t : r.tensors) {
        tensors.push_back({{"name", t.name},
                           {"analytic_norm", t.analytic_norm},
                           {"numeric_norm", t.numeric_norm},
                           {"relative_error", t.relative_error}});
      }
      j.push_back({{"variant", v == emp::Variant::kPose ? "pose" : "plain"},
                   {"max_relative_error", r.max_relative_error},
                   {"tensors", tensors}});
      worst = std::max(worst, r.max_relative_error);
    }
    const std::string text = j.dump(2) + '\n';
    if (grad_out.empty()) {
      std::cout << text;
    } else {
      std::ofstream out = open_output(grad_out);
      out << text;
      RunManifest m = manifest(gradcheck);
      m.seeds = {{"params", pseed}};
      m.outputs = {{"report", grad_out}};
      m.write(parent_dir(grad_out));
    }
    std::cerr << "max relative error " << worst << '\n';
    return worst < 1e-4 ? kExitOk : kExitNumerical;
  }

  int run_heatmap() {
    const std::vector<emp::Sequence> seqs = load_data(data);
    const auto embedder = load_embedder(ckpt);
    const auto& frames_s = pick_sequence(seqs, sequence_index).frames;
    if (frame < 2 || frame > static_cast<int>(frames_s.size())) {
      throw emp::InvalidArgument("--frame must lie in 2.." + std::to_string(frames_s.size()));
    }
    const int b = emp::PipelineOptions{}.buffer;
    const int first = std::max(0, frame - 1 - b);
    const emp::SpatialMemory mem = ground_truth_memory(frames_s, first, frame - 1 - first, *embedder);
    const emp::PointEmbeddings pe = embedder->extract(frames_s[static_cast<std::size_t>(frame - 1)]);
    const emp::MemoryMatch match = emp::match_against_memory(mem, pe);
    std::ofstream pgm = open_output(heat_out + ".pgm");
    emp::write_heatmap_pgm(pgm, match.matches, pe.grid_height, pe.grid_width);
    std::ofstream csv = open_output(heat_out + ".csv");
    emp::write_heatmap_csv(csv, match.matches, pe.grid_height, pe.grid_width);
    RunManifest m = manifest(heatmap);
    m.inputs = {{"data", data}, {"checkpoint", ckpt}};
    m.outputs = {{"pgm", heat_out + ".pgm"}, {"csv", heat_out + ".csv"}};
    m.write(parent_dir(heat_out + ".pgm"));
    std::cout << pe.grid_height << "x" << pe.grid_width << " heat map, mean weight "
              << match.matches.mean_weight() << ", low-confidence fraction "
              << match.matches.low_confidence_fraction() << '\n';
    return kExitOk;
  }

  int run_clusters() {
    const std::vector<emp::Sequence> seqs = load_data(data);
    const auto embedder = load_embedder(ckpt);
    const auto& frames_s = pick_sequence(seqs, sequence_index).frames;
    const int count = std::min<int>(emp::PipelineOptions{}.buffer, static_cast<int>(frames_s.size()));
    if (count < 1) throw emp::InvalidArgument("sequence is empty");
    const emp::SpatialMemory mem = ground_truth_memory(frames_s, 0, count, *embedder);
    const std::uint64_t kseed = resolve_seed(seed);
    const emp::ClusterResult result = emp::cluster_embeddings(mem, k, kseed);
    std::ofstream out = open_output(clusters_out);
    emp::write_memory_csv(out, mem, result.labels);
    RunManifest m = manifest(clusters);
    m.seeds = {{"kmeans", kseed}};
    m.inputs = {{"data", data}, {"checkpoint", ckpt}};
    m.outputs = {{"dump", clusters_out}};
    m.write(parent_dir(clusters_out));
    std::cout << "k-means: " << result.iterations << " iterations, objective "
              << (result.objective.empty() ? 0.0 : result.objective.back()) << '\n';
    return kExitOk;
  }
};

int run(const std::vector<std::string>& args);

int run_replay(const std::string& path) {
  if (!fs::exists(path)) throw MissingInput("manifest not found: " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(emp::read_file(path));
  } catch (const ordered_json::exception& e) {
    throw emp::ParseError(path + ": " + e.what());
  }
  if (!j.contains("argv") || !j["argv"].is_array()) throw emp::ParseError(path + ": no argv array");
  const auto replay_args = j["argv"].get<std::vector<std::string>>();
  if (!replay_args.empty() && replay_args.front() == "replay") throw emp::InvalidArgument("nested replay");
  if (j.contains("emp_seed") && !j["emp_seed"].is_null()) {
    setenv("EMP_SEED", std::to_string(j["emp_seed"].get<std::uint64_t>()).c_str(), 1);
  } else {
    unsetenv("EMP_SEED");
  }
  return run(replay_args);
}

int run(const std::vector<std::string>& args) {
  Cli cli;
  cli.args = args;
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    cli.app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = cli.app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (*cli.simulate) return cli.run_simulate();
    if (*cli.train) return cli.run_train();
    if (*cli.eval) return cli.run_eval();
    if (*cli.sweep) return cli.run_sweep();
    if (*cli.gradcheck) return cli.run_gradcheck();
    if (*cli.heatmap) return cli.run_heatmap();
    if (*cli.clusters) return cli.run_clusters();
    if (*cli.replay) return run_replay(cli.manifest_path);
  } catch (const emp::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const emp::PreconditionError& e) {
    std::cerr << "precondition violated: " << e.what() << '\n';
    return kExitUsage;
  } catch (const emp::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitData;
  } catch (const MissingInput& e) {
    std::cerr << "missing input: " << e.what() << '\n';
    return kExitData;
  } catch (const emp::GenerationFailure& e) {
    std::cerr << "generation failure: " << e.what() << '\n';
    return kExitData;
  } catch (const emp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "filesystem error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc));
}
